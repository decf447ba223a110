//! Command-line front end: argument definitions and command execution.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use burstpar_core::planner::{plan, TrainingPlan};
use burstpar_core::scaling::{speedup_curve, SampleEfficiencyCurve, Strategy};
use burstpar_core::sim::{
    dp_plan, pareto_sweep, run_plan, InterferenceTable, ParetoKind, ParetoPoint, Scenario, SimConfig, SweepSpec,
};
use burstpar_core::synth::{generate, CustomSpec, Family, SynthConfig, DEFAULT_SEED};
use burstpar_core::{CompGraph, NetworkProfile};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format;
use crate::manifest::{FileHash, RunManifest, MANIFEST_FILE};
use crate::table;

#[derive(Debug, Parser)]
#[command(name = "burstpar", version, about = "Burst-parallel training planner and GPU multiplexing simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write a synthetic graph and profile file.
    ProfileGen(ProfileGenArgs),
    /// Search a per-layer GPU assignment.
    Plan(PlanArgs),
    /// Weak, strong and batch-optimal scaling estimates.
    Analyze(AnalyzeArgs),
    /// Simulate one scenario on a cluster.
    Simulate(SimulateArgs),
    /// Collocation and cluster-partition operating points.
    Sweep(SweepArgs),
    /// Re-run a manifest and check that the outputs are identical.
    Replay(ReplayArgs),
}

/// Overrides of the network section of a graph file.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct NetArgs {
    /// Per-GPU bandwidth in Gbit/s.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Propagation delay in µs.
    #[arg(long)]
    pub delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProfileGenArgs {
    /// vgg_like, wideresnet_like, inception_like or custom.
    #[arg(long, default_value = "vgg_like")]
    pub family: String,
    #[arg(long, default_value_t = 32)]
    pub global_batch: u32,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Per-GPU bandwidth in Gbit/s.
    #[arg(long, default_value_t = 4800.0)]
    pub bandwidth: f64,
    /// Propagation delay in µs.
    #[arg(long, default_value_t = 0.0)]
    pub delay: f64,
    /// Profiles cover per-device batches 1, 2, 4, … up to this value.
    #[arg(long, default_value_t = 65_536)]
    pub max_profile_batch: u32,
    /// Relative half-width of the multiplicative profile noise.
    #[arg(long, default_value_t = 0.01)]
    pub jitter: f64,
    /// Layers of the custom family.
    #[arg(long)]
    pub layers: Option<u32>,
    /// Channels of the custom family.
    #[arg(long)]
    pub channels: Option<u32>,
    /// Spatial size of the custom family.
    #[arg(long)]
    pub spatial: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub gpus: u32,
    /// GPU-sec amplification limit per layer (`inf` for none).
    #[arg(long, default_value_t = 2.0)]
    pub amp_limit: f64,
    /// Override the global batch of the graph file.
    #[arg(long)]
    pub global_batch: Option<u32>,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Sample-efficiency curve; the shipped synthetic curve if absent.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// weak, strong, batch_optimal or all.
    #[arg(long, default_value = "all")]
    pub strategy: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256")]
    pub gpu_counts: Vec<u32>,
    /// Single-GPU batch anchoring the speedups; the graph's global batch if
    /// absent.
    #[arg(long)]
    pub global_batch: Option<u32>,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Simulator settings; flags override the configuration file.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct SimArgs {
    /// Simulator configuration file.
    #[arg(long)]
    pub sim_config: Option<PathBuf>,
    /// Interference table file; the shipped synthetic table if absent.
    #[arg(long)]
    pub interference: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Outstanding launch groups per task (0 for unbounded).
    #[arg(long)]
    pub pace_limit: Option<u32>,
    /// Maximum ops per background launch group.
    #[arg(long)]
    pub graph_split: Option<u32>,
    #[arg(long)]
    pub bg_batch: Option<u32>,
    /// Slowdown ratio that marks a foreground op sensitive.
    #[arg(long)]
    pub ban_threshold: Option<f64>,
    /// Serve both tasks in launch order.
    #[arg(long)]
    pub no_priority: bool,
    /// Disable online slowdown feedback.
    #[arg(long)]
    pub no_feedback: bool,
}

impl SimArgs {
    pub fn config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.sim_config {
            Some(p) => format::load_sim_config(p)?,
            None => SimConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.rng_seed = v;
        }
        if let Some(v) = self.pace_limit {
            cfg.launch_pace_limit = v;
        }
        if let Some(v) = self.graph_split {
            cfg.graph_split_size = v;
        }
        if let Some(v) = self.bg_batch {
            cfg.bg_batch_size = v;
        }
        if let Some(v) = self.ban_threshold {
            cfg.slowdown_ban_threshold = v;
        }
        if self.no_priority {
            cfg.priority_scheduling_enabled = false;
        }
        if self.no_feedback {
            cfg.feedback_enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn table(&self) -> Result<InterferenceTable> {
        match &self.interference {
            Some(p) => format::load_interference(p),
            None => Ok(InterferenceTable::default()),
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.sim_config.iter().chain(&self.interference).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Plan for the bp and bp+col scenarios; planned on the fly if absent.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// dp, bp or bp+col.
    #[arg(long, default_value = "bp+col")]
    pub scenario: String,
    #[arg(long)]
    pub gpus: u32,
    #[arg(long, default_value_t = 2.0)]
    pub amp_limit: f64,
    #[arg(long)]
    pub global_batch: Option<u32>,
    /// Foreground iterations to simulate, warmup included.
    #[arg(long, default_value_t = 10)]
    pub iterations: u32,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Sweep specification; defaults if absent.
    #[arg(long)]
    pub sweep_spec: Option<PathBuf>,
    /// Override the cluster size of the sweep specification.
    #[arg(long)]
    pub gpus: Option<u32>,
    #[arg(long)]
    pub global_batch: Option<u32>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ProfileGen(_) => "profile-gen",
            Command::Plan(_) => "plan",
            Command::Analyze(_) => "analyze",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Replay(_) => "replay",
        }
    }

    fn out(&self) -> Option<&Path> {
        match self {
            Command::ProfileGen(a) => a.out.as_deref(),
            Command::Plan(a) => a.out.as_deref(),
            Command::Analyze(a) => a.out.as_deref(),
            Command::Simulate(a) => a.out.as_deref(),
            Command::Sweep(a) => a.out.as_deref(),
            Command::Replay(a) => Some(&a.out),
        }
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::ProfileGen(a) => a.out = Some(out),
            Command::Plan(a) => a.out = Some(out),
            Command::Analyze(a) => a.out = Some(out),
            Command::Simulate(a) => a.out = Some(out),
            Command::Sweep(a) => a.out = Some(out),
            Command::Replay(a) => a.out = out,
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Report {
    /// Human-readable summary for standard output.
    pub stdout: String,
    /// Manifest of the written outputs, if an output directory was given.
    pub manifest: Option<RunManifest>,
}

struct Produced {
    stdout: String,
    inputs: Vec<PathBuf>,
    /// (file name, content) pairs for the output directory.
    files: Vec<(&'static str, String)>,
    search_wall_time_s: Option<f64>,
}

/// Run one command, writing its outputs and manifest when it has an output
/// directory.
pub fn execute(command: &Command) -> Result<Report> {
    if let Command::Replay(args) = command {
        return replay(args);
    }
    let started = Instant::now();
    let produced = match command {
        Command::ProfileGen(a) => profile_gen(a)?,
        Command::Plan(a) => plan_cmd(a)?,
        Command::Analyze(a) => analyze(a)?,
        Command::Simulate(a) => simulate(a)?,
        Command::Sweep(a) => sweep(a)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    let wall_time_s = started.elapsed().as_secs_f64();
    let manifest = match command.out() {
        None => None,
        Some(dir) => Some(write_outputs(command, dir, &produced, wall_time_s)?),
    };
    Ok(Report { stdout: produced.stdout, manifest })
}

fn write_outputs(command: &Command, dir: &Path, produced: &Produced, wall_time_s: f64) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut outputs = Vec::new();
    for (name, content) in &produced.files {
        format::write_text(&dir.join(name), content)?;
        outputs.push(FileHash::of_bytes(*name, content.as_bytes()));
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        wall_time_s,
        search_wall_time_s: produced.search_wall_time_s,
        inputs: produced.inputs.iter().map(|p| FileHash::of_file(p)).collect::<Result<_>>()?,
        outputs,
        parameters: command.clone(),
    };
    format::write_text(&dir.join(MANIFEST_FILE), &manifest.to_toml())?;
    Ok(manifest)
}

fn replay(args: &ReplayArgs) -> Result<Report> {
    let recorded = RunManifest::load(&args.manifest)?;
    if matches!(recorded.parameters, Command::Replay(_)) {
        return Err(CliError::Manifest("a manifest cannot record a replay".into()));
    }
    recorded.verify_inputs()?;
    let mut command = recorded.parameters.clone();
    command.set_out(args.out.clone());
    let report = execute(&command)?;
    let fresh = report.manifest.as_ref().expect("replay always has an output directory");
    recorded.verify_outputs(fresh)?;
    let mut stdout = report.stdout.clone();
    let _ = writeln!(stdout, "replay: {} outputs identical to {}", fresh.outputs.len(), args.manifest.display());
    Ok(Report { stdout, manifest: report.manifest })
}

/// Graph file with the global batch and network overrides applied.
fn load_inputs(graph: &Path, global_batch: Option<u32>, net: &NetArgs) -> Result<(CompGraph, NetworkProfile)> {
    let (mut g, mut network) = format::load_graph(graph)?;
    if let Some(b) = global_batch {
        g = g.with_global_batch(b)?;
    }
    if let Some(gbps) = net.bandwidth {
        network = NetworkProfile::from_gbps(gbps, network.propagation_delay_us)?;
    }
    if let Some(d) = net.delay {
        network = NetworkProfile::new(network.bandwidth_bytes_per_sec, d)?;
    }
    Ok((g, network))
}

fn profile_gen(a: &ProfileGenArgs) -> Result<Produced> {
    let mut family = Family::parse(&a.family)?;
    if let Family::Custom(spec) = &mut family {
        *spec = CustomSpec {
            layers: a.layers.unwrap_or(spec.layers),
            channels: a.channels.unwrap_or(spec.channels),
            spatial: a.spatial.unwrap_or(spec.spatial),
        };
    } else if a.layers.is_some() || a.channels.is_some() || a.spatial.is_some() {
        return Err(CliError::Usage("--layers, --channels and --spatial apply to the custom family only".into()));
    }
    let cfg = SynthConfig {
        global_batch: a.global_batch,
        seed: a.seed,
        max_profile_batch: a.max_profile_batch,
        jitter: a.jitter,
        ..SynthConfig::default()
    };
    let graph = generate(&family, &cfg)?;
    let network = NetworkProfile::from_gbps(a.bandwidth, a.delay)?;
    let text = format::graph_to_toml(&graph, &network);
    let branches = burstpar_core::graph::decompose(&graph)?.branch_join_count();
    let stdout = format!(
        "{}: {} layers, {} branch/join blocks, {:.1} M parameters, global batch {}\n",
        family.name(),
        graph.layers().iter().filter(|l| !l.is_virtual()).count(),
        branches,
        graph.total_params_bytes() as f64 / 4e6,
        graph.global_batch()
    );
    Ok(Produced { stdout, inputs: Vec::new(), files: vec![("graph.toml", text)], search_wall_time_s: None })
}

/// Per-layer plan table.
pub fn plan_summary(p: &TrainingPlan) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "model {}  gpus {}  global batch {}  amp limit {}",
        p.model, p.total_gpus, p.global_batch, p.amp_limit
    );
    let _ = writeln!(
        s,
        "{:>6}  {:<24} {:>5} {:>7} {:>12} {:>12} {:>8}",
        "layer", "name", "g", "offset", "comp_us", "sync_us", "amp"
    );
    for l in &p.layers {
        let _ = writeln!(
            s,
            "{:>6}  {:<24} {:>5} {:>7} {:>12.3} {:>12.3} {:>8.3}",
            l.layer_id, l.name, l.g, l.gpu_offset, l.comp_us, l.sync_us, l.amp
        );
    }
    let _ = writeln!(s, "predicted iteration: {:.3} us", p.predicted_iteration_us);
    if p.fallback_layers.is_empty() {
        let _ = writeln!(s, "fallback layers: none");
    } else {
        let _ = writeln!(s, "fallback layers: {:?}", p.fallback_layers);
    }
    s
}

fn plan_cmd(a: &PlanArgs) -> Result<Produced> {
    let (graph, network) = load_inputs(&a.graph, a.global_batch, &a.net)?;
    let started = Instant::now();
    let p = plan(&graph, &network, a.gpus, a.amp_limit)?;
    let search = started.elapsed().as_secs_f64();
    let mut stdout = plan_summary(&p);
    let _ = writeln!(stdout, "search time: {search:.6} s");
    Ok(Produced {
        stdout,
        inputs: vec![a.graph.clone()],
        files: vec![("plan.toml", format::to_toml(&p))],
        search_wall_time_s: Some(search),
    })
}

fn analyze(a: &AnalyzeArgs) -> Result<Produced> {
    let (graph, network) = load_inputs(&a.graph, None, &a.net)?;
    let curve = match &a.curve {
        Some(p) => format::load_curve(p)?,
        None => SampleEfficiencyCurve::default_synthetic(),
    };
    let strategies: Vec<Strategy> =
        if a.strategy == "all" { Strategy::ALL.to_vec() } else { vec![Strategy::parse(&a.strategy)?] };
    if a.gpu_counts.is_empty() {
        return Err(CliError::Usage("--gpu-counts needs at least one value".into()));
    }
    let base = a.global_batch.unwrap_or(graph.global_batch());
    let mut rows = Vec::new();
    for s in strategies {
        rows.extend(speedup_curve(s, &graph, &curve, &a.gpu_counts, &network, base)?);
    }
    let csv = table::scaling_csv(&rows);
    let mut inputs = vec![a.graph.clone()];
    inputs.extend(a.curve.clone());
    Ok(Produced { stdout: csv.clone(), inputs, files: vec![("scaling.csv", csv)], search_wall_time_s: None })
}

fn simulate(a: &SimulateArgs) -> Result<Produced> {
    let scenario = Scenario::parse(&a.scenario)?;
    let (graph, network) = load_inputs(&a.graph, a.global_batch, &a.net)?;
    let cfg = a.sim.config()?;
    let interference = a.sim.table()?;
    let mut inputs = vec![a.graph.clone()];
    let (p, search) = match (scenario, &a.plan) {
        (Scenario::Dp, _) => (dp_plan(&graph, &network, a.gpus)?, None),
        (_, Some(path)) => {
            inputs.push(path.clone());
            (format::load_plan(path)?, None)
        }
        (_, None) => {
            let started = Instant::now();
            let p = plan(&graph, &network, a.gpus, a.amp_limit)?;
            (p, Some(started.elapsed().as_secs_f64()))
        }
    };
    inputs.extend(a.sim.inputs());
    let r = run_plan(scenario, p, &graph, &network, a.gpus, &cfg, &interference, a.iterations)?;
    let m = &r.metrics;
    let mut stdout = String::new();
    let _ = writeln!(stdout, "scenario {}  gpus {}  iterations {}", scenario.name(), a.gpus, m.iterations);
    let _ = writeln!(
        stdout,
        "fg iteration mean {:.3} us  p99 {:.3} us",
        m.fg_iteration_time_us_mean, m.fg_iteration_time_us_p99
    );
    let _ = writeln!(stdout, "fg throughput {:.3} samples/s", m.fg_throughput_samples_per_s);
    let _ = writeln!(stdout, "bg throughput {:.3} samples/s", m.bg_throughput_samples_per_s);
    let _ = writeln!(stdout, "cluster throughput {:.3} samples/s", m.cluster_total_throughput);
    let _ = writeln!(stdout, "qos degradation {:.4}  sensitive ops {}", m.qos_degradation, m.sensitive_ops);
    Ok(Produced {
        stdout,
        inputs,
        files: vec![
            ("plan.toml", format::to_toml(&r.plan)),
            ("metrics.toml", format::metrics_to_toml(m)),
            ("trace.csv", table::trace_csv(&r.trace)),
        ],
        search_wall_time_s: search,
    })
}

/// First collocation point with strictly higher foreground speedup than a
/// partition point of no higher cluster throughput.
pub fn dominating_pair(points: &[ParetoPoint]) -> Option<(&ParetoPoint, &ParetoPoint)> {
    let cols = points.iter().filter(|p| p.kind == ParetoKind::BpCol);
    cols.flat_map(|c| points.iter().filter(|p| p.kind == ParetoKind::Partition).map(move |p| (c, p)))
        .find(|(c, p)| c.dominates_partition(p))
}

fn sweep(a: &SweepArgs) -> Result<Produced> {
    let (graph, network) = load_inputs(&a.graph, a.global_batch, &a.net)?;
    let mut spec = match &a.sweep_spec {
        Some(p) => format::load_sweep_spec(p)?,
        None => SweepSpec::default(),
    };
    if let Some(g) = a.gpus {
        spec.gpus = g;
    }
    let cfg = a.sim.config()?;
    let interference = a.sim.table()?;
    let points = pareto_sweep(&graph, &network, &spec, &cfg, &interference)?;
    let csv = table::pareto_csv(&points);
    let mut stdout = csv.clone();
    match dominating_pair(&points) {
        Some((c, p)) => {
            let _ = writeln!(
                stdout,
                "bp+col (amp {}, bg batch {}) speedup {:.3} at cluster throughput {:.1} dominates partition k={} speedup {:.3} at {:.1}",
                c.amp_limit, c.bg_batch, c.fg_speedup, c.cluster_throughput, p.fg_gpus, p.fg_speedup, p.cluster_throughput
            );
        }
        None => {
            let _ = writeln!(stdout, "no bp+col point dominates a partition point");
        }
    }
    let mut inputs = vec![a.graph.clone()];
    inputs.extend(a.sweep_spec.clone());
    inputs.extend(a.sim.inputs());
    Ok(Produced { stdout, inputs, files: vec![("pareto.csv", csv)], search_wall_time_s: None })
}
