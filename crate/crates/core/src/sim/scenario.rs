//! Cluster scenarios and the throughput/speedup sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{compile_timeline, simulate, BackgroundJob, InterferenceTable, SimConfig, SimMetrics, SimTrace, Timeline};
use crate::cost::{CostContext, NetworkProfile};
use crate::error::{Error, Result};
use crate::graph::CompGraph;
use crate::planner::{data_parallel_plan, plan, TrainingPlan};
use crate::synth::{vgg_like_graph, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Every layer data-parallel on all GPUs.
    Dp,
    /// Planner output, foreground only.
    Bp,
    /// Planner output with a background job on every GPU.
    BpCol,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Scenario> {
        match s {
            "dp" => Ok(Scenario::Dp),
            "bp" => Ok(Scenario::Bp),
            "bp+col" => Ok(Scenario::BpCol),
            other => Err(Error::InvalidParameter(format!("unknown scenario `{other}` (expected dp, bp or bp+col)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Dp => "dp",
            Scenario::Bp => "bp",
            Scenario::BpCol => "bp+col",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub plan: TrainingPlan,
    pub trace: SimTrace,
    pub metrics: SimMetrics,
}

/// Data-parallel plan on exactly `gpus` GPUs.
pub fn dp_plan(graph: &CompGraph, network: &NetworkProfile, gpus: u32) -> Result<TrainingPlan> {
    let cands = if gpus == 1 { vec![1] } else { vec![1, gpus] };
    let ctx = CostContext::with_candidates(graph, *network, gpus, cands)?;
    Ok(data_parallel_plan(&ctx))
}

/// Plan, compile and simulate one scenario on `gpus` GPUs.
#[allow(clippy::too_many_arguments)]
pub fn run_scenario(
    scenario: Scenario,
    graph: &CompGraph,
    network: &NetworkProfile,
    gpus: u32,
    amp_limit: f64,
    config: &SimConfig,
    table: &InterferenceTable,
    iterations: u32,
) -> Result<ScenarioResult> {
    let plan = match scenario {
        Scenario::Dp => dp_plan(graph, network, gpus)?,
        Scenario::Bp | Scenario::BpCol => plan(graph, network, gpus, amp_limit)?,
    };
    run_plan(scenario, plan, graph, network, gpus, config, table, iterations)
}

/// Simulate a given plan; background only for [`Scenario::BpCol`].
#[allow(clippy::too_many_arguments)]
pub fn run_plan(
    scenario: Scenario,
    plan: TrainingPlan,
    graph: &CompGraph,
    network: &NetworkProfile,
    gpus: u32,
    config: &SimConfig,
    table: &InterferenceTable,
    iterations: u32,
) -> Result<ScenarioResult> {
    let ctx = CostContext::new(graph, *network, gpus.max(plan.max_gpus()))?;
    let mut timeline = compile_timeline(&plan, &ctx, gpus)?;
    if scenario == Scenario::BpCol {
        timeline = timeline.with_background(BackgroundJob::new(graph, config.bg_batch_size)?);
    }
    let (trace, metrics) = simulate(&timeline, config, table, iterations)?;
    Ok(ScenarioResult { scenario, plan, trace, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParetoKind {
    BpCol,
    Partition,
}

impl ParetoKind {
    pub fn name(self) -> &'static str {
        match self {
            ParetoKind::BpCol => "bp+col",
            ParetoKind::Partition => "partition",
        }
    }
}

/// One operating point. `fg_speedup` is relative to a single GPU running the
/// whole global batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub kind: ParetoKind,
    /// Amplification limit (collocation points only).
    pub amp_limit: f64,
    /// Foreground GPUs (partition points); all GPUs for collocation.
    pub fg_gpus: u32,
    pub bg_batch: u32,
    pub fg_iteration_us: f64,
    pub fg_speedup: f64,
    pub fg_throughput: f64,
    pub bg_throughput: f64,
    pub cluster_throughput: f64,
}

impl ParetoPoint {
    /// Strictly faster foreground at no more cluster throughput.
    pub fn dominates_partition(&self, other: &ParetoPoint) -> bool {
        self.fg_speedup > other.fg_speedup && self.cluster_throughput >= other.cluster_throughput
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub gpus: u32,
    pub amp_limits: Vec<f64>,
    pub bg_batches: Vec<u32>,
    pub partitions: Vec<u32>,
    pub iterations: u32,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            gpus: 8,
            amp_limits: vec![1.5, 2.0, 3.0, f64::INFINITY],
            bg_batches: vec![4, 8],
            partitions: vec![1, 2, 4, 8],
            iterations: 5,
        }
    }
}

/// Single-GPU foreground iteration time at the full global batch.
fn single_gpu_reference(
    graph: &CompGraph,
    network: &NetworkProfile,
    config: &SimConfig,
    table: &InterferenceTable,
    iterations: u32,
) -> Result<f64> {
    let r = run_scenario(Scenario::Dp, graph, network, 1, f64::INFINITY, config, table, iterations)?;
    Ok(r.metrics.fg_iteration_time_us_mean)
}

/// Isolated single-GPU background throughput in samples/s. Launch groups
/// are issued back to back, so a group costs the larger of its compute and
/// its launch overhead.
pub fn background_throughput(graph: &CompGraph, config: &SimConfig) -> Result<f64> {
    let job = BackgroundJob::new(graph, config.bg_batch_size)?;
    let split = config.graph_split_size as usize;
    let mut ticks = 0u64;
    // One full launch cycle covers `split` iterations, after which group
    // boundaries repeat.
    let ops = job.ops.len();
    let mut k = 0usize;
    while k < ops * split {
        let g: u64 = (k..k + split).map(|i| job.ops[i % ops].ticks()).sum();
        ticks += g.max(super::to_ticks(config.launch_overhead_us));
        k += split;
    }
    let iter_us = super::ticks_to_us(ticks) / split as f64;
    Ok(f64::from(job.batch) / (iter_us / 1e6))
}

/// Static split: data-parallel foreground on `k` GPUs, isolated background
/// jobs on the remaining `gpus - k`.
#[allow(clippy::too_many_arguments)]
pub fn partition_baseline(
    graph: &CompGraph,
    network: &NetworkProfile,
    gpus: u32,
    k: u32,
    config: &SimConfig,
    table: &InterferenceTable,
    iterations: u32,
    reference_us: f64,
) -> Result<ParetoPoint> {
    if k == 0 || k > gpus {
        return Err(Error::InvalidParameter(format!("partition needs 1 ≤ k ≤ {gpus}, got {k}")));
    }
    let r = run_scenario(Scenario::Dp, graph, network, k, f64::INFINITY, config, table, iterations)?;
    let fg = r.metrics.fg_throughput_samples_per_s;
    let bg = f64::from(gpus - k) * background_throughput(graph, config)?;
    Ok(ParetoPoint {
        kind: ParetoKind::Partition,
        amp_limit: f64::INFINITY,
        fg_gpus: k,
        bg_batch: config.bg_batch_size,
        fg_iteration_us: r.metrics.fg_iteration_time_us_mean,
        fg_speedup: reference_us / r.metrics.fg_iteration_time_us_mean,
        fg_throughput: fg,
        bg_throughput: bg,
        cluster_throughput: fg + bg,
    })
}

/// Collocation points for every (amp limit, background batch) pair, then
/// partition points for every `k ≤ gpus`.
pub fn pareto_sweep(
    graph: &CompGraph,
    network: &NetworkProfile,
    spec: &SweepSpec,
    config: &SimConfig,
    table: &InterferenceTable,
) -> Result<Vec<ParetoPoint>> {
    let reference = single_gpu_reference(graph, network, config, table, spec.iterations)?;
    let mut out = Vec::new();
    for &amp in &spec.amp_limits {
        let p = plan(graph, network, spec.gpus, amp)?;
        for &bg_batch in &spec.bg_batches {
            let cfg = SimConfig { bg_batch_size: bg_batch, ..config.clone() };
            let r = run_plan(Scenario::BpCol, p.clone(), graph, network, spec.gpus, &cfg, table, spec.iterations)?;
            let m = &r.metrics;
            out.push(ParetoPoint {
                kind: ParetoKind::BpCol,
                amp_limit: amp,
                fg_gpus: spec.gpus,
                bg_batch,
                fg_iteration_us: m.fg_iteration_time_us_mean,
                fg_speedup: reference / m.fg_iteration_time_us_mean,
                fg_throughput: m.fg_throughput_samples_per_s,
                bg_throughput: m.bg_throughput_samples_per_s,
                cluster_throughput: m.cluster_total_throughput,
            });
        }
    }
    for &k in spec.partitions.iter().filter(|&&k| k <= spec.gpus) {
        out.push(partition_baseline(graph, network, spec.gpus, k, config, table, spec.iterations, reference)?);
    }
    Ok(out)
}

/// Foreground data-parallel job sharing its GPUs with a background job that
/// keeps the device queues full.
#[derive(Debug, Clone)]
pub struct HeavyWorkload {
    pub graph: CompGraph,
    pub network: NetworkProfile,
    pub timeline: Timeline,
}

/// `vgg_like` at global batch 16, data-parallel on 2 GPUs over a 4.8 Tbps
/// fabric, with a `vgg_like` background job at batch 8 on each GPU.
pub fn heavy_collocation_workload(seed: u64) -> Result<HeavyWorkload> {
    let graph = vgg_like_graph(&SynthConfig { global_batch: 16, seed, ..SynthConfig::default() })?;
    let network = NetworkProfile::from_gbps(4800.0, 0.0)?;
    let p = dp_plan(&graph, &network, 2)?;
    let ctx = CostContext::new(&graph, network, 2)?;
    let timeline = compile_timeline(&p, &ctx, 2)?.with_background(BackgroundJob::new(&graph, 8)?);
    Ok(HeavyWorkload { graph, network, timeline })
}
