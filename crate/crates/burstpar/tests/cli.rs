use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use burstpar::error::exit;
use burstpar::manifest::RunManifest;
use burstpar_core::planner::TrainingPlan;
use burstpar_core::sim::SimMetrics;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_burstpar")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generate a family into `dir/name` and return the graph file.
fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["profile-gen", "--family", name, "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("graph.toml")
}

fn read_plan(dir: &Path) -> TrainingPlan {
    toml::from_str(&fs::read_to_string(dir.join("plan.toml")).unwrap()).unwrap()
}

#[test]
fn profile_gen_is_deterministic_per_seed() {
    let t = TempDir::new().unwrap();
    let a = gen(t.path(), "vgg_like", &[]);
    let b = t.path().join("again");
    ok(&["profile-gen", "--family", "vgg_like", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(b.join("graph.toml")).unwrap());
    let c = t.path().join("other");
    ok(&["profile-gen", "--family", "vgg_like", "--seed", "7", "--out", s(&c)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(c.join("graph.toml")).unwrap());
    let stdout = ok(&["profile-gen", "--family", "inception_like"]);
    assert!(stdout.contains("119 layers"), "{stdout}");
    assert!(stdout.contains("11 branch/join blocks"), "{stdout}");
}

#[test]
fn single_gpu_plan_keeps_every_layer_on_one_gpu() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "vgg_like", &[]);
    let out = t.path().join("p1");
    let stdout = ok(&["plan", "--graph", s(&g), "--gpus", "1", "--out", s(&out)]);
    assert!(stdout.contains("predicted iteration"));
    let p = read_plan(&out);
    assert_eq!(p.layers.len(), 21);
    assert!(p.layers.iter().all(|l| l.g == 1 && l.amp == 1.0));
    let m = RunManifest::load(&out.join("manifest.toml")).unwrap();
    assert_eq!(m.command, "plan");
    assert!(m.search_wall_time_s.is_some());
    assert_eq!(m.inputs.len(), 1);
}

#[test]
fn looser_amp_limits_never_slow_the_plan() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "inception_like", &[]);
    let mut prev = f64::INFINITY;
    for amp in ["1.1", "1.5", "2.0", "inf"] {
        let out = t.path().join(format!("amp{amp}"));
        ok(&["plan", "--graph", s(&g), "--gpus", "16", "--amp-limit", amp, "--out", s(&out)]);
        let p = read_plan(&out);
        assert!(p.predicted_iteration_us <= prev, "amp {amp}: {} > {prev}", p.predicted_iteration_us);
        prev = p.predicted_iteration_us;
    }
}

#[test]
fn inception_plans_at_1024_gpus_quickly() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "inception_like", &[]);
    let started = Instant::now();
    ok(&["plan", "--graph", s(&g), "--gpus", "1024", "--amp-limit", "inf"]);
    assert!(started.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn dp_scenario_has_no_degradation() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "vgg_like", &[]);
    let out = t.path().join("dp");
    ok(&["simulate", "--graph", s(&g), "--gpus", "8", "--scenario", "dp", "--iterations", "5", "--out", s(&out)]);
    let m: SimMetrics = toml::from_str(&fs::read_to_string(out.join("metrics.toml")).unwrap()).unwrap();
    assert_eq!(m.qos_degradation, 1.0);
    assert_eq!(m.bg_throughput_samples_per_s, 0.0);
    assert!(read_plan(&out).layers.iter().all(|l| l.g == 8));
}

#[test]
fn simulation_is_reproducible_from_its_manifest() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "vgg_like", &[]);
    let a = t.path().join("a");
    let b = t.path().join("b");
    let args = |out: &Path| {
        [
            "simulate",
            "--graph",
            s(&g),
            "--gpus",
            "4",
            "--scenario",
            "bp+col",
            "--iterations",
            "4",
            "--seed",
            "9",
            "--out",
            s(out),
        ]
        .map(String::from)
    };
    ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    for f in ["trace.csv", "metrics.toml", "plan.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let header = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(header.starts_with("tick,gpu,task,op,event\n"));

    let r = t.path().join("replayed");
    let stdout = ok(&["replay", "--manifest", s(&a.join("manifest.toml")), "--out", s(&r)]);
    assert!(stdout.contains("outputs identical"), "{stdout}");
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(r.join("trace.csv")).unwrap());

    fs::write(&g, fs::read_to_string(&g).unwrap().replace("vgg_like", "vgg_edit")).unwrap();
    let r2 = t.path().join("tampered");
    assert_eq!(code(&["replay", "--manifest", s(&a.join("manifest.toml")), "--out", s(&r2)]), exit::MANIFEST);
}

#[test]
fn simulate_uses_a_given_plan_and_config_files() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "vgg_like", &[]);
    let p = t.path().join("p");
    ok(&["plan", "--graph", s(&g), "--gpus", "4", "--amp-limit", "1.5", "--out", s(&p)]);
    let cfg = t.path().join("sim.toml");
    fs::write(&cfg, "launch_pace_limit = 0\npriority_scheduling_enabled = false\nfeedback_enabled = false\n").unwrap();
    let out = t.path().join("s");
    ok(&[
        "simulate",
        "--graph",
        s(&g),
        "--plan",
        s(&p.join("plan.toml")),
        "--gpus",
        "4",
        "--sim-config",
        s(&cfg),
        "--pace-limit",
        "3",
        "--iterations",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(read_plan(&out), read_plan(&p));
    let m = RunManifest::load(&out.join("manifest.toml")).unwrap();
    assert_eq!(m.inputs.len(), 3);
}

#[test]
fn analyze_writes_a_scaling_table() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "vgg_like", &[]);
    let out = t.path().join("a");
    ok(&[
        "analyze",
        "--graph",
        s(&g),
        "--gpu-counts",
        "1,8,64",
        "--bandwidth",
        "10",
        "--global-batch",
        "256",
        "--out",
        s(&out),
    ]);
    let csv = fs::read_to_string(out.join("scaling.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n_gpus,strategy,batch,iter_us,steps,tta_s,speedup");
    assert_eq!(lines.len(), 1 + 3 * 3);
    let curve = t.path().join("curve.toml");
    fs::write(
        &curve,
        "target_error = 0.1\npoints = [{ batch = 32, steps = 9000.0 }, { batch = 4096, steps = 1000.0 }]\n",
    )
    .unwrap();
    let stdout =
        ok(&["analyze", "--graph", s(&g), "--curve", s(&curve), "--strategy", "strong", "--gpu-counts", "1,2"]);
    assert_eq!(stdout.lines().count(), 3);
}

#[test]
fn sweep_reports_a_dominating_point() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "vgg_like", &[]);
    let out = t.path().join("w");
    let stdout = ok(&["sweep", "--graph", s(&g), "--out", s(&out)]);
    assert!(stdout.contains("dominates partition"), "{stdout}");
    let csv = fs::read_to_string(out.join("pareto.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("partition,")).count(), 4);
    assert_eq!(csv.lines().filter(|l| l.starts_with("bp+col,")).count(), 8);
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let t = TempDir::new().unwrap();
    let g = gen(t.path(), "vgg_like", &[]);
    let missing = t.path().join("nope.toml");
    assert_eq!(code(&["plan", "--graph", s(&missing), "--gpus", "2"]), exit::IO);

    let broken = t.path().join("broken.toml");
    fs::write(&broken, "[model]\nname = 3\n").unwrap();
    assert_eq!(code(&["plan", "--graph", s(&broken), "--gpus", "2"]), exit::PARSE);

    assert_eq!(code(&["simulate", "--graph", s(&g), "--gpus", "2", "--scenario", "mixed"]), exit::USAGE);
    assert_eq!(code(&["plan", "--graph", s(&g), "--gpus", "2", "--amp-limit", "0.5"]), exit::USAGE);
    assert_eq!(code(&["plan", "--graph", s(&g)]), exit::USAGE);
    assert_eq!(code(&["profile-gen", "--family", "resnet"]), exit::USAGE);

    // 0 -> {1, 2}, 1 -> {3, 4}, 2 -> 4, {3, 4} -> 5: not series-parallel.
    let mut text = String::from("[model]\nname = \"n\"\nglobal_batch = 4\n");
    let succs: [&[u32]; 6] = [&[1, 2], &[3, 4], &[4], &[5], &[5], &[]];
    for (i, s) in succs.iter().enumerate() {
        text.push_str(&format!(
            "[[layers]]\nid = {i}\nname = \"l{i}\"\nkind = \"conv\"\nparams_bytes = 0\nactivation_bytes_per_sample = 8\nsuccessors = {s:?}\n"
        ));
    }
    for i in 0..6 {
        text.push_str(&format!(
            "[[profiles]]\nlayer_id = {i}\nentries = [{{ batch = 1, fwd_us = 1.0, bwd_us = 2.0 }}]\n"
        ));
    }
    text.push_str("[network]\nbandwidth_bytes_per_sec = 1e9\npropagation_delay_us = 0.0\n");
    let n = t.path().join("n.toml");
    fs::write(&n, text).unwrap();
    let out = run(&["plan", "--graph", s(&n), "--gpus", "2"]);
    assert_eq!(out.status.code(), Some(exit::UNSUPPORTED_TOPOLOGY));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported topology"));
}
