use super::*;
use crate::cost::{comm_time, CostContext, NetworkProfile};
use crate::graph::{CompGraph, Layer, LayerProfile, ModelMeta, ProfileEntry};
use crate::planner::{plan, LayerAssignment, TrainingPlan};
use crate::synth::{random, vgg_like_graph, SynthConfig};
use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use proptest::prelude::*;

const GB: f64 = 1e9;

fn net() -> NetworkProfile {
    NetworkProfile::new(10.0 * GB, 0.0).unwrap()
}

/// Layers `(name, fwd_us(b), preds)` with bwd = 2·fwd, 1 MB params and
/// 1 KB activations per sample.
type LayerSpec<'a> = (&'a str, &'a dyn Fn(u32) -> f64, &'a [u32]);

fn graph(batch: u32, layers: &[LayerSpec<'_>]) -> CompGraph {
    let ls = layers
        .iter()
        .enumerate()
        .map(|(i, (name, _, preds))| {
            let mut l = Layer::new(i as u32, *name, "conv");
            l.predecessors = preds.to_vec();
            l.params_bytes = 1_000_000;
            l.activation_bytes_per_sample = 1_000;
            l
        })
        .collect();
    let profiles = layers.iter().enumerate().map(|(i, (_, f, _))| {
        LayerProfile::from_entries(
            i as u32,
            (1..=batch).map(|b| ProfileEntry { batch: b, fwd_us: f(b), bwd_us: 2.0 * f(b) }).collect::<Vec<_>>(),
        )
    });
    CompGraph::new(ModelMeta::default(), batch, ls, profiles.collect::<Vec<_>>()).unwrap()
}

fn manual_plan(g: &CompGraph, sets: &[(u32, u32)]) -> TrainingPlan {
    TrainingPlan {
        model: "manual".to_string(),
        total_gpus: sets.iter().map(|&(o, n)| o + n).max().unwrap(),
        global_batch: g.global_batch(),
        amp_limit: f64::INFINITY,
        predicted_iteration_us: 0.0,
        layers: g
            .layers()
            .iter()
            .zip(sets)
            .map(|(l, &(o, n))| LayerAssignment {
                layer_id: l.id,
                name: l.name.clone(),
                g: n,
                comp_us: 0.0,
                sync_us: 0.0,
                time_us: 0.0,
                amp: 0.0,
                concurrent: o > 0,
                gpu_offset: o,
            })
            .collect(),
        fallback_layers: Vec::new(),
    }
}

fn quiet() -> SimConfig {
    SimConfig { launch_pace_limit: 0, bg_start_jitter_us: 0.0, ..SimConfig::default() }
}

#[test]
fn ticks_round_up() {
    assert_eq!(to_ticks(0.0), 0);
    assert_eq!(to_ticks(0.01), 1);
    assert_eq!(to_ticks(1.0), 10);
    assert_eq!(to_ticks(1.05), 11);
}

#[test]
fn single_gpu_iteration_is_sum_of_compute() {
    let g = graph(
        4,
        &[("a", &|b| 10.0 * f64::from(b), &[]), ("b", &|_| 33.33, &[0]), ("c", &|b| 5.0 + f64::from(b), &[1])],
    );
    let p = manual_plan(&g, &[(0, 1), (0, 1), (0, 1)]);
    let ctx = CostContext::new(&g, net(), 1).unwrap();
    let tl = compile_timeline(&p, &ctx, 1).unwrap();
    assert_eq!(tl.fg[0].len(), 6);
    let (trace, m) = simulate(&tl, &quiet(), &InterferenceTable::default(), 3).unwrap();
    let comp: f64 = (0..3).map(|i| g.profile_lookup(i, 1).unwrap()).sum();
    let ticks: u64 = tl.fg[0].iter().map(OpRecord::ticks).sum();
    assert_eq!(m.fg_iteration_time_us_mean, ticks_to_us(ticks));
    assert!((m.fg_iteration_time_us_mean - comp).abs() <= 0.1 * 6.0);
    assert_eq!(m.qos_degradation, 1.0);
    assert_eq!(m.bg_throughput_samples_per_s, 0.0);
    trace.check().unwrap();
}

#[test]
fn burst_layer_leaves_a_gap_on_the_second_gpu() {
    // L1 on GPUs {0,1}, L2 on GPU 0.
    let f2 = |_: u32| 40.0;
    let g = graph(4, &[("l1", &|b| 10.0 * f64::from(b), &[]), ("l2", &f2, &[0])]);
    let p = manual_plan(&g, &[(0, 2), (0, 1)]);
    let ctx = CostContext::new(&g, net(), 2).unwrap();
    let tl = compile_timeline(&p, &ctx, 2).unwrap();
    let kinds: Vec<OpKind> = tl.fg[1].iter().map(|o| o.kind).collect();
    assert_eq!(kinds, vec![OpKind::Compute, OpKind::Transfer, OpKind::Transfer, OpKind::Compute, OpKind::AllReduce]);
    // Half the batch moves from GPU 1 to GPU 0.
    let transfer = comm_time(2.0 * 1000.0, &net());
    assert_eq!(tl.fg[1][1].isolated_duration_us, transfer);

    let cfg = SimConfig { warmup_iterations: 0, ..quiet() };
    let (trace, _) = simulate(&tl, &cfg, &InterferenceTable::default(), 1).unwrap();
    let on1: Vec<&OpExec> = trace.ops.iter().filter(|o| o.gpu == 1).collect();
    let fwd_transfer = on1.iter().find(|o| o.op_id == 1).unwrap();
    let bwd_transfer = on1.iter().find(|o| o.op_id == 2).unwrap();
    let gap = bwd_transfer.start - fwd_transfer.end;
    assert_eq!(gap, to_ticks(40.0) + to_ticks(80.0));
    trace.check().unwrap();
}

fn diamond() -> CompGraph {
    graph(
        8,
        &[
            ("in", &|b| 4.0 * f64::from(b), &[]),
            ("a", &|b| 20.0 * f64::from(b), &[0]),
            ("b", &|b| 20.0 * f64::from(b), &[0]),
            ("out", &|b| 2.0 * f64::from(b), &[1, 2]),
        ],
    )
}

#[test]
fn op_counts_follow_layer_multiplicity() {
    let g = diamond();
    let p = plan(&g, &NetworkProfile::new(1e15, 0.0).unwrap(), 4, f64::INFINITY).unwrap();
    let ctx = CostContext::new(&g, net(), 4).unwrap();
    let tl = compile_timeline(&p, &ctx, 4).unwrap();
    for a in &p.layers {
        assert_eq!(tl.compute_ops_of(a.layer_id, Phase::Forward), a.g as usize, "layer {}", a.layer_id);
        assert_eq!(tl.compute_ops_of(a.layer_id, Phase::Backward), a.g as usize);
    }
    let allreduces = tl.fg.iter().flatten().filter(|o| o.kind == OpKind::AllReduce).count() as u32;
    assert_eq!(allreduces, p.layers.iter().filter(|a| a.g > 1).map(|a| a.g).sum::<u32>());
}

#[test]
fn concurrent_chains_use_disjoint_gpus() {
    let g = diamond();
    // Branches on GPU 0 and GPU 1.
    let p = manual_plan(&g, &[(0, 1), (0, 1), (1, 1), (0, 1)]);
    let ctx = CostContext::new(&g, net(), 2).unwrap();
    let tl = compile_timeline(&p, &ctx, 2).unwrap();
    let move_all = comm_time(8.0 * 1000.0, &net());
    let on1: Vec<OpKind> = tl.fg[1].iter().map(|o| o.kind).collect();
    assert_eq!(
        on1,
        vec![OpKind::Transfer, OpKind::Compute, OpKind::Transfer, OpKind::Transfer, OpKind::Compute, OpKind::Transfer]
    );
    assert!(tl.fg[1].iter().filter(|o| o.kind == OpKind::Transfer).all(|o| o.isolated_duration_us == move_all));
    let (trace, _) = simulate(&tl, &quiet(), &InterferenceTable::default(), 2).unwrap();
    trace.check().unwrap();
}

#[test]
fn plan_wider_than_simulation_is_rejected() {
    let g = diamond();
    let p = manual_plan(&g, &[(0, 2), (0, 2), (2, 2), (0, 2)]);
    let ctx = CostContext::new(&g, net(), 4).unwrap();
    assert!(matches!(compile_timeline(&p, &ctx, 2), Err(Error::InvalidParameter(_))));
    assert!(compile_timeline(&p, &ctx, 4).is_ok());
}

fn vgg8() -> (CompGraph, NetworkProfile) {
    (vgg_like_graph(&SynthConfig::default()).unwrap(), NetworkProfile::from_gbps(4800.0, 0.0).unwrap())
}

#[test]
fn foreground_alone_matches_the_cost_model() {
    let (g, net) = vgg8();
    for amp in [1.5, 2.0, f64::INFINITY] {
        let p = plan(&g, &net, 8, amp).unwrap();
        let ctx = CostContext::new(&g, net, 8).unwrap();
        let tl = compile_timeline(&p, &ctx, 8).unwrap();
        let (trace, m) = simulate(&tl, &quiet(), &InterferenceTable::default(), 3).unwrap();
        let slack = 0.1 * tl.fg[0].len() as f64;
        assert!(
            (m.fg_iteration_time_us_mean - p.predicted_iteration_us).abs() <= slack,
            "amp {amp}: simulated {} vs predicted {}",
            m.fg_iteration_time_us_mean,
            p.predicted_iteration_us
        );
        assert_eq!(m.qos_degradation, 1.0);
        trace.check().unwrap();
    }
}

fn stages() -> [SimConfig; 3] {
    let a = SimConfig {
        launch_pace_limit: 0,
        priority_scheduling_enabled: false,
        feedback_enabled: false,
        ..SimConfig::default()
    };
    let b = SimConfig {
        launch_pace_limit: 2,
        priority_scheduling_enabled: true,
        feedback_enabled: false,
        ..SimConfig::default()
    };
    let c = SimConfig { feedback_enabled: true, ..b.clone() };
    [a, b, c]
}

#[test]
fn pacing_priorities_and_feedback_reduce_degradation() {
    let w = heavy_collocation_workload(crate::synth::DEFAULT_SEED).unwrap();
    let t = InterferenceTable::default();
    let d: Vec<f64> = stages().iter().map(|c| simulate(&w.timeline, c, &t, 5).unwrap().1.qos_degradation).collect();
    assert!(d[0] >= 2.0, "{d:?}");
    assert!(d[1] <= 1.25, "{d:?}");
    assert!(d[2] < d[1], "{d:?}");
}

#[test]
fn sensitive_allreduce_runs_at_isolated_speed() {
    let w = heavy_collocation_workload(crate::synth::DEFAULT_SEED).unwrap();
    let t = InterferenceTable::default();
    let cfg = stages()[1].clone();
    let (trace, _) = simulate(&w.timeline, &cfg, &t, 3).unwrap();
    let slowed = trace
        .ops
        .iter()
        .filter(|o| o.kind == OpKind::AllReduce && o.task == 0)
        .any(|o| o.measured_ticks() as f64 > cfg.slowdown_ban_threshold * o.isolated_ticks as f64);
    assert!(slowed, "some all-reduce should suffer under collocation");
    let flags = feedback_update(&trace, &cfg);
    let mut tl = w.timeline.clone();
    tl.mark_sensitive(&flags);
    let (trace, _) = simulate(&tl, &cfg, &t, 3).unwrap();
    let warm = trace.fg_iteration_end[cfg.warmup_iterations as usize - 1];
    for o in trace.ops.iter().filter(|o| o.task == 0 && o.kind == OpKind::AllReduce && o.start >= warm) {
        if flags.contains(&(o.gpu, o.op_id)) {
            assert!(o.measured_ticks() as f64 <= 1.1 * o.isolated_ticks as f64, "{o:?}");
        }
    }
}

fn exec(task: u32, op_id: u32, isolated: u64, measured: u64) -> OpExec {
    OpExec {
        gpu: 0,
        task,
        seq: 0,
        op_id,
        iteration: 0,
        kind: OpKind::Compute,
        width: 1,
        isolated_ticks: isolated,
        claim: 0,
        start: 0,
        end: measured,
    }
}

fn trace_of(ops: Vec<OpExec>) -> SimTrace {
    SimTrace {
        events: Vec::new(),
        ops,
        contexts: 2,
        context_busy_ticks: vec![0],
        fg_iteration_end: Vec::new(),
        end_tick: 0,
        initial_sensitive: SensitivitySet::new(),
        final_sensitive: SensitivitySet::new(),
        slowdown_ban_threshold: 2.0,
    }
}

#[test]
fn feedback_flags_only_slow_foreground_ops() {
    let cfg = SimConfig { slowdown_ban_threshold: 2.0, ..SimConfig::default() };
    let flags =
        feedback_update(&trace_of(vec![exec(0, 3, 100, 250), exec(0, 4, 100, 110), exec(1, 5, 100, 400)]), &cfg);
    assert_eq!(flags.into_iter().collect::<Vec<_>>(), vec![(0, 3)]);
    let none = feedback_update(&trace_of(vec![exec(0, 1, 100, 110), exec(0, 2, 50, 55)]), &cfg);
    assert!(none.is_empty());
}

#[test]
fn feedback_reaches_a_fixed_point() {
    let w = heavy_collocation_workload(crate::synth::DEFAULT_SEED).unwrap();
    let t = InterferenceTable::default();
    let cfg = stages()[1].clone();
    let mut tl = w.timeline.clone();
    let mut rounds = 0;
    loop {
        let (trace, _) = simulate(&tl, &cfg, &t, 3).unwrap();
        let flags = feedback_update(&trace, &cfg);
        rounds += 1;
        if flags == tl.sensitive() {
            break;
        }
        assert!(flags.is_superset(&tl.sensitive()));
        tl.mark_sensitive(&flags);
        assert!(rounds < 5, "no fixed point after {rounds} rounds");
    }
    // Idempotent once stable.
    let (trace, _) = simulate(&tl, &cfg, &t, 3).unwrap();
    assert_eq!(feedback_update(&trace, &cfg), tl.sensitive());
}

#[test]
fn identical_inputs_give_identical_traces() {
    let w = heavy_collocation_workload(7).unwrap();
    for cfg in stages() {
        let a = simulate(&w.timeline, &cfg, &InterferenceTable::default(), 3).unwrap();
        let b = simulate(&w.timeline, &cfg, &InterferenceTable::default(), 3).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
    let other = SimConfig { rng_seed: 8, ..SimConfig::default() };
    let a = simulate(&w.timeline, &other, &InterferenceTable::default(), 3).unwrap();
    let b = simulate(&w.timeline, &SimConfig::default(), &InterferenceTable::default(), 3).unwrap();
    assert_ne!(a.0.events, b.0.events, "the seed staggers background start times");
}

fn workloads() -> Vec<(&'static str, Timeline)> {
    let w = heavy_collocation_workload(crate::synth::DEFAULT_SEED).unwrap();
    let (g, net) = vgg8();
    let p = plan(&g, &net, 8, 2.0).unwrap();
    let ctx = CostContext::new(&g, net, 8).unwrap();
    let bp = compile_timeline(&p, &ctx, 8).unwrap().with_background(BackgroundJob::new(&g, 8).unwrap());
    let dpp = dp_plan(&g, &net, 8).unwrap();
    let dp = compile_timeline(&dpp, &ctx, 8).unwrap().with_background(BackgroundJob::new(&g, 4).unwrap());
    vec![("heavy", w.timeline), ("bp+col", bp), ("dp+col", dp)]
}

#[test]
fn invariants_hold_on_every_workload() {
    let t = InterferenceTable::default();
    for (name, tl) in workloads() {
        for cfg in stages() {
            let (trace, m) = simulate(&tl, &cfg, &t, 3).unwrap();
            trace.check().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(m.gpu_utilization.iter().all(|u| (0.0..=1.0).contains(u)), "{name}: {:?}", m.gpu_utilization);
            assert!(m.qos_degradation >= 1.0 - 1e-3, "{name}: {}", m.qos_degradation);
            assert!(m.cluster_total_throughput >= m.fg_throughput_samples_per_s);
            assert!(m.bg_throughput_samples_per_s >= 0.0);
        }
    }
}

#[test]
fn priorities_never_hurt_the_foreground() {
    let t = InterferenceTable::default();
    for (name, tl) in workloads() {
        for pace in [1, 2] {
            let on = SimConfig { launch_pace_limit: pace, priority_scheduling_enabled: true, ..SimConfig::default() };
            let off = SimConfig { priority_scheduling_enabled: false, ..on.clone() };
            let d_on = simulate(&tl, &on, &t, 3).unwrap().1.qos_degradation;
            let d_off = simulate(&tl, &off, &t, 3).unwrap().1.qos_degradation;
            assert!(d_on <= d_off, "{name} pace {pace}: {d_on} > {d_off}");
        }
    }
}

#[test]
fn allreduce_waits_for_every_backward() {
    let t = InterferenceTable::default();
    for (name, tl) in workloads() {
        let (trace, _) = simulate(&tl, &SimConfig::default(), &t, 2).unwrap();
        let mut bwd_end: BTreeMap<(u32, u32, u32), u64> = BTreeMap::new();
        for o in trace.ops.iter().filter(|o| o.task == 0) {
            let rec = &tl.fg[o.gpu as usize][o.op_id as usize];
            if rec.kind == OpKind::Compute && rec.phase == Phase::Backward {
                bwd_end.insert((o.iteration, rec.layer_id, o.gpu), o.end);
            }
        }
        for o in trace.ops.iter().filter(|o| o.task == 0 && o.kind == OpKind::AllReduce) {
            let rec = &tl.fg[o.gpu as usize][o.op_id as usize];
            for &p in &tl.collectives[rec.collective.unwrap() as usize] {
                let done = bwd_end[&(o.iteration, rec.layer_id, p)];
                assert!(
                    o.start >= done,
                    "{name}: all-reduce of layer {} started before gpu {p} finished",
                    rec.layer_id
                );
            }
        }
    }
}

#[test]
fn inconsistent_collective_order_deadlocks() {
    let (g, net) = vgg8();
    let ctx = CostContext::new(&g, net, 2).unwrap();
    let mut tl = compile_timeline(&dp_plan(&g, &net, 2).unwrap(), &ctx, 2).unwrap();
    let ops = &mut tl.fg[1];
    let colls: Vec<usize> = ops.iter().enumerate().filter(|(_, o)| o.collective.is_some()).map(|(i, _)| i).collect();
    let (i, j) = (colls[0], colls[1]);
    let (a, b) = (ops[i].collective, ops[j].collective);
    ops[i].collective = b;
    ops[j].collective = a;
    match simulate(&tl, &SimConfig::default(), &InterferenceTable::default(), 1) {
        Err(Error::Deadlock { snapshot, .. }) => assert!(snapshot.contains("gpu 0")),
        other => panic!("expected deadlock, got {other:?}"),
    }
}

#[test]
fn interference_table_validation() {
    let t = InterferenceTable::default();
    let mut bad = t.clone();
    bad.factors[0][0] = 0.9;
    assert!(InterferenceTable::new(bad.hi_classes.clone(), bad.lo_classes.clone(), bad.factors.clone()).is_err());
    let mut unknown = t.clone();
    unknown.lo_classes[0] = "huge".to_string();
    assert!(unknown.canonical().is_err());
    // Reordered labels describe the same table.
    let mut rev = t.clone();
    rev.hi_classes.reverse();
    rev.factors.reverse();
    assert_eq!(rev.canonical().unwrap(), t.canonical().unwrap());
    let comm = OpClass::Comm;
    let long_bg = OpClass::Compute { intensity: Intensity::High, long: true };
    assert_eq!(t.factor(comm, long_bg).unwrap(), 2.2);
    assert_eq!(InterferenceTable::neutral().factor(comm, long_bg).unwrap(), 1.0);
}

#[test]
fn neutral_table_only_costs_queueing() {
    let w = heavy_collocation_workload(crate::synth::DEFAULT_SEED).unwrap();
    let cfg = stages()[1].clone();
    let d_neutral = simulate(&w.timeline, &cfg, &InterferenceTable::neutral(), 3).unwrap().1.qos_degradation;
    let d_default = simulate(&w.timeline, &cfg, &InterferenceTable::default(), 3).unwrap().1.qos_degradation;
    assert!(d_neutral < d_default);
    assert!(d_neutral >= 1.0);
}

#[test]
fn config_validation() {
    assert!(SimConfig::default().validate().is_ok());
    for bad in [
        SimConfig { slowdown_ban_threshold: 1.0, ..SimConfig::default() },
        SimConfig { graph_split_size: 0, ..SimConfig::default() },
        SimConfig { contexts: 0, ..SimConfig::default() },
        SimConfig { launch_overhead_us: f64::NAN, ..SimConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    let w = heavy_collocation_workload(1).unwrap();
    assert!(simulate(&w.timeline, &SimConfig::default(), &InterferenceTable::default(), 0).is_err());
}

#[test]
fn partition_endpoints() {
    let (g, net) = vgg8();
    let cfg = SimConfig::default();
    let t = InterferenceTable::default();
    let dp = run_scenario(Scenario::Dp, &g, &net, 8, f64::INFINITY, &cfg, &t, 3).unwrap();
    let one = run_scenario(Scenario::Dp, &g, &net, 1, f64::INFINITY, &cfg, &t, 3).unwrap();
    let reference = one.metrics.fg_iteration_time_us_mean;
    let full = partition_baseline(&g, &net, 8, 8, &cfg, &t, 3, reference).unwrap();
    assert_eq!(full.bg_throughput, 0.0);
    assert_eq!(full.fg_iteration_us, dp.metrics.fg_iteration_time_us_mean);
    let single = partition_baseline(&g, &net, 8, 1, &cfg, &t, 3, reference).unwrap();
    assert_eq!(single.fg_speedup, 1.0);
    assert_eq!(single.bg_throughput, 7.0 * background_throughput(&g, &cfg).unwrap());
    assert!(partition_baseline(&g, &net, 8, 9, &cfg, &t, 3, reference).is_err());
}

#[test]
fn dp_scenario_without_background_has_no_degradation() {
    let (g, net) = vgg8();
    let r =
        run_scenario(Scenario::Dp, &g, &net, 8, f64::INFINITY, &SimConfig::default(), &InterferenceTable::default(), 3)
            .unwrap();
    assert_eq!(r.metrics.qos_degradation, 1.0);
    assert!(r.plan.layers.iter().all(|l| l.g == 8));
    assert_eq!(Scenario::parse("bp+col").unwrap(), Scenario::BpCol);
    assert!(Scenario::parse("col").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_plans_simulate_soundly(seed in any::<u64>(), gpus in 1u32..=4, bg in any::<bool>()) {
        let mut rng = random::rng(seed);
        let inst = random::series_parallel(&mut rng, 6, gpus);
        let p = plan(&inst.graph, &inst.network, gpus, inst.amp_limit).unwrap();
        let ctx = CostContext::new(&inst.graph, inst.network, gpus).unwrap();
        let mut tl = compile_timeline(&p, &ctx, gpus).unwrap();
        prop_assume!(tl.fg_ops() > 0);
        if bg {
            tl = tl.with_background(BackgroundJob::new(&inst.graph, inst.graph.global_batch()).unwrap());
        }
        let cfg = SimConfig { rng_seed: seed, ..SimConfig::default() };
        let (trace, m) = simulate(&tl, &cfg, &InterferenceTable::default(), 2).unwrap();
        prop_assert!(trace.check().is_ok(), "{:?}", trace.check());
        prop_assert!(m.qos_degradation >= 1.0 - 1e-3);
        let again = simulate(&tl, &cfg, &InterferenceTable::default(), 2).unwrap();
        prop_assert_eq!(trace, again.0);
    }
}
