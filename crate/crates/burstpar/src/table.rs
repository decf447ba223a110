//! Comma-separated output tables with a header row.

use burstpar_core::scaling::ScalingEstimate;
use burstpar_core::sim::{ParetoPoint, SimTrace};
use serde::Serialize;

fn render<R: Serialize>(rows: impl IntoIterator<Item = R>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV is UTF-8")
}

#[derive(Serialize)]
struct TraceRow {
    tick: u64,
    gpu: u32,
    task: u32,
    op: u64,
    event: &'static str,
}

/// One row per event, ordered by tick; events of equal tick keep engine
/// order.
pub fn trace_csv(trace: &SimTrace) -> String {
    let mut events: Vec<_> = trace.events.iter().collect();
    events.sort_by_key(|e| e.tick);
    let rows =
        events.into_iter().map(|e| TraceRow { tick: e.tick, gpu: e.gpu, task: e.task, op: e.op, event: e.kind.name() });
    with_header(render(rows), "tick,gpu,task,op,event")
}

#[derive(Serialize)]
struct ScalingRow {
    n_gpus: u32,
    strategy: &'static str,
    batch: u32,
    iter_us: f64,
    steps: f64,
    tta_s: f64,
    speedup: f64,
}

pub fn scaling_csv(estimates: &[ScalingEstimate]) -> String {
    let rows = estimates.iter().map(|e| ScalingRow {
        n_gpus: e.n_gpus,
        strategy: e.strategy.name(),
        batch: e.chosen_global_batch,
        iter_us: e.iteration_time_us,
        steps: e.steps,
        tta_s: e.time_to_accuracy_s,
        speedup: e.speedup_vs_1gpu,
    });
    with_header(render(rows), "n_gpus,strategy,batch,iter_us,steps,tta_s,speedup")
}

#[derive(Serialize)]
struct ParetoRow {
    kind: &'static str,
    amp_limit: f64,
    fg_gpus: u32,
    bg_batch: u32,
    fg_iteration_us: f64,
    fg_speedup: f64,
    fg_throughput: f64,
    bg_throughput: f64,
    cluster_throughput: f64,
}

pub fn pareto_csv(points: &[ParetoPoint]) -> String {
    let rows = points.iter().map(|p| ParetoRow {
        kind: p.kind.name(),
        amp_limit: p.amp_limit,
        fg_gpus: p.fg_gpus,
        bg_batch: p.bg_batch,
        fg_iteration_us: p.fg_iteration_us,
        fg_speedup: p.fg_speedup,
        fg_throughput: p.fg_throughput,
        bg_throughput: p.bg_throughput,
        cluster_throughput: p.cluster_throughput,
    });
    with_header(
        render(rows),
        "kind,amp_limit,fg_gpus,bg_batch,fg_iteration_us,fg_speedup,fg_throughput,bg_throughput,cluster_throughput",
    )
}

/// The serializer writes the header with the first row; empty tables still
/// get one.
fn with_header(body: String, header: &str) -> String {
    if body.is_empty() {
        format!("{header}\n")
    } else {
        body
    }
}
