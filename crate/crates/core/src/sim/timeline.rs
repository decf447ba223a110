//! Expansion of a plan into per-GPU op sequences for one iteration.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::engine::SensitivitySet;
use super::{Intensity, OpKind, OpRecord, Phase, Priority};
use crate::cost::{comm_time, sync_time_for, CostContext};
use crate::error::{Error, Result};
use crate::graph::CompGraph;
use crate::math::per_device;
use crate::planner::TrainingPlan;

/// Single-GPU training loop of the background model.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundJob {
    pub batch: u32,
    /// One iteration, forward then backward.
    pub ops: Vec<OpRecord>,
}

impl BackgroundJob {
    pub fn new(graph: &CompGraph, batch: u32) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidParameter("background batch must be at least 1".into()));
        }
        let mut ops = Vec::new();
        let n = graph.len();
        let order = (0..n).map(|i| (i, Phase::Forward)).chain((0..n).rev().map(|i| (i, Phase::Backward)));
        for (i, phase) in order {
            let layer = &graph.layers()[i];
            let (f, b) = graph.timing_at_batch(i, batch)?;
            let us = if phase == Phase::Forward { f } else { b };
            if layer.is_virtual() || us <= 0.0 {
                continue;
            }
            ops.push(OpRecord {
                op_id: ops.len() as u32,
                task_id: 1,
                gpu: 0,
                kind: OpKind::Compute,
                layer_id: layer.id,
                phase,
                isolated_duration_us: us,
                stream_priority: Priority::Low,
                group_id: 0,
                sensitive: false,
                intensity: Intensity::of_kind(&layer.kind),
                per_device_batch: batch,
                payload_bytes: 0,
                collective: None,
            });
        }
        if ops.is_empty() {
            return Err(Error::InvalidParameter("background model has no compute".into()));
        }
        Ok(BackgroundJob { batch, ops })
    }

    pub fn isolated_iteration_us(&self) -> f64 {
        self.ops.iter().map(|o| o.isolated_duration_us).sum()
    }
}

/// Per-GPU op templates of one foreground iteration, plus the optional
/// background job replicated on every GPU.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub gpus: u32,
    pub global_batch: u32,
    pub fg: Vec<Vec<OpRecord>>,
    /// Participating GPUs of each collective id.
    pub collectives: Vec<Vec<u32>>,
    pub background: Option<BackgroundJob>,
}

impl Timeline {
    pub fn with_background(mut self, job: BackgroundJob) -> Self {
        self.background = Some(job);
        self
    }

    pub fn without_background(&self) -> Self {
        Timeline { background: None, ..self.clone() }
    }

    pub fn fg_ops(&self) -> usize {
        self.fg.iter().map(Vec::len).sum()
    }

    /// Flag the given `(gpu, op_id)` pairs sensitive.
    pub fn mark_sensitive(&mut self, set: &SensitivitySet) {
        for &(gpu, op) in set {
            if let Some(o) = self.fg.get_mut(gpu as usize).and_then(|ops| ops.get_mut(op as usize)) {
                o.sensitive = true;
            }
        }
    }

    pub fn sensitive(&self) -> SensitivitySet {
        self.fg.iter().flatten().filter(|o| o.sensitive).map(|o| (o.gpu, o.op_id)).collect()
    }

    /// Number of compute ops of `layer` across all GPUs, per phase.
    pub fn compute_ops_of(&self, layer: crate::graph::LayerId, phase: Phase) -> usize {
        self.fg
            .iter()
            .flatten()
            .filter(|o| o.kind == OpKind::Compute && o.layer_id == layer && o.phase == phase)
            .count()
    }
}

type GpuSet = (u32, u32);

/// Samples whose owning GPU differs between two contiguous splits of
/// `batch` placed at possibly different offsets.
fn moved_between(batch: u32, (oa, ga): GpuSet, (ob, gb): GpuSet) -> u64 {
    let ca = u64::from(per_device(batch, ga));
    let cb = u64::from(per_device(batch, gb));
    let total = u64::from(batch);
    let mut moved = 0;
    let mut s = 0u64;
    while s < total {
        let end = ((s / ca + 1) * ca).min((s / cb + 1) * cb).min(total);
        if u64::from(oa) + s / ca != u64::from(ob) + s / cb {
            moved += end - s;
        }
        s = end;
    }
    moved
}

struct Builder<'a> {
    fg: Vec<Vec<OpRecord>>,
    collectives: Vec<Vec<u32>>,
    ctx: &'a CostContext<'a>,
}

impl Builder<'_> {
    fn push(&mut self, gpu: u32, mut op: OpRecord) {
        let ops = &mut self.fg[gpu as usize];
        op.op_id = ops.len() as u32;
        op.gpu = gpu;
        ops.push(op);
    }

    #[allow(clippy::too_many_arguments)]
    fn collective(
        &mut self,
        kind: OpKind,
        layer: u32,
        phase: Phase,
        gpus: &BTreeSet<u32>,
        us: f64,
        bytes: u64,
        pdb: u32,
    ) {
        let id = self.collectives.len() as u32;
        self.collectives.push(gpus.iter().copied().collect());
        for &gpu in gpus {
            self.push(gpu, op(kind, layer, phase, us, Intensity::Low, pdb, bytes, Some(id)));
        }
    }

    fn transfer(&mut self, from: usize, a: GpuSet, b: GpuSet, layer: u32, phase: Phase) {
        if a == b {
            return;
        }
        let graph = self.ctx.graph();
        let moved = moved_between(graph.global_batch(), a, b);
        let bytes = moved * graph.layers()[from].activation_bytes_per_sample;
        let us = if bytes == 0 { 0.0 } else { comm_time(bytes as f64, self.ctx.network()) };
        let gpus: BTreeSet<u32> = (a.0..a.0 + a.1).chain(b.0..b.0 + b.1).collect();
        self.collective(
            OpKind::Transfer,
            layer,
            phase,
            &gpus,
            us,
            bytes,
            per_device(graph.global_batch(), a.1.max(b.1)),
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn op(
    kind: OpKind,
    layer: u32,
    phase: Phase,
    us: f64,
    intensity: Intensity,
    pdb: u32,
    bytes: u64,
    coll: Option<u32>,
) -> OpRecord {
    OpRecord {
        op_id: 0,
        task_id: 0,
        gpu: 0,
        kind,
        layer_id: layer,
        phase,
        isolated_duration_us: us,
        stream_priority: Priority::High,
        group_id: 0,
        sensitive: false,
        intensity,
        per_device_batch: pdb,
        payload_bytes: bytes,
        collective: coll,
    }
}

/// Expand `plan` into per-GPU ops on `sim_gpus` GPUs: forward compute in
/// topological order with a transfer collective wherever a layer's GPU set
/// differs from a predecessor's, then backward compute in reverse order,
/// each followed by the gradient all-reduce and the reverse transfers.
pub fn compile_timeline(plan: &TrainingPlan, ctx: &CostContext<'_>, sim_gpus: u32) -> Result<Timeline> {
    let graph = ctx.graph();
    if sim_gpus == 0 {
        return Err(Error::InvalidParameter("at least one GPU must be simulated".into()));
    }
    if plan.global_batch != graph.global_batch() {
        return Err(Error::InvalidParameter(format!(
            "plan global batch {} differs from the graph's {}",
            plan.global_batch,
            graph.global_batch()
        )));
    }
    let n = graph.len();
    let mut sets: Vec<GpuSet> = vec![(0, 0); n];
    for (i, layer) in graph.layers().iter().enumerate() {
        let a = plan
            .layers
            .iter()
            .find(|a| a.layer_id == layer.id)
            .ok_or_else(|| Error::InvalidParameter(format!("plan has no entry for layer {}", layer.id)))?;
        if a.g == 0 || u64::from(a.gpu_offset) + u64::from(a.g) > u64::from(sim_gpus) {
            return Err(Error::InvalidParameter(format!(
                "layer {} uses GPUs {}..{} but only {sim_gpus} are simulated",
                layer.id,
                a.gpu_offset,
                u64::from(a.gpu_offset) + u64::from(a.g)
            )));
        }
        sets[i] = (a.gpu_offset, a.g);
    }
    let preds: Vec<Vec<usize>> = graph
        .layers()
        .iter()
        .map(|l| l.predecessors.iter().map(|p| graph.index_of(*p).expect("validated edge")).collect())
        .collect();

    let mut b = Builder { fg: vec![Vec::new(); sim_gpus as usize], collectives: Vec::new(), ctx };
    let batch = graph.global_batch();
    for i in 0..n {
        let layer = &graph.layers()[i];
        for &p in &preds[i] {
            b.transfer(p, sets[p], sets[i], layer.id, Phase::Forward);
        }
        let (f, _) = graph.timing(i, sets[i].1)?;
        if !layer.is_virtual() && f > 0.0 {
            let (o, g) = sets[i];
            for gpu in o..o + g {
                let rec = op(
                    OpKind::Compute,
                    layer.id,
                    Phase::Forward,
                    f,
                    Intensity::of_kind(&layer.kind),
                    per_device(batch, g),
                    0,
                    None,
                );
                b.push(gpu, rec);
            }
        }
    }
    for i in (0..n).rev() {
        let layer = &graph.layers()[i];
        let (o, g) = sets[i];
        let (_, bw) = graph.timing(i, g)?;
        if !layer.is_virtual() && bw > 0.0 {
            for gpu in o..o + g {
                let rec = op(
                    OpKind::Compute,
                    layer.id,
                    Phase::Backward,
                    bw,
                    Intensity::of_kind(&layer.kind),
                    per_device(batch, g),
                    0,
                    None,
                );
                b.push(gpu, rec);
            }
        }
        if g > 1 && layer.params_bytes > 0 {
            let us = sync_time_for(layer.params_bytes, g, ctx.network());
            let gpus: BTreeSet<u32> = (o..o + g).collect();
            b.collective(
                OpKind::AllReduce,
                layer.id,
                Phase::Backward,
                &gpus,
                us,
                layer.params_bytes,
                per_device(batch, g),
            );
        }
        for &p in preds[i].iter().rev() {
            b.transfer(p, sets[i], sets[p], layer.id, Phase::Backward);
        }
    }
    Ok(Timeline { gpus: sim_gpus, global_batch: batch, fg: b.fg, collectives: b.collectives, background: None })
}
