//! Per-layer GPU assignment search.
//!
//! The search minimizes iteration time layer by layer. A layer `i` placed on
//! `g` GPUs after its predecessor ran on `h` costs the activation
//! redistribution `h → g` plus its own compute and gradient synchronization.
//! Every layer must also keep its GPU-sec amplification within a limit.
//!
//! Admissibility is checked per transition: a path is scored by the pair
//! (number of transitions that break the limit, total time), compared
//! lexicographically. With `1` among the candidates and a limit of at least 1
//! the all-ones path never breaks the limit, so emitted plans only carry
//! fallback layers for custom candidate sets or pinned entry layers. This
//! makes the dynamic program exact with respect to exhaustive enumeration.
//!
//! Branch/join blocks are reduced innermost first into tables indexed by the
//! GPU counts of the branching and joining layers (see `reduce`).

mod oracle;
mod reduce;
mod search;

pub use oracle::brute_force_plan;

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::cost::{CostContext, LayerCost, NetworkProfile};
use crate::error::{Error, Result};
use crate::graph::{decompose, Block, CompGraph, LayerId};
use reduce::{BlockNode, Placed, Reducer};
use search::{best_exit, run, trace_back, Cell, Edge, Entry, Params, Segment, NONE};

/// Dynamic-program tables of a linear search.
///
/// Rows follow `layers`, columns follow `candidates`. Unreachable cells hold
/// an infinite time and no predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTables {
    pub layers: Vec<LayerId>,
    pub candidates: Vec<u32>,
    /// Shortest cumulative time ending with layer `i` on `candidates[j]`.
    pub s: Vec<Vec<f64>>,
    /// Time attributed to layer `i` on that path.
    pub t: Vec<Vec<f64>>,
    /// Predecessor GPU count on that path.
    pub choice: Vec<Vec<Option<u32>>>,
    /// Amplification violations on that path.
    pub violations: Vec<Vec<u32>>,
    /// Whether the last transition of that path broke the limit.
    pub fallback: Vec<Vec<bool>>,
}

impl PlanTables {
    fn from_cells(layers: Vec<LayerId>, candidates: &[u32], cells: &[Vec<Cell>]) -> Self {
        let k = cells.first().map_or(0, Vec::len);
        let candidates = candidates[..k].to_vec();
        let mut t = PlanTables {
            layers,
            candidates: candidates.clone(),
            s: Vec::with_capacity(cells.len()),
            t: Vec::with_capacity(cells.len()),
            choice: Vec::with_capacity(cells.len()),
            violations: Vec::with_capacity(cells.len()),
            fallback: Vec::with_capacity(cells.len()),
        };
        for row in cells {
            t.s.push(row.iter().map(|c| c.s).collect());
            t.t.push(row.iter().map(|c| c.t).collect());
            t.choice.push(row.iter().map(|c| (c.prev != NONE).then(|| candidates[c.prev as usize])).collect());
            t.violations.push(row.iter().map(|c| c.fb).collect());
            t.fallback.push(row.iter().map(|c| c.fallback).collect());
        }
        t
    }
}

/// One layer of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAssignment {
    pub layer_id: LayerId,
    pub name: String,
    pub g: u32,
    pub comp_us: f64,
    pub sync_us: f64,
    /// Incoming transfer plus compute plus synchronization.
    pub time_us: f64,
    pub amp: f64,
    /// Runs on GPUs disjoint from the rest of its branch/join block.
    #[serde(default)]
    pub concurrent: bool,
    /// First GPU of the layer's GPU set; the set is `gpu_offset..gpu_offset + g`.
    #[serde(default)]
    pub gpu_offset: u32,
}

/// A complete per-layer GPU assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub model: String,
    pub total_gpus: u32,
    pub global_batch: u32,
    pub amp_limit: f64,
    pub predicted_iteration_us: f64,
    pub layers: Vec<LayerAssignment>,
    pub fallback_layers: Vec<LayerId>,
}

impl TrainingPlan {
    pub fn assignments(&self) -> Vec<(LayerId, u32)> {
        self.layers.iter().map(|l| (l.layer_id, l.g)).collect()
    }

    pub fn gpus_of(&self, layer: LayerId) -> Option<u32> {
        self.layers.iter().find(|l| l.layer_id == layer).map(|l| l.g)
    }

    pub fn costs(&self) -> Vec<LayerCost> {
        self.layers
            .iter()
            .map(|l| LayerCost { layer_id: l.layer_id, g: l.g, comp_us: l.comp_us, sync_us: l.sync_us, amp: l.amp })
            .collect()
    }

    /// Largest GPU count used by any layer.
    pub fn max_gpus(&self) -> u32 {
        self.layers.iter().map(|l| l.g).max().unwrap_or(0)
    }

    /// GPU-time consumed per iteration, summed over layers (µs · GPUs).
    pub fn gpu_time_us(&self) -> f64 {
        self.layers.iter().map(|l| l.time_us * f64::from(l.g)).sum()
    }
}

pub(crate) fn check_amp_limit(amp_limit: f64) -> Result<()> {
    if amp_limit.is_nan() || amp_limit < 1.0 {
        return Err(Error::InvalidParameter(format!("amplification limit must be at least 1, got {amp_limit}")));
    }
    Ok(())
}

/// Linear search over `chain` (consecutive layers joined by direct edges).
/// `entry_constraint` pins the first layer to one GPU count.
pub fn search_linear(
    chain: &[LayerId],
    ctx: &CostContext<'_>,
    amp_limit: f64,
    entry_constraint: Option<u32>,
) -> Result<PlanTables> {
    check_amp_limit(amp_limit)?;
    if chain.is_empty() {
        return Err(Error::InvalidParameter("chain must contain at least one layer".into()));
    }
    let graph = ctx.graph();
    let stages =
        chain.iter().map(|&id| graph.index_of(id).ok_or(Error::MissingLayer(id))).collect::<Result<Vec<_>>>()?;
    let fixed = match entry_constraint {
        None => None,
        Some(g) => Some(
            ctx.candidate_index(g)
                .ok_or_else(|| Error::InvalidParameter(format!("entry constraint {g} is not a candidate GPU count")))?,
        ),
    };
    let seg = Segment { edges: vec![Edge::Direct; stages.len() - 1], stages };
    let params = Params { ctx, amp_limit, cap: ctx.candidates().len() - 1 };
    let cells = run(&seg, &params, Entry::Free { fixed }, &vec![None; seg.edges.len()]);
    Ok(PlanTables::from_cells(chain.to_vec(), ctx.candidates(), &cells))
}

/// Pick the final GPU count (fewest violations, then shortest time, then
/// fewest GPUs) and follow the predecessor pointers.
pub fn backtrace(tables: &PlanTables, ctx: &CostContext<'_>, amp_limit: f64) -> Result<TrainingPlan> {
    check_amp_limit(amp_limit)?;
    let n = tables.layers.len();
    if n == 0 || tables.s.len() != n {
        return Err(Error::InvalidParameter("tables are not populated".into()));
    }
    let last = &tables.s[n - 1];
    let mut best: Option<usize> = None;
    for (j, &s) in last.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        let v = tables.violations[n - 1][j];
        if best.is_none_or(|b| search::better(v, s, tables.violations[n - 1][b], last[b])) {
            best = Some(j);
        }
    }
    let mut j = best.ok_or_else(|| Error::Infeasible("no finite entry in the last row".into()))?;
    let predicted = last[j];
    let graph = ctx.graph();
    let mut placed = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let layer = graph.index_of(tables.layers[i]).ok_or(Error::MissingLayer(tables.layers[i]))?;
        let gi = ctx.candidate_index(tables.candidates[j]).expect("table candidates come from the context");
        placed.push(Placed {
            layer,
            gi,
            t: tables.t[i][j],
            fallback: tables.fallback[i][j],
            concurrent: false,
            offset: 0,
        });
        if i > 0 {
            let h = tables.choice[i][j].ok_or_else(|| Error::Infeasible("broken predecessor chain".into()))?;
            j = tables.candidates.binary_search(&h).expect("predecessor is a candidate");
        }
    }
    Ok(assemble(ctx, amp_limit, predicted, placed))
}

fn assemble(ctx: &CostContext<'_>, amp_limit: f64, predicted: f64, mut placed: Vec<Placed>) -> TrainingPlan {
    let graph = ctx.graph();
    placed.sort_by_key(|p| p.layer);
    let layers = placed
        .iter()
        .map(|p| {
            let l = &graph.layers()[p.layer];
            LayerAssignment {
                layer_id: l.id,
                name: l.name.clone(),
                g: ctx.candidates()[p.gi],
                comp_us: ctx.comp(p.layer, p.gi),
                sync_us: ctx.sync(p.layer, p.gi),
                time_us: p.t,
                amp: ctx.amp(p.layer, p.gi, p.t),
                concurrent: p.concurrent,
                gpu_offset: p.offset,
            }
        })
        .collect();
    let fallback_layers = placed.iter().filter(|p| p.fallback).map(|p| graph.layers()[p.layer].id).collect();
    TrainingPlan {
        model: String::from(graph.name()),
        total_gpus: ctx.total_gpus(),
        global_batch: graph.global_batch(),
        amp_limit,
        predicted_iteration_us: predicted,
        layers,
        fallback_layers,
    }
}

/// Turn a block sequence into a segment, pushing branch/join blocks into
/// `arena`.
fn build_segment(blocks: &[Block], graph: &CompGraph, arena: &mut Vec<BlockNode>) -> Segment {
    let idx = |id: LayerId| graph.index_of(id).expect("decomposition refers to graph layers");
    let mut seg = Segment::default();
    let mut pending: Option<Edge> = None;
    for b in blocks {
        match b {
            Block::Single(id) => {
                if !seg.stages.is_empty() {
                    seg.edges.push(pending.take().unwrap_or(Edge::Direct));
                }
                seg.stages.push(idx(*id));
            }
            Block::BranchJoin { branch, chains, .. } => {
                let chains = chains.iter().map(|c| build_segment(c, graph, arena)).collect();
                arena.push(BlockNode { branch: idx(*branch), chains });
                pending = Some(Edge::Block(arena.len() - 1));
            }
        }
    }
    seg
}

/// Reduce every branch/join block of `graph` and search the resulting chain.
pub fn reduce_multichain(graph: &CompGraph, ctx: &CostContext<'_>, amp_limit: f64) -> Result<TrainingPlan> {
    reduce_with(graph, ctx, amp_limit, true)
}

/// Like [`reduce_multichain`] but every chain of a block runs on the shared
/// GPU set, one after another.
pub fn reduce_serial_only(graph: &CompGraph, ctx: &CostContext<'_>, amp_limit: f64) -> Result<TrainingPlan> {
    reduce_with(graph, ctx, amp_limit, false)
}

fn reduce_with(graph: &CompGraph, ctx: &CostContext<'_>, amp_limit: f64, concurrency: bool) -> Result<TrainingPlan> {
    check_amp_limit(amp_limit)?;
    let dec = decompose(graph)?;
    let mut arena = Vec::new();
    let top = build_segment(&dec.blocks, graph, &mut arena);
    let cap = ctx.candidates().len() - 1;
    let budget = ctx.total_gpus();
    let mut reducer = Reducer::new(ctx, amp_limit, &arena);
    reducer.concurrency = concurrency;
    let cells = reducer.run_segment(&top, cap, budget, Entry::Free { fixed: None });
    let (_, predicted, last_g) =
        best_exit(cells.last().unwrap(), |_| 0.0).ok_or_else(|| Error::Infeasible("no feasible assignment".into()))?;
    let choice = trace_back(&cells, last_g);
    let mut placed = Vec::with_capacity(graph.len());
    reducer.expand(&top, cap, budget, &cells, &choice, false, 0, &mut placed);
    debug_assert_eq!(placed.len(), graph.len());
    Ok(assemble(ctx, amp_limit, predicted, placed))
}

/// Plan `graph` (at its own global batch) on `total_gpus` GPUs with
/// power-of-two candidate counts.
pub fn plan(graph: &CompGraph, network: &NetworkProfile, total_gpus: u32, amp_limit: f64) -> Result<TrainingPlan> {
    check_amp_limit(amp_limit)?;
    let ctx = CostContext::new(graph, *network, total_gpus)?;
    reduce_multichain(graph, &ctx, amp_limit)
}

/// Every layer on the largest candidate, branches run one after another.
pub fn data_parallel_plan(ctx: &CostContext<'_>) -> TrainingPlan {
    let gi = ctx.candidates().len() - 1;
    let placed: Vec<Placed> = (0..ctx.graph().len())
        .map(|layer| Placed {
            layer,
            gi,
            t: ctx.comp(layer, gi) + ctx.sync(layer, gi),
            fallback: false,
            concurrent: false,
            offset: 0,
        })
        .collect();
    let predicted = placed.iter().fold(0.0, |acc, p| acc + p.t);
    assemble(ctx, f64::INFINITY, predicted, placed)
}
