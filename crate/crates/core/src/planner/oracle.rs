//! Exhaustive reference search used by the tests.
//!
//! Every assignment of candidate GPU counts to layers is enumerated, and for
//! each branch/join block every choice of concurrent chains. Block time, GPU
//! footprints and amplification checks follow the rules documented in
//! `reduce`, evaluated directly on the flattened graph.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::reduce::Placed;
use super::{assemble, check_amp_limit, TrainingPlan};
use crate::cost::CostContext;
use crate::error::{Error, Result};
use crate::graph::{decompose, Block, LayerId};

/// Largest instance accepted by [`brute_force_plan`].
pub const MAX_LAYERS: usize = 10;
pub const MAX_ASSIGNMENTS: u64 = 1_000_000;

#[derive(Clone, Copy)]
enum Enter {
    Free,
    Serial { from: usize, gb: usize },
    Concurrent { from: usize },
}

#[derive(Clone)]
struct Partial {
    fb: u32,
    s: f64,
    /// Largest GPU count touched (layers and nested footprints).
    max_g: u32,
    marks: Vec<Placed>,
}

#[derive(Clone)]
struct Outcome {
    fb: u32,
    time: f64,
    used: u32,
    marks: Vec<Placed>,
}

struct Oracle<'a, 'g> {
    ctx: &'a CostContext<'g>,
    amp_limit: f64,
    assign: Vec<usize>,
}

impl Oracle<'_, '_> {
    fn idx(&self, id: LayerId) -> usize {
        self.ctx.graph().index_of(id).expect("decomposed layer exists")
    }

    fn round_up(&self, g: u32) -> Option<u32> {
        self.ctx.candidates().iter().copied().find(|&c| c >= g)
    }

    fn sequence(&self, blocks: &[Block], enter: Enter, budget: Option<u32>) -> Vec<Partial> {
        let ctx = self.ctx;
        let mut states = vec![Partial { fb: 0, s: 0.0, max_g: 0, marks: Vec::new() }];
        let mut prev: Option<usize> = None;
        let mut pending: Option<Vec<Outcome>> = None;
        for b in blocks {
            match b {
                Block::Single(id) => {
                    let li = self.idx(*id);
                    let gi = self.assign[li];
                    let comp = ctx.comp(li, gi);
                    let sync = ctx.sync(li, gi);
                    let mut next = Vec::new();
                    for st in &states {
                        let mut push = |tr: f64, entry_t: f64, extra_fb: u32, used: u32, marks: &[Placed]| {
                            let t = (entry_t + comp) + sync;
                            let adm = ctx.amp_ok(li, gi, t, self.amp_limit);
                            let s = ((st.s + tr) + comp) + sync;
                            let mut m = st.marks.clone();
                            m.extend_from_slice(marks);
                            m.push(Placed { layer: li, gi, t, fallback: !adm, concurrent: false, offset: 0 });
                            next.push(Partial {
                                fb: st.fb + extra_fb + u32::from(!adm),
                                s,
                                max_g: st.max_g.max(used).max(ctx.candidates()[gi]),
                                marks: m,
                            });
                        };
                        match (&pending, prev) {
                            (Some(outs), _) => {
                                for o in outs {
                                    push(o.time, 0.0, o.fb, o.used, &o.marks);
                                }
                            }
                            (None, Some(p)) => {
                                let tr = ctx.activation_transfer(p, self.assign[p], gi);
                                push(tr, tr, 0, 0, &[]);
                            }
                            (None, None) => {
                                let tr = match enter {
                                    Enter::Free => 0.0,
                                    Enter::Serial { from, gb } => ctx.activation_transfer(from, gb, gi),
                                    Enter::Concurrent { from } => ctx.disjoint_move(from),
                                };
                                push(tr, tr, 0, 0, &[]);
                            }
                        }
                    }
                    states = next;
                    pending = None;
                    prev = Some(li);
                }
                Block::BranchJoin { branch, join, chains } => {
                    let bi = self.idx(*branch);
                    let ji = self.idx(*join);
                    pending = Some(self.block(bi, ji, chains, budget));
                }
            }
        }
        states
    }

    /// Chain outcomes including entry and exit transfers; `used` is the
    /// rounded footprint.
    fn chain(&self, blocks: &[Block], bi: usize, ji: usize, concurrent: bool) -> Vec<Outcome> {
        let ctx = self.ctx;
        if blocks.is_empty() {
            if concurrent {
                return Vec::new();
            }
            let t = ctx.activation_transfer(bi, self.assign[bi], self.assign[ji]);
            return vec![Outcome { fb: 0, time: t, used: 0, marks: Vec::new() }];
        }
        let enter =
            if concurrent { Enter::Concurrent { from: bi } } else { Enter::Serial { from: bi, gb: self.assign[bi] } };
        let last = match blocks.last() {
            Some(Block::Single(id)) => self.idx(*id),
            _ => unreachable!("chains end with a single layer"),
        };
        let exit = if concurrent {
            ctx.disjoint_move(last)
        } else {
            ctx.activation_transfer(last, self.assign[last], self.assign[ji])
        };
        self.sequence(blocks, enter, None)
            .into_iter()
            .filter_map(|p| {
                let used = self.round_up(p.max_g)?;
                let mut marks = p.marks;
                if concurrent {
                    for m in &mut marks {
                        m.concurrent = true;
                    }
                }
                Some(Outcome { fb: p.fb, time: p.s + exit, used, marks })
            })
            .collect()
    }

    fn block(&self, bi: usize, ji: usize, chains: &[Vec<Block>], budget: Option<u32>) -> Vec<Outcome> {
        let n = chains.len();
        let serial: Vec<Vec<Outcome>> = chains.iter().map(|c| self.chain(c, bi, ji, false)).collect();
        let conc: Vec<Vec<Outcome>> = chains.iter().map(|c| self.chain(c, bi, ji, true)).collect();
        let max_mask = if n <= super::reduce::MAX_MASK_CHAINS { (1u32 << n) - 1 } else { 1 };
        let mut out = Vec::new();
        for mask in 0..max_mask {
            if (0..n).any(|c| mask & (1 << c) != 0 && chains[c].is_empty()) {
                continue;
            }
            let options: Vec<&Vec<Outcome>> =
                (0..n).map(|c| if mask & (1 << c) != 0 { &conc[c] } else { &serial[c] }).collect();
            let mut pick = vec![0usize; n];
            if options.iter().any(|o| o.is_empty()) {
                continue;
            }
            loop {
                let mut sum = 0.0;
                let mut fs = 1u32;
                let mut conc_used = 0u32;
                let mut conc_max: f64 = 0.0;
                let mut fb = 0;
                for c in 0..n {
                    let o = &options[c][pick[c]];
                    fb += o.fb;
                    if mask & (1 << c) != 0 {
                        conc_used += o.used;
                        if o.time > conc_max {
                            conc_max = o.time;
                        }
                    } else {
                        sum += o.time;
                        fs = fs.max(o.used);
                    }
                }
                // Concurrent chains sit after the serial group, in chain order.
                let mut marks = Vec::new();
                let mut next_free = fs;
                for c in 0..n {
                    let o = &options[c][pick[c]];
                    let shift = if mask & (1 << c) != 0 {
                        next_free += o.used;
                        next_free - o.used
                    } else {
                        0
                    };
                    marks.extend(o.marks.iter().map(|m| Placed { offset: m.offset + shift, ..*m }));
                }
                let used = fs + conc_used;
                let limit = budget.unwrap_or(u32::MAX);
                if used <= limit {
                    let time = if conc_max > sum { conc_max } else { sum };
                    out.push(Outcome { fb, time, used: if mask == 0 { fs } else { used }, marks });
                }
                // next combination
                let mut c = 0;
                loop {
                    if c == n {
                        break;
                    }
                    pick[c] += 1;
                    if pick[c] < options[c].len() {
                        break;
                    }
                    pick[c] = 0;
                    c += 1;
                }
                if c == n {
                    break;
                }
            }
        }
        out
    }
}

/// Exhaustive optimum under the same cost model and admissibility rules as
/// [`super::reduce_multichain`]. Only for small instances.
pub fn brute_force_plan(ctx: &CostContext<'_>, amp_limit: f64) -> Result<TrainingPlan> {
    check_amp_limit(amp_limit)?;
    let graph = ctx.graph();
    let n = graph.len();
    let k = ctx.candidates().len();
    let total = (k as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if n > MAX_LAYERS || total > MAX_ASSIGNMENTS {
        return Err(Error::TooLarge(format!("{n} layers with {k} candidates ({total} assignments)")));
    }
    let dec = decompose(graph)?;
    let mut oracle = Oracle { ctx, amp_limit, assign: vec![0; n] };
    let mut best: Option<(u32, f64, Vec<Placed>)> = None;
    for code in 0..total {
        let mut rest = code;
        for a in oracle.assign.iter_mut() {
            *a = (rest % k as u64) as usize;
            rest /= k as u64;
        }
        for p in oracle.sequence(&dec.blocks, Enter::Free, Some(ctx.total_gpus())) {
            if best.as_ref().is_none_or(|(bf, bs, _)| super::search::better(p.fb, p.s, *bf, *bs)) {
                best = Some((p.fb, p.s, p.marks));
            }
        }
    }
    let (_, s, marks) = best.ok_or_else(|| Error::Infeasible("no feasible assignment".into()))?;
    Ok(assemble(ctx, amp_limit, s, marks))
}
