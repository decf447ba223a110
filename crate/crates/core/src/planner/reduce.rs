//! Multi-chain reduction: every branch/join block becomes a table of
//! (branch g, join g) → block time, so the enclosing chain can be searched
//! like a linear one.
//!
//! Chains of a block run either serially on a shared GPU set (the serial
//! group, whose time is the sum of its chains) or concurrently on disjoint
//! GPU sets. A concurrent chain pays for moving the branch output to its GPUs
//! and its own output back to the join. The block time is the larger of the
//! serial sum and the slowest concurrent chain. The serial group plus all
//! concurrent footprints must fit in the block's GPU budget; footprints are
//! rounded up to candidate counts.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::search::{best_exit, better, run, trace_back, Cell, Edge, Entry, Params, Segment};
use crate::cost::CostContext;

/// Largest chain count for which concurrent subsets are enumerated.
pub(crate) const MAX_MASK_CHAINS: usize = 12;

const SERIAL: u8 = u8::MAX;

#[derive(Debug, Clone)]
pub(crate) struct BlockNode {
    pub branch: usize,
    pub chains: Vec<Segment>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockCell {
    pub span: f64,
    pub fb: u32,
    /// Cap of the serial group.
    pub fs: u8,
    /// Index into `BlockTable::caps`; `u32::MAX` when every chain is serial.
    pub conc: u32,
}

impl BlockCell {
    const INFEASIBLE: BlockCell = BlockCell { span: f64::INFINITY, fb: u32::MAX, fs: 0, conc: u32::MAX };
}

#[derive(Debug, Clone)]
pub(crate) struct BlockTable {
    k: usize,
    cells: Vec<BlockCell>,
    /// Per-chain cap for concurrent chains, `SERIAL` otherwise.
    caps: Vec<Vec<u8>>,
}

impl BlockTable {
    #[inline]
    pub fn cell(&self, gb: usize, gj: usize) -> &BlockCell {
        &self.cells[gb * self.k + gj]
    }
}

/// Result of a layer placement produced while expanding a plan.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Placed {
    pub layer: usize,
    pub gi: usize,
    pub t: f64,
    pub fallback: bool,
    pub concurrent: bool,
    /// First GPU of the layer's GPU set.
    pub offset: u32,
}

/// Concurrent-chain choice for one threshold.
struct Threshold {
    fb: u32,
    max_t: f64,
    caps: Vec<u8>,
}

pub(crate) struct Reducer<'a, 'g> {
    pub ctx: &'a CostContext<'g>,
    pub amp_limit: f64,
    pub arena: &'a [BlockNode],
    /// Allow chains to run on disjoint GPU sets.
    pub concurrency: bool,
    memo: BTreeMap<(usize, usize, u32), BlockTable>,
}

impl<'a, 'g> Reducer<'a, 'g> {
    pub fn new(ctx: &'a CostContext<'g>, amp_limit: f64, arena: &'a [BlockNode]) -> Self {
        Reducer { ctx, amp_limit, arena, concurrency: true, memo: BTreeMap::new() }
    }

    /// S/T tables of `seg` with all layers capped at candidate `cap` and
    /// nested blocks limited to `budget` GPUs.
    pub fn run_segment(&mut self, seg: &Segment, cap: usize, budget: u32, entry: Entry) -> Vec<Vec<Cell>> {
        for e in &seg.edges {
            if let Edge::Block(b) = *e {
                self.ensure(b, cap, budget);
            }
        }
        let tables: Vec<Option<&BlockTable>> = seg
            .edges
            .iter()
            .map(|e| match *e {
                Edge::Direct => None,
                Edge::Block(b) => Some(&self.memo[&(b, cap, budget)]),
            })
            .collect();
        let params = Params { ctx: self.ctx, amp_limit: self.amp_limit, cap };
        run(seg, &params, entry, &tables)
    }

    fn ensure(&mut self, b: usize, cap: usize, budget: u32) {
        if self.memo.contains_key(&(b, cap, budget)) {
            return;
        }
        let table = self.build(b, cap, budget);
        self.memo.insert((b, cap, budget), table);
    }

    fn build(&mut self, b: usize, cap: usize, budget: u32) -> BlockTable {
        let arena = self.arena;
        let node = &arena[b];
        let ctx = self.ctx;
        let cands = ctx.candidates();
        let k = cap + 1;
        let n = node.chains.len();

        // serial[c][(f * k + gb) * k + gj], conc[c][f]
        let mut serial: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
        let mut conc: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
        for seg in &node.chains {
            let mut ser = vec![(u32::MAX, f64::INFINITY); k * k * k];
            let mut con = vec![(u32::MAX, f64::INFINITY); k];
            if seg.is_empty() {
                for f in 0..k {
                    for gb in 0..k {
                        for gj in 0..k {
                            ser[(f * k + gb) * k + gj] = (0, ctx.activation_transfer(node.branch, gb, gj));
                        }
                    }
                }
            } else {
                let last = seg.last();
                for f in 0..k {
                    let fb_budget = cands[f];
                    for gb in 0..k {
                        let cells = self.run_segment(seg, f, fb_budget, Entry::Serial { from: node.branch, gi: gb });
                        let row = cells.last().unwrap();
                        for gj in 0..k {
                            if let Some((fb, t, _)) = best_exit(row, |g| ctx.activation_transfer(last, g, gj)) {
                                ser[(f * k + gb) * k + gj] = (fb, t);
                            }
                        }
                    }
                    let cells = self.run_segment(seg, f, fb_budget, Entry::Concurrent { from: node.branch });
                    let mv = ctx.disjoint_move(last);
                    if let Some((fb, t, _)) = best_exit(cells.last().unwrap(), |_| mv) {
                        con[f] = (fb, t);
                    }
                }
            }
            serial.push(ser);
            conc.push(con);
        }

        // Concurrent subsets never include skip edges and never cover every
        // chain.
        let empty_bits: u32 =
            node.chains.iter().enumerate().filter(|(_, s)| s.is_empty()).fold(0, |m, (c, _)| m | (1 << c));
        let masks: Vec<u32> = if self.concurrency && n <= MAX_MASK_CHAINS {
            (1..(1u32 << n) - 1).filter(|m| m & empty_bits == 0).collect()
        } else {
            Vec::new()
        };

        // Thresholds depend only on (mask, fs): concurrent chains are entered
        // and left through full moves that do not depend on gb / gj.
        let mut thresholds: Vec<Vec<Vec<Threshold>>> = Vec::with_capacity(masks.len());
        for &mask in &masks {
            let mut per_fs = Vec::with_capacity(k);
            for fs in 0..k {
                per_fs.push(if cands[fs] > budget {
                    Vec::new()
                } else {
                    concurrent_thresholds(mask, &conc, cands, budget - cands[fs], n)
                });
            }
            thresholds.push(per_fs);
        }

        let mut cells = vec![BlockCell::INFEASIBLE; k * k];
        let mut caps: Vec<Vec<u8>> = Vec::new();
        let serial_sum = |mask: u32, fs: usize, gb: usize, gj: usize| -> Option<(u32, f64)> {
            let mut s = 0.0;
            let mut fb = 0u32;
            for (c, ser) in serial.iter().enumerate() {
                if mask & (1 << c) != 0 {
                    continue;
                }
                let (f, t) = ser[(fs * k + gb) * k + gj];
                if !t.is_finite() {
                    return None;
                }
                s += t;
                fb += f;
            }
            Some((fb, s))
        };

        for gb in 0..k {
            for gj in 0..k {
                let mut best = BlockCell::INFEASIBLE;
                let mut best_caps: Option<(usize, usize, usize)> = None;
                if let Some((fb, s)) = serial_sum(0, cap, gb, gj) {
                    best = BlockCell { span: s, fb, fs: cap as u8, conc: u32::MAX };
                }
                for (mi, &mask) in masks.iter().enumerate() {
                    for fs in 0..k {
                        let thr = &thresholds[mi][fs];
                        if thr.is_empty() {
                            continue;
                        }
                        let Some((sfb, s)) = serial_sum(mask, fs, gb, gj) else { continue };
                        for (ti, th) in thr.iter().enumerate() {
                            let fb = sfb + th.fb;
                            let span = if th.max_t > s { th.max_t } else { s };
                            if better(fb, span, best.fb, best.span) {
                                best = BlockCell { span, fb, fs: fs as u8, conc: 0 };
                                best_caps = Some((mi, fs, ti));
                            }
                        }
                    }
                }
                if best.conc != u32::MAX {
                    let (mi, fs, ti) = best_caps.unwrap();
                    best.conc = caps.len() as u32;
                    caps.push(thresholds[mi][fs][ti].caps.clone());
                }
                cells[gb * k + gj] = best;
            }
        }
        BlockTable { k, cells, caps }
    }

    /// Append the placements of `seg` (given its chosen candidate per stage)
    /// and of every nested block.
    #[allow(clippy::too_many_arguments)]
    pub fn expand(
        &mut self,
        seg: &Segment,
        cap: usize,
        budget: u32,
        cells: &[Vec<Cell>],
        choice: &[usize],
        concurrent: bool,
        offset: u32,
        out: &mut Vec<Placed>,
    ) {
        for (i, &layer) in seg.stages.iter().enumerate() {
            let c = &cells[i][choice[i]];
            out.push(Placed { layer, gi: choice[i], t: c.t, fallback: c.fallback, concurrent, offset });
        }
        for (i, e) in seg.edges.iter().enumerate() {
            if let Edge::Block(b) = *e {
                self.expand_block(b, cap, budget, (choice[i], choice[i + 1]), concurrent, offset, out);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn expand_block(
        &mut self,
        b: usize,
        cap: usize,
        budget: u32,
        (gb, gj): (usize, usize),
        concurrent: bool,
        offset: u32,
        out: &mut Vec<Placed>,
    ) {
        self.ensure(b, cap, budget);
        let table = &self.memo[&(b, cap, budget)];
        let cell = *table.cell(gb, gj);
        debug_assert!(cell.span.is_finite());
        let caps = if cell.conc == u32::MAX { None } else { Some(table.caps[cell.conc as usize].clone()) };
        let arena = self.arena;
        let node = &arena[b];
        let ctx = self.ctx;
        let cands = ctx.candidates();
        // Concurrent chains are packed after the serial group.
        let mut next_free = offset + cands[cell.fs as usize];
        for (c, seg) in node.chains.iter().enumerate() {
            if seg.is_empty() {
                continue;
            }
            let last = seg.last();
            let conc_cap = caps.as_ref().map_or(SERIAL, |v| v[c]);
            if conc_cap != SERIAL {
                let f = conc_cap as usize;
                let cells = self.run_segment(seg, f, cands[f], Entry::Concurrent { from: node.branch });
                let mv = ctx.disjoint_move(last);
                let (_, _, lg) = best_exit(cells.last().unwrap(), |_| mv).expect("feasible chain");
                let choice = trace_back(&cells, lg);
                self.expand(seg, f, cands[f], &cells, &choice, true, next_free, out);
                next_free += cands[f];
            } else {
                let f = cell.fs as usize;
                let cells = self.run_segment(seg, f, cands[f], Entry::Serial { from: node.branch, gi: gb });
                let (_, _, lg) =
                    best_exit(cells.last().unwrap(), |g| ctx.activation_transfer(last, g, gj)).expect("feasible chain");
                let choice = trace_back(&cells, lg);
                self.expand(seg, f, cands[f], &cells, &choice, concurrent, offset, out);
            }
        }
    }
}

/// For each distinct concurrent-chain time τ, every chain in `mask` takes its
/// fewest-violation, then smallest, cap finishing within τ.
fn concurrent_thresholds(mask: u32, conc: &[Vec<(u32, f64)>], cands: &[u32], room: u32, n: usize) -> Vec<Threshold> {
    let mut taus: Vec<f64> = Vec::new();
    for (c, con) in conc.iter().enumerate() {
        if mask & (1 << c) != 0 {
            taus.extend(con.iter().map(|&(_, t)| t).filter(|t| t.is_finite()));
        }
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let mut out = Vec::new();
    'tau: for &tau in &taus {
        let mut caps = vec![SERIAL; n];
        let mut fb = 0u32;
        let mut used = 0u64;
        let mut max_t: f64 = 0.0;
        for (c, con) in conc.iter().enumerate() {
            if mask & (1 << c) == 0 {
                continue;
            }
            let mut pick: Option<usize> = None;
            for (f, &(cfb, t)) in con.iter().enumerate() {
                if t <= tau && pick.is_none_or(|p| cfb < con[p].0) {
                    pick = Some(f);
                }
            }
            let Some(f) = pick else { continue 'tau };
            caps[c] = f as u8;
            fb += con[f].0;
            used += u64::from(cands[f]);
            if con[f].1 > max_t {
                max_t = con[f].1;
            }
        }
        if used <= u64::from(room) {
            out.push(Threshold { fb, max_t, caps });
        }
    }
    out
}
