//! Dynamic program over a chain of stages.
//!
//! A stage is a layer; consecutive stages are joined either directly (the
//! transition costs an activation redistribution) or through a reduced
//! branch/join block whose cost comes from a precomputed table.

use alloc::vec;
use alloc::vec::Vec;

use super::reduce::BlockTable;
use crate::cost::CostContext;

pub(crate) const NONE: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Cell {
    /// Shortest cumulative time ending at this (stage, g).
    pub s: f64,
    /// Time attributed to this stage on that path (incoming transfer + comp + sync).
    pub t: f64,
    /// Number of amplification violations on that path.
    pub fb: u32,
    /// Predecessor candidate index.
    pub prev: u8,
    /// The transition into this cell violated the amplification limit.
    pub fallback: bool,
}

impl Cell {
    pub const INFEASIBLE: Cell = Cell { s: f64::INFINITY, t: f64::INFINITY, fb: u32::MAX, prev: NONE, fallback: false };

    pub fn feasible(&self) -> bool {
        self.s.is_finite()
    }
}

/// Lexicographic (violations, time) comparison; strict so earlier
/// candidates win ties.
#[inline]
pub(crate) fn better(fb: u32, s: f64, than_fb: u32, than_s: f64) -> bool {
    fb < than_fb || (fb == than_fb && s < than_s)
}

#[derive(Debug, Clone)]
pub(crate) enum Edge {
    Direct,
    Block(usize),
}

/// A chain of stages (layer indices) and the edges between them.
#[derive(Debug, Clone, Default)]
pub(crate) struct Segment {
    pub stages: Vec<usize>,
    pub edges: Vec<Edge>,
}

impl Segment {
    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn last(&self) -> usize {
        *self.stages.last().expect("non-empty segment")
    }
}

/// How the first stage is entered.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Entry {
    /// No incoming transfer; optionally only one candidate enabled.
    Free { fixed: Option<usize> },
    /// From layer `from` running on candidate `gi`, redistributing samples.
    Serial { from: usize, gi: usize },
    /// From layer `from` onto a disjoint GPU set (all samples move).
    Concurrent { from: usize },
}

pub(crate) struct Params<'a, 'g> {
    pub ctx: &'a CostContext<'g>,
    pub amp_limit: f64,
    /// Highest candidate index allowed.
    pub cap: usize,
}

/// Populate the S/T tables for `seg`. `blocks` supplies the tables of the
/// block edges, already computed for the same cap.
pub(crate) fn run(seg: &Segment, p: &Params<'_, '_>, entry: Entry, blocks: &[Option<&BlockTable>]) -> Vec<Vec<Cell>> {
    let ctx = p.ctx;
    let k = p.cap + 1;
    let mut cells = vec![vec![Cell::INFEASIBLE; k]; seg.stages.len()];

    let l0 = seg.stages[0];
    for g in 0..k {
        let tr = match entry {
            Entry::Free { fixed } => {
                if fixed.is_some_and(|f| f != g) {
                    continue;
                }
                0.0
            }
            Entry::Serial { from, gi } => ctx.activation_transfer(from, gi, g),
            Entry::Concurrent { from } => ctx.disjoint_move(from),
        };
        let comp = ctx.comp(l0, g);
        let sync = ctx.sync(l0, g);
        let t = (tr + comp) + sync;
        let s = ((0.0 + tr) + comp) + sync;
        let adm = ctx.amp_ok(l0, g, t, p.amp_limit);
        cells[0][g] = Cell { s, t, fb: u32::from(!adm), prev: NONE, fallback: !adm };
    }

    for i in 1..seg.stages.len() {
        let li = seg.stages[i];
        let lp = seg.stages[i - 1];
        let table = match seg.edges[i - 1] {
            Edge::Direct => None,
            Edge::Block(_) => Some(blocks[i - 1].expect("block table prepared")),
        };
        let (before, after) = cells.split_at_mut(i);
        let prev_row = &before[i - 1];
        let row = &mut after[0];
        for g in 0..k {
            let comp = ctx.comp(li, g);
            let sync = ctx.sync(li, g);
            let mut best = Cell::INFEASIBLE;
            for (h, prev) in prev_row.iter().enumerate() {
                if !prev.feasible() {
                    continue;
                }
                let (tr, entry_t, extra_fb) = match table {
                    None => {
                        let tr = ctx.activation_transfer(lp, h, g);
                        (tr, tr, 0)
                    }
                    Some(tb) => {
                        let c = tb.cell(h, g);
                        if !c.span.is_finite() {
                            continue;
                        }
                        (c.span, 0.0, c.fb)
                    }
                };
                let t = (entry_t + comp) + sync;
                let adm = ctx.amp_ok(li, g, t, p.amp_limit);
                let s = ((prev.s + tr) + comp) + sync;
                let fb = prev.fb + extra_fb + u32::from(!adm);
                if better(fb, s, best.fb, best.s) {
                    best = Cell { s, t, fb, prev: h as u8, fallback: !adm };
                }
            }
            row[g] = best;
        }
    }
    cells
}

/// Best exit from the last stage: returns (violations, time, last candidate).
pub(crate) fn best_exit(last_row: &[Cell], exit: impl Fn(usize) -> f64) -> Option<(u32, f64, usize)> {
    let mut best: Option<(u32, f64, usize)> = None;
    for (g, c) in last_row.iter().enumerate() {
        if !c.feasible() {
            continue;
        }
        let t = c.s + exit(g);
        if best.is_none_or(|(bf, bt, _)| better(c.fb, t, bf, bt)) {
            best = Some((c.fb, t, g));
        }
    }
    best
}

/// Walk the predecessor pointers back from `last_g`; returns the candidate
/// index per stage.
pub(crate) fn trace_back(cells: &[Vec<Cell>], last_g: usize) -> Vec<usize> {
    let mut out = vec![0; cells.len()];
    let mut g = last_g;
    for i in (0..cells.len()).rev() {
        out[i] = g;
        let p = cells[i][g].prev;
        if i > 0 {
            debug_assert_ne!(p, NONE);
            g = p as usize;
        }
    }
    out
}
