//! Pairwise slowdown of overlapping foreground and background ops.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Intensity, OpKind};
use crate::error::{Error, Result};

/// Class of an op for interference lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpClass {
    Compute { intensity: Intensity, long: bool },
    Comm,
}

impl OpClass {
    pub fn of(kind: OpKind, intensity: Intensity, ticks: u64, long_ticks: u64) -> OpClass {
        match kind {
            OpKind::Compute => OpClass::Compute { intensity, long: ticks >= long_ticks },
            OpKind::AllReduce | OpKind::Transfer => OpClass::Comm,
        }
    }

    pub fn label(self) -> &'static str {
        HI_CLASSES[self.hi_index()]
    }

    pub(crate) fn hi_index(self) -> usize {
        match self {
            OpClass::Compute { intensity: Intensity::Low, long: false } => 0,
            OpClass::Compute { intensity: Intensity::Low, long: true } => 1,
            OpClass::Compute { intensity: Intensity::High, long: false } => 2,
            OpClass::Compute { intensity: Intensity::High, long: true } => 3,
            OpClass::Comm => 4,
        }
    }

    /// Background jobs run no collectives; a comm op maps to the
    /// low-intensity short bucket.
    pub(crate) fn lo_index(self) -> usize {
        match self {
            OpClass::Comm => 0,
            c => c.hi_index(),
        }
    }
}

/// Row labels (high-priority op classes).
pub const HI_CLASSES: [&str; 5] = ["low-short", "low-long", "high-short", "high-long", "comm"];
/// Column labels (low-priority op classes).
pub const LO_CLASSES: [&str; 4] = ["low-short", "low-long", "high-short", "high-long"];

/// Slowdown factors by (high-priority class, low-priority class). Labels may
/// come in any order; they are stored canonically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceTable {
    pub hi_classes: Vec<String>,
    pub lo_classes: Vec<String>,
    pub factors: Vec<Vec<f64>>,
}

impl Default for InterferenceTable {
    /// Synthetic table: short foreground ops suffer most under long
    /// background ops, high-intensity pairs contend more, and collectives
    /// are the most sensitive.
    fn default() -> Self {
        let factors = [
            [1.05, 1.20, 1.15, 1.35],
            [1.02, 1.08, 1.06, 1.15],
            [1.08, 1.25, 1.20, 1.45],
            [1.03, 1.10, 1.08, 1.20],
            [1.30, 1.80, 1.70, 2.20],
        ];
        InterferenceTable {
            hi_classes: HI_CLASSES.iter().map(|s| s.to_string()).collect(),
            lo_classes: LO_CLASSES.iter().map(|s| s.to_string()).collect(),
            factors: factors.iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl InterferenceTable {
    pub fn new(hi_classes: Vec<String>, lo_classes: Vec<String>, factors: Vec<Vec<f64>>) -> Result<Self> {
        let t = InterferenceTable { hi_classes, lo_classes, factors };
        t.canonical()?;
        Ok(t)
    }

    /// Every factor 1: collocation without interference.
    pub fn neutral() -> Self {
        let mut t = Self::default();
        for row in &mut t.factors {
            row.fill(1.0);
        }
        t
    }

    /// Factors in milli-units, in `HI_CLASSES` × `LO_CLASSES` order.
    pub(crate) fn canonical(&self) -> Result<[[u64; 4]; 5]> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("interference table: {m}")));
        let hi = permutation(&self.hi_classes, &HI_CLASSES)?;
        let lo = permutation(&self.lo_classes, &LO_CLASSES)?;
        if self.factors.len() != hi.len() || self.factors.iter().any(|r| r.len() != lo.len()) {
            return bad(format!("expected a {}x{} matrix", hi.len(), lo.len()));
        }
        let mut out = [[1000u64; 4]; 5];
        for (r, row) in self.factors.iter().enumerate() {
            for (c, &f) in row.iter().enumerate() {
                if !(f.is_finite() && f >= 1.0) {
                    return bad(format!(
                        "factor {f} at ({}, {}) must be finite and at least 1",
                        self.hi_classes[r], self.lo_classes[c]
                    ));
                }
                out[hi[r]][lo[c]] = libm::round(f * 1000.0) as u64;
            }
        }
        Ok(out)
    }

    pub fn factor(&self, hi: OpClass, lo: OpClass) -> Result<f64> {
        Ok(self.canonical()?[hi.hi_index()][lo.lo_index()] as f64 / 1000.0)
    }
}

/// Canonical index of each given label.
fn permutation(given: &[String], canonical: &[&str]) -> Result<Vec<usize>> {
    let mut seen = alloc::vec![false; canonical.len()];
    let mut out = Vec::with_capacity(given.len());
    for g in given {
        let i = canonical.iter().position(|c| c == g).ok_or_else(|| {
            Error::InvalidParameter(format!("interference table: unknown class `{g}` (expected {canonical:?})"))
        })?;
        if seen[i] {
            return Err(Error::InvalidParameter(format!("interference table: duplicate class `{g}`")));
        }
        seen[i] = true;
        out.push(i);
    }
    if out.len() != canonical.len() {
        return Err(Error::InvalidParameter(format!("interference table: expected classes {canonical:?}")));
    }
    Ok(out)
}
