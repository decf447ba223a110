//! Time-to-accuracy estimates for weak, strong and batch-optimal scaling.
//!
//! Iteration time is the data-parallel estimate: every layer on all GPUs at
//! the ceiling share of the global batch, plus a ring all-reduce of its
//! parameters. Steps to the target error come from a sample-efficiency curve.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cost::{sync_time_for, NetworkProfile};
use crate::error::{Error, Result};
use crate::graph::CompGraph;
use crate::math::{ceil, exp, ln, per_device, sqrt};

/// Steps needed to reach `target_error` at a range of global batch sizes,
/// interpolated linearly in log-log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEfficiencyCurve {
    pub target_error: f64,
    points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub batch: u32,
    pub steps: f64,
}

impl SampleEfficiencyCurve {
    pub fn new(target_error: f64, points: Vec<CurvePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidCurve("no points".into()));
        }
        for p in &points {
            if p.batch == 0 || !p.steps.is_finite() || p.steps <= 0.0 {
                return Err(Error::InvalidCurve(format!("invalid point (batch {}, steps {})", p.batch, p.steps)));
            }
        }
        for w in points.windows(2) {
            if w[1].batch <= w[0].batch {
                return Err(Error::InvalidCurve(format!("batch sizes not increasing at {}", w[1].batch)));
            }
            if w[1].steps > w[0].steps {
                return Err(Error::InvalidCurve(format!(
                    "steps increase between batch {} and {}",
                    w[0].batch, w[1].batch
                )));
            }
        }
        Ok(SampleEfficiencyCurve { target_error, points })
    }

    /// `steps(B) = ceil(a / B + c)` sampled at powers of two in
    /// `[min_batch, max_batch]`. Critical batch size is about `a / c`.
    pub fn synthetic_saturating(a: f64, c: f64, min_batch: u32, max_batch: u32) -> Result<Self> {
        if !(a > 0.0 && c > 0.0) || min_batch == 0 || max_batch < min_batch {
            return Err(Error::InvalidCurve("synthetic curve needs a, c > 0 and 1 ≤ min ≤ max".into()));
        }
        let mut points = Vec::new();
        let mut b = min_batch.next_power_of_two();
        while b <= max_batch {
            points.push(CurvePoint { batch: b, steps: ceil(a / f64::from(b) + c) });
            match b.checked_mul(2) {
                Some(n) => b = n,
                None => break,
            }
        }
        Self::new(0.0, points)
    }

    /// The curve shipped for tests and examples: critical batch 2048, domain
    /// 16 to 65536.
    pub fn default_synthetic() -> Self {
        Self::synthetic_saturating(2048.0 * 2000.0, 2000.0, 16, 65_536).expect("valid constants")
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn min_batch(&self) -> u32 {
        self.points[0].batch
    }

    pub fn max_batch(&self) -> u32 {
        self.points[self.points.len() - 1].batch
    }

    pub fn contains(&self, batch: u32) -> bool {
        (self.min_batch()..=self.max_batch()).contains(&batch)
    }

    pub fn steps(&self, batch: u32) -> Result<f64> {
        if !self.contains(batch) {
            return Err(Error::InvalidCurve(format!(
                "batch {batch} outside the curve domain [{}, {}]",
                self.min_batch(),
                self.max_batch()
            )));
        }
        let i = self.points.partition_point(|p| p.batch < batch);
        let hi = self.points[i];
        if hi.batch == batch {
            return Ok(hi.steps);
        }
        let lo = self.points[i - 1];
        let (x0, x1, x) = (ln(f64::from(lo.batch)), ln(f64::from(hi.batch)), ln(f64::from(batch)));
        let w = (x - x0) / (x1 - x0);
        Ok(exp(ln(lo.steps) + w * (ln(hi.steps) - ln(lo.steps))))
    }

    /// Grid batches plus the rounded geometric midpoint of each neighbour pair.
    pub fn search_grid(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(2 * self.points.len());
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                let lo = f64::from(self.points[i - 1].batch);
                let mid = libm::round(sqrt(lo * f64::from(p.batch))) as u32;
                out.push(mid);
            }
            out.push(p.batch);
        }
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Weak,
    Strong,
    BatchOptimal,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Weak, Strategy::Strong, Strategy::BatchOptimal];

    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "weak" => Ok(Strategy::Weak),
            "strong" => Ok(Strategy::Strong),
            "batch_optimal" | "batch-optimal" => Ok(Strategy::BatchOptimal),
            other => Err(Error::InvalidParameter(format!("unknown strategy `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Weak => "weak",
            Strategy::Strong => "strong",
            Strategy::BatchOptimal => "batch_optimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingEstimate {
    pub strategy: Strategy,
    pub n_gpus: u32,
    pub chosen_global_batch: u32,
    pub per_gpu_batch: u32,
    pub iteration_time_us: f64,
    pub steps: f64,
    pub time_to_accuracy_s: f64,
    pub speedup_vs_1gpu: f64,
}

/// Data-parallel iteration time of `graph` on `n_gpus` at `global_batch`.
pub fn iteration_time(graph: &CompGraph, n_gpus: u32, global_batch: u32, network: &NetworkProfile) -> Result<f64> {
    if n_gpus == 0 || global_batch == 0 {
        return Err(Error::InvalidParameter("GPU count and global batch must be at least 1".into()));
    }
    let b = per_device(global_batch, n_gpus);
    let mut comp = 0.0;
    let mut sync = 0.0;
    for (i, l) in graph.layers().iter().enumerate() {
        let (f, bw) = graph.timing_at_batch(i, b)?;
        comp += f + bw;
        sync += sync_time_for(l.params_bytes, n_gpus, network);
    }
    Ok(comp + sync)
}

fn evaluate(
    graph: &CompGraph,
    curve: &SampleEfficiencyCurve,
    n: u32,
    batch: u32,
    network: &NetworkProfile,
) -> Result<(f64, f64, f64)> {
    let iter = iteration_time(graph, n, batch, network)?;
    let steps = curve.steps(batch)?;
    Ok((iter, steps, steps * iter / 1e6))
}

/// Estimate one strategy at `n_gpus`; speedup is against one GPU at
/// `base_batch`.
pub fn estimate(
    strategy: Strategy,
    graph: &CompGraph,
    curve: &SampleEfficiencyCurve,
    n_gpus: u32,
    network: &NetworkProfile,
    base_batch: u32,
) -> Result<ScalingEstimate> {
    if n_gpus == 0 || base_batch == 0 {
        return Err(Error::InvalidParameter("GPU count and base batch must be at least 1".into()));
    }
    let (_, _, baseline) = evaluate(graph, curve, 1, base_batch, network)?;
    let weak_batch =
        base_batch.checked_mul(n_gpus).ok_or_else(|| Error::InvalidParameter("weak-scaling batch overflows".into()))?;
    let (batch, (iter, steps, tta)) = match strategy {
        Strategy::Weak => (weak_batch, evaluate(graph, curve, n_gpus, weak_batch, network)?),
        Strategy::Strong => (base_batch, evaluate(graph, curve, n_gpus, base_batch, network)?),
        Strategy::BatchOptimal => {
            let mut cands = curve.search_grid();
            cands.push(base_batch);
            cands.push(weak_batch);
            cands.sort_unstable();
            cands.dedup();
            let mut best: Option<(u32, (f64, f64, f64))> = None;
            for b in cands.into_iter().filter(|&b| curve.contains(b)) {
                let e = evaluate(graph, curve, n_gpus, b, network)?;
                if best.is_none_or(|(_, (_, _, t))| e.2 < t) {
                    best = Some((b, e));
                }
            }
            best.ok_or_else(|| Error::InvalidCurve("no batch size of the curve domain is usable".into()))?
        }
    };
    Ok(ScalingEstimate {
        strategy,
        n_gpus,
        chosen_global_batch: batch,
        per_gpu_batch: per_device(batch, n_gpus),
        iteration_time_us: iter,
        steps,
        time_to_accuracy_s: tta,
        speedup_vs_1gpu: baseline / tta,
    })
}

/// `estimate` over several GPU counts.
pub fn speedup_curve(
    strategy: Strategy,
    graph: &CompGraph,
    curve: &SampleEfficiencyCurve,
    gpu_counts: &[u32],
    network: &NetworkProfile,
    base_batch: u32,
) -> Result<Vec<ScalingEstimate>> {
    gpu_counts.iter().map(|&n| estimate(strategy, graph, curve, n, network, base_batch)).collect()
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use crate::graph::{Layer, LayerProfile, ModelMeta, ProfileEntry};
    use alloc::vec;
    use proptest::prelude::{prop_assert, proptest};

    fn two_layer() -> CompGraph {
        let mut a = Layer::new(0, "a", "conv");
        a.params_bytes = 1_000_000;
        let mut b = Layer::new(1, "b", "fc");
        b.params_bytes = 3_000_000;
        b.predecessors = vec![0];
        let p = |id, k: f64| {
            LayerProfile::from_entries(
                id,
                [1u32, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024].map(|x| ProfileEntry {
                    batch: x,
                    fwd_us: k * f64::from(x),
                    bwd_us: 2.0 * k * f64::from(x),
                }),
            )
        };
        CompGraph::new(ModelMeta::default(), 256, vec![a, b], [p(0, 1.0), p(1, 0.5)]).unwrap()
    }

    fn curve() -> SampleEfficiencyCurve {
        SampleEfficiencyCurve::synthetic_saturating(64.0 * 100.0, 100.0, 1, 1024).unwrap()
    }

    #[test]
    fn one_gpu_is_compute_only() {
        let g = two_layer();
        let net = NetworkProfile::from_gbps(10.0, 5.0).unwrap();
        // 256 * (3 * 1.0 + 3 * 0.5)
        assert_eq!(iteration_time(&g, 1, 256, &net).unwrap(), 1152.0);
    }

    #[test]
    fn two_gpus_hand_computed() {
        let g = two_layer();
        let net = NetworkProfile::new(1e9, 0.0).unwrap();
        // comp at 128 per device: 128 * 4.5 = 576; sync: 2*N*(1/2) bytes at 1 GB/s.
        let sync = 1_000_000.0 * 1e6 / 1e9 + 3_000_000.0 * 1e6 / 1e9;
        assert_eq!(iteration_time(&g, 2, 256, &net).unwrap(), 576.0 + sync);
    }

    #[test]
    fn curve_interpolates_in_log_space() {
        let c = SampleEfficiencyCurve::new(
            0.1,
            vec![CurvePoint { batch: 16, steps: 1000.0 }, CurvePoint { batch: 64, steps: 250.0 }],
        )
        .unwrap();
        // log-log line with slope -1 passes through (32, 500).
        assert!((c.steps(32).unwrap() - 500.0).abs() < 1e-9);
        assert!(c.steps(8).is_err());
        assert!(c.steps(65).is_err());
    }

    #[test]
    fn curve_validation() {
        let up = vec![CurvePoint { batch: 16, steps: 10.0 }, CurvePoint { batch: 32, steps: 20.0 }];
        assert!(SampleEfficiencyCurve::new(0.1, up).is_err());
        let dup = vec![CurvePoint { batch: 16, steps: 10.0 }, CurvePoint { batch: 16, steps: 5.0 }];
        assert!(SampleEfficiencyCurve::new(0.1, dup).is_err());
        assert!(SampleEfficiencyCurve::new(0.1, Vec::new()).is_err());
    }

    #[test]
    fn single_gpu_strategies_coincide_at_the_optimal_base() {
        let g = two_layer();
        let net = NetworkProfile::from_gbps(100.0, 1.0).unwrap();
        let c = curve();
        let opt = estimate(Strategy::BatchOptimal, &g, &c, 1, &net, 64).unwrap();
        let base = opt.chosen_global_batch;
        for s in Strategy::ALL {
            let e = estimate(s, &g, &c, 1, &net, base).unwrap();
            assert_eq!(e.speedup_vs_1gpu, 1.0);
            assert_eq!(e.chosen_global_batch, base);
        }
    }

    #[test]
    fn strong_scaling_keeps_steps() {
        let g = two_layer();
        let net = NetworkProfile::from_gbps(100.0, 1.0).unwrap();
        let c = curve();
        let rows = speedup_curve(Strategy::Strong, &g, &c, &[1, 2, 4, 8], &net, 64).unwrap();
        assert!(rows.iter().all(|r| r.steps == c.steps(64).unwrap() && r.chosen_global_batch == 64));
        let weak = speedup_curve(Strategy::Weak, &g, &c, &[1, 2, 4, 8], &net, 64).unwrap();
        assert!(weak.iter().all(|r| r.per_gpu_batch == 64));
    }

    #[test]
    fn exhausted_domain_is_an_error() {
        let g = two_layer();
        let net = NetworkProfile::from_gbps(100.0, 1.0).unwrap();
        assert!(estimate(Strategy::Weak, &g, &curve(), 64, &net, 64).is_err());
    }

    proptest! {
        #[test]
        fn batch_optimal_dominates(n in 1u32..=16, base_exp in 2u32..=6, gbps in 1.0f64..1000.0) {
            let g = two_layer();
            let net = NetworkProfile::from_gbps(gbps, 2.0).unwrap();
            let c = curve();
            let base = 1 << base_exp;
            let o = estimate(Strategy::BatchOptimal, &g, &c, n, &net, base).unwrap();
            let s = estimate(Strategy::Strong, &g, &c, n, &net, base).unwrap();
            prop_assert!(o.time_to_accuracy_s <= s.time_to_accuracy_s);
            if let Ok(w) = estimate(Strategy::Weak, &g, &c, n, &net, base) {
                prop_assert!(o.time_to_accuracy_s <= w.time_to_accuracy_s);
            }
        }

        #[test]
        fn faster_networks_never_slow_iterations(n in 1u32..=64, b in 1u32..=1024, gbps in 1.0f64..100.0) {
            let g = two_layer();
            let slow = NetworkProfile::from_gbps(gbps, 2.0).unwrap();
            let fast = NetworkProfile::from_gbps(gbps * 2.0, 2.0).unwrap();
            prop_assert!(iteration_time(&g, n, b, &fast).unwrap() <= iteration_time(&g, n, b, &slow).unwrap());
        }
    }
}
