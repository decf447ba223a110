//! Iteration-time components: compute, activation transfer, gradient
//! synchronization, and GPU-sec amplification.
//!
//! All times are microseconds, sizes are bytes.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CompGraph, LayerId};
use crate::math::per_device;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkProfile {
    pub bandwidth_bytes_per_sec: f64,
    pub propagation_delay_us: f64,
}

impl NetworkProfile {
    pub fn new(bandwidth_bytes_per_sec: f64, propagation_delay_us: f64) -> Result<Self> {
        let net = NetworkProfile { bandwidth_bytes_per_sec, propagation_delay_us };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_bytes_per_sec.is_finite() && self.bandwidth_bytes_per_sec > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_bytes_per_sec
            )));
        }
        if !(self.propagation_delay_us.is_finite() && self.propagation_delay_us >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "propagation delay must be non-negative, got {}",
                self.propagation_delay_us
            )));
        }
        Ok(())
    }

    /// Gigabits per second, as network speeds are usually quoted.
    pub fn from_gbps(gbps: f64, propagation_delay_us: f64) -> Result<Self> {
        Self::new(gbps * 1e9 / 8.0, propagation_delay_us)
    }
}

/// Payload divided by bandwidth, plus the propagation delay.
pub fn comm_time(payload_bytes: f64, network: &NetworkProfile) -> f64 {
    payload_bytes * 1e6 / network.bandwidth_bytes_per_sec + network.propagation_delay_us
}

/// GPU-sec amplification of a layer that spends `time_us` on `gpus` devices,
/// relative to its single-GPU compute time.
pub fn amplification(time_us: f64, gpus: u32, comp_single_us: f64) -> f64 {
    time_us * f64::from(gpus) / comp_single_us
}

/// Number of samples whose owning device differs between a contiguous
/// split of `batch` samples over `from` devices and over `to` devices.
/// Device `d` holds samples `[d * ceil(batch/n), (d+1) * ceil(batch/n))`.
pub fn moved_samples(batch: u32, from: u32, to: u32) -> u64 {
    if from == to {
        return 0;
    }
    let ca = u64::from(per_device(batch, from));
    let cb = u64::from(per_device(batch, to));
    let total = u64::from(batch);
    let mut moved = 0;
    let mut s = 0u64;
    while s < total {
        let end_a = (s / ca + 1) * ca;
        let end_b = (s / cb + 1) * cb;
        let end = end_a.min(end_b).min(total);
        if s / ca != s / cb {
            moved += end - s;
        }
        s = end;
    }
    moved
}

/// Per-layer cost report entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_id: LayerId,
    pub g: u32,
    pub comp_us: f64,
    pub sync_us: f64,
    pub amp: f64,
}

/// Everything the planner needs to price a layer at a GPU count, with the
/// per-candidate values precomputed.
#[derive(Debug, Clone)]
pub struct CostContext<'g> {
    graph: &'g CompGraph,
    network: NetworkProfile,
    total_gpus: u32,
    candidates: Vec<u32>,
    comp: Vec<Vec<f64>>,
    sync: Vec<Vec<f64>>,
    moved: Vec<Vec<u64>>,
}

/// Powers of two up to `total_gpus`.
pub fn power_of_two_candidates(total_gpus: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut g = 1u32;
    while g <= total_gpus {
        out.push(g);
        match g.checked_mul(2) {
            Some(n) => g = n,
            None => break,
        }
    }
    out
}

impl<'g> CostContext<'g> {
    pub fn new(graph: &'g CompGraph, network: NetworkProfile, total_gpus: u32) -> Result<Self> {
        Self::with_candidates(graph, network, total_gpus, power_of_two_candidates(total_gpus))
    }

    pub fn with_candidates(
        graph: &'g CompGraph,
        network: NetworkProfile,
        total_gpus: u32,
        candidates: Vec<u32>,
    ) -> Result<Self> {
        network.validate()?;
        if total_gpus == 0 {
            return Err(Error::InvalidParameter("total GPU count must be at least 1".into()));
        }
        if candidates.first() != Some(&1) {
            return Err(Error::InvalidParameter("candidate GPU counts must start at 1".into()));
        }
        if candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("candidate GPU counts must be strictly ascending".into()));
        }
        if *candidates.last().unwrap() > total_gpus {
            return Err(Error::InvalidParameter(format!(
                "candidate {} exceeds the {total_gpus} available GPUs",
                candidates.last().unwrap()
            )));
        }
        if candidates.len() > u8::MAX as usize {
            return Err(Error::InvalidParameter("too many candidate GPU counts".into()));
        }

        let mut comp = Vec::with_capacity(graph.len());
        let mut sync = Vec::with_capacity(graph.len());
        for (idx, layer) in graph.layers().iter().enumerate() {
            let mut c = Vec::with_capacity(candidates.len());
            let mut s = Vec::with_capacity(candidates.len());
            for &g in &candidates {
                let (f, b) = graph.timing(idx, g)?;
                c.push(f + b);
                s.push(sync_time_for(layer.params_bytes, g, &network));
            }
            comp.push(c);
            sync.push(s);
        }
        let batch = graph.global_batch();
        let moved =
            candidates.iter().map(|&a| candidates.iter().map(|&b| moved_samples(batch, a, b)).collect()).collect();
        Ok(CostContext { graph, network, total_gpus, candidates, comp, sync, moved })
    }

    pub fn graph(&self) -> &'g CompGraph {
        self.graph
    }

    pub fn network(&self) -> &NetworkProfile {
        &self.network
    }

    pub fn total_gpus(&self) -> u32 {
        self.total_gpus
    }

    pub fn candidates(&self) -> &[u32] {
        &self.candidates
    }

    pub fn candidate_index(&self, g: u32) -> Option<usize> {
        self.candidates.binary_search(&g).ok()
    }

    /// comp at candidate index `gi` for layer index `layer`.
    #[inline]
    pub fn comp(&self, layer: usize, gi: usize) -> f64 {
        self.comp[layer][gi]
    }

    #[inline]
    pub fn sync(&self, layer: usize, gi: usize) -> f64 {
        self.sync[layer][gi]
    }

    /// Single-GPU compute time; zero for virtual layers.
    #[inline]
    pub fn comp_single(&self, layer: usize) -> f64 {
        self.comp[layer][0]
    }

    /// Activation plus gradient transfer when layer `from`'s output moves from
    /// `gi` to `hi` devices. Zero when nothing changes hands.
    #[inline]
    pub fn activation_transfer(&self, from: usize, gi: usize, hi: usize) -> f64 {
        let samples = self.moved[gi][hi];
        let act = self.graph.layers()[from].activation_bytes_per_sample;
        if samples == 0 || act == 0 {
            return 0.0;
        }
        2.0 * comm_time(samples as f64 * act as f64, &self.network)
    }

    /// Cost of shipping layer `from`'s whole activation (all samples) to a
    /// disjoint GPU set and back for the gradients.
    #[inline]
    pub fn disjoint_move(&self, from: usize) -> f64 {
        let act = self.graph.layers()[from].activation_bytes_per_sample;
        if act == 0 {
            return 0.0;
        }
        2.0 * comm_time(f64::from(self.graph.global_batch()) * act as f64, &self.network)
    }

    /// Whether a layer spending `time_us` at candidate `gi` stays within
    /// `amp_limit`. Layers with zero compute are exempt.
    #[inline]
    pub fn amp_ok(&self, layer: usize, gi: usize, time_us: f64, amp_limit: f64) -> bool {
        let c1 = self.comp_single(layer);
        c1 <= 0.0 || amplification(time_us, self.candidates[gi], c1) <= amp_limit
    }

    /// Amplification for reporting; zero for exempt layers.
    pub fn amp(&self, layer: usize, gi: usize, time_us: f64) -> f64 {
        let c1 = self.comp_single(layer);
        if c1 <= 0.0 {
            0.0
        } else {
            amplification(time_us, self.candidates[gi], c1)
        }
    }

    /// Public id-based forms of the cost functions.
    pub fn comp_time(&self, layer: LayerId, g: u32) -> Result<f64> {
        let (li, gi) = self.locate(layer, g)?;
        Ok(self.comp(li, gi))
    }

    pub fn sync_time(&self, layer: LayerId, g: u32) -> Result<f64> {
        let (li, gi) = self.locate(layer, g)?;
        Ok(self.sync(li, gi))
    }

    pub fn activation_transfer_time(&self, from: LayerId, g: u32, h: u32) -> Result<f64> {
        let (li, gi) = self.locate(from, g)?;
        let hi = self.candidate_index(h).ok_or_else(|| not_candidate(h))?;
        Ok(self.activation_transfer(li, gi, hi))
    }

    fn locate(&self, layer: LayerId, g: u32) -> Result<(usize, usize)> {
        let li = self.graph.index_of(layer).ok_or(Error::MissingLayer(layer))?;
        let gi = self.candidate_index(g).ok_or_else(|| not_candidate(g))?;
        Ok((li, gi))
    }
}

fn not_candidate(g: u32) -> Error {
    Error::InvalidParameter(format!("{g} is not a candidate GPU count"))
}

/// Ring all-reduce of `params_bytes` over `gpus` devices:
/// `comm_time(2 * N * (g - 1) / g)`. Zero without replication or parameters.
pub fn sync_time_for(params_bytes: u64, gpus: u32, network: &NetworkProfile) -> f64 {
    if gpus <= 1 || params_bytes == 0 {
        return 0.0;
    }
    let g = f64::from(gpus);
    comm_time(2.0 * params_bytes as f64 * (g - 1.0) / g, network)
}
