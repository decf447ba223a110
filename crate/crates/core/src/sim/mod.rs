//! Discrete-event model of a GPU cluster running one distributed foreground
//! job next to per-GPU background jobs.
//!
//! Time advances in integer ticks of 0.1 µs; every duration is rounded up to
//! whole ticks, so runs are exactly reproducible.
//!
//! Each GPU has two task streams (foreground, background). A host thread per
//! task launches its stream in groups, paying a fixed launch overhead per
//! group, and keeps at most `launch_pace_limit` groups outstanding. Launched
//! groups enter a FIFO shared by both tasks; the device admits groups from
//! the FIFO head into `hw_slots` hardware queues. The op at the head of an
//! admitted stream can claim execution contexts. Foreground ops are preferred
//! when priority scheduling is on, otherwise the earliest admitted group
//! wins; dispatch never skips the first candidate. Ops at a per-device batch
//! of at least `wide_batch_threshold` occupy every context. Running ops are
//! never preempted.
//!
//! Collectives (all-reduce, activation transfers) become claimable once every
//! participant reached them and progress once every participant holds a
//! context, at the slowest participant's rate.
//!
//! A foreground op overlapping background work on the same GPU runs at
//! `1 / factor` speed, and so does the background op, where `factor` comes
//! from the [`InterferenceTable`] entry of the two op classes.
//!
//! While a sensitive foreground op is pending or running on a GPU, no
//! background op starts there, and the sensitive op itself only claims a
//! context once running background ops have drained.

mod engine;
mod interference;
mod scenario;
mod timeline;

#[cfg(test)]
mod tests;

pub use engine::{feedback_update, simulate, EventKind, OpExec, SensitivitySet, SimTrace, TraceEvent};
pub use interference::{InterferenceTable, OpClass, HI_CLASSES, LO_CLASSES};
pub use scenario::{
    background_throughput, dp_plan, heavy_collocation_workload, pareto_sweep, partition_baseline, run_plan,
    run_scenario, HeavyWorkload, ParetoKind, ParetoPoint, Scenario, ScenarioResult, SweepSpec,
};
pub use timeline::{compile_timeline, BackgroundJob, Timeline};

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LayerId;
use crate::math::ceil;

/// Ticks per microsecond.
pub const TICKS_PER_US: u64 = 10;

/// Round a duration in µs up to whole ticks.
pub fn to_ticks(us: f64) -> u64 {
    if us <= 0.0 {
        0
    } else {
        ceil(us * TICKS_PER_US as f64) as u64
    }
}

pub fn ticks_to_us(ticks: u64) -> f64 {
    ticks as f64 / TICKS_PER_US as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Compute,
    AllReduce,
    Transfer,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Compute => "compute",
            OpKind::AllReduce => "allreduce",
            OpKind::Transfer => "transfer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Forward,
    Backward,
}

/// Compute intensity bucket of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Low,
    High,
}

impl Intensity {
    /// Convolutions and dense layers are arithmetic-heavy; everything else
    /// (pooling, concatenation, normalization, …) is memory-bound.
    pub fn of_kind(kind: &str) -> Intensity {
        match kind {
            "conv" | "fc" | "linear" | "dense" | "matmul" => Intensity::High,
            _ => Intensity::Low,
        }
    }
}

/// One operation of a task stream, as compiled for one GPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    /// Position within the per-GPU iteration template.
    pub op_id: u32,
    /// 0 for the foreground job, 1 for the background job.
    pub task_id: u32,
    pub gpu: u32,
    pub kind: OpKind,
    pub layer_id: LayerId,
    pub phase: Phase,
    pub isolated_duration_us: f64,
    pub stream_priority: Priority,
    /// Launch group within the iteration; reassigned when groups are formed.
    pub group_id: u32,
    pub sensitive: bool,
    pub intensity: Intensity,
    pub per_device_batch: u32,
    /// Bytes moved (transfers) or reduced (all-reduce).
    pub payload_bytes: u64,
    /// Collective id within the iteration, shared by all participants.
    pub collective: Option<u32>,
}

impl OpRecord {
    pub fn ticks(&self) -> u64 {
        to_ticks(self.isolated_duration_us)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Maximum outstanding launch groups per task; 0 means unbounded (up to
    /// the device queue capacity).
    pub launch_pace_limit: u32,
    /// Maximum ops per background launch group.
    pub graph_split_size: u32,
    /// Ops per foreground launch group.
    pub fg_group_size: u32,
    pub bg_batch_size: u32,
    /// Measured/isolated ratio above which a foreground op becomes sensitive.
    pub slowdown_ban_threshold: f64,
    pub priority_scheduling_enabled: bool,
    /// Flag ops online as soon as a slowdown is observed.
    pub feedback_enabled: bool,
    pub rng_seed: u64,
    pub contexts: u32,
    pub hw_slots: u32,
    pub device_queue_capacity: u32,
    pub launch_overhead_us: f64,
    /// Per-device batch from which an op occupies all contexts.
    pub wide_batch_threshold: u32,
    /// Isolated duration from which an op counts as long.
    pub long_op_us: f64,
    pub warmup_iterations: u32,
    /// Upper bound on the random start delay of background hosts.
    pub bg_start_jitter_us: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            launch_pace_limit: 2,
            graph_split_size: 32,
            fg_group_size: 8,
            bg_batch_size: 8,
            slowdown_ban_threshold: 1.5,
            priority_scheduling_enabled: true,
            feedback_enabled: true,
            rng_seed: crate::synth::DEFAULT_SEED,
            contexts: 2,
            hw_slots: 4,
            device_queue_capacity: 64,
            launch_overhead_us: 5.0,
            wide_batch_threshold: 16,
            long_op_us: 100.0,
            warmup_iterations: 2,
            bg_start_jitter_us: 100.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("sim config: {what}")));
        if self.slowdown_ban_threshold.is_nan() || self.slowdown_ban_threshold <= 1.0 {
            return bad("slowdown_ban_threshold must exceed 1");
        }
        if self.graph_split_size == 0 || self.fg_group_size == 0 {
            return bad("launch group sizes must be at least 1");
        }
        if self.bg_batch_size == 0 {
            return bad("bg_batch_size must be at least 1");
        }
        if self.contexts == 0 || self.hw_slots == 0 || self.device_queue_capacity == 0 {
            return bad("contexts, hw_slots and device_queue_capacity must be at least 1");
        }
        if self.wide_batch_threshold == 0 {
            return bad("wide_batch_threshold must be at least 1");
        }
        for (name, v) in [
            ("launch_overhead_us", self.launch_overhead_us),
            ("long_op_us", self.long_op_us),
            ("bg_start_jitter_us", self.bg_start_jitter_us),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("sim config: {name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub iterations: u32,
    pub fg_iteration_time_us_mean: f64,
    pub fg_iteration_time_us_p99: f64,
    pub fg_throughput_samples_per_s: f64,
    pub bg_throughput_samples_per_s: f64,
    pub cluster_total_throughput: f64,
    /// Fraction of the measured window each GPU executed at least one op.
    pub gpu_utilization: Vec<f64>,
    /// Foreground iteration time over the foreground-only run.
    pub qos_degradation: f64,
    pub isolated_fg_iteration_time_us: f64,
    pub window_us: f64,
    /// Foreground ops flagged sensitive at the end of the run.
    pub sensitive_ops: u32,
}
