//! Event loop.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::interference::OpClass;
use super::{ticks_to_us, to_ticks, InterferenceTable, OpKind, OpRecord, SimConfig, SimMetrics, Timeline};
use crate::error::{Error, Result};

/// `(gpu, op_id)` pairs of foreground ops flagged sensitive.
pub type SensitivitySet = BTreeSet<(u32, u32)>;

const FG: u32 = 0;
const BG: u32 = 1;
/// Rate of an op running without interference, in work units per tick.
const UNIT: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    /// Host starts launching a group (`op` is the group number).
    Launch,
    /// Group leaves the device FIFO for a hardware queue.
    Admit,
    /// Op takes its execution contexts (`op` is the stream position).
    Claim,
    Start,
    End,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Launch => "launch",
            EventKind::Admit => "admit",
            EventKind::Claim => "claim",
            EventKind::Start => "start",
            EventKind::End => "end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub tick: u64,
    pub gpu: u32,
    pub task: u32,
    pub op: u64,
    pub kind: EventKind,
}

/// Execution record of one op instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpExec {
    pub gpu: u32,
    pub task: u32,
    /// Position in the task's stream.
    pub seq: u64,
    /// Template op id.
    pub op_id: u32,
    pub iteration: u32,
    pub kind: OpKind,
    pub width: u32,
    pub isolated_ticks: u64,
    pub claim: u64,
    pub start: u64,
    pub end: u64,
}

impl OpExec {
    pub fn measured_ticks(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
    /// Completed ops in completion order.
    pub ops: Vec<OpExec>,
    pub contexts: u32,
    /// Context-ticks held per GPU, accumulated by the event loop.
    pub context_busy_ticks: Vec<u64>,
    pub fg_iteration_end: Vec<u64>,
    pub end_tick: u64,
    /// Flags at the start of the run.
    pub initial_sensitive: SensitivitySet,
    /// Flags at the end of the run (includes online feedback).
    pub final_sensitive: SensitivitySet,
    pub slowdown_ban_threshold: f64,
}

impl SimTrace {
    /// Context-ticks implied by the op records: Σ (end − claim) · width.
    pub fn op_busy_ticks(&self, gpu: u32) -> u64 {
        self.ops.iter().filter(|o| o.gpu == gpu).map(|o| (o.end - o.claim) * u64::from(o.width)).sum()
    }

    /// Largest number of contexts held at once on `gpu`.
    pub fn peak_contexts(&self, gpu: u32) -> u32 {
        let mut deltas: Vec<(u64, i64)> = Vec::new();
        for o in self.ops.iter().filter(|o| o.gpu == gpu && o.end > o.claim) {
            deltas.push((o.claim, i64::from(o.width)));
            deltas.push((o.end, -i64::from(o.width)));
        }
        // Releases sort before claims at the same tick.
        deltas.sort_unstable();
        let mut cur = 0i64;
        let mut peak = 0i64;
        for (_, d) in deltas {
            cur += d;
            peak = peak.max(cur);
        }
        peak as u32
    }

    /// Invariant violations: conservation, context bound, and each op having
    /// exactly one claim, start and end in order.
    pub fn check(&self) -> core::result::Result<(), String> {
        for gpu in 0..self.context_busy_ticks.len() as u32 {
            let (a, b) = (self.context_busy_ticks[gpu as usize], self.op_busy_ticks(gpu));
            if a != b {
                return Err(format!("gpu {gpu}: loop counted {a} context-ticks, ops account for {b}"));
            }
            let peak = self.peak_contexts(gpu);
            if peak > self.contexts {
                return Err(format!("gpu {gpu}: {peak} contexts held at once (limit {})", self.contexts));
            }
        }
        let mut seen: BTreeMap<(u32, u32, u64), [u32; 3]> = BTreeMap::new();
        let mut last: BTreeMap<(u32, u32, u64), u64> = BTreeMap::new();
        for e in &self.events {
            let slot = match e.kind {
                EventKind::Claim => 0,
                EventKind::Start => 1,
                EventKind::End => 2,
                _ => continue,
            };
            let key = (e.gpu, e.task, e.op);
            let c = seen.entry(key).or_default();
            if slot > 0 && c[slot - 1] == 0 {
                return Err(format!("op {key:?}: {} before the preceding event", e.kind.name()));
            }
            c[slot] += 1;
            if c[slot] > 1 {
                return Err(format!("op {key:?}: {} recorded twice", e.kind.name()));
            }
            let prev = last.insert(key, e.tick).unwrap_or(0);
            if e.tick < prev {
                return Err(format!("op {key:?}: events out of order"));
            }
        }
        Ok(())
    }
}

/// Foreground ops whose measured duration exceeds the threshold times their
/// isolated duration, added to the flags the run started with.
pub fn feedback_update(trace: &SimTrace, config: &SimConfig) -> SensitivitySet {
    let mut out = trace.initial_sensitive.clone();
    for o in trace.ops.iter().filter(|o| o.task == FG) {
        if violates(o.measured_ticks(), o.isolated_ticks, config.slowdown_ban_threshold) {
            out.insert((o.gpu, o.op_id));
        }
    }
    out
}

fn violates(measured: u64, isolated: u64, threshold: f64) -> bool {
    isolated > 0 && measured as f64 > threshold * isolated as f64
}

/// Run `iterations` measured foreground iterations (after the configured
/// warmup) and a foreground-only reference run for the QoS degradation.
pub fn simulate(
    timeline: &Timeline,
    config: &SimConfig,
    table: &InterferenceTable,
    iterations: u32,
) -> Result<(SimTrace, SimMetrics)> {
    let main = Engine::new(timeline, config, table, iterations)?.run()?;
    let isolated = if timeline.background.is_some() {
        Engine::new(&timeline.without_background(), config, table, iterations)?.run()?
    } else {
        main.clone()
    };
    let metrics = metrics(timeline, config, &main, &isolated);
    Ok((main.trace, metrics))
}

fn metrics(timeline: &Timeline, config: &SimConfig, main: &Outcome, isolated: &Outcome) -> SimMetrics {
    let (mean, p99) = iteration_stats(&main.trace.fg_iteration_end, config.warmup_iterations);
    let (iso_mean, _) = iteration_stats(&isolated.trace.fg_iteration_end, config.warmup_iterations);
    let window = main.window_ticks.max(1);
    let window_s = ticks_to_us(window) / 1e6;
    let fg = f64::from(timeline.global_batch) / (mean / 1e6);
    let bg = main.bg_samples / window_s;
    SimMetrics {
        iterations: main.trace.fg_iteration_end.len() as u32 - config.warmup_iterations,
        fg_iteration_time_us_mean: mean,
        fg_iteration_time_us_p99: p99,
        fg_throughput_samples_per_s: fg,
        bg_throughput_samples_per_s: bg,
        cluster_total_throughput: fg + bg,
        gpu_utilization: main.active_ticks.iter().map(|&a| a as f64 / window as f64).collect(),
        qos_degradation: mean / iso_mean,
        isolated_fg_iteration_time_us: iso_mean,
        window_us: ticks_to_us(window),
        sensitive_ops: main.trace.final_sensitive.len() as u32,
    }
}

/// Mean and nearest-rank p99 of measured iteration times in µs.
fn iteration_stats(ends: &[u64], warmup: u32) -> (f64, f64) {
    let w = warmup as usize;
    let mut d: Vec<u64> = (w..ends.len()).map(|k| ends[k] - if k == 0 { 0 } else { ends[k - 1] }).collect();
    let mean = ticks_to_us(d.iter().sum::<u64>()) / d.len() as f64;
    d.sort_unstable();
    let rank = (d.len() * 99).div_ceil(100).max(1);
    (mean, ticks_to_us(d[rank - 1]))
}

#[derive(Clone)]
struct Outcome {
    trace: SimTrace,
    window_ticks: u64,
    active_ticks: Vec<u64>,
    bg_samples: f64,
}

struct Stream {
    /// Template length; ops are `templates[k % len]` of iteration `k / len`.
    len: u64,
    /// Total ops, `None` for the endless background stream.
    total: Option<u64>,
    group_size: u64,
    next_group: u64,
    launching: Option<(u64, u64)>,
    outstanding: u32,
    admitted_groups: u64,
    head: u64,
    running: Option<usize>,
    host_ready: u64,
}

impl Stream {
    fn groups(&self) -> Option<u64> {
        self.total.map(|t| t.div_ceil(self.group_size))
    }

    fn has_op(&self, k: u64) -> bool {
        self.len > 0 && self.total.is_none_or(|t| k < t)
    }

    fn group_of(&self, k: u64) -> u64 {
        k / self.group_size
    }

    fn last_of_group(&self, k: u64) -> bool {
        (k + 1).is_multiple_of(self.group_size) || self.total == Some(k + 1)
    }
}

struct Device {
    fifo: VecDeque<(u32, u64)>,
    /// (task, group, admission sequence)
    admitted: Vec<(u32, u64, u64)>,
    used: u32,
    busy: u64,
    active: u64,
}

struct Active {
    gpu: u32,
    task: u32,
    seq: u64,
    tmpl: usize,
    width: u32,
    class: OpClass,
    remaining: u64,
    started: bool,
    claim: u64,
    start: u64,
    isolated: u64,
    coll: Option<(u32, u32)>,
    sensitive: bool,
}

struct Engine<'a> {
    tl: &'a Timeline,
    cfg: &'a SimConfig,
    table: [[u64; 4]; 5],
    now: u64,
    streams: Vec<[Option<Stream>; 2]>,
    devices: Vec<Device>,
    active: Vec<Option<Active>>,
    /// Claimed participants per collective instance.
    colls: BTreeMap<(u32, u32), Vec<usize>>,
    sensitive: SensitivitySet,
    initial_sensitive: SensitivitySet,
    admit_seq: u64,
    draining: bool,
    iter_left: Vec<u64>,
    iter_end: Vec<u64>,
    total_iters: u32,
    events: Vec<TraceEvent>,
    ops: Vec<OpExec>,
    overhead: u64,
    long_ticks: u64,
    window_start: u64,
    active_at_window: Vec<u64>,
    bg_samples: f64,
    bg_share: f64,
}

impl<'a> Engine<'a> {
    fn new(tl: &'a Timeline, cfg: &'a SimConfig, table: &InterferenceTable, iterations: u32) -> Result<Self> {
        cfg.validate()?;
        if iterations == 0 {
            return Err(Error::InvalidParameter("at least one measured iteration is required".into()));
        }
        if tl.fg.len() != tl.gpus as usize || tl.fg_ops() == 0 {
            return Err(Error::InvalidParameter("timeline has no foreground ops".into()));
        }
        for (g, ops) in tl.fg.iter().enumerate() {
            for o in ops {
                if o.kind == OpKind::Compute && o.ticks() == 0 {
                    return Err(Error::InvalidParameter(format!(
                        "compute op {} on gpu {g} has zero duration",
                        o.op_id
                    )));
                }
                if let Some(c) = o.collective {
                    if tl.collectives.get(c as usize).is_none_or(|p| !p.contains(&(g as u32))) {
                        return Err(Error::InvalidParameter(format!("collective {c} does not list gpu {g}")));
                    }
                }
            }
        }
        let total_iters = cfg.warmup_iterations + iterations;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let jitter = to_ticks(cfg.bg_start_jitter_us);
        let streams = (0..tl.gpus as usize)
            .map(|g| {
                let len = tl.fg[g].len() as u64;
                let fg = Stream {
                    len,
                    total: Some(len * u64::from(total_iters)),
                    group_size: u64::from(cfg.fg_group_size),
                    next_group: 0,
                    launching: None,
                    outstanding: 0,
                    admitted_groups: 0,
                    head: 0,
                    running: None,
                    host_ready: 0,
                };
                let bg = tl.background.as_ref().map(|job| Stream {
                    len: job.ops.len() as u64,
                    total: None,
                    group_size: u64::from(cfg.graph_split_size),
                    next_group: 0,
                    launching: None,
                    outstanding: 0,
                    admitted_groups: 0,
                    head: 0,
                    running: None,
                    host_ready: rng.random_range(0..=jitter),
                });
                [Some(fg), bg]
            })
            .collect();
        let devices = (0..tl.gpus)
            .map(|_| Device { fifo: VecDeque::new(), admitted: Vec::new(), used: 0, busy: 0, active: 0 })
            .collect();
        let sensitive = tl.sensitive();
        let per_iter = tl.fg_ops() as u64;
        Ok(Engine {
            tl,
            cfg,
            table: table.canonical()?,
            now: 0,
            streams,
            devices,
            active: Vec::new(),
            colls: BTreeMap::new(),
            initial_sensitive: sensitive.clone(),
            sensitive,
            admit_seq: 0,
            draining: false,
            iter_left: vec![per_iter; total_iters as usize],
            iter_end: Vec::new(),
            total_iters,
            events: Vec::new(),
            ops: Vec::new(),
            overhead: to_ticks(cfg.launch_overhead_us),
            long_ticks: to_ticks(cfg.long_op_us),
            window_start: 0,
            active_at_window: vec![0; tl.gpus as usize],
            bg_samples: 0.0,
            bg_share: tl.background.as_ref().map_or(0.0, |j| f64::from(j.batch) / j.ops.len() as f64),
        })
    }

    fn stream(&self, gpu: u32, task: u32) -> &Stream {
        self.streams[gpu as usize][task as usize].as_ref().expect("stream exists")
    }

    fn stream_mut(&mut self, gpu: u32, task: u32) -> &mut Stream {
        self.streams[gpu as usize][task as usize].as_mut().expect("stream exists")
    }

    fn template(&self, gpu: u32, task: u32, k: u64) -> &'a OpRecord {
        let s = self.stream(gpu, task);
        let idx = (k % s.len) as usize;
        if task == FG {
            &self.tl.fg[gpu as usize][idx]
        } else {
            &self.tl.background.as_ref().expect("background job").ops[idx]
        }
    }

    fn event(&mut self, gpu: u32, task: u32, op: u64, kind: EventKind) {
        self.events.push(TraceEvent { tick: self.now, gpu, task, op, kind });
    }

    fn width(&self, rec: &OpRecord) -> u32 {
        if rec.kind == OpKind::Compute && rec.per_device_batch >= self.cfg.wide_batch_threshold {
            self.cfg.contexts
        } else {
            1
        }
    }

    fn run(mut self) -> Result<Outcome> {
        loop {
            self.settle();
            // After the last foreground iteration claimed ops finish and
            // nothing new starts.
            self.draining = self.iter_end.len() == self.total_iters as usize;
            if self.draining && self.active.iter().all(Option::is_none) {
                break;
            }
            let rates = self.rates();
            let mut next = u64::MAX;
            for (i, a) in self.active.iter().enumerate() {
                if let Some(a) = a {
                    if a.started {
                        next = next.min(self.now + a.remaining.div_ceil(rates[i]));
                    }
                }
            }
            for (gpu, pair) in self.streams.iter().enumerate().filter(|_| !self.draining) {
                for s in pair.iter().flatten() {
                    if let Some((done, _)) = s.launching {
                        next = next.min(done);
                    } else if s.host_ready > self.now && self.host_can_launch(gpu as u32, s) {
                        next = next.min(s.host_ready);
                    }
                }
            }
            if next == u64::MAX {
                return Err(Error::Deadlock { tick: self.now, snapshot: self.snapshot() });
            }
            self.advance(next, &rates);
        }
        let n = self.tl.gpus as usize;
        let end = self.now;
        let trace = SimTrace {
            events: self.events,
            ops: self.ops,
            contexts: self.cfg.contexts,
            context_busy_ticks: self.devices.iter().map(|d| d.busy).collect(),
            fg_iteration_end: self.iter_end,
            end_tick: end,
            initial_sensitive: self.initial_sensitive,
            final_sensitive: self.sensitive,
            slowdown_ban_threshold: self.cfg.slowdown_ban_threshold,
        };
        Ok(Outcome {
            trace,
            window_ticks: end - self.window_start,
            active_ticks: (0..n).map(|g| self.devices[g].active - self.active_at_window[g]).collect(),
            bg_samples: self.bg_samples,
        })
    }

    fn host_can_launch(&self, gpu: u32, s: &Stream) -> bool {
        if s.launching.is_some() || s.groups().is_some_and(|g| s.next_group >= g) || s.len == 0 {
            return false;
        }
        let limit = if self.cfg.launch_pace_limit == 0 { u32::MAX } else { self.cfg.launch_pace_limit };
        if s.outstanding >= limit {
            return false;
        }
        let dev = &self.devices[gpu as usize];
        let in_flight = self.streams[gpu as usize].iter().flatten().filter(|s| s.launching.is_some()).count();
        dev.fifo.len() + in_flight < self.cfg.device_queue_capacity as usize
    }

    /// Apply every zero-time action at the current tick until nothing changes.
    fn settle(&mut self) {
        while self.draining {
            if !self.finish_zero_work() {
                return;
            }
        }
        loop {
            let mut changed = false;
            for gpu in 0..self.tl.gpus {
                for task in [FG, BG] {
                    if self.streams[gpu as usize][task as usize].is_none() {
                        continue;
                    }
                    changed |= self.host_step(gpu, task);
                }
                changed |= self.admit(gpu);
            }
            for gpu in 0..self.tl.gpus {
                changed |= self.dispatch(gpu);
            }
            changed |= self.finish_zero_work();
            if !changed {
                break;
            }
        }
    }

    fn host_step(&mut self, gpu: u32, task: u32) -> bool {
        let now = self.now;
        let mut changed = false;
        if let Some((done, group)) = self.stream(gpu, task).launching {
            if done <= now {
                self.stream_mut(gpu, task).launching = None;
                self.devices[gpu as usize].fifo.push_back((task, group));
                changed = true;
            }
        }
        let s = self.stream(gpu, task);
        if s.host_ready <= now && self.host_can_launch(gpu, s) {
            let overhead = self.overhead;
            let s = self.stream_mut(gpu, task);
            let group = s.next_group;
            s.next_group += 1;
            s.outstanding += 1;
            s.launching = Some((now + overhead, group));
            self.event(gpu, task, group, EventKind::Launch);
            changed = true;
        }
        changed
    }

    fn admit(&mut self, gpu: u32) -> bool {
        let mut changed = false;
        while self.devices[gpu as usize].admitted.len() < self.cfg.hw_slots as usize {
            let Some((task, group)) = self.devices[gpu as usize].fifo.pop_front() else { break };
            let seq = self.admit_seq;
            self.admit_seq += 1;
            self.devices[gpu as usize].admitted.push((task, group, seq));
            self.stream_mut(gpu, task).admitted_groups = group + 1;
            self.event(gpu, task, group, EventKind::Admit);
            changed = true;
        }
        changed
    }

    /// Head op of a stream if it is admitted and not yet claimed.
    fn arrived(&self, gpu: u32, task: u32) -> Option<u64> {
        let s = self.streams[gpu as usize][task as usize].as_ref()?;
        (s.running.is_none() && s.has_op(s.head) && s.group_of(s.head) < s.admitted_groups).then_some(s.head)
    }

    fn coll_key(&self, gpu: u32, k: u64) -> Option<(u32, u32)> {
        let s = self.stream(gpu, FG);
        self.template(gpu, FG, k).collective.map(|c| ((k / s.len) as u32, c))
    }

    /// Whether participant `gpu` has reached collective instance `key`.
    fn reached(&self, gpu: u32, key: (u32, u32)) -> bool {
        let s = self.stream(gpu, FG);
        if let Some(i) = s.running {
            return self.active[i].as_ref().is_some_and(|a| a.coll == Some(key));
        }
        self.arrived(gpu, FG).is_some_and(|k| self.coll_key(gpu, k) == Some(key))
    }

    fn is_sensitive(&self, gpu: u32, k: u64) -> bool {
        let rec = self.template(gpu, FG, k);
        rec.sensitive || self.sensitive.contains(&(gpu, rec.op_id))
    }

    /// A sensitive foreground op is admitted on `gpu` and not yet finished.
    /// Pausing from admission lets running background ops drain before the
    /// sensitive op reaches the head of its stream.
    fn bg_paused(&self, gpu: u32) -> bool {
        let s = self.stream(gpu, FG);
        if let Some(i) = s.running {
            if self.active[i].as_ref().is_some_and(|a| a.sensitive) {
                return true;
            }
        }
        let end = (s.admitted_groups * s.group_size).min(s.total.unwrap_or(u64::MAX));
        (s.head..end).any(|k| self.is_sensitive(gpu, k))
    }

    fn bg_running(&self, gpu: u32) -> bool {
        self.streams[gpu as usize][BG as usize].as_ref().is_some_and(|s| s.running.is_some())
    }

    fn group_seq(&self, gpu: u32, task: u32, k: u64) -> u64 {
        let group = self.stream(gpu, task).group_of(k);
        self.devices[gpu as usize]
            .admitted
            .iter()
            .find(|&&(t, g, _)| t == task && g == group)
            .map_or(u64::MAX, |&(_, _, s)| s)
    }

    fn dispatch(&mut self, gpu: u32) -> bool {
        let mut changed = false;
        loop {
            let mut cands: Vec<(u32, u64)> = Vec::with_capacity(2);
            if let Some(k) = self.arrived(gpu, FG) {
                let ready = match self.coll_key(gpu, k) {
                    Some(key) => {
                        let parts = &self.tl.collectives[key.1 as usize];
                        parts.iter().all(|&p| self.reached(p, key))
                    }
                    None => true,
                };
                if ready {
                    cands.push((FG, k));
                }
            }
            if let Some(k) = self.arrived(gpu, BG) {
                if !self.bg_paused(gpu) {
                    cands.push((BG, k));
                }
            }
            if !self.cfg.priority_scheduling_enabled {
                cands.sort_by_key(|&(task, k)| self.group_seq(gpu, task, k));
            }
            let Some(&(task, k)) = cands.first() else { break };
            let rec = self.template(gpu, task, k);
            let width = self.width(rec);
            let free = self.cfg.contexts - self.devices[gpu as usize].used;
            let sensitive = task == FG && self.is_sensitive(gpu, k);
            if width > free || (sensitive && self.bg_running(gpu)) {
                break;
            }
            self.claim(gpu, task, k, width, sensitive);
            changed = true;
        }
        changed
    }

    fn claim(&mut self, gpu: u32, task: u32, k: u64, width: u32, sensitive: bool) {
        let rec = self.template(gpu, task, k);
        let ticks = rec.ticks();
        let coll = if task == FG { self.coll_key(gpu, k) } else { None };
        let a = Active {
            gpu,
            task,
            seq: k,
            tmpl: rec.op_id as usize,
            width,
            class: OpClass::of(rec.kind, rec.intensity, ticks, self.long_ticks),
            remaining: ticks * UNIT,
            started: false,
            claim: self.now,
            start: 0,
            isolated: ticks,
            coll,
            sensitive,
        };
        let idx = match self.active.iter().position(Option::is_none) {
            Some(i) => {
                self.active[i] = Some(a);
                i
            }
            None => {
                self.active.push(Some(a));
                self.active.len() - 1
            }
        };
        self.devices[gpu as usize].used += width;
        let s = self.stream_mut(gpu, task);
        s.running = Some(idx);
        s.head += 1;
        self.event(gpu, task, k, EventKind::Claim);
        match coll {
            None => self.start(idx),
            Some(key) => {
                let n = self.tl.collectives[key.1 as usize].len();
                let members = self.colls.entry(key).or_default();
                members.push(idx);
                if members.len() == n {
                    let members = self.colls.remove(&key).expect("present");
                    for m in members {
                        self.start(m);
                    }
                }
            }
        }
    }

    fn start(&mut self, idx: usize) {
        let now = self.now;
        let a = self.active[idx].as_mut().expect("active op");
        a.started = true;
        a.start = now;
        let (gpu, task, seq) = (a.gpu, a.task, a.seq);
        self.event(gpu, task, seq, EventKind::Start);
    }

    fn finish_zero_work(&mut self) -> bool {
        let done: Vec<usize> = (0..self.active.len())
            .filter(|&i| self.active[i].as_ref().is_some_and(|a| a.started && a.remaining == 0))
            .collect();
        for &i in &done {
            self.complete(i);
        }
        !done.is_empty()
    }

    /// Progress per tick of every started op.
    fn rates(&self) -> Vec<u64> {
        let mut factor = vec![UNIT; self.active.len()];
        for (i, a) in self.active.iter().enumerate() {
            let Some(a) = a else { continue };
            if !a.started {
                continue;
            }
            let other = if a.task == FG { BG } else { FG };
            let Some(j) = self.streams[a.gpu as usize][other as usize].as_ref().and_then(|s| s.running) else {
                continue;
            };
            let Some(b) = self.active[j].as_ref().filter(|b| b.started) else { continue };
            let (hi, lo) = if a.task == FG { (a.class, b.class) } else { (b.class, a.class) };
            factor[i] = factor[i].max(self.table[hi.hi_index()][lo.lo_index()]);
        }
        let mut rate: Vec<u64> = factor.iter().map(|&f| (UNIT * UNIT / f).max(1)).collect();
        // Collective participants progress together at the slowest rate.
        let mut slowest: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (i, a) in self.active.iter().enumerate() {
            if let Some(key) = a.as_ref().filter(|a| a.started).and_then(|a| a.coll) {
                let e = slowest.entry(key).or_insert(u64::MAX);
                *e = (*e).min(rate[i]);
            }
        }
        for (i, a) in self.active.iter().enumerate() {
            if let Some(key) = a.as_ref().filter(|a| a.started).and_then(|a| a.coll) {
                rate[i] = slowest[&key];
            }
        }
        rate
    }

    fn advance(&mut self, next: u64, rates: &[u64]) {
        let dt = next - self.now;
        for d in &mut self.devices {
            d.busy += dt * u64::from(d.used);
            if d.used > 0 {
                d.active += dt;
            }
        }
        for (i, a) in self.active.iter_mut().enumerate() {
            if let Some(a) = a.as_mut().filter(|a| a.started) {
                a.remaining = a.remaining.saturating_sub(dt * rates[i]);
            }
        }
        self.now = next;
        let done: Vec<usize> = (0..self.active.len())
            .filter(|&i| self.active[i].as_ref().is_some_and(|a| a.started && a.remaining == 0))
            .collect();
        for i in done {
            self.complete(i);
        }
    }

    fn complete(&mut self, idx: usize) {
        let a = self.active[idx].take().expect("active op");
        let now = self.now;
        self.devices[a.gpu as usize].used -= a.width;
        self.event(a.gpu, a.task, a.seq, EventKind::End);
        let s = self.stream_mut(a.gpu, a.task);
        s.running = None;
        let iteration = (a.seq / s.len) as u32;
        if s.last_of_group(a.seq) {
            let group = s.group_of(a.seq);
            s.outstanding -= 1;
            let task = a.task;
            self.devices[a.gpu as usize].admitted.retain(|&(t, g, _)| !(t == task && g == group));
        }
        let rec = self.template(a.gpu, a.task, a.seq);
        self.ops.push(OpExec {
            gpu: a.gpu,
            task: a.task,
            seq: a.seq,
            op_id: rec.op_id,
            iteration,
            kind: rec.kind,
            width: a.width,
            isolated_ticks: a.isolated,
            claim: a.claim,
            start: a.start,
            end: now,
        });
        if a.task == BG {
            if now > self.window_start && self.iter_end.len() >= self.cfg.warmup_iterations as usize {
                self.bg_samples += self.bg_share;
            }
            return;
        }
        if self.cfg.feedback_enabled && violates(now - a.start, a.isolated, self.cfg.slowdown_ban_threshold) {
            self.sensitive.insert((a.gpu, a.tmpl as u32));
        }
        let left = &mut self.iter_left[iteration as usize];
        *left -= 1;
        if *left == 0 {
            self.iter_end.push(now);
            if self.iter_end.len() == self.cfg.warmup_iterations as usize {
                self.window_start = now;
                for (g, d) in self.devices.iter().enumerate() {
                    self.active_at_window[g] = d.active;
                }
            }
        }
    }

    fn snapshot(&self) -> String {
        let mut out = String::new();
        for gpu in 0..self.tl.gpus {
            let d = &self.devices[gpu as usize];
            let _ = write!(out, "gpu {gpu}: fifo {:?}, admitted {:?}, used {};", d.fifo, d.admitted, d.used);
            for task in [FG, BG] {
                if let Some(s) = &self.streams[gpu as usize][task as usize] {
                    let _ = write!(
                        out,
                        " task {task} head {} running {} outstanding {};",
                        s.head,
                        s.running.is_some(),
                        s.outstanding
                    );
                }
            }
            out.push(' ');
        }
        out
    }
}
