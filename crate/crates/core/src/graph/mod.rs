//! Computation graphs with per-layer cost profiles.
//!
//! A [`CompGraph`] is validated on construction: layer ids are unique, edges
//! point at existing layers, the graph is acyclic, and every non-virtual layer
//! carries a profile with strictly positive timings. Layers are stored in a
//! stable topological order, and a zero-cost virtual source and/or sink is
//! inserted when the graph has several entry or exit layers.

mod decompose;

pub use decompose::{decompose, Block, BlockDecomposition};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::per_device;

pub type LayerId = u32;

/// Kind tag used for the zero-cost source/sink layers inserted by validation.
pub const VIRTUAL_KIND: &str = "virtual";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub id: LayerId,
    pub name: String,
    pub kind: String,
    pub params_bytes: u64,
    pub activation_bytes_per_sample: u64,
    #[serde(default)]
    pub predecessors: Vec<LayerId>,
    #[serde(default)]
    pub successors: Vec<LayerId>,
}

impl Layer {
    pub fn new(id: LayerId, name: impl Into<String>, kind: impl Into<String>) -> Self {
        Layer {
            id,
            name: name.into(),
            kind: kind.into(),
            params_bytes: 0,
            activation_bytes_per_sample: 0,
            predecessors: Vec::new(),
            successors: Vec::new(),
        }
    }

    pub fn is_virtual(&self) -> bool {
        self.kind == VIRTUAL_KIND
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub batch: u32,
    pub fwd_us: f64,
    pub bwd_us: f64,
}

/// Measured forward/backward times of one layer, keyed by per-device batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerProfile {
    pub layer_id: LayerId,
    entries: BTreeMap<u32, (f64, f64)>,
}

impl LayerProfile {
    pub fn new(layer_id: LayerId) -> Self {
        LayerProfile { layer_id, entries: BTreeMap::new() }
    }

    pub fn from_entries(layer_id: LayerId, entries: impl IntoIterator<Item = ProfileEntry>) -> Self {
        let mut p = LayerProfile::new(layer_id);
        for e in entries {
            p.insert(e.batch, e.fwd_us, e.bwd_us);
        }
        p
    }

    pub fn insert(&mut self, batch: u32, fwd_us: f64, bwd_us: f64) {
        self.entries.insert(batch, (fwd_us, bwd_us));
    }

    pub fn entries(&self) -> impl Iterator<Item = ProfileEntry> + '_ {
        self.entries.iter().map(|(&batch, &(fwd_us, bwd_us))| ProfileEntry { batch, fwd_us, bwd_us })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Forward and backward time at `batch`. Exact entries are returned as-is;
    /// otherwise, when `interpolate` is set, the value is interpolated linearly
    /// between the bracketing entries and clamped to the extreme entries.
    pub fn lookup(&self, batch: u32, interpolate: bool) -> Option<(f64, f64)> {
        if let Some(&t) = self.entries.get(&batch) {
            return Some(t);
        }
        if !interpolate {
            return None;
        }
        let below = self.entries.range(..batch).next_back();
        let above = self.entries.range(batch..).next();
        match (below, above) {
            (None, None) => None,
            (Some((_, &t)), None) | (None, Some((_, &t))) => Some(t),
            (Some((&b0, &(f0, w0))), Some((&b1, &(f1, w1)))) => {
                let frac = f64::from(batch - b0) / f64::from(b1 - b0);
                Some((lerp(f0, f1, frac), lerp(w0, w1, frac)))
            }
        }
    }
}

fn lerp(a: f64, b: f64, frac: f64) -> f64 {
    let v = a + (b - a) * frac;
    v.clamp(a.min(b), a.max(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub name: String,
    #[serde(default)]
    pub input_shape: Vec<u32>,
}

/// A validated, immutable DNN computation graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CompGraph {
    pub meta: ModelMeta,
    global_batch: u32,
    interpolate: bool,
    layers: Vec<Layer>,
    profiles: BTreeMap<LayerId, LayerProfile>,
    index: BTreeMap<LayerId, usize>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

impl CompGraph {
    pub fn new(
        meta: ModelMeta,
        global_batch: u32,
        layers: Vec<Layer>,
        profiles: impl IntoIterator<Item = LayerProfile>,
    ) -> Result<Self> {
        if global_batch == 0 {
            return Err(Error::InvalidParameter("global_batch must be at least 1".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidGraph("graph has no layers".into()));
        }

        let mut index = BTreeMap::new();
        for (i, l) in layers.iter().enumerate() {
            if index.insert(l.id, i).is_some() {
                return Err(Error::DuplicateLayer(l.id));
            }
        }

        // Union of edges declared on either endpoint.
        let n = layers.len();
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (i, l) in layers.iter().enumerate() {
            for p in &l.predecessors {
                let j = *index.get(p).ok_or(Error::MissingLayer(*p))?;
                edges.insert((j, i));
            }
            for s in &l.successors {
                let j = *index.get(s).ok_or(Error::MissingLayer(*s))?;
                edges.insert((i, j));
            }
        }
        if let Some(&(a, _)) = edges.iter().find(|(a, b)| a == b) {
            return Err(Error::Cycle(alloc::vec![layers[a].id]));
        }

        let order =
            topo_order(n, &edges).map_err(|stuck| Error::Cycle(stuck.into_iter().map(|i| layers[i].id).collect()))?;

        let mut profiles: BTreeMap<LayerId, LayerProfile> = profiles.into_iter().map(|p| (p.layer_id, p)).collect();
        for id in profiles.keys() {
            if !index.contains_key(id) {
                return Err(Error::MissingLayer(*id));
            }
        }
        for l in &layers {
            if l.is_virtual() {
                continue;
            }
            let p = profiles
                .get(&l.id)
                .filter(|p| !p.is_empty())
                .ok_or(Error::MissingProfile { layer: l.id, batch: global_batch })?;
            for e in p.entries() {
                let ok = e.batch > 0 && e.fwd_us > 0.0 && e.bwd_us > 0.0;
                if !ok || !e.fwd_us.is_finite() || !e.bwd_us.is_finite() {
                    return Err(Error::NonPositiveTime { layer: l.id, batch: e.batch });
                }
            }
        }

        // Rebuild in topological order with normalized adjacency.
        let mut new_pos = alloc::vec![0usize; n];
        for (pos, &old) in order.iter().enumerate() {
            new_pos[old] = pos;
        }
        let mut sorted: Vec<Layer> = order.iter().map(|&i| layers[i].clone()).collect();
        let mut preds = alloc::vec![Vec::new(); n];
        let mut succs = alloc::vec![Vec::new(); n];
        for &(a, b) in &edges {
            succs[new_pos[a]].push(new_pos[b]);
            preds[new_pos[b]].push(new_pos[a]);
        }

        let sources: Vec<usize> = (0..n).filter(|&i| preds[i].is_empty()).collect();
        let sinks: Vec<usize> = (0..n).filter(|&i| succs[i].is_empty()).collect();
        let mut next_id = sorted.iter().map(|l| l.id).max().unwrap_or(0);
        if sources.len() > 1 {
            next_id += 1;
            let mut src = Layer::new(next_id, "__source", VIRTUAL_KIND);
            src.successors = sources.iter().map(|&i| sorted[i].id).collect();
            // Shift everything by one; the source goes first.
            sorted.insert(0, src);
            for v in preds.iter_mut().chain(succs.iter_mut()) {
                for x in v.iter_mut() {
                    *x += 1;
                }
            }
            preds.insert(0, Vec::new());
            succs.insert(0, sources.iter().map(|&i| i + 1).collect());
            for &s in &sources {
                preds[s + 1].push(0);
            }
        }
        let m = sorted.len();
        let sinks: Vec<usize> = if sources.len() > 1 { sinks.iter().map(|&i| i + 1).collect() } else { sinks };
        if sinks.len() > 1 {
            next_id += 1;
            let mut sink = Layer::new(next_id, "__sink", VIRTUAL_KIND);
            sink.predecessors = sinks.iter().map(|&i| sorted[i].id).collect();
            sorted.push(sink);
            preds.push(sinks.clone());
            succs.push(Vec::new());
            for &s in &sinks {
                succs[s].push(m);
            }
        }

        for v in preds.iter_mut().chain(succs.iter_mut()) {
            v.sort_unstable();
        }
        let ids: Vec<LayerId> = sorted.iter().map(|l| l.id).collect();
        for (i, l) in sorted.iter_mut().enumerate() {
            l.predecessors = preds[i].iter().map(|&j| ids[j]).collect();
            l.successors = succs[i].iter().map(|&j| ids[j]).collect();
        }
        let index = sorted.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        profiles.retain(|id, _| ids.contains(id));

        Ok(CompGraph { meta, global_batch, interpolate: true, layers: sorted, profiles, index, preds, succs })
    }

    pub fn global_batch(&self) -> u32 {
        self.global_batch
    }

    /// Same graph with a different global batch size.
    pub fn with_global_batch(&self, global_batch: u32) -> Result<Self> {
        if global_batch == 0 {
            return Err(Error::InvalidParameter("global_batch must be at least 1".into()));
        }
        let mut g = self.clone();
        g.global_batch = global_batch;
        Ok(g)
    }

    pub fn interpolation_enabled(&self) -> bool {
        self.interpolate
    }

    pub fn set_interpolation(&mut self, enabled: bool) {
        self.interpolate = enabled;
    }

    /// Layers in topological order.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, id: LayerId) -> Option<&Layer> {
        self.index.get(&id).map(|&i| &self.layers[i])
    }

    pub fn index_of(&self, id: LayerId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn profiles(&self) -> impl Iterator<Item = &LayerProfile> {
        self.profiles.values()
    }

    pub fn profile(&self, id: LayerId) -> Option<&LayerProfile> {
        self.profiles.get(&id)
    }

    pub(crate) fn preds_of(&self, idx: usize) -> &[usize] {
        &self.preds[idx]
    }

    pub(crate) fn succs_of(&self, idx: usize) -> &[usize] {
        &self.succs[idx]
    }

    pub fn source(&self) -> LayerId {
        self.layers[0].id
    }

    pub fn sink(&self) -> LayerId {
        self.layers[self.layers.len() - 1].id
    }

    pub fn total_params_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.params_bytes).sum()
    }

    /// Forward and backward time of layer `idx` at per-device batch `batch`.
    pub fn timing_at_batch(&self, idx: usize, batch: u32) -> Result<(f64, f64)> {
        let layer = &self.layers[idx];
        if layer.is_virtual() {
            return Ok((0.0, 0.0));
        }
        self.profiles
            .get(&layer.id)
            .and_then(|p| p.lookup(batch, self.interpolate))
            .ok_or(Error::MissingProfile { layer: layer.id, batch })
    }

    /// Forward and backward time of layer `idx` when the global batch is split
    /// over `gpus` devices (per-device batch is the ceiling share).
    pub fn timing(&self, idx: usize, gpus: u32) -> Result<(f64, f64)> {
        if gpus == 0 {
            return Err(Error::InvalidParameter("gpu count must be at least 1".into()));
        }
        self.timing_at_batch(idx, per_device(self.global_batch, gpus))
    }

    /// Forward plus backward compute time of `layer` on `gpus` devices.
    pub fn profile_lookup(&self, layer: LayerId, gpus: u32) -> Result<f64> {
        let idx = self.index_of(layer).ok_or(Error::MissingLayer(layer))?;
        let (f, b) = self.timing(idx, gpus)?;
        Ok(f + b)
    }

    pub fn describe_layers(&self, idxs: &[usize]) -> String {
        let names: Vec<String> =
            idxs.iter().map(|&i| format!("{}({})", self.layers[i].name, self.layers[i].id)).collect();
        names.join(", ")
    }

    pub(crate) fn ids(&self, idxs: impl IntoIterator<Item = usize>) -> Vec<LayerId> {
        idxs.into_iter().map(|i| self.layers[i].id).collect()
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn kinds(&self) -> BTreeSet<String> {
        self.layers.iter().map(|l| l.kind.to_string()).collect()
    }
}

/// Kahn's algorithm, ties broken by original position. On a cycle, returns
/// the layers that could not be ordered.
fn topo_order(n: usize, edges: &BTreeSet<(usize, usize)>) -> core::result::Result<Vec<usize>, Vec<usize>> {
    let mut indeg = alloc::vec![0usize; n];
    let mut out = alloc::vec![Vec::new(); n];
    for &(a, b) in edges {
        indeg[b] += 1;
        out[a].push(b);
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &j in &out[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).filter(|&i| indeg[i] > 0).collect())
    }
}
