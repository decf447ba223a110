//! Deterministic synthetic workloads: model families with parametric cost
//! shapes, and random small instances for property tests.
//!
//! Layer time at per-device batch `b` is
//!
//! ```text
//! fwd(b) = floor + params_bytes / mem_bw + flops · b / (peak · eff(b))
//! eff(b) = min(1, b / knee)^alpha,   knee = saturation / parallel_elems
//! bwd(b) = bwd_ratio · fwd(b)
//! ```
//!
//! Convolutions expose parallelism through their output elements, so small
//! late-stage feature maps need large batches to fill the device. Dense
//! layers parallelize over their weights and are close to flat in batch.
//! Each entry gets a small seeded multiplicative jitter.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::NetworkProfile;
use crate::error::{Error, Result};
use crate::graph::{CompGraph, Layer, LayerProfile, ModelMeta, ProfileEntry};
use crate::math::powf;

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub peak_flops_per_us: f64,
    pub mem_bytes_per_us: f64,
    /// Parallel elements needed to saturate the device.
    pub saturation_elems: f64,
    pub alpha: f64,
    pub floor_us: f64,
    pub bwd_ratio: f64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel {
            peak_flops_per_us: 6.0e7,
            mem_bytes_per_us: 1.5e6,
            saturation_elems: 8_388_608.0,
            alpha: 0.9,
            floor_us: 8.0,
            bwd_ratio: 2.0,
        }
    }
}

impl DeviceModel {
    pub fn fwd_us(&self, flops_per_sample: f64, parallel_elems: f64, params_bytes: f64, batch: u32) -> f64 {
        let b = f64::from(batch);
        let knee = (self.saturation_elems / parallel_elems.max(1.0)).max(1.0);
        let eff = powf((b / knee).min(1.0), self.alpha);
        self.floor_us + params_bytes / self.mem_bytes_per_us + flops_per_sample * b / (self.peak_flops_per_us * eff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub global_batch: u32,
    pub seed: u64,
    /// Profiles cover per-device batches 1, 2, 4, … up to this value.
    pub max_profile_batch: u32,
    /// Relative half-width of the multiplicative jitter.
    pub jitter: f64,
    pub device: DeviceModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            global_batch: 32,
            seed: DEFAULT_SEED,
            max_profile_batch: 65_536,
            jitter: 0.01,
            device: DeviceModel::default(),
        }
    }
}

/// Plain chain of identical 3x3 convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CustomSpec {
    pub layers: u32,
    pub channels: u32,
    pub spatial: u32,
}

impl Default for CustomSpec {
    fn default() -> Self {
        CustomSpec { layers: 8, channels: 256, spatial: 28 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Family {
    VggLike,
    WideResnetLike,
    InceptionLike,
    Custom(CustomSpec),
}

impl Family {
    pub fn parse(name: &str) -> Result<Family> {
        match name {
            "vgg_like" => Ok(Family::VggLike),
            "wideresnet_like" => Ok(Family::WideResnetLike),
            "inception_like" => Ok(Family::InceptionLike),
            "custom" => Ok(Family::Custom(CustomSpec::default())),
            other => Err(Error::InvalidParameter(format!(
                "unknown family `{other}` (expected vgg_like, wideresnet_like, inception_like or custom)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::VggLike => "vgg_like",
            Family::WideResnetLike => "wideresnet_like",
            Family::InceptionLike => "inception_like",
            Family::Custom(_) => "custom",
        }
    }

    fn stream(&self) -> u64 {
        match self {
            Family::VggLike => 1,
            Family::WideResnetLike => 2,
            Family::InceptionLike => 3,
            Family::Custom(_) => 4,
        }
    }
}

/// Generate the graph and profiles of a family.
pub fn generate(family: &Family, cfg: &SynthConfig) -> Result<CompGraph> {
    if cfg.max_profile_batch == 0 || !(0.0..0.5).contains(&cfg.jitter) {
        return Err(Error::InvalidParameter("max_profile_batch must be ≥ 1 and jitter in [0, 0.5)".into()));
    }
    let b = match family {
        Family::VggLike => vgg_like(),
        Family::WideResnetLike => wideresnet_like(),
        Family::InceptionLike => inception_like(),
        Family::Custom(spec) => custom(spec)?,
    };
    b.build(family.name(), family.stream(), cfg)
}

pub fn vgg_like_graph(cfg: &SynthConfig) -> Result<CompGraph> {
    generate(&Family::VggLike, cfg)
}

pub fn wideresnet_like_graph(cfg: &SynthConfig) -> Result<CompGraph> {
    generate(&Family::WideResnetLike, cfg)
}

pub fn inception_like_graph(cfg: &SynthConfig) -> Result<CompGraph> {
    generate(&Family::InceptionLike, cfg)
}

struct Spec {
    name: String,
    kind: &'static str,
    flops: f64,
    params: u64,
    out_elems: u64,
    parallel: f64,
    preds: Vec<usize>,
}

#[derive(Default)]
struct Builder {
    specs: Vec<Spec>,
}

const BYTES_PER_ELEM: u64 = 4;

impl Builder {
    fn push(&mut self, spec: Spec) -> usize {
        self.specs.push(spec);
        self.specs.len() - 1
    }

    fn last(&self) -> Vec<usize> {
        self.specs.len().checked_sub(1).into_iter().collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, kh: u32, kw: u32, cin: u32, cout: u32, s: u32, preds: Vec<usize>) -> usize {
        let out = u64::from(cout) * u64::from(s) * u64::from(s);
        let macs = u64::from(kh * kw) * u64::from(cin) * out;
        self.push(Spec {
            name: name.to_string(),
            kind: "conv",
            flops: 2.0 * macs as f64,
            params: u64::from(kh * kw) * u64::from(cin) * u64::from(cout) + u64::from(cout),
            out_elems: out,
            parallel: out as f64,
            preds,
        })
    }

    fn pool(&mut self, name: &str, c: u32, s: u32, preds: Vec<usize>) -> usize {
        let out = u64::from(c) * u64::from(s) * u64::from(s);
        self.push(Spec {
            name: name.to_string(),
            kind: "pool",
            flops: 9.0 * out as f64,
            params: 0,
            out_elems: out,
            parallel: out as f64,
            preds,
        })
    }

    fn concat(&mut self, name: &str, c: u32, s: u32, preds: Vec<usize>) -> usize {
        let out = u64::from(c) * u64::from(s) * u64::from(s);
        self.push(Spec {
            name: name.to_string(),
            kind: "concat",
            flops: out as f64,
            params: 0,
            out_elems: out,
            parallel: out as f64,
            preds,
        })
    }

    fn fc(&mut self, name: &str, params: u64, out: u32, preds: Vec<usize>) -> usize {
        self.push(Spec {
            name: name.to_string(),
            kind: "fc",
            flops: 2.0 * params as f64,
            params,
            out_elems: u64::from(out),
            parallel: params as f64,
            preds,
        })
    }

    fn build(self, model: &str, stream: u64, cfg: &SynthConfig) -> Result<CompGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let dev = &cfg.device;
        let mut batches = Vec::new();
        let mut b = 1u32;
        while b <= cfg.max_profile_batch {
            batches.push(b);
            match b.checked_mul(2) {
                Some(n) => b = n,
                None => break,
            }
        }
        let mut layers = Vec::with_capacity(self.specs.len());
        let mut profiles = Vec::with_capacity(self.specs.len());
        for (i, s) in self.specs.into_iter().enumerate() {
            let id = i as u32;
            let mut layer = Layer::new(id, s.name, s.kind);
            layer.params_bytes = s.params * BYTES_PER_ELEM;
            layer.activation_bytes_per_sample = s.out_elems * BYTES_PER_ELEM;
            layer.predecessors = s.preds.iter().map(|&p| p as u32).collect();
            let entries = batches.iter().map(|&b| {
                let base = dev.fwd_us(s.flops, s.parallel, layer.params_bytes as f64, b);
                let jf = 1.0 + cfg.jitter * (2.0 * rng.random::<f64>() - 1.0);
                let jb = 1.0 + cfg.jitter * (2.0 * rng.random::<f64>() - 1.0);
                ProfileEntry { batch: b, fwd_us: base * jf, bwd_us: dev.bwd_ratio * base * jb }
            });
            profiles.push(LayerProfile::from_entries(id, entries.collect::<Vec<_>>()));
            layers.push(layer);
        }
        let meta = ModelMeta { name: String::from(model), input_shape: vec![3, 224, 224] };
        CompGraph::new(meta, cfg.global_batch, layers, profiles)
    }
}

/// 13 convolutions, 5 pools and 3 dense layers in a chain.
fn vgg_like() -> Builder {
    let mut b = Builder::default();
    let stages: [(u32, u32, u32); 5] = [(2, 64, 224), (2, 128, 112), (3, 256, 56), (3, 512, 28), (3, 512, 14)];
    let mut cin = 3;
    for (si, &(n, c, s)) in stages.iter().enumerate() {
        for j in 0..n {
            let p = b.last();
            b.conv(&format!("conv{}_{}", si + 1, j + 1), 3, 3, cin, c, s, p);
            cin = c;
        }
        let p = b.last();
        b.pool(&format!("pool{}", si + 1), c, s / 2, p);
    }
    // The first dense layer is narrowed so the model totals about 132M parameters.
    let p = b.last();
    b.fc("fc1", 96_400_000, 4096, p);
    let p = b.last();
    b.fc("fc2", 4096 * 4096 + 4096, 4096, p);
    let p = b.last();
    b.fc("fc3", 4096 * 1000 + 1000, 1000, p);
    b
}

/// Stem, 33 bottleneck blocks with residual skips (the addition is fused into
/// the last convolution of each block), 4 projection shortcuts and a
/// classifier: 105 layers.
fn wideresnet_like() -> Builder {
    let mut b = Builder::default();
    let stem = b.conv("stem", 7, 7, 3, 64, 56, Vec::new());
    let stages: [(u32, u32, u32, u32); 4] =
        [(3, 128, 256, 56), (4, 256, 512, 28), (23, 512, 1024, 14), (3, 1024, 2048, 7)];
    let mut x = stem;
    let mut cin = 64;
    for (si, &(n, inner, out, s)) in stages.iter().enumerate() {
        for j in 0..n {
            let tag = format!("s{}b{}", si + 1, j + 1);
            let a = b.conv(&format!("{tag}_a"), 1, 1, cin, inner, s, vec![x]);
            let m = b.conv(&format!("{tag}_b"), 3, 3, inner, inner, s, vec![a]);
            let short = if j == 0 { b.conv(&format!("{tag}_down"), 1, 1, cin, out, s, vec![x]) } else { x };
            x = b.conv(&format!("{tag}_c"), 1, 1, inner, out, s, vec![m, short]);
            cin = out;
        }
    }
    b.fc("fc", 2048 * 1000 + 1000, 1000, vec![x]);
    b
}

/// Stem plus inception modules whose towers meet at concatenation layers:
/// 119 layers.
fn inception_like() -> Builder {
    let mut b = Builder::default();
    let mut p = Vec::new();
    for &(name, k, cin, cout, s) in &[("stem1", 3, 3, 32, 149), ("stem2", 3, 32, 32, 147), ("stem3", 3, 32, 64, 147)] {
        let i = b.conv(name, k, k, cin, cout, s, p);
        p = vec![i];
    }
    let i = b.pool("stem_pool1", 64, 73, p);
    let i = b.conv("stem4", 1, 1, 64, 80, 73, vec![i]);
    let i = b.conv("stem5", 3, 3, 80, 192, 71, vec![i]);
    let i = b.pool("stem_pool2", 192, 35, vec![i]);
    let i = b.conv("stem6", 1, 1, 192, 192, 35, vec![i]);
    let i = b.conv("stem7", 3, 3, 192, 192, 35, vec![i]);
    let mut x = b.conv("stem8", 1, 1, 192, 192, 35, vec![i]);

    let mut cin = 192;
    for (m, pp) in [32u32, 64, 64].into_iter().enumerate() {
        let t = format!("mixed_a{}", m + 1);
        let s = 35;
        let t1 = b.conv(&format!("{t}_1x1"), 1, 1, cin, 64, s, vec![x]);
        let t2 = b.conv(&format!("{t}_5x5_reduce"), 1, 1, cin, 48, s, vec![x]);
        let t2 = b.conv(&format!("{t}_5x5"), 5, 5, 48, 64, s, vec![t2]);
        let t3 = b.conv(&format!("{t}_3x3_reduce"), 1, 1, cin, 64, s, vec![x]);
        let t3 = b.conv(&format!("{t}_3x3a"), 3, 3, 64, 96, s, vec![t3]);
        let t3 = b.conv(&format!("{t}_3x3b"), 3, 3, 96, 96, s, vec![t3]);
        let t4 = b.pool(&format!("{t}_pool"), cin, s, vec![x]);
        let t4 = b.conv(&format!("{t}_pool_proj"), 1, 1, cin, pp, s, vec![t4]);
        cin = 64 + 64 + 96 + pp;
        x = b.concat(&format!("{t}_concat"), cin, s, vec![t1, t2, t3, t4]);
    }

    {
        let t = "reduction_a";
        let s = 17;
        let t1 = b.conv(&format!("{t}_3x3"), 3, 3, cin, 384, s, vec![x]);
        let t2 = b.conv(&format!("{t}_3x3_reduce"), 1, 1, cin, 64, 35, vec![x]);
        let t2 = b.conv(&format!("{t}_3x3a"), 3, 3, 64, 96, 35, vec![t2]);
        let t2 = b.conv(&format!("{t}_3x3b"), 3, 3, 96, 96, s, vec![t2]);
        let t3 = b.pool(&format!("{t}_pool"), cin, s, vec![x]);
        cin += 384 + 96;
        x = b.concat(&format!("{t}_concat"), cin, s, vec![t1, t2, t3]);
    }

    for (m, c7) in [128u32, 160, 160, 192].into_iter().enumerate() {
        let t = format!("mixed_b{}", m + 1);
        let s = 17;
        let t1 = b.conv(&format!("{t}_1x1"), 1, 1, cin, 192, s, vec![x]);
        let t2 = b.conv(&format!("{t}_7x7_reduce"), 1, 1, cin, c7, s, vec![x]);
        let t2 = b.conv(&format!("{t}_1x7"), 1, 7, c7, c7, s, vec![t2]);
        let t2 = b.conv(&format!("{t}_7x1"), 7, 1, c7, 192, s, vec![t2]);
        let t3 = b.conv(&format!("{t}_dbl_reduce"), 1, 1, cin, c7, s, vec![x]);
        let t3 = b.conv(&format!("{t}_dbl_7x1a"), 7, 1, c7, c7, s, vec![t3]);
        let t3 = b.conv(&format!("{t}_dbl_1x7a"), 1, 7, c7, c7, s, vec![t3]);
        let t3 = b.conv(&format!("{t}_dbl_7x1b"), 7, 1, c7, c7, s, vec![t3]);
        let t3 = b.conv(&format!("{t}_dbl_1x7b"), 1, 7, c7, 192, s, vec![t3]);
        let t4 = b.pool(&format!("{t}_pool"), cin, s, vec![x]);
        let t4 = b.conv(&format!("{t}_pool_proj"), 1, 1, cin, 192, s, vec![t4]);
        cin = 768;
        x = b.concat(&format!("{t}_concat"), cin, s, vec![t1, t2, t3, t4]);
    }

    {
        let t = "reduction_b";
        let s = 8;
        let t1 = b.conv(&format!("{t}_3x3_reduce"), 1, 1, cin, 192, 17, vec![x]);
        let t1 = b.conv(&format!("{t}_3x3"), 3, 3, 192, 320, s, vec![t1]);
        let t2 = b.conv(&format!("{t}_7x7_reduce"), 1, 1, cin, 192, 17, vec![x]);
        let t2 = b.conv(&format!("{t}_1x7"), 1, 7, 192, 192, 17, vec![t2]);
        let t2 = b.conv(&format!("{t}_7x1"), 7, 1, 192, 192, 17, vec![t2]);
        let t2 = b.conv(&format!("{t}_3x3b"), 3, 3, 192, 192, s, vec![t2]);
        let t3 = b.pool(&format!("{t}_pool"), cin, s, vec![x]);
        cin += 320 + 192;
        x = b.concat(&format!("{t}_concat"), cin, s, vec![t1, t2, t3]);
    }

    for m in 0..2 {
        let t = format!("mixed_c{}", m + 1);
        let s = 8;
        let t1 = b.conv(&format!("{t}_1x1"), 1, 1, cin, 320, s, vec![x]);
        let t2 = b.conv(&format!("{t}_3x3_reduce"), 1, 1, cin, 384, s, vec![x]);
        let t2 = b.conv(&format!("{t}_1x3"), 1, 3, 384, 768, s, vec![t2]);
        let t3 = b.conv(&format!("{t}_dbl_reduce"), 1, 1, cin, 448, s, vec![x]);
        let t3 = b.conv(&format!("{t}_dbl_3x3"), 3, 3, 448, 384, s, vec![t3]);
        let t3 = b.conv(&format!("{t}_dbl_1x3"), 1, 3, 384, 768, s, vec![t3]);
        let t4 = b.pool(&format!("{t}_pool"), cin, s, vec![x]);
        let t4 = b.conv(&format!("{t}_pool_proj"), 1, 1, cin, 192, s, vec![t4]);
        cin = 2048;
        x = b.concat(&format!("{t}_concat"), cin, s, vec![t1, t2, t3, t4]);
    }

    let g = b.pool("global_pool", cin, 1, vec![x]);
    b.fc("fc", 2048 * 1000 + 1000, 1000, vec![g]);
    b
}

fn custom(spec: &CustomSpec) -> Result<Builder> {
    if spec.layers == 0 || spec.channels == 0 || spec.spatial == 0 {
        return Err(Error::InvalidParameter("custom family needs non-zero layers, channels and spatial size".into()));
    }
    let mut b = Builder::default();
    for i in 0..spec.layers {
        let p = b.last();
        let cin = if i == 0 { 3 } else { spec.channels };
        b.conv(&format!("conv{}", i + 1), 3, 3, cin, spec.channels, spec.spatial, p);
    }
    Ok(b)
}

/// Small random planning instances for property tests and the oracle
/// comparisons.
pub mod random {
    use super::*;

    /// A graph plus the remaining planner inputs.
    #[derive(Debug, Clone)]
    pub struct Instance {
        pub graph: CompGraph,
        pub network: NetworkProfile,
        pub amp_limit: f64,
        pub total_gpus: u32,
    }

    const AMP_LIMITS: [f64; 7] = [1.0, 1.1, 1.25, 1.5, 2.0, 3.0, f64::INFINITY];

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn finish(rng: &mut ChaCha8Rng, preds: Vec<Vec<usize>>, total_gpus: u32) -> Instance {
        let global_batch = [4u32, 6, 8, 12, 16][rng.random_range(0..5)];
        let mut layers = Vec::with_capacity(preds.len());
        let mut profiles = Vec::with_capacity(preds.len());
        for (i, p) in preds.into_iter().enumerate() {
            let id = i as u32;
            let mut l = Layer::new(id, format!("L{i}"), "conv");
            l.predecessors = p.into_iter().map(|x| x as u32).collect();
            l.params_bytes = if rng.random_bool(0.3) { 0 } else { rng.random_range(1_000..50_000_000) };
            l.activation_bytes_per_sample = if rng.random_bool(0.2) { 0 } else { rng.random_range(1_000..2_000_000) };
            let full = rng.random_range(50.0..2_000.0);
            let beta = rng.random_range(0.0..1.0);
            let floor = rng.random_range(0.0..20.0);
            let entries = (1..=global_batch).map(|b| {
                let t = floor + full * powf(f64::from(b) / f64::from(global_batch), beta) + 0.5;
                ProfileEntry { batch: b, fwd_us: t / 3.0, bwd_us: 2.0 * t / 3.0 }
            });
            profiles.push(LayerProfile::from_entries(id, entries.collect::<Vec<_>>()));
            layers.push(l);
        }
        let graph = CompGraph::new(
            ModelMeta { name: "random".into(), input_shape: Vec::new() },
            global_batch,
            layers,
            profiles,
        )
        .expect("generated graphs are valid");
        let network =
            NetworkProfile::new(rng.random_range(1e9..1e11), rng.random_range(0.0..30.0)).expect("positive bandwidth");
        let amp_limit = AMP_LIMITS[rng.random_range(0..AMP_LIMITS.len())];
        Instance { graph, network, amp_limit, total_gpus }
    }

    /// Chain of `1..=max_layers` layers.
    pub fn chain(rng: &mut ChaCha8Rng, max_layers: usize, total_gpus: u32) -> Instance {
        let n = rng.random_range(1..=max_layers.max(1));
        let preds = (0..n).map(|i| if i == 0 { Vec::new() } else { vec![i - 1] }).collect();
        finish(rng, preds, total_gpus)
    }

    enum Item {
        Single,
        Block(Vec<Vec<Item>>),
    }

    fn count(items: &[Item]) -> usize {
        items
            .iter()
            .map(|i| match i {
                Item::Single => 1,
                Item::Block(cs) => cs.iter().map(|c| count(c)).sum(),
            })
            .sum()
    }

    /// Sequence of at most `budget` layers that starts and ends with a
    /// single layer.
    fn sequence(rng: &mut ChaCha8Rng, budget: usize, depth: u32) -> Vec<Item> {
        let mut items = vec![Item::Single];
        let mut left = budget.saturating_sub(1);
        while left > 0 {
            // A block needs its join layer too.
            if left >= 2 && depth < 3 && rng.random_bool(0.5) {
                let inner_budget = left - 1;
                let chains = rng.random_range(2..=3usize);
                let mut cs = Vec::new();
                let mut used = 0;
                let mut has_empty = false;
                for _ in 0..chains {
                    let room = inner_budget - used;
                    if room == 0 || (!has_empty && rng.random_bool(0.25)) {
                        if has_empty {
                            continue;
                        }
                        has_empty = true;
                        cs.push(Vec::new());
                        continue;
                    }
                    let take = rng.random_range(1..=room.min(3));
                    let c = sequence(rng, take, depth + 1);
                    used += count(&c);
                    cs.push(c);
                }
                if cs.len() >= 2 && cs.iter().any(|c| !c.is_empty()) {
                    left -= used;
                    items.push(Item::Block(cs));
                    items.push(Item::Single);
                    left -= 1;
                    continue;
                }
            }
            if rng.random_bool(0.3) {
                break;
            }
            items.push(Item::Single);
            left -= 1;
        }
        items
    }

    /// Emit layers of `items`; `entry` feeds the first layer. Returns the
    /// last layer.
    fn emit(items: &[Item], entry: Option<usize>, preds: &mut Vec<Vec<usize>>) -> usize {
        let mut prev = entry;
        let mut pending: Vec<usize> = Vec::new();
        for it in items {
            match it {
                Item::Single => {
                    let id = preds.len();
                    let mut p: Vec<usize> =
                        if pending.is_empty() { prev.into_iter().collect() } else { core::mem::take(&mut pending) };
                    p.sort_unstable();
                    p.dedup();
                    preds.push(p);
                    prev = Some(id);
                }
                Item::Block(chains) => {
                    let branch = prev.expect("blocks follow a single layer");
                    for c in chains {
                        if c.is_empty() {
                            pending.push(branch);
                        } else {
                            pending.push(emit(c, Some(branch), preds));
                        }
                    }
                }
            }
        }
        prev.expect("sequence starts with a single layer")
    }

    /// Random series-parallel graph with at most `max_layers` layers.
    pub fn series_parallel(rng: &mut ChaCha8Rng, max_layers: usize, total_gpus: u32) -> Instance {
        let items = sequence(rng, max_layers.max(1), 0);
        let mut preds = Vec::new();
        emit(&items, None, &mut preds);
        finish(rng, preds, total_gpus)
    }
}
