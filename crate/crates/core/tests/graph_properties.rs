use std::collections::{BTreeMap, BTreeSet};

use burstpar_core::graph::decompose;
use burstpar_core::synth::random;
use burstpar_core::synth::{inception_like_graph, wideresnet_like_graph, SynthConfig};
use burstpar_core::{CompGraph, LayerId, LayerProfile, ProfileEntry};
use proptest::prelude::*;

/// Two-terminal series-parallel recognition by edge reduction: contract
/// vertices with one incoming and one outgoing edge, merge parallel edges,
/// repeat. Returns whether the graph collapses to a single source→sink edge.
fn collapses_to_one_edge(graph: &CompGraph) -> bool {
    let mut edges: BTreeMap<(LayerId, LayerId), usize> = BTreeMap::new();
    for l in graph.layers() {
        for &s in &l.successors {
            *edges.entry((l.id, s)).or_default() += 1;
        }
    }
    let (src, sink) = (graph.source(), graph.sink());
    if src == sink {
        return edges.is_empty();
    }
    loop {
        let mut changed = false;
        for m in edges.values_mut() {
            if *m > 1 {
                *m = 1;
                changed = true;
            }
        }
        let nodes: BTreeSet<LayerId> = edges.keys().flat_map(|&(a, b)| [a, b]).collect();
        for v in nodes {
            if v == src || v == sink {
                continue;
            }
            let ins: Vec<_> = edges.keys().filter(|e| e.1 == v).copied().collect();
            let outs: Vec<_> = edges.keys().filter(|e| e.0 == v).copied().collect();
            if ins.len() == 1 && outs.len() == 1 && edges[&ins[0]] == 1 && edges[&outs[0]] == 1 {
                edges.remove(&ins[0]);
                edges.remove(&outs[0]);
                *edges.entry((ins[0].0, outs[0].1)).or_default() += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    edges.len() == 1 && edges.contains_key(&(src, sink))
}

/// In a series-parallel graph every branch/join block owns exactly one
/// fan-out layer.
fn fan_out_layers(graph: &CompGraph) -> usize {
    graph.layers().iter().filter(|l| l.successors.len() > 1).count()
}

#[test]
fn inception_blocks_match_an_independent_recognizer() {
    let g = inception_like_graph(&SynthConfig::default()).unwrap();
    assert!(collapses_to_one_edge(&g));
    let d = decompose(&g).unwrap();
    assert_eq!(d.branch_join_count(), fan_out_layers(&g));
    assert_eq!(d.branch_join_count(), 11);
}

#[test]
fn wideresnet_blocks_match_an_independent_recognizer() {
    let g = wideresnet_like_graph(&SynthConfig::default()).unwrap();
    assert!(collapses_to_one_edge(&g));
    assert_eq!(decompose(&g).unwrap().branch_join_count(), fan_out_layers(&g));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decomposition_is_a_partition(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let inst = random::series_parallel(&mut rng, 10, 4);
        let d = decompose(&inst.graph).unwrap();
        let mut covered = d.layers();
        covered.sort_unstable();
        let mut all: Vec<LayerId> = inst.graph.layers().iter().map(|l| l.id).collect();
        all.sort_unstable();
        prop_assert_eq!(covered, all);
        prop_assert!(collapses_to_one_edge(&inst.graph));
        prop_assert_eq!(d.branch_join_count(), fan_out_layers(&inst.graph));
    }

    #[test]
    fn interpolation_stays_between_neighbours(
        points in proptest::collection::btree_map(1u32..512, (1.0f64..1e5, 1.0f64..1e5), 2..8),
        batch in 1u32..600,
    ) {
        let entries: Vec<ProfileEntry> = points.iter().map(|(&b, &(f, w))| ProfileEntry { batch: b, fwd_us: f, bwd_us: w }).collect();
        let p = LayerProfile::from_entries(0, entries.clone());
        let (f, w) = p.lookup(batch, true).unwrap();
        let below = entries.iter().rev().find(|e| e.batch <= batch);
        let above = entries.iter().find(|e| e.batch >= batch);
        let (lo, hi) = match (below, above) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, a),
            (None, Some(b)) => (b, b),
            (None, None) => unreachable!(),
        };
        prop_assert!(f >= lo.fwd_us.min(hi.fwd_us) && f <= lo.fwd_us.max(hi.fwd_us));
        prop_assert!(w >= lo.bwd_us.min(hi.bwd_us) && w <= lo.bwd_us.max(hi.bwd_us));
        prop_assert_eq!(p.lookup(batch, false).is_some(), points.contains_key(&batch));
    }
}
