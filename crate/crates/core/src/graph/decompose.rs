use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CompGraph, LayerId};
use crate::error::{Error, Result};

/// One element of a series-parallel decomposition.
///
/// A `BranchJoin` holds only the layers strictly between its branching and
/// joining layer; those two layers appear as the neighbouring `Single`
/// blocks. An empty chain is a direct branch-to-join edge (a skip
/// connection).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Single(LayerId),
    BranchJoin { branch: LayerId, join: LayerId, chains: Vec<Vec<Block>> },
}

impl Block {
    /// Layers covered by this block, in order.
    pub fn layers(&self) -> Vec<LayerId> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<LayerId>) {
        match self {
            Block::Single(id) => out.push(*id),
            Block::BranchJoin { chains, .. } => {
                for c in chains {
                    for b in c {
                        b.collect(out);
                    }
                }
            }
        }
    }

    pub fn is_single(&self) -> bool {
        matches!(self, Block::Single(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub blocks: Vec<Block>,
}

impl BlockDecomposition {
    pub fn layers(&self) -> Vec<LayerId> {
        self.blocks.iter().flat_map(Block::layers).collect()
    }

    /// Number of branch/join blocks at any nesting depth.
    pub fn branch_join_count(&self) -> usize {
        fn count(bs: &[Block]) -> usize {
            bs.iter()
                .map(|b| match b {
                    Block::Single(_) => 0,
                    Block::BranchJoin { chains, .. } => 1 + chains.iter().map(|c| count(c)).sum::<usize>(),
                })
                .sum()
        }
        count(&self.blocks)
    }
}

/// Reduce a validated graph into a chain of single layers and branch/join
/// blocks. Graphs that are not series-parallel in this sense are rejected.
pub fn decompose(graph: &CompGraph) -> Result<BlockDecomposition> {
    let n = graph.len();
    let ipdom = post_dominators(graph);
    let walker = Walker { graph, ipdom };
    let blocks = walker.sequence(0, None)?;
    let dec = BlockDecomposition { blocks };
    let covered = dec.layers().len();
    if covered != n {
        return Err(Error::UnsupportedTopology {
            layers: Vec::new(),
            reason: format!("decomposition covers {covered} of {n} layers"),
        });
    }
    Ok(dec)
}

/// Immediate post-dominators over topological indices; the unique sink is
/// its own root.
fn post_dominators(graph: &CompGraph) -> Vec<usize> {
    let n = graph.len();
    let mut ipdom = vec![usize::MAX; n];
    ipdom[n - 1] = n - 1;
    for v in (0..n - 1).rev() {
        let mut it = graph.succs_of(v).iter().copied();
        let first = it.next().expect("validated graph has a unique sink");
        ipdom[v] = it.fold(first, |a, b| intersect(&ipdom, a, b));
    }
    ipdom
}

fn intersect(ipdom: &[usize], mut a: usize, mut b: usize) -> usize {
    while a != b {
        while a < b {
            a = ipdom[a];
        }
        while b < a {
            b = ipdom[b];
        }
    }
    a
}

struct Walker<'g> {
    graph: &'g CompGraph,
    ipdom: Vec<usize>,
}

impl Walker<'_> {
    fn unsupported(&self, idxs: &[usize], reason: &str) -> Error {
        Error::UnsupportedTopology {
            layers: self.graph.ids(idxs.iter().copied()),
            reason: format!("{reason} ({})", self.graph.describe_layers(idxs)),
        }
    }

    /// Blocks from `start` up to (excluding) `stop`; `None` runs to the sink.
    fn sequence(&self, start: usize, stop: Option<usize>) -> Result<Vec<Block>> {
        let g = self.graph;
        let id = |i: usize| g.layers()[i].id;
        let mut blocks = Vec::new();
        let mut cur = start;
        loop {
            blocks.push(Block::Single(id(cur)));
            let succ = g.succs_of(cur);
            match succ.len() {
                0 => {
                    return match stop {
                        None => Ok(blocks),
                        Some(s) => Err(self.unsupported(&[cur, s], "chain ends before its joining layer")),
                    };
                }
                1 => {
                    let next = succ[0];
                    if Some(next) == stop {
                        return Ok(blocks);
                    }
                    if g.preds_of(next).len() != 1 {
                        return Err(
                            self.unsupported(&[cur, next], "layer merges inputs that do not share a branching layer")
                        );
                    }
                    cur = next;
                }
                _ => {
                    let join = self.ipdom[cur];
                    if Some(join) == stop {
                        return Err(
                            self.unsupported(&[cur, join], "nested branch closes at the enclosing joining layer")
                        );
                    }
                    let mut chains = Vec::with_capacity(succ.len());
                    for &s in succ {
                        if s == join {
                            chains.push(Vec::new());
                            continue;
                        }
                        if g.preds_of(s).len() != 1 {
                            return Err(self.unsupported(&[cur, s], "branch target has inputs from outside the branch"));
                        }
                        chains.push(self.sequence(s, Some(join))?);
                    }
                    if g.preds_of(join).len() != chains.len() {
                        return Err(self.unsupported(&[cur, join], "joining layer has inputs from outside the block"));
                    }
                    blocks.push(Block::BranchJoin { branch: id(cur), join: id(join), chains });
                    cur = join;
                }
            }
        }
    }
}
