use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::LayerId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("missing layer {0} referenced by an edge")]
    MissingLayer(LayerId),
    #[error("duplicate layer id {0}")]
    DuplicateLayer(LayerId),
    #[error("cycle detected among layers {0:?}")]
    Cycle(Vec<LayerId>),
    #[error("missing profile entry for layer {layer} at per-device batch {batch}")]
    MissingProfile { layer: LayerId, batch: u32 },
    #[error("non-positive time in profile of layer {layer} at batch {batch}")]
    NonPositiveTime { layer: LayerId, batch: u32 },
    #[error("unsupported topology around layers {layers:?}: {reason}")]
    UnsupportedTopology { layers: Vec<LayerId>, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("invalid sample-efficiency curve: {0}")]
    InvalidCurve(String),
    #[error("simulation deadlock at tick {tick}: {snapshot}")]
    Deadlock { tick: u64, snapshot: String },
}
