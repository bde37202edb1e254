//! Graph-network forward pass, written from scratch over dense slices.
//!
//! Each stage is a stack of GN blocks with residual edge and node updates and
//! 4-head attention aggregation, followed by a node class head and a 4-way
//! edge head. Everything is generic over [`Real`]: `f32` drives inference,
//! `f64` backs the numerical checks.

mod config;
pub mod grad;
pub mod layers;
mod real;
pub mod stage;
mod weights;

use thiserror::Error;

pub use config::{ModelConfig, EDGE_OUTPUTS};
pub use grad::{finite_diff_gradcheck, GradcheckOptions, GradcheckReport, GradcheckTarget, PairSample};
pub use layers::{group_norm, EdgeAttention, GroupNorm, Linear, Mlp2};
pub use real::{sigmoid, softmax, Real};
pub use stage::{head, GcnStage, GnBlock, Model, StageOutput};
pub use weights::{ModelWeights, Tensor, FGW1_MAGIC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("weights are missing tensor {0:?}")]
    MissingTensor(String),
    #[error("weights contain unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error("tensor {name:?} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("not an FGW1 weight file (bad magic)")]
    BadMagic,
    #[error("weight file truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("weight file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("bad weight-file header: {0}")]
    Header(String),
    #[error("tensor {name:?} has unsupported dtype {dtype:?}")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("edge {edge} refers to node {node}, but the graph has {nodes} nodes")]
    DanglingAdjacency { edge: usize, node: usize, nodes: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
}
