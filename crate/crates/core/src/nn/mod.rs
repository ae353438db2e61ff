//! A small CPU neural-network stack: tensors, a fixed layer set, categorical
//! cross-entropy, Adam, a deterministic training loop, a model file format,
//! and a line protocol for attaching an external embedding backend.
//!
//! Activations are batched as flat `f32` buffers in `[N, C, H, W]` order.

pub mod adam;
pub mod embed;
pub mod io;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{Layer, LayerSpec, Shape};
pub use loss::cross_entropy;
pub use model::{InputSpec, Model, ModelSpec};
pub use tensor::Tensor;
pub use train::{fit, Dataset, EpochStats, TrainConfig, TrainLog};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation after layer {layer} ({kind})")]
    NonFiniteActivation { layer: usize, kind: &'static str },
    #[error("non-finite gradient in layer {layer} ({kind})")]
    NonFiniteGradient { layer: usize, kind: &'static str },
    #[error("label {label} at sample {index} is outside 0..{classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("model file schema_version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("parameter blob digest mismatch: header {expected}, blob {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("architecture unsupported: {0}")]
    ArchitectureUnsupported(String),
    #[error("embedding backend unavailable{}: {message}", last_good.map(|i| format!(" after tile {i}")).unwrap_or_default())]
    BackendUnavailable {
        last_good: Option<usize>,
        message: String,
    },
    #[error("embedding protocol error: {0}")]
    ProtocolError(String),
    #[error("embedding dimension mismatch: handshake declared {expected}, received {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch}, step {step}: {source}")]
    Train {
        epoch: usize,
        step: u64,
        #[source]
        source: Box<NnError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
