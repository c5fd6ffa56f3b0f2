//! Composed image retrieval with reasoning-augmented supervision: embedding
//! storage, triplet data, annotation and filtering, a small composer model
//! with exact gradients, two-stage training, exact retrieval and metrics.

pub mod annotate;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
mod jsonl;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod store;
pub mod trainer;

pub use dataset::{CoTAnnotation, NliPair, TokenSeq, Triplet};
pub use error::{Error, Result};
pub use eval::EvalRun;
pub use metrics::EvalReport;
pub use model::{GradientSet, ModelDims, ParamSet};
pub use retrieval::{GalleryIndex, RankedList, RankedResult};
pub use store::{EmbeddingMatrix, Manifest};
pub use trainer::{AnnotationMode, TrainConfig};
