//! Two-stage graph convolutional node classification.
//!
//! Stage one fuses raw features, an attention embedding and an encoder code,
//! runs two graph convolutions and emits a soft class distribution per node.
//! Those distributions define a k-nearest-neighbour "conceptual" graph, and a
//! second graph convolutional network over that graph makes the final call.
//!
//! Module map:
//! - [`linalg`]: dense/CSR matrices and the reverse-mode tape
//! - [`graph`]: attributed graphs, dataset parsers, normalization, splits
//! - [`layers`]: graph convolution, split attention, encoder, dropout, loss
//! - [`stage1`], [`concept`], [`stage2`]: the pipeline stages
//! - [`train`]: optimizer, trainers, metrics, persistence

pub mod concept;
pub mod error;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod stage1;
pub mod stage2;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
