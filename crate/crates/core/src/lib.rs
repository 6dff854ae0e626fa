//! Covariance-preserving feature augmentation for graph contrastive
//! learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`] and [`rng`]: dense matrices, SVD, norms, seeded randomness.
//! - [`sketch`]: the feature-augmentation operators `X̃ = P·X + E` and the
//!   tools to measure and bound their covariance error.
//! - [`graph`]: graphs, normalized adjacency, graph augmentations, synthetic
//!   power-law graphs and the text file format.
//! - [`encoder`]: two-layer GCN plus MLP projection head with hand-written
//!   backward passes and Adam.
//! - [`contrast`]: the InfoNCE-style objective and the sketch-then-contrast
//!   training step for single- and multi-view setups.
//! - [`bias`]: the Monte-Carlo augmentation-bias estimator and audit.
//! - [`probe`]: linear evaluation with ℓ2-regularized logistic regression.

pub mod bias;
pub mod contrast;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod probe;
pub mod rng;
pub mod sketch;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SvdResult};
pub use rng::SeededRng;
