//! Multi-view clustering under fully incomplete information.
//!
//! A shared-encoder / multi-branch-decoder model maps every view of every
//! sample into one latent space. Training combines within-view
//! reconstruction, semantic-invariance regularization of soft cluster
//! assignments, and (when paired samples exist) cross-view contrast. After
//! training, missing samples are imputed and unaligned samples realigned by
//! nearest-neighbor search in the latent space, and the concatenated latents
//! are clustered with spherical k-means.

pub mod autodiff;
pub mod cli;
pub mod clustering;
pub mod data;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod recovery;
pub mod rng;
pub mod theorem;
pub mod trainer;

pub use error::{Result, SmileError};
