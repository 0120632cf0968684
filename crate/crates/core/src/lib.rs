//! Learned multi-modal hashing.
//!
//! Precomputed vision and text embeddings are concatenated, reweighted by a
//! sigmoid context gate and projected by a `tanh` hash layer into relaxed
//! k-bit codes. Training minimizes a pairwise metric loss plus a
//! quantization penalty; at inference the codes are binarized by sign and
//! retrieval is exact Hamming ranking, scored by mean Average Precision.
//!
//! Modules, bottom up:
//!
//! - [`config`]: hyperparameters and the `key = value` config file
//! - [`dataio`]: embedding/label files, split manifests, synthetic data
//! - [`model`]: parameters, initialization and the forward pass
//! - [`loss`]: metric, quantization and total loss with gradients
//! - [`trainer`]: backpropagation, Adam, training loop, checkpoints
//! - [`codes`]: packed binary codes, Hamming distance, search
//! - [`eval`]: AP/mAP and the ablation grid
//! - [`pipeline`]: encoding splits and evaluating a trained model
//! - [`cli`]: the `mmhash` command line

pub mod binfmt;
pub mod cli;
pub mod codes;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod trainer;

pub use config::{TrainConfig, Variant};
pub use error::{Error, Result};
