//! Two-phase saliency-guided training on a small, deterministic CPU engine.
//!
//! Step 1 trains a UNET-lite autoencoder to regress human saliency maps from
//! images without labels. Step 2 drops the decoder, attaches a freshly seeded
//! linear head to the pretrained encoder and fine-tunes everything with
//! cross-entropy. Joint-loss baselines, a synthetic open-set anomaly task with
//! ground-truth saliency, and AUROC/entropy metrics complete the harness.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
