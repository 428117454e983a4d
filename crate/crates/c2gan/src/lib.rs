//! Keypoint-guided image generation with cycle-in-cycle adversarial training.
//!
//! One image generator and one keypoint generator are wired into three
//! generative-adversarial cycles: an image cycle that reconstructs the input
//! and two keypoint cycles that re-extract the conditioning keypoints from
//! generated images. Cross-modal patch discriminators judge image/keypoint
//! combinations. The crate ships the full training/evaluation loop plus a
//! deterministic synthetic articulated-figure dataset with ground-truth
//! keypoints, so the whole pipeline runs on a desk-scale CPU budget.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release -p c2gan --example generate_dataset
//! cargo run --release -p c2gan --example train_toy
//! cargo run --release -p c2gan --example translate_pose
//! ```
//!
//! or the `c2gan` binary (`generate-data`, `train`, `evaluate`, `translate`,
//! `ablate`).

pub mod autodiff;
pub mod commands;
pub mod dataset;
mod error;
pub mod keypoints;
pub mod metrics;
pub mod networks;
pub mod objectives;
mod rng;
pub mod runconfig;
pub mod trainer;

pub use error::{Error, Result};
