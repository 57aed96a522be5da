//! Coarse-to-fine 3D segmentation of teeth and root canals in CBCT volumes.
//!
//! * [`volume_io`] — volume files, resampling, intensity normalisation
//! * [`phantom`] — synthetic scans with exact labels
//! * [`tensor`] — tensors and a reverse-mode autodiff tape
//! * [`model`] — the U-Net with ZXYformer skips, parameters, checkpoints
//! * [`losses`] — cross entropy, soft Dice and the two-head uncertainty term
//! * [`pipeline`] — training of both stages and two-stage inference
//! * [`metrics`] — Dice, Jaccard, sensitivity, HD95, ASD
//! * [`experiment`] — whole experiments and the ablation grid from one config
//!
//! The guide in `book/` walks through each part with runnable examples.

pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod tensor;
pub mod volume_io;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
