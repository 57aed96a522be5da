//! Coarse-to-fine training and inference.
//!
//! The coarse network segments a whole volume resized to a small cube; its
//! foreground, mapped back to the original grid and dilated, bounds the
//! region the fine network looks at. The fine network starts from the coarse
//! weights, trains on random patches meeting that region, and at inference
//! tiles the region with overlapping patches. A largest-component filter
//! removes stray islands from the final mask.

mod components;
mod inference;
mod roi;
mod schedule;
mod train;
mod transfer;

pub use components::{label_components, postprocess_largest_component};
pub use inference::{
    argmax_labels, coarse_roi, infer_case, infer_case_traced, predict_probabilities, sliding_window_predict,
    window_origins, InferConfig, InferenceTrace,
};
pub use roi::{coarse_to_roi, crop_image, crop_labels, foreground_bbox, sample_origin, sample_patch, RoiBox, ROI_MARGIN};
pub use schedule::{lr_at, Adam, TrainConfig};
pub use train::{load_split, sample_gradient, sample_loss, train_coarse, train_fine, training_rois, Case, TrainOutcome};
pub use transfer::{transfer_weights, TransferReport};
