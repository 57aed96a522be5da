use log::warn;
use serde::{Deserialize, Serialize};

use super::components::postprocess_largest_component;
use super::roi::{coarse_to_roi, crop, RoiBox, ROI_MARGIN};
use crate::error::{Error, Result};
use crate::losses::softmax;
use crate::model::{network_forward, Checkpoint};
use crate::tensor::Tensor;
use crate::volume_io::{clip_and_normalize, resize_to, LabelVolume, Volume3D, CLIP_HI, CLIP_LO};

/// Settings of the two-stage inference path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    /// Edge length of the grid the coarse network sees.
    pub coarse_size: usize,
    /// Sliding-window patch edge for the fine network.
    pub patch_size: usize,
    /// Window step; `None` means half a patch.
    pub stride: Option<usize>,
    pub margin: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            coarse_size: 64,
            patch_size: 64,
            stride: None,
            margin: ROI_MARGIN,
            clip_lo: CLIP_LO,
            clip_hi: CLIP_HI,
        }
    }
}

impl InferConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or((self.patch_size / 2).max(1))
    }
}

/// Softmax of the main head on one `[Z, Y, X]` block.
pub fn predict_probabilities(block: &Volume3D, ckpt: &Checkpoint) -> Result<Tensor<f32>> {
    let [z, y, x] = block.shape();
    let input = Tensor::from_vec(&[1, z, y, x], block.voxels().to_vec())?;
    let out = network_forward(&input, &ckpt.params, &ckpt.config)?;
    Ok(softmax(&out.main_logits))
}

/// Window origins along one axis covering `lo..=hi` of an axis of length `n`.
///
/// Windows start at `lo` and advance by `stride`; the last one is pulled back
/// so it ends exactly at `hi`. A range no longer than the patch gets a single
/// window, shifted left if needed to stay inside the axis (and at 0 when the
/// axis itself is shorter than the patch, which is then zero padded).
pub fn window_origins(lo: usize, hi: usize, n: usize, patch: usize, stride: usize) -> Vec<usize> {
    assert!(lo <= hi && hi < n && patch > 0 && stride > 0);
    if hi + 1 - lo <= patch {
        return vec![lo.min(n.saturating_sub(patch))];
    }
    let last = hi + 1 - patch;
    let mut v: Vec<usize> = (lo..last).step_by(stride).collect();
    v.push(last);
    v
}

/// Tiles `roi` with overlapping patches and averages the fine network's
/// softmax where they overlap. Voxels outside `roi` get background
/// probability 1. Returns `[C, Z, Y, X]`.
pub fn sliding_window_predict(
    image: &Volume3D,
    roi: &RoiBox,
    ckpt: &Checkpoint,
    patch: usize,
    stride: usize,
) -> Result<Tensor<f32>> {
    let shape = image.shape();
    roi.check(shape)?;
    if patch == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch and stride must be positive".into()));
    }
    let c = ckpt.config.n_classes;
    let n: usize = shape.iter().product();
    let [_, ny, nx] = shape;
    let mut sum = vec![0.0f64; c * n];
    let mut count = vec![0u32; n];
    let axes: [Vec<usize>; 3] = [0, 1, 2].map(|a| window_origins(roi.lo[a], roi.hi[a], shape[a], patch, stride));
    for &oz in &axes[0] {
        for &oy in &axes[1] {
            for &ox in &axes[2] {
                let origin = [oz, oy, ox];
                let data = crop(image.voxels(), shape, origin.map(|v| v as isize), patch, 0.0);
                let block = Volume3D::new([patch; 3], image.spacing(), data)?;
                let p = predict_probabilities(&block, ckpt)?;
                let pn = patch * patch * patch;
                for dz in 0..patch {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            let g = [oz + dz, oy + dy, ox + dx];
                            if !roi.contains(g) {
                                continue;
                            }
                            let gi = (g[0] * ny + g[1]) * nx + g[2];
                            let li = (dz * patch + dy) * patch + dx;
                            count[gi] += 1;
                            for k in 0..c {
                                sum[k * n + gi] += p.data()[k * pn + li] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![0.0f32; c * n];
    for i in 0..n {
        if count[i] == 0 {
            out[i] = 1.0;
        } else {
            for k in 0..c {
                out[k * n + i] = (sum[k * n + i] / count[i] as f64) as f32;
            }
        }
    }
    Tensor::from_vec(&[c, shape[0], shape[1], shape[2]], out)
}

/// Per-voxel most probable class; ties go to the lowest class index.
pub fn argmax_labels(probs: &Tensor<f32>, spacing_mm: [f64; 3]) -> Result<LabelVolume> {
    let c = probs.channels();
    let n = probs.voxels();
    let d = probs.data();
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if d[k * n + i] > d[best * n + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelVolume::new(probs.spatial(), spacing_mm, labels)
}

/// Runs the coarse network on a normalised image and maps its foreground to a
/// box on the image grid. Falls back to the whole volume (second value
/// `true`) when the coarse prediction is empty.
pub fn coarse_roi(normalized: &Volume3D, coarse: &Checkpoint, coarse_size: usize, margin: usize) -> Result<(RoiBox, bool)> {
    let small = resize_to(normalized, [coarse_size; 3])?;
    let probs = predict_probabilities(&small, coarse)?;
    let mask = argmax_labels(&probs, small.spacing())?;
    match coarse_to_roi(&mask, normalized.header(), margin) {
        Ok(roi) => Ok((roi, false)),
        Err(Error::EmptyForeground) => {
            warn!("coarse prediction is empty; using the whole volume as ROI");
            Ok((RoiBox::whole(normalized.shape()), true))
        }
        Err(e) => Err(e),
    }
}

/// What [`infer_case_traced`] did on the way to the mask.
#[derive(Clone, Debug)]
pub struct InferenceTrace {
    pub labels: LabelVolume,
    pub roi: RoiBox,
    /// The coarse stage found no foreground and the whole volume was used.
    pub fallback: bool,
}

/// Full two-stage segmentation of a raw image.
pub fn infer_case(image: &Volume3D, coarse: &Checkpoint, fine: &Checkpoint, cfg: &InferConfig) -> Result<LabelVolume> {
    Ok(infer_case_traced(image, coarse, fine, cfg)?.labels)
}

pub fn infer_case_traced(
    image: &Volume3D,
    coarse: &Checkpoint,
    fine: &Checkpoint,
    cfg: &InferConfig,
) -> Result<InferenceTrace> {
    image.validate()?;
    let norm = clip_and_normalize(image, cfg.clip_lo, cfg.clip_hi)?;
    let (roi, fallback) = coarse_roi(&norm, coarse, cfg.coarse_size, cfg.margin)?;
    let probs = sliding_window_predict(&norm, &roi, fine, cfg.patch_size, cfg.stride())?;
    let raw = argmax_labels(&probs, image.spacing())?;
    Ok(InferenceTrace {
        labels: postprocess_largest_component(&raw),
        roi,
        fallback,
    })
}
