use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{resize_to, LabelVolume, Volume3D, VolumeHeader};

/// Default dilation of the coarse bounding box, voxels.
pub const ROI_MARGIN: usize = 8;

/// Axis-aligned box of voxels; both corners are inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoiBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl RoiBox {
    pub fn new(lo: [usize; 3], hi: [usize; 3], shape: [usize; 3]) -> Result<Self> {
        let b = RoiBox { lo, hi };
        b.check(shape)?;
        Ok(b)
    }

    /// The whole grid.
    pub fn whole(shape: [usize; 3]) -> Self {
        RoiBox {
            lo: [0; 3],
            hi: shape.map(|s| s.saturating_sub(1)),
        }
    }

    pub fn check(&self, shape: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if self.lo[a] > self.hi[a] || self.hi[a] >= shape[a] {
                return Err(Error::InvalidArgument(format!(
                    "ROI {:?}..={:?} is not a box inside {shape:?}",
                    self.lo, self.hi
                )));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] - self.lo[a] + 1)
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] <= self.hi[a])
    }

    /// Does the cube `[origin, origin + size)` overlap the box?
    pub fn intersects_cube(&self, origin: [isize; 3], size: usize) -> bool {
        (0..3).all(|a| origin[a] <= self.hi[a] as isize && origin[a] + size as isize > self.lo[a] as isize)
    }
}

/// Tight bounding box of `labels > 0`, or `None` when there is no foreground.
pub fn foreground_bbox(mask: &LabelVolume) -> Option<RoiBox> {
    let [_, ny, nx] = mask.shape();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0; 3];
    for (i, &l) in mask.labels().iter().enumerate() {
        if l > 0 {
            let p = [i / (ny * nx), (i / nx) % ny, i % nx];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    (lo[0] != usize::MAX).then_some(RoiBox { lo, hi })
}

/// Maps a coarse-grid mask onto the original grid (nearest neighbour) and
/// returns its foreground bounding box dilated by `margin`, clipped to the grid.
pub fn coarse_to_roi(coarse_mask: &LabelVolume, original: &VolumeHeader, margin: usize) -> Result<RoiBox> {
    let up = resize_to(coarse_mask, original.shape)?;
    let b = foreground_bbox(&up).ok_or(Error::EmptyForeground)?;
    Ok(RoiBox {
        lo: b.lo.map(|v| v.saturating_sub(margin)),
        hi: [0, 1, 2].map(|a| (b.hi[a] + margin).min(original.shape[a] - 1)),
    })
}

/// Copies the cube `[origin, origin + size)`; voxels outside the volume read as 0.
pub fn crop_image(v: &Volume3D, origin: [isize; 3], size: usize) -> Volume3D {
    let data = crop(v.voxels(), v.shape(), origin, size, 0.0);
    Volume3D::new([size; 3], v.spacing(), data).expect("cube shape")
}

/// Label counterpart of [`crop_image`]; padding is background.
pub fn crop_labels(v: &LabelVolume, origin: [isize; 3], size: usize) -> LabelVolume {
    let data = crop(v.labels(), v.shape(), origin, size, 0);
    LabelVolume::new([size; 3], v.spacing(), data).expect("labels copied from a valid mask")
}

pub(crate) fn crop<T: Copy>(src: &[T], shape: [usize; 3], origin: [isize; 3], size: usize, fill: T) -> Vec<T> {
    let [nz, ny, nx] = shape.map(|s| s as isize);
    let mut out = vec![fill; size * size * size];
    for dz in 0..size {
        let z = origin[0] + dz as isize;
        if !(0..nz).contains(&z) {
            continue;
        }
        for dy in 0..size {
            let y = origin[1] + dy as isize;
            if !(0..ny).contains(&y) {
                continue;
            }
            let row = ((z * ny + y) * nx) as usize;
            let dst = (dz * size + dy) * size;
            for dx in 0..size {
                let x = origin[2] + dx as isize;
                if (0..nx).contains(&x) {
                    out[dst + dx] = src[row + x as usize];
                }
            }
        }
    }
    out
}

/// Inclusive range of admissible patch origins along one axis.
fn origin_range(n: usize, lo: usize, hi: usize, size: usize) -> (usize, usize) {
    if n <= size {
        return (0, 0);
    }
    ((lo + 1).saturating_sub(size), (n - size).min(hi))
}

/// Draws a patch origin uniformly among those whose cube meets `roi` and lies
/// inside the volume. Axes shorter than `size` admit only origin 0 (the
/// remainder is zero padding).
pub fn sample_origin(shape: [usize; 3], roi: &RoiBox, size: usize, rng: &mut impl Rng) -> Result<[usize; 3]> {
    roi.check(shape)?;
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    Ok([0, 1, 2].map(|a| {
        let (lo, hi) = origin_range(shape[a], roi.lo[a], roi.hi[a], size);
        rng.random_range(lo..=hi)
    }))
}

/// A random training patch meeting `roi`, with its aligned labels.
pub fn sample_patch(
    image: &Volume3D,
    labels: &LabelVolume,
    roi: &RoiBox,
    size: usize,
    rng: &mut impl Rng,
) -> Result<(Volume3D, LabelVolume)> {
    if !image.header().same_grid(labels.header()) {
        return Err(Error::ShapeMismatch(format!(
            "image grid {:?} differs from label grid {:?}",
            image.shape(),
            labels.shape()
        )));
    }
    let o = sample_origin(image.shape(), roi, size, rng)?.map(|v| v as isize);
    Ok((crop_image(image, o, size), crop_labels(labels, o, size)))
}
