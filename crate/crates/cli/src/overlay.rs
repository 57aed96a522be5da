use image::{Rgb, RgbImage};
use zxyseg::volume_io::{LabelVolume, Volume3D};

use crate::{CliError, CliResult};

/// Tooth is drawn green, root canal red.
pub const CLASS_COLOURS: [[u8; 3]; 2] = [[0, 255, 0], [255, 0, 0]];

/// Weight of the class colour in the blend.
pub const ALPHA: f32 = 0.5;

/// Renders slice `index` along volume axis `axis` (0 = z, 1 = y, 2 = x).
///
/// The slice is min–max scaled to grey, then labelled voxels are blended with
/// their class colour. Rows run along the slower remaining axis.
pub fn render_slice(img: &Volume3D, labels: &LabelVolume, axis: usize, index: usize) -> CliResult<RgbImage> {
    let shape = img.shape();
    if index >= shape[axis] {
        return Err(CliError::new(
            "invalid_argument",
            format!("slice {index} is outside axis of length {}", shape[axis]),
        ));
    }
    let (ra, ca) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let at = |r: usize, c: usize| {
        let mut p = [0; 3];
        p[axis] = index;
        p[ra] = r;
        p[ca] = c;
        p
    };
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for r in 0..shape[ra] {
        for c in 0..shape[ca] {
            let [z, y, x] = at(r, c);
            let v = img.get(z, y, x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = RgbImage::new(shape[ca] as u32, shape[ra] as u32);
    for (c, r, px) in out.enumerate_pixels_mut() {
        let [z, y, x] = at(r as usize, c as usize);
        let g = ((img.get(z, y, x) - lo) * scale).round();
        let grey = [g; 3];
        let rgb = match labels.get(z, y, x) {
            0 => grey,
            l => {
                let colour = CLASS_COLOURS[(l - 1) as usize];
                std::array::from_fn(|k| (1.0 - ALPHA) * grey[k] + ALPHA * colour[k] as f32)
            }
        };
        *px = Rgb(rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}
