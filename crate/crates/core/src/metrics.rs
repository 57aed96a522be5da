//! Overlap and surface-distance metrics for label volumes.
//!
//! Overlap metrics follow the usual set definitions, with two conventions for
//! empty sets: if prediction and ground truth are both empty every ratio is 1;
//! if only the ground truth is empty, sensitivity is undefined.
//!
//! The surface of a mask is the set of its voxels having at least one of the
//! six face neighbours outside the mask (the volume border counts as outside).
//! For every surface voxel of either mask the distance, in millimetres, to the
//! nearest surface voxel of the other mask is taken; HD95 is the 95th
//! percentile (linear interpolation between order statistics) of all those
//! distances pooled together, and ASD their mean. Nearest distances come from
//! an exact separable Euclidean distance transform that honours anisotropic
//! spacing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::LabelVolume;

/// Dice, Jaccard and sensitivity of one binary mask pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub dice: f64,
    pub jaccard: f64,
    /// `None` when the ground truth is empty but the prediction is not.
    pub sensitivity: Option<f64>,
}

pub fn overlap_metrics(pred: &[bool], gt: &[bool]) -> Result<Overlap> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} voxels", pred.len(), gt.len())));
    }
    let (mut p, mut g, mut i) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.iter().zip(gt) {
        p += a as u64;
        g += b as u64;
        i += (a && b) as u64;
    }
    if p == 0 && g == 0 {
        return Ok(Overlap {
            dice: 1.0,
            jaccard: 1.0,
            sensitivity: Some(1.0),
        });
    }
    Ok(Overlap {
        dice: 2.0 * i as f64 / (p + g) as f64,
        jaccard: i as f64 / (p + g - i) as f64,
        sensitivity: (g > 0).then(|| i as f64 / g as f64),
    })
}

/// Mask voxels with a face neighbour outside the mask or the grid.
pub fn surface_voxels(mask: &[bool], shape: [usize; 3]) -> Vec<bool> {
    let [nz, ny, nx] = shape;
    assert_eq!(mask.len(), nz * ny * nx, "mask length");
    let at = |z: usize, y: usize, x: usize| mask[(z * ny + y) * nx + x];
    let mut out = vec![false; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if !mask[i] {
                    continue;
                }
                out[i] = z == 0
                    || y == 0
                    || x == 0
                    || z + 1 == nz
                    || y + 1 == ny
                    || x + 1 == nx
                    || !at(z - 1, y, x)
                    || !at(z + 1, y, x)
                    || !at(z, y - 1, x)
                    || !at(z, y + 1, x)
                    || !at(z, y, x - 1)
                    || !at(z, y, x + 1);
            }
        }
    }
    out
}

/// In-place 1-D squared distance transform of `f` (sample spacing `h`):
/// `f(p) ← min_q (h(p − q))² + f(q)`. Infinite entries are not sites.
fn edt_1d(f: &mut [f64], h: f64, sites: &mut Vec<usize>, bounds: &mut Vec<f64>, copy: &mut Vec<f64>) {
    copy.clear();
    copy.extend_from_slice(f);
    sites.clear();
    bounds.clear();
    let pos = |q: usize| q as f64 * h;
    // Intersection abscissa of the parabolas rooted at sites q and r (q < r).
    let cross = |q: usize, r: usize| {
        ((copy[r] + pos(r) * pos(r)) - (copy[q] + pos(q) * pos(q))) / (2.0 * (pos(r) - pos(q)))
    };
    // `bounds[k]` separates the regions of `sites[k]` and `sites[k + 1]`.
    for q in (0..f.len()).filter(|&q| copy[q].is_finite()) {
        while let Some(&last) = sites.last() {
            let s = cross(last, q);
            if bounds.last().is_some_and(|&b| s <= b) {
                sites.pop();
                bounds.pop();
            } else {
                bounds.push(s);
                break;
            }
        }
        sites.push(q);
    }
    if sites.is_empty() {
        return;
    }
    let mut k = 0;
    for (p, out) in f.iter_mut().enumerate() {
        let x = pos(p);
        while k < bounds.len() && bounds[k] < x {
            k += 1;
        }
        let q = sites[k];
        let d = x - pos(q);
        *out = d * d + copy[q];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest `site`.
/// All entries are infinite when there is no site.
pub fn squared_distance_transform(site: &[bool], shape: [usize; 3], spacing_mm: [f64; 3]) -> Vec<f64> {
    let [nz, ny, nx] = shape;
    let mut d: Vec<f64> = site.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut sites, mut bounds, mut copy) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    // x lines are contiguous
    for row in d.chunks_mut(nx) {
        edt_1d(row, spacing_mm[2], &mut sites, &mut bounds, &mut copy);
    }
    for z in 0..nz {
        for x in 0..nx {
            line.clear();
            line.extend((0..ny).map(|y| d[(z * ny + y) * nx + x]));
            edt_1d(&mut line, spacing_mm[1], &mut sites, &mut bounds, &mut copy);
            for (y, &v) in line.iter().enumerate() {
                d[(z * ny + y) * nx + x] = v;
            }
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            line.clear();
            line.extend((0..nz).map(|z| d[(z * ny + y) * nx + x]));
            edt_1d(&mut line, spacing_mm[0], &mut sites, &mut bounds, &mut copy);
            for (z, &v) in line.iter().enumerate() {
                d[(z * ny + y) * nx + x] = v;
            }
        }
    }
    d
}

/// Linear-interpolation percentile (`q ∈ [0, 1]`) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Nearest-surface distances from each surface voxel of `a` to the surface of
/// `b`, followed by those from `b` to `a`.
pub fn bidirectional_surface_distances(
    a: &[bool],
    b: &[bool],
    shape: [usize; 3],
    spacing_mm: [f64; 3],
) -> Result<Vec<f64>> {
    let n: usize = shape.iter().product();
    if a.len() != n || b.len() != n {
        return Err(Error::ShapeMismatch(format!("masks of {} and {} voxels on a {shape:?} grid", a.len(), b.len())));
    }
    if !a.contains(&true) || !b.contains(&true) {
        return Err(Error::EmptyMask);
    }
    let sa = surface_voxels(a, shape);
    let sb = surface_voxels(b, shape);
    let da = squared_distance_transform(&sa, shape, spacing_mm);
    let db = squared_distance_transform(&sb, shape, spacing_mm);
    let mut out: Vec<f64> = (0..n).filter(|&i| sa[i]).map(|i| db[i].sqrt()).collect();
    out.extend((0..n).filter(|&i| sb[i]).map(|i| da[i].sqrt()));
    Ok(out)
}

/// HD95 and ASD, millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub hd95_mm: f64,
    pub asd_mm: f64,
}

pub fn surface_distances(pred: &[bool], gt: &[bool], shape: [usize; 3], spacing_mm: [f64; 3]) -> Result<SurfaceDistances> {
    let d = bidirectional_surface_distances(pred, gt, shape, spacing_mm)?;
    Ok(SurfaceDistances {
        hd95_mm: percentile(&d, 0.95).expect("nonempty surfaces"),
        asd_mm: d.iter().sum::<f64>() / d.len() as f64,
    })
}

/// All five metrics for one class. Undefined values serialise as `null`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dice: f64,
    pub jaccard: f64,
    pub hd95_mm: Option<f64>,
    pub asd_mm: Option<f64>,
    pub sensitivity: Option<f64>,
}

/// Metrics of one case for the two foreground classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case: String,
    pub tooth: ClassMetrics,
    pub root_canal: ClassMetrics,
}

impl MetricsReport {
    pub fn class(&self, label: u8) -> Option<&ClassMetrics> {
        match label {
            1 => Some(&self.tooth),
            2 => Some(&self.root_canal),
            _ => None,
        }
    }
}

pub fn class_metrics(pred: &LabelVolume, gt: &LabelVolume, label: u8) -> Result<ClassMetrics> {
    let p = pred.class_mask(label);
    let g = gt.class_mask(label);
    let o = overlap_metrics(&p, &g)?;
    let s = match surface_distances(&p, &g, gt.shape(), gt.spacing()) {
        Ok(s) => Some(s),
        Err(Error::EmptyMask) => None,
        Err(e) => return Err(e),
    };
    Ok(ClassMetrics {
        dice: o.dice,
        jaccard: o.jaccard,
        hd95_mm: s.map(|s| s.hd95_mm),
        asd_mm: s.map(|s| s.asd_mm),
        sensitivity: o.sensitivity,
    })
}

/// Tooth (label 1) and root canal (label 2) metrics of `pred` against `gt`.
pub fn evaluate_case(case: &str, pred: &LabelVolume, gt: &LabelVolume) -> Result<MetricsReport> {
    if !pred.header().same_grid(gt.header()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction grid {:?} @ {:?} mm differs from ground truth {:?} @ {:?} mm",
            pred.shape(),
            pred.spacing(),
            gt.shape(),
            gt.spacing()
        )));
    }
    Ok(MetricsReport {
        case: case.to_string(),
        tooth: class_metrics(pred, gt, 1)?,
        root_canal: class_metrics(pred, gt, 2)?,
    })
}

/// Mean and sample standard deviation over the cases where a value is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Option<f64>,
    /// `None` for fewer than two values.
    pub std: Option<f64>,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return MeanStd { mean: None, std: None, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        MeanStd { mean: Some(mean), std, n }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub dice: MeanStd,
    pub jaccard: MeanStd,
    pub hd95_mm: MeanStd,
    pub asd_mm: MeanStd,
    pub sensitivity: MeanStd,
}

impl ClassSummary {
    pub fn of<'a>(items: impl Iterator<Item = &'a ClassMetrics> + Clone) -> Self {
        ClassSummary {
            dice: MeanStd::of(items.clone().map(|m| m.dice)),
            jaccard: MeanStd::of(items.clone().map(|m| m.jaccard)),
            hd95_mm: MeanStd::of(items.clone().filter_map(|m| m.hd95_mm)),
            asd_mm: MeanStd::of(items.clone().filter_map(|m| m.asd_mm)),
            sensitivity: MeanStd::of(items.filter_map(|m| m.sensitivity)),
        }
    }
}

/// Mean ± sample standard deviation across cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_cases: usize,
    pub tooth: ClassSummary,
    pub root_canal: ClassSummary,
    pub cases: Vec<MetricsReport>,
}

pub fn aggregate(cases: Vec<MetricsReport>) -> AggregateReport {
    AggregateReport {
        n_cases: cases.len(),
        tooth: ClassSummary::of(cases.iter().map(|c| &c.tooth)),
        root_canal: ClassSummary::of(cases.iter().map(|c| &c.root_canal)),
        cases,
    }
}
