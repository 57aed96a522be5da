//! Synthetic dental phantoms with exact labels.
//!
//! Each phantom is a block of medium-intensity "bone" holding a row of
//! axis-aligned ellipsoidal teeth, each touching its neighbours at one contact
//! point as in a dental arch. Every tooth carries a thin tubular canal that runs from
//! near its apex toward the crown along a jittered polyline. Intensities are
//! piecewise constant by label, then blurred (σ = 1 voxel) to soften edges,
//! corrupted with Gaussian noise and clipped to the raw `[0, 2500]` scale.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, whose output
//! stream is fixed by the `rand_chacha` crate independently of platform.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume_io::{self, LabelVolume, Volume3D};

/// Placement attempts before giving up on a spec.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

const RAW_MAX: f64 = 2500.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub n_teeth: usize,
    /// Standard deviation of the additive noise, raw intensity units.
    pub noise_sigma: f64,
    pub seed: u64,
    pub intensity_bone: f64,
    pub intensity_tooth: f64,
    pub intensity_canal: f64,
    /// Gaussian blur before noise; switch off to inspect the piecewise-constant image.
    pub blur: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            shape: [96; 3],
            spacing_mm: [0.4; 3],
            n_teeth: 6,
            noise_sigma: 60.0,
            seed: 0,
            intensity_bone: 1200.0,
            intensity_tooth: 1900.0,
            intensity_canal: 400.0,
            blur: true,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        PhantomSpec { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phantom: {m}")));
        if self.shape.iter().any(|&s| s < 32) {
            return bad(format!("shape {:?} must be at least 32 per axis", self.shape));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("spacing {:?} must be positive", self.spacing_mm));
        }
        if self.n_teeth == 0 {
            return bad("n_teeth must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} must be nonnegative", self.noise_sigma));
        }
        let ints = [self.intensity_canal, self.intensity_bone, self.intensity_tooth];
        if ints.iter().any(|&i| !(0.0..=RAW_MAX).contains(&i)) {
            return bad(format!("intensities {ints:?} must lie in [0, 2500]"));
        }
        if !(ints[0] < ints[1] && ints[1] < ints[2]) {
            return bad("intensities must satisfy canal < bone < tooth".into());
        }
        Ok(())
    }
}

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Clone, Debug)]
struct Tooth {
    center: [f64; 3],
    semi: [f64; 3],
    canal: Vec<[f64; 3]>,
    canal_radius: f64,
}

impl Tooth {
    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.semi[a]).powi(2)).sum()
    }

    /// Inclusive voxel bounding box, clipped to the grid.
    fn bbox(&self, shape: [usize; 3]) -> ([usize; 3], [usize; 3]) {
        let lo = [0, 1, 2].map(|a| (self.center[a] - self.semi[a]).floor().max(0.0) as usize);
        let hi = [0, 1, 2].map(|a| ((self.center[a] + self.semi[a]).ceil() as usize).min(shape[a] - 1));
        (lo, hi)
    }

    fn canal_distance(&self, p: [f64; 3]) -> f64 {
        self.canal
            .windows(2)
            .map(|s| segment_distance(p, s[0], s[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 > 0.0 {
        (ab.iter().zip(&ap).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (0..3).map(|i| (ap[i] - t * ab[i]).powi(2)).sum::<f64>().sqrt()
}

/// Narrowest tooth, in voxels, that still leaves room for a canal.
const MIN_TOOTH_WIDTH: f64 = 5.0;

/// Lays the teeth out side by side along x, like a straightened dental arch.
///
/// All teeth share one integer `(z, y)` centre line. Neighbours meet at
/// contact planes on half-integer x, so the two voxels flanking a contact
/// belong one to each tooth and are face neighbours: the ellipsoids never
/// overlap, yet the labelled foreground is a single 26-connected region.
fn place_teeth(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Tooth>> {
    let s = spec.shape.map(|v| v as f64);
    let n = spec.n_teeth;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let span = rng.random_range(0.7..0.9) * (s[2] - 4.0);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..1.2)).collect();
        let total: f64 = weights.iter().sum();
        let origin = (s[2] - span) / 2.0;
        let mut cum = 0.0;
        let mut contacts = vec![origin.floor() + 0.5];
        for w in &weights {
            cum += w;
            contacts.push((origin + span * cum / total).floor() + 0.5);
        }
        if contacts.windows(2).any(|c| c[1] - c[0] < MIN_TOOTH_WIDTH) {
            continue;
        }
        let semi: Vec<[f64; 3]> = contacts
            .windows(2)
            .map(|c| {
                let sx = (c[1] - c[0]) / 2.0;
                [
                    (rng.random_range(0.16..0.24) * s[0]).min(s[0] / 2.0 - 2.0),
                    (sx * rng.random_range(0.8..1.2)).min(s[1] / 2.0 - 2.0),
                    sx,
                ]
            })
            .collect();
        let centre_line = [0, 1].map(|a| {
            let m = semi.iter().map(|t| t[a]).fold(0.0, f64::max) + 2.0;
            let c = if s[a] - m > m { rng.random_range(m..(s[a] - m)) } else { s[a] / 2.0 };
            c.round()
        });
        let teeth = semi
            .iter()
            .zip(contacts.windows(2))
            .map(|(&semi, c)| {
                let center = [centre_line[0], centre_line[1], (c[0] + c[1]) / 2.0];
                // Canal: apex (low z) toward the crown, jittered laterally.
                let jitter = 0.2 * semi[1].min(semi[2]);
                let (z0, z1) = (center[0] - 0.85 * semi[0], center[0] + 0.35 * semi[0]);
                let canal = (0..5)
                    .map(|k| {
                        let z = z0 + (z1 - z0) * k as f64 / 4.0;
                        [
                            z,
                            center[1] + rng.random_range(-jitter..=jitter),
                            center[2] + rng.random_range(-jitter..=jitter),
                        ]
                    })
                    .collect();
                Tooth {
                    center,
                    semi,
                    canal,
                    canal_radius: rng.random_range(1.0..=2.0),
                }
            })
            .collect();
        return Ok(teeth);
    }
    Err(Error::Placement {
        n_teeth: n,
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

fn rasterize(shape: [usize; 3], teeth: &[Tooth]) -> Vec<u8> {
    let [_, ny, nx] = shape;
    let mut labels = vec![0u8; shape.iter().product()];
    for t in teeth {
        let (lo, hi) = t.bbox(shape);
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let p = [z as f64, y as f64, x as f64];
                    if t.level(p) >= 1.0 {
                        continue;
                    }
                    let i = (z * ny + y) * nx + x;
                    labels[i] = if t.canal_distance(p) <= t.canal_radius { 2 } else { 1 };
                }
            }
        }
    }
    labels
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders.
fn blur(data: &mut [f64], shape: [usize; 3], sigma: f64) {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for axis in 0..3 {
        let n = shape[axis] as isize;
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        for o in 0..outer {
            for i in 0..n {
                for s in 0..stride {
                    let mut acc = 0.0;
                    for (j, w) in k.iter().enumerate() {
                        let src = (i + j as isize - r).clamp(0, n - 1) as usize;
                        acc += w * data[(o * n as usize + src) * stride + s];
                    }
                    tmp[(o * n as usize + i as usize) * stride + s] = acc;
                }
            }
        }
        data.copy_from_slice(&tmp);
    }
}

/// Image and exact labels for one phantom.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume3D, LabelVolume)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let teeth = place_teeth(spec, &mut rng)?;
    let labels = rasterize(spec.shape, &teeth);
    let level = |l: u8| match l {
        1 => spec.intensity_tooth,
        2 => spec.intensity_canal,
        _ => spec.intensity_bone,
    };
    let mut img: Vec<f64> = labels.iter().map(|&l| level(l)).collect();
    if spec.blur {
        blur(&mut img, spec.shape, 1.0);
    }
    if spec.noise_sigma > 0.0 {
        for v in img.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += spec.noise_sigma * z;
        }
    }
    let voxels = img.into_iter().map(|v| v.clamp(0.0, RAW_MAX) as f32).collect();
    Ok((
        Volume3D::new(spec.shape, spec.spacing_mm, voxels)?,
        LabelVolume::new(spec.shape, spec.spacing_mm, labels)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub stem: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub cases: Vec<CaseEntry>,
    pub spec: PhantomSpec,
    pub base_seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn stems(&self, split: Split) -> impl Iterator<Item = &str> {
        self.cases.iter().filter(move |c| c.split == split).map(|c| c.stem.as_str())
    }
}

pub fn case_stem(index: usize) -> String {
    format!("case_{index:03}")
}

pub fn image_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}_image"))
}

pub fn label_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}_label"))
}

/// Fixed-order 70/15/15 split (rounded half up; test takes the remainder).
pub fn split_for(index: usize, n_cases: usize) -> Split {
    let n_train = (0.7 * n_cases as f64 + 0.5).floor() as usize;
    let n_val = (0.15 * n_cases as f64 + 0.5).floor() as usize;
    if index < n_train {
        Split::Train
    } else if index < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Writes `n_cases` phantoms (seed `base_seed + i`) and `manifest.json` into `out_dir`.
pub fn generate_dataset(n_cases: usize, base_seed: u64, template: &PhantomSpec, out_dir: &Path) -> Result<Manifest> {
    if n_cases == 0 {
        return Err(Error::InvalidArgument("n_cases must be positive".into()));
    }
    template.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut cases = Vec::with_capacity(n_cases);
    for i in 0..n_cases {
        let stem = case_stem(i);
        let (img, lab) = generate_phantom(&template.with_seed(base_seed.wrapping_add(i as u64)))?;
        volume_io::write_image(&img, image_path(out_dir, &stem))?;
        volume_io::write_labels(&lab, label_path(out_dir, &stem))?;
        log::debug!("wrote phantom {stem}");
        cases.push(CaseEntry {
            stem,
            split: split_for(i, n_cases),
        });
    }
    let manifest = Manifest {
        cases,
        spec: template.clone(),
        base_seed,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// SHA-256 over the manifest and every file it references, hex encoded.
pub fn dataset_digest(dir: &Path) -> Result<String> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = Manifest::load(&manifest_path)?;
    let mut h = Sha256::new();
    let mut feed = |p: PathBuf| -> Result<()> {
        h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        Ok(())
    };
    feed(manifest_path.clone())?;
    for c in &manifest.cases {
        for stem in [image_path(dir, &c.stem), label_path(dir, &c.stem)] {
            for ext in ["json", "raw"] {
                feed(stem.with_extension(ext))?;
            }
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> PhantomSpec {
        PhantomSpec {
            shape: [48, 40, 40],
            n_teeth: 3,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_phantom(&small(3)).unwrap();
        let b = generate_phantom(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&small(4)).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn noiseless_unblurred_intensity_follows_labels() {
        let spec = PhantomSpec {
            noise_sigma: 0.0,
            blur: false,
            ..small(1)
        };
        let (img, lab) = generate_phantom(&spec).unwrap();
        for (&v, &l) in img.voxels().iter().zip(lab.labels()) {
            let want = [spec.intensity_bone, spec.intensity_tooth, spec.intensity_canal][l as usize];
            assert_eq!(v as f64, want);
        }
    }

    #[test]
    fn canal_voxels_lie_inside_a_tooth() {
        // Exhaustive scan at the default size: replay the placement and test
        // every canal voxel against every ellipsoid directly.
        let spec = PhantomSpec { seed: 11, ..Default::default() };
        let (_, lab) = generate_phantom(&spec).unwrap();
        let teeth = place_teeth(&spec, &mut ChaCha8Rng::seed_from_u64(spec.seed)).unwrap();
        let [_, ny, nx] = spec.shape;
        let mut canal = 0;
        for (i, &l) in lab.labels().iter().enumerate() {
            if l == 2 {
                canal += 1;
                let p = [(i / (ny * nx)) as f64, ((i / nx) % ny) as f64, (i % nx) as f64];
                assert!(teeth.iter().any(|t| t.level(p) < 1.0), "canal voxel {p:?} outside every tooth");
            }
        }
        assert!(canal > 0);
        assert!(lab.count(0) > lab.count(1) && lab.count(1) > lab.count(2));
    }

    #[test]
    fn spec_validation() {
        for spec in [
            PhantomSpec { shape: [31, 64, 64], ..Default::default() },
            PhantomSpec { n_teeth: 0, ..Default::default() },
            PhantomSpec { intensity_canal: 1300.0, ..Default::default() },
            PhantomSpec { intensity_tooth: 2600.0, ..Default::default() },
            PhantomSpec { noise_sigma: -1.0, ..Default::default() },
        ] {
            assert!(matches!(generate_phantom(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn overcrowded_spec_fails_placement() {
        let spec = PhantomSpec {
            shape: [32; 3],
            n_teeth: 40,
            ..Default::default()
        };
        assert!(matches!(generate_phantom(&spec), Err(Error::Placement { .. })));
    }

    #[test]
    fn split_is_seventy_fifteen_fifteen() {
        let splits: Vec<Split> = (0..20).map(|i| split_for(i, 20)).collect();
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 14);
        assert_eq!(splits.iter().filter(|s| **s == Split::Val).count(), 3);
        assert_eq!(splits.iter().filter(|s| **s == Split::Test).count(), 3);
        assert_eq!(split_for(0, 1), Split::Train);
    }
}
