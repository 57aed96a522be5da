//! Volume files, resampling and intensity normalisation.
//!
//! A volume lives in two files sharing a stem: `<stem>.json` holds the header
//! and `<stem>.raw` the little-endian voxel payload in `[Z, Y, X]` order with x
//! fastest. Images are `float32`, label masks `uint8` with classes
//! `{0 background, 1 tooth, 2 root canal}`.
//!
//! Resampling uses the align-corners convention: output voxel `i` on an axis
//! of length `m` reads input coordinate `i·(n−1)/(m−1)`, so the corner voxels
//! of input and output coincide. Images interpolate trilinearly, labels take
//! the nearest voxel (round half up).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AXIS_ORDER: &str = "zyx-x-fastest";

/// Highest valid class index.
pub const MAX_LABEL: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Uint8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Uint8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    /// `[Z, Y, X]`
    pub shape: [usize; 3],
    /// `[sz, sy, sx]` in millimetres
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    pub order: String,
}

impl VolumeHeader {
    pub fn new(shape: [usize; 3], spacing_mm: [f64; 3], dtype: Dtype) -> Self {
        VolumeHeader {
            shape,
            spacing_mm,
            dtype,
            order: AXIS_ORDER.to_string(),
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(Error::InvalidVolume(format!("shape {:?} has a zero extent", self.shape)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!(
                "spacing {:?} must be positive and finite",
                self.spacing_mm
            )));
        }
        if self.order != AXIS_ORDER {
            return Err(Error::InvalidVolume(format!(
                "axis order {:?} is not {AXIS_ORDER:?}",
                self.order
            )));
        }
        Ok(())
    }

    /// Same grid, other dtype.
    pub fn with_dtype(&self, dtype: Dtype) -> Self {
        VolumeHeader {
            dtype,
            ..self.clone()
        }
    }

    /// Headers describe the same voxel grid (dtype ignored).
    pub fn same_grid(&self, other: &VolumeHeader) -> bool {
        self.shape == other.shape && self.spacing_mm == other.spacing_mm
    }
}

/// Scalar image on a voxel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    header: VolumeHeader,
    voxels: Vec<f32>,
}

impl Volume3D {
    /// Builds an image; the header dtype is forced to `float32`.
    ///
    /// Non-finite voxels are allowed here and rejected by [`Volume3D::validate`],
    /// which every writer calls.
    pub fn new(shape: [usize; 3], spacing_mm: [f64; 3], voxels: Vec<f32>) -> Result<Self> {
        let header = VolumeHeader::new(shape, spacing_mm, Dtype::Float32);
        header.validate()?;
        if voxels.len() != header.voxel_count() {
            return Err(Error::InvalidVolume(format!(
                "{} voxels for shape {shape:?}",
                voxels.len()
            )));
        }
        Ok(Volume3D { header, voxels })
    }

    pub fn filled(shape: [usize; 3], spacing_mm: [f64; 3], value: f32) -> Result<Self> {
        Self::new(shape, spacing_mm, vec![value; shape.iter().product()])
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn shape(&self) -> [usize; 3] {
        self.header.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.header.spacing_mm
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        let [_, ny, nx] = self.header.shape;
        self.voxels[(z * ny + y) * nx + x]
    }

    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        if let Some(i) = self.voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite voxel at linear index {i}")));
        }
        Ok(())
    }
}

/// Class-index mask on a voxel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    header: VolumeHeader,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(shape: [usize; 3], spacing_mm: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        let header = VolumeHeader::new(shape, spacing_mm, Dtype::Uint8);
        header.validate()?;
        if labels.len() != header.voxel_count() {
            return Err(Error::InvalidVolume(format!(
                "{} labels for shape {shape:?}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > MAX_LABEL) {
            return Err(Error::InvalidVolume(format!("label {bad} outside {{0,1,2}}")));
        }
        Ok(LabelVolume { header, labels })
    }

    pub fn zeros(shape: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        Self::new(shape, spacing_mm, vec![0; shape.iter().product()])
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn shape(&self) -> [usize; 3] {
        self.header.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.header.spacing_mm
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        let [_, ny, nx] = self.header.shape;
        self.labels[(z * ny + y) * nx + x]
    }

    /// Binary mask of voxels equal to `class`.
    pub fn class_mask(&self, class: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

/// Either kind of volume, as found on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Image(Volume3D),
    Labels(LabelVolume),
}

impl AnyVolume {
    pub fn header(&self) -> &VolumeHeader {
        match self {
            AnyVolume::Image(v) => v.header(),
            AnyVolume::Labels(v) => v.header(),
        }
    }

    pub fn into_image(self) -> Result<Volume3D> {
        match self {
            AnyVolume::Image(v) => Ok(v),
            AnyVolume::Labels(_) => Err(Error::InvalidVolume("expected a float32 image, found uint8 labels".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Labels(v) => Ok(v),
            AnyVolume::Image(_) => Err(Error::InvalidVolume("expected uint8 labels, found a float32 image".into())),
        }
    }
}

impl From<Volume3D> for AnyVolume {
    fn from(v: Volume3D) -> Self {
        AnyVolume::Image(v)
    }
}

impl From<LabelVolume> for AnyVolume {
    fn from(v: LabelVolume) -> Self {
        AnyVolume::Labels(v)
    }
}

/// Strips a trailing `.json` or `.raw` so either file (or the bare stem) names the volume.
pub fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn sidecars(path: &Path) -> (PathBuf, PathBuf) {
    let stem = stem_of(path);
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut raw = stem.into_os_string();
    raw.push(".raw");
    (json.into(), raw.into())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let (json_path, raw_path) = sidecars(path.as_ref());
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: json_path.clone(),
        message: e.to_string(),
    })?;
    header.validate().map_err(|e| Error::Header {
        path: json_path.clone(),
        message: e.to_string(),
    })?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = (header.voxel_count() * header.dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: raw_path,
            expected,
            found: bytes.len() as u64,
        });
    }
    match header.dtype {
        Dtype::Float32 => {
            let voxels = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let v = Volume3D::new(header.shape, header.spacing_mm, voxels)?;
            v.validate()?;
            Ok(AnyVolume::Image(v))
        }
        Dtype::Uint8 => Ok(AnyVolume::Labels(LabelVolume::new(header.shape, header.spacing_mm, bytes)?)),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Volume3D> {
    read_volume(path)?.into_image()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    read_volume(path)?.into_labels()
}

pub fn write_volume(v: &AnyVolume, path: impl AsRef<Path>) -> Result<()> {
    let (json_path, raw_path) = sidecars(path.as_ref());
    let payload = match v {
        AnyVolume::Image(img) => {
            img.validate()?;
            img.voxels().iter().flat_map(|f| f.to_le_bytes()).collect::<Vec<u8>>()
        }
        AnyVolume::Labels(lab) => {
            lab.header().validate()?;
            lab.labels().to_vec()
        }
    };
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(v.header())?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

pub fn write_image(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    write_volume(&AnyVolume::Image(v.clone()), path)
}

pub fn write_labels(v: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_volume(&AnyVolume::Labels(v.clone()), path)
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Align-corners source coordinate of output index `i`.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out <= 1 || n_in <= 1 {
        0.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

/// Linear resampling of one axis of a `[Z, Y, X]` array.
fn lerp_axis(data: &[f64], shape: [usize; 3], axis: usize, n_out: usize) -> (Vec<f64>, [usize; 3]) {
    let n_in = shape[axis];
    let mut out_shape = shape;
    out_shape[axis] = n_out;
    if n_in == n_out {
        return (data.to_vec(), shape);
    }
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let taps: Vec<(usize, usize, f64)> = (0..n_out)
        .map(|i| {
            let s = source_coord(i, n_in, n_out);
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect();
    let mut out = vec![0.0; outer * n_out * stride];
    for o in 0..outer {
        for (i, &(i0, i1, f)) in taps.iter().enumerate() {
            let a = &data[(o * n_in + i0) * stride..(o * n_in + i0 + 1) * stride];
            let b = &data[(o * n_in + i1) * stride..(o * n_in + i1 + 1) * stride];
            let dst = &mut out[(o * n_out + i) * stride..(o * n_out + i + 1) * stride];
            for ((d, &a), &b) in dst.iter_mut().zip(a).zip(b) {
                // a + f(b - a) returns a exactly when a == b
                *d = a + f * (b - a);
            }
        }
    }
    (out, out_shape)
}

fn nearest_index(i: usize, n_in: usize, n_out: usize) -> usize {
    ((source_coord(i, n_in, n_out) + 0.5).floor() as usize).min(n_in - 1)
}

/// A voxel grid that can be resampled onto another grid of the same physical extent.
pub trait Resample: Sized {
    fn grid(&self) -> &VolumeHeader;
    fn resample_to(&self, shape: [usize; 3], spacing_mm: [f64; 3]) -> Self;
}

impl Resample for Volume3D {
    fn grid(&self) -> &VolumeHeader {
        self.header()
    }

    fn resample_to(&self, shape: [usize; 3], spacing_mm: [f64; 3]) -> Self {
        let mut data: Vec<f64> = self.voxels.iter().map(|&v| v as f64).collect();
        let mut cur = self.shape();
        for axis in (0..3).rev() {
            let (d, s) = lerp_axis(&data, cur, axis, shape[axis]);
            data = d;
            cur = s;
        }
        let voxels = data.into_iter().map(|v| v as f32).collect();
        Volume3D::new(shape, spacing_mm, voxels).expect("resampled grid is valid")
    }
}

impl Resample for LabelVolume {
    fn grid(&self) -> &VolumeHeader {
        self.header()
    }

    fn resample_to(&self, shape: [usize; 3], spacing_mm: [f64; 3]) -> Self {
        let src = self.shape();
        let maps: Vec<Vec<usize>> = (0..3)
            .map(|a| (0..shape[a]).map(|i| nearest_index(i, src[a], shape[a])).collect())
            .collect();
        let mut labels = Vec::with_capacity(shape.iter().product());
        for &z in &maps[0] {
            for &y in &maps[1] {
                let row = (z * src[1] + y) * src[2];
                labels.extend(maps[2].iter().map(|&x| self.labels[row + x]));
            }
        }
        LabelVolume::new(shape, spacing_mm, labels).expect("labels copied from a valid mask")
    }
}

/// Round half up, floored at 1.
fn resampled_len(n: usize, spacing: f64, target: f64) -> usize {
    ((n as f64 * spacing / target + 0.5).floor() as usize).max(1)
}

/// Resamples to isotropic `target_mm` spacing (0.4 mm in the reference setup).
pub fn resample_isotropic<V: Resample>(v: &V, target_mm: f64) -> Result<V> {
    if !(target_mm > 0.0 && target_mm.is_finite()) {
        return Err(Error::InvalidArgument(format!("target spacing {target_mm} must be positive")));
    }
    let h = v.grid();
    let shape = [0, 1, 2].map(|a| resampled_len(h.shape[a], h.spacing_mm[a], target_mm));
    Ok(v.resample_to(shape, [target_mm; 3]))
}

/// Resamples onto a grid of the requested shape, keeping the physical extent.
pub fn resize_to<V: Resample>(v: &V, shape: [usize; 3]) -> Result<V> {
    if shape.contains(&0) {
        return Err(Error::InvalidArgument(format!("target shape {shape:?} must be positive")));
    }
    let h = v.grid();
    let spacing = [0, 1, 2].map(|a| {
        if h.shape[a] == shape[a] {
            h.spacing_mm[a]
        } else {
            h.spacing_mm[a] * h.shape[a] as f64 / shape[a] as f64
        }
    });
    Ok(v.resample_to(shape, spacing))
}

/// Clips intensities to `[lo, hi]` and maps them affinely onto `[0, 1]`.
pub fn clip_and_normalize(v: &Volume3D, lo: f64, hi: f64) -> Result<Volume3D> {
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("clip range [{lo}, {hi}] is empty")));
    }
    let span = hi - lo;
    let voxels = v
        .voxels()
        .iter()
        .map(|&i| ((i as f64).clamp(lo, hi) - lo) / span)
        .map(|x| x as f32)
        .collect();
    Volume3D::new(v.shape(), v.spacing(), voxels)
}

/// Default intensity window of the preprocessing recipe.
pub const CLIP_LO: f64 = 0.0;
pub const CLIP_HI: f64 = 2500.0;
/// Default isotropic spacing of the preprocessing recipe, millimetres.
pub const TARGET_SPACING_MM: f64 = 0.4;

/// Isotropic resample followed by clip-and-normalise.
pub fn preprocess(v: &Volume3D, target_mm: f64, lo: f64, hi: f64) -> Result<Volume3D> {
    clip_and_normalize(&resample_isotropic(v, target_mm)?, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn reads_zero_float_volume() {
        let dir = tmp();
        let stem = dir.path().join("z");
        fs::write(stem.with_extension("json"), r#"{"shape":[2,2,2],"spacing_mm":[1,1,1],"dtype":"float32","order":"zyx-x-fastest"}"#).unwrap();
        fs::write(stem.with_extension("raw"), [0u8; 32]).unwrap();
        let v = read_image(&stem).unwrap();
        assert_eq!(v.voxels(), &[0.0; 8]);
    }

    #[test]
    fn reads_label_payload() {
        let dir = tmp();
        let stem = dir.path().join("l");
        fs::write(stem.with_extension("json"), r#"{"shape":[1,1,3],"spacing_mm":[0.4,0.4,0.4],"dtype":"uint8","order":"zyx-x-fastest"}"#).unwrap();
        fs::write(stem.with_extension("raw"), [0u8, 1, 2]).unwrap();
        let v = read_labels(stem.with_extension("json")).unwrap();
        assert_eq!(v.labels(), &[0, 1, 2]);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let dir = tmp();
        let stem = dir.path().join("bad");
        fs::write(stem.with_extension("json"), r#"{"shape":[4,4,4],"spacing_mm":[1,1,1],"dtype":"float32","order":"zyx-x-fastest"}"#).unwrap();
        fs::write(stem.with_extension("raw"), vec![0u8; 255]).unwrap();
        assert!(matches!(
            read_volume(&stem),
            Err(Error::SizeMismatch { expected: 256, found: 255, .. })
        ));
    }

    #[test]
    fn header_errors() {
        let dir = tmp();
        let stem = dir.path().join("h");
        fs::write(stem.with_extension("raw"), [0u8; 1]).unwrap();
        for bad in [
            r#"{"shape":[1,1,1],"spacing_mm":[1,1,1],"dtype":"int16","order":"zyx-x-fastest"}"#,
            r#"{"shape":[1,1,1],"spacing_mm":[1,0,1],"dtype":"uint8","order":"zyx-x-fastest"}"#,
            r#"{"shape":[1,1,1],"spacing_mm":[1,1,1],"dtype":"uint8","order":"xyz"}"#,
        ] {
            fs::write(stem.with_extension("json"), bad).unwrap();
            assert!(matches!(read_volume(&stem), Err(Error::Header { .. })), "{bad}");
        }
        assert!(matches!(read_volume(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn nan_is_rejected_on_write() {
        let dir = tmp();
        let v = Volume3D::new([1, 1, 2], [1.0; 3], vec![0.0, f32::NAN]).unwrap();
        assert!(matches!(
            write_image(&v, dir.path().join("n")),
            Err(Error::InvalidVolume(_))
        ));
    }

    #[test]
    fn labels_outside_the_class_set_are_rejected() {
        assert!(LabelVolume::new([1, 1, 2], [1.0; 3], vec![0, 3]).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tmp();
        let voxels: Vec<f32> = (0..24).map(|i| (i as f32).sin() * 1e3 + f32::EPSILON).collect();
        let v = Volume3D::new([2, 3, 4], [0.2, 0.3, 0.4], voxels).unwrap();
        write_image(&v, dir.path().join("a")).unwrap();
        let back = read_image(dir.path().join("a.raw")).unwrap();
        assert!(back.voxels().iter().zip(v.voxels()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back, v);

        let l = LabelVolume::new([1, 2, 3], [0.4; 3], vec![0, 1, 2, 2, 1, 0]).unwrap();
        write_labels(&l, dir.path().join("sub/b")).unwrap();
        assert_eq!(read_labels(dir.path().join("sub/b")).unwrap(), l);
    }

    #[test]
    fn header_json_layout() {
        let h = VolumeHeader::new([1, 2, 3], [0.4, 0.4, 0.4], Dtype::Uint8);
        let v: serde_json::Value = serde_json::to_value(&h).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"shape":[1,2,3],"spacing_mm":[0.4,0.4,0.4],"dtype":"uint8","order":"zyx-x-fastest"})
        );
    }

    #[test]
    fn identity_resample() {
        let v = Volume3D::new([2, 2, 3], [0.4; 3], (0..12).map(|i| i as f32).collect()).unwrap();
        assert_eq!(resample_isotropic(&v, 0.4).unwrap(), v);
        assert_eq!(resize_to(&v, [2, 2, 3]).unwrap(), v);
    }

    #[test]
    fn two_voxel_ramp_upsamples_to_thirds() {
        let v = Volume3D::new([1, 1, 2], [0.8; 3], vec![0.0, 1.0]).unwrap();
        let r = resample_isotropic(&v, 0.4).unwrap();
        // z and y: round(1 * 0.8 / 0.4) = 2
        assert_eq!(r.shape(), [2, 2, 4]);
        assert_eq!(r.spacing(), [0.4; 3]);
        let row: Vec<f32> = (0..4).map(|x| r.get(0, 0, x)).collect();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in row.iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-7);
        }
        let s = resize_to(&v, [1, 1, 4]).unwrap();
        for (a, b) in s.voxels().iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-7);
        }
        assert!((s.spacing()[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn resample_errors() {
        let v = Volume3D::filled([2, 2, 2], [1.0; 3], 1.0).unwrap();
        assert!(resample_isotropic(&v, 0.0).is_err());
        assert!(resample_isotropic(&v, -1.0).is_err());
        assert!(resize_to(&v, [0, 2, 2]).is_err());
    }

    #[test]
    fn shape_rounding_floors_at_one() {
        let v = Volume3D::filled([1, 3, 5], [0.1, 0.5, 0.3], 2.0).unwrap();
        let r = resample_isotropic(&v, 0.4).unwrap();
        // 0.25 -> 0 -> 1 ; 3.75 -> 4 ; 3.75 -> 4
        assert_eq!(r.shape(), [1, 4, 4]);
    }

    #[test]
    fn clip_and_normalize_examples() {
        let v = Volume3D::new([1, 1, 4], [1.0; 3], vec![3000.0, 0.0, 1250.0, -50.0]).unwrap();
        let n = clip_and_normalize(&v, CLIP_LO, CLIP_HI).unwrap();
        assert_eq!(n.voxels(), &[1.0, 0.0, 0.5, 0.0]);
        assert!(clip_and_normalize(&v, 1.0, 1.0).is_err());
    }

    #[test]
    fn nearest_labels_follow_align_corners() {
        let l = LabelVolume::new([1, 1, 2], [0.8; 3], vec![1, 2]).unwrap();
        let r = resize_to(&l, [1, 1, 4]).unwrap();
        // coords 0, 1/3, 2/3, 1 -> 0, 0, 1, 1
        assert_eq!(r.labels(), &[1, 1, 2, 2]);
    }
}
