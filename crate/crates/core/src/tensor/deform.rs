//! Deformable 3×3×3 convolution (stride 1, "same" output size).
//!
//! Every kernel tap `k` at output voxel `p` reads the input at
//! `p + g_k + Δ_k(p)`, where `g_k ∈ {-1,0,1}³` is the regular grid offset and
//! `Δ_k(p)` is a real-valued displacement taken from the offset tensor. The
//! read is a trilinear blend of the eight surrounding voxels, with zeros
//! outside the grid.
//!
//! Offsets are laid out `[3·27, Z, Y, X]` with channel `3k + a` holding the
//! displacement of tap `k` along axis `a` (0 = z, 1 = y, 2 = x). Taps are
//! ordered `k = (kz·3 + ky)·3 + kx`, matching the weight layout
//! `[Co, Ci, 3, 3, 3]`.

use super::{gemm, Mat, Real, Tensor};

pub const TAPS: usize = 27;
const CORNERS: usize = 8;
const CHUNK: usize = 2048;

/// Trilinear read positions for a run of output voxels, `[tap][voxel][corner]`.
struct SampleTable<T> {
    idx: Vec<usize>,
    w: Vec<T>,
    dw: [Vec<T>; 3],
}

impl<T: Real> SampleTable<T> {
    fn build(offsets: &[T], spatial: [usize; 3], n0: usize, n1: usize) -> Self {
        let [zn, yn, xn] = spatial;
        let n = zn * yn * xn;
        let len = TAPS * (n1 - n0) * CORNERS;
        let mut idx = vec![0usize; len];
        let mut w = vec![T::zero(); len];
        let mut dw = [vec![T::zero(); len], vec![T::zero(); len], vec![T::zero(); len]];
        let dims = [zn as isize, yn as isize, xn as isize];
        for tap in 0..TAPS {
            let grid = [(tap / 9) as isize - 1, ((tap / 3) % 3) as isize - 1, (tap % 3) as isize - 1];
            for v in n0..n1 {
                let pos = [v / (yn * xn), (v / xn) % yn, v % xn];
                let mut base = [0isize; 3];
                let mut frac = [T::zero(); 3];
                for a in 0..3 {
                    let p = T::from_isize(pos[a] as isize + grid[a]).unwrap() + offsets[(3 * tap + a) * n + v];
                    // Beyond one voxel outside the grid every corner reads zero,
                    // so clamping there changes neither value nor gradient but
                    // keeps the index arithmetic bounded (NaN lands outside too).
                    let outer = T::from_isize(dims[a] + 1).unwrap();
                    let p = if p.is_nan() { T::of(-2.0) } else { p.max(T::of(-2.0)).min(outer) };
                    let f = p.floor();
                    base[a] = f.to_isize().expect("clamped coordinate");
                    frac[a] = p - f;
                }
                let slot0 = (tap * (n1 - n0) + (v - n0)) * CORNERS;
                for corner in 0..CORNERS {
                    let d = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
                    let mut inside = true;
                    let mut lin = 0isize;
                    let mut f = [T::zero(); 3];
                    let mut s = [T::zero(); 3];
                    for a in 0..3 {
                        let c = base[a] + d[a] as isize;
                        inside &= c >= 0 && c < dims[a];
                        lin = lin * dims[a] + c;
                        if d[a] == 1 {
                            f[a] = frac[a];
                            s[a] = T::one();
                        } else {
                            f[a] = T::one() - frac[a];
                            s[a] = -T::one();
                        }
                    }
                    if !inside {
                        continue;
                    }
                    let slot = slot0 + corner;
                    idx[slot] = lin as usize;
                    w[slot] = f[0] * f[1] * f[2];
                    dw[0][slot] = s[0] * f[1] * f[2];
                    dw[1][slot] = f[0] * s[1] * f[2];
                    dw[2][slot] = f[0] * f[1] * s[2];
                }
            }
        }
        SampleTable { idx, w, dw }
    }

    fn columns(&self, x: &[T], channels: usize, n: usize, ncols: usize, cols: &mut Vec<T>) {
        cols.clear();
        cols.resize(channels * TAPS * ncols, T::zero());
        for c in 0..channels {
            let xc = &x[c * n..(c + 1) * n];
            for tap in 0..TAPS {
                let row = &mut cols[(c * TAPS + tap) * ncols..(c * TAPS + tap + 1) * ncols];
                for (j, out) in row.iter_mut().enumerate() {
                    let s = (tap * ncols + j) * CORNERS;
                    let mut acc = T::zero();
                    for k in s..s + CORNERS {
                        acc += self.w[k] * xc[self.idx[k]];
                    }
                    *out = acc;
                }
            }
        }
    }
}

fn check_shapes<T>(x: &Tensor<T>, offsets: &Tensor<T>, w: &Tensor<T>) {
    assert_eq!(offsets.shape()[0], 3 * TAPS, "deformable conv needs 81 offset channels");
    assert_eq!(offsets.spatial(), x.spatial(), "offset grid must match input grid");
    assert_eq!(w.shape()[1], x.channels(), "deformable conv: channel mismatch");
    assert_eq!(&w.shape()[2..], &[3, 3, 3]);
}

/// `x: [Ci, Z, Y, X]`, `offsets: [81, Z, Y, X]`, `w: [Co, Ci, 3, 3, 3]`, `b: [Co]`.
pub fn deform_conv3d_forward<T: Real>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Tensor<T> {
    check_shapes(x, offsets, w);
    let spatial = x.spatial();
    let n = x.voxels();
    let ci = x.channels();
    let co = w.shape()[0];
    let kdim = ci * TAPS;
    let mut out = Tensor::zeros(&[co, spatial[0], spatial[1], spatial[2]]);
    let mut cols = Vec::new();
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + CHUNK).min(n);
        let ncols = n1 - n0;
        let table = SampleTable::build(offsets.data(), spatial, n0, n1);
        table.columns(x.data(), ci, n, ncols, &mut cols);
        gemm(
            co,
            kdim,
            ncols,
            T::one(),
            Mat::rows(w.data(), kdim),
            Mat::rows(&cols, ncols),
            T::zero(),
            &mut out.data_mut()[n0..],
            n,
        );
        n0 = n1;
    }
    if let Some(b) = b {
        for (row, &bv) in out.data_mut().chunks_mut(n).zip(b.data()) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

pub struct DeformGrads<T> {
    pub x: Option<Tensor<T>>,
    pub offsets: Option<Tensor<T>>,
    pub w: Tensor<T>,
    pub b: Vec<T>,
}

pub fn deform_conv3d_backward<T: Real>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    need_x: bool,
    need_offsets: bool,
) -> DeformGrads<T> {
    check_shapes(x, offsets, w);
    let spatial = x.spatial();
    let n = x.voxels();
    let ci = x.channels();
    let co = w.shape()[0];
    let kdim = ci * TAPS;
    let g = gout.data();
    let xd = x.data();
    let mut gw = Tensor::zeros(w.shape());
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut goff = need_offsets.then(|| Tensor::zeros(offsets.shape()));
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + CHUNK).min(n);
        let ncols = n1 - n0;
        let table = SampleTable::build(offsets.data(), spatial, n0, n1);
        table.columns(xd, ci, n, ncols, &mut cols);
        let gslab = Mat {
            data: &g[n0..],
            rs: n,
            cs: 1,
        };
        gemm(
            co,
            ncols,
            kdim,
            T::one(),
            gslab,
            Mat::rows_t(&cols, ncols),
            T::one(),
            gw.data_mut(),
            kdim,
        );
        if gx.is_some() || goff.is_some() {
            gcols.clear();
            gcols.resize(kdim * ncols, T::zero());
            gemm(
                kdim,
                co,
                ncols,
                T::one(),
                Mat::rows_t(w.data(), kdim),
                gslab,
                T::zero(),
                &mut gcols,
                ncols,
            );
            let mut gx_data = gx.as_mut().map(|t| t.data_mut());
            let mut acc = [vec![T::zero(); ncols], vec![T::zero(); ncols], vec![T::zero(); ncols]];
            for tap in 0..TAPS {
                let span = tap * ncols * CORNERS..(tap + 1) * ncols * CORNERS;
                let (idx, tw) = (&table.idx[span.clone()], &table.w[span.clone()]);
                let dw = [&table.dw[0][span.clone()], &table.dw[1][span.clone()], &table.dw[2][span]];
                acc.iter_mut().for_each(|a| a.fill(T::zero()));
                for c in 0..ci {
                    let xc = &xd[c * n..(c + 1) * n];
                    let grow = &gcols[(c * TAPS + tap) * ncols..(c * TAPS + tap + 1) * ncols];
                    if let Some(gxd) = gx_data.as_deref_mut() {
                        let gxc = &mut gxd[c * n..(c + 1) * n];
                        for (j, &gv) in grow.iter().enumerate() {
                            for k in j * CORNERS..(j + 1) * CORNERS {
                                gxc[idx[k]] += tw[k] * gv;
                            }
                        }
                    }
                    if need_offsets {
                        for (j, &gv) in grow.iter().enumerate() {
                            let mut d = [T::zero(); 3];
                            for k in j * CORNERS..(j + 1) * CORNERS {
                                let xv = xc[idx[k]];
                                d[0] += xv * dw[0][k];
                                d[1] += xv * dw[1][k];
                                d[2] += xv * dw[2][k];
                            }
                            for a in 0..3 {
                                acc[a][j] += gv * d[a];
                            }
                        }
                    }
                }
                if let Some(goff) = goff.as_mut() {
                    let od = goff.data_mut();
                    for (a, acc) in acc.iter().enumerate() {
                        let dst = (3 * tap + a) * n + n0;
                        for (o, &v) in od[dst..dst + ncols].iter_mut().zip(acc) {
                            *o += v;
                        }
                    }
                }
            }
        }
        n0 = n1;
    }
    DeformGrads {
        x: gx,
        offsets: goff,
        w: gw,
        b: g.chunks(n).map(|r| r.iter().copied().sum()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv::{conv3d_forward, ConvGeom};

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0 - 1.0) * scale).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn zero_offsets_reduce_to_dense_conv() {
        let x = ramp(&[2, 4, 5, 3], 1.0);
        let w = ramp(&[3, 2, 3, 3, 3], 0.3);
        let off = Tensor::zeros(&[81, 4, 5, 3]);
        let a = deform_conv3d_forward(&x, &off, &w, None);
        let b = conv3d_forward(&x, &w, None, ConvGeom::SAME3);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn integer_offsets_shift_the_read() {
        // Single centre tap, displaced by +1 along x: output(p) = x(p + (0,0,1)).
        let x = ramp(&[1, 2, 2, 4], 1.0);
        let mut w = Tensor::zeros(&[1, 1, 3, 3, 3]);
        w.data_mut()[13] = 1.0;
        let mut off = Tensor::zeros(&[81, 2, 2, 4]);
        let n = 16;
        for v in 0..n {
            off.data_mut()[(3 * 13 + 2) * n + v] = 1.0;
        }
        let y = deform_conv3d_forward(&x, &off, &w, None);
        for v in 0..n {
            let expect = if v % 4 == 3 { 0.0 } else { x.data()[v + 1] };
            assert!((y.data()[v] - expect).abs() < 1e-12);
        }
    }
}
