//! Dense 3D convolution (im2col + GEMM, processed in slabs of output planes)
//! and the stride-2 transposed convolution used for upsampling.

use super::{gemm, Mat, Real, Tensor};

/// Cubic kernel geometry shared by all three axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const SAME3: ConvGeom = ConvGeom {
        kernel: 3,
        stride: 1,
        pad: 1,
    };
    pub const POINTWISE: ConvGeom = ConvGeom {
        kernel: 1,
        stride: 1,
        pad: 0,
    };
    pub const DOWN2: ConvGeom = ConvGeom {
        kernel: 2,
        stride: 2,
        pad: 0,
    };

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_shape(&self, s: [usize; 3]) -> [usize; 3] {
        [self.out_len(s[0]), self.out_len(s[1]), self.out_len(s[2])]
    }

    fn is_pointwise(&self) -> bool {
        *self == Self::POINTWISE
    }

    /// Output indices `o` with `o*stride + tap - pad` inside `[0, len)`.
    fn valid_range(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let t = tap as isize;
        // smallest o with o*s + t - p >= 0
        let lo = ((p - t).max(0) + s - 1) / s;
        // largest o with o*s + t - p <= len - 1
        let hi_num = len as isize - 1 + p - t;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_len as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

/// Target number of output voxels per im2col slab.
const SLAB_VOXELS: usize = 8192;

fn slab_planes(plane: usize) -> usize {
    (SLAB_VOXELS / plane.max(1)).max(1)
}

struct Layout {
    ci: usize,
    inp: [usize; 3],
    out: [usize; 3],
    geom: ConvGeom,
}

impl Layout {
    fn rows(&self) -> usize {
        self.ci * self.geom.kernel.pow(3)
    }

    fn plane(&self) -> usize {
        self.out[1] * self.out[2]
    }

    /// Visit every (column row, output voxel in slab, input index) triple.
    fn for_each_tap(&self, oz0: usize, oz1: usize, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.geom.kernel;
        let [iz_n, iy_n, ix_n] = self.inp;
        let [_, oy_n, ox_n] = self.out;
        let s = self.geom.stride;
        let p = self.geom.pad;
        let in_plane = iy_n * ix_n;
        let in_vol = iz_n * in_plane;
        for c in 0..self.ci {
            for kz in 0..k {
                let (zlo, zhi) = self.geom.valid_range(kz, iz_n, self.out[0]);
                for ky in 0..k {
                    let (ylo, yhi) = self.geom.valid_range(ky, iy_n, oy_n);
                    for kx in 0..k {
                        let (xlo, xhi) = self.geom.valid_range(kx, ix_n, ox_n);
                        let row = ((c * k + kz) * k + ky) * k + kx;
                        for oz in oz0.max(zlo)..oz1.min(zhi) {
                            let iz = oz * s + kz - p;
                            for oy in ylo..yhi {
                                let iy = oy * s + ky - p;
                                let col_base = (oz - oz0) * self.plane() + oy * ox_n;
                                let in_base = c * in_vol + iz * in_plane + iy * ix_n;
                                for ox in xlo..xhi {
                                    let ix = ox * s + kx - p;
                                    f(row, col_base + ox, in_base + ix);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T], oz0: usize, oz1: usize, cols: &mut Vec<T>) {
        let ncols = (oz1 - oz0) * self.plane();
        cols.clear();
        cols.resize(self.rows() * ncols, T::zero());
        self.for_each_tap(oz0, oz1, |row, col, src| {
            cols[row * ncols + col] = x[src];
        });
    }

    fn col2im<T: Real>(&self, cols: &[T], oz0: usize, oz1: usize, gx: &mut [T]) {
        let ncols = (oz1 - oz0) * self.plane();
        self.for_each_tap(oz0, oz1, |row, col, dst| {
            gx[dst] += cols[row * ncols + col];
        });
    }
}

fn layout<T>(x: &Tensor<T>, w: &Tensor<T>, geom: ConvGeom) -> Layout {
    let ci = x.channels();
    assert_eq!(w.shape()[1], ci, "conv3d: weight expects {} input channels, got {ci}", w.shape()[1]);
    assert_eq!(w.shape()[2], geom.kernel);
    let inp = x.spatial();
    Layout {
        ci,
        inp,
        out: geom.out_shape(inp),
        geom,
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], n: usize) {
    for (row, &b) in out.chunks_mut(n).zip(bias) {
        for v in row {
            *v += b;
        }
    }
}

fn bias_grad<T: Real>(gout: &[T], n: usize) -> Vec<T> {
    gout.chunks(n).map(|row| row.iter().copied().sum()).collect()
}

/// `x: [Ci, Z, Y, X]`, `w: [Co, Ci, k, k, k]`, `b: [Co]`.
pub fn conv3d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Tensor<T> {
    let lay = layout(x, w, geom);
    let co = w.shape()[0];
    let n: usize = lay.out.iter().product();
    let kdim = lay.rows();
    let mut out = Tensor::zeros(&[co, lay.out[0], lay.out[1], lay.out[2]]);
    if geom.is_pointwise() {
        gemm(
            co,
            kdim,
            n,
            T::one(),
            Mat::rows(w.data(), kdim),
            Mat::rows(x.data(), n),
            T::zero(),
            out.data_mut(),
            n,
        );
    } else {
        let plane = lay.plane();
        let step = slab_planes(plane);
        let mut cols = Vec::new();
        let mut oz0 = 0;
        while oz0 < lay.out[0] {
            let oz1 = (oz0 + step).min(lay.out[0]);
            let ncols = (oz1 - oz0) * plane;
            lay.im2col(x.data(), oz0, oz1, &mut cols);
            gemm(
                co,
                kdim,
                ncols,
                T::one(),
                Mat::rows(w.data(), kdim),
                Mat::rows(&cols, ncols),
                T::zero(),
                &mut out.data_mut()[oz0 * plane..],
                n,
            );
            oz0 = oz1;
        }
    }
    if let Some(b) = b {
        add_bias(out.data_mut(), b.data(), n);
    }
    out
}

pub struct ConvGrads<T> {
    pub x: Option<Tensor<T>>,
    pub w: Tensor<T>,
    pub b: Vec<T>,
}

pub fn conv3d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    geom: ConvGeom,
    need_x: bool,
) -> ConvGrads<T> {
    let lay = layout(x, w, geom);
    let co = w.shape()[0];
    let n: usize = lay.out.iter().product();
    let kdim = lay.rows();
    let mut gw = Tensor::zeros(w.shape());
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let g = gout.data();
    if geom.is_pointwise() {
        // gW = gout · xᵀ
        gemm(
            co,
            n,
            kdim,
            T::one(),
            Mat::rows(g, n),
            Mat::rows_t(x.data(), n),
            T::zero(),
            gw.data_mut(),
            kdim,
        );
        if let Some(gx) = gx.as_mut() {
            gemm(
                kdim,
                co,
                n,
                T::one(),
                Mat::rows_t(w.data(), kdim),
                Mat::rows(g, n),
                T::zero(),
                gx.data_mut(),
                n,
            );
        }
    } else {
        let plane = lay.plane();
        let step = slab_planes(plane);
        let mut cols = Vec::new();
        let mut gcols = Vec::new();
        let mut oz0 = 0;
        while oz0 < lay.out[0] {
            let oz1 = (oz0 + step).min(lay.out[0]);
            let ncols = (oz1 - oz0) * plane;
            let gslab = Mat {
                data: &g[oz0 * plane..],
                rs: n,
                cs: 1,
            };
            lay.im2col(x.data(), oz0, oz1, &mut cols);
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
            if let Some(gx) = gx.as_mut() {
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
                lay.col2im(&gcols, oz0, oz1, gx.data_mut());
            }
            oz0 = oz1;
        }
    }
    ConvGrads {
        x: gx,
        w: gw,
        b: bias_grad(g, n),
    }
}

/// Transposed convolution with kernel 2 and stride 2, doubling every spatial axis.
/// `x: [Ci, Z, Y, X]`, `w: [Ci, Co, 2, 2, 2]`, `b: [Co]`.
pub fn deconv2_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let ci = x.channels();
    assert_eq!(w.shape()[0], ci, "deconv: weight expects {} input channels, got {ci}", w.shape()[0]);
    let co = w.shape()[1];
    let [z, y, xx] = x.spatial();
    let n = z * y * xx;
    let r = co * 8;
    let mut t = vec![T::zero(); r * n];
    gemm(
        r,
        ci,
        n,
        T::one(),
        Mat::rows_t(w.data(), r),
        Mat::rows(x.data(), n),
        T::zero(),
        &mut t,
        n,
    );
    let mut out = Tensor::zeros(&[co, 2 * z, 2 * y, 2 * xx]);
    let (oy, ox) = (2 * y, 2 * xx);
    let o = out.data_mut();
    for c in 0..co {
        let bias = b.map_or(T::zero(), |b| b.data()[c]);
        for tap in 0..8 {
            let (a, bb, cc) = (tap >> 2, (tap >> 1) & 1, tap & 1);
            let src = &t[(c * 8 + tap) * n..(c * 8 + tap + 1) * n];
            for iz in 0..z {
                for iy in 0..y {
                    let dst_row = ((c * 2 * z + 2 * iz + a) * oy + 2 * iy + bb) * ox + cc;
                    let src_row = (iz * y + iy) * xx;
                    for ix in 0..xx {
                        o[dst_row + 2 * ix] = src[src_row + ix] + bias;
                    }
                }
            }
        }
    }
    out
}

pub fn deconv2_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    need_x: bool,
) -> ConvGrads<T> {
    let ci = x.channels();
    let co = w.shape()[1];
    let [z, y, xx] = x.spatial();
    let n = z * y * xx;
    let r = co * 8;
    let (oy, ox) = (2 * y, 2 * xx);
    let g = gout.data();
    let mut gt = vec![T::zero(); r * n];
    for c in 0..co {
        for tap in 0..8 {
            let (a, bb, cc) = (tap >> 2, (tap >> 1) & 1, tap & 1);
            let dst = &mut gt[(c * 8 + tap) * n..(c * 8 + tap + 1) * n];
            for iz in 0..z {
                for iy in 0..y {
                    let src_row = ((c * 2 * z + 2 * iz + a) * oy + 2 * iy + bb) * ox + cc;
                    let dst_row = (iz * y + iy) * xx;
                    for ix in 0..xx {
                        dst[dst_row + ix] = g[src_row + 2 * ix];
                    }
                }
            }
        }
    }
    let mut gw = Tensor::zeros(w.shape());
    gemm(
        ci,
        n,
        r,
        T::one(),
        Mat::rows(x.data(), n),
        Mat::rows_t(&gt, n),
        T::zero(),
        gw.data_mut(),
        r,
    );
    let gx = need_x.then(|| {
        let mut gx = Tensor::zeros(x.shape());
        gemm(
            ci,
            r,
            n,
            T::one(),
            Mat::rows(w.data(), r),
            Mat::rows(&gt, n),
            T::zero(),
            gx.data_mut(),
            n,
        );
        gx
    });
    ConvGrads {
        x: gx,
        w: gw,
        b: bias_grad(g, 8 * n),
    }
}
