//! Parameter-free normalisations over `[C, N]` data.
//!
//! Instance norm standardises each channel over its voxels; layer norm
//! standardises each voxel over its channels. Both return the normalised data
//! together with the per-group inverse standard deviation needed by the
//! backward pass.

use super::Real;

/// `(y, inv_std)` with one statistic per channel.
pub fn instance_norm<T: Real>(x: &[T], channels: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = x.len() / channels;
    let nf = T::from_usize(n).unwrap();
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(channels);
    for (row, out) in x.chunks(n).zip(y.chunks_mut(n)) {
        let mean = row.iter().copied().sum::<T>() / nf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let s = T::one() / (var + eps).sqrt();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
        inv.push(s);
    }
    (y, inv)
}

pub fn instance_norm_backward<T: Real>(y: &[T], inv: &[T], gy: &[T]) -> Vec<T> {
    let channels = inv.len();
    let n = y.len() / channels;
    let nf = T::from_usize(n).unwrap();
    let mut gx = vec![T::zero(); y.len()];
    for c in 0..channels {
        let r = c * n..(c + 1) * n;
        let (yr, gr) = (&y[r.clone()], &gy[r.clone()]);
        let mg = gr.iter().copied().sum::<T>() / nf;
        let mgy = gr.iter().zip(yr).map(|(&g, &v)| g * v).sum::<T>() / nf;
        for ((o, &g), &v) in gx[r].iter_mut().zip(gr).zip(yr) {
            *o = inv[c] * (g - mg - v * mgy);
        }
    }
    gx
}

/// `(y, inv_std)` with one statistic per voxel.
pub fn layer_norm<T: Real>(x: &[T], channels: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = x.len() / channels;
    let cf = T::from_usize(channels).unwrap();
    let mut mean = vec![T::zero(); n];
    for row in x.chunks(n) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= cf);
    let mut var = vec![T::zero(); n];
    for row in x.chunks(n) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv: Vec<T> = var.iter().map(|&s| T::one() / (s / cf + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    for (row, out) in x.chunks(n).zip(y.chunks_mut(n)) {
        for i in 0..n {
            out[i] = (row[i] - mean[i]) * inv[i];
        }
    }
    (y, inv)
}

pub fn layer_norm_backward<T: Real>(y: &[T], inv: &[T], gy: &[T]) -> Vec<T> {
    let n = inv.len();
    let channels = y.len() / n;
    let cf = T::from_usize(channels).unwrap();
    let mut mg = vec![T::zero(); n];
    let mut mgy = vec![T::zero(); n];
    for (yr, gr) in y.chunks(n).zip(gy.chunks(n)) {
        for i in 0..n {
            mg[i] += gr[i];
            mgy[i] += gr[i] * yr[i];
        }
    }
    let mut gx = vec![T::zero(); y.len()];
    for ((out, yr), gr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)) {
        for i in 0..n {
            out[i] = inv[i] * (gr[i] - mg[i] / cf - yr[i] * mgy[i] / cf);
        }
    }
    gx
}
