//! Multi-head scaled dot-product attention over voxel tokens.
//!
//! `q`, `k`, `v` are `[D, N]` (channel-major, one column per token) with
//! `D = heads · head_dim`. Queries and keys/values may come from different
//! streams; the token count `N` must agree.

use super::{gemm, Mat, Real};

pub struct AttentionOutput<T> {
    pub out: Vec<T>,
    /// Row-stochastic weights, `[heads, N, N]`, row = query token.
    pub probs: Vec<T>,
}

fn softmax_rows<T: Real>(s: &mut [T], n: usize) {
    for row in s.chunks_mut(n) {
        let m = T::max_of(row);
        let z = T::exp_shifted_sum(row, m);
        let inv = T::one() / z;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Attention weights only: `softmax(q_hᵀ k_h / √head_dim)` per head.
pub fn attention_probs<T: Real>(q: &[T], k: &[T], dim: usize, heads: usize) -> Vec<T> {
    let n = q.len() / dim;
    let dh = dim / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut probs = vec![T::zero(); heads * n * n];
    for h in 0..heads {
        let off = h * dh * n;
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        gemm(
            n,
            dh,
            n,
            scale,
            Mat::rows_t(&q[off..off + dh * n], n),
            Mat::rows(&k[off..off + dh * n], n),
            T::zero(),
            p,
            n,
        );
        softmax_rows(p, n);
    }
    probs
}

pub fn attention_forward<T: Real>(q: &[T], k: &[T], v: &[T], dim: usize, heads: usize) -> AttentionOutput<T> {
    assert_eq!(dim % heads, 0, "heads must divide the channel width");
    assert!(q.len() == k.len() && k.len() == v.len(), "q/k/v token counts differ");
    let n = q.len() / dim;
    let dh = dim / heads;
    let probs = attention_probs(q, k, dim, heads);
    let mut out = vec![T::zero(); dim * n];
    for h in 0..heads {
        let off = h * dh * n;
        gemm(
            dh,
            n,
            n,
            T::one(),
            Mat::rows(&v[off..off + dh * n], n),
            Mat::rows_t(&probs[h * n * n..(h + 1) * n * n], n),
            T::zero(),
            &mut out[off..off + dh * n],
            n,
        );
    }
    AttentionOutput { out, probs }
}

pub struct AttentionGrads<T> {
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
}

pub fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    gout: &[T],
    dim: usize,
    heads: usize,
) -> AttentionGrads<T> {
    let n = q.len() / dim;
    let dh = dim / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut gq = vec![T::zero(); dim * n];
    let mut gk = vec![T::zero(); dim * n];
    let mut gv = vec![T::zero(); dim * n];
    let mut gs = vec![T::zero(); n * n];
    for h in 0..heads {
        let off = h * dh * n;
        let span = off..off + dh * n;
        let p = &probs[h * n * n..(h + 1) * n * n];
        let go = &gout[span.clone()];
        // gV = gO · P
        gemm(dh, n, n, T::one(), Mat::rows(go, n), Mat::rows(p, n), T::zero(), &mut gv[span.clone()], n);
        // gP = gOᵀ · V
        gemm(n, dh, n, T::one(), Mat::rows_t(go, n), Mat::rows(&v[span.clone()], n), T::zero(), &mut gs, n);
        for (grow, prow) in gs.chunks_mut(n).zip(p.chunks(n)) {
            let dot: T = grow.iter().zip(prow).map(|(&g, &pp)| g * pp).sum();
            for (g, &pp) in grow.iter_mut().zip(prow) {
                *g = pp * (*g - dot);
            }
        }
        // gQ = s · K · gSᵀ ; gK = s · Q · gS
        gemm(dh, n, n, scale, Mat::rows(&k[span.clone()], n), Mat::rows_t(&gs, n), T::zero(), &mut gq[span.clone()], n);
        gemm(dh, n, n, scale, Mat::rows(&q[span.clone()], n), Mat::rows(&gs, n), T::zero(), &mut gk[span], n);
    }
    AttentionGrads { q: gq, k: gk, v: gv }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_token_weights_match_hand_softmax() {
        // dim 2, one head; q tokens (1,0) and (0,1); k tokens (2,0) and (0,1).
        // column-major storage: rows are channels.
        let q = [1.0, 0.0, 0.0, 1.0];
        let k = [2.0, 0.0, 0.0, 1.0];
        let p = attention_probs(&q, &k, 2, 1);
        let s = 1.0 / 2f64.sqrt();
        // query 0 scores: (2s, 0); query 1 scores: (0, s)
        let e = |a: f64, b: f64| (a.exp() / (a.exp() + b.exp()), b.exp() / (a.exp() + b.exp()));
        let (a0, a1) = e(2.0 * s, 0.0);
        let (b0, b1) = e(0.0, s);
        for (got, want) in p.iter().zip([a0, a1, b0, b1]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_values_pass_through() {
        let n = 5;
        let dim = 4;
        let q: Vec<f64> = (0..dim * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let k: Vec<f64> = (0..dim * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut v = vec![0.0; dim * n];
        for d in 0..dim {
            v[d * n..(d + 1) * n].iter_mut().for_each(|x| *x = d as f64 - 1.5);
        }
        let out = attention_forward(&q, &k, &v, dim, 2);
        for (a, b) in out.out.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
