//! Independent reference implementations shared by the test targets.
//!
//! Each oracle follows the textbook definition as directly as possible —
//! quadratic searches, breadth-first fills, numerical quadrature — so that it
//! shares no code or shortcuts with the library implementation it checks.

#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zxyseg::tensor::{Real, Tensor};
use zxyseg::volume_io::LabelVolume;

pub fn coords(i: usize, shape: [usize; 3]) -> [usize; 3] {
    [i / (shape[1] * shape[2]), (i / shape[2]) % shape[1], i % shape[2]]
}

/// Tensor of the given shape with entries uniform in `[-scale, scale)`.
pub fn random_tensor<T: Real>(shape: &[usize], seed: u64, scale: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::of(rng.random_range(-scale..scale))).collect()).unwrap()
}

/// Dice, Jaccard and sensitivity from explicit index sets. Conventions for
/// empty sets: Dice = Jaccard = 1 when both are empty; sensitivity is `None`
/// when the prediction is non-empty but the truth is empty, and 1 when both are.
pub fn set_count_overlap(pred: &[bool], gt: &[bool]) -> (f64, f64, Option<f64>) {
    let p: HashSet<usize> = (0..pred.len()).filter(|&i| pred[i]).collect();
    let g: HashSet<usize> = (0..gt.len()).filter(|&i| gt[i]).collect();
    let inter = p.intersection(&g).count() as f64;
    let union = p.union(&g).count() as f64;
    if union == 0.0 {
        return (1.0, 1.0, Some(1.0));
    }
    let dice = 2.0 * inter / (p.len() + g.len()) as f64;
    let sens = (!g.is_empty()).then(|| inter / g.len() as f64);
    (dice, inter / union, sens)
}

/// Surface by definition: a mask voxel with a face neighbour off the mask or off the grid.
pub fn surface_oracle(mask: &[bool], shape: [usize; 3]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let c = coords(i, shape);
        let exposed = (0..3).any(|a| {
            [-1isize, 1].iter().any(|&d| {
                let q = c[a] as isize + d;
                if q < 0 || q >= shape[a] as isize {
                    return true;
                }
                let mut n = c;
                n[a] = q as usize;
                !mask[(n[0] * shape[1] + n[1]) * shape[2] + n[2]]
            })
        });
        if exposed {
            out.push(i);
        }
    }
    out
}

/// Nearest-surface distances in both directions, quadratic in the surface size.
pub fn brute_force_distances(a: &[bool], b: &[bool], shape: [usize; 3], sp: [f64; 3]) -> Vec<f64> {
    let sa = surface_oracle(a, shape);
    let sb = surface_oracle(b, shape);
    let dist = |i: usize, j: usize| {
        let (p, q) = (coords(i, shape), coords(j, shape));
        (0..3).map(|k| ((p[k] as f64 - q[k] as f64) * sp[k]).powi(2)).sum::<f64>().sqrt()
    };
    let nearest = |from: &[usize], to: &[usize]| -> Vec<f64> {
        from.iter().map(|&i| to.iter().map(|&j| dist(i, j)).fold(f64::INFINITY, f64::min)).collect()
    };
    let mut d = nearest(&sa, &sb);
    d.extend(nearest(&sb, &sa));
    d
}

/// HD95 (linear-interpolated 95th percentile) and mean of the pooled distances.
pub fn brute_force_hd95_asd(a: &[bool], b: &[bool], shape: [usize; 3], sp: [f64; 3]) -> (f64, f64) {
    let mut d = brute_force_distances(a, b, shape, sp);
    d.sort_by(f64::total_cmp);
    let pos = 0.95 * (d.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let hd95 = d[lo] + (pos - lo as f64) * (d[hi] - d[lo]);
    (hd95, d.iter().sum::<f64>() / d.len() as f64)
}

/// Breadth-first flood fill over the 26-neighbourhood, seeded in raster order;
/// keeps the largest component (the earliest-seeded one on ties).
pub fn flood_fill_largest(mask: &LabelVolume) -> LabelVolume {
    let [nz, ny, nx] = mask.shape();
    let n = nz * ny * nx;
    let fg: Vec<bool> = mask.labels().iter().map(|&l| l > 0).collect();
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for seed in 0..n {
        if !fg[seed] || comp[seed] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        let mut queue = VecDeque::from([seed]);
        comp[seed] = id;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (z, y, x) = ((i / (ny * nx)) as isize, ((i / nx) % ny) as isize, (i % nx) as isize);
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (a, b, c) = (z + dz, y + dy, x + dx);
                        if a < 0 || b < 0 || c < 0 || a >= nz as isize || b >= ny as isize || c >= nx as isize {
                            continue;
                        }
                        let j = ((a as usize) * ny + b as usize) * nx + c as usize;
                        if fg[j] && comp[j] == usize::MAX {
                            comp[j] = id;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    let keep = (0..sizes.len()).fold(None, |best: Option<usize>, k| match best {
        Some(b) if sizes[b] >= sizes[k] => Some(b),
        _ => Some(k),
    });
    let labels = mask
        .labels()
        .iter()
        .zip(&comp)
        .map(|(&l, &c)| if Some(c) == keep { l } else { 0 })
        .collect();
    LabelVolume::new(mask.shape(), mask.spacing(), labels).unwrap()
}

/// σ of N(0, s²) truncated to ±t·s, by Simpson quadrature of the density.
pub fn truncated_normal_std_oracle(s: f64, t: f64) -> f64 {
    let n = 20_000;
    let h = 2.0 * t / n as f64;
    let (mut m0, mut m2) = (0.0, 0.0);
    for i in 0..=n {
        let z = -t + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let phi = (-0.5 * z * z).exp();
        m0 += w * phi;
        m2 += w * z * z * phi;
    }
    s * (m2 / m0).sqrt()
}
