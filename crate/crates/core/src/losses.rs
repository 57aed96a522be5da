//! Training objective: cross entropy + soft Dice on the main head, plus the
//! uncertainty term coupling the main and auxiliary heads.
//!
//! Probability and logit volumes are `[C, Z, Y, X]` tensors; labels are class
//! indices, one per voxel, in the same voxel order. Values are accumulated in
//! `f64` whatever the tensor precision.
//!
//! The uncertainty term is `mean(exp(p_aux · ln(p_main / p_aux)))` over every
//! voxel *and* class entry. It equals 1 wherever the heads agree. Taken
//! literally it is not minimised by agreement — shrinking `p_main` entries
//! lowers it too — so the total loss is not bounded below by `ce + dice + 1`.
//! The formula is implemented as written; the guide's training chapter
//! discusses the consequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-7;
/// Smoothing constant of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

/// The three loss terms and their unweighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub dice: f64,
    pub un: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, dice: f64, un: f64) -> Self {
        LossBreakdown {
            ce,
            dice,
            un,
            total: ce + dice + un,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.ce, self.dice, self.un, self.total].iter().all(|v| v.is_finite())
    }
}

/// One line of a training log (serialised as a single JSON object).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub step: u64,
    pub lr: f64,
    pub ce: f64,
    pub dice: f64,
    pub un: f64,
    pub total: f64,
}

impl TrainLogLine {
    pub fn new(step: u64, lr: f64, l: &LossBreakdown) -> Self {
        TrainLogLine {
            step,
            lr,
            ce: l.ce,
            dice: l.dice,
            un: l.un,
            total: l.total,
        }
    }
}

fn check_probs<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() < 2 || t.channels() == 0 {
        return Err(Error::ShapeMismatch(format!("{what}: expected [C, ...], got {:?}", t.shape())));
    }
    Ok((t.channels(), t.len() / t.channels()))
}

fn check_labels(labels: &[u8], classes: usize, voxels: usize) -> Result<()> {
    if labels.len() != voxels {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {voxels} voxels",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::InvalidArgument(format!("label {l} outside 0..{classes}")));
    }
    Ok(())
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Channel-wise softmax at every voxel.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.channels();
    let n = logits.len() / c.max(1);
    let z = logits.data();
    let mut out = vec![T::zero(); z.len()];
    for v in 0..n {
        let m = (0..c).map(|k| z[k * n + v]).fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for k in 0..c {
            let e = (z[k * n + v] - m).exp();
            out[k * n + v] = e;
            sum += e;
        }
        for k in 0..c {
            out[k * n + v] /= sum;
        }
    }
    Tensor::from_vec(logits.shape(), out).expect("same shape")
}

/// Pulls a gradient w.r.t. softmax probabilities `p` back to the logits.
pub fn softmax_backward<T: Real>(p: &Tensor<T>, grad_p: &[f64]) -> Tensor<T> {
    let c = p.channels();
    let n = p.len() / c;
    let pd = p.data();
    let mut out = vec![T::zero(); pd.len()];
    for v in 0..n {
        let dot: f64 = (0..c).map(|k| pd[k * n + v].to_f64().unwrap() * grad_p[k * n + v]).sum();
        for k in 0..c {
            let pk = pd[k * n + v].to_f64().unwrap();
            out[k * n + v] = T::of(pk * (grad_p[k * n + v] - dot));
        }
    }
    Tensor::from_vec(p.shape(), out).expect("same shape")
}

/// Mean over voxels of `−ln max(p_true, 1e-7)`.
pub fn cross_entropy_loss<T: Real>(main_logits: &Tensor<T>, labels: &[u8]) -> Result<f64> {
    let p = softmax(main_logits);
    let (c, n) = check_probs(&p, "cross entropy")?;
    check_labels(labels, c, n)?;
    Ok(ce_from_probs(&p, labels).0)
}

/// Value and gradient w.r.t. the probabilities.
fn ce_from_probs<T: Real>(p: &Tensor<T>, labels: &[u8]) -> (f64, Vec<f64>) {
    let c = p.channels();
    let n = p.len() / c;
    let pd = p.data();
    let mut sum = 0.0;
    let mut grad = vec![0.0; pd.len()];
    for (v, &l) in labels.iter().enumerate() {
        let i = l as usize * n + v;
        let py = pd[i].to_f64().unwrap();
        sum -= py.max(PROB_FLOOR).ln();
        if py >= PROB_FLOOR {
            grad[i] = -1.0 / (py * n as f64);
        }
    }
    (sum / n as f64, grad)
}

/// `1 − mean_c (2Σ p_c g_c + ε) / (Σ p_c + Σ g_c + ε)` with one-hot `g`.
pub fn dice_loss<T: Real>(p_main: &Tensor<T>, labels: &[u8]) -> Result<f64> {
    let (c, n) = check_probs(p_main, "dice")?;
    check_labels(labels, c, n)?;
    Ok(dice_from_probs(p_main, labels).0)
}

fn dice_from_probs<T: Real>(p: &Tensor<T>, labels: &[u8]) -> (f64, Vec<f64>) {
    let c = p.channels();
    let n = p.len() / c;
    let pd = p.data();
    let mut inter = vec![0.0; c];
    let mut psum = vec![0.0; c];
    let mut gsum = vec![0.0; c];
    for k in 0..c {
        for v in 0..n {
            psum[k] += pd[k * n + v].to_f64().unwrap();
        }
    }
    for (v, &l) in labels.iter().enumerate() {
        let k = l as usize;
        inter[k] += pd[k * n + v].to_f64().unwrap();
        gsum[k] += 1.0;
    }
    let mut mean_ratio = 0.0;
    let mut grad = vec![0.0; pd.len()];
    for k in 0..c {
        let num = 2.0 * inter[k] + DICE_EPS;
        let den = psum[k] + gsum[k] + DICE_EPS;
        mean_ratio += num / den;
        // d(num/den)/dp_kv = (2 g_kv den − num) / den²; the loss carries −1/C.
        let scale = -1.0 / (c as f64 * den * den);
        for v in 0..n {
            let g = if labels[v] as usize == k { 1.0 } else { 0.0 };
            grad[k * n + v] = scale * (2.0 * g * den - num);
        }
    }
    (1.0 - mean_ratio / c as f64, grad)
}

/// Mean over all entries of `exp(a · ln(m / a))` with `m`, `a` clamped to `[1e-7, 1]`.
pub fn uncertainty_loss<T: Real>(p_main: &Tensor<T>, p_aux: &Tensor<T>) -> Result<f64> {
    check_probs(p_main, "uncertainty")?;
    same_shape(p_main, p_aux)?;
    Ok(uncertainty_from_probs(p_main, p_aux).0)
}

/// Value and gradients w.r.t. `p_main` and `p_aux`.
fn uncertainty_from_probs<T: Real>(p_main: &Tensor<T>, p_aux: &Tensor<T>) -> (f64, Vec<f64>, Vec<f64>) {
    let len = p_main.len();
    let mut sum = 0.0;
    let mut gm = vec![0.0; len];
    let mut ga = vec![0.0; len];
    for (i, (&m, &a)) in p_main.data().iter().zip(p_aux.data()).enumerate() {
        let (m_raw, a_raw) = (m.to_f64().unwrap(), a.to_f64().unwrap());
        let m = m_raw.clamp(PROB_FLOOR, 1.0);
        let a = a_raw.clamp(PROB_FLOOR, 1.0);
        let log_ratio = m.ln() - a.ln();
        let t = (a * log_ratio).exp();
        sum += t;
        if (PROB_FLOOR..=1.0).contains(&m_raw) {
            gm[i] = t * a / m / len as f64;
        }
        if (PROB_FLOOR..=1.0).contains(&a_raw) {
            ga[i] = t * (log_ratio - 1.0) / len as f64;
        }
    }
    (sum / len as f64, gm, ga)
}

/// All three terms from raw logits; `total` is their plain sum.
pub fn total_loss<T: Real>(main_logits: &Tensor<T>, aux_logits: &Tensor<T>, labels: &[u8]) -> Result<LossBreakdown> {
    Ok(total_loss_with_grad(main_logits, aux_logits, labels, true)?.0)
}

/// Loss and its gradients w.r.t. both logit volumes.
///
/// With `uncertainty == false` the uncertainty term is reported as 0, left
/// out of the total, and the auxiliary gradient is `None` (the auxiliary
/// head then receives no training signal).
pub fn total_loss_with_grad<T: Real>(
    main_logits: &Tensor<T>,
    aux_logits: &Tensor<T>,
    labels: &[u8],
    uncertainty: bool,
) -> Result<(LossBreakdown, Tensor<T>, Option<Tensor<T>>)> {
    same_shape(main_logits, aux_logits)?;
    let pm = softmax(main_logits);
    let (c, n) = check_probs(&pm, "total")?;
    check_labels(labels, c, n)?;

    let (ce, g_ce) = ce_from_probs(&pm, labels);
    let (dice, g_dice) = dice_from_probs(&pm, labels);
    let mut g_main: Vec<f64> = g_ce.iter().zip(&g_dice).map(|(a, b)| a + b).collect();
    let (un, g_aux) = if uncertainty {
        let pa = softmax(aux_logits);
        let (un, gm, ga) = uncertainty_from_probs(&pm, &pa);
        for (g, u) in g_main.iter_mut().zip(&gm) {
            *g += u;
        }
        (un, Some(softmax_backward(&pa, &ga)))
    } else {
        (0.0, None)
    };
    Ok((LossBreakdown::new(ce, dice, un), softmax_backward(&pm, &g_main), g_aux))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn uniform_logits() {
        let z = Tensor::<f64>::zeros(&[3, 2, 2, 2]);
        let labels = [0u8; 8];
        let l = total_loss(&z, &z, &labels).unwrap();
        assert!((l.ce - 3f64.ln()).abs() < 1e-12);
        assert_eq!(l.un, 1.0);
        assert_eq!(l.total, l.ce + l.dice + l.un);
    }

    #[test]
    fn uncertainty_single_entry() {
        let m = t(&[1, 1], vec![0.25]);
        let a = t(&[1, 1], vec![0.5]);
        assert!((uncertainty_loss(&m, &a).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        let m = t(&[1, 1], vec![1e-9]);
        assert!(uncertainty_loss(&m, &a).unwrap().is_finite());
    }

    #[test]
    fn label_out_of_range() {
        let z = Tensor::<f32>::zeros(&[3, 1, 1, 2]);
        assert!(cross_entropy_loss(&z, &[0, 3]).is_err());
        assert!(cross_entropy_loss(&z, &[0]).is_err());
    }
}
