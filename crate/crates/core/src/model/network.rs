//! Encoder–decoder assembly on top of the autodiff tape.

use indexmap::IndexMap;

use super::config::ModelConfig;
use super::params::NetworkParameters;
use super::zxyformer::{pointwise, zxyformer_block};
use crate::error::{Error, Result};
use crate::tensor::conv::ConvGeom;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Parameters placed on a graph, addressable by name.
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Binds every parameter as a trainable leaf.
    pub fn trainable<T: Real>(g: &mut Graph<T>, params: &NetworkParameters<T>) -> Self {
        Bound {
            vars: params.iter().map(|(k, t)| (k.to_string(), g.param(t.clone()))).collect(),
        }
    }

    /// Binds every parameter as a constant; nothing is differentiated.
    pub fn frozen<T: Real>(g: &mut Graph<T>, params: &NetworkParameters<T>) -> Self {
        Bound {
            vars: params.iter().map(|(k, t)| (k.to_string(), g.input(t.clone()))).collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))
    }

    /// `(weight, bias)` of the layer `name`.
    pub fn conv(&self, name: &str) -> Result<(Var, Var)> {
        Ok((self.var(&format!("{name}.weight"))?, self.var(&format!("{name}.bias"))?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Graph nodes of the two output heads.
#[derive(Clone, Copy, Debug)]
pub struct HeadNodes {
    pub main: Var,
    pub aux: Var,
}

/// Raw (pre-softmax) outputs of both heads, each `[n_classes, Z, Y, X]`.
#[derive(Clone, Debug)]
pub struct PredictionPair<T> {
    pub main_logits: Tensor<T>,
    pub aux_logits: Tensor<T>,
}

/// 3×3×3 conv → instance norm → activation, twice.
fn conv_block<T: Real>(g: &mut Graph<T>, x: Var, b: &Bound, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    let mut h = x;
    for name in ["conv1", "conv2"] {
        let (w, bias) = b.conv(&format!("{prefix}.{name}"))?;
        h = g.conv(h, w, Some(bias), ConvGeom::SAME3);
        h = g.instance_norm(h, cfg.norm_eps);
        h = g.act(h, cfg.activation);
    }
    Ok(h)
}

/// Appends the full network to `g`. `x` must be `[in_channels, Z, Y, X]`.
pub fn build_network<T: Real>(g: &mut Graph<T>, x: Var, b: &Bound, cfg: &ModelConfig) -> Result<HeadNodes> {
    cfg.validate()?;
    let xv = g.value(x);
    if xv.shape().len() != 4 || xv.channels() != cfg.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "network input {:?}, expected [{}, Z, Y, X]",
            xv.shape(),
            cfg.in_channels
        )));
    }
    cfg.check_input(xv.spatial())?;

    let mut skips = Vec::with_capacity(cfg.n_levels);
    let mut h = x;
    for l in 0..cfg.n_levels {
        if l > 0 {
            let (w, bias) = b.conv(&format!("enc{l}.down"))?;
            h = g.conv(h, w, Some(bias), ConvGeom::DOWN2);
        }
        h = conv_block(g, h, b, &format!("enc{l}"), cfg)?;
        skips.push(h);
    }

    let mut d = h;
    for l in cfg.skip_levels().rev() {
        let (w, bias) = b.conv(&format!("dec{l}.up"))?;
        let up = g.deconv2(d, w, Some(bias));
        let skip = if cfg.uses_zxy(l) {
            zxyformer_block(g, skips[l], d, b, &format!("zxy{l}"), cfg.heads, cfg.max_tokens, cfg.norm_eps)?
        } else {
            skips[l]
        };
        let cat = g.concat(up, skip);
        d = conv_block(g, cat, b, &format!("dec{l}"), cfg)?;
    }

    Ok(HeadNodes {
        main: pointwise(g, d, b, "head.main")?,
        aux: pointwise(g, d, b, "head.aux")?,
    })
}

fn input_tensor<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    match x.shape() {
        [_, _, _, _] => Ok(x.clone()),
        &[z, y, xx] => Tensor::from_vec(&[1, z, y, xx], x.data().to_vec()),
        s => Err(Error::ShapeMismatch(format!("network input must be 3-D or 4-D, got {s:?}"))),
    }
}

/// Inference pass. `x` is `[Z, Y, X]` or `[C, Z, Y, X]`.
pub fn network_forward<T: Real>(
    x: &Tensor<T>,
    params: &NetworkParameters<T>,
    cfg: &ModelConfig,
) -> Result<PredictionPair<T>> {
    let mut g = Graph::new();
    let b = Bound::frozen(&mut g, params);
    let xv = g.input(input_tensor(x)?);
    let heads = build_network(&mut g, xv, &b, cfg)?;
    Ok(PredictionPair {
        main_logits: g.value(heads.main).clone(),
        aux_logits: g.value(heads.aux).clone(),
    })
}

/// Upstream gradients for the two heads; `None` means the head does not
/// contribute to the objective.
pub struct HeadSeeds<T> {
    pub main: Option<Tensor<T>>,
    pub aux: Option<Tensor<T>>,
}

/// Forward pass, objective evaluation and backward pass in one go.
///
/// `objective` receives the logits and returns an arbitrary report together
/// with the gradient of the scalar objective w.r.t. each head's logits. The
/// returned gradients cover every parameter (zeros where nothing flows).
pub fn forward_backward<T: Real, R>(
    x: &Tensor<T>,
    params: &NetworkParameters<T>,
    cfg: &ModelConfig,
    objective: impl FnOnce(&PredictionPair<T>) -> Result<(R, HeadSeeds<T>)>,
) -> Result<(R, NetworkParameters<T>)> {
    let mut g = Graph::new();
    let b = Bound::trainable(&mut g, params);
    let xv = g.input(input_tensor(x)?);
    let heads = build_network(&mut g, xv, &b, cfg)?;
    let pair = PredictionPair {
        main_logits: g.value(heads.main).clone(),
        aux_logits: g.value(heads.aux).clone(),
    };
    let (report, seeds) = objective(&pair)?;
    drop(pair);
    let mut list = Vec::new();
    if let Some(s) = seeds.main {
        list.push((heads.main, s));
    }
    if let Some(s) = seeds.aux {
        list.push((heads.aux, s));
    }
    for (v, s) in &list {
        if s.shape() != g.value(*v).shape() {
            return Err(Error::ShapeMismatch(format!(
                "seed {:?} does not match logits {:?}",
                s.shape(),
                g.value(*v).shape()
            )));
        }
    }
    let mut grads = g.backward_many(list);
    let mut out = NetworkParameters::new();
    for (name, v) in b.iter() {
        let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
        out.insert(name, t);
    }
    Ok((report, out))
}
