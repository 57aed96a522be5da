//! The ZXYformer skip-connection block.
//!
//! * **Z** upsamples the deeper feature map with a stride-2 transposed
//!   convolution, widens both streams with 1×1×1 projections and layer-normalises
//!   them.
//! * **X** is the deformable reverse cross transformer: both streams pass a
//!   deformable 3×3×3 convolution, queries come from the shallow stream and
//!   keys/values from the deep stream, so coarse morphology steers the shallow
//!   detail. The attention result is added back onto the shallow stream.
//! * **Y** is a pre-normalised residual feed-forward stage followed by a
//!   1×1×1 projection back to the skip's channel count.

use super::network::Bound;
use crate::error::{Error, Result};
use crate::tensor::conv::ConvGeom;
use crate::tensor::{Activation, Graph, Real, Var};

/// 1×1×1 convolution `name` applied to `x`.
pub(crate) fn pointwise<T: Real>(g: &mut Graph<T>, x: Var, b: &Bound, name: &str) -> Result<Var> {
    let (w, bias) = b.conv(name)?;
    Ok(g.conv(x, w, Some(bias), ConvGeom::POINTWISE))
}

/// Deformable 3×3×3 convolution whose per-voxel tap displacements are
/// predicted from `x` by the ordinary convolution `<prefix>.offset`; the
/// sampling weights are `<prefix>.main`.
pub fn deformable_conv3d<T: Real>(g: &mut Graph<T>, x: Var, b: &Bound, prefix: &str) -> Result<Var> {
    let (ow, ob) = b.conv(&format!("{prefix}.offset"))?;
    let (w, bias) = b.conv(&format!("{prefix}.main"))?;
    let in_ch = g.value(x).channels();
    let want = g.value(w).shape()[1];
    if in_ch != want {
        return Err(Error::ShapeMismatch(format!(
            "{prefix}: input has {in_ch} channels, weights expect {want}"
        )));
    }
    let offsets = g.conv(x, ow, Some(ob), ConvGeom::SAME3);
    Ok(g.deform_conv(x, offsets, w, Some(bias)))
}

/// Outputs of [`drct_attention`] kept for inspection.
pub struct DrctNodes {
    pub output: Var,
    /// The attention node; its recorded weights are available through
    /// [`Graph::attention_weights`].
    pub attention: Var,
}

/// Deformable reverse cross-attention: shallow queries attend over deep keys
/// and values. Both inputs must share the expanded width and grid.
pub fn drct_attention<T: Real>(
    g: &mut Graph<T>,
    shallow: Var,
    deep: Var,
    b: &Bound,
    prefix: &str,
    heads: usize,
    max_tokens: usize,
) -> Result<DrctNodes> {
    let (s, d) = (g.value(shallow), g.value(deep));
    if s.shape() != d.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{prefix}: shallow {:?} and deep {:?} streams differ",
            s.shape(),
            d.shape()
        )));
    }
    let tokens = s.voxels();
    if tokens > max_tokens {
        return Err(Error::TokenLimit {
            tokens,
            max: max_tokens,
        });
    }
    if s.channels() % heads != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{prefix}: {heads} heads do not divide {} channels",
            s.channels()
        )));
    }
    let s = deformable_conv3d(g, shallow, b, &format!("{prefix}.dc_shallow"))?;
    let d = deformable_conv3d(g, deep, b, &format!("{prefix}.dc_deep"))?;
    let q = pointwise(g, s, b, &format!("{prefix}.q"))?;
    let k = pointwise(g, d, b, &format!("{prefix}.k"))?;
    let v = pointwise(g, d, b, &format!("{prefix}.v"))?;
    let attention = g.attention(q, k, v, heads);
    let output = pointwise(g, attention, b, &format!("{prefix}.o"))?;
    Ok(DrctNodes { output, attention })
}

/// Fuses the skip feature `shallow` (level `l`) with the deeper decoder
/// feature `deep` (level `l + 1`). The result has `shallow`'s shape.
#[allow(clippy::too_many_arguments)]
pub fn zxyformer_block<T: Real>(
    g: &mut Graph<T>,
    shallow: Var,
    deep: Var,
    b: &Bound,
    prefix: &str,
    heads: usize,
    max_tokens: usize,
    norm_eps: f64,
) -> Result<Var> {
    let s_shape = g.value(shallow).spatial();
    let d_shape = g.value(deep).spatial();
    if d_shape.map(|v| v * 2) != s_shape {
        return Err(Error::ShapeMismatch(format!(
            "{prefix}: deep grid {d_shape:?} is not half of shallow grid {s_shape:?}"
        )));
    }
    // Z
    let (dw, db) = b.conv(&format!("{prefix}.deconv"))?;
    let deep_up = g.deconv2(deep, dw, Some(db));
    let s = pointwise(g, shallow, b, &format!("{prefix}.up_shallow"))?;
    let s = g.layer_norm(s, norm_eps);
    let d = pointwise(g, deep_up, b, &format!("{prefix}.up_deep"))?;
    let d = g.layer_norm(d, norm_eps);
    // X
    let att = drct_attention(g, s, d, b, prefix, heads, max_tokens)?;
    let x1 = g.add(s, att.output);
    // Y
    let h = g.layer_norm(x1, norm_eps);
    let h = pointwise(g, h, b, &format!("{prefix}.mlp1"))?;
    let h = g.act(h, Activation::Gelu);
    let h = pointwise(g, h, b, &format!("{prefix}.mlp2"))?;
    let x2 = g.add(x1, h);
    pointwise(g, x2, b, &format!("{prefix}.down"))
}
