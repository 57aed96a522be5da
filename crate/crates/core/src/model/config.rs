use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Architecture of the segmentation network. Coarse and fine networks share
/// one schema; parameter shapes depend on this value alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    /// Channels at full resolution; doubled at every deeper level.
    pub base_channels: usize,
    /// Resolution levels, including the bottleneck.
    pub n_levels: usize,
    pub heads: usize,
    /// Skip levels fused through a ZXYformer block. `None` selects the two
    /// deepest skips; an empty list disables the block entirely.
    pub zxy_levels: Option<Vec<usize>>,
    /// Width multiplier of the 1×1×1 up/down projections around attention.
    pub channel_expand: usize,
    /// Hidden width of the feed-forward stage, relative to the expanded width.
    pub mlp_ratio: usize,
    /// Upper bound on attention tokens (voxels) at any ZXYformer level.
    pub max_tokens: usize,
    pub activation: Activation,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            n_classes: 3,
            base_channels: 16,
            n_levels: 4,
            heads: 4,
            zxy_levels: None,
            channel_expand: 2,
            mlp_ratio: 2,
            max_tokens: 4096,
            activation: Activation::LeakyRelu { slope: 0.01 },
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Levels with a skip connection: every level except the bottleneck.
    pub fn skip_levels(&self) -> std::ops::Range<usize> {
        0..self.n_levels.saturating_sub(1)
    }

    /// Resolved ZXYformer levels, sorted ascending.
    pub fn zxy_levels(&self) -> Vec<usize> {
        let mut v = match &self.zxy_levels {
            Some(v) => v.clone(),
            None => self.skip_levels().rev().take(2).collect(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn uses_zxy(&self, level: usize) -> bool {
        self.zxy_levels().contains(&level)
    }

    pub fn expanded(&self, level: usize) -> usize {
        self.channels(level) * self.channel_expand
    }

    /// Input edge lengths must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.n_levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.n_levels < 2 {
            return bad(format!("n_levels = {} must be at least 2", self.n_levels));
        }
        if self.in_channels == 0 || self.n_classes == 0 || self.base_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.heads == 0 || self.channel_expand == 0 || self.mlp_ratio == 0 {
            return bad("heads, channel_expand and mlp_ratio must be positive".into());
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive".into());
        }
        for l in self.zxy_levels() {
            if !self.skip_levels().contains(&l) {
                return bad(format!("zxy level {l} is not a skip level (0..{})", self.n_levels - 1));
            }
            if !self.expanded(l).is_multiple_of(self.heads) {
                return bad(format!(
                    "heads = {} does not divide the expanded width {} at level {l}",
                    self.heads,
                    self.expanded(l)
                ));
            }
        }
        Ok(())
    }

    /// Checks that a `[Z, Y, X]` input is admissible, including the attention token budget.
    pub fn check_input(&self, spatial: [usize; 3]) -> Result<()> {
        let m = self.size_multiple();
        if spatial.iter().any(|&s| s == 0 || s % m != 0) {
            return Err(Error::ShapeMismatch(format!(
                "input {spatial:?} must be a positive multiple of {m} per axis"
            )));
        }
        for l in self.zxy_levels() {
            let tokens: usize = spatial.iter().map(|s| s >> l).product();
            if tokens > self.max_tokens {
                return Err(Error::TokenLimit {
                    tokens,
                    max: self.max_tokens,
                });
            }
        }
        Ok(())
    }
}
