use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Standard deviation of the initial parameter distribution.
pub const INIT_STD: f64 = 0.1;
/// Truncation point of the initial distribution, in standard deviations.
pub const INIT_TRUNCATION: f64 = 2.0;

/// Number of displacement channels predicted for a 3×3×3 deformable kernel.
pub const OFFSET_CHANNELS: usize = 3 * 27;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParameters<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> NetworkParameters<T> {
    pub fn new() -> Self {
        NetworkParameters {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> NetworkParameters<U> {
        NetworkParameters {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        NetworkParameters {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.all_finite())
    }

    /// Checks names and shapes against the schema of `cfg`.
    pub fn check_schema(&self, cfg: &ModelConfig) -> Result<()> {
        let shapes = parameter_shapes(cfg);
        if shapes.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters, config expects {}",
                self.len(),
                shapes.len()
            )));
        }
        for (name, shape) in &shapes {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

impl<T: Real> Default for NetworkParameters<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn conv(map: &mut IndexMap<String, Vec<usize>>, name: &str, co: usize, ci: usize, k: usize) {
    map.insert(format!("{name}.weight"), vec![co, ci, k, k, k]);
    map.insert(format!("{name}.bias"), vec![co]);
}

fn deconv(map: &mut IndexMap<String, Vec<usize>>, name: &str, ci: usize, co: usize) {
    map.insert(format!("{name}.weight"), vec![ci, co, 2, 2, 2]);
    map.insert(format!("{name}.bias"), vec![co]);
}

/// Parameter names and shapes, in initialisation order.
pub fn parameter_shapes(cfg: &ModelConfig) -> IndexMap<String, Vec<usize>> {
    let mut m = IndexMap::new();
    let c = |l: usize| cfg.channels(l);
    for l in 0..cfg.n_levels {
        let cin = if l == 0 {
            cfg.in_channels
        } else {
            conv(&mut m, &format!("enc{l}.down"), c(l - 1), c(l - 1), 2);
            c(l - 1)
        };
        conv(&mut m, &format!("enc{l}.conv1"), c(l), cin, 3);
        conv(&mut m, &format!("enc{l}.conv2"), c(l), c(l), 3);
    }
    for l in cfg.skip_levels().rev() {
        if cfg.uses_zxy(l) {
            let p = format!("zxy{l}");
            let e = cfg.expanded(l);
            let hidden = e * cfg.mlp_ratio;
            deconv(&mut m, &format!("{p}.deconv"), c(l + 1), c(l));
            conv(&mut m, &format!("{p}.up_shallow"), e, c(l), 1);
            conv(&mut m, &format!("{p}.up_deep"), e, c(l), 1);
            for stream in ["shallow", "deep"] {
                conv(&mut m, &format!("{p}.dc_{stream}.offset"), OFFSET_CHANNELS, e, 3);
                conv(&mut m, &format!("{p}.dc_{stream}.main"), e, e, 3);
            }
            for proj in ["q", "k", "v", "o"] {
                conv(&mut m, &format!("{p}.{proj}"), e, e, 1);
            }
            conv(&mut m, &format!("{p}.mlp1"), hidden, e, 1);
            conv(&mut m, &format!("{p}.mlp2"), e, hidden, 1);
            conv(&mut m, &format!("{p}.down"), c(l), e, 1);
        }
        deconv(&mut m, &format!("dec{l}.up"), c(l + 1), c(l));
        conv(&mut m, &format!("dec{l}.conv1"), c(l), 2 * c(l), 3);
        conv(&mut m, &format!("dec{l}.conv2"), c(l), c(l), 3);
    }
    conv(&mut m, "head.main", cfg.n_classes, c(0), 1);
    conv(&mut m, "head.aux", cfg.n_classes, c(0), 1);
    m
}

/// One draw from `N(0, std²)` conditioned on `|x| ≤ INIT_TRUNCATION · std` (rejection sampling).
pub fn truncated_normal(rng: &mut impl Rng, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= INIT_TRUNCATION {
            return std * z;
        }
    }
}

/// Every weight and bias drawn from the truncated normal, in schema order.
pub fn init_parameters<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<NetworkParameters<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParameters::new();
    for (name, shape) in parameter_shapes(cfg) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(truncated_normal(&mut rng, INIT_STD))).collect();
        params.insert(name, Tensor::from_vec(&shape, data)?);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_depends_on_config_only() {
        let cfg = ModelConfig::default();
        let p = init_parameters::<f32>(&cfg, 1).unwrap();
        p.check_schema(&cfg).unwrap();
        assert!(p.names().any(|n| n == "zxy2.dc_deep.offset.weight"));
        assert!(!p.names().any(|n| n.starts_with("zxy0")));
        let other = ModelConfig { n_classes: 4, ..cfg.clone() };
        assert!(p.check_schema(&other).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig {
            base_channels: 4,
            heads: 2,
            ..Default::default()
        };
        let a = init_parameters::<f64>(&cfg, 9).unwrap();
        let b = init_parameters::<f64>(&cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_parameters::<f64>(&cfg, 10).unwrap());
        for (_, t) in a.iter() {
            assert!(t.data().iter().all(|v| v.abs() <= 0.2));
        }
    }
}
