use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::inference::coarse_roi;
use super::roi::{sample_patch, RoiBox};
use super::schedule::{lr_at, Adam, TrainConfig};
use super::transfer::{transfer_weights, TransferReport};
use crate::error::{Error, Result};
use crate::losses::{total_loss_with_grad, LossBreakdown, TrainLogLine};
use crate::model::{forward_backward, init_parameters, Checkpoint, HeadSeeds, ModelConfig, NetworkParameters};
use crate::phantom::{image_path, label_path, Manifest, Split};
use crate::tensor::Tensor;
use crate::volume_io::{clip_and_normalize, read_image, read_labels, resize_to, LabelVolume, Volume3D, CLIP_HI, CLIP_LO};

/// A normalised image with its ground truth on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub image: Volume3D,
    pub labels: LabelVolume,
}

impl Case {
    pub fn new(image: Volume3D, labels: LabelVolume) -> Result<Self> {
        if !image.header().same_grid(labels.header()) {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} and labels {:?} are on different grids",
                image.shape(),
                labels.shape()
            )));
        }
        Ok(Case { image, labels })
    }

    /// Clips and normalises a raw image into a case.
    pub fn from_raw(image: &Volume3D, labels: LabelVolume) -> Result<Self> {
        Self::new(clip_and_normalize(image, CLIP_LO, CLIP_HI)?, labels)
    }

    /// Both volumes resized onto an `edge³` grid.
    pub fn resized(&self, edge: usize) -> Result<Self> {
        Self::new(resize_to(&self.image, [edge; 3])?, resize_to(&self.labels, [edge; 3])?)
    }
}

/// Loads and normalises every case of `split` from a phantom directory.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Case>> {
    let manifest = Manifest::load(dir.join(crate::phantom::MANIFEST_FILE))?;
    manifest
        .stems(split)
        .map(|stem| Case::from_raw(&read_image(image_path(dir, stem))?, read_labels(label_path(dir, stem))?))
        .collect()
}

/// A finished training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogLine>,
    /// Present when the run started from transferred weights.
    pub transfer: Option<TransferReport>,
}

fn volume_tensor(v: &Volume3D) -> Tensor<f32> {
    let [z, y, x] = v.shape();
    Tensor::from_vec(&[1, z, y, x], v.voxels().to_vec()).expect("volume length")
}

/// One optimisation step's loss and gradient on a single sample.
pub fn sample_gradient(
    image: &Volume3D,
    labels: &LabelVolume,
    params: &NetworkParameters<f32>,
    model: &ModelConfig,
    uncertainty: bool,
) -> Result<(LossBreakdown, NetworkParameters<f32>)> {
    forward_backward(&volume_tensor(image), params, model, |out| {
        let (loss, gm, ga) = total_loss_with_grad(&out.main_logits, &out.aux_logits, labels.labels(), uncertainty)?;
        Ok((loss, HeadSeeds { main: Some(gm), aux: ga }))
    })
}

/// Loss of the current parameters on one sample, without gradients.
pub fn sample_loss(
    image: &Volume3D,
    labels: &LabelVolume,
    params: &NetworkParameters<f32>,
    model: &ModelConfig,
    uncertainty: bool,
) -> Result<LossBreakdown> {
    let out = crate::model::network_forward(&volume_tensor(image), params, model)?;
    Ok(total_loss_with_grad(&out.main_logits, &out.aux_logits, labels.labels(), uncertainty)?.0)
}

fn optimise(
    mut params: NetworkParameters<f32>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut next_sample: impl FnMut(&mut ChaCha8Rng) -> Result<(Volume3D, LabelVolume)>,
    on_step: &mut dyn FnMut(&TrainLogLine, &NetworkParameters<f32>) -> Result<()>,
) -> Result<(NetworkParameters<f32>, Vec<TrainLogLine>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&params, cfg);
    let mut log = Vec::with_capacity(cfg.max_iters as usize);
    let scale = 1.0 / cfg.batch_size as f32;
    for step in 0..cfg.max_iters {
        let mut grads = params.zeros_like();
        let (mut ce, mut dice, mut un) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.batch_size {
            let (image, labels) = next_sample(&mut rng)?;
            let (l, g) = sample_gradient(&image, &labels, &params, model, cfg.uncertainty)?;
            if !l.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!("non-finite loss {l:?}"),
                });
            }
            ce += l.ce;
            dice += l.dice;
            un += l.un;
            for ((_, acc), (_, g)) in grads.iter_mut().zip(g.iter()) {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
        if !grads.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: "non-finite gradient".into(),
            });
        }
        let n = cfg.batch_size as f64;
        let lr = lr_at(step, cfg);
        let line = TrainLogLine::new(step, lr, &LossBreakdown::new(ce / n, dice / n, un / n));
        if step % 25 == 0 {
            info!("step {step}: total {:.4} (ce {:.4}, dice {:.4}, un {:.4})", line.total, line.ce, line.dice, line.un);
        }
        on_step(&line, &params)?;
        log.push(line);
        adam.step(&mut params, &grads, lr)?;
        if !params.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: "non-finite parameters after update".into(),
            });
        }
    }
    Ok((params, log))
}

/// Trains the coarse network on whole cases resized to `cfg.patch_size³`.
///
/// Cases are visited in a fresh seeded shuffle every epoch. `on_step` sees
/// every log line and the parameters the line was measured with.
pub fn train_coarse(
    cases: &[Case],
    cfg: &TrainConfig,
    model: &ModelConfig,
    on_step: &mut dyn FnMut(&TrainLogLine, &NetworkParameters<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(model)?;
    if cases.is_empty() {
        return Err(Error::EmptySplit);
    }
    let small: Vec<Case> = cases.iter().map(|c| c.resized(cfg.patch_size)).collect::<Result<_>>()?;
    let init = init_parameters(model, cfg.seed)?;
    let mut order: Vec<usize> = Vec::new();
    let sampler = |rng: &mut ChaCha8Rng| {
        if order.is_empty() {
            order = (0..small.len()).collect();
            order.shuffle(rng);
            order.reverse();
        }
        let c = &small[order.pop().expect("refilled")];
        Ok((c.image.clone(), c.labels.clone()))
    };
    let (params, log) = optimise(init, model, cfg, sampler, on_step)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model.clone(), cfg.max_iters, params)?,
        log,
        transfer: None,
    })
}

/// ROIs for fine training, derived from the coarse network's predictions.
pub fn training_rois(cases: &[Case], coarse: &Checkpoint, coarse_size: usize, margin: usize) -> Result<Vec<RoiBox>> {
    cases
        .iter()
        .map(|c| coarse_roi(&c.image, coarse, coarse_size, margin).map(|(r, _)| r))
        .collect()
}

/// Trains the fine network on random `cfg.patch_size³` patches meeting each
/// case's ROI. With `coarse` given, parameters matching the coarse network
/// are transferred before the first step; otherwise training starts from
/// the seeded initialisation.
pub fn train_fine(
    cases: &[Case],
    rois: &[RoiBox],
    coarse: Option<&Checkpoint>,
    cfg: &TrainConfig,
    model: &ModelConfig,
    on_step: &mut dyn FnMut(&TrainLogLine, &NetworkParameters<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(model)?;
    if cases.is_empty() {
        return Err(Error::EmptySplit);
    }
    if rois.len() != cases.len() {
        return Err(Error::InvalidArgument(format!("{} ROIs for {} cases", rois.len(), cases.len())));
    }
    for (c, r) in cases.iter().zip(rois) {
        r.check(c.image.shape())?;
    }
    let fresh = init_parameters(model, cfg.seed)?;
    let (init, transfer) = match coarse {
        Some(ck) => {
            let (p, report) = transfer_weights(&ck.params, &fresh)?;
            (p, Some(report))
        }
        None => (fresh, None),
    };
    let size = cfg.patch_size;
    let mut order: Vec<usize> = Vec::new();
    let sampler = |rng: &mut ChaCha8Rng| {
        if order.is_empty() {
            order = (0..cases.len()).collect();
            order.shuffle(rng);
            order.reverse();
        }
        let i = order.pop().expect("refilled");
        sample_patch(&cases[i].image, &cases[i].labels, &rois[i], size, rng)
    };
    let (params, log) = optimise(init, model, cfg, sampler, on_step)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model.clone(), cfg.max_iters, params)?,
        log,
        transfer,
    })
}
