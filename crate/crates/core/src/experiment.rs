//! End-to-end phantom experiments and the ablation grid.
//!
//! One experiment is one [`ExperimentConfig`] (a JSON document) plus its seed.
//! The three ablation switches — weight transfer, ZXYformer skips and the
//! uncertainty (auxiliary-branch) term — are plain booleans applied on top of
//! the model and training sections.

use std::collections::HashMap;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_case, AggregateReport, MeanStd};
use crate::model::{Checkpoint, ModelConfig};
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::pipeline::{
    infer_case_traced, label_components, train_coarse, train_fine, training_rois, Case, InferConfig, TrainConfig,
};

/// Feature switches compared in the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    /// Initialise the fine network from the coarse one.
    pub weight_transfer: bool,
    /// Use ZXYformer blocks at `model.zxy_levels`; off means plain skips.
    pub zxy: bool,
    /// Train with the uncertainty term (and hence the auxiliary head).
    pub uncertainty: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            weight_transfer: true,
            zxy: true,
            uncertainty: true,
        }
    }
}

/// A complete, reproducible experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seeds network initialisation and sampling of both stages.
    pub seed: u64,
    /// Template for every phantom; case `i` uses `phantom.seed + i`.
    pub phantom: PhantomSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub model: ModelConfig,
    pub coarse: TrainConfig,
    pub fine: TrainConfig,
    pub infer: InferConfig,
    pub toggles: Toggles,
}

impl Default for ExperimentConfig {
    /// The desk-scale setup: 96³ phantoms, a 64³ coarse stage and 48³ fine patches.
    fn default() -> Self {
        let model = ModelConfig {
            base_channels: 8,
            n_levels: 5,
            ..Default::default()
        };
        ExperimentConfig {
            seed: 0,
            phantom: PhantomSpec {
                seed: 1000,
                ..Default::default()
            },
            n_train: 20,
            n_test: 5,
            model,
            coarse: TrainConfig {
                max_iters: 500,
                patch_size: 64,
                ..Default::default()
            },
            fine: TrainConfig {
                max_iters: 1000,
                patch_size: 48,
                ..Default::default()
            },
            infer: InferConfig {
                coarse_size: 64,
                patch_size: 48,
                ..Default::default()
            },
            toggles: Toggles::default(),
        }
    }
}

/// Sets `path` (dot separated) in a JSON document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn set_json_path(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad key path {path:?}")));
    }
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{path}: {} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("non-empty path")
}

impl ExperimentConfig {
    /// Parses a JSON document, applies `key=value` overrides, and validates.
    /// Unknown keys anywhere are rejected.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("not JSON: {e}")))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_json_path(&mut doc, k.trim(), v.trim())?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        let model = self.effective_model();
        model.validate()?;
        self.coarse.validate(&model)?;
        self.fine.validate(&model)?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        if self.infer.coarse_size != self.coarse.patch_size {
            return Err(Error::Config(format!(
                "infer.coarse_size = {} must equal coarse.patch_size = {}",
                self.infer.coarse_size, self.coarse.patch_size
            )));
        }
        if !self.infer.patch_size.is_multiple_of(model.size_multiple()) || self.infer.stride() == 0 {
            return Err(Error::Config(format!(
                "infer.patch_size = {} must be a multiple of {}",
                self.infer.patch_size,
                model.size_multiple()
            )));
        }
        model.check_input([self.coarse.patch_size; 3])?;
        model.check_input([self.fine.patch_size; 3])?;
        model.check_input([self.infer.patch_size; 3])?;
        Ok(())
    }

    /// The model section with the ZXY switch applied.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if !self.toggles.zxy {
            m.zxy_levels = Some(Vec::new());
        }
        m
    }

    fn stage(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            uncertainty: base.uncertainty && self.toggles.uncertainty,
            ..base.clone()
        }
    }

    /// Coarse training settings with the seed and uncertainty switch applied.
    pub fn effective_coarse(&self) -> TrainConfig {
        self.stage(&self.coarse)
    }

    pub fn effective_fine(&self) -> TrainConfig {
        self.stage(&self.fine)
    }

    /// Phantom spec of case `i` (training cases first, then test cases).
    pub fn case_spec(&self, i: usize) -> PhantomSpec {
        self.phantom.with_seed(self.phantom.seed + i as u64)
    }
}

/// Raw phantoms plus their normalised training form.
pub struct Corpus {
    pub train: Vec<Case>,
    pub test: Vec<(String, crate::volume_io::Volume3D, crate::volume_io::LabelVolume)>,
}

pub fn build_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let mut train = Vec::with_capacity(cfg.n_train);
    for i in 0..cfg.n_train {
        let (img, lab) = generate_phantom(&cfg.case_spec(i))?;
        train.push(Case::from_raw(&img, lab)?);
    }
    let mut test = Vec::with_capacity(cfg.n_test);
    for i in cfg.n_train..cfg.n_train + cfg.n_test {
        let (img, lab) = generate_phantom(&cfg.case_spec(i))?;
        test.push((format!("case_{i:03}"), img, lab));
    }
    Ok(Corpus { train, test })
}

/// Per test case outcome of the full pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: String,
    /// Number of 26-connected foreground components in the final mask.
    pub components: usize,
    pub fallback: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub toggles: Toggles,
    pub seed: u64,
    pub metrics: AggregateReport,
    pub outcomes: Vec<CaseOutcome>,
    pub coarse_log: Vec<crate::losses::TrainLogLine>,
    pub fine_log: Vec<crate::losses::TrainLogLine>,
    pub transferred_parameters: Option<usize>,
    pub seconds: f64,
}

fn no_observer() -> impl FnMut(&crate::losses::TrainLogLine, &crate::model::NetworkParameters<f32>) -> Result<()> {
    |_, _| Ok(())
}

/// Counts 26-connected foreground components of a label volume.
pub fn count_components(labels: &crate::volume_io::LabelVolume) -> usize {
    let fg: Vec<bool> = labels.labels().iter().map(|&l| l > 0).collect();
    let ids = label_components(&fg, labels.shape());
    ids.iter().enumerate().filter(|&(i, &id)| id == i).count()
}

/// Trains the fine stage from `coarse`, runs inference on the test cases and
/// evaluates them.
fn finish(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    coarse: &Checkpoint,
    coarse_log: Vec<crate::losses::TrainLogLine>,
    started: Instant,
) -> Result<ExperimentResult> {
    let model = cfg.effective_model();
    let rois = training_rois(&corpus.train, coarse, cfg.coarse.patch_size, cfg.infer.margin)?;
    let source = cfg.toggles.weight_transfer.then_some(coarse);
    let fine = train_fine(&corpus.train, &rois, source, &cfg.effective_fine(), &model, &mut no_observer())?;
    let mut reports = Vec::new();
    let mut outcomes = Vec::new();
    for (name, img, gt) in &corpus.test {
        let trace = infer_case_traced(img, coarse, &fine.checkpoint, &cfg.infer)?;
        reports.push(evaluate_case(name, &trace.labels, gt)?);
        outcomes.push(CaseOutcome {
            case: name.clone(),
            components: count_components(&trace.labels),
            fallback: trace.fallback,
        });
    }
    Ok(ExperimentResult {
        toggles: cfg.toggles,
        seed: cfg.seed,
        metrics: aggregate(reports),
        outcomes,
        coarse_log,
        fine_log: fine.log,
        transferred_parameters: fine.transfer.map(|t| t.copied.len()),
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Generates the corpus, trains both stages, and evaluates on the test cases.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let started = Instant::now();
    let corpus = build_corpus(cfg)?;
    info!("training coarse network ({} steps)", cfg.coarse.max_iters);
    let coarse = train_coarse(&corpus.train, &cfg.effective_coarse(), &cfg.effective_model(), &mut no_observer())?;
    info!("training fine network ({} steps)", cfg.fine.max_iters);
    finish(cfg, &corpus, &coarse.checkpoint, coarse.log, started)
}

/// The four configurations compared in the ablation grid.
pub fn ablation_variants() -> [(&'static str, Toggles); 4] {
    let full = Toggles::default();
    [
        ("full", full),
        ("no_wt", Toggles { weight_transfer: false, ..full }),
        ("no_zxy", Toggles { zxy: false, ..full }),
        ("no_ab", Toggles { uncertainty: false, ..full }),
    ]
}

/// Test Dice of one variant across seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub toggles: Toggles,
    pub seeds: Vec<u64>,
    /// Mean test Dice per seed.
    pub tooth_dice: Vec<f64>,
    pub root_canal_dice: Vec<f64>,
    pub tooth: MeanStd,
    pub root_canal: MeanStd,
    /// Mean total loss over the first and last tenth of fine training, per seed.
    pub fine_loss_start: Vec<f64>,
    pub fine_loss_end: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Variants ordered by mean tooth Dice, best first.
    pub ranking: Vec<String>,
    pub full_ranks_first: bool,
    pub config: ExperimentConfig,
}

fn window_mean(log: &[crate::losses::TrainLogLine], from_end: bool) -> f64 {
    let w = (log.len() / 10).max(1).min(log.len());
    let s = if from_end { &log[log.len() - w..] } else { &log[..w] };
    s.iter().map(|l| l.total).sum::<f64>() / w as f64
}

/// Runs every ablation variant for every seed. Coarse networks are shared
/// between variants that only differ in the weight-transfer switch.
pub fn run_ablation(base: &ExperimentConfig, seeds: &[u64]) -> Result<AblationReport> {
    base.validate()?;
    let corpus = build_corpus(base)?;
    let mut coarse_cache: HashMap<(bool, bool, u64), (Checkpoint, Vec<crate::losses::TrainLogLine>)> = HashMap::new();
    let mut rows = Vec::new();
    for (name, toggles) in ablation_variants() {
        let mut row = AblationRow {
            variant: name.to_string(),
            toggles,
            seeds: seeds.to_vec(),
            tooth_dice: Vec::new(),
            root_canal_dice: Vec::new(),
            tooth: MeanStd::of([]),
            root_canal: MeanStd::of([]),
            fine_loss_start: Vec::new(),
            fine_loss_end: Vec::new(),
        };
        for &seed in seeds {
            let cfg = ExperimentConfig {
                seed,
                toggles,
                ..base.clone()
            };
            let started = Instant::now();
            let key = (toggles.zxy, toggles.uncertainty, seed);
            if !coarse_cache.contains_key(&key) {
                info!("ablation {name}, seed {seed}: coarse stage");
                let out = train_coarse(&corpus.train, &cfg.effective_coarse(), &cfg.effective_model(), &mut no_observer())?;
                coarse_cache.insert(key, (out.checkpoint, out.log));
            }
            let (coarse, log) = &coarse_cache[&key];
            info!("ablation {name}, seed {seed}: fine stage");
            let r = finish(&cfg, &corpus, coarse, log.clone(), started)?;
            row.tooth_dice.push(r.metrics.tooth.dice.mean.unwrap_or(f64::NAN));
            row.root_canal_dice.push(r.metrics.root_canal.dice.mean.unwrap_or(f64::NAN));
            row.fine_loss_start.push(window_mean(&r.fine_log, false));
            row.fine_loss_end.push(window_mean(&r.fine_log, true));
        }
        row.tooth = MeanStd::of(row.tooth_dice.iter().copied());
        row.root_canal = MeanStd::of(row.root_canal_dice.iter().copied());
        rows.push(row);
    }
    let mut ranking: Vec<(String, f64)> = rows
        .iter()
        .map(|r| (r.variant.clone(), r.tooth.mean.unwrap_or(f64::NEG_INFINITY)))
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    let ranking: Vec<String> = ranking.into_iter().map(|(n, _)| n).collect();
    Ok(AblationReport {
        full_ranks_first: ranking.first().is_some_and(|n| n == "full"),
        ranking,
        rows,
        config: base.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let base = serde_json::to_string(&ExperimentConfig::default()).unwrap();
        let c = ExperimentConfig::from_json_with_overrides(
            &base,
            &["toggles.zxy=false".into(), "coarse.max_iters=7".into(), "n_test=2".into()],
        )
        .unwrap();
        assert!(!c.toggles.zxy);
        assert_eq!(c.coarse.max_iters, 7);
        assert_eq!(c.effective_model().zxy_levels(), Vec::<usize>::new());
        assert!(ExperimentConfig::from_json_with_overrides(&base, &["coarse.bogus=1".into()]).is_err());
        assert!(ExperimentConfig::from_json_with_overrides(r#"{"nope": 1}"#, &[]).is_err());
        assert!(ExperimentConfig::from_json_with_overrides("{}", &["seed".into()]).is_err());
    }
}
