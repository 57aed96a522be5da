use std::fs;
use std::io::Write;
use std::path::Path;

use log::info;
use zxyseg::experiment::{run_ablation, run_experiment, ExperimentConfig};
use zxyseg::losses::TrainLogLine;
use zxyseg::metrics::{aggregate, evaluate_case};
use zxyseg::model::Checkpoint;
use zxyseg::phantom::{dataset_digest, generate_dataset, Split};
use zxyseg::pipeline::{infer_case, load_split, train_coarse, train_fine, training_rois};
use zxyseg::volume_io::{self, read_volume, AnyVolume};

use crate::{overlay as render, Axis, CliError, CliResult, ConfigArgs, Stage};

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    zxyseg::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn load_config(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p).map_err(|e| io_error(p, e))?,
        None => "{}".to_string(),
    };
    Ok(ExperimentConfig::from_json_with_overrides(&text, &args.overrides)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(zxyseg::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn phantom(args: &ConfigArgs, out: &Path, n_cases: Option<usize>) -> CliResult<()> {
    let cfg = load_config(args)?;
    let n = n_cases.unwrap_or(cfg.n_train + cfg.n_test);
    let manifest = generate_dataset(n, cfg.phantom.seed, &cfg.phantom, out)?;
    let digest = dataset_digest(out)?;
    println!(
        "{}",
        serde_json::json!({ "cases": manifest.cases.len(), "dir": out, "sha256": digest })
    );
    Ok(())
}

/// `window` is the clip range; `None` keeps raw intensities.
pub fn preprocess(input: &Path, out: &Path, target_mm: f64, window: Option<(f64, f64)>) -> CliResult<()> {
    let v = match read_volume(input)? {
        AnyVolume::Image(img) => AnyVolume::Image(match window {
            Some((lo, hi)) => volume_io::preprocess(&img, target_mm, lo, hi)?,
            None => volume_io::resample_isotropic(&img, target_mm)?,
        }),
        AnyVolume::Labels(l) => AnyVolume::Labels(volume_io::resample_isotropic(&l, target_mm)?),
    };
    info!("{} -> {:?}", input.display(), v.header().shape);
    Ok(volume_io::write_volume(&v, out)?)
}

struct LogSink(Option<fs::File>);

impl LogSink {
    fn create(path: Option<&Path>) -> CliResult<Self> {
        Ok(LogSink(match path {
            Some(p) => Some(fs::File::create(p).map_err(|e| io_error(p, e))?),
            None => None,
        }))
    }

    fn push(&mut self, line: &TrainLogLine) -> zxyseg::Result<()> {
        if let Some(f) = &mut self.0 {
            let text = serde_json::to_string(line)?;
            writeln!(f, "{text}").map_err(|e| zxyseg::Error::Io {
                path: "training log".into(),
                source: e,
            })?;
        }
        Ok(())
    }
}

pub fn train(
    stage: Stage,
    args: &ConfigArgs,
    data: &Path,
    coarse: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
) -> CliResult<()> {
    let cfg = load_config(args)?;
    let cases = load_split(data, Split::Train)?;
    let model = cfg.effective_model();
    let mut sink = LogSink::create(log)?;
    let mut observe = |line: &TrainLogLine, _: &_| sink.push(line);
    let outcome = match stage {
        Stage::Coarse => train_coarse(&cases, &cfg.effective_coarse(), &model, &mut observe)?,
        Stage::Fine => {
            let path = coarse.ok_or_else(|| CliError::new("invalid_argument", "the fine stage needs --coarse"))?;
            let ck = Checkpoint::load(path)?;
            let rois = training_rois(&cases, &ck, cfg.coarse.patch_size, cfg.infer.margin)?;
            let source = cfg.toggles.weight_transfer.then_some(&ck);
            train_fine(&cases, &rois, source, &cfg.effective_fine(), &model, &mut observe)?
        }
    };
    outcome.checkpoint.save(out)?;
    let last = outcome.log.last().expect("at least one step");
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": out,
            "steps": outcome.log.len(),
            "final_total": last.total,
            "transferred": outcome.transfer.map(|t| t.copied.len()),
        })
    );
    Ok(())
}

pub fn infer(args: &ConfigArgs, image: &Path, coarse: &Path, fine: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(args)?;
    let img = volume_io::read_image(image)?;
    let labels = infer_case(&img, &Checkpoint::load(coarse)?, &Checkpoint::load(fine)?, &cfg.infer)?;
    volume_io::write_labels(&labels, out)?;
    Ok(())
}

/// Label volumes of a directory keyed by file stem, sorted.
fn label_stems(dir: &Path) -> CliResult<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_error(dir, e))? {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("raw") {
            continue;
        }
        if let Ok(AnyVolume::Labels(_)) = read_volume(&path) {
            stems.push(path.file_stem().unwrap().to_string_lossy().into_owned());
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn evaluate(pred: &Path, gt: &Path, out: Option<&Path>) -> CliResult<()> {
    let stems = label_stems(gt)?;
    if stems.is_empty() {
        return Err(CliError::new("invalid_argument", format!("no label volumes in {}", gt.display())));
    }
    let mut reports = Vec::with_capacity(stems.len());
    for stem in &stems {
        let truth = volume_io::read_labels(gt.join(stem))?;
        let p = volume_io::read_labels(pred.join(stem))?;
        reports.push(evaluate_case(stem, &p, &truth)?);
    }
    let report = aggregate(reports);
    match out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(zxyseg::Error::from)?);
            Ok(())
        }
    }
}

pub fn overlay(image: &Path, mask: &Path, axis: Axis, index: Option<usize>, out: &Path) -> CliResult<()> {
    let img = volume_io::read_image(image)?;
    let labels = volume_io::read_labels(mask)?;
    if img.shape() != labels.shape() {
        return Err(zxyseg::Error::ShapeMismatch(format!(
            "image {:?} and mask {:?} differ",
            img.shape(),
            labels.shape()
        ))
        .into());
    }
    let a = axis as usize;
    let index = index.unwrap_or(img.shape()[a] / 2);
    let png = render::render_slice(&img, &labels, a, index)?;
    png.save(out)
        .map_err(|e| CliError::new("io", format!("writing {}: {e}", out.display())))
}

pub fn experiment(args: &ConfigArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(args)?;
    let result = run_experiment(&cfg)?;
    write_json(out, &result)?;
    println!(
        "{}",
        serde_json::json!({
            "tooth_dice": result.metrics.tooth.dice.mean,
            "root_canal_dice": result.metrics.root_canal.dice.mean,
            "seconds": result.seconds,
        })
    );
    Ok(())
}

pub fn ablate(args: &ConfigArgs, seeds: &[u64], out: &Path) -> CliResult<()> {
    let cfg = load_config(args)?;
    let report = run_ablation(&cfg, seeds)?;
    write_json(out, &report)?;
    println!("{}", serde_json::json!({ "ranking": report.ranking, "full_ranks_first": report.full_ranks_first }));
    Ok(())
}
