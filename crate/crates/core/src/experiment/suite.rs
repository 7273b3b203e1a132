use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::folds::{make_folds, FoldSpec};
use super::train::{train_run, RunResult, TrainOptions};
use crate::error::{Error, Result};
use crate::models::{LossWeights, ModelKind};
use crate::signal::{PipelineConfig, PreparedDataset, SubjectRecord};

/// One model variant trained over every fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub kind: ModelKind,
    pub weights: LossWeights,
}

impl Arm {
    pub fn model(cfg: &ExperimentConfig, kind: ModelKind) -> Self {
        Arm {
            label: kind.name().to_string(),
            kind,
            weights: cfg.loss_weights(kind),
        }
    }
}

pub const ARM_WITH_DISCRIMINATOR: &str = "with-discriminator";
pub const ARM_WITHOUT_DISCRIMINATOR: &str = "without-discriminator";
pub const ARM_SELF_ENCODE: &str = "self-encode";

/// The three ablation arms: the full model, the same model with the discriminator loss
/// switched off, and the self-encoding baseline.
pub fn ablation_arms(cfg: &ExperimentConfig) -> Vec<Arm> {
    vec![
        Arm {
            label: ARM_WITH_DISCRIMINATOR.into(),
            ..Arm::model(cfg, ModelKind::PceLstm)
        },
        Arm {
            label: ARM_WITHOUT_DISCRIMINATOR.into(),
            kind: ModelKind::PceLstm,
            weights: LossWeights::HR_ONLY,
        },
        Arm {
            label: ARM_SELF_ENCODE.into(),
            ..Arm::model(cfg, ModelKind::LstmSelfEncode)
        },
    ]
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOptions {
    /// Worker threads; 0 or 1 trains runs one after another.
    pub threads: usize,
    /// Directory for per-run JSON results (and checkpoints when `checkpoints` is set).
    pub out_dir: Option<PathBuf>,
    pub checkpoints: bool,
    /// Restrict to these fold indices.
    pub folds: Option<Vec<usize>>,
    /// Restrict to these 1-based run numbers.
    pub runs: Option<Vec<usize>>,
}

impl SuiteOptions {
    fn keeps(&self, f: &FoldSpec) -> bool {
        self.folds.as_ref().is_none_or(|v| v.contains(&f.fold)) && self.runs.as_ref().is_none_or(|v| v.contains(&f.run))
    }
}

fn run_path(dir: &Path, label: &str, run_id: &str, ext: &str) -> PathBuf {
    dir.join("runs").join(label).join(format!("{run_id}.{ext}"))
}

pub fn save_run(dir: &Path, r: &RunResult) -> Result<PathBuf> {
    let path = run_path(dir, &r.label, &r.run_id(), "json");
    let parent = path.parent().expect("run path has a parent");
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    std::fs::write(&path, serde_json::to_vec_pretty(r)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Every run JSON below `dir`, ordered by label, fold, then run.
pub fn load_runs(dir: &Path) -> Result<Vec<RunResult>> {
    fn walk(p: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(p).map_err(|e| Error::io(p, e))? {
            let path = entry.map_err(|e| Error::io(p, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "json") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let mut runs = Vec::with_capacity(files.len());
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
        let r: RunResult = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: f.clone(),
            detail: e.to_string(),
        })?;
        runs.push(r);
    }
    if runs.is_empty() {
        return Err(Error::MissingData(format!("no run results under {}", dir.display())));
    }
    runs.sort_by(|a, b| (&a.label, a.fold, a.run).cmp(&(&b.label, b.fold, b.run)));
    Ok(runs)
}

fn train_all(
    data: &PreparedDataset,
    folds: &[FoldSpec],
    cfg: &ExperimentConfig,
    arm: &Arm,
    opts: &SuiteOptions,
) -> Result<Vec<RunResult>> {
    let model = cfg.model(arm.kind, data.n_channels());
    let one = |f: &FoldSpec| -> Result<RunResult> {
        let train = TrainOptions {
            label: arm.label.clone(),
            epochs: cfg.epochs_for(arm.kind),
            batch_size: cfg.batch_size,
            adam: cfg.adam(),
            weights: arm.weights,
            checkpoint: opts
                .out_dir
                .as_deref()
                .filter(|_| opts.checkpoints)
                .map(|d| run_path(d, &arm.label, &f.run_id(), "ckpt")),
        };
        if let Some(p) = train.checkpoint.as_ref().and_then(|p| p.parent()) {
            std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        let r = train_run(data, f, &model, &train)?;
        log::info!(
            "{} {}: best epoch {} val {:.4}{}",
            arm.label,
            f.run_id(),
            r.best_epoch,
            r.val_loss.get(r.best_epoch.wrapping_sub(1)).copied().unwrap_or(f64::NAN),
            if r.succeeded() { "" } else { " (failed)" }
        );
        if let Some(d) = &opts.out_dir {
            save_run(d, &r)?;
        }
        Ok(r)
    };
    if opts.threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        // `collect` keeps fold order, so results do not depend on scheduling.
        pool.install(|| folds.par_iter().map(one).collect())
    } else {
        folds.iter().map(one).collect()
    }
}

/// Trains every arm over identical leave-one-subject-out folds.
///
/// Arms that share a preprocessing configuration share the prepared data and hence
/// the folds and their seeds.
pub fn run_arms(
    dataset: &str,
    records: &[SubjectRecord],
    cfg: &ExperimentConfig,
    arms: &[Arm],
    opts: &SuiteOptions,
) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let mut prepared: Vec<(PipelineConfig, PreparedDataset)> = Vec::new();
    let mut out = Vec::new();
    for arm in arms {
        let pipeline = cfg.pipeline(arm.kind);
        let idx = match prepared.iter().position(|(p, _)| *p == pipeline) {
            Some(i) => i,
            None => {
                prepared.push((pipeline.clone(), PreparedDataset::prepare(dataset, records, &pipeline)?));
                prepared.len() - 1
            }
        };
        let data = &prepared[idx].1;
        let folds: Vec<FoldSpec> = make_folds(data, cfg.runs, cfg.val_fraction, cfg.base_seed)?
            .into_iter()
            .filter(|f| opts.keeps(f))
            .collect();
        if folds.is_empty() {
            return Err(Error::InvalidArgument("fold/run selection matches nothing".into()));
        }
        log::info!("{}: {} runs over {} subjects", arm.label, folds.len(), data.subjects.len());
        out.extend(train_all(data, &folds, cfg, arm, opts)?);
    }
    Ok(out)
}
