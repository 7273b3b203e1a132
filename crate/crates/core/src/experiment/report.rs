use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::RunResult;
use crate::error::{Error, Result};

pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len().max(1) as f64
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    (pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len().max(1) as f64).sqrt()
}

/// Element-wise mean of aligned prediction vectors.
pub fn ensemble(preds: &[Vec<f64>]) -> Vec<f64> {
    let n = preds.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| preds.iter().map(|p| p[i]).sum::<f64>() / preds.len() as f64)
        .collect()
}

/// Errors of one test subject for one model, over its successful runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject: String,
    pub model: String,
    pub runs: usize,
    pub failed_runs: usize,
    pub mean_mae: f64,
    pub mean_rmse: f64,
    pub ensemble_mae: f64,
    pub ensemble_rmse: f64,
    /// Mean discriminator accuracy over runs, when the model has one.
    pub disc_accuracy: Option<f64>,
}

/// Aggregates the runs of one (subject, model) group.
pub fn evaluate(runs: &[&RunResult]) -> Result<SubjectReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no runs to evaluate".into()))?;
    let ok: Vec<&&RunResult> = runs.iter().filter(|r| r.succeeded()).collect();
    let failed_runs = runs.len() - ok.len();
    if failed_runs > 0 {
        log::warn!(
            "subject {} / {}: {failed_runs} diverged run(s) left out of the ensemble",
            first.test_subject_id,
            first.label
        );
    }
    if ok.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "subject {} / {}: every run failed",
            first.test_subject_id, first.label
        )));
    }
    let truth: Vec<f64> = ok[0].predictions.iter().map(|p| p.truth_bpm).collect();
    let preds: Vec<Vec<f64>> = ok
        .iter()
        .map(|r| r.predictions.iter().map(|p| p.pred_bpm).collect())
        .collect();
    for (r, p) in ok.iter().zip(&preds) {
        if p.len() != truth.len() {
            return Err(Error::shape(
                "evaluate",
                format!("run {} has {} predictions, run {} has {}", r.run_id(), p.len(), ok[0].run_id(), truth.len()),
            ));
        }
    }
    let n = ok.len() as f64;
    let ens = ensemble(&preds);
    let acc: Vec<f64> = ok.iter().filter_map(|r| r.disc_accuracy).collect();
    Ok(SubjectReport {
        subject: first.test_subject_id.clone(),
        model: first.label.clone(),
        runs: ok.len(),
        failed_runs,
        mean_mae: preds.iter().map(|p| mae(p, &truth)).sum::<f64>() / n,
        mean_rmse: preds.iter().map(|p| rmse(p, &truth)).sum::<f64>() / n,
        ensemble_mae: mae(&ens, &truth),
        ensemble_rmse: rmse(&ens, &truth),
        disc_accuracy: (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64),
    })
}

/// Groups runs by (model label, test subject) in first-seen order and evaluates each group.
pub fn evaluate_all(runs: &[RunResult]) -> Result<Vec<SubjectReport>> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in runs {
        let k = (r.label.clone(), r.test_subject_id.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.iter()
        .map(|(label, subject)| {
            let group: Vec<&RunResult> = runs
                .iter()
                .filter(|r| &r.label == label && &r.test_subject_id == subject)
                .collect();
            evaluate(&group)
        })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// Writes `subject,model,metric,mean,ensemble`, with an `average` row per model.
pub fn write_summary_csv<W: Write>(out: W, reports: &[SubjectReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject", "model", "metric", "mean", "ensemble"])?;
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    for model in models {
        let rows: Vec<&SubjectReport> = reports.iter().filter(|r| r.model == model).collect();
        for r in &rows {
            w.write_record([r.subject.as_str(), model, "mae", &fmt(r.mean_mae), &fmt(r.ensemble_mae)])?;
            w.write_record([r.subject.as_str(), model, "rmse", &fmt(r.mean_rmse), &fmt(r.ensemble_rmse)])?;
            if let Some(a) = r.disc_accuracy {
                w.write_record([r.subject.as_str(), model, "disc_accuracy", &fmt(a), ""])?;
            }
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&SubjectReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        w.write_record(["average", model, "mae", &fmt(avg(|r| r.mean_mae)), &fmt(avg(|r| r.ensemble_mae))])?;
        w.write_record(["average", model, "rmse", &fmt(avg(|r| r.mean_rmse)), &fmt(avg(|r| r.ensemble_rmse))])?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

/// Writes `time_s,truth_bpm,pred_bpm,run_id` for every successful run.
pub fn write_predictions_csv<W: Write>(out: W, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "truth_bpm", "pred_bpm", "run_id"])?;
    for r in runs.iter().filter(|r| r.succeeded()) {
        let id = format!("{}/{}", r.label, r.run_id());
        for p in &r.predictions {
            w.write_record([format!("{:.3}", p.time_s), fmt(p.truth_bpm), fmt(p.pred_bpm), id.clone()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<predictions>", e))?;
    Ok(())
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Writes both report CSVs into `dir`.
pub fn write_reports(dir: &Path, runs: &[RunResult]) -> Result<Vec<SubjectReport>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let reports = evaluate_all(runs)?;
    let p = dir.join(SUMMARY_FILE);
    write_summary_csv(std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?, &reports)?;
    let p = dir.join(PREDICTIONS_FILE);
    write_predictions_csv(std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?, runs)?;
    Ok(reports)
}
