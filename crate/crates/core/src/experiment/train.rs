use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::folds::FoldSpec;
use crate::error::{Error, Result};
use crate::models::{hr_stats_of, LossWeights, Model, ModelConfig, ModelKind, SegmentBatch};
use crate::nn::{AdamConfig, AdamState, Checkpoint};
use crate::signal::{sample_discriminator_pairs, DiscriminatorPair, NormStats, PreparedDataset, SegmentRef};
use crate::tensor::{Mode, Tape};

#[derive(Clone, Debug)]
pub struct TrainOptions {
    /// Name under which results are reported (the model kind, or an ablation arm).
    pub label: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Where to write the best-validation checkpoint.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub segment: usize,
    /// Snippet index within the subject's series.
    pub snippet: usize,
    /// Centre of the snippet window in seconds.
    pub time_s: f64,
    pub truth_bpm: f64,
    pub pred_bpm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub kind: ModelKind,
    pub fold: usize,
    pub run: usize,
    pub seed: u64,
    pub test_subject_id: String,
    pub best_epoch: usize,
    /// Mean training loss per epoch (weighted total).
    pub train_loss: Vec<f64>,
    /// Validation l1 loss on normalized heart rate per epoch.
    pub val_loss: Vec<f64>,
    pub hr_stats: NormStats,
    pub predictions: Vec<Prediction>,
    /// Same-subject accuracy at threshold 0.5 on the fixed validation pairs.
    pub disc_accuracy: Option<f64>,
    /// Set when training diverged; such runs are left out of ensembles.
    pub failed: Option<String>,
    pub wall_s: f64,
}

impl RunResult {
    pub fn run_id(&self) -> String {
        format!("{}-run{}", self.test_subject_id, self.run)
    }

    pub fn succeeded(&self) -> bool {
        self.failed.is_none()
    }
}

/// 1-based epoch of the first minimum.
pub fn best_epoch(losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i + 1, v));
        }
    }
    best.map(|(e, _)| e)
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

/// Predictions for whole segments, in beats/minute, batched in eval mode.
pub fn predict_segments(
    model: &Model<f32>,
    data: &PreparedDataset,
    refs: &[SegmentRef],
    stats: NormStats,
    batch_size: usize,
) -> Result<Vec<(SegmentRef, SegmentBatch<f32>, Vec<f64>)>> {
    let mut out = Vec::new();
    for chunk in refs.chunks(batch_size.max(1)) {
        let b = SegmentBatch::build(data, chunk, model.layout(), stats, None)?;
        let mut tape = Tape::new(Mode::Eval, 0);
        let p = model.bind(&mut tape);
        let y = model.forward(&mut tape, &p, &b)?;
        let vals: Vec<f64> = tape.value(y.hr_bpm)?.iter().map(|&v| v as f64).collect();
        out.push((chunk[0], b, vals));
    }
    Ok(out)
}

/// Mean absolute error in beats/minute over the prediction snippets of `refs`.
pub fn mae_bpm(model: &Model<f32>, data: &PreparedDataset, refs: &[SegmentRef], stats: NormStats, batch_size: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (_, b, pred) in predict_segments(model, data, refs, stats, batch_size)? {
        for (t, p) in b.target_bpm().iter().zip(&pred) {
            sum += (t - p).abs();
            n += 1;
        }
    }
    Ok(sum / n.max(1) as f64)
}

fn group_by_subject(refs: &[SegmentRef]) -> Vec<Vec<SegmentRef>> {
    let mut groups: Vec<Vec<SegmentRef>> = Vec::new();
    let mut subjects: Vec<usize> = refs.iter().map(|r| r.subject).collect();
    subjects.sort_unstable();
    subjects.dedup();
    for s in subjects {
        groups.push(refs.iter().copied().filter(|r| r.subject == s).collect());
    }
    groups
}

fn discriminator_accuracy(
    model: &Model<f32>,
    data: &PreparedDataset,
    pairs: &[DiscriminatorPair],
    stats: NormStats,
    batch_size: usize,
) -> Result<f64> {
    let mut correct = 0usize;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let a: Vec<SegmentRef> = chunk.iter().map(|p| p.a).collect();
        let b: Vec<SegmentRef> = chunk.iter().map(|p| p.b).collect();
        let init = model.config.init_snippets;
        let ba = SegmentBatch::build(data, &a, model.layout(), stats, Some(init))?;
        let bb = SegmentBatch::build(data, &b, model.layout(), stats, Some(init))?;
        let mut tape = Tape::new(Mode::Eval, 0);
        let p = model.bind(&mut tape);
        let ea = model.pce(&mut tape, &p, &ba)?;
        let eb = model.pce(&mut tape, &p, &bb)?;
        let prob = model.discriminate(&mut tape, &p, ea, eb)?;
        for (pr, pair) in tape.value(prob)?.iter().zip(chunk) {
            correct += ((*pr > 0.5) == pair.same_subject) as usize;
        }
    }
    Ok(correct as f64 / pairs.len().max(1) as f64)
}

/// Trains one run of one fold and predicts its test subject.
pub fn train_run(data: &PreparedDataset, fold: &FoldSpec, config: &ModelConfig, opts: &TrainOptions) -> Result<RunResult> {
    let started = Instant::now();
    if fold.train.is_empty() {
        return Err(Error::InvalidArgument(format!("fold {} has no training segments", fold.run_id())));
    }
    let stats = hr_stats_of(data, &fold.train)?;
    let mut model = Model::<f32>::new(config.clone(), fold.seed)?;
    let mut adam = AdamState::new(&model.store, opts.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(fold.seed);
    rng.set_stream(1);
    let use_disc = opts.weights.uses_discriminator() && model.kind().has_discriminator();
    let train_groups = group_by_subject(&fold.train);
    let selection = if fold.val.is_empty() { &fold.train } else { &fold.val };
    // Held-out pairs need two subjects to contain any different-subject pair.
    let selection_groups = group_by_subject(selection);
    let val_pairs = if model.kind().has_discriminator() && selection_groups.len() >= 2 {
        let mut vr = ChaCha8Rng::seed_from_u64(fold.seed);
        vr.set_stream(2);
        sample_discriminator_pairs(&selection_groups, &mut vr)
    } else {
        Vec::new()
    };

    let mut result = RunResult {
        label: opts.label.clone(),
        kind: model.kind(),
        fold: fold.fold,
        run: fold.run,
        seed: fold.seed,
        test_subject_id: fold.test_subject_id.clone(),
        best_epoch: 0,
        train_loss: Vec::with_capacity(opts.epochs),
        val_loss: Vec::with_capacity(opts.epochs),
        hr_stats: stats,
        predictions: Vec::new(),
        disc_accuracy: None,
        failed: None,
        wall_s: 0.0,
    };
    let mut best: Option<crate::nn::ParameterStore<f32>> = None;

    for epoch in 1..=opts.epochs {
        let mut pairs: Vec<DiscriminatorPair> = if use_disc {
            sample_discriminator_pairs(&train_groups, &mut rng)
        } else {
            fold.train
                .iter()
                .map(|&a| DiscriminatorPair { a, b: a, same_subject: true })
                .collect()
        };
        pairs.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in pairs.chunks(opts.batch_size) {
            let a: Vec<SegmentRef> = chunk.iter().map(|p| p.a).collect();
            let batch = SegmentBatch::build(data, &a, model.layout(), stats, None)?;
            let partner = if use_disc {
                let b: Vec<SegmentRef> = chunk.iter().map(|p| p.b).collect();
                Some(SegmentBatch::build(data, &b, model.layout(), stats, Some(config.init_snippets))?)
            } else {
                None
            };
            let labels: Vec<bool> = chunk.iter().map(|p| p.same_subject).collect();
            let mut tape = Tape::new(Mode::Train, rng.gen());
            let p = model.bind(&mut tape);
            let step = (|| -> Result<f64> {
                let terms = model.loss(&mut tape, &p, &batch, partner.as_ref().map(|b| (b, labels.as_slice())), opts.weights)?;
                let total = tape.value(terms.total)?[0] as f64;
                if !total.is_finite() {
                    return Err(Error::NonFinite {
                        location: format!("training loss at epoch {epoch}"),
                    });
                }
                let grads = tape.backward(terms.total)?;
                model.store.accumulate(&grads, &p)?;
                adam.step(&mut model.store)?;
                Ok(total)
            })();
            match step {
                Ok(v) => {
                    loss_sum += v * chunk.len() as f64;
                    seen += chunk.len();
                }
                Err(e) if is_divergence(&e) => {
                    log::warn!("run {} ({}) diverged: {e}", fold.run_id(), opts.label);
                    result.failed = Some(e.to_string());
                    result.wall_s = started.elapsed().as_secs_f64();
                    return Ok(result);
                }
                Err(e) => return Err(e),
            }
        }
        result.train_loss.push(loss_sum / seen.max(1) as f64);
        let val = mae_bpm(&model, data, selection, stats, opts.batch_size)? / stats.std;
        result.val_loss.push(val);
        if !val.is_finite() {
            result.failed = Some(format!("non-finite validation loss at epoch {epoch}"));
            result.wall_s = started.elapsed().as_secs_f64();
            return Ok(result);
        }
        if best_epoch(&result.val_loss) == Some(epoch) {
            best = Some(model.store.clone());
            result.best_epoch = epoch;
        }
        log::debug!(
            "{} {} epoch {epoch}: train {:.4} val {:.4}",
            opts.label,
            fold.run_id(),
            result.train_loss[epoch - 1],
            val
        );
    }
    if let Some(store) = best {
        model.store = store;
    }
    model.store.zero_grads();

    if let Some(path) = &opts.checkpoint {
        Checkpoint {
            config: serde_json::to_value(&model.config)?,
            normalization: serde_json::to_value(stats)?,
            params: model.store.clone(),
        }
        .save(path)?;
    }
    if model.kind().has_discriminator() && !val_pairs.is_empty() {
        result.disc_accuracy = Some(discriminator_accuracy(&model, data, &val_pairs, stats, opts.batch_size)?);
    }
    let subject = &data.subjects[fold.test_subject];
    let tau = subject.snippet_len as f64 / subject.rate_hz;
    for (_, batch, pred) in predict_segments(&model, data, &fold.test, stats, opts.batch_size)? {
        let p_len = batch.prediction_len();
        for (row, r) in batch.refs.iter().enumerate() {
            let seg = &data.subjects[r.subject].segments[r.segment];
            for k in 0..p_len {
                let snippet = seg.first_snippet + seg.init_len + k;
                result.predictions.push(Prediction {
                    segment: r.segment,
                    snippet,
                    time_s: subject.snippets[snippet].start_s + tau / 2.0,
                    truth_bpm: batch.hr_bpm[row * batch.n + batch.init + k],
                    pred_bpm: pred[row * p_len + k],
                });
            }
        }
    }
    result.wall_s = started.elapsed().as_secs_f64();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::folds::make_folds;
    use crate::models::ModelConfig;
    use crate::oracle::{toy_config, toy_pipeline, toy_records};

    #[test]
    fn checkpoint_epoch_is_the_argmin() {
        assert_eq!(best_epoch(&[5.0, 3.0, 4.0]), Some(2));
        assert_eq!(best_epoch(&[2.0, 2.0]), Some(1));
        assert_eq!(best_epoch(&[]), None);
    }

    #[test]
    fn batches_of_sixty_four() {
        let items: Vec<usize> = (0..130).collect();
        let sizes: Vec<usize> = items.chunks(64).map(<[usize]>::len).collect();
        assert_eq!(sizes, [64, 64, 2]);
    }

    fn toy_run(epochs: usize) -> (PreparedDataset, FoldSpec, ModelConfig, TrainOptions) {
        let data = PreparedDataset::prepare("toy", &toy_records(3, 12.0, 8.0, 2, false, 4), &toy_pipeline()).unwrap();
        let fold = make_folds(&data, 1, 0.2, 9).unwrap().remove(0);
        let opts = TrainOptions {
            label: "toy".into(),
            epochs,
            batch_size: 2,
            adam: AdamConfig::default(),
            weights: LossWeights::WITH_DISCRIMINATOR,
            checkpoint: None,
        };
        (data, fold, toy_config(ModelKind::PceLstm, 2), opts)
    }

    #[test]
    fn run_predicts_every_test_snippet_and_keeps_the_best_epoch() {
        let (data, fold, cfg, opts) = toy_run(6);
        let r = train_run(&data, &fold, &cfg, &opts).unwrap();
        let expected: usize = fold
            .test
            .iter()
            .map(|s| data.subjects[s.subject].segments[s.segment].prediction_len())
            .sum();
        assert_eq!(r.predictions.len(), expected);
        assert_eq!(r.val_loss.len(), 6);
        assert_eq!(Some(r.best_epoch), best_epoch(&r.val_loss));
        assert!(r.predictions.iter().all(|p| p.pred_bpm.is_finite()));
        let again = train_run(&data, &fold, &cfg, &opts).unwrap();
        assert_eq!(again.predictions, r.predictions);
    }

    #[test]
    fn divergence_marks_the_run_failed() {
        let (data, fold, cfg, mut opts) = toy_run(3);
        opts.adam.learning_rate = f64::INFINITY;
        let r = train_run(&data, &fold, &cfg, &opts).unwrap();
        assert!(r.failed.is_some());
        assert!(!r.succeeded());
    }
}
