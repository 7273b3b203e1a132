//! Finite-difference gradient suites over every tape op and over toy models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{LossWeights, Model, ModelConfig, ModelKind, SegmentBatch};
use crate::nn::ParamVars;
use crate::signal::{ChannelSeries, NormStats, PipelineConfig, PreparedDataset, SegmentRef, SubjectRecord};
use crate::tensor::{finite_diff_check, GradCheckReport, Tape, Tensor, Var, LEAKY_SLOPE};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct OracleCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).with_grad()
}

/// Magnitudes in [0.1, 1) with random sign, keeping relu/abs kinks outside the stencil.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .with_grad()
}

/// Contracts `y` with fixed pseudo-random weights so every output element matters.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let n = tape.value(y)?.len();
    let shape = tape.shape(y)?.to_vec();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
    let w = tape.constant(shape, w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y) }),
        ("sub", vec![vec![3, 4], vec![3, 4]], |t, v| { let y = t.sub(v[0], v[1])?; weighted_sum(t, y) }),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y) }),
        ("affine", vec![vec![5]], |t, v| { let y = t.affine(v[0], 1.7, 0.3)?; weighted_sum(t, y) }),
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y) }),
        ("linear", vec![vec![3, 4], vec![5, 4], vec![5]], |t, v| { let y = t.linear(v[0], v[1], Some(v[2]))?; weighted_sum(t, y) }),
        ("leaky_relu", vec![vec![10]], |t, v| { let y = t.leaky_relu(v[0], LEAKY_SLOPE)?; weighted_sum(t, y) }),
        ("relu", vec![vec![10]], |t, v| { let y = t.relu(v[0])?; weighted_sum(t, y) }),
        ("sigmoid", vec![vec![10]], |t, v| { let y = t.sigmoid(v[0])?; weighted_sum(t, y) }),
        ("tanh", vec![vec![10]], |t, v| { let y = t.tanh(v[0])?; weighted_sum(t, y) }),
        ("dropout", vec![vec![50]], |t, v| { let y = t.dropout(v[0], 0.3)?; weighted_sum(t, y) }),
        ("concat", vec![vec![2, 3], vec![2, 2]], |t, v| { let y = t.concat(&[v[0], v[1]], 1)?; weighted_sum(t, y) }),
        ("slice", vec![vec![3, 6]], |t, v| { let y = t.slice(v[0], 1, 2, 3)?; weighted_sum(t, y) }),
        ("permute", vec![vec![2, 3, 4]], |t, v| { let y = t.permute(v[0], &[2, 0, 1])?; weighted_sum(t, y) }),
        ("reshape", vec![vec![2, 6]], |t, v| { let y = t.reshape(v[0], [3, 4])?; weighted_sum(t, y) }),
        ("mean", vec![vec![7]], |t, v| { let y = t.tanh(v[0])?; t.mean(y) }),
        ("l1_loss", vec![vec![6], vec![6]], |t, v| t.l1_loss(v[0], v[1])),
        ("bce", vec![vec![6]], |t, v| {
            let p = t.sigmoid(v[0])?;
            t.binary_cross_entropy(p, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
        }),
    ]
}

/// Every differentiable op, three random draws each, plus conv1d in each geometry the
/// encoders use and the fused LSTM cell.
pub fn op_suite() -> Result<Vec<OracleCase>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, shapes, f) in op_cases() {
        for draw in 0..3 {
            let inputs: Vec<_> = shapes.iter().map(|s| rand_away_from_zero(&mut rng, s)).collect();
            out.push(OracleCase {
                name: format!("{name}#{draw}"),
                report: finite_diff_check(&inputs, STEP, TOLERANCE, 9, f)?,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, padding, len) in [(2, 1, 16), (2, 0, 7), (1, 0, 2), (1, 1, 9)] {
        let kernel = if len == 2 { 2 } else { 3 };
        let inputs = vec![
            rand_tensor(&mut rng, &[2, 3, len]),
            rand_tensor(&mut rng, &[4, 3, kernel]),
            rand_tensor(&mut rng, &[4]),
        ];
        out.push(OracleCase {
            name: format!("conv1d(k{kernel},s{stride},p{padding},L{len})"),
            report: finite_diff_check(&inputs, STEP, TOLERANCE, 0, |t, v| {
                let y = t.conv1d(v[0], v[1], Some(v[2]), stride, padding)?;
                weighted_sum(t, y)
            })?,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs: Vec<_> = [&[3, 5][..], &[3, 4], &[3, 4], &[16, 5], &[16, 4], &[16]]
        .iter()
        .map(|s| rand_tensor(&mut rng, s))
        .collect();
    out.push(OracleCase {
        name: "lstm_cell".into(),
        report: finite_diff_check(&inputs, STEP, TOLERANCE, 0, |t, v| {
            let (h, c) = t.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
            let hc = t.concat(&[h, c], 1)?;
            weighted_sum(t, hc)
        })?,
    });
    Ok(out)
}

/// Random accelerometer-like channels plus a slowly varying heart rate at 1 Hz.
pub fn toy_records(subjects: usize, seconds: f64, rate: f64, channels: usize, ppg: bool, seed: u64) -> Vec<SubjectRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..subjects)
        .map(|s| {
            let n = (seconds * rate) as usize;
            let mut chans: Vec<ChannelSeries> = (0..channels)
                .map(|c| ChannelSeries::new(format!("acc{c}"), rate, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let hr = (0..seconds as usize).map(|t| 70.0 + 10.0 * (t as f64 / 7.0 + s as f64).sin()).collect();
            chans.push(ChannelSeries::new("hr", 1.0, hr));
            if ppg {
                chans.push(ChannelSeries::new(
                    "ppg",
                    rate,
                    (0..n).map(|k| (k as f64 * 0.7).sin() + rng.gen_range(-0.1..0.1)).collect(),
                ));
            }
            SubjectRecord {
                subject_id: format!("s{s}"),
                dataset: "toy".into(),
                channels: chans,
            }
        })
        .collect()
}

/// 8 Hz, 1 s snippets (8 samples), N = 4, I = 2.
pub fn toy_pipeline() -> PipelineConfig {
    PipelineConfig {
        rate_hz: 8.0,
        tau_s: 1.0,
        overlap: 0.5,
        n_snippets: 4,
        init_snippets: 2,
        ..Default::default()
    }
}

/// Every width shrunk to a handful of units; LSTM hidden size 4.
pub fn toy_config(kind: ModelKind, channels: usize) -> ModelConfig {
    ModelConfig {
        kind,
        in_channels: channels,
        tse_f: 3,
        tse_out: 4,
        pce_f: 3,
        pce_out: 3,
        lstm_h: 4,
        decoder_hidden: 4,
        disc_hidden: 4,
        fft_out: 2,
        ffnn_width: 3,
        dcl_filters: 2,
        dcl_kernel: 2,
        dcl_conv_layers: 2,
        dcl_hidden: 3,
        ..ModelConfig::default()
    }
    .with_pipeline(&toy_pipeline())
}

pub fn all_segments(data: &PreparedDataset) -> Vec<SegmentRef> {
    data.subjects
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.segments.len()).map(move |k| SegmentRef { subject: i, segment: k }))
        .collect()
}

/// Gradient of the full training loss of a toy model with respect to every parameter.
/// Models with a discriminator are checked with it switched on.
pub fn toy_model_check(kind: ModelKind) -> Result<GradCheckReport> {
    let ppg = kind == ModelKind::PceLstmPpg;
    let data = PreparedDataset::prepare(
        "toy",
        &toy_records(2, 8.0, 8.0, 2, ppg, 8),
        &PipelineConfig { use_ppg: ppg, ..toy_pipeline() },
    )?;
    let model = Model::<f64>::new(toy_config(kind, 2), 11)?;
    let r = all_segments(&data);
    let stats = NormStats { mean: 70.0, std: 6.0 };
    let b = SegmentBatch::build(&data, &r, model.layout(), stats, None)?;
    let partners: Vec<SegmentRef> = r.iter().rev().copied().collect();
    let labels: Vec<bool> = r.iter().zip(&partners).map(|(a, b)| a.subject == b.subject).collect();
    let pb = SegmentBatch::build(&data, &partners, model.layout(), stats, Some(model.config.init_snippets))?;
    let (pairs, weights) = if kind.has_discriminator() {
        (Some((&pb, labels.as_slice())), LossWeights::WITH_DISCRIMINATOR)
    } else {
        (None, LossWeights::HR_ONLY)
    };
    let inputs = model.store.tensors();
    finite_diff_check(&inputs, STEP, TOLERANCE, 17, |tape, vars| {
        let p = ParamVars::from_vars(vars.to_vec());
        Ok(model.loss(tape, &p, &b, pairs, weights)?.total)
    })
}

pub fn toy_model_suite() -> Result<Vec<OracleCase>> {
    ModelKind::ALL
        .iter()
        .map(|&k| {
            Ok(OracleCase {
                name: format!("{k} (toy)"),
                report: toy_model_check(k)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_suite_passes() {
        for c in op_suite().unwrap() {
            assert!(c.report.passed(), "{}: worst {:?}", c.name, c.report.worst());
        }
    }

    #[test]
    fn toy_models_pass() {
        for c in toy_model_suite().unwrap() {
            assert!(c.report.passed(), "{}: worst {:?}", c.name, c.report.worst());
        }
    }

    #[test]
    fn conditioning_path_receives_gradient() {
        let report = toy_model_check(ModelKind::PceLstm).unwrap();
        let model = Model::<f64>::new(toy_config(ModelKind::PceLstm, 2), 11).unwrap();
        assert_eq!(report.elements.len(), model.store.numel());
        let fc_h = model.store.id_of("fc_h.weight").unwrap().index();
        assert!(report.elements.iter().any(|e| e.input == fc_h && e.analytic.abs() > 1e-8));
    }
}
