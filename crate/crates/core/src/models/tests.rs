use super::*;
use crate::signal::{NormStats, PipelineConfig, PreparedDataset};
use crate::oracle::{all_segments, toy_config, toy_pipeline, toy_records};
use crate::tensor::{Mode, Tape, Tensor};

#[test]
fn shape_laws() {
    for p in 2..=9 {
        let len = 1usize << p;
        let mut s = ParameterStore::<f32>::new(0);
        let enc = ConvEncoder::new(&mut s, "tse", 2, len, 3, 5, 0.0).unwrap();
        assert_eq!(enc.layers.len(), p);
        let mut tape = Tape::new(Mode::Eval, 0);
        let pv = s.bind(&mut tape);
        let x = tape.constant([3, 2, len], vec![0.5; 6 * len]).unwrap();
        let y = enc.forward(&mut tape, &pv, x).unwrap();
        assert_eq!(tape.shape(y).unwrap(), &[3, 5]);
    }
    assert_eq!(halving_lengths(12), vec![12, 6, 3, 1]);
    assert_eq!(ModelConfig::new(ModelKind::PceLstmPpg, 6).feature_width(), 140);
}

#[test]
fn parameter_counts() {
    let dalia = count_parameters(&ModelConfig::new(ModelKind::PceLstm, 6)).unwrap();
    let pamap = count_parameters(&ModelConfig::new(ModelKind::PceLstm, 12)).unwrap();
    assert_eq!(pamap.total - dalia.total, 288);
    assert_eq!(pamap.inference - dalia.inference, 288);
    // Independent enumeration of the layer list.
    let conv = |ci: usize, co: usize, k: usize| ci * co * k + co;
    let lin = |i: usize, o: usize| i * o + o;
    let tse = conv(6, 16, 3) + 5 * conv(16, 16, 3) + conv(16, 128, 2);
    let pce = conv(129, 64, 3) + 2 * conv(64, 64, 3);
    let lstm = 4 * 64 * (128 + 64) + 4 * 64;
    let dec = lin(64, 32) + lin(32, 32) + lin(32, 1);
    let expected = tse + pce + 2 * lin(64, 64) + lstm + dec;
    assert_eq!(dalia.inference, expected);
    assert_eq!(dalia.inference, 118_881);
    let rel = (dalia.inference as f64 - 120_273.0).abs() / 120_273.0;
    assert!(rel < 0.02, "{rel}");
    assert_eq!(dalia.total - dalia.inference, lin(128, 64) + 3 * lin(64, 64) + lin(64, 1));
    let names: Vec<&str> = dalia.components.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["tse", "pce", "fc_h", "fc_c", "lstm", "decoder", "disc"]);
}

#[test]
fn default_geometry_gives_38_predictions() {
    let cfg = PipelineConfig::default();
    let recs = toy_records(1, 110.0, 32.0, 6, false, 1);
    let data = PreparedDataset::prepare("toy", &recs, &cfg).unwrap();
    assert_eq!(data.subjects[0].segments.len(), 1);
    for kind in [ModelKind::PceLstm, ModelKind::LstmSelfEncode, ModelKind::Ffnn] {
        let model = Model::<f32>::new(ModelConfig::new(kind, 6), 3).unwrap();
        let b = SegmentBatch::build(&data, &all_segments(&data), model.layout(), NormStats::IDENTITY, None).unwrap();
        let mut tape = Tape::new(Mode::Eval, 0);
        let p = model.bind(&mut tape);
        let out = model.forward(&mut tape, &p, &b).unwrap();
        assert_eq!(tape.shape(out.hr_bpm).unwrap(), &[1, 38], "{kind}");
    }
}

fn zero_all<T: crate::tensor::Scalar>(m: &mut Model<T>) {
    for (_, t) in m.store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }
}

#[test]
fn zero_parameters_predict_the_mean() {
    let data = PreparedDataset::prepare("toy", &toy_records(2, 8.0, 8.0, 2, false, 2), &toy_pipeline()).unwrap();
    let stats = NormStats { mean: 71.5, std: 9.0 };
    for kind in [ModelKind::PceLstm, ModelKind::LstmSelfEncode, ModelKind::Ffnn, ModelKind::DeepConvLstm] {
        let mut cfg = toy_config(kind, 2);
        if kind == ModelKind::DeepConvLstm {
            cfg.ts_len = 8;
        }
        let mut model = Model::<f64>::new(cfg, 5).unwrap();
        zero_all(&mut model);
        let b = SegmentBatch::build(&data, &all_segments(&data), model.layout(), stats, None).unwrap();
        let mut tape = Tape::new(Mode::Eval, 0);
        let p = model.bind(&mut tape);
        let out = model.forward(&mut tape, &p, &b).unwrap();
        let v = tape.value(out.hr_bpm).unwrap();
        assert_eq!(v.len(), b.batch * 2);
        assert!(v.iter().all(|&x| x == 71.5), "{kind}: {v:?}");
    }
}

#[test]
fn zero_final_discriminator_layer_is_one_half() {
    let mut model = Model::<f64>::new(toy_config(ModelKind::PceLstm, 2), 5).unwrap();
    let last = model.pce_lstm().unwrap().discriminator.layers.last().unwrap().clone();
    model.store.get_mut(last.weight).data_mut().fill(0.0);
    model.store.get_mut(last.bias).data_mut().fill(0.0);
    let mut tape = Tape::new(Mode::Train, 0);
    let p = model.bind(&mut tape);
    let a = tape.constant([2, 3], vec![0.3, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap();
    let b = tape.constant([2, 3], vec![1.0, 1.0, -1.0, 0.0, 0.5, 0.5]).unwrap();
    let prob = model.discriminate(&mut tape, &p, a, b).unwrap();
    assert!(tape.value(prob).unwrap().iter().all(|&v| v == 0.5));
}

#[test]
fn discriminator_is_order_sensitive() {
    let model = Model::<f64>::new(toy_config(ModelKind::PceLstm, 2), 6).unwrap();
    let mut tape = Tape::new(Mode::Eval, 0);
    let p = model.bind(&mut tape);
    let a = tape.constant([1, 3], vec![0.3, -1.0, 2.0]).unwrap();
    let b = tape.constant([1, 3], vec![1.0, 0.5, -0.5]).unwrap();
    let ab = model.discriminate(&mut tape, &p, a, b).unwrap();
    let ba = model.discriminate(&mut tape, &p, b, a).unwrap();
    assert_ne!(tape.value(ab).unwrap(), tape.value(ba).unwrap());
}

#[test]
fn loss_weights_combine_exactly() {
    let mut tape = Tape::<f64>::new(Mode::Eval, 0);
    let hr = tape.constant([1], vec![1.0]).unwrap();
    let d = tape.constant([1], vec![2.0]).unwrap();
    let t = combine_losses(&mut tape, LossWeights::WITH_DISCRIMINATOR, hr, Some(d)).unwrap();
    assert_eq!(tape.value(t).unwrap()[0], 0.9 * 1.0 + 0.1 * 2.0);
    let t = combine_losses(&mut tape, LossWeights::HR_ONLY, hr, None).unwrap();
    assert_eq!(tape.value(t).unwrap()[0], 1.0);
    assert!(!LossWeights::HR_ONLY.uses_discriminator());
}

#[test]
fn pce_responds_to_input_and_is_deterministic() {
    let data = PreparedDataset::prepare("toy", &toy_records(2, 8.0, 8.0, 2, false, 3), &toy_pipeline()).unwrap();
    let model = Model::<f64>::new(toy_config(ModelKind::PceLstm, 2), 5).unwrap();
    let b = SegmentBatch::build(&data, &all_segments(&data), model.layout(), NormStats::IDENTITY, Some(2)).unwrap();
    let run = || {
        let mut tape = Tape::new(Mode::Eval, 0);
        let p = model.bind(&mut tape);
        let v = model.pce(&mut tape, &p, &b).unwrap();
        tape.value(v).unwrap().to_vec()
    };
    let v = run();
    assert_eq!(v, run());
    assert_eq!(v.len(), b.batch * 3);
    assert_ne!(v[..3], v[3..6]);
}

#[test]
fn self_encode_zeroes_prediction_heart_rate() {
    let data = PreparedDataset::prepare("toy", &toy_records(1, 8.0, 8.0, 2, false, 4), &toy_pipeline()).unwrap();
    let model = Model::<f64>::new(toy_config(ModelKind::LstmSelfEncode, 2), 5).unwrap();
    let r = all_segments(&data);
    let b = SegmentBatch::build(&data, &r, model.layout(), NormStats { mean: 70.0, std: 5.0 }, None).unwrap();
    let mut altered = b.clone();
    for row in altered.hr_norm.chunks_mut(b.n) {
        row[b.init..].iter_mut().for_each(|v| *v = 123.0);
    }
    let predict = |batch: &SegmentBatch<f64>| {
        let mut tape = Tape::new(Mode::Eval, 0);
        let p = model.bind(&mut tape);
        let out = model.forward(&mut tape, &p, batch).unwrap();
        tape.value(out.hr_bpm).unwrap().to_vec()
    };
    assert_eq!(predict(&b), predict(&altered));
}

#[test]
fn ppg_variant_shapes_and_zero_signal() {
    let mut pipe = toy_pipeline();
    pipe.use_ppg = true;
    let data = PreparedDataset::prepare("toy", &toy_records(2, 8.0, 8.0, 2, true, 5), &pipe).unwrap();
    let cfg = toy_config(ModelKind::PceLstmPpg, 2);
    let model = Model::<f64>::new(cfg, 5).unwrap();
    let b = SegmentBatch::build(&data, &all_segments(&data), model.layout(), NormStats::IDENTITY, None).unwrap();
    assert_eq!(b.channels, 3);
    let mut tape = Tape::new(Mode::Eval, 0);
    let p = model.bind(&mut tape);
    let out = model.forward(&mut tape, &p, &b).unwrap();
    assert_eq!(tape.shape(out.hr_bpm).unwrap(), &[b.batch, 2]);

    let net = model.pce_lstm().unwrap();
    let enc = net.fft_encoder.as_ref().unwrap();
    let x = tape.constant([2, 1, 4], vec![0.0; 8]).unwrap();
    let y = enc.forward(&mut tape, &p, x).unwrap();
    let y = tape.value(y).unwrap();
    assert_eq!(y[..2], y[2..]);
}

#[test]
fn ffnn_zero_weights_reach_bias_fixed_point() {
    let data = PreparedDataset::prepare("toy", &toy_records(1, 8.0, 8.0, 2, false, 6), &toy_pipeline()).unwrap();
    let mut model = Model::<f64>::new(toy_config(ModelKind::Ffnn, 2), 5).unwrap();
    zero_all(&mut model);
    let head = match model.store.id_of("ffnn.head.bias") {
        Some(id) => id,
        None => panic!("head bias missing"),
    };
    model.store.get_mut(head).data_mut()[0] = 0.25;
    let b = SegmentBatch::build(&data, &all_segments(&data), model.layout(), NormStats::IDENTITY, None).unwrap();
    let mut tape = Tape::new(Mode::Eval, 0);
    let p = model.bind(&mut tape);
    let out = model.forward(&mut tape, &p, &b).unwrap();
    assert!(tape.value(out.hr_norm).unwrap().iter().all(|&v| v == 0.25));
}

#[test]
fn deepconvlstm_step_arithmetic() {
    let cfg = ModelConfig::new(ModelKind::DeepConvLstm, 6);
    assert_eq!(cfg.ts_len, 90);
    let mut s = ParameterStore::<f32>::new(0);
    let net = DeepConvLstm::new(&mut s, &cfg).unwrap();
    assert_eq!(net.steps_per_snippet(90), 74);
}

#[test]
fn eval_mode_is_deterministic() {
    let data = PreparedDataset::prepare("toy", &toy_records(2, 8.0, 8.0, 2, false, 7), &toy_pipeline()).unwrap();
    let mut cfg = toy_config(ModelKind::PceLstm, 2);
    cfg.tse_dropout = 0.5;
    let model = Model::<f32>::new(cfg, 5).unwrap();
    let b = SegmentBatch::build(&data, &all_segments(&data), model.layout(), NormStats::IDENTITY, None).unwrap();
    let run = |seed| {
        let mut tape = Tape::new(Mode::Eval, seed);
        let p = model.bind(&mut tape);
        let out = model.forward(&mut tape, &p, &b).unwrap();
        tape.value(out.hr_bpm).unwrap().to_vec()
    };
    assert_eq!(run(1), run(2));
}

#[test]
fn batch_rejects_mismatched_model() {
    let data = PreparedDataset::prepare("toy", &toy_records(1, 8.0, 8.0, 3, false, 9), &toy_pipeline()).unwrap();
    let model = Model::<f64>::new(toy_config(ModelKind::PceLstm, 2), 1).unwrap();
    let b = SegmentBatch::build(&data, &all_segments(&data), model.layout(), NormStats::IDENTITY, None).unwrap();
    let mut tape = Tape::new(Mode::Eval, 0);
    let p = model.bind(&mut tape);
    let err = model.forward(&mut tape, &p, &b).unwrap_err().to_string();
    assert!(err.contains("2 sensor channels"), "{err}");
}

#[test]
fn tensors_round_trip_via_store() {
    let model = Model::<f64>::new(toy_config(ModelKind::PceLstm, 2), 1).unwrap();
    let t: Vec<Tensor<f64>> = model.store.tensors();
    assert_eq!(t.iter().map(Tensor::numel).sum::<usize>(), count_parameters(&model.config).unwrap().total);
}

