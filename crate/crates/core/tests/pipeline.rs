use pcehr::data::{canonical, synth};
use pcehr::experiment::{
    ensemble, evaluate_all, make_folds, predict_segments, run_arms, train_run, Arm, ExperimentConfig, SuiteOptions,
    TrainOptions,
};
use pcehr::models::{Model, ModelKind};
use pcehr::nn::Checkpoint;
use pcehr::signal::PreparedDataset;

fn small_population(n: usize, seconds: u32) -> Vec<pcehr::signal::SubjectRecord> {
    synth::generate(&synth::SynthConfig {
        n_subjects: n,
        duration_s: seconds,
        seed: 2,
        ..Default::default()
    })
    .unwrap()
    .0
}

fn quick_config() -> ExperimentConfig {
    ExperimentConfig {
        epochs: Some(2),
        runs: 2,
        tse_f: 4,
        tse_out: 8,
        pce_f: 8,
        pce_out: 8,
        lstm_h: 8,
        decoder_hidden: 8,
        disc_hidden: 8,
        ..Default::default()
    }
}

#[test]
fn canonical_round_trip_preserves_preprocessing() {
    let records = small_population(2, 230);
    let dir = tempfile::tempdir().unwrap();
    canonical::write_dataset(dir.path(), "synth", &records).unwrap();
    let summary = canonical::validate(dir.path()).unwrap();
    assert_eq!(summary.subjects, 2);
    let (_, back) = canonical::read_dataset(dir.path()).unwrap();
    for (a, b) in records.iter().zip(&back) {
        for (ca, cb) in a.channels.iter().zip(&b.channels) {
            assert_eq!(ca.name, cb.name);
            for (x, y) in ca.values.iter().zip(&cb.values) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }
    let cfg = ExperimentConfig::default().pipeline(ModelKind::PceLstm);
    let p1 = PreparedDataset::prepare("synth", &records, &cfg).unwrap();
    let p2 = PreparedDataset::prepare("synth", &back, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert!(p1.subjects.iter().all(|s| s.segments.len() == 2));
}

#[test]
fn checkpoint_reproduces_test_predictions() {
    let records = small_population(3, 230);
    let cfg = quick_config();
    let data = PreparedDataset::prepare("synth", &records, &cfg.pipeline(ModelKind::PceLstm)).unwrap();
    let fold = make_folds(&data, 1, cfg.val_fraction, 0).unwrap().remove(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let opts = TrainOptions {
        label: "pce-lstm".into(),
        epochs: 3,
        batch_size: cfg.batch_size,
        adam: cfg.adam(),
        weights: cfg.loss_weights(ModelKind::PceLstm),
        checkpoint: Some(path.clone()),
    };
    let r = train_run(&data, &fold, &cfg.model(ModelKind::PceLstm, data.n_channels()), &opts).unwrap();
    let (model, stats) = Model::<f32>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(stats, r.hr_stats);
    let again: Vec<f64> = predict_segments(&model, &data, &fold.test, stats, 64)
        .unwrap()
        .into_iter()
        .flat_map(|(_, _, p)| p)
        .collect();
    let stored: Vec<f64> = r.predictions.iter().map(|p| p.pred_bpm).collect();
    assert_eq!(again, stored);
}

#[test]
fn parallel_suite_matches_sequential_and_ensembles_are_means() {
    let records = small_population(3, 230);
    let cfg = quick_config();
    let arms = [Arm::model(&cfg, ModelKind::PceLstm), Arm::model(&cfg, ModelKind::Ffnn)];
    let seq = run_arms("synth", &records, &cfg, &arms, &SuiteOptions::default()).unwrap();
    let par = run_arms(
        "synth",
        &records,
        &cfg,
        &arms,
        &SuiteOptions {
            threads: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(seq.len(), 2 * 3 * 2);
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!((a.label.as_str(), a.fold, a.run), (b.label.as_str(), b.fold, b.run));
        assert_eq!(a.predictions, b.predictions);
    }

    let reports = evaluate_all(&seq).unwrap();
    assert_eq!(reports.len(), 6);
    for rep in &reports {
        let runs: Vec<_> = seq
            .iter()
            .filter(|r| r.label == rep.model && r.test_subject_id == rep.subject)
            .collect();
        let preds: Vec<Vec<f64>> = runs.iter().map(|r| r.predictions.iter().map(|p| p.pred_bpm).collect()).collect();
        let ens = ensemble(&preds);
        for (i, e) in ens.iter().enumerate() {
            let manual = (preds[0][i] + preds[1][i]) / 2.0;
            assert!((e - manual).abs() <= 1e-6);
        }
        assert!(rep.ensemble_mae.is_finite() && rep.mean_mae.is_finite());
    }
}
