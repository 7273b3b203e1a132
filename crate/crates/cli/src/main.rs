use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pcehr::data::{self, canonical, synth};
use pcehr::experiment::{
    ablation_arms, evaluate_all, load_runs, make_folds, run_arms, save_run, train_run, write_reports, Arm,
    ExperimentConfig, SubjectReport, SuiteOptions, TrainOptions,
};
use pcehr::models::{count_parameters, ModelKind};
use pcehr::oracle;
use pcehr::signal::{PreparedDataset, SubjectRecord};

#[derive(Parser)]
#[command(name = "pcehr", version, about = "Heart-rate forecasting from wearable accelerometers")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population as a canonical dataset.
    SynthGen(SynthGenArgs),
    /// Check a canonical dataset's manifest against its CSV files.
    Validate { root: PathBuf },
    /// Preprocess a dataset into a segment cache (JSON).
    Preprocess(PreprocessArgs),
    /// Train one run of one fold.
    Train(TrainArgs),
    /// Aggregate run results into report CSVs.
    Evaluate(EvaluateArgs),
    /// Leave-one-subject-out training of one or more models over every fold and run.
    Suite(SuiteArgs),
    /// With and without the discriminator loss, and the self-encoding baseline, on identical folds.
    Ablation(AblationArgs),
    /// Finite-difference gradient checks of every op and every toy model.
    Gradcheck,
    /// Parameter count with per-component breakdown.
    CountParams(CountArgs),
}

#[derive(Args)]
struct SynthGenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generator settings (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    duration: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also emit a PPG channel.
    #[arg(long)]
    ppg: bool,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset root: canonical (manifest.json) or a PAMAP2 directory.
    #[arg(long, env = data::DATA_DIR_ENV)]
    data: Option<PathBuf>,
    /// `synth` generates the population in memory instead of reading `--data`.
    #[arg(long, value_parser = ["synth"])]
    dataset: Option<String>,
    /// Synthetic population size.
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    /// Synthetic series length in seconds.
    #[arg(long, default_value_t = 1200)]
    duration: u32,
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
}

/// Experiment settings: a config file plus flag overrides.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key = value experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    n_snippets: Option<usize>,
    #[arg(long)]
    init_snippets: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Base seed for splits, initialization, dropout, and pair sampling.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        c.tau_s = self.tau.or(c.tau_s);
        c.overlap = self.overlap.or(c.overlap);
        c.rate_hz = self.rate.or(c.rate_hz);
        c.epochs = self.epochs.or(c.epochs);
        if let Some(v) = self.n_snippets {
            c.n_snippets = v;
        }
        if let Some(v) = self.init_snippets {
            c.init_snippets = v;
        }
        if let Some(v) = self.runs {
            c.runs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.seed {
            c.base_seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Use this model's preprocessing preset.
    #[arg(long, default_value = "pce-lstm")]
    model: ModelKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    model: ModelKind,
    /// Fold index (0-based, in subject order).
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Run number, 1-based.
    #[arg(long, default_value_t = 1)]
    run: usize,
    /// Output directory for the run result and checkpoint.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory holding run result JSON files (searched recursively).
    #[arg(long)]
    runs: PathBuf,
    /// Where to write the report CSVs (defaults to `--runs`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Models to train, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "pce-lstm")]
    model: Vec<ModelKind>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads; 1 runs everything in order.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Only these folds (comma separated, 0-based).
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<usize>>,
    /// Save the best checkpoint of every run.
    #[arg(long)]
    checkpoints: bool,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "results-ablation")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<usize>>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    model: ModelKind,
    /// Sensor channels (6 for two tri-axial accelerometers, 12 for PAMAP2).
    #[arg(long, default_value_t = 6)]
    channels: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_records(args: &DataArgs, with_ppg: bool) -> Result<(String, Vec<SubjectRecord>)> {
    if args.dataset.as_deref() == Some("synth") {
        let cfg = synth::SynthConfig {
            n_subjects: args.subjects,
            duration_s: args.duration,
            seed: args.synth_seed,
            with_ppg,
            ..Default::default()
        };
        let (records, _) = synth::generate(&cfg)?;
        return Ok(("synth".into(), records));
    }
    let root = data::resolve_root(args.data.as_deref())?;
    Ok(data::load(&root)?)
}

fn print_reports(reports: &[SubjectReport]) {
    println!("{:<24} {:<10} {:>9} {:>9} {:>9} {:>9}", "model", "subject", "mean MAE", "ens MAE", "mean RMSE", "ens RMSE");
    for r in reports {
        println!(
            "{:<24} {:<10} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            r.model, r.subject, r.mean_mae, r.ensemble_mae, r.mean_rmse, r.ensemble_rmse
        );
        if let Some(a) = r.disc_accuracy {
            println!("{:<24} {:<10} discriminator accuracy {:.3}", "", "", a);
        }
    }
}

fn synth_gen(a: SynthGenArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => synth::SynthConfig::load(p)?,
        None => synth::SynthConfig::default(),
    };
    if let Some(v) = a.subjects {
        cfg.n_subjects = v;
    }
    if let Some(v) = a.duration {
        cfg.duration_s = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.with_ppg |= a.ppg;
    let (records, subjects) = synth::generate(&cfg)?;
    canonical::write_dataset(&a.out, "synth", &records)?;
    let meta = a.out.join("conditioning.json");
    std::fs::write(&meta, serde_json::to_vec_pretty(&subjects)?).with_context(|| meta.display().to_string())?;
    println!("wrote {} subjects to {}", records.len(), a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let (tag, records) = load_records(&a.data, a.model == ModelKind::PceLstmPpg)?;
    let data = PreparedDataset::prepare(&tag, &records, &cfg.pipeline(a.model))?;
    let file = std::fs::File::create(&a.out).with_context(|| a.out.display().to_string())?;
    serde_json::to_writer(std::io::BufWriter::new(file), &data)?;
    for s in &data.subjects {
        println!("{:<10} {:>6} snippets {:>4} segments", s.subject_id, s.snippets.len(), s.segments.len());
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let (tag, records) = load_records(&a.data, a.model == ModelKind::PceLstmPpg)?;
    let data = PreparedDataset::prepare(&tag, &records, &cfg.pipeline(a.model))?;
    let folds = make_folds(&data, cfg.runs.max(a.run), cfg.val_fraction, cfg.base_seed)?;
    let Some(fold) = folds.iter().find(|f| f.fold == a.fold && f.run == a.run) else {
        bail!("no fold {} run {} (dataset has {} eligible subjects)", a.fold, a.run, folds.len() / cfg.runs.max(a.run));
    };
    let arm = Arm::model(&cfg, a.model);
    let opts = TrainOptions {
        label: arm.label.clone(),
        epochs: cfg.epochs_for(a.model),
        batch_size: cfg.batch_size,
        adam: cfg.adam(),
        weights: arm.weights,
        checkpoint: Some(a.out.join("runs").join(&arm.label).join(format!("{}.ckpt", fold.run_id()))),
    };
    if let Some(p) = opts.checkpoint.as_ref().and_then(|p| p.parent()) {
        std::fs::create_dir_all(p)?;
    }
    let started = Instant::now();
    let r = train_run(&data, fold, &cfg.model(a.model, data.n_channels()), &opts)?;
    let path = save_run(&a.out, &r)?;
    if let Some(err) = &r.failed {
        bail!("run diverged: {err}");
    }
    print_reports(&evaluate_all(std::slice::from_ref(&r))?);
    println!("best epoch {}; {:.1} s; result in {}", r.best_epoch, started.elapsed().as_secs_f64(), path.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let runs = load_runs(&a.runs)?;
    let out = a.out.unwrap_or(a.runs);
    let reports = write_reports(&out, &runs)?;
    print_reports(&reports);
    Ok(())
}

fn finish(out: &Path, runs: &[pcehr::experiment::RunResult], started: Instant) -> Result<()> {
    let reports = write_reports(out, runs)?;
    print_reports(&reports);
    println!("{} runs in {:.1} s; reports in {}", runs.len(), started.elapsed().as_secs_f64(), out.display());
    Ok(())
}

fn suite(a: SuiteArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let (tag, records) = load_records(&a.data, a.model.contains(&ModelKind::PceLstmPpg))?;
    let arms: Vec<Arm> = a.model.iter().map(|&k| Arm::model(&cfg, k)).collect();
    let opts = SuiteOptions {
        threads: a.parallel,
        out_dir: Some(a.out.clone()),
        checkpoints: a.checkpoints,
        folds: a.folds,
        runs: None,
    };
    let started = Instant::now();
    let runs = run_arms(&tag, &records, &cfg, &arms, &opts)?;
    finish(&a.out, &runs, started)
}

fn ablation(a: AblationArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let (tag, records) = load_records(&a.data, false)?;
    let opts = SuiteOptions {
        threads: a.parallel,
        out_dir: Some(a.out.clone()),
        checkpoints: false,
        folds: a.folds,
        runs: None,
    };
    let started = Instant::now();
    let runs = run_arms(&tag, &records, &cfg, &ablation_arms(&cfg), &opts)?;
    finish(&a.out, &runs, started)
}

fn gradcheck() -> Result<bool> {
    let started = Instant::now();
    let mut ok = true;
    for c in oracle::op_suite()?.into_iter().chain(oracle::toy_model_suite()?) {
        let pass = c.report.passed();
        ok &= pass;
        println!(
            "{} {:<32} {:>5} elements  max rel err {:.2e}",
            if pass { "ok  " } else { "FAIL" },
            c.name,
            c.report.elements.len(),
            c.report.max_rel_error
        );
    }
    println!(
        "tolerance {:.0e}, step {:.0e}; {:.1} s",
        oracle::TOLERANCE,
        oracle::STEP,
        started.elapsed().as_secs_f64()
    );
    Ok(ok)
}

fn count_params(a: CountArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let model = cfg.model(a.model, a.channels);
    let counts = count_parameters(&model)?;
    for (name, n) in &counts.components {
        println!("{name:<16} {n:>9}");
    }
    println!("{:<16} {:>9}", "total", counts.total);
    if counts.inference != counts.total {
        println!("{:<16} {:>9}", "without disc", counts.inference);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::SynthGen(a) => synth_gen(a),
        Command::Validate { root } => canonical::validate(&root).map_err(Into::into).map(|s| {
            println!("{}: {} subjects, {} channels, {} samples", s.dataset, s.subjects, s.channels, s.samples)
        }),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Suite(a) => suite(a),
        Command::Ablation(a) => ablation(a),
        Command::Gradcheck => match gradcheck() {
            Ok(true) => Ok(()),
            Ok(false) => Err(anyhow::anyhow!("gradient check failed")),
            Err(e) => Err(e),
        },
        Command::CountParams(a) => count_params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
