use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use tacforge::evalkit::{evaluate, export_plots, EvalReport, Variant};
use tacforge::fit::{fit_mcif, FitConfig, ParamBounds};
use tacforge::interp::interpolate_scan;
use tacforge::kinetics::{gen_cohort, KineticParams};
use tacforge::pipeline::{
    build_learning_set, compare_summaries, read_dataset, read_json, run_experiment, split_folds, write_dataset,
    write_json, ComparisonReport, ExperimentConfig, PipelineError,
};
use tacforge::rng;
use tacforge::seqnet::{load_checkpoint, save_checkpoint, train, TrainConfig};
use tacforge::tac::{normalize_scan, RodentDataset, ScanRecord, TimeGrid};

#[derive(Parser, Debug)]
#[command(name = "tacforge", version, about = "Synthetic PET cohorts, input-function fitting and LSTM prediction")]
struct Cli {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment configuration JSON (for `train`, a bare training config is also accepted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Interpolate only between samples later than this many minutes.
    #[arg(long, global = true)]
    cutoff_min: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort.
    Synth(SynthArgs),
    /// Fit each scan and replace its MCIF with the fitted input function.
    Fit(FitArgs),
    /// Normalize scans and optionally interpolate them.
    Prep(PrepArgs),
    /// Train one model on a prepared dataset.
    Train(DataArgs),
    /// Score a model on a prepared dataset.
    Eval(ModelArgs),
    /// Full k-fold comparison of raw and interpolated inputs.
    Xval,
    /// Relative change between a raw and an interpolated report.
    Compare(CompareArgs),
    /// Write curve CSVs, SVG charts and boxplot summaries for a model.
    Export(ModelArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Cohort size; overrides the config file.
    #[arg(long)]
    rodents: Option<u32>,
    /// Count-noise scale on IDIF and myocardium curves.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long = "in")]
    input: PathBuf,
    /// JSON map from parameter name to `[lower, upper]`.
    #[arg(long)]
    bounds: PathBuf,
    /// Multi-start restarts per scan.
    #[arg(long)]
    restarts: Option<usize>,
    /// Nelder-Mead iteration cap per restart.
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args, Debug)]
struct PrepArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long = "in")]
    input: PathBuf,
    /// `raw` or `interpolated`.
    #[arg(long, default_value = "interpolated")]
    variant: Variant,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Inferred from the sample grid when omitted.
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Report holding the raw-variant summary.
    raw: PathBuf,
    /// Report holding the interpolated-variant summary.
    interpolated: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::from(PipelineError::from(e))
            }
        }
    )*};
}
validation_from!(
    tacforge::tac::TacError,
    tacforge::kinetics::KineticsError,
    tacforge::fit::FitError,
    tacforge::seqnet::SeqnetError,
    tacforge::evalkit::EvalError
);

fn need_out(cli: &Cli) -> Result<&Path, CliError> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Validation("--out is required for this command".into()))
}

/// Experiment config from `--config` with command-line overrides applied.
fn experiment_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.cohort.seed = s;
    }
    if let Some(c) = cli.cutoff_min {
        cfg.cutoff_min = c;
    }
    Ok(cfg)
}

/// `--config` may hold a full experiment config or just a training config.
fn train_config(cli: &Cli) -> Result<TrainConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let value: serde_json::Value = read_json(p)?;
            let train = match value.get("train") {
                Some(t) => t.clone(),
                None => value,
            };
            serde_json::from_value(train).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit<T: Serialize>(cli: &Cli, value: &T) -> Result<(), CliError> {
    match &cli.out {
        Some(p) => write_json(p, value)?,
        None => println!("{}", serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?),
    }
    Ok(())
}

fn infer_variant(scans: &[ScanRecord]) -> Variant {
    let canonical = TimeGrid::canonical();
    match scans.first() {
        Some(s) if s.idif.times() != canonical.sample_times() => Variant::Interpolated,
        _ => Variant::Raw,
    }
}

fn normalized(ds: RodentDataset) -> Result<Vec<ScanRecord>, CliError> {
    ds.scans
        .into_iter()
        .map(|s| if s.is_normalized() { Ok(s) } else { normalize_scan(&s).map_err(CliError::from) })
        .collect()
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<(), CliError> {
    let out = need_out(cli)?;
    let mut cohort = experiment_config(cli)?.cohort;
    if let Some(n) = args.rodents {
        cohort.n_rodents = n;
    }
    if let Some(c) = args.noise {
        cohort.noise = c;
    }
    let (ds, truth) = gen_cohort(&cohort)?;
    write_dataset(&ds, Some(&truth), out)?;
    log::info!("wrote {} scans to {}", ds.scans.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitRecord {
    rodent_id: u32,
    age_months: u32,
    params: KineticParams,
    cost: f64,
    restart: usize,
    converged: bool,
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<(), CliError> {
    use rayon::prelude::*;
    let out = need_out(cli)?;
    let bounds: ParamBounds = read_json(&args.bounds)?;
    let mut base = FitConfig::new(bounds);
    if let Some(r) = args.restarts {
        base.restarts = r;
    }
    if let Some(m) = args.max_iter {
        base.max_iter = m;
    }
    let seed = cli.seed.unwrap_or(0);
    let mut ds = read_dataset(&args.input)?;
    let results = ds
        .scans
        .par_iter()
        .map(|s| {
            let mut cfg = base.clone();
            cfg.seed = rng::derive_seed(seed, &[0xF17, u64::from(s.rodent_id), u64::from(s.age_months)]);
            fit_mcif(&s.idif, &s.myo, &cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut records = Vec::with_capacity(results.len());
    for (s, r) in ds.scans.iter_mut().zip(results) {
        records.push(FitRecord {
            rodent_id: s.rodent_id,
            age_months: s.age_months,
            params: r.params,
            cost: r.cost(),
            restart: r.restart,
            converged: r.converged,
        });
        s.mcif = r.mcif_fitted;
    }
    write_dataset(&ds, None, out)?;
    write_json(&out.join("fits.json"), &records)?;
    Ok(())
}

fn cmd_prep(cli: &Cli, args: &PrepArgs) -> Result<(), CliError> {
    let out = need_out(cli)?;
    let cutoff = experiment_config(cli)?.cutoff_min;
    let ds = read_dataset(&args.input)?;
    let provenance = ds.provenance.clone();
    let mut scans = normalized(ds)?;
    if args.variant == Variant::Interpolated {
        scans = scans.iter().map(|s| interpolate_scan(s, cutoff)).collect::<Result<_, _>>()?;
    }
    write_dataset(&RodentDataset { scans, provenance }, None, out)?;
    Ok(())
}

fn cmd_train(cli: &Cli, args: &DataArgs) -> Result<(), CliError> {
    let out = need_out(cli)?;
    let cfg = train_config(cli)?;
    let ds = read_dataset(&args.data)?;
    let ids = ds.rodent_ids();
    let scans = normalized(ds)?;
    let variant = infer_variant(&scans);
    // Train on the first fold's training rodents, stop early on its validation rodents.
    let split = split_folds(&ids, 5, cfg.seed)?.remove(0);
    let part = |ids: &[u32]| -> Vec<ScanRecord> {
        scans.iter().filter(|s| ids.contains(&s.rodent_id)).cloned().collect()
    };
    let tr = build_learning_set(&part(&split.train_rodents), variant)?;
    let va = build_learning_set(&part(&split.val_rodents), variant)?;
    let (model, history) = train(&tr.to_sequence_set(), &va.to_sequence_set(), &cfg)?;
    log::info!(
        "stopped at epoch {}, best epoch {}",
        history.stopped_epoch,
        history.best_epoch
    );
    save_checkpoint(&model, out)?;
    Ok(())
}

fn model_report(args: &ModelArgs) -> Result<(EvalReport, Vec<ScanRecord>), CliError> {
    let model = load_checkpoint(&args.model)?;
    let scans = normalized(read_dataset(&args.data)?)?;
    let variant = args.variant.unwrap_or_else(|| infer_variant(&scans));
    let report = evaluate(&model, &scans, variant, None)?;
    Ok((report, scans))
}

fn cmd_eval(cli: &Cli, args: &ModelArgs) -> Result<(), CliError> {
    let (report, _) = model_report(args)?;
    emit(cli, &report)
}

fn cmd_export(cli: &Cli, args: &ModelArgs) -> Result<(), CliError> {
    let out = need_out(cli)?;
    let (report, scans) = model_report(args)?;
    export_plots(&report, &scans, out)?;
    write_json(&out.join("eval.json"), &report)?;
    Ok(())
}

fn cmd_xval(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = experiment_config(cli)?;
    if cli.out.is_some() {
        cfg.out_dir = cli.out.clone();
    }
    let report = run_experiment(&cfg)?;
    for s in &report.summaries {
        println!("{:<13} MSE {}  DTW {}", s.variant.as_str(), s.mse_text, s.dtw_text);
    }
    if let Some(rc) = report.relative_change {
        println!("relative MSE change {:.1}%", 100.0 * rc.mse);
    }
    if cfg.out_dir.is_none() {
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?);
    }
    Ok(())
}

fn cmd_compare(cli: &Cli, args: &CompareArgs) -> Result<(), CliError> {
    let raw: ComparisonReport = read_json(&args.raw)?;
    let interp: ComparisonReport = read_json(&args.interpolated)?;
    let r = raw
        .summary(Variant::Raw)
        .ok_or_else(|| CliError::Validation(format!("{} has no raw summary", args.raw.display())))?;
    let i = interp.summary(Variant::Interpolated).ok_or_else(|| {
        CliError::Validation(format!("{} has no interpolated summary", args.interpolated.display()))
    })?;
    let change = compare_summaries(r, i)?;
    emit(cli, &change)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Prep(a) => cmd_prep(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Xval => cmd_xval(cli),
        Command::Compare(a) => cmd_compare(cli, a),
        Command::Export(a) => cmd_export(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Validation(_) => 2,
                CliError::Runtime(_) => 3,
            })
        }
    }
}
