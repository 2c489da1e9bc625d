//! Cross-validated comparison of the raw and interpolated variants.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::folds::{assign_scans, build_learning_set, split_folds, FoldSplit, LearningSet};
use super::io::{read_dataset, write_json};
use super::PipelineError;
use crate::evalkit::{evaluate, export_plots, fold_stats, EvalReport, FoldSummary, OraclePredictor, Predictor, Variant};
use crate::fit::{fit_mcif, FitConfig, ParamBounds};
use crate::interp::{interpolate_scan, DEFAULT_CUTOFF_MIN};
use crate::kinetics::{gen_cohort, CohortConfig, KineticParams, ParamRanges};
use crate::rng;
use crate::seqnet::{save_checkpoint, train, LstmModel, TrainConfig};
use crate::tac::{normalize_scan, RodentDataset, ScanRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// The simulator's noise-free input function.
    #[default]
    Truth,
    /// Input function recovered by fitting each scan.
    Fitted,
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Raw, Variant::Interpolated]
}

fn default_k() -> usize {
    5
}

fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF_MIN
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset directory; a cohort is generated from `cohort` when absent.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Used in fitted mode; bounds default to the cohort ranges widened by the age drift.
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub target_mode: TargetMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k_folds: usize,
    #[serde(default = "default_cutoff")]
    pub cutoff_min: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub export_plots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            cohort: CohortConfig::default(),
            variants: default_variants(),
            train: TrainConfig::default(),
            fit: None,
            target_mode: TargetMode::Truth,
            seed: 0,
            k_folds: default_k(),
            cutoff_min: DEFAULT_CUTOFF_MIN,
            out_dir: None,
            export_plots: true,
        }
    }
}

impl ExperimentConfig {
    /// Digest of everything that affects results (the output directory does not).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.export_plots = true;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.variants.is_empty() {
            return Err(PipelineError::InvalidConfig("at least one variant is required".into()));
        }
        let mut v = self.variants.clone();
        v.sort();
        v.dedup();
        if v.len() != self.variants.len() {
            return Err(PipelineError::InvalidConfig("variants repeat".into()));
        }
        if self.k_folds == 0 {
            return Err(PipelineError::InvalidConfig("k_folds must be >= 1".into()));
        }
        if !(self.cutoff_min >= 0.0) {
            return Err(PipelineError::InvalidConfig("cutoff_min must be >= 0".into()));
        }
        if let Some(path) = &self.dataset {
            if !path.join(super::io::MANIFEST_FILE).is_file() {
                return Err(PipelineError::InvalidConfig(format!("no dataset manifest in {}", path.display())));
            }
        }
        self.train.validate()?;
        Ok(())
    }
}

/// What a [`Trainer`] hands back.
pub enum Trained {
    Lstm(LstmModel),
    Other(Box<dyn Predictor + Send>),
}

impl Trained {
    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            Trained::Lstm(m) => m,
            Trained::Other(p) => p.as_ref(),
        }
    }
}

/// Produces a predictor from a fold's training and validation sets.
pub trait Trainer: Sync {
    fn train(&self, train_set: &LearningSet, val_set: &LearningSet, cfg: &TrainConfig) -> Result<Trained, PipelineError>;
}

pub struct LstmTrainer;

impl Trainer for LstmTrainer {
    fn train(&self, train_set: &LearningSet, val_set: &LearningSet, cfg: &TrainConfig) -> Result<Trained, PipelineError> {
        let (model, _) = train(&train_set.to_sequence_set(), &val_set.to_sequence_set(), cfg)?;
        Ok(Trained::Lstm(model))
    }
}

/// Skips training and predicts each scan's own reference curve.
pub struct OracleTrainer;

impl Trainer for OracleTrainer {
    fn train(&self, _: &LearningSet, _: &LearningSet, _: &TrainConfig) -> Result<Trained, PipelineError> {
        Ok(Trained::Other(Box::new(OraclePredictor)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTraining {
    pub variant: Variant,
    pub fold: u32,
    pub seed: u64,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
}

/// `(raw - interpolated) / raw` for the fold-averaged metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub mse: f64,
    pub dtw: f64,
}

pub fn compare_summaries(raw: &FoldSummary, interpolated: &FoldSummary) -> Result<RelativeChange, PipelineError> {
    if raw.variant != Variant::Raw || interpolated.variant != Variant::Interpolated {
        return Err(PipelineError::InvalidConfig("compare needs one raw and one interpolated summary".into()));
    }
    Ok(RelativeChange {
        mse: (raw.mean_mse - interpolated.mean_mse) / raw.mean_mse,
        dtw: (raw.mean_dtw - interpolated.mean_dtw) / raw.mean_dtw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTiming {
    pub variant: Variant,
    pub fold: u32,
    pub train_s: f64,
    pub eval_s: f64,
}

/// Wall-clock seconds per stage. Kept out of the report so reports stay
/// reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub load_s: f64,
    pub fit_s: f64,
    pub prepare_s: f64,
    pub units: Vec<UnitTiming>,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub config_digest: String,
    pub dataset_digest: String,
    pub target_mode: TargetMode,
    pub folds: Vec<FoldSplit>,
    pub summaries: Vec<FoldSummary>,
    pub reports: Vec<EvalReport>,
    pub training: Vec<UnitTraining>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_change: Option<RelativeChange>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl ComparisonReport {
    pub fn summary(&self, variant: Variant) -> Option<&FoldSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }

    pub fn fold_reports(&self, variant: Variant) -> Vec<&EvalReport> {
        self.reports.iter().filter(|r| r.variant == variant).collect()
    }
}

/// Normalize every scan, then interpolate for the interpolated variant.
pub fn prepare_scans(scans: &[ScanRecord], variant: Variant, cutoff_min: f64) -> Result<Vec<ScanRecord>, PipelineError> {
    scans
        .iter()
        .map(|s| {
            let n = normalize_scan(s).map_err(|e| PipelineError::from(e).in_stage(format!("normalize rodent {} age {}", s.rodent_id, s.age_months)))?;
            match variant {
                Variant::Raw => Ok(n),
                Variant::Interpolated => interpolate_scan(&n, cutoff_min).map_err(|e| PipelineError::from(e).in_stage("interpolate")),
            }
        })
        .collect()
}

/// Fit bounds covering every parameter the generator can produce.
fn default_fit_config(cohort: &CohortConfig) -> FitConfig {
    let ranges: &ParamRanges = &cohort.ranges;
    let (lo, hi) = (ranges.lower.to_array(), ranges.upper.to_array());
    let d = cohort.age_drift;
    let mut l = [0.0; crate::kinetics::N_PARAMS];
    let mut u = [0.0; crate::kinetics::N_PARAMS];
    for k in 0..l.len() {
        l[k] = lo[k] * (1.0 - d);
        u[k] = hi[k] * (1.0 + d);
    }
    l[9] = l[9].min(ranges.shr_k3.0 * (1.0 - d));
    u[9] = u[9].max(ranges.shr_k3.1 * (1.0 + d));
    let mut b = ParamBounds::new(KineticParams::from_array(&l), KineticParams::from_array(&u));
    for k in 11..13 {
        b.upper[k] = b.upper[k].min(1.0);
    }
    for k in 13..15 {
        b.upper[k] = b.upper[k].min(0.99);
    }
    FitConfig::new(b)
}

/// Replace each scan's MCIF by the fitted input function.
fn attach_fitted(scans: &mut [ScanRecord], fit: &FitConfig, seed: u64) -> Result<(), PipelineError> {
    let fitted: Vec<_> = scans
        .par_iter()
        .map(|s| {
            let mut c = fit.clone();
            c.seed = rng::derive_seed(seed, &[0xF17, u64::from(s.rodent_id), u64::from(s.age_months)]);
            fit_mcif(&s.idif, &s.myo, &c)
                .map(|r| r.mcif_fitted)
                .map_err(|e| PipelineError::from(e).in_stage(format!("fit rodent {} age {}", s.rodent_id, s.age_months)))
        })
        .collect::<Result<_, _>>()?;
    for (s, m) in scans.iter_mut().zip(fitted) {
        s.mcif = m;
    }
    Ok(())
}

fn variant_tag(v: Variant) -> u64 {
    match v {
        Variant::Raw => 0,
        Variant::Interpolated => 1,
    }
}

struct UnitOutcome {
    report: EvalReport,
    training: UnitTraining,
    timing: UnitTiming,
}

fn run_unit(
    cfg: &ExperimentConfig,
    trainer: &dyn Trainer,
    scans: &[ScanRecord],
    variant: Variant,
    split: &FoldSplit,
) -> Result<UnitOutcome, PipelineError> {
    let fold = split.fold_id;
    let stage = |what: &str| format!("{} fold {fold}: {what}", variant.as_str());
    let (tr, va, te) = assign_scans(split, scans);
    let pick = |idx: &[usize]| idx.iter().map(|&i| scans[i].clone()).collect::<Vec<_>>();
    let (train_scans, val_scans, test_scans) = (pick(&tr), pick(&va), pick(&te));
    let train_set = build_learning_set(&train_scans, variant).map_err(|e| e.in_stage(stage("training set")))?;
    let val_set = build_learning_set(&val_scans, variant).map_err(|e| e.in_stage(stage("validation set")))?;

    let mut tcfg = cfg.train.clone();
    tcfg.seed = rng::derive_seed(cfg.seed, &[variant_tag(variant), u64::from(fold)]);
    let t0 = Instant::now();
    let trained = trainer.train(&train_set, &val_set, &tcfg).map_err(|e| e.in_stage(stage("train")))?;
    let train_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let report = evaluate(trained.predictor(), &test_scans, variant, Some(fold))
        .map_err(|e| PipelineError::from(e).in_stage(stage("evaluate")))?;
    let eval_s = t1.elapsed().as_secs_f64();

    let training = match &trained {
        Trained::Lstm(m) => UnitTraining {
            variant,
            fold,
            seed: tcfg.seed,
            stopped_epoch: m.history.stopped_epoch,
            best_epoch: m.history.best_epoch,
            best_val_loss: m.history.val_loss.get(m.history.best_epoch.wrapping_sub(1)).copied(),
        },
        Trained::Other(_) => UnitTraining {
            variant,
            fold,
            seed: tcfg.seed,
            stopped_epoch: 0,
            best_epoch: 0,
            best_val_loss: None,
        },
    };

    if let Some(out) = &cfg.out_dir {
        let dir = out.join(variant.as_str()).join(format!("fold{fold}"));
        write_json(&dir.join("eval.json"), &report).map_err(|e| e.in_stage(stage("write")))?;
        if let Trained::Lstm(m) = &trained {
            save_checkpoint(m, &dir.join("model.json")).map_err(|e| PipelineError::from(e).in_stage(stage("write")))?;
        }
        if cfg.export_plots {
            export_plots(&report, &test_scans, &dir.join("plots"))
                .map_err(|e| PipelineError::from(e).in_stage(stage("export")))?;
        }
    }
    Ok(UnitOutcome {
        report,
        training,
        timing: UnitTiming { variant, fold, train_s, eval_s },
    })
}

fn load(cfg: &ExperimentConfig) -> Result<RodentDataset, PipelineError> {
    match &cfg.dataset {
        Some(path) => read_dataset(path),
        None => Ok(gen_cohort(&cfg.cohort)?.0),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ComparisonReport, PipelineError> {
    run_experiment_with(cfg, &LstmTrainer)
}

/// Full pipeline with a pluggable trainer. Every (variant, fold) unit draws
/// its seed from `(seed, variant, fold)`, so results do not depend on
/// scheduling.
pub fn run_experiment_with(cfg: &ExperimentConfig, trainer: &dyn Trainer) -> Result<ComparisonReport, PipelineError> {
    let start = Instant::now();
    cfg.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let mut dataset = load(cfg).map_err(|e| e.in_stage("load"))?;
    if dataset.scans.is_empty() {
        return Err(PipelineError::InvalidConfig("dataset has no scans".into()));
    }
    timings.load_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    if cfg.target_mode == TargetMode::Fitted {
        let fit = cfg.fit.clone().unwrap_or_else(|| default_fit_config(&cfg.cohort));
        attach_fitted(&mut dataset.scans, &fit, cfg.seed)?;
    }
    timings.fit_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let prepared: Vec<(Variant, Vec<ScanRecord>)> = cfg
        .variants
        .iter()
        .map(|&v| prepare_scans(&dataset.scans, v, cfg.cutoff_min).map(|s| (v, s)))
        .collect::<Result<_, _>>()?;
    timings.prepare_s = t.elapsed().as_secs_f64();

    let folds = split_folds(&dataset.rodent_ids(), cfg.k_folds, cfg.seed).map_err(|e| e.in_stage("split"))?;
    let units: Vec<(usize, &FoldSplit)> = (0..prepared.len()).flat_map(|v| folds.iter().map(move |f| (v, f))).collect();
    let outcomes: Vec<UnitOutcome> = units
        .par_iter()
        .map(|&(v, split)| run_unit(cfg, trainer, &prepared[v].1, prepared[v].0, split))
        .collect::<Result<_, _>>()?;

    let mut summaries = Vec::new();
    for (variant, _) in &prepared {
        let reps: Vec<EvalReport> = outcomes
            .iter()
            .filter(|o| o.report.variant == *variant)
            .map(|o| o.report.clone())
            .collect();
        summaries.push(fold_stats(&reps)?);
    }
    let find = |v| summaries.iter().find(|s: &&FoldSummary| s.variant == v);
    let relative_change = match (find(Variant::Raw), find(Variant::Interpolated)) {
        (Some(r), Some(i)) => Some(compare_summaries(r, i)?),
        _ => None,
    };
    timings.units = outcomes.iter().map(|o| o.timing.clone()).collect();
    timings.total_s = start.elapsed().as_secs_f64();

    let report = ComparisonReport {
        seed: cfg.seed,
        config_digest: cfg.digest(),
        dataset_digest: dataset.provenance.config_digest.clone(),
        target_mode: cfg.target_mode,
        folds,
        summaries,
        reports: outcomes.iter().map(|o| o.report.clone()).collect(),
        training: outcomes.iter().map(|o| o.training.clone()).collect(),
        relative_change,
        timings,
    };
    if let Some(out) = &cfg.out_dir {
        write_report(&report, out)?;
    }
    Ok(report)
}

/// `report.json` plus `timings.json` in `out`.
pub fn write_report(report: &ComparisonReport, out: &Path) -> Result<(), PipelineError> {
    write_json(&out.join("report.json"), report)?;
    write_json(&out.join("timings.json"), &report.timings)
}
