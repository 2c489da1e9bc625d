//! Time grids, time-activity curves and scan records.
//!
//! A sample is the frame-averaged activity over its frame span `(start, end]`,
//! reported at the frame end. Times are in minutes throughout.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TacError {
    #[error("curve is empty")]
    EmptyCurve,
    #[error("IDIF peak {0} is not positive")]
    NonPositivePeak(f64),
    #[error("scan is already normalized (norm_scale = {0})")]
    AlreadyNormalized(f64),
    #[error("sample times are not strictly increasing and positive at index {0}")]
    NonMonotonicGrid(usize),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("curves of one scan do not share a grid")]
    GridMismatch,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

/// Canonical 23-frame schedule, sample (frame end) times in seconds.
pub const CANONICAL_SAMPLE_SECONDS: [f64; 23] = [
    8.0, 16.0, 24.0, 32.0, 40.0, 48.0, 56.0, 64.0, 72.0, 80.0, 88.0, 96.0, // 8-s frames
    120.0, 300.0, 600.0, // widening mid frames
    960.0, 1320.0, 1680.0, 2040.0, 2400.0, 2760.0, 3120.0, 3480.0, // 6-min frames
];

/// Ordered frame schedule. Frames tile `[0, last]` without gaps: frame `k`
/// spans `(t[k-1], t[k]]` and frame 0 starts at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    sample_times: Vec<f64>,
    frame_spans: Vec<(f64, f64)>,
}

impl TimeGrid {
    pub fn from_sample_times(sample_times: Vec<f64>) -> Result<Self, TacError> {
        if sample_times.is_empty() {
            return Err(TacError::EmptyCurve);
        }
        let mut prev = 0.0;
        for (k, &t) in sample_times.iter().enumerate() {
            if !t.is_finite() || t <= prev {
                return Err(TacError::NonMonotonicGrid(k));
            }
            prev = t;
        }
        let frame_spans = sample_times
            .iter()
            .enumerate()
            .map(|(k, &t)| (if k == 0 { 0.0 } else { sample_times[k - 1] }, t))
            .collect();
        Ok(Self {
            sample_times,
            frame_spans,
        })
    }

    pub fn canonical() -> Self {
        let times = CANONICAL_SAMPLE_SECONDS.iter().map(|s| s / 60.0).collect();
        Self::from_sample_times(times).expect("canonical schedule is valid")
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.sample_times
    }

    pub fn frame_spans(&self) -> &[(f64, f64)] {
        &self.frame_spans
    }

    pub fn frame_durations(&self) -> Vec<f64> {
        self.frame_spans.iter().map(|(a, b)| b - a).collect()
    }

    pub fn len(&self) -> usize {
        self.sample_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_times.is_empty()
    }

    /// Scan length (last frame end).
    pub fn scan_end(&self) -> f64 {
        *self.sample_times.last().expect("grid is nonempty")
    }
}

/// Shorthand for [`TimeGrid::canonical`].
pub fn make_canonical_grid() -> TimeGrid {
    TimeGrid::canonical()
}

/// Time-activity curve on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tac {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl Tac {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self, TacError> {
        if values.len() != grid.len() {
            return Err(TacError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(TacError::NonFinite(k));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> &[f64] {
        self.grid.sample_times()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn shares_grid(&self, other: &Tac) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }
}

/// First sample attaining the maximum, as `(time_min, value)`.
pub fn peak_of(tac: &Tac) -> Result<(f64, f64), TacError> {
    peak_index(tac.values())
        .map(|k| (tac.times()[k], tac.values()[k]))
        .ok_or(TacError::EmptyCurve)
}

/// Index of the earliest maximum.
pub(crate) fn peak_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(k),
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strain {
    #[serde(rename = "WKY")]
    Wky,
    #[serde(rename = "SHR")]
    Shr,
}

impl fmt::Display for Strain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strain::Wky => "WKY",
            Strain::Shr => "SHR",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scanner {
    #[serde(rename = "microPET")]
    MicroPet,
    #[serde(rename = "Albira")]
    Albira,
}

/// Longitudinal scan ages in months.
pub const AGES_MONTHS: [u32; 7] = [1, 2, 3, 5, 9, 12, 18];

/// One rodent at one age.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub rodent_id: u32,
    pub strain: Strain,
    pub age_months: u32,
    pub scanner: Scanner,
    pub idif: Tac,
    pub myo: Tac,
    pub mcif: Tac,
    /// IDIF peak the curves were divided by; 1.0 when un-normalized.
    pub norm_scale: f64,
}

impl ScanRecord {
    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.idif.grid()
    }

    pub fn check_shared_grid(&self) -> Result<(), TacError> {
        if self.idif.shares_grid(&self.myo) && self.idif.shares_grid(&self.mcif) {
            Ok(())
        } else {
            Err(TacError::GridMismatch)
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.norm_scale != 1.0
    }

    /// Undo [`normalize_scan`]: multiplies every curve by `norm_scale`.
    pub fn denormalized(&self) -> ScanRecord {
        let s = self.norm_scale;
        ScanRecord {
            idif: self.idif.scaled(s),
            myo: self.myo.scaled(s),
            mcif: self.mcif.scaled(s),
            norm_scale: 1.0,
            ..self.clone()
        }
    }
}

/// Divide IDIF, myocardium and MCIF by the IDIF peak.
///
/// A scan whose IDIF peak is exactly 1 comes back unchanged with
/// `norm_scale = 1`, so it can still be detected as un-normalized; that is
/// harmless because normalizing it again is the identity.
pub fn normalize_scan(scan: &ScanRecord) -> Result<ScanRecord, TacError> {
    if scan.norm_scale != 1.0 {
        return Err(TacError::AlreadyNormalized(scan.norm_scale));
    }
    scan.check_shared_grid()?;
    let (_, peak) = peak_of(&scan.idif)?;
    if !(peak > 0.0) {
        return Err(TacError::NonPositivePeak(peak));
    }
    let inv = |v: f64| v / peak;
    Ok(ScanRecord {
        idif: scan.idif.map_values(inv),
        myo: scan.myo.map_values(inv),
        mcif: scan.mcif.map_values(inv),
        norm_scale: peak,
        ..scan.clone()
    })
}

/// Generator seed plus a digest of the configuration that produced a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RodentDataset {
    pub scans: Vec<ScanRecord>,
    pub provenance: Provenance,
}

impl RodentDataset {
    /// Distinct rodent ids in first-appearance order.
    pub fn rodent_ids(&self) -> Vec<u32> {
        let mut seen = std::collections::BTreeSet::new();
        self.scans
            .iter()
            .filter(|s| seen.insert(s.rodent_id))
            .map(|s| s.rodent_id)
            .collect()
    }
}
