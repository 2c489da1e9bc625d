//! Scan CSVs, the dataset manifest, and small JSON helpers.
//!
//! A dataset directory holds `manifest.json` (one record per scan),
//! `provenance.json`, optionally `truth.json`, and one CSV per scan with
//! header `time_min,idif,myo,mcif`. Floats are written in shortest
//! round-trip form so rewriting a dataset is byte-stable.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{io_error, PipelineError};
use crate::kinetics::ScanTruth;
use crate::tac::{Provenance, RodentDataset, ScanRecord, Scanner, Strain, Tac, TimeGrid};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const TRUTH_FILE: &str = "truth.json";
const CSV_HEADER: &str = "time_min,idif,myo,mcif";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rodent_id: u32,
    pub strain: Strain,
    pub age_months: u32,
    pub scanner: Scanner,
    pub file: String,
    pub norm_scale: f64,
}

pub type Manifest = Vec<ManifestEntry>;

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    fs::write(path, text).map_err(io_error(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn scan_file_name(rodent_id: u32, age_months: u32) -> String {
    format!("rodent{rodent_id:03}_age{age_months:02}.csv")
}

pub fn write_scan_csv(path: &Path, scan: &ScanRecord) -> Result<(), PipelineError> {
    scan.check_shared_grid()?;
    let mut out = String::with_capacity(64 * scan.idif.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    let (t, a, b, c) = (scan.idif.times(), scan.idif.values(), scan.myo.values(), scan.mcif.values());
    for k in 0..t.len() {
        let _ = writeln!(out, "{},{},{},{}", t[k], a[k], b[k], c[k]);
    }
    fs::write(path, out).map_err(io_error(path))
}

/// Parsed CSV columns. `mcif` is `None` when the file has only three columns.
pub struct ScanColumns {
    pub times: Vec<f64>,
    pub idif: Vec<f64>,
    pub myo: Vec<f64>,
    pub mcif: Option<Vec<f64>>,
}

pub fn read_scan_csv(path: &Path) -> Result<ScanColumns, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let bad = |msg: String| PipelineError::Parse {
        path: path.display().to_string(),
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?.trim();
    let ncol = match header {
        CSV_HEADER => 4,
        "time_min,idif,myo" => 3,
        other => return Err(bad(format!("unexpected header {other:?}"))),
    };
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); ncol];
    for (n, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncol {
            return Err(bad(format!("line {}: expected {ncol} fields", n + 2)));
        }
        for (col, field) in cols.iter_mut().zip(&fields) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: bad number {field:?}", n + 2)))?;
            col.push(v);
        }
    }
    let mcif = if ncol == 4 { cols.pop() } else { None };
    let myo = cols.pop().unwrap_or_default();
    let idif = cols.pop().unwrap_or_default();
    let times = cols.pop().unwrap_or_default();
    Ok(ScanColumns { times, idif, myo, mcif })
}

/// Write every scan plus manifest and provenance; `truth` is optional.
pub fn write_dataset(ds: &RodentDataset, truth: Option<&[ScanTruth]>, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut manifest = Manifest::with_capacity(ds.scans.len());
    for scan in &ds.scans {
        let file = scan_file_name(scan.rodent_id, scan.age_months);
        write_scan_csv(&dir.join(&file), scan)?;
        manifest.push(ManifestEntry {
            rodent_id: scan.rodent_id,
            strain: scan.strain,
            age_months: scan.age_months,
            scanner: scan.scanner,
            file,
            norm_scale: scan.norm_scale,
        });
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&dir.join(PROVENANCE_FILE), &ds.provenance)?;
    if let Some(truth) = truth {
        write_json(&dir.join(TRUTH_FILE), truth)?;
    }
    Ok(())
}

/// Load a dataset directory. Scans with identical sample times share one
/// grid. A CSV without an `mcif` column gets an all-zero placeholder that a
/// later fit is expected to replace.
pub fn read_dataset(dir: &Path) -> Result<RodentDataset, PipelineError> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let prov_path = dir.join(PROVENANCE_FILE);
    let provenance = if prov_path.exists() {
        read_json(&prov_path)?
    } else {
        Provenance {
            seed: 0,
            config_digest: String::new(),
        }
    };
    let mut grids: HashMap<Vec<u64>, Arc<TimeGrid>> = HashMap::new();
    let mut scans = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let path = dir.join(&entry.file);
        let cols = read_scan_csv(&path)?;
        let key: Vec<u64> = cols.times.iter().map(|t| t.to_bits()).collect();
        let grid = match grids.get(&key) {
            Some(g) => g.clone(),
            None => {
                let g = Arc::new(TimeGrid::from_sample_times(cols.times).map_err(|e| PipelineError::Parse {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?);
                grids.insert(key, g.clone());
                g
            }
        };
        let n = grid.len();
        let ctx = |e| PipelineError::Tac(e).in_stage(format!("reading {}", path.display()));
        scans.push(ScanRecord {
            rodent_id: entry.rodent_id,
            strain: entry.strain,
            age_months: entry.age_months,
            scanner: entry.scanner,
            idif: Tac::new(grid.clone(), cols.idif).map_err(ctx)?,
            myo: Tac::new(grid.clone(), cols.myo).map_err(ctx)?,
            mcif: Tac::new(grid, cols.mcif.unwrap_or_else(|| vec![0.0; n])).map_err(ctx)?,
            norm_scale: entry.norm_scale,
        });
    }
    Ok(RodentDataset { scans, provenance })
}
