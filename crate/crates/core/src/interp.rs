//! Midpoint densification of the sparse late phase.
//!
//! Every consecutive pair of samples with both times strictly after the
//! cutoff gets a new sample at the mid time holding the mean of the two
//! values. Original samples are kept bit-for-bit.

use std::sync::Arc;

use crate::tac::{ScanRecord, Tac, TacError, TimeGrid};

pub const DEFAULT_CUTOFF_MIN: f64 = 10.0;

/// Sample times after midpoint insertion, together with the position each
/// output sample came from: `Ok(k)` for original sample `k`, `Err(k)` for
/// the midpoint between samples `k` and `k + 1`.
fn densified_layout(times: &[f64], cutoff_min: f64) -> Vec<Result<usize, usize>> {
    let mut layout = Vec::with_capacity(times.len() * 2);
    for k in 0..times.len() {
        layout.push(Ok(k));
        if k + 1 < times.len() && times[k] > cutoff_min && times[k + 1] > cutoff_min {
            layout.push(Err(k));
        }
    }
    layout
}

/// Grid obtained by midpoint insertion; spans are re-tiled from the new times.
pub fn densify_grid(grid: &TimeGrid, cutoff_min: f64) -> Result<TimeGrid, TacError> {
    let t = grid.sample_times();
    let times = densified_layout(t, cutoff_min)
        .into_iter()
        .map(|slot| match slot {
            Ok(k) => t[k],
            Err(k) => (t[k] + t[k + 1]) / 2.0,
        })
        .collect();
    TimeGrid::from_sample_times(times)
}

fn interpolate_onto(tac: &Tac, grid: Arc<TimeGrid>, cutoff_min: f64) -> Result<Tac, TacError> {
    let v = tac.values();
    let values = densified_layout(tac.times(), cutoff_min)
        .into_iter()
        .map(|slot| match slot {
            Ok(k) => v[k],
            Err(k) => (v[k] + v[k + 1]) / 2.0,
        })
        .collect();
    Tac::new(grid, values)
}

fn check_cutoff(cutoff_min: f64) -> Result<(), TacError> {
    // NaN or negative cutoffs have no meaning for a time axis starting at 0.
    if cutoff_min >= 0.0 {
        Ok(())
    } else {
        Err(TacError::NonMonotonicGrid(0))
    }
}

pub fn midpoint_interpolate(tac: &Tac, cutoff_min: f64) -> Result<Tac, TacError> {
    check_cutoff(cutoff_min)?;
    let grid = Arc::new(densify_grid(tac.grid(), cutoff_min)?);
    interpolate_onto(tac, grid, cutoff_min)
}

/// Interpolate all three curves of a scan onto one shared densified grid.
pub fn interpolate_scan(scan: &ScanRecord, cutoff_min: f64) -> Result<ScanRecord, TacError> {
    check_cutoff(cutoff_min)?;
    scan.check_shared_grid()?;
    let grid = Arc::new(densify_grid(scan.grid(), cutoff_min)?);
    Ok(ScanRecord {
        idif: interpolate_onto(&scan.idif, grid.clone(), cutoff_min)?,
        myo: interpolate_onto(&scan.myo, grid.clone(), cutoff_min)?,
        mcif: interpolate_onto(&scan.mcif, grid, cutoff_min)?,
        ..scan.clone()
    })
}
