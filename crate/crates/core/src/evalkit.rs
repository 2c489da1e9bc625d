//! Curve metrics (MSE, DTW), per-fold statistics, and plot/boxplot export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqnet::{LstmModel, SeqnetError};
use crate::tac::ScanRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("reports mix variants")]
    VariantMismatch,
    #[error("I/O failure: {0}")]
    IoFailure(String),
    #[error("prediction failed: {0}")]
    Predict(String),
}

impl From<SeqnetError> for EvalError {
    fn from(e: SeqnetError) -> Self {
        EvalError::Predict(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Interpolated,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Interpolated => "interpolated",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(Variant::Raw),
            "interpolated" | "interp" => Ok(Variant::Interpolated),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

/// Dynamic time warping distance with squared-difference local cost.
///
/// The first row and column accumulate along their only predecessor; every
/// other cell adds the cheapest of its left, lower and diagonal neighbours.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySequence);
    }
    let m = b.len();
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    let mut acc = 0.0;
    for (j, &bj) in b.iter().enumerate() {
        acc += (a[0] - bj) * (a[0] - bj);
        prev[j] = acc;
    }
    for &ai in &a[1..] {
        cur[0] = prev[0] + (ai - b[0]) * (ai - b[0]);
        for j in 1..m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (ai - b[j]) * (ai - b[j]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(EvalError::EmptySequence);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Mean and sample (n - 1) standard deviation; the deviation of a single
/// value is reported as 0. Values are summed in sorted order so the result
/// does not depend on input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

/// Five-number summary with Tukey hinges: for odd counts the median belongs
/// to both halves, so `(1, 2, 3, 4, 5)` gives quartiles 2 and 4.
pub fn five_number_summary(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let median = |s: &[f64]| {
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    };
    let half = v.len().div_ceil(2);
    Some([
        v[0],
        median(&v[..half]),
        median(&v),
        median(&v[v.len() - half..]),
        v[v.len() - 1],
    ])
}

/// Anything that maps a scan's measured curves to a predicted MCIF.
pub trait Predictor: Sync {
    fn predict(&self, scans: &[ScanRecord]) -> Result<Vec<Vec<f64>>, EvalError>;
}

/// Stack scans into `(n, T, 2)` inputs: channel 0 IDIF, channel 1 myocardium.
pub fn stack_inputs(scans: &[ScanRecord]) -> Result<Array3<f64>, EvalError> {
    let t = scans.first().map_or(0, |s| s.idif.len());
    let mut x = Array3::zeros((scans.len(), t, 2));
    for (i, s) in scans.iter().enumerate() {
        if s.idif.len() != t || s.myo.len() != t {
            return Err(EvalError::LengthMismatch(format!(
                "scan {}/{} has {} samples, expected {t}",
                s.rodent_id,
                s.age_months,
                s.idif.len()
            )));
        }
        for k in 0..t {
            x[[i, k, 0]] = s.idif.values()[k];
            x[[i, k, 1]] = s.myo.values()[k];
        }
    }
    Ok(x)
}

impl Predictor for LstmModel {
    fn predict(&self, scans: &[ScanRecord]) -> Result<Vec<Vec<f64>>, EvalError> {
        if scans.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack_inputs(scans)?;
        let y = LstmModel::predict(self, x.view())?;
        Ok(y.outer_iter().map(|row| row.iter().copied().collect()).collect())
    }
}

/// Returns each scan's reference MCIF; a perfect model for plumbing checks.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, scans: &[ScanRecord]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(scans.iter().map(|s| s.mcif.values().to_vec()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMetric {
    pub rodent_id: u32,
    pub age_months: u32,
    pub mse: f64,
    pub dtw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub fold: Option<u32>,
    pub per_scan: Vec<ScanMetric>,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mean_dtw: f64,
    pub std_dtw: f64,
    /// Predicted curves in `per_scan` order; kept for plotting, not serialized.
    #[serde(skip)]
    pub predictions: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn from_metrics(variant: Variant, fold: Option<u32>, per_scan: Vec<ScanMetric>) -> Self {
        let mses: Vec<f64> = per_scan.iter().map(|m| m.mse).collect();
        let dtws: Vec<f64> = per_scan.iter().map(|m| m.dtw).collect();
        let (mean_mse, std_mse) = mean_std(&mses);
        let (mean_dtw, std_dtw) = mean_std(&dtws);
        Self {
            variant,
            fold,
            per_scan,
            mean_mse,
            std_mse,
            mean_dtw,
            std_dtw,
            predictions: Vec::new(),
        }
    }
}

/// Score a predictor on normalized scans against their reference MCIF.
pub fn evaluate(
    model: &dyn Predictor,
    scans: &[ScanRecord],
    variant: Variant,
    fold: Option<u32>,
) -> Result<EvalReport, EvalError> {
    let predictions = model.predict(scans)?;
    if predictions.len() != scans.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} predictions for {} scans",
            predictions.len(),
            scans.len()
        )));
    }
    let mut per_scan = Vec::with_capacity(scans.len());
    for (s, p) in scans.iter().zip(&predictions) {
        let reference = s.mcif.values();
        per_scan.push(ScanMetric {
            rodent_id: s.rodent_id,
            age_months: s.age_months,
            mse: mse(p, reference)?,
            dtw: dtw(p, reference)?,
        });
    }
    let mut report = EvalReport::from_metrics(variant, fold, per_scan);
    report.predictions = predictions;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub variant: Variant,
    pub fold_mean_mse: Vec<f64>,
    pub fold_mean_dtw: Vec<f64>,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mean_dtw: f64,
    pub std_dtw: f64,
    /// `mean ± std` to four decimals.
    pub mse_text: String,
    pub dtw_text: String,
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

/// Mean and sample standard deviation of the per-fold means.
pub fn fold_stats(reports: &[EvalReport]) -> Result<FoldSummary, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptySequence)?;
    if reports.iter().any(|r| r.variant != first.variant) {
        return Err(EvalError::VariantMismatch);
    }
    let fold_mean_mse: Vec<f64> = reports.iter().map(|r| r.mean_mse).collect();
    let fold_mean_dtw: Vec<f64> = reports.iter().map(|r| r.mean_dtw).collect();
    let (mean_mse, std_mse) = mean_std(&fold_mean_mse);
    let (mean_dtw, std_dtw) = mean_std(&fold_mean_dtw);
    Ok(FoldSummary {
        variant: first.variant,
        fold_mean_mse,
        fold_mean_dtw,
        mean_mse,
        std_mse,
        mean_dtw,
        std_dtw,
        mse_text: format_mean_std(mean_mse, std_mse),
        dtw_text: format_mean_std(mean_dtw, std_dtw),
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::IoFailure(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), EvalError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Standalone SVG 1.1 line chart of reference (red) and predicted (blue) curves.
pub fn line_chart_svg(title: &str, times: &[f64], reference: &[f64], predicted: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let t_max = times.iter().copied().fold(0.0, f64::max).max(1e-12);
    let y_lo = reference.iter().chain(predicted).copied().fold(0.0, f64::min);
    let y_hi = reference
        .iter()
        .chain(predicted)
        .copied()
        .fold(f64::MIN, f64::max)
        .max(y_lo + 1e-12);
    let px = |t: f64| L + (W - L - R) * t / t_max;
    let py = |y: f64| H - B - (H - T - B) * (y - y_lo) / (y_hi - y_lo);
    let polyline = |ys: &[f64], color: &str| {
        let pts: Vec<String> = times
            .iter()
            .zip(ys)
            .map(|(&t, &y)| format!("{:.2},{:.2}", px(t), py(y)))
            .collect();
        format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        )
    };

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        xml_escape(title)
    );
    // Axes
    let _ = writeln!(
        svg,
        "  <line x1=\"{L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - B,
        W - R,
        H - B
    );
    let _ = writeln!(svg, "  <line x1=\"{L}\" y1=\"{T}\" x2=\"{L}\" y2=\"{}\" stroke=\"black\"/>", H - B);
    for k in 0..=5 {
        let t = t_max * k as f64 / 5.0;
        let x = px(t);
        let _ = writeln!(
            svg,
            "  <line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>",
            H - B,
            H - B + 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{x:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{t:.1}</text>",
            H - B + 18.0
        );
        let y = y_lo + (y_hi - y_lo) * k as f64 / 5.0;
        let yy = py(y);
        let _ = writeln!(svg, "  <line x1=\"{}\" y1=\"{yy:.2}\" x2=\"{L}\" y2=\"{yy:.2}\" stroke=\"black\"/>", L - 5.0);
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{y:.3}</text>",
            L - 8.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">time (min)</text>",
        (L + W - R) / 2.0,
        H - 10.0
    );
    svg.push_str(&polyline(reference, "red"));
    svg.push_str(&polyline(predicted, "blue"));
    // Legend
    let lx = W - R - 150.0;
    let _ = writeln!(svg, "  <line x1=\"{lx}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"red\" stroke-width=\"2\"/>", T + 10.0, lx + 20.0, T + 10.0);
    let _ = writeln!(svg, "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">reference</text>", lx + 26.0, T + 14.0);
    let _ = writeln!(svg, "  <line x1=\"{lx}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"blue\" stroke-width=\"2\"/>", T + 28.0, lx + 20.0, T + 28.0);
    let _ = writeln!(svg, "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">predicted</text>", lx + 26.0, T + 32.0);
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write per-scan curve CSVs and SVGs plus MSE/DTW boxplot summaries.
/// Returns the paths written.
pub fn export_plots(report: &EvalReport, scans: &[ScanRecord], out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if report.per_scan.is_empty() || scans.is_empty() {
        return Err(EvalError::IoFailure("no data".into()));
    }
    if report.per_scan.len() != scans.len() || report.predictions.len() != scans.len() {
        return Err(EvalError::LengthMismatch(format!(
            "report has {} scans ({} predictions), got {} scans",
            report.per_scan.len(),
            report.predictions.len(),
            scans.len()
        )));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for ((metric, scan), pred) in report.per_scan.iter().zip(scans).zip(&report.predictions) {
        if metric.rodent_id != scan.rodent_id || metric.age_months != scan.age_months {
            return Err(EvalError::LengthMismatch("report and scans are not aligned".into()));
        }
        let stem = format!("rodent{:03}_age{:02}", scan.rodent_id, scan.age_months);
        let times = scan.mcif.times();
        let reference = scan.mcif.values();
        let mut csv = String::from("time_min,reference,predicted\n");
        for k in 0..times.len() {
            let _ = writeln!(csv, "{},{},{}", times[k], reference[k], pred[k]);
        }
        let csv_path = out_dir.join(format!("{stem}.csv"));
        write_file(&csv_path, &csv)?;
        let title = format!(
            "rodent {} age {} mo ({}) MSE {:.4} DTW {:.4}",
            scan.rodent_id,
            scan.age_months,
            report.variant.as_str(),
            metric.mse,
            metric.dtw
        );
        let svg_path = out_dir.join(format!("{stem}.svg"));
        write_file(&svg_path, &line_chart_svg(&title, times, reference, pred))?;
        written.push(csv_path);
        written.push(svg_path);
    }
    for (name, values) in [
        ("mse", report.per_scan.iter().map(|m| m.mse).collect::<Vec<_>>()),
        ("dtw", report.per_scan.iter().map(|m| m.dtw).collect()),
    ] {
        let s = five_number_summary(&values).expect("nonempty");
        let body = format!("min,q1,median,q3,max\n{},{},{},{},{}\n", s[0], s[1], s[2], s[3], s[4]);
        let path = out_dir.join(format!("boxplot_{name}.csv"));
        write_file(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimum cost over every monotone alignment path, by recursion.
    fn brute_dtw(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let c = (a[i] - b[j]).powi(2);
            if i == 0 && j == 0 {
                return c;
            }
            let mut best = f64::INFINITY;
            if i > 0 {
                best = best.min(go(a, b, i - 1, j));
            }
            if j > 0 {
                best = best.min(go(a, b, i, j - 1));
            }
            if i > 0 && j > 0 {
                best = best.min(go(a, b, i - 1, j - 1));
            }
            c + best
        }
        go(a, b, a.len() - 1, b.len() - 1)
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw(&[2.0], &[5.0]).unwrap(), 9.0);
        assert_eq!(dtw(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(brute_dtw(&[0.0, 1.0, 2.0], &[0.0, 2.0]), 1.0);
        assert_eq!(dtw(&[], &[1.0]), Err(EvalError::EmptySequence));
    }

    proptest! {
        #[test]
        fn dtw_properties(
            a in prop::collection::vec(-3.0f64..3.0, 1..7),
            b in prop::collection::vec(-3.0f64..3.0, 1..7),
            tail in -3.0f64..3.0,
        ) {
            let d = dtw(&a, &b).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, dtw(&b, &a).unwrap());
            prop_assert_eq!(dtw(&a, &a).unwrap(), 0.0);
            prop_assert!((d - brute_dtw(&a, &b)).abs() <= 1e-12);
            if a.len() == b.len() {
                let diag: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
                prop_assert!(d <= diag + 1e-12);
            }
            let (mut a2, mut b2) = (a.clone(), b.clone());
            a2.push(tail);
            b2.push(tail);
            prop_assert!(dtw(&a2, &b2).unwrap() <= d);
        }
    }

    #[test]
    fn stats_examples() {
        let (m, s) = mean_std(&[0.1, 0.3]);
        assert!((m - 0.2).abs() < 1e-15);
        assert!((s - 0.1414213562373095).abs() < 1e-12);
        assert_eq!(mean_std(&[4.2]), (4.2, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert!((s - 1.5811388300841898).abs() < 1e-12);
    }

    #[test]
    fn quartiles() {
        assert_eq!(five_number_summary(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap(), [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(five_number_summary(&[1.0, 2.0, 3.0, 4.0]).unwrap(), [1.0, 1.5, 2.5, 3.5, 4.0]);
        assert_eq!(five_number_summary(&[7.0]).unwrap(), [7.0; 5]);
        assert_eq!(five_number_summary(&[]), None);
    }

    fn report(variant: Variant, mses: &[f64]) -> EvalReport {
        let per_scan = mses
            .iter()
            .enumerate()
            .map(|(k, &m)| ScanMetric { rodent_id: k as u32, age_months: 1, mse: m, dtw: 2.0 * m })
            .collect();
        EvalReport::from_metrics(variant, Some(1), per_scan)
    }

    #[test]
    fn fold_summary() {
        let reps: Vec<EvalReport> = (1..=5).map(|k| report(Variant::Raw, &[k as f64])).collect();
        let s = fold_stats(&reps).unwrap();
        assert_eq!(s.mean_mse, 3.0);
        assert!((s.std_mse - 1.5811).abs() < 1e-4);
        assert_eq!(s.mse_text, "3.0000 ± 1.5811");
        let same: Vec<EvalReport> = (0..5).map(|_| report(Variant::Raw, &[0.5])).collect();
        let s = fold_stats(&same).unwrap();
        assert_eq!((s.mean_mse, s.std_mse), (0.5, 0.0));
        let mixed = vec![report(Variant::Raw, &[1.0]), report(Variant::Interpolated, &[1.0])];
        assert_eq!(fold_stats(&mixed), Err(EvalError::VariantMismatch));
    }

    #[test]
    fn aggregates_ignore_order() {
        let a = report(Variant::Raw, &[0.11, 0.37, 0.021, 0.9, 0.3333]);
        let b = report(Variant::Raw, &[0.9, 0.3333, 0.11, 0.021, 0.37]);
        assert_eq!((a.mean_mse, a.std_mse), (b.mean_mse, b.std_mse));
    }

    #[test]
    fn export_requires_data() {
        let dir = tempfile::tempdir().unwrap();
        let empty = EvalReport::from_metrics(Variant::Raw, None, vec![]);
        assert!(matches!(export_plots(&empty, &[], dir.path()), Err(EvalError::IoFailure(_))));
    }

    #[test]
    fn svg_is_standalone() {
        let svg = line_chart_svg("a<b", &[1.0, 2.0], &[0.0, 1.0], &[0.5, 0.5]);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains("xmlns=\"http://www.w3.org/2000/svg\""));
        assert!(svg.contains("version=\"1.1\""));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
