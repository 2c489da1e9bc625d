//! Forward model: parametric arterial input, two-tissue compartment uptake,
//! and a dual-output observation with partial-volume recovery and spillover.
//!
//! Input function, with `s = t - tau` and zero before the delay:
//!
//! ```text
//! Cp(t) = (A1*s - A2 - A3) exp(-lam1*s) + A2 exp(-lam2*s) + A3 exp(-lam3*s)
//! ```
//!
//! Tissue compartments (free `C1`, bound `C2`, both zero at `t = 0`):
//!
//! ```text
//! dC1/dt = K1*Cp - (k2 + k3)*C1 + k4*C2
//! dC2/dt = k3*C1 - k4*C2
//! ```
//!
//! Observation, with `<.>` the average over each frame span and `Ct = C1 + C2`:
//!
//! ```text
//! idif = r_b*<Cp> + s_bm*<Ct>
//! myo  = r_m*<Ct> + s_mb*<Cp>
//! mcif = <Cp>
//! ```

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng;
use crate::tac::{
    Provenance, RodentDataset, ScanRecord, Scanner, Strain, Tac, TacError, TimeGrid, AGES_MONTHS,
};

pub const DEFAULT_DT_MIN: f64 = 0.01;
pub const MAX_DT_MIN: f64 = 0.05;
pub const N_PARAMS: usize = 15;

pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "A1", "A2", "A3", "lam1", "lam2", "lam3", "tau", "K1", "k2", "k3", "k4", "r_b", "r_m", "s_bm",
    "s_mb",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("step {0} min exceeds the stability limit of {MAX_DT_MIN} min")]
    StepTooLarge(f64),
    #[error("invalid step {dt} for horizon {t_end}")]
    InvalidStep { dt: f64, t_end: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid sampling ranges: {0}")]
    InvalidRanges(String),
    #[error(transparent)]
    Tac(#[from] TacError),
}

/// The 15 model parameters. Serialized names match [`PARAM_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    #[serde(rename = "A3")]
    pub a3: f64,
    pub lam1: f64,
    pub lam2: f64,
    pub lam3: f64,
    pub tau: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub r_b: f64,
    pub r_m: f64,
    pub s_bm: f64,
    pub s_mb: f64,
}

impl KineticParams {
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.a1, self.a2, self.a3, self.lam1, self.lam2, self.lam3, self.tau, self.k1,
            self.k2, self.k3, self.k4, self.r_b, self.r_m, self.s_bm, self.s_mb,
        ]
    }

    pub fn from_array(x: &[f64; N_PARAMS]) -> Self {
        Self {
            a1: x[0],
            a2: x[1],
            a3: x[2],
            lam1: x[3],
            lam2: x[4],
            lam3: x[5],
            tau: x[6],
            k1: x[7],
            k2: x[8],
            k3: x[9],
            k4: x[10],
            r_b: x[11],
            r_m: x[12],
            s_bm: x[13],
            s_mb: x[14],
        }
    }

    pub fn validate(&self) -> Result<(), KineticsError> {
        let bad = |m: &str| Err(KineticsError::InvalidParams(m.to_string()));
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return bad("non-finite value");
        }
        if !(self.lam1 > self.lam2 && self.lam2 > self.lam3 && self.lam3 > 0.0) {
            return bad("require lam1 > lam2 > lam3 > 0");
        }
        if self.a1 < 0.0 || self.tau < 0.0 {
            return bad("require A1 >= 0 and tau >= 0");
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.k3 >= 0.0 && self.k4 >= 0.0) {
            return bad("require K1, k2 > 0 and k3, k4 >= 0");
        }
        if !(self.r_b > 0.0 && self.r_b <= 1.0 && self.r_m > 0.0 && self.r_m <= 1.0) {
            return bad("recovery coefficients must lie in (0, 1]");
        }
        if !((0.0..1.0).contains(&self.s_bm) && (0.0..1.0).contains(&self.s_mb)) {
            return bad("spillover fractions must lie in [0, 1)");
        }
        Ok(())
    }

    fn rates(&self) -> Rates {
        Rates {
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            k4: self.k4,
        }
    }
}

/// Exchange rates of the two-tissue model, min^-1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

/// Parametric arterial input at time `t` (minutes).
pub fn feng_input(p: &KineticParams, t: f64) -> f64 {
    if t < p.tau {
        return 0.0;
    }
    let s = t - p.tau;
    // Grouped so each term vanishes exactly at s = 0 and stays >= 0 when
    // lam1 exceeds lam2 and lam3.
    let fast = (-p.lam1 * s).exp();
    p.a1 * s * fast + p.a2 * ((-p.lam2 * s).exp() - fast) + p.a3 * ((-p.lam3 * s).exp() - fast)
}

/// Curves on the uniform fine grid `{0, dt, 2dt, ..}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FineCurves {
    pub dt: f64,
    pub cp: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl FineCurves {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.cp.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn tissue(&self) -> Vec<f64> {
        self.c1.iter().zip(&self.c2).map(|(a, b)| a + b).collect()
    }
}

fn step_count(t_end: f64, dt: f64) -> Result<usize, KineticsError> {
    if !(dt > 0.0) || !(t_end >= dt) || !t_end.is_finite() {
        return Err(KineticsError::InvalidStep { dt, t_end });
    }
    if dt > MAX_DT_MIN {
        return Err(KineticsError::StepTooLarge(dt));
    }
    // Cover t_end, tolerating representation error in t_end / dt.
    Ok((t_end / dt - 1e-9).ceil() as usize)
}

/// Fixed-step RK4 for the two-tissue system driven by an arbitrary input.
pub fn simulate_two_tissue(
    input: impl Fn(f64) -> f64,
    rates: Rates,
    t_end: f64,
    dt: f64,
) -> Result<FineCurves, KineticsError> {
    let n = step_count(t_end, dt)?;
    // Input at every half step: index 2k is t = k*dt.
    let half: Vec<f64> = (0..=2 * n).map(|j| input(j as f64 * dt / 2.0)).collect();
    let Rates { k1, k2, k3, k4 } = rates;
    let out_rate = k2 + k3;
    let deriv = |cp: f64, c1: f64, c2: f64| {
        (
            k1 * cp - out_rate * c1 + k4 * c2,
            k3 * c1 - k4 * c2,
        )
    };

    let mut c1 = Vec::with_capacity(n + 1);
    let mut c2 = Vec::with_capacity(n + 1);
    let (mut y1, mut y2) = (0.0, 0.0);
    c1.push(y1);
    c2.push(y2);
    for k in 0..n {
        let (p0, pm, p1) = (half[2 * k], half[2 * k + 1], half[2 * k + 2]);
        let (a1, a2) = deriv(p0, y1, y2);
        let (b1, b2) = deriv(pm, y1 + 0.5 * dt * a1, y2 + 0.5 * dt * a2);
        let (c1_, c2_) = deriv(pm, y1 + 0.5 * dt * b1, y2 + 0.5 * dt * b2);
        let (d1, d2) = deriv(p1, y1 + dt * c1_, y2 + dt * c2_);
        y1 += dt / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1_ + d1);
        y2 += dt / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2_ + d2);
        c1.push(y1);
        c2.push(y2);
    }
    let cp = half.into_iter().step_by(2).collect();
    Ok(FineCurves { dt, cp, c1, c2 })
}

pub fn simulate_tissue(p: &KineticParams, t_end: f64, dt: f64) -> Result<FineCurves, KineticsError> {
    simulate_two_tissue(|t| feng_input(p, t), p.rates(), t_end, dt)
}

/// Averages of the piecewise-linear interpolant of fine-grid samples over
/// each frame span. Frame edges need not fall on the fine grid.
pub fn frame_averages(values: &[f64], dt: f64, spans: &[(f64, f64)]) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    prefix.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * (w[0] + w[1]);
        prefix.push(acc);
    }
    let last = values.len() - 1;
    // Integral from 0 to x, x in fine-grid index units.
    let cumulative = |x: f64| -> f64 {
        let x = x.clamp(0.0, last as f64);
        let j = (x.floor() as usize).min(last.saturating_sub(1));
        let r = x - j as f64;
        if last == 0 {
            return 0.0;
        }
        let (f0, f1) = (values[j], values[j + 1]);
        prefix[j] + f0 * r + 0.5 * (f1 - f0) * r * r
    };
    spans
        .iter()
        .map(|&(a, b)| (cumulative(b / dt) - cumulative(a / dt)) * dt / (b - a))
        .collect()
}

/// Observed blood-pool and myocardial curves plus the true input, framed on `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub idif: Tac,
    pub myo: Tac,
    pub mcif: Tac,
}

/// Raw framed curves without the `Tac` wrapper; the fitting hot path uses this.
pub(crate) struct FramedCurves {
    pub idif: Vec<f64>,
    pub myo: Vec<f64>,
    pub mcif: Vec<f64>,
}

pub(crate) fn observe_values(
    p: &KineticParams,
    grid: &TimeGrid,
    dt: f64,
) -> Result<FramedCurves, KineticsError> {
    let fine = simulate_tissue(p, grid.scan_end(), dt)?;
    let spans = grid.frame_spans();
    let cp = frame_averages(&fine.cp, dt, spans);
    let ct = frame_averages(&fine.tissue(), dt, spans);
    let idif = cp.iter().zip(&ct).map(|(b, t)| p.r_b * b + p.s_bm * t).collect();
    let myo = cp.iter().zip(&ct).map(|(b, t)| p.r_m * t + p.s_mb * b).collect();
    Ok(FramedCurves { idif, myo, mcif: cp })
}

pub fn observe(p: &KineticParams, grid: &Arc<TimeGrid>, dt: f64) -> Result<Observation, KineticsError> {
    let c = observe_values(p, grid, dt)?;
    Ok(Observation {
        idif: Tac::new(grid.clone(), c.idif)?,
        myo: Tac::new(grid.clone(), c.myo)?,
        mcif: Tac::new(grid.clone(), c.mcif)?,
    })
}

/// Count-statistics surrogate: Gaussian noise with standard deviation
/// `c * sqrt(v / duration)`, clipped at zero.
pub fn add_noise<R: Rng>(tac: &Tac, c: f64, frame_durations: &[f64], rng: &mut R) -> Tac {
    if c == 0.0 {
        return tac.clone();
    }
    let values: Vec<f64> = tac
        .values()
        .iter()
        .zip(frame_durations)
        .map(|(&v, &d)| {
            let z: f64 = rng.sample(StandardNormal);
            let sd = c * (v.max(0.0) / d).sqrt();
            (v + sd * z).max(0.0)
        })
        .collect();
    Tac::new(tac.grid().clone(), values).expect("same length, finite values")
}

/// Closed sampling interval.
pub type Range = (f64, f64);

/// Uniform sampling ranges for every parameter, with a separate k3 range for SHR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub lower: KineticParams,
    pub upper: KineticParams,
    pub shr_k3: Range,
}

impl Default for ParamRanges {
    fn default() -> Self {
        let lower = KineticParams {
            a1: 10.0,
            a2: 0.5,
            a3: 0.5,
            lam1: 3.0,
            lam2: 0.1,
            lam3: 0.005,
            tau: 0.1,
            k1: 0.3,
            k2: 0.2,
            k3: 0.05,
            k4: 0.0,
            r_b: 0.6,
            r_m: 0.7,
            s_bm: 0.05,
            s_mb: 0.05,
        };
        let upper = KineticParams {
            a1: 30.0,
            a2: 2.0,
            a3: 2.0,
            lam1: 6.0,
            lam2: 0.4,
            lam3: 0.02,
            tau: 0.5,
            k1: 1.2,
            k2: 1.0,
            k3: 0.25,
            k4: 0.01,
            r_b: 0.95,
            r_m: 0.95,
            s_bm: 0.3,
            s_mb: 0.3,
        };
        Self {
            lower,
            upper,
            shr_k3: (0.1, 0.4),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<(), KineticsError> {
        let bad = |m: String| Err(KineticsError::InvalidRanges(m));
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        for k in 0..N_PARAMS {
            if !(lo[k].is_finite() && hi[k].is_finite() && lo[k] <= hi[k]) {
                return bad(format!("{}: [{}, {}]", PARAM_NAMES[k], lo[k], hi[k]));
            }
        }
        let (s0, s1) = self.shr_k3;
        if !(s0.is_finite() && s1.is_finite() && 0.0 <= s0 && s0 <= s1) {
            return bad(format!("shr_k3: [{s0}, {s1}]"));
        }
        let (l, u) = (&self.lower, &self.upper);
        let checks = [
            (l.lam1 > u.lam2 && l.lam2 > u.lam3 && l.lam3 > 0.0, "lam ranges must be separated and positive"),
            (l.a1 >= 0.0 && l.tau >= 0.0, "A1 and tau must be >= 0"),
            (l.k1 > 0.0 && l.k2 > 0.0 && l.k3 >= 0.0 && l.k4 >= 0.0, "rate ranges out of domain"),
            (l.r_b > 0.0 && u.r_b <= 1.0 && l.r_m > 0.0 && u.r_m <= 1.0, "recovery ranges must lie in (0, 1]"),
            (l.s_bm >= 0.0 && u.s_bm < 1.0 && l.s_mb >= 0.0 && u.s_mb < 1.0, "spillover ranges must lie in [0, 1)"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return bad((*msg).to_string());
        }
        Ok(())
    }
}

/// Synthetic cohort settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_rodents: u32,
    pub ages: Vec<u32>,
    pub ranges: ParamRanges,
    /// Noise scale `c`; 0 disables noise.
    pub noise: f64,
    pub seed: u64,
    pub dt: f64,
    /// Half-width of the multiplicative per-age parameter drift.
    pub age_drift: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_rodents: 52,
            ages: AGES_MONTHS.to_vec(),
            ranges: ParamRanges::default(),
            noise: 0.05,
            seed: 0,
            dt: DEFAULT_DT_MIN,
            age_drift: 0.1,
        }
    }
}

impl CohortConfig {
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    fn validate(&self) -> Result<(), KineticsError> {
        if self.n_rodents == 0 || self.ages.is_empty() {
            return Err(KineticsError::InvalidRanges("need at least one rodent and one age".into()));
        }
        if !(self.noise >= 0.0) || !(0.0..1.0).contains(&self.age_drift) {
            return Err(KineticsError::InvalidRanges("noise must be >= 0, drift in [0, 1)".into()));
        }
        self.ranges.validate()
    }
}

/// Ground-truth parameters of one synthetic scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTruth {
    pub rodent_id: u32,
    pub age_months: u32,
    pub params: KineticParams,
}

pub fn strain_of(rodent_index: u32, n_rodents: u32) -> Strain {
    if rodent_index < n_rodents.div_ceil(2) {
        Strain::Wky
    } else {
        Strain::Shr
    }
}

/// Early ages were acquired on the microPET, later ones on the Albira.
pub fn scanner_for_age(age_months: u32) -> Scanner {
    if age_months <= 5 {
        Scanner::MicroPet
    } else {
        Scanner::Albira
    }
}

fn draw_base<R: Rng>(ranges: &ParamRanges, strain: Strain, rng: &mut R) -> KineticParams {
    let lo = ranges.lower.to_array();
    let hi = ranges.upper.to_array();
    let mut x = [0.0; N_PARAMS];
    for k in 0..N_PARAMS {
        let u: f64 = rng.gen();
        x[k] = lo[k] + u * (hi[k] - lo[k]);
    }
    let u: f64 = rng.gen();
    if strain == Strain::Shr {
        x[9] = ranges.shr_k3.0 + u * (ranges.shr_k3.1 - ranges.shr_k3.0);
    }
    KineticParams::from_array(&x)
}

fn drift<R: Rng>(base: &KineticParams, half_width: f64, rng: &mut R) -> KineticParams {
    let mut x = base.to_array();
    let mut factor = || 1.0 + half_width * (2.0 * rng.gen::<f64>() - 1.0);
    // One shared factor for the decay rates preserves their ordering.
    let lam = factor();
    for (k, v) in x.iter_mut().enumerate() {
        *v *= if (3..=5).contains(&k) { lam } else { factor() };
    }
    let mut p = KineticParams::from_array(&x);
    p.r_b = p.r_b.min(1.0);
    p.r_m = p.r_m.min(1.0);
    p.s_bm = p.s_bm.min(0.99);
    p.s_mb = p.s_mb.min(0.99);
    p
}

/// Simulate one scan: observe, then add noise to the two measured curves.
/// The MCIF target stays noise-free.
pub fn simulate_scan(
    p: &KineticParams,
    grid: &Arc<TimeGrid>,
    dt: f64,
    noise: f64,
    rng: &mut impl Rng,
) -> Result<Observation, KineticsError> {
    p.validate()?;
    let obs = observe(p, grid, dt)?;
    let durations = grid.frame_durations();
    Ok(Observation {
        idif: add_noise(&obs.idif, noise, &durations, rng),
        myo: add_noise(&obs.myo, noise, &durations, rng),
        mcif: obs.mcif,
    })
}

/// Generate a cohort on `grid`, returning the dataset and per-scan truth.
pub fn gen_cohort_on(
    cfg: &CohortConfig,
    grid: &Arc<TimeGrid>,
) -> Result<(RodentDataset, Vec<ScanTruth>), KineticsError> {
    cfg.validate()?;
    let mut scans = Vec::with_capacity(cfg.n_rodents as usize * cfg.ages.len());
    let mut truth = Vec::with_capacity(scans.capacity());
    for idx in 0..cfg.n_rodents {
        let rodent_id = idx + 1;
        let strain = strain_of(idx, cfg.n_rodents);
        let base = draw_base(&cfg.ranges, strain, &mut rng::stream(cfg.seed, &[u64::from(rodent_id)]));
        for &age in &cfg.ages {
            let mut rng = rng::stream(cfg.seed, &[u64::from(rodent_id), u64::from(age)]);
            let params = drift(&base, cfg.age_drift, &mut rng);
            params.validate()?;
            let obs = simulate_scan(&params, grid, cfg.dt, cfg.noise, &mut rng)?;
            scans.push(ScanRecord {
                rodent_id,
                strain,
                age_months: age,
                scanner: scanner_for_age(age),
                idif: obs.idif,
                myo: obs.myo,
                mcif: obs.mcif,
                norm_scale: 1.0,
            });
            truth.push(ScanTruth {
                rodent_id,
                age_months: age,
                params,
            });
        }
    }
    let provenance = Provenance {
        seed: cfg.seed,
        config_digest: cfg.digest(),
    };
    Ok((RodentDataset { scans, provenance }, truth))
}

/// Generate a cohort on the canonical 23-frame grid.
pub fn gen_cohort(cfg: &CohortConfig) -> Result<(RodentDataset, Vec<ScanTruth>), KineticsError> {
    gen_cohort_on(cfg, &Arc::new(TimeGrid::canonical()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tac::make_canonical_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn typical() -> KineticParams {
        KineticParams {
            a1: 20.0,
            a2: 1.2,
            a3: 1.0,
            lam1: 4.5,
            lam2: 0.25,
            lam3: 0.01,
            tau: 0.3,
            k1: 0.7,
            k2: 0.6,
            k3: 0.15,
            k4: 0.005,
            r_b: 0.8,
            r_m: 0.85,
            s_bm: 0.15,
            s_mb: 0.1,
        }
    }

    #[test]
    fn fifteen_named_parameters() {
        assert_eq!(PARAM_NAMES.len(), 15);
        let p = typical();
        assert_eq!(KineticParams::from_array(&p.to_array()), p);
        let json = serde_json::to_value(p).unwrap();
        for name in PARAM_NAMES {
            assert!(json.get(name).is_some(), "{name}");
        }
    }

    #[test]
    fn input_function_shape() {
        let p = typical();
        assert_eq!(feng_input(&p, 0.1), 0.0);
        assert_eq!(feng_input(&p, p.tau), 0.0);
        assert!(feng_input(&p, 500.0) < 1e-2);
        assert!(feng_input(&p, 5000.0) < 1e-12);

        let ramp = KineticParams {
            a1: 1.0,
            a2: 0.0,
            a3: 0.0,
            lam1: 1e-300,
            lam2: 1e-301,
            lam3: 1e-302,
            tau: 0.0,
            ..p
        };
        assert!((feng_input(&ramp, 2.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_uptake_without_k1() {
        let p = KineticParams { k1: 0.0, ..typical() };
        let c = simulate_tissue(&p, 60.0, 0.01).unwrap();
        assert!(c.c1.iter().all(|&v| v == 0.0));
        assert!(c.c2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_input_closed_form() {
        let (k1, k2, c) = (0.8, 0.5, 2.0);
        let rates = Rates { k1, k2, k3: 0.0, k4: 0.0 };
        let sim = simulate_two_tissue(|_| c, rates, 30.0, 0.01).unwrap();
        let mut worst: f64 = 0.0;
        for (t, &v) in sim.times().zip(&sim.c1) {
            let exact = k1 * c / k2 * (1.0 - (-k2 * t).exp());
            worst = worst.max((v - exact).abs());
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn step_guards() {
        let p = typical();
        assert_eq!(simulate_tissue(&p, 10.0, 0.06), Err(KineticsError::StepTooLarge(0.06)));
        assert!(matches!(simulate_tissue(&p, 10.0, 0.0), Err(KineticsError::InvalidStep { .. })));
        assert!(matches!(simulate_tissue(&p, 0.001, 0.01), Err(KineticsError::InvalidStep { .. })));
        let c = simulate_tissue(&p, 1.0, 0.01).unwrap();
        assert_eq!(c.cp.len(), 101);
    }

    #[test]
    fn non_negative_solution() {
        let p = typical();
        let c = simulate_tissue(&p, 60.0, 0.01).unwrap();
        for v in c.cp.iter().chain(&c.c1).chain(&c.c2) {
            assert!(*v >= -1e-9);
        }
    }

    #[test]
    fn frame_average_of_linear_is_exact() {
        let dt = 0.01;
        let vals: Vec<f64> = (0..=1000).map(|k| 3.0 * k as f64 * dt + 1.0).collect();
        let spans = [(0.0, 8.0 / 60.0), (8.0 / 60.0, 0.5), (2.0, 10.0)];
        let got = frame_averages(&vals, dt, &spans);
        for (&(a, b), g) in spans.iter().zip(got) {
            let exact = 3.0 * (a + b) / 2.0 + 1.0;
            assert!((g - exact).abs() < 1e-12, "{g} vs {exact}");
        }
    }

    #[test]
    fn identity_mixing() {
        let grid = Arc::new(make_canonical_grid());
        let p = KineticParams { r_b: 1.0, r_m: 1.0, s_bm: 0.0, s_mb: 0.0, ..typical() };
        let o = observe(&p, &grid, 0.01).unwrap();
        assert_eq!(o.idif, o.mcif);
    }

    #[test]
    fn recovery_scales_blood() {
        let grid = Arc::new(make_canonical_grid());
        let p = KineticParams { r_b: 0.5, s_bm: 0.0, ..typical() };
        let o = observe(&p, &grid, 0.01).unwrap();
        for (i, m) in o.idif.values().iter().zip(o.mcif.values()) {
            assert_eq!(*i, 0.5 * m);
        }
        let cold = KineticParams { r_b: 0.7, s_bm: 0.3, k1: 0.0, ..typical() };
        let o = observe(&cold, &grid, 0.01).unwrap();
        for (i, m) in o.idif.values().iter().zip(o.mcif.values()) {
            assert_eq!(*i, 0.7 * m);
        }
    }

    #[test]
    fn observe_is_linear_in_amplitudes() {
        let grid = Arc::new(make_canonical_grid());
        let p = typical();
        let alpha = 3.7;
        let q = KineticParams { a1: p.a1 * alpha, a2: p.a2 * alpha, a3: p.a3 * alpha, ..p };
        let (o, s) = (observe(&p, &grid, 0.01).unwrap(), observe(&q, &grid, 0.01).unwrap());
        for (x, y) in [(&o.idif, &s.idif), (&o.myo, &s.myo), (&o.mcif, &s.mcif)] {
            for (a, b) in x.values().iter().zip(y.values()) {
                assert!((a * alpha - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn mcif_ignores_tissue_and_mixing() {
        let grid = Arc::new(make_canonical_grid());
        let p = typical();
        let q = KineticParams { k1: 0.31, k2: 0.9, k3: 0.01, k4: 0.0, r_b: 0.6, r_m: 1.0, s_bm: 0.0, s_mb: 0.29, ..p };
        assert_eq!(observe(&p, &grid, 0.01).unwrap().mcif, observe(&q, &grid, 0.01).unwrap().mcif);
    }

    #[test]
    fn noise_contract() {
        let grid = Arc::new(make_canonical_grid());
        let o = observe(&typical(), &grid, 0.01).unwrap();
        let d = grid.frame_durations();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&o.idif, 0.0, &d, &mut rng), o.idif);
        let zero = o.idif.map_values(|_| 0.0);
        assert_eq!(add_noise(&zero, 0.5, &d, &mut rng), zero);
        let a = add_noise(&o.idif, 0.05, &d, &mut ChaCha8Rng::seed_from_u64(9));
        let b = add_noise(&o.idif, 0.05, &d, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_ne!(a, o.idif);
        assert!(a.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cohort_cardinality_and_determinism() {
        let cfg = CohortConfig { n_rodents: 2, ages: vec![1], seed: 5, ..Default::default() };
        let (ds, truth) = gen_cohort(&cfg).unwrap();
        assert_eq!(ds.scans.len(), 2);
        assert_eq!(truth.len(), 2);
        assert_eq!(ds.scans[0].strain, Strain::Wky);
        assert_eq!(ds.scans[1].strain, Strain::Shr);
        let (again, _) = gen_cohort(&cfg).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn default_cohort_size() {
        let cfg = CohortConfig::default();
        let (ds, truth) = gen_cohort(&cfg).unwrap();
        assert_eq!(ds.scans.len(), 364);
        assert_eq!(ds.rodent_ids().len(), 52);
        let shr = ds.scans.iter().filter(|s| s.strain == Strain::Shr).count();
        assert_eq!(shr, 26 * 7);
        for t in &truth {
            t.params.validate().unwrap();
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut cfg = CohortConfig::default();
        cfg.ranges.lower.k2 = 2.0;
        assert!(matches!(gen_cohort(&cfg), Err(KineticsError::InvalidRanges(_))));
        let mut cfg = CohortConfig::default();
        cfg.ranges.upper.lam2 = 4.0;
        assert!(matches!(gen_cohort(&cfg), Err(KineticsError::InvalidRanges(_))));
        let cfg = CohortConfig { n_rodents: 0, ..Default::default() };
        assert!(gen_cohort(&cfg).is_err());
    }
}
