//! Model-corrected input function by bounded multi-start Nelder-Mead over
//! the 15-parameter dual-output model.
//!
//! The objective is a weighted sum of two shape terms and a peak term:
//!
//! ```text
//! cost = MSE(idif_model, idif_obs) + MSE(myo_model, myo_obs)
//!      + w_peak * [ (peak_model - peak_obs)^2 + ((t_model - t_obs) / T_scan)^2 ]
//! ```
//!
//! where the peaks are taken on the blood-pool curves and `T_scan` is the
//! last sample time.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinetics::{
    observe_values, KineticParams, KineticsError, DEFAULT_DT_MIN, N_PARAMS, PARAM_NAMES,
};
use crate::rng;
use crate::tac::{peak_index, Tac, TacError, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid bounds: {0}")]
    BoundsInvalid(String),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Tac(#[from] TacError),
}

/// Box bounds for the 15 parameters, in [`PARAM_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBounds {
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
}

impl ParamBounds {
    pub fn new(lower: KineticParams, upper: KineticParams) -> Self {
        Self {
            lower: lower.to_array(),
            upper: upper.to_array(),
        }
    }

    /// Relative box `[p(1 - frac), p(1 + frac)]` around `p`, with recovery
    /// capped at 1 and spillover below 1.
    pub fn around(p: &KineticParams, frac: f64) -> Self {
        let x = p.to_array();
        let mut lower = [0.0; N_PARAMS];
        let mut upper = [0.0; N_PARAMS];
        for k in 0..N_PARAMS {
            let (a, b) = (x[k] * (1.0 - frac), x[k] * (1.0 + frac));
            lower[k] = a.min(b);
            upper[k] = a.max(b);
        }
        for k in [11, 12] {
            upper[k] = upper[k].min(1.0);
        }
        for k in [13, 14] {
            upper[k] = upper[k].min(0.999);
        }
        Self { lower, upper }
    }

    /// Pin a parameter to a single value.
    pub fn pin(&mut self, name: &str, value: f64) {
        let k = PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.lower[k] = value;
        self.upper[k] = value;
    }

    pub fn validate(&self) -> Result<(), FitError> {
        for k in 0..N_PARAMS {
            let (a, b) = (self.lower[k], self.upper[k]);
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(FitError::BoundsInvalid(format!(
                    "{}: [{a}, {b}]",
                    PARAM_NAMES[k]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64; N_PARAMS]) -> bool {
        (0..N_PARAMS).all(|k| x[k] >= self.lower[k] && x[k] <= self.upper[k])
    }

    pub fn to_map(&self) -> BTreeMap<String, (f64, f64)> {
        PARAM_NAMES
            .iter()
            .enumerate()
            .map(|(k, n)| (n.to_string(), (self.lower[k], self.upper[k])))
            .collect()
    }

    /// Build from a name-keyed map; every one of the 15 names must be present.
    pub fn from_map(map: &BTreeMap<String, (f64, f64)>) -> Result<Self, FitError> {
        if let Some(extra) = map.keys().find(|k| !PARAM_NAMES.contains(&k.as_str())) {
            return Err(FitError::BoundsInvalid(format!("unknown parameter {extra}")));
        }
        let mut lower = [0.0; N_PARAMS];
        let mut upper = [0.0; N_PARAMS];
        for (k, name) in PARAM_NAMES.iter().enumerate() {
            let &(a, b) = map
                .get(*name)
                .ok_or_else(|| FitError::BoundsInvalid(format!("missing {name}")))?;
            lower[k] = a;
            upper[k] = b;
        }
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }
}

impl Serialize for ParamBounds {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamBounds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, (f64, f64)>::deserialize(d)?;
        Self::from_map(&map).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub bounds: ParamBounds,
    pub w_peak: f64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub dt: f64,
}

impl FitConfig {
    pub fn new(bounds: ParamBounds) -> Self {
        Self {
            bounds,
            w_peak: 10.0,
            restarts: 8,
            max_iter: 2000,
            tolerance: 1e-10,
            seed: 0,
            dt: DEFAULT_DT_MIN,
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        self.bounds.validate()?;
        if !(self.w_peak >= 0.0) || self.restarts == 0 || !(self.tolerance >= 0.0) {
            return Err(FitError::BoundsInvalid(
                "w_peak must be >= 0 and restarts >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub cost: f64,
    pub shape_blood: f64,
    pub shape_myo: f64,
    pub peak_term: f64,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Peak mismatch between two curves on the same times, time normalized by scan length.
pub fn peak_penalty(model: &[f64], observed: &[f64], times: &[f64]) -> f64 {
    let (Some(km), Some(ko)) = (peak_index(model), peak_index(observed)) else {
        return 0.0;
    };
    let scan = times[times.len() - 1];
    let dv = model[km] - observed[ko];
    let dt = (times[km] - times[ko]) / scan;
    dv * dv + dt * dt
}

fn terms_from(
    idif_model: &[f64],
    myo_model: &[f64],
    idif_obs: &[f64],
    myo_obs: &[f64],
    times: &[f64],
    w_peak: f64,
) -> CostTerms {
    let shape_blood = mse(idif_model, idif_obs);
    let shape_myo = mse(myo_model, myo_obs);
    let peak_term = peak_penalty(idif_model, idif_obs, times);
    CostTerms {
        cost: shape_blood + shape_myo + w_peak * peak_term,
        shape_blood,
        shape_myo,
        peak_term,
    }
}

pub fn composite_cost_dt(
    p: &KineticParams,
    idif_obs: &Tac,
    myo_obs: &Tac,
    w_peak: f64,
    dt: f64,
) -> Result<CostTerms, FitError> {
    if !idif_obs.shares_grid(myo_obs) {
        return Err(TacError::GridMismatch.into());
    }
    let grid = idif_obs.grid();
    let model = observe_values(p, grid, dt)?;
    Ok(terms_from(
        &model.idif,
        &model.myo,
        idif_obs.values(),
        myo_obs.values(),
        grid.sample_times(),
        w_peak,
    ))
}

pub fn composite_cost(
    p: &KineticParams,
    idif_obs: &Tac,
    myo_obs: &Tac,
    w_peak: f64,
) -> Result<CostTerms, FitError> {
    composite_cost_dt(p, idif_obs, myo_obs, w_peak, DEFAULT_DT_MIN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadConfig {
    pub max_iter: usize,
    pub tolerance: f64,
    /// Initial simplex edge as a fraction of each bound width.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tolerance: 1e-10,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Box-bounded Nelder-Mead. Trial points are clamped into the box, and
/// coordinates with equal lower and upper bound are held fixed.
///
/// On convergence the simplex is rebuilt around the best vertex and the
/// search resumes; it stops once a rebuilt simplex no longer improves the
/// best value by more than the tolerance, or the iteration budget runs out.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    cfg: &NelderMeadConfig,
) -> NelderMeadResult {
    let dim = x0.len();
    assert!(lower.len() == dim && upper.len() == dim);
    let clamp = |x: &mut [f64]| {
        for k in 0..dim {
            x[k] = x[k].clamp(lower[k], upper[k]);
        }
    };
    let mut start = x0.to_vec();
    clamp(&mut start);
    let free: Vec<usize> = (0..dim).filter(|&k| upper[k] > lower[k]).collect();
    let f_start = f(&start);
    if cfg.max_iter == 0 || free.is_empty() {
        return NelderMeadResult {
            x: start,
            f: f_start,
            iterations: 0,
            converged: free.is_empty(),
        };
    }

    let n = free.len();
    let mut iterations = 0;
    let mut best = (start, f_start);
    let mut converged = false;
    loop {
        // Simplex around the current best point.
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push(best.clone());
        for &k in &free {
            let mut v = best.0.clone();
            let step = cfg.initial_step * (upper[k] - lower[k]);
            v[k] = if v[k] + step <= upper[k] { v[k] + step } else { v[k] - step };
            clamp(&mut v);
            let fv = f(&v);
            simplex.push((v, fv));
        }

        let mut local_converged = false;
        while iterations < cfg.max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if simplex[n].1 - simplex[0].1 <= cfg.tolerance {
                local_converged = true;
                break;
            }
            iterations += 1;

            let mut centroid = simplex[0].0.clone();
            for &k in &free {
                centroid[k] = simplex[..n].iter().map(|(v, _)| v[k]).sum::<f64>() / n as f64;
            }
            let along = |t: f64, from: &[f64]| {
                let mut v = centroid.clone();
                for &k in &free {
                    v[k] = centroid[k] + t * (from[k] - centroid[k]);
                }
                clamp(&mut v);
                v
            };
            let worst = simplex[n].0.clone();
            let reflected = along(-REFLECT, &worst);
            let fr = f(&reflected);

            if fr < simplex[0].1 {
                let expanded = along(-REFLECT * EXPAND, &worst);
                let fe = f(&expanded);
                simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (reflected, fr);
                continue;
            }
            let (contracted, accept) = if fr < simplex[n].1 {
                let c = along(-REFLECT * CONTRACT, &worst);
                let fc = f(&c);
                ((c, fc), fc <= fr)
            } else {
                let c = along(CONTRACT, &worst);
                let fc = f(&c);
                ((c, fc), fc < simplex[n].1)
            };
            if accept {
                simplex[n] = contracted;
                continue;
            }
            let anchor = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                for &k in &free {
                    vertex.0[k] = anchor[k] + SHRINK * (vertex.0[k] - anchor[k]);
                }
                clamp(&mut vertex.0);
                vertex.1 = f(&vertex.0);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = best.1 - simplex[0].1 > cfg.tolerance;
        if simplex[0].1 <= best.1 {
            best = simplex.swap_remove(0);
        }
        if !local_converged {
            break;
        }
        if !improved {
            converged = true;
            break;
        }
    }
    NelderMeadResult {
        x: best.0,
        f: best.1,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: KineticParams,
    pub terms: CostTerms,
    pub mcif_fitted: Tac,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the restart that produced the result.
    pub restart: usize,
}

impl FitResult {
    pub fn cost(&self) -> f64 {
        self.terms.cost
    }
}

/// Uniform starting point for restart `r`. Each restart has its own stream,
/// so the first `r` starts are shared by every run with more restarts.
fn restart_start(bounds: &ParamBounds, seed: u64, r: usize) -> [f64; N_PARAMS] {
    let mut rng = rng::stream(seed, &[0xF17, r as u64]);
    let mut x = [0.0; N_PARAMS];
    for k in 0..N_PARAMS {
        let u: f64 = rng.gen();
        x[k] = bounds.lower[k] + u * (bounds.upper[k] - bounds.lower[k]);
    }
    x
}

pub fn fit_mcif(idif_obs: &Tac, myo_obs: &Tac, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    if !idif_obs.shares_grid(myo_obs) {
        return Err(TacError::GridMismatch.into());
    }
    let grid: Arc<TimeGrid> = idif_obs.grid().clone();
    // Surface simulation errors (step size, grid) before the search.
    composite_cost_dt(
        &KineticParams::from_array(&cfg.bounds.lower),
        idif_obs,
        myo_obs,
        cfg.w_peak,
        cfg.dt,
    )?;

    let bounds = &cfg.bounds;
    let objective = |x: &[f64]| -> f64 {
        let arr: [f64; N_PARAMS] = x.try_into().expect("15 parameters");
        assert!(bounds.contains(&arr), "evaluated point left the bounds");
        let p = KineticParams::from_array(&arr);
        match observe_values(&p, &grid, cfg.dt) {
            Ok(m) => {
                let t = terms_from(
                    &m.idif,
                    &m.myo,
                    idif_obs.values(),
                    myo_obs.values(),
                    grid.sample_times(),
                    cfg.w_peak,
                );
                if t.cost.is_finite() {
                    t.cost
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    };
    let nm = NelderMeadConfig {
        max_iter: cfg.max_iter,
        tolerance: cfg.tolerance,
        ..Default::default()
    };
    let runs: Vec<NelderMeadResult> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let x0 = restart_start(bounds, cfg.seed, r);
            nelder_mead(objective, &x0, &bounds.lower, &bounds.upper, &nm)
        })
        .collect();
    // Lowest cost, earliest restart on ties.
    let (restart, best) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
        .expect("restarts >= 1");

    let arr: [f64; N_PARAMS] = best.x.as_slice().try_into().expect("15 parameters");
    let params = KineticParams::from_array(&arr);
    let model = observe_values(&params, &grid, cfg.dt)?;
    let terms = terms_from(
        &model.idif,
        &model.myo,
        idif_obs.values(),
        myo_obs.values(),
        grid.sample_times(),
        cfg.w_peak,
    );
    Ok(FitResult {
        params,
        terms,
        mcif_fitted: Tac::new(grid, model.mcif)?,
        iterations: best.iterations,
        converged: best.converged,
        restart,
    })
}
