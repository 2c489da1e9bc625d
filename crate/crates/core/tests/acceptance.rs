//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array3;
use rand::Rng;

use tacforge::evalkit::{dtw, Variant};
use tacforge::fit::{fit_mcif, FitConfig, ParamBounds};
use tacforge::interp::{midpoint_interpolate, DEFAULT_CUTOFF_MIN};
use tacforge::kinetics::{gen_cohort, observe, simulate_two_tissue, CohortConfig, KineticParams, Rates};
use tacforge::pipeline::{assign_scans, build_learning_set, split_folds, ComparisonReport};
use tacforge::rng;
use tacforge::seqnet::{
    backward, count_params, forward, mse_loss, run_epochs, train_step, AdamConfig, AdamState, LstmWeights, SequenceSet,
};
use tacforge::tac::{normalize_scan, TimeGrid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn typical() -> KineticParams {
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

fn param_count() -> Outcome {
    let n = count_params(2, 1000);
    outcome(n == 4_013_001, format!("count_params(2, 1000) = {n}"))
}

/// Central differences at step 1e-5 against backprop, every scalar weight.
///
/// The loss difference is summed as `(p - m)(p + m - 2y)` over outputs
/// rather than as a difference of two losses, which is the same quantity
/// without the cancellation that otherwise leaves ~1e-11 of noise.
/// Relative error is |a - n| / max(|a|, |n|, 1e-7): gradients below 1e-7
/// are held to an absolute 1e-12, since the remaining round-off (~1e-13)
/// is a sizeable fraction of such tiny values.
fn gradient_check() -> Outcome {
    let (n, t, d, h) = (3, 5, 2, 8);
    let mut w = LstmWeights::init(d, h, 1234);
    let mut r = rng::stream(1234, &[7]);
    let x = Array3::from_shape_fn((n, t, d), |_| r.gen_range(-1.0..1.0));
    let y = Array3::from_shape_fn((n, t, 1), |_| r.gen_range(-1.0..1.0));
    let (_, cache) = forward(&w, x.view()).unwrap();
    let grads = backward(&w, &cache, &y).unwrap();

    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_raw = 0.0f64;
    let mut count = 0;
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
    for (blk, a_block) in analytic.iter().enumerate() {
        for (k, &a) in a_block.iter().enumerate() {
            let orig = w.blocks()[blk][k];
            w.blocks_mut()[blk][k] = orig + step;
            let plus = forward(&w, x.view()).unwrap().0;
            w.blocks_mut()[blk][k] = orig - step;
            let minus = forward(&w, x.view()).unwrap().0;
            w.blocks_mut()[blk][k] = orig;
            let dl: f64 = plus
                .iter()
                .zip(minus.iter())
                .zip(y.iter())
                .map(|((p, m), yv)| (p - m) * (p + m - 2.0 * yv))
                .sum::<f64>()
                / (n * t) as f64;
            let num = dl / (2.0 * step);
            let diff = (a - num).abs();
            worst = worst.max(diff / a.abs().max(num.abs()).max(1e-7));
            if a != 0.0 || num != 0.0 {
                worst_raw = worst_raw.max(diff / a.abs().max(num.abs()));
            }
            count += 1;
        }
    }
    outcome(
        worst <= 1e-5 && count == w.num_scalars(),
        format!("{count} weights, max relative error {worst:.2e} (unfloored {worst_raw:.2e})"),
    )
}

/// Minimum over every monotone alignment path, enumerated explicitly.
fn dtw_by_paths(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).powi(2);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn dtw_oracle() -> Outcome {
    let mut seqs: Vec<Vec<f64>> = Vec::new();
    for len in 1..=5u32 {
        for code in 0..3usize.pow(len) {
            let mut c = code;
            seqs.push(
                (0..len)
                    .map(|_| {
                        let v = (c % 3) as f64;
                        c /= 3;
                        v
                    })
                    .collect(),
            );
        }
    }
    let mut mismatches = 0;
    let mut pairs = 0;
    for a in &seqs {
        for b in &seqs {
            if dtw(a, b).unwrap() != dtw_by_paths(a, b) {
                mismatches += 1;
            }
            pairs += 1;
        }
    }
    outcome(mismatches == 0, format!("{pairs} pairs, {mismatches} mismatches"))
}

fn ode_fidelity() -> Outcome {
    let (a, lam) = (10.0, 0.5);
    let rates = Rates { k1: 0.6, k2: 0.3, k3: 0.0, k4: 0.0 };
    let exact = |t: f64| rates.k1 * a / (rates.k2 - lam) * ((-lam * t).exp() - (-rates.k2 * t).exp());
    let max_err = |dt: f64| {
        let sol = simulate_two_tissue(|t| a * (-lam * t).exp(), rates, 60.0, dt).unwrap();
        sol.times()
            .zip(sol.tissue())
            .map(|(t, c)| (c - exact(t)).abs())
            .fold(0.0, f64::max)
    };
    let e1 = max_err(0.01);
    let e2 = max_err(0.005);
    let ratio = e1 / e2;
    outcome(
        e1 <= 1e-6 && (8.0..=32.0).contains(&ratio),
        format!("max error {e1:.2e} at dt 0.01, {e2:.2e} at dt 0.005, ratio {ratio:.1}"),
    )
}

fn interpolation_contract() -> Outcome {
    let grid = Arc::new(TimeGrid::canonical());
    let obs = observe(&typical(), &grid, 0.01).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for tac in [&obs.idif, &obs.myo, &obs.mcif] {
        let out = midpoint_interpolate(tac, DEFAULT_CUTOFF_MIN).unwrap();
        ok &= tac.len() == 23 && out.len() == 30;
        let mut j = 0;
        for (k, &t) in tac.times().iter().enumerate() {
            while out.times()[j] != t {
                let (l, r) = (out.values()[j - 1], out.values()[j + 1]);
                ok &= out.values()[j] == (l + r) / 2.0;
                j += 1;
            }
            ok &= out.values()[j].to_bits() == tac.values()[k].to_bits();
            j += 1;
        }
        let late: Vec<f64> = out.times().iter().copied().filter(|&t| t > DEFAULT_CUTOFF_MIN).collect();
        ok &= late.windows(2).all(|w| w[1] - w[0] == 3.0);
        notes.push(format!("{} -> {}", tac.len(), out.len()));
    }
    outcome(ok, format!("{}; midpoints exact, originals bit-equal, late spacing 3 min", notes.join(", ")))
}

/// Free fit inside a +-50% box around the generating parameters, then a
/// fit with recovery and spillover pinned at their true values.
fn fit_round_trip() -> Outcome {
    let p = typical();
    let grid = Arc::new(TimeGrid::canonical());
    let obs = observe(&p, &grid, 0.01).unwrap();
    let truth = obs.mcif.values();
    let peak = truth.iter().copied().fold(0.0, f64::max);

    let mut cfg = FitConfig::new(ParamBounds::around(&p, 0.5));
    cfg.seed = 6;
    let free = fit_mcif(&obs.idif, &obs.myo, &cfg).unwrap();
    let rmse = (free
        .mcif_fitted
        .values()
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / truth.len() as f64)
        .sqrt();
    let rel = rmse / peak;

    // The default stopping tolerance (1e-10 on the simplex cost spread)
    // would end the search right at the target, so tighten it.
    cfg.max_iter = 20_000;
    cfg.tolerance = 1e-14;
    for (name, v) in [("r_b", p.r_b), ("r_m", p.r_m), ("s_bm", p.s_bm), ("s_mb", p.s_mb)] {
        cfg.bounds.pin(name, v);
    }
    let pinned = fit_mcif(&obs.idif, &obs.myo, &cfg).unwrap();
    outcome(
        rel <= 0.01 && pinned.cost() <= 1e-10,
        format!(
            "free fit: RMSE {:.2}% of peak (cost {:.1e}); pinned fit: cost {:.1e}",
            100.0 * rel,
            free.cost(),
            pinned.cost()
        ),
    )
}

fn early_stopping() -> Outcome {
    let script = |losses: &[f64], max_epochs: usize| {
        let mut state = 0usize;
        let h = run_epochs(&mut state, max_epochs, 5, 0.001, true, |s, e| {
            *s = e;
            Ok::<_, ()>((0.0, losses[e - 1]))
        })
        .unwrap();
        (h.stopped_epoch, h.best_epoch, state)
    };
    let cases: [(&[f64], usize, (usize, usize, usize)); 4] = [
        (&[1.0, 0.99, 0.9895, 0.9893, 0.9892, 0.9891, 0.9890], 100, (7, 2, 2)),
        (&[0.5; 10], 100, (6, 1, 1)),
        (&[1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3], 8, (8, 8, 8)),
        (&[1.0, 0.8, 0.9, 0.9, 0.9, 0.7, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9], 100, (11, 6, 6)),
    ];
    let mut ok = true;
    for (losses, max_epochs, expect) in cases {
        ok &= script(losses, max_epochs) == expect;
    }
    outcome(ok, "4 scripted sequences, stop epochs and restored best epochs match")
}

fn split_properties() -> Outcome {
    let (ds, _) = gen_cohort(&CohortConfig { noise: 0.0, ..Default::default() }).unwrap();
    let ids = ds.rodent_ids();
    let mut ok = ids.len() == 52 && ds.scans.len() == 364;
    for seed in 0..1000u64 {
        for split in split_folds(&ids, 5, seed).unwrap() {
            let (tr, va, te) = (&split.train_rodents, &split.val_rodents, &split.test_rodents);
            ok &= (tr.len(), va.len(), te.len()) == (33, 8, 11);
            let all: BTreeSet<u32> = tr.iter().chain(va).chain(te).copied().collect();
            ok &= all.len() == 52;
            let (str_, sva, ste) = assign_scans(&split, &ds.scans);
            ok &= (str_.len(), sva.len(), ste.len()) == (231, 56, 77);
            ok &= str_.iter().all(|&i| tr.contains(&ds.scans[i].rodent_id))
                && sva.iter().all(|&i| va.contains(&ds.scans[i].rodent_id))
                && ste.iter().all(|&i| te.contains(&ds.scans[i].rodent_id));
        }
    }
    outcome(ok, "1000 seeds x 5 folds: sizes 33/8/11, disjoint, all 7 scans follow their rodent")
}

fn training_sanity() -> Outcome {
    let (ds, _) = gen_cohort(&CohortConfig { n_rodents: 5, ..Default::default() }).unwrap();
    let scans: Vec<_> = ds.scans.iter().take(32).map(|s| normalize_scan(s).unwrap()).collect();
    let set = build_learning_set(&scans, Variant::Raw).unwrap();
    let batch = SequenceSet::new(set.inputs, set.targets).unwrap();
    let mut w = LstmWeights::init(2, 32, 10);
    let mut opt = AdamState::new(&w);
    let adam = AdamConfig::default();
    let initial = mse_loss(&forward(&w, batch.inputs().view()).unwrap().0, batch.targets()).unwrap();
    for _ in 0..200 {
        train_step(&mut w, &mut opt, &batch, &adam).unwrap();
    }
    let fin = mse_loss(&forward(&w, batch.inputs().view()).unwrap().0, batch.targets()).unwrap();
    let drop = 1.0 - fin / initial;
    outcome(
        drop >= 0.5,
        format!("MSE {initial:.4} -> {fin:.4} after 200 steps ({:.1}% reduction)", 100.0 * drop),
    )
}

fn xval(dir: &Path, name: &str) -> (Vec<u8>, f64) {
    let t = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_tacforge"))
        .args(["xval", "--seed", "0", "--out"])
        .arg(dir.join(name))
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::null())
        .status()
        .expect("tacforge runs");
    assert!(status.success(), "xval failed");
    (std::fs::read(dir.join(name).join("report.json")).unwrap(), t.elapsed().as_secs_f64())
}

fn end_to_end(first: &[u8], secs: f64) -> Outcome {
    let report: ComparisonReport = serde_json::from_slice(first).unwrap();
    let raw = report.fold_reports(Variant::Raw);
    let interp = report.fold_reports(Variant::Interpolated);
    let wins = raw.iter().zip(&interp).filter(|(r, i)| i.mean_mse < r.mean_mse).count();
    let (r, i) = (report.summary(Variant::Raw).unwrap(), report.summary(Variant::Interpolated).unwrap());
    outcome(
        wins >= 4 && raw.len() == 5 && secs <= 600.0,
        format!(
            "interpolated better in {wins}/5 folds (raw {}, interpolated {}), {secs:.0} s",
            r.mse_text, i.mse_text
        ),
    )
}

fn main() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "[{}] criterion {id:>2} {name}: {} ({secs:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o, secs));
    };
    run(1, "parameter count", &mut param_count);
    run(2, "gradient check", &mut gradient_check);
    run(3, "dtw oracle", &mut dtw_oracle);
    run(4, "ode fidelity", &mut ode_fidelity);
    run(5, "interpolation contract", &mut interpolation_contract);
    run(6, "fit round trip", &mut fit_round_trip);
    run(7, "early stopping", &mut early_stopping);
    run(8, "split properties", &mut split_properties);
    let mut first: Option<(Vec<u8>, f64)> = None;
    run(9, "end-to-end direction", &mut || {
        let (bytes, secs) = xval(tmp.path(), "run1");
        let o = end_to_end(&bytes, secs);
        first = Some((bytes, secs));
        o
    });
    run(10, "training sanity", &mut training_sanity);
    run(11, "determinism", &mut || {
        let (a, secs_a) = first.take().unwrap();
        let (b, secs_b) = xval(tmp.path(), "run2");
        let total = secs_a + secs_b;
        outcome(a == b, format!("report.json {} bytes, identical: {}, two runs {total:.0} s", a.len(), a == b))
    });

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "{} of {} criteria passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
