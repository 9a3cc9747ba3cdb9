//! Gaussian KL divergence, nearest positive-definite projection and the
//! posterior influence function (PIF) of a smoother.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{ScenarioConfig, SimulatedRun};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, default_floor, symmetrize};
use crate::models::wrap_angle;
use crate::scenario::{derive_seed, rng_for, OutlierGroundTruth};
use crate::unscented::GaussianBelief;
use crate::vb::{run_method, Method, SmoothingProblem, VbHyperparams, VbOutcome};

/// Frobenius-nearest symmetric matrix with all eigenvalues `>= floor`.
///
/// Inputs whose symmetric part already satisfies the floor are returned
/// symmetrized but otherwise untouched.
pub fn nearest_pd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= floor {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

fn factor(cov: &DMatrix<f64>, which: &str) -> Result<DMatrix<f64>> {
    if let Some(c) = cholesky(cov) {
        return Ok(c.l());
    }
    cholesky(&nearest_pd(cov, default_floor(cov)))
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{which} covariance in KL divergence")))
}

/// `KL(N(μ₀, Σ₀) ‖ N(μ₁, Σ₁))`. Non-factorizable covariances are projected
/// with [`nearest_pd`] first. Round-off below zero is clamped.
pub fn gaussian_kl(g0: &GaussianBelief, g1: &GaussianBelief) -> Result<f64> {
    let n = g0.dim();
    if g1.dim() != n || g0.cov.shape() != (n, n) || g1.cov.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "KL between beliefs of dimension {n} and {}",
            g1.dim()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let l0 = factor(&g0.cov, "first")?;
    let l1 = factor(&g1.cov, "second")?;
    let solve = |rhs: &DMatrix<f64>| {
        l1.solve_lower_triangular(rhs)
            .ok_or_else(|| Error::Singular("second covariance factor".into()))
    };
    let trace_term = solve(&l0)?.norm_squared();
    let delta = &g1.mean - &g0.mean;
    let maha = solve(&DMatrix::from_column_slice(n, 1, delta.as_slice()))?.norm_squared();
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let kl = 0.5 * (trace_term - n as f64 + maha + logdet(&l1) - logdet(&l0));
    Ok(kl.max(0.0))
}

/// Sum of per-step KL divergences over a whole smoothed trajectory; a
/// broader companion to the single-step [`pif`].
pub fn trajectory_kl(a: &[GaussianBelief], b: &[GaussianBelief]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} beliefs", a.len(), b.len())));
    }
    a.iter().zip(b).map(|(x, y)| gaussian_kl(x, y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PifReport {
    pub method: Method,
    /// Corruption scale ς.
    pub corruption_scale: f64,
    pub run: usize,
    /// Zero-based corrupted step.
    pub corrupted_step: usize,
    pub pif_value: f64,
}

fn smoothed_at(outcome: &VbOutcome, k: usize) -> &GaussianBelief {
    &outcome.trace.steps[k].smoothed
}

/// PIF against a precomputed clean run: smooths the data with step `k_c`
/// replaced by `x_corrupt` and returns `KL(corrupted[k_c] ‖ clean[k_c])`.
pub fn pif_against(
    method: Method,
    problem: &SmoothingProblem,
    hp: &VbHyperparams,
    clean: &VbOutcome,
    x_corrupt: &DVector<f64>,
    k_c: usize,
    outliers: Option<&OutlierGroundTruth>,
) -> Result<f64> {
    if k_c >= problem.data.len() || clean.trace.len() != problem.data.len() {
        return Err(Error::Config(format!(
            "corrupted step {k_c} outside a horizon of {}",
            problem.data.len()
        )));
    }
    let corrupted = SmoothingProblem {
        data: problem.data.with_step_replaced(k_c, x_corrupt.clone())?,
        ..problem.clone()
    };
    let outcome = run_method(method, &corrupted, hp, outliers)?;
    gaussian_kl(smoothed_at(&outcome, k_c), smoothed_at(clean, k_c))
}

/// PIF of `method` for a single corrupted measurement vector at `k_c`
/// (zero-based).
pub fn pif(
    method: Method,
    problem: &SmoothingProblem,
    hp: &VbHyperparams,
    x_corrupt: &DVector<f64>,
    k_c: usize,
) -> Result<f64> {
    if k_c >= problem.data.len() {
        return Err(Error::Config(format!(
            "corrupted step {k_c} outside a horizon of {}",
            problem.data.len()
        )));
    }
    let clean = run_method(method, problem, hp, None)?;
    pif_against(method, problem, hp, &clean, x_corrupt, k_c, None)
}

/// `y + ς·√Rᵢ·zᵢ` for every sensor, wrapping angular readings.
pub fn corrupt_vector(problem: &SmoothingProblem, k: usize, direction: &DVector<f64>, scale: f64) -> DVector<f64> {
    let sensors = &problem.data.sensors;
    let y = &problem.data.values[k];
    DVector::from_iterator(
        y.len(),
        sensors.sensors.iter().enumerate().map(|(i, s)| {
            let v = y[i] + scale * s.noise_variance.sqrt() * direction[i];
            if s.is_angular() {
                wrap_angle(v)
            } else {
                v
            }
        }),
    )
}

/// PIF sweep on clean simulated data: each run draws a trajectory, a
/// corrupted step `k_c` and one standard-normal direction `z`, shared by all
/// scales so that only the magnitude changes along the sweep.
pub fn pif_sweep(config: &ScenarioConfig, scales: &[f64], runs: usize) -> Result<Vec<PifReport>> {
    if runs == 0 {
        return Err(Error::Config("pif sweep needs at least one run".into()));
    }
    config.validate()?;
    let mut base = config.clone();
    base.lambda = 0.0;

    let per_run: Vec<Result<Vec<PifReport>>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let sim = SimulatedRun::generate(&base, run)?;
            let problem = sim.problem(&base);
            let mut rng = rng_for(derive_seed(config.seed, run as u64), 3);
            let k_c = rng.random_range(0..problem.data.len());
            let direction = DVector::from_fn(problem.data.sensor_count(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let m = problem.data.sensor_count();
            let mut hit = OutlierGroundTruth::none(problem.data.len(), m);
            hit.mask[k_c] = vec![true; m];

            let mut out = vec![];
            for &method in &config.methods {
                let clean = run_method(method, &problem, &config.hp, Some(&sim.outliers))?;
                for &scale in scales {
                    let x_c = corrupt_vector(&problem, k_c, &direction, scale);
                    let value = pif_against(method, &problem, &config.hp, &clean, &x_c, k_c, Some(&hit))?;
                    out.push(PifReport {
                        method,
                        corruption_scale: scale,
                        run,
                        corrupted_step: k_c,
                        pif_value: value,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut reports = vec![];
    for r in per_run {
        reports.extend(r?);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PifSummary {
    pub method: Method,
    pub corruption_scale: f64,
    pub runs: usize,
    pub median: f64,
    pub max: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median and maximum PIF per `(method, ς)` in first-seen order.
pub fn summarize_pif(reports: &[PifReport]) -> Vec<PifSummary> {
    let mut keys: Vec<(Method, f64)> = vec![];
    for r in reports {
        let key = (r.method, r.corruption_scale);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, scale)| {
            let mut vals: Vec<f64> = reports
                .iter()
                .filter(|r| r.method == method && r.corruption_scale == scale)
                .map(|r| r.pif_value)
                .collect();
            PifSummary {
                method,
                corruption_scale: scale,
                runs: vals.len(),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                median: median(&mut vals),
            }
        })
        .collect()
}

/// CSV with columns `method,sigma,run,k_c,pif`; `k_c` is written one-based.
pub fn write_pif_csv(reports: &[PifReport], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "method,sigma,run,k_c,pif").map_err(io)?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.method,
            r.corruption_scale,
            r.run,
            r.corrupted_step + 1,
            r.pif_value
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
