//! Variational-Bayes outlier-robust smoothing.
//!
//! Every sensor reading carries a latent indicator `I` that scales its
//! inverse noise variance. Its prior mixes a point mass at one (probability
//! `θ`) with a Gamma law whose rate `b_k` is itself learned per time step.
//! The loop alternates a weighted forward/backward smoothing pass with
//! closed-form updates of the indicator posteriors and of `b̂_k`.
//!
//! Variants:
//! * `asor`: per-sensor indicators with adaptive `b̂_k`.
//! * `asor-imq`: as `asor`, with inverse multi-quadratic weights on the first
//!   forward pass.
//! * `sor`: per-sensor indicators, fixed `b̂ = 1` and `⟨I⟩ = Ω + (1−Ω)ε`
//!   (a Bernoulli-only reconstruction of the selective smoother).
//! * `ror`: one scalar weight per step from the summed residual.
//! * `ideal`: drops the known outliers and smooths once.
//! * `plain`: unit weights, one pass.

use std::fmt;
use std::str::FromStr;

use log::debug;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::models::{DynamicsModel, SensorSuite};
use crate::rts::{backward_pass, SmootherTrace};
use crate::scenario::{MeasurementSet, OutlierGroundTruth};
use crate::unscented::{forward_pass, forward_pass_with, sigma_points, GaussianBelief, MeasurementSigmas};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbHyperparams {
    /// Shape `a` of the Gamma part of the indicator prior.
    pub a: f64,
    /// Shape `A` of the Gamma prior on `b_k`; must exceed 1.
    pub b_shape: f64,
    /// Rate `B` of the Gamma prior on `b_k`.
    pub b_rate: f64,
    /// Prior probability that a reading is clean.
    pub theta: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// IMQ soft threshold for the first forward pass of `asor-imq`.
    pub imq_c: Option<f64>,
    /// Clamp `⟨I⟩` to at most 1. Disable only for ablation.
    pub clamp_indicator: bool,
    /// Fixed Gamma rate used by `sor` and `ror`.
    pub fixed_b: f64,
}

impl Default for VbHyperparams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b_shape: 2.0,
            b_rate: 1.0,
            theta: 0.5,
            epsilon: 1e-6,
            max_iters: 50,
            tol: 1e-4,
            imq_c: Some(5.0),
            clamp_indicator: true,
            fixed_b: 1.0,
        }
    }
}

impl VbHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("hyperparameter {what}")));
        if !(self.a > 0.0) {
            return bad("a must be positive");
        }
        if !(self.b_shape > 1.0) {
            return bad("b_shape must exceed 1");
        }
        if !(self.b_rate > 0.0) {
            return bad("b_rate must be positive");
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be non-negative");
        }
        if let Some(c) = self.imq_c {
            if !(c > 0.0) {
                return bad("imq_c must be positive");
            }
        }
        if !(self.fixed_b > 0.0) {
            return bad("fixed_b must be positive");
        }
        Ok(())
    }

    /// Posterior Gamma shape `α = a + 1/2`.
    pub fn alpha(&self) -> f64 {
        self.a + 0.5
    }

    /// `b̂` before any data: the mode `(A−1)/B` of its prior.
    pub fn initial_b(&self) -> f64 {
        (self.b_shape - 1.0) / self.b_rate
    }
}

/// `Ω` for a Gamma part of shape `a` whose posterior shape is `alpha`:
/// `1/(1 + ζ b̂ᵃ β^{−α} e^{W/2})` with `ζ = (1/θ − 1) Γ(α)/Γ(a)` and
/// `β = W/2 + b̂`, evaluated in log space.
pub fn omega_general(w: f64, b_hat: f64, a: f64, alpha: f64, theta: f64) -> f64 {
    if theta >= 1.0 {
        return 1.0;
    }
    let beta = 0.5 * w + b_hat;
    let ln_zeta = (1.0 / theta - 1.0).ln() + ln_gamma(alpha) - ln_gamma(a);
    let z = ln_zeta + a * b_hat.ln() - alpha * beta.ln() + 0.5 * w;
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Posterior probability that a reading with expected normalized squared
/// residual `w` is clean.
pub fn omega(w: f64, b_hat: f64, hp: &VbHyperparams) -> f64 {
    omega_general(w, b_hat, hp.a, hp.alpha(), hp.theta)
}

/// `⟨I⟩ = Ω + (1−Ω) α/β`, kept in `[ε, 1]` (upper clamp switchable).
pub fn indicator_expectation(omega: f64, beta: f64, hp: &VbHyperparams) -> f64 {
    let raw = omega + (1.0 - omega) * hp.alpha() / beta;
    let upper = if hp.clamp_indicator { 1.0 } else { f64::INFINITY };
    raw.clamp(hp.epsilon, upper)
}

/// `b̂ = (Ā−1)/B̄` with `Ā = A + Σ a(1−Ωᵢ)` and `B̄ = B + Σ (1−Ωᵢ) α/βᵢ`.
pub fn update_b(omega_row: &[f64], beta_row: &[f64], hp: &VbHyperparams) -> Result<f64> {
    if omega_row.len() != beta_row.len() {
        return Err(Error::Dimension(format!(
            "{} Ω values but {} β values",
            omega_row.len(),
            beta_row.len()
        )));
    }
    let alpha = hp.alpha();
    let (mut a_bar, mut b_bar) = (hp.b_shape, hp.b_rate);
    for (o, b) in omega_row.iter().zip(beta_row) {
        a_bar += hp.a * (1.0 - o);
        b_bar += (1.0 - o) * alpha / b;
    }
    if !(a_bar > 1.0) {
        return Err(Error::Config(format!("Ā = {a_bar} must exceed 1")));
    }
    Ok((a_bar - 1.0) / b_bar)
}

/// Inverse multi-quadratic weight `(1 + ‖r‖²/c²)^{−1/2}`.
pub fn imq_weight(residual: &DVector<f64>, c: f64) -> f64 {
    (1.0 + residual.norm_squared() / (c * c)).powf(-0.5)
}

/// `Wᵢ = [(yᵢ − vᵢ)² + Sᵢ]/Rᵢ` from sigma points of `smoothed` (`vᵢ` the
/// predicted reading, `Sᵢ` its spread). Masked sensors get 0.
pub fn expected_sq_residual(
    smoothed: &GaussianBelief,
    y: &DVector<f64>,
    sensors: &SensorSuite,
    mask: &[bool],
    kappa: f64,
) -> Result<DVector<f64>> {
    let sigma = sigma_points(smoothed, kappa)?;
    let meas = MeasurementSigmas::propagate(&sigma, sensors);
    let spread = meas.variances(&sigma.weights);
    let r = sensors.noise_variances();
    Ok(DVector::from_iterator(
        sensors.len(),
        (0..sensors.len()).map(|i| {
            if mask[i] {
                (meas.innovation(i, y[i]).powi(2) + spread[i]) / r[i]
            } else {
                0.0
            }
        }),
    ))
}

/// Per-step, per-sensor indicator posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorState {
    pub w: Vec<DVector<f64>>,
    pub beta: Vec<DVector<f64>>,
    pub omega: Vec<DVector<f64>>,
    pub expect_i: Vec<DVector<f64>>,
    pub b_hat: Vec<f64>,
}

impl IndicatorState {
    pub fn initial(steps: usize, sensors: usize, b0: f64) -> Self {
        Self {
            w: vec![DVector::zeros(sensors); steps],
            beta: vec![DVector::from_element(sensors, b0); steps],
            omega: vec![DVector::from_element(sensors, 1.0); steps],
            expect_i: vec![DVector::from_element(sensors, 1.0); steps],
            b_hat: vec![b0; steps],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Plain,
    Ideal,
    Asor,
    AsorImq,
    Sor,
    Ror,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Plain,
        Method::Ideal,
        Method::Asor,
        Method::AsorImq,
        Method::Sor,
        Method::Ror,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::Ideal => "ideal",
            Method::Asor => "asor",
            Method::AsorImq => "asor-imq",
            Method::Sor => "sor",
            Method::Ror => "ror",
        }
    }

    pub fn needs_ground_truth(self) -> bool {
        self == Method::Ideal
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected one of plain, ideal, asor, asor-imq, sor, ror)"
                ))
            })
    }
}

/// Everything a smoother needs besides its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingProblem {
    pub model: DynamicsModel,
    pub data: MeasurementSet,
    pub prior: GaussianBelief,
    pub kappa: f64,
}

/// One line of the per-iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iter: usize,
    /// `max_k ‖Δx̂ˢ_k‖/(1 + ‖x̂ˢ_k‖)`; infinite on the first iteration.
    pub max_delta: f64,
    pub mean_b_hat: f64,
    /// Fraction of present readings with `Ω < 0.5`.
    pub suspect_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbOutcome {
    pub trace: SmootherTrace,
    pub indicators: IndicatorState,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationDiagnostics>,
}

impl VbOutcome {
    pub fn smoothed_means(&self) -> Vec<DVector<f64>> {
        self.trace.smoothed().map(|b| b.mean.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Adaptive,
    Selective,
    Scalar,
}

fn max_relative_change(prev: &[DVector<f64>], trace: &SmootherTrace) -> f64 {
    trace
        .smoothed()
        .zip(prev)
        .map(|(s, p)| (&s.mean - p).norm() / (1.0 + s.mean.norm()))
        .fold(0.0, f64::max)
}

/// Largest change of `Ω`, `⟨I⟩` or relative `b̂` between two sweeps.
fn indicator_change(a: &IndicatorState, b: &IndicatorState) -> f64 {
    let rows =
        |x: &[DVector<f64>], y: &[DVector<f64>]| x.iter().zip(y).map(|(u, v)| (u - v).amax()).fold(0.0, f64::max);
    let b_change = a
        .b_hat
        .iter()
        .zip(&b.b_hat)
        .map(|(u, v)| (u - v).abs() / (1.0 + u.abs()))
        .fold(0.0, f64::max);
    rows(&a.omega, &b.omega)
        .max(rows(&a.expect_i, &b.expect_i))
        .max(b_change)
}

fn update_indicators(
    variant: Variant,
    problem: &SmoothingProblem,
    trace: &SmootherTrace,
    hp: &VbHyperparams,
    state: &mut IndicatorState,
) -> Result<()> {
    let data = &problem.data;
    let m = data.sensor_count();
    for (k, step) in trace.steps.iter().enumerate() {
        let mask = &data.mask[k];
        let w = expected_sq_residual(&step.smoothed, &data.values[k], &data.sensors, mask, problem.kappa)?;
        let present: Vec<usize> = (0..m).filter(|&i| mask[i]).collect();
        match variant {
            Variant::Adaptive | Variant::Selective => {
                let b_old = if variant == Variant::Adaptive {
                    state.b_hat[k]
                } else {
                    hp.fixed_b
                };
                let beta = w.map(|wi| 0.5 * wi + b_old);
                let om = DVector::from_iterator(m, (0..m).map(|i| if mask[i] { omega(w[i], b_old, hp) } else { 1.0 }));
                let expect = DVector::from_iterator(
                    m,
                    (0..m).map(|i| match variant {
                        Variant::Adaptive => indicator_expectation(om[i], beta[i], hp),
                        _ => om[i] + (1.0 - om[i]) * hp.epsilon,
                    }),
                );
                if variant == Variant::Adaptive {
                    let om_row: Vec<f64> = present.iter().map(|&i| om[i]).collect();
                    let beta_row: Vec<f64> = present.iter().map(|&i| beta[i]).collect();
                    state.b_hat[k] = update_b(&om_row, &beta_row, hp)?;
                }
                state.beta[k] = beta;
                state.omega[k] = om;
                state.expect_i[k] = expect;
            }
            Variant::Scalar => {
                let total: f64 = present.iter().map(|&i| w[i]).sum();
                let b = hp.fixed_b;
                let (om, beta) = if present.is_empty() {
                    (1.0, b)
                } else {
                    let alpha = hp.a + 0.5 * present.len() as f64;
                    (omega_general(total, b, hp.a, alpha, hp.theta), 0.5 * total + b)
                };
                state.beta[k] = DVector::from_element(m, beta);
                state.omega[k] = DVector::from_element(m, om);
                state.expect_i[k] = DVector::from_element(m, om + (1.0 - om) * hp.epsilon);
            }
        }
        state.w[k] = w;
    }
    Ok(())
}

fn vb_loop(problem: &SmoothingProblem, hp: &VbHyperparams, variant: Variant, imq: bool) -> Result<VbOutcome> {
    hp.validate()?;
    let t_len = problem.data.len();
    let m = problem.data.sensor_count();
    let b0 = match variant {
        Variant::Adaptive => hp.initial_b(),
        _ => hp.fixed_b,
    };
    let imq_c = match (imq, hp.imq_c) {
        (true, None) => return Err(Error::Config("asor-imq requires imq_c".into())),
        (_, c) => c,
    };

    let mut state = IndicatorState::initial(t_len, m, b0);
    let mut prev: Option<Vec<DVector<f64>>> = None;
    let mut history = vec![];
    let mut converged = false;
    let mut trace = SmootherTrace::default();

    for iter in 1..=hp.max_iters {
        let filtered = if iter == 1 && imq {
            let c = imq_c.expect("checked above");
            forward_pass_with(&problem.model, &problem.data, &problem.prior, problem.kappa, |_, r| {
                DVector::from_element(m, imq_weight(r, c))
            })?
        } else {
            forward_pass(
                &problem.model,
                &problem.data,
                &state.expect_i,
                &problem.prior,
                problem.kappa,
            )?
        };
        trace = backward_pass(&filtered)?;
        let before = state.clone();
        update_indicators(variant, problem, &trace, hp, &mut state)?;

        let delta = prev
            .as_ref()
            .map(|p| max_relative_change(p, &trace))
            .unwrap_or(f64::INFINITY);
        let settled = iter > 1 && indicator_change(&before, &state) < hp.tol;
        let (mut suspects, mut present) = (0usize, 0usize);
        for (om, mask) in state.omega.iter().zip(&problem.data.mask) {
            for (o, _) in om.iter().zip(mask).filter(|(_, p)| **p) {
                present += 1;
                suspects += usize::from(*o < 0.5);
            }
        }
        let diag = IterationDiagnostics {
            iter,
            max_delta: delta,
            mean_b_hat: if t_len == 0 {
                b0
            } else {
                state.b_hat.iter().sum::<f64>() / t_len as f64
            },
            suspect_fraction: if present == 0 {
                0.0
            } else {
                suspects as f64 / present as f64
            },
        };
        debug!(
            "iter {} max_delta {:.3e} mean_b {:.4} suspect {:.3}",
            diag.iter, diag.max_delta, diag.mean_b_hat, diag.suspect_fraction
        );
        history.push(diag);
        prev = Some(trace.smoothed().map(|b| b.mean.clone()).collect());
        if (delta < hp.tol && settled) || t_len == 0 {
            converged = true;
            break;
        }
    }
    Ok(VbOutcome {
        trace,
        indicators: state,
        iterations: history.len(),
        converged,
        history,
    })
}

pub fn run_asor(problem: &SmoothingProblem, hp: &VbHyperparams) -> Result<VbOutcome> {
    vb_loop(problem, hp, Variant::Adaptive, false)
}

pub fn run_asor_imq(problem: &SmoothingProblem, hp: &VbHyperparams) -> Result<VbOutcome> {
    vb_loop(problem, hp, Variant::Adaptive, true)
}

pub fn run_sor(problem: &SmoothingProblem, hp: &VbHyperparams) -> Result<VbOutcome> {
    vb_loop(problem, hp, Variant::Selective, false)
}

pub fn run_ror(problem: &SmoothingProblem, hp: &VbHyperparams) -> Result<VbOutcome> {
    vb_loop(problem, hp, Variant::Scalar, false)
}

fn single_pass(problem: &SmoothingProblem, data: &MeasurementSet, b0: f64) -> Result<VbOutcome> {
    let m = data.sensor_count();
    let ones = vec![DVector::from_element(m, 1.0); data.len()];
    let filtered = forward_pass(&problem.model, data, &ones, &problem.prior, problem.kappa)?;
    Ok(VbOutcome {
        trace: backward_pass(&filtered)?,
        indicators: IndicatorState::initial(data.len(), m, b0),
        iterations: 1,
        converged: true,
        history: vec![],
    })
}

pub fn run_plain(problem: &SmoothingProblem) -> Result<VbOutcome> {
    single_pass(problem, &problem.data, 1.0)
}

/// Smooths once with the known outliers removed from the data.
pub fn run_ideal(problem: &SmoothingProblem, outliers: &OutlierGroundTruth) -> Result<VbOutcome> {
    if outliers.mask.len() != problem.data.len() {
        return Err(Error::Dimension(format!(
            "outlier mask covers {} steps, data has {}",
            outliers.mask.len(),
            problem.data.len()
        )));
    }
    single_pass(problem, &problem.data.without(&outliers.mask), 1.0)
}

pub fn run_method(
    method: Method,
    problem: &SmoothingProblem,
    hp: &VbHyperparams,
    outliers: Option<&OutlierGroundTruth>,
) -> Result<VbOutcome> {
    match method {
        Method::Plain => run_plain(problem),
        Method::Ideal => run_ideal(
            problem,
            outliers.ok_or_else(|| Error::Config("ideal smoother needs the outlier ground truth".into()))?,
        ),
        Method::Asor => run_asor(problem, hp),
        Method::AsorImq => run_asor_imq(problem, hp),
        Method::Sor => run_sor(problem, hp),
        Method::Ror => run_ror(problem, hp),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Sensor;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn omega_at_zero_residual() {
        let hp = VbHyperparams::default();
        let expected = 1.0 / (1.0 + std::f64::consts::PI.sqrt() / 2.0);
        assert_abs_diff_eq!(omega(0.0, 1.0, &hp), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(omega(0.0, 1.0, &hp), 0.530_158_904_268_618, epsilon = 1e-9);
    }

    #[test]
    fn omega_vanishes_for_huge_residual() {
        let hp = VbHyperparams::default();
        let o = omega(1e6, 1.0, &hp);
        assert!((0.0..1e-300).contains(&o));
    }

    #[test]
    fn omega_tends_to_one_with_confident_prior() {
        let hp = VbHyperparams {
            theta: 1.0 - 1e-15,
            ..Default::default()
        };
        assert!(omega(30.0, 1.0, &hp) > 0.999);
        assert_eq!(omega_general(1e4, 1.0, 1.0, 1.5, 1.0), 1.0);
    }

    #[test]
    fn indicator_expectation_cases() {
        let hp = VbHyperparams::default();
        assert_eq!(indicator_expectation(1.0, 3.0, &hp), 1.0);
        assert_abs_diff_eq!(indicator_expectation(0.0, 3.0, &hp), 0.5, epsilon = 1e-15);
        assert_eq!(indicator_expectation(0.5302, 1.0, &hp), 1.0);
        let raw = VbHyperparams {
            clamp_indicator: false,
            ..hp
        };
        assert_abs_diff_eq!(indicator_expectation(0.5302, 1.0, &raw), 1.2349, epsilon = 1e-4);
        assert_eq!(indicator_expectation(0.0, 1e12, &hp), hp.epsilon);
    }

    #[test]
    fn update_b_cases() {
        let hp = VbHyperparams::default();
        assert_eq!(update_b(&[1.0, 1.0, 1.0], &[5.0, 6.0, 7.0], &hp).unwrap(), 1.0);
        assert_abs_diff_eq!(
            update_b(&[0.0, 0.0], &[1.0, 2.0], &hp).unwrap(),
            3.0 / 3.25,
            epsilon = 1e-14
        );
        assert!(update_b(&[0.0], &[1.0, 2.0], &hp).is_err());
    }

    #[test]
    fn update_b_rejects_degenerate_shape() {
        let hp = VbHyperparams {
            b_shape: 1.0,
            ..Default::default()
        };
        assert!(matches!(update_b(&[1.0], &[1.0], &hp), Err(Error::Config(_))));
    }

    #[test]
    fn imq_cases() {
        let r = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(imq_weight(&DVector::zeros(2), 5.0), 1.0);
        assert_abs_diff_eq!(imq_weight(&r, 5.0), 0.5f64.sqrt(), epsilon = 1e-15);
        let big = DVector::from_vec(vec![1e8, 0.0]);
        assert_abs_diff_eq!(imq_weight(&big, 5.0) * big.norm(), 5.0, epsilon = 1e-6);
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(VbHyperparams::default().validate().is_ok());
        for bad in [
            VbHyperparams {
                a: 0.0,
                ..Default::default()
            },
            VbHyperparams {
                b_shape: 0.9,
                ..Default::default()
            },
            VbHyperparams {
                b_rate: -1.0,
                ..Default::default()
            },
            VbHyperparams {
                theta: 1.0,
                ..Default::default()
            },
            VbHyperparams {
                epsilon: 0.0,
                ..Default::default()
            },
            VbHyperparams {
                max_iters: 0,
                ..Default::default()
            },
            VbHyperparams {
                imq_c: Some(0.0),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("huber".parse::<Method>().is_err());
        assert_eq!(" ASOR-IMQ ".parse::<Method>().unwrap(), Method::AsorImq);
    }

    #[test]
    fn sq_residual_for_deterministic_state() {
        let suite = SensorSuite::new(vec![Sensor::linear(vec![1.0, 0.0], 4.0)], [0, 1]).unwrap();
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::zeros(2, 2)).unwrap();
        let w = expected_sq_residual(&b, &DVector::from_element(1, 3.0), &suite, &[true], 0.0).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
        let w = expected_sq_residual(&b, &DVector::from_element(1, 1.0), &suite, &[true], 0.0).unwrap();
        assert_eq!(w[0], 0.0);
        let w = expected_sq_residual(&b, &DVector::from_element(1, 9.0), &suite, &[false], 0.0).unwrap();
        assert_eq!(w[0], 0.0);
    }

    #[test]
    fn sq_residual_includes_spread() {
        let suite = SensorSuite::new(vec![Sensor::linear(vec![1.0, 2.0], 0.5)], [0, 1]).unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let b = GaussianBelief::new(DVector::from_vec(vec![0.3, -0.1]), cov.clone()).unwrap();
        let y = 2.0;
        let h = DVector::from_vec(vec![1.0, 2.0]);
        let expected = ((y - h.dot(&b.mean)).powi(2) + (h.transpose() * &cov * &h)[0]) / 0.5;
        let w = expected_sq_residual(&b, &DVector::from_element(1, y), &suite, &[true], 0.0).unwrap();
        assert_abs_diff_eq!(w[0], expected, epsilon = 1e-12);
    }
}
