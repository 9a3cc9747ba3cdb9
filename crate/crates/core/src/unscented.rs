//! Sigma-point machinery and the serial sigma-point Kalman filter.
//!
//! The measurement update works in the whitened sigma basis: with
//! `𝒳 = [√βᵢ (Xᵢ − x̂⁻)]` and `Yₗ = [√βᵢ (Yₗ⁽ⁱ⁾ − vₗ)]`, each sensor adds a
//! rank-one term to `C⁻¹` (starting from the identity) and to `d`, and the
//! posterior is `x̂ = x̂⁻ + 𝒳 C d`, `P̂ = 𝒳 C 𝒳ᵀ`. Processing sensors one at a
//! time keeps the cost per step linear in the number of sensors.
//!
//! The update sigma points are drawn from the predicted belief (which carries
//! `Q`), so that `𝒳 𝒳ᵀ = P̂⁻` holds exactly.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::nearest_pd;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, default_floor, psd_sqrt, symmetrize};
use crate::models::{wrap_angle, DynamicsModel, SensorSuite};
use crate::scenario::MeasurementSet;

/// Mean and covariance of a Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean has {} entries but covariance is {:?}",
                mean.len(),
                cov.shape()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }

    /// Symmetric within `1e-12` relative and Cholesky-factorizable.
    pub fn is_valid_covariance(&self) -> bool {
        let scale = self.cov.amax().max(f64::MIN_POSITIVE);
        let asym = (&self.cov - self.cov.transpose()).amax();
        asym <= 1e-12 * scale && cholesky(&self.cov).is_some()
    }

    /// Symmetrizes the covariance and, if it cannot be factorized, projects it
    /// to the nearest positive-definite matrix. Returns whether a repair was
    /// needed.
    pub(crate) fn repair(&mut self) -> bool {
        self.cov = symmetrize(&self.cov);
        if cholesky(&self.cov).is_some() {
            return false;
        }
        let floor = default_floor(&self.cov);
        self.cov = nearest_pd(&self.cov, floor);
        true
    }
}

/// `2n+1` sigma points with their weights `βᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    pub points: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    pub kappa: f64,
}

impl SigmaSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Generating mean (the central point).
    pub fn center(&self) -> &DVector<f64> {
        &self.points[0]
    }

    pub fn weighted_mean(&self) -> DVector<f64> {
        weighted_sum(&self.points, &self.weights)
    }

    pub fn weighted_cov(&self) -> DMatrix<f64> {
        let mean = self.weighted_mean();
        let n = mean.len();
        let mut cov = DMatrix::zeros(n, n);
        for (p, w) in self.points.iter().zip(&self.weights) {
            let d = p - &mean;
            cov.ger(*w, &d, &d, 1.0);
        }
        cov
    }

    /// `[√βᵢ (Xᵢ − center)]` as an `n × (2n+1)` matrix.
    fn scaled_deviations(&self, center: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = center.len();
        let mut out = DMatrix::zeros(n, self.len());
        for (i, (p, w)) in self.points.iter().zip(&self.weights).enumerate() {
            out.set_column(i, &((p - center) * sqrt_weight(*w)?));
        }
        Ok(out)
    }
}

fn sqrt_weight(w: f64) -> Result<f64> {
    if w < 0.0 {
        return Err(Error::Config(format!(
            "negative sigma weight {w}: the whitened update requires kappa >= 0"
        )));
    }
    Ok(w.sqrt())
}

fn weighted_sum(points: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let mut acc = DVector::zeros(points[0].len());
    for (p, w) in points.iter().zip(weights) {
        acc.axpy(*w, p, 1.0);
    }
    acc
}

/// Symmetric sigma points `x̂ ± √(n+κ)·[√P]ᵢ` with weights
/// `β₀ = κ/(n+κ)`, `βᵢ = 1/(2(n+κ))`.
pub fn sigma_points(belief: &GaussianBelief, kappa: f64) -> Result<SigmaSet> {
    let n = belief.dim();
    let spread = n as f64 + kappa;
    if !(spread > 0.0) {
        return Err(Error::Config(format!("n + kappa must be positive, got {spread}")));
    }
    let root = psd_sqrt(&belief.cov)
        .ok_or_else(|| Error::NotPositiveDefinite("sigma-point generation needs a PSD covariance".into()))?
        * spread.sqrt();

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(belief.mean.clone());
    for i in 0..n {
        points.push(&belief.mean + root.column(i));
    }
    for i in 0..n {
        points.push(&belief.mean - root.column(i));
    }
    let mut weights = vec![1.0 / (2.0 * spread); 2 * n + 1];
    weights[0] = kappa / spread;
    Ok(SigmaSet { points, weights, kappa })
}

/// Predicted belief plus the cross-covariance `L` between the previous and
/// predicted state, needed by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub predicted: GaussianBelief,
    pub cross_cov: DMatrix<f64>,
}

/// Unscented prediction through `f` with additive process noise `q`.
pub fn ut_predict<F>(sigma: &SigmaSet, f: F, q: &DMatrix<f64>) -> PredictionResult
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let propagated: Vec<DVector<f64>> = sigma.points.iter().map(&f).collect();
    let mean = weighted_sum(&propagated, &sigma.weights);
    let prior_mean = sigma.weighted_mean();
    let n = mean.len();
    let mut cov = q.clone();
    let mut cross = DMatrix::zeros(sigma.center().len(), n);
    for ((x, fx), w) in sigma.points.iter().zip(&propagated).zip(&sigma.weights) {
        let df = fx - &mean;
        cov.ger(*w, &df, &df, 1.0);
        cross.ger(*w, &(x - &prior_mean), &df, 1.0);
    }
    PredictionResult {
        predicted: GaussianBelief {
            mean,
            cov: symmetrize(&cov),
        },
        cross_cov: cross,
    }
}

/// Sigma points pushed through the measurement function.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSigmas {
    /// `m × (2n+1)`; angular rows are unwrapped around the central point.
    pub values: DMatrix<f64>,
    /// Weighted predicted measurement `v`.
    pub predicted: DVector<f64>,
    pub angular: Vec<bool>,
}

impl MeasurementSigmas {
    pub fn propagate(sigma: &SigmaSet, sensors: &SensorSuite) -> Self {
        let m = sensors.len();
        let n_pts = sigma.len();
        let mut values = DMatrix::zeros(m, n_pts);
        for (i, p) in sigma.points.iter().enumerate() {
            values.set_column(i, &sensors.measure(p));
        }
        let angular = sensors.angular_flags();
        for (l, _) in angular.iter().enumerate().filter(|(_, a)| **a) {
            let reference = values[(l, 0)];
            for i in 1..n_pts {
                values[(l, i)] = reference + wrap_angle(values[(l, i)] - reference);
            }
        }
        let mut predicted = DVector::zeros(m);
        for (i, w) in sigma.weights.iter().enumerate() {
            predicted.axpy(*w, &values.column(i), 1.0);
        }
        Self {
            values,
            predicted,
            angular,
        }
    }

    /// `yₗ − vₗ`, wrapped for angular sensors.
    pub fn innovation(&self, l: usize, y: f64) -> f64 {
        let r = y - self.predicted[l];
        if self.angular[l] {
            wrap_angle(r)
        } else {
            r
        }
    }

    /// Sigma-weighted variance of each predicted measurement component.
    pub fn variances(&self, weights: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.values.nrows(),
            (0..self.values.nrows()).map(|l| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * (self.values[(l, i)] - self.predicted[l]).powi(2))
                    .sum()
            }),
        )
    }
}

/// Serial information-form measurement update.
///
/// `sigma` must be generated from `pred`. Each unmasked sensor `l` contributes
/// with precision `weights[l] / r_diag[l]`; masked sensors are skipped. With
/// every sensor masked the prior is returned unchanged.
pub fn serial_update(
    pred: &GaussianBelief,
    sigma: &SigmaSet,
    meas: &MeasurementSigmas,
    y: &DVector<f64>,
    r_diag: &DVector<f64>,
    weights: &DVector<f64>,
    mask: &[bool],
) -> Result<GaussianBelief> {
    let m = meas.values.nrows();
    if y.len() != m || r_diag.len() != m || weights.len() != m || mask.len() != m {
        return Err(Error::Dimension(format!(
            "update expects {m} measurements, weights, variances and mask entries"
        )));
    }
    let n_pts = sigma.len();
    let sqrt_w = sigma
        .weights
        .iter()
        .map(|w| sqrt_weight(*w))
        .collect::<Result<Vec<_>>>()?;

    let mut c_inv = DMatrix::<f64>::identity(n_pts, n_pts);
    let mut d = DVector::<f64>::zeros(n_pts);
    let mut row = DVector::<f64>::zeros(n_pts);
    let mut used = 0;
    for l in (0..m).filter(|&l| mask[l]) {
        let precision = weights[l] / r_diag[l];
        for i in 0..n_pts {
            let dev = meas.values[(l, i)] - meas.predicted[l];
            row[i] = sqrt_w[i] * if meas.angular[l] { wrap_angle(dev) } else { dev };
        }
        c_inv.ger(precision, &row, &row, 1.0);
        d.axpy(precision * meas.innovation(l, y[l]), &row, 1.0);
        used += 1;
    }
    if used == 0 {
        return Ok(pred.clone());
    }

    let chol = cholesky(&c_inv).ok_or_else(|| Error::NotPositiveDefinite("information accumulator C⁻¹".into()))?;
    let x_dev = sigma.scaled_deviations(&pred.mean)?;
    let c_d = chol.solve(&d);
    let mean = &pred.mean + &x_dev * c_d;
    // 𝒳 C 𝒳ᵀ = (L⁻¹𝒳ᵀ)ᵀ(L⁻¹𝒳ᵀ)
    let half = chol
        .l()
        .solve_lower_triangular(&x_dev.transpose())
        .ok_or_else(|| Error::Singular("information accumulator factor".into()))?;
    let cov = symmetrize(&(half.transpose() * &half));
    Ok(GaussianBelief { mean, cov })
}

/// One time step of the forward filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub predicted: GaussianBelief,
    pub filtered: GaussianBelief,
    /// Cross-covariance between the previous filtered state and this
    /// predicted state.
    pub cross_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterTrace {
    pub steps: Vec<FilterStep>,
    /// Number of covariance projections applied during the pass.
    pub repairs: usize,
}

impl FilterTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Forward pass with a fixed weight vector `⟨I_k⟩` per step.
pub fn forward_pass(
    model: &DynamicsModel,
    data: &MeasurementSet,
    weights: &[DVector<f64>],
    prior: &GaussianBelief,
    kappa: f64,
) -> Result<FilterTrace> {
    if weights.len() != data.len() {
        return Err(Error::Dimension(format!(
            "{} weight vectors for {} time steps",
            weights.len(),
            data.len()
        )));
    }
    forward_pass_with(model, data, prior, kappa, |k, _| weights[k].clone())
}

/// Forward pass where the weights of step `k` are chosen from the whitened
/// innovation `(yᵢ − vᵢ)/√Rᵢ` (zero for masked sensors).
pub fn forward_pass_with<F>(
    model: &DynamicsModel,
    data: &MeasurementSet,
    prior: &GaussianBelief,
    kappa: f64,
    mut weights_for: F,
) -> Result<FilterTrace>
where
    F: FnMut(usize, &DVector<f64>) -> DVector<f64>,
{
    let n = model.state_dim();
    if prior.dim() != n {
        return Err(Error::Dimension(format!(
            "prior has dimension {} but the model state has {n}",
            prior.dim()
        )));
    }
    let sensors = &data.sensors;
    let r_diag = sensors.noise_variances();
    let mut trace = FilterTrace {
        steps: Vec::with_capacity(data.len()),
        repairs: 0,
    };
    let mut current = prior.clone();
    if current.repair() {
        trace.repairs += 1;
    }

    for k in 0..data.len() {
        let sigma = sigma_points(&current, kappa)?;
        let PredictionResult {
            mut predicted,
            cross_cov,
        } = ut_predict(&sigma, |x| model.apply(x), &model.process_noise);
        if predicted.repair() {
            debug!("step {k}: predicted covariance repaired");
            trace.repairs += 1;
        }

        let sigma_pred = sigma_points(&predicted, kappa)?;
        let meas = MeasurementSigmas::propagate(&sigma_pred, sensors);
        let y = &data.values[k];
        let mask = &data.mask[k];
        let whitened = DVector::from_iterator(
            sensors.len(),
            (0..sensors.len()).map(|l| {
                if mask[l] {
                    meas.innovation(l, y[l]) / r_diag[l].sqrt()
                } else {
                    0.0
                }
            }),
        );
        let w = weights_for(k, &whitened);
        let mut filtered = serial_update(&predicted, &sigma_pred, &meas, y, &r_diag, &w, mask)?;

        if !filtered.is_finite() {
            return Err(Error::Diverged {
                step: k,
                reason: "non-finite filtered state".into(),
            });
        }
        if filtered.repair() {
            debug!("step {k}: filtered covariance repaired");
            trace.repairs += 1;
        }
        current = filtered.clone();
        trace.steps.push(FilterStep {
            predicted,
            filtered,
            cross_cov,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Sensor;
    use approx::assert_abs_diff_eq;

    fn belief(mean: &[f64], cov: &[f64]) -> GaussianBelief {
        let n = mean.len();
        GaussianBelief::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(n, n, cov)).unwrap()
    }

    #[test]
    fn scalar_sigma_points() {
        let s = sigma_points(&belief(&[0.0], &[1.0]), 2.0).unwrap();
        let pts: Vec<f64> = s.points.iter().map(|p| p[0]).collect();
        assert_abs_diff_eq!(pts[0], 0.0);
        assert_abs_diff_eq!(pts[1], 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(pts[2], -(3f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[1], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sigma_points_reproduce_moments() {
        let b = belief(&[1.0, -2.0, 0.5], &[4.0, 1.0, 0.2, 1.0, 3.0, -0.4, 0.2, -0.4, 2.0]);
        for kappa in [0.0, 1.0, 3.0] {
            let s = sigma_points(&b, kappa).unwrap();
            assert_eq!(s.center(), &b.mean);
            assert_abs_diff_eq!(s.weighted_mean(), b.mean, epsilon = 1e-12);
            assert_abs_diff_eq!(s.weighted_cov(), b.cov, epsilon = 1e-10);
        }
    }

    #[test]
    fn sigma_points_of_degenerate_covariance() {
        let b = belief(&[1.0, 2.0], &[0.0, 0.0, 0.0, 0.0]);
        let s = sigma_points(&b, 0.0).unwrap();
        assert!(s.points.iter().all(|p| p == &b.mean));
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let b = belief(&[0.0, 0.0], &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(sigma_points(&b, 0.0), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn linear_prediction_is_exact() {
        let b = belief(&[1.0, 2.0], &[2.0, 0.3, 0.3, 1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 0.9]);
        let q = DMatrix::from_row_slice(2, 2, &[0.1, 0.01, 0.01, 0.2]);
        let s = sigma_points(&b, 0.0).unwrap();
        let out = ut_predict(&s, |x| &a * x, &q);
        assert_abs_diff_eq!(out.predicted.mean, &a * &b.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(out.predicted.cov, &a * &b.cov * a.transpose() + &q, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cross_cov, &b.cov * a.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn identity_prediction_without_noise() {
        let b = belief(&[1.0, 2.0], &[2.0, 0.3, 0.3, 1.0]);
        let s = sigma_points(&b, 1.0).unwrap();
        let out = ut_predict(&s, |x| x.clone(), &DMatrix::zeros(2, 2));
        assert_abs_diff_eq!(out.predicted.mean, b.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(out.predicted.cov, b.cov, epsilon = 1e-12);
    }

    fn scalar_problem(weight: f64) -> (GaussianBelief, GaussianBelief) {
        let pred = belief(&[1.0, -1.0], &[2.0, 0.5, 0.5, 1.5]);
        let suite = SensorSuite::new(vec![Sensor::linear(vec![1.0, 2.0], 0.7)], [0, 1]).unwrap();
        let sigma = sigma_points(&pred, 0.0).unwrap();
        let meas = MeasurementSigmas::propagate(&sigma, &suite);
        let y = DVector::from_element(1, 0.4);
        let post = serial_update(
            &pred,
            &sigma,
            &meas,
            &y,
            &suite.noise_variances(),
            &DVector::from_element(1, weight),
            &[true],
        )
        .unwrap();
        (pred, post)
    }

    #[test]
    fn scalar_linear_update_matches_kalman_gain() {
        let (pred, post) = scalar_problem(1.0);
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let s = (&h * &pred.cov * h.transpose())[(0, 0)] + 0.7;
        let k = &pred.cov * h.transpose() / s;
        let innov = 0.4 - (&h * &pred.mean)[0];
        let mean = &pred.mean + &k * innov;
        let cov = &pred.cov - &k * s * k.transpose();
        assert_abs_diff_eq!(post.mean, mean.column(0).into_owned(), epsilon = 1e-9);
        assert_abs_diff_eq!(post.cov, cov, epsilon = 1e-9);
    }

    #[test]
    fn vanishing_weight_keeps_prior() {
        let (pred, post) = scalar_problem(1e-9);
        assert_abs_diff_eq!(post.mean, pred.mean, epsilon = 1e-7);
        assert_abs_diff_eq!(post.cov, pred.cov, epsilon = 1e-7);
    }

    #[test]
    fn all_masked_returns_prior() {
        let pred = belief(&[1.0, -1.0], &[2.0, 0.5, 0.5, 1.5]);
        let suite = SensorSuite::new(vec![Sensor::range([3.0, 4.0], 1.0)], [0, 1]).unwrap();
        let sigma = sigma_points(&pred, 0.0).unwrap();
        let meas = MeasurementSigmas::propagate(&sigma, &suite);
        let post = serial_update(
            &pred,
            &sigma,
            &meas,
            &DVector::from_element(1, f64::NAN),
            &suite.noise_variances(),
            &DVector::from_element(1, 1.0),
            &[false],
        )
        .unwrap();
        assert_eq!(post, pred);
    }

    #[test]
    fn bearing_sigmas_unwrap_across_branch_cut() {
        // target due west of the sensor: bearings straddle ±π
        let pred = belief(&[-10.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let suite = SensorSuite::new(vec![Sensor::bearing([0.0, 0.0], 1e-4)], [0, 1]).unwrap();
        let sigma = sigma_points(&pred, 0.0).unwrap();
        let meas = MeasurementSigmas::propagate(&sigma, &suite);
        assert!((meas.predicted[0].abs() - std::f64::consts::PI).abs() < 0.01);
        let spread = meas.variances(&sigma.weights)[0];
        assert!(spread < 0.05, "spread {spread}");
    }

    #[test]
    fn negative_kappa_rejected_by_update() {
        let pred = belief(&[1.0, -1.0, 0.0, 0.0, 0.0], &{
            let mut c = [0.0; 25];
            for i in 0..5 {
                c[i * 6] = 1.0;
            }
            c
        });
        let suite = SensorSuite::new(vec![Sensor::range([3.0, 4.0], 1.0)], [0, 2]).unwrap();
        let sigma = sigma_points(&pred, -2.0).unwrap();
        let meas = MeasurementSigmas::propagate(&sigma, &suite);
        let res = serial_update(
            &pred,
            &sigma,
            &meas,
            &DVector::from_element(1, 3.0),
            &suite.noise_variances(),
            &DVector::from_element(1, 1.0),
            &[true],
        );
        assert!(matches!(res, Err(Error::Config(_))));
    }
}
