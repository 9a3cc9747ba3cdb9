//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vbsmooth::models::{DynamicsModel, Sensor, SensorSuite};
use vbsmooth::scenario::MeasurementSet;
use vbsmooth::GaussianBelief;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller, kept independent of the crate's sampler
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_spd(rng: &mut impl Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
    (&a * a.transpose()) * scale / n as f64 + DMatrix::identity(n, n) * (0.1 * scale)
}

/// Linear-Gaussian problem: `x_k = F x_{k−1} + q`, `y_k = H x_k + r`.
pub struct LinearProblem {
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: DVector<f64>,
    pub prior: GaussianBelief,
    pub ys: Vec<DVector<f64>>,
    pub truth: Vec<DVector<f64>>,
}

impl LinearProblem {
    pub fn two_state(steps: usize, seed: u64) -> Self {
        let mut g = rng(seed);
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 0.5, 0.5, 1.0]) * 0.1;
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        let r = DVector::from_vec(vec![0.5f64, 2.0]);
        let prior = GaussianBelief::new(DVector::from_vec(vec![0.0, 1.0]), DMatrix::identity(2, 2)).unwrap();
        let lq = q.clone().cholesky().unwrap().l();
        let mut x = DVector::from_vec(vec![0.3, 0.9]);
        let (mut ys, mut truth) = (vec![], vec![]);
        for _ in 0..steps {
            let z = DVector::from_fn(2, |_, _| normal(&mut g));
            x = &f * &x + &lq * z;
            let y = &h * &x + DVector::from_fn(2, |i, _| r[i].sqrt() * normal(&mut g));
            truth.push(x.clone());
            ys.push(y);
        }
        Self {
            f,
            q,
            h,
            r,
            prior,
            ys,
            truth,
        }
    }

    pub fn model(&self) -> DynamicsModel {
        DynamicsModel::linear(self.f.clone(), self.q.clone()).unwrap()
    }

    pub fn sensors(&self) -> SensorSuite {
        let rows = (0..self.h.nrows())
            .map(|i| Sensor::linear(self.h.row(i).iter().copied().collect(), self.r[i]))
            .collect();
        SensorSuite::new(rows, [0, 1]).unwrap()
    }

    pub fn data(&self) -> MeasurementSet {
        MeasurementSet::fully_observed(self.ys.clone(), self.sensors()).unwrap()
    }
}

pub struct KfStep {
    pub predicted: GaussianBelief,
    pub filtered: GaussianBelief,
}

/// Textbook Kalman filter with per-step measurement weights (effective noise
/// `R/w`).
pub fn kalman_filter(p: &LinearProblem, weights: Option<&[DVector<f64>]>) -> Vec<KfStep> {
    let mut x = p.prior.mean.clone();
    let mut cov = p.prior.cov.clone();
    let mut out = vec![];
    for (k, y) in p.ys.iter().enumerate() {
        let xp = &p.f * &x;
        let pp = &p.f * &cov * p.f.transpose() + &p.q;
        let mut r = DMatrix::from_diagonal(&p.r);
        if let Some(w) = weights {
            for i in 0..r.nrows() {
                r[(i, i)] /= w[k][i];
            }
        }
        let s = &p.h * &pp * p.h.transpose() + r;
        let gain = &pp * p.h.transpose() * s.clone().try_inverse().unwrap();
        x = &xp + &gain * (y - &p.h * &xp);
        cov = &pp - &gain * &s * gain.transpose();
        out.push(KfStep {
            predicted: GaussianBelief::new(xp, pp).unwrap(),
            filtered: GaussianBelief::new(x.clone(), cov.clone()).unwrap(),
        });
    }
    out
}

/// Closed-form RTS smoother over a Kalman trace, with explicit inverses.
pub fn rts_smoother(p: &LinearProblem, kf: &[KfStep]) -> Vec<GaussianBelief> {
    let t = kf.len();
    let mut out = vec![kf[t - 1].filtered.clone(); t];
    for k in (0..t - 1).rev() {
        let f = &kf[k].filtered;
        let pn = &kf[k + 1].predicted;
        let g = &f.cov * p.f.transpose() * pn.cov.clone().try_inverse().unwrap();
        let mean = &f.mean + &g * (&out[k + 1].mean - &pn.mean);
        let cov = &f.cov + &g * (&out[k + 1].cov - &pn.cov) * g.transpose();
        out[k] = GaussianBelief::new(mean, cov).unwrap();
    }
    out
}

/// Batch unscented update: `K = Pxy S⁻¹`, `S = Pyy + R·diag(w)⁻¹`.
pub fn batch_unscented_update(
    pred: &GaussianBelief,
    kappa: f64,
    h: impl Fn(&DVector<f64>) -> DVector<f64>,
    y: &DVector<f64>,
    r: &DVector<f64>,
    w: &DVector<f64>,
) -> GaussianBelief {
    let n = pred.mean.len();
    let lam = n as f64 + kappa;
    let l = pred.cov.clone().cholesky().unwrap().l() * lam.sqrt();
    let mut pts = vec![pred.mean.clone()];
    for i in 0..n {
        pts.push(&pred.mean + l.column(i));
    }
    for i in 0..n {
        pts.push(&pred.mean - l.column(i));
    }
    let mut wts = vec![0.5 / lam; 2 * n + 1];
    wts[0] = kappa / lam;
    let ys: Vec<DVector<f64>> = pts.iter().map(&h).collect();
    let m = y.len();
    let mut v = DVector::zeros(m);
    for (yi, wi) in ys.iter().zip(&wts) {
        v += yi * *wi;
    }
    let mut s = DMatrix::from_diagonal(&r.component_div(w));
    let mut pxy = DMatrix::zeros(n, m);
    for ((xi, yi), wi) in pts.iter().zip(&ys).zip(&wts) {
        let dy = yi - &v;
        s += &dy * dy.transpose() * *wi;
        pxy += (xi - &pred.mean) * dy.transpose() * *wi;
    }
    let gain = &pxy * s.clone().try_inverse().unwrap();
    GaussianBelief::new(&pred.mean + &gain * (y - v), &pred.cov - &gain * s * gain.transpose()).unwrap()
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Per-step objective maximized by the `b̂` update:
/// `Σᵢ (1−Ωᵢ)[a ln b − b α/βᵢ] + (A−1) ln b − B b`.
pub fn b_objective(b: f64, omega: &[f64], beta: &[f64], a: f64, alpha: f64, shape: f64, rate: f64) -> f64 {
    let data: f64 = omega
        .iter()
        .zip(beta)
        .map(|(o, bt)| (1.0 - o) * (a * b.ln() - b * alpha / bt))
        .sum();
    data + (shape - 1.0) * b.ln() - rate * b
}

/// Maximizer of `f` over the grid `{j·hi/n : j = 1..=n}`.
pub fn grid_argmax(f: impl Fn(f64) -> f64, hi: f64, n: usize) -> f64 {
    (1..=n)
        .map(|j| j as f64 * hi / n as f64)
        .map(|b| (b, f(b)))
        .fold(
            (f64::NAN, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
        .0
}

/// Largest change of `W` (relative), `Ω`, `b̂` (relative) and `⟨I⟩` when the
/// adaptive indicator update is recomputed from a converged outcome's final
/// trace.
pub fn fixed_point_residual(
    problem: &vbsmooth::SmoothingProblem,
    hp: &vbsmooth::VbHyperparams,
    out: &vbsmooth::VbOutcome,
) -> [f64; 4] {
    use vbsmooth::vb::{expected_sq_residual, indicator_expectation, omega, update_b};
    let (mut dw, mut dom, mut db, mut di) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (k, step) in out.trace.steps.iter().enumerate() {
        let mask = &problem.data.mask[k];
        let w = expected_sq_residual(
            &step.smoothed,
            &problem.data.values[k],
            &problem.data.sensors,
            mask,
            problem.kappa,
        )
        .unwrap();
        let b_old = out.indicators.b_hat[k];
        let (mut om_row, mut beta_row) = (vec![], vec![]);
        for i in (0..w.len()).filter(|&i| mask[i]) {
            let beta = 0.5 * w[i] + b_old;
            let o = omega(w[i], b_old, hp);
            let e = indicator_expectation(o, beta, hp);
            dw = dw.max((w[i] - out.indicators.w[k][i]).abs() / (1.0 + w[i]));
            dom = dom.max((o - out.indicators.omega[k][i]).abs());
            di = di.max((e - out.indicators.expect_i[k][i]).abs());
            om_row.push(o);
            beta_row.push(beta);
        }
        let b = update_b(&om_row, &beta_row, hp).unwrap();
        db = db.max((b - b_old).abs() / (1.0 + b_old));
    }
    [dw, dom, db, di]
}
