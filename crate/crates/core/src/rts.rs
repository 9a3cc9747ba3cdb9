//! Rauch-Tung-Striebel backward pass over a forward filter trace.

use log::debug;
use nalgebra::DMatrix;

use crate::diagnostics::nearest_pd;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, default_floor, symmetrize};
use crate::unscented::{FilterTrace, GaussianBelief};

/// `G = L (P⁻)⁻¹`, solved through a Cholesky factor of `P⁻` rather than an
/// explicit inverse.
pub fn smoother_gain(cross_cov: &DMatrix<f64>, predicted_cov_next: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = cholesky_with_jitter(predicted_cov_next)
        .ok_or_else(|| Error::Singular("predicted covariance in smoother gain".into()))?;
    // P⁻ Gᵀ = Lᵀ
    Ok(chol.solve(&cross_cov.transpose()).transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedStep {
    pub filtered: GaussianBelief,
    pub predicted: GaussianBelief,
    pub cross_cov: DMatrix<f64>,
    pub smoothed: GaussianBelief,
    /// `None` for the last step.
    pub gain: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SmootherTrace {
    pub steps: Vec<SmoothedStep>,
    /// Covariance projections applied in the forward and backward passes.
    pub repairs: usize,
}

impl SmootherTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn smoothed(&self) -> impl Iterator<Item = &GaussianBelief> {
        self.steps.iter().map(|s| &s.smoothed)
    }
}

/// Backward recursion
/// `x̂ˢ_k = x̂_k + G_k (x̂ˢ_{k+1} − x̂⁻_{k+1})`,
/// `P̂ˢ_k = P̂_k + G_k (P̂ˢ_{k+1} − P̂⁻_{k+1}) G_kᵀ`,
/// initialized with the last filtered belief. Every smoothed covariance is
/// symmetrized and projected onto the PD cone when an eigenvalue drops below
/// `1e-10·max(1, Tr/n)`.
pub fn backward_pass(trace: &FilterTrace) -> Result<SmootherTrace> {
    let t_len = trace.steps.len();
    let mut out = SmootherTrace {
        steps: Vec::with_capacity(t_len),
        repairs: trace.repairs,
    };
    if t_len == 0 {
        return Ok(out);
    }

    let mut smoothed: Vec<Option<(GaussianBelief, Option<DMatrix<f64>>)>> = vec![None; t_len];
    smoothed[t_len - 1] = Some((trace.steps[t_len - 1].filtered.clone(), None));

    for k in (0..t_len - 1).rev() {
        let next = &trace.steps[k + 1];
        let here = &trace.steps[k].filtered;
        let next_smoothed = &smoothed[k + 1].as_ref().expect("filled in reverse order").0;

        let gain = smoother_gain(&next.cross_cov, &next.predicted.cov)?;
        let mean = &here.mean + &gain * (&next_smoothed.mean - &next.predicted.mean);
        let cov = &here.cov + &gain * (&next_smoothed.cov - &next.predicted.cov) * gain.transpose();
        let mut cov = symmetrize(&cov);

        let floor = default_floor(&cov);
        if cov.clone().symmetric_eigenvalues().min() < floor {
            debug!("smoothed covariance at step {k} projected to PD");
            cov = nearest_pd(&cov, floor);
            out.repairs += 1;
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: k,
                reason: "non-finite smoothed state".into(),
            });
        }
        smoothed[k] = Some((GaussianBelief { mean, cov }, Some(gain)));
    }

    for (step, s) in trace.steps.iter().zip(smoothed) {
        let (smoothed, gain) = s.expect("all steps smoothed");
        out.steps.push(SmoothedStep {
            filtered: step.filtered.clone(),
            predicted: step.predicted.clone(),
            cross_cov: step.cross_cov.clone(),
            smoothed,
            gain,
        });
    }
    Ok(out)
}
