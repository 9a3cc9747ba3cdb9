//! Dynamic and measurement models: the coordinated-turn tracking model, the
//! random-walk localization model, and range/bearing sensors.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `|ω·Δt|` the coordinated-turn matrix is evaluated with
/// its series limits.
pub const TURN_RATE_EPS: f64 = 1e-9;

/// Coordinated-turn state `[a, ȧ, b, ḃ, ω]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtState {
    pub a: f64,
    pub a_dot: f64,
    pub b: f64,
    pub b_dot: f64,
    pub omega: f64,
}

impl CtState {
    pub const DIM: usize = 5;

    pub fn new(a: f64, a_dot: f64, b: f64, b_dot: f64, omega: f64) -> Self {
        Self {
            a,
            a_dot,
            b,
            b_dot,
            omega,
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.a, self.a_dot, self.b, self.b_dot, self.omega])
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != Self::DIM {
            return Err(Error::Dimension(format!(
                "coordinated-turn state needs 5 entries, got {}",
                x.len()
            )));
        }
        Ok(Self::new(x[0], x[1], x[2], x[3], x[4]))
    }

    pub fn propagate(self, dt: f64) -> Self {
        let x = ct_transition(&self.to_vector(), dt);
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }
}

/// Coordinated-turn transition. The turn rate persists unchanged.
pub fn ct_transition(x: &DVector<f64>, dt: f64) -> DVector<f64> {
    debug_assert_eq!(x.len(), CtState::DIM);
    let (a, a_dot, b, b_dot, omega) = (x[0], x[1], x[2], x[3], x[4]);
    let wt = omega * dt;
    let (s, c) = wt.sin_cos();
    // sin(ωΔt)/ω and (1 - cos(ωΔt))/ω
    let (sin_over_w, one_minus_cos_over_w) = if wt.abs() < TURN_RATE_EPS {
        (dt, 0.0)
    } else {
        (s / omega, (1.0 - c) / omega)
    };
    DVector::from_vec(vec![
        a + sin_over_w * a_dot - one_minus_cos_over_w * b_dot,
        c * a_dot - s * b_dot,
        b + one_minus_cos_over_w * a_dot + sin_over_w * b_dot,
        s * a_dot + c * b_dot,
        omega,
    ])
}

/// Block-diagonal process noise `diag(η₁M, η₁M, η₂)` with
/// `M = [[Δt³/3, Δt²/2], [Δt²/2, Δt]]`.
pub fn ct_process_noise(dt: f64, eta1: f64, eta2: f64) -> DMatrix<f64> {
    let m11 = dt.powi(3) / 3.0;
    let m12 = dt.powi(2) / 2.0;
    let m22 = dt;
    let mut q = DMatrix::zeros(5, 5);
    for base in [0, 2] {
        q[(base, base)] = eta1 * m11;
        q[(base, base + 1)] = eta1 * m12;
        q[(base + 1, base)] = eta1 * m12;
        q[(base + 1, base + 1)] = eta1 * m22;
    }
    q[(4, 4)] = eta2;
    q
}

/// Euclidean distance between a target and a sensor in the plane.
pub fn range_measure(target: [f64; 2], sensor: [f64; 2]) -> f64 {
    range_measure_with_height(target, sensor, 0.0)
}

/// Range with a fixed vertical offset between tag and anchor folded in.
pub fn range_measure_with_height(target: [f64; 2], sensor: [f64; 2], z_offset: f64) -> f64 {
    let dx = target[0] - sensor[0];
    let dy = target[1] - sensor[1];
    (dx * dx + dy * dy + z_offset * z_offset).sqrt()
}

/// Four-quadrant bearing from the sensor to the target, in `(−π, π]`.
pub fn bearing_measure(target: [f64; 2], sensor: [f64; 2]) -> Result<f64> {
    let dx = target[0] - sensor[0];
    let dy = target[1] - sensor[1];
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "bearing undefined: target coincides with sensor at ({}, {})",
            sensor[0], sensor[1]
        )));
    }
    Ok(wrap_angle(dy.atan2(dx)))
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let y = (x + PI).rem_euclid(two_pi) - PI;
    if y <= -PI {
        y + two_pi
    } else {
        y
    }
}

/// Random-walk transition: the identity map.
pub fn rw_transition(x: &DVector<f64>) -> DVector<f64> {
    x.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transition {
    CoordinatedTurn,
    RandomWalk,
    /// `x_k = F x_{k−1}`; used for linear-Gaussian reference problems.
    Linear(DMatrix<f64>),
}

/// Process model `x_k = f(x_{k−1}) + q_{k−1}`, `q ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub transition: Transition,
    pub process_noise: DMatrix<f64>,
    pub dt: f64,
}

impl DynamicsModel {
    pub fn coordinated_turn(dt: f64, eta1: f64, eta2: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if eta1 < 0.0 || eta2 < 0.0 {
            return Err(Error::Config("process noise intensities must be non-negative".into()));
        }
        Ok(Self {
            transition: Transition::CoordinatedTurn,
            process_noise: ct_process_noise(dt, eta1, eta2),
            dt,
        })
    }

    /// Random walk in `dim` dimensions with diagonal process variance `q`.
    pub fn random_walk(dim: usize, q: f64) -> Result<Self> {
        if q < 0.0 {
            return Err(Error::Config(format!(
                "random-walk variance must be non-negative, got {q}"
            )));
        }
        Ok(Self {
            transition: Transition::RandomWalk,
            process_noise: DMatrix::from_diagonal_element(dim, dim, q),
            dt: 1.0,
        })
    }

    pub fn linear(f: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !f.is_square() || f.shape() != q.shape() {
            return Err(Error::Dimension(format!(
                "transition {:?} and process noise {:?} must be square and equal",
                f.shape(),
                q.shape()
            )));
        }
        Ok(Self {
            transition: Transition::Linear(f),
            process_noise: q,
            dt: 1.0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.process_noise.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.transition {
            Transition::CoordinatedTurn => ct_transition(x, self.dt),
            Transition::RandomWalk => rw_transition(x),
            Transition::Linear(f) => f * x,
        }
    }

    /// Indices of the planar position inside the state vector.
    pub fn position_index(&self) -> [usize; 2] {
        match self.transition {
            Transition::CoordinatedTurn => [0, 2],
            _ => [0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensorKind {
    Range {
        position: [f64; 2],
        z_offset: f64,
    },
    Bearing {
        position: [f64; 2],
    },
    /// `h(x) = cᵀx`.
    Linear {
        coeffs: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    #[serde(flatten)]
    pub kind: SensorKind,
    pub noise_variance: f64,
}

impl Sensor {
    pub fn range(position: [f64; 2], noise_variance: f64) -> Self {
        Self {
            kind: SensorKind::Range {
                position,
                z_offset: 0.0,
            },
            noise_variance,
        }
    }

    pub fn bearing(position: [f64; 2], noise_variance: f64) -> Self {
        Self {
            kind: SensorKind::Bearing { position },
            noise_variance,
        }
    }

    pub fn linear(coeffs: Vec<f64>, noise_variance: f64) -> Self {
        Self {
            kind: SensorKind::Linear { coeffs },
            noise_variance,
        }
    }

    pub fn is_angular(&self) -> bool {
        matches!(self.kind, SensorKind::Bearing { .. })
    }

    /// Noise-free measurement of state `x`. Bearings of a target sitting
    /// exactly on the sensor evaluate to 0 here; use [`bearing_measure`] where
    /// that case must be rejected.
    pub fn evaluate(&self, x: &DVector<f64>, position_index: [usize; 2]) -> f64 {
        let p = [x[position_index[0]], x[position_index[1]]];
        match &self.kind {
            SensorKind::Range { position, z_offset } => range_measure_with_height(p, *position, *z_offset),
            SensorKind::Bearing { position } => (p[1] - position[1]).atan2(p[0] - position[0]),
            SensorKind::Linear { coeffs } => coeffs.iter().zip(x.iter()).map(|(c, v)| c * v).sum(),
        }
    }
}

/// Ordered sensor list defining `h` and the diagonal of `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSuite {
    pub sensors: Vec<Sensor>,
    pub position_index: [usize; 2],
}

impl SensorSuite {
    pub fn new(sensors: Vec<Sensor>, position_index: [usize; 2]) -> Result<Self> {
        let suite = Self {
            sensors,
            position_index,
        };
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.sensors.iter().enumerate() {
            if !(s.noise_variance > 0.0) || !s.noise_variance.is_finite() {
                return Err(Error::Config(format!(
                    "sensor {i}: noise variance must be positive, got {}",
                    s.noise_variance
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn noise_variances(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.sensors.iter().map(|s| s.noise_variance))
    }

    pub fn angular_flags(&self) -> Vec<bool> {
        self.sensors.iter().map(Sensor::is_angular).collect()
    }

    pub fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.sensors.iter().map(|s| s.evaluate(x, self.position_index)),
        )
    }

    /// Measurement residual `y − h` with angular components wrapped.
    pub fn residual(&self, y: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.sensors.iter().enumerate().map(|(i, s)| {
                let r = y[i] - predicted[i];
                if s.is_angular() {
                    wrap_angle(r)
                } else {
                    r
                }
            }),
        )
    }
}
