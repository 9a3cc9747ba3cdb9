//! Outlier-robust unscented Rauch-Tung-Striebel smoothing.
//!
//! The forward pass is a sigma-point Kalman filter that folds sensors in one
//! at a time, so each step costs time linear in the number of sensors. The
//! robust smoothers wrap the forward/backward pair in a variational-Bayes
//! loop that learns a weight for every individual reading.
//!
//! ```
//! use vbsmooth::bench::{ScenarioConfig, SimulatedRun};
//! use vbsmooth::vb::{run_asor, VbHyperparams};
//!
//! let cfg = ScenarioConfig { steps: 20, sensors: 4, ..Default::default() };
//! let sim = SimulatedRun::generate(&cfg, 0).unwrap();
//! let out = run_asor(&sim.problem(&cfg), &VbHyperparams::default()).unwrap();
//! assert_eq!(out.trace.len(), 20);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod models;
pub mod rts;
pub mod scenario;
pub mod unscented;
pub mod vb;

pub use bench::{rmse, RunResult, ScenarioConfig, SimulatedRun};
pub use diagnostics::{gaussian_kl, nearest_pd, pif, PifReport};
pub use error::{Error, Result};
pub use models::{DynamicsModel, Sensor, SensorKind, SensorSuite};
pub use rts::{backward_pass, SmootherTrace};
pub use scenario::{MeasurementSet, OutlierGroundTruth};
pub use unscented::{forward_pass, serial_update, sigma_points, GaussianBelief};
pub use vb::{run_method, IndicatorState, Method, SmoothingProblem, VbHyperparams, VbOutcome};
