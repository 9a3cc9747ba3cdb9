//! Scenario configuration, Monte Carlo orchestration, metrics, timing and
//! report files.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::models::DynamicsModel;
use crate::scenario::{
    build_sensor_grid, derive_seed, rng_for, simulate_measurements, simulate_trajectory, simulate_uwb_scenario,
    MeasurementSet, OutlierGroundTruth, UwbScenario,
};
use crate::unscented::GaussianBelief;
use crate::vb::{run_method, Method, SmoothingProblem, VbHyperparams, VbOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Coordinated-turn target observed by the range/bearing grid.
    CoordinatedTurn,
    /// Random-walk tag observed by the synthetic UWB anchor network.
    RandomWalk,
}

/// Parameter lists for the sweep experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiments {
    pub lambdas: Vec<f64>,
    pub sensor_counts: Vec<usize>,
    /// Timed repetitions per (method, m) cell; the median is kept.
    pub timing_repeats: usize,
    /// Datasets averaged per timing cell.
    pub timing_runs: usize,
    pub pif_scales: Vec<f64>,
    pub imq_steps: usize,
}

impl Default for Experiments {
    fn default() -> Self {
        Self {
            lambdas: vec![0.2, 0.4, 0.6],
            sensor_counts: vec![50, 100, 150, 200],
            timing_repeats: 3,
            timing_runs: 10,
            pif_scales: [10.0f64, 100.0, 1000.0, 10000.0].iter().map(|v| v.sqrt()).collect(),
            imq_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    /// Horizon `T`.
    pub steps: usize,
    /// Sensor count `m` of the range/bearing grid (even).
    pub sensors: usize,
    pub dt: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Initial covariance is `ϑ·Q`.
    pub vartheta: f64,
    pub x0_mean: Vec<f64>,
    /// Per-reading outlier probability `λ`.
    pub lambda: f64,
    /// Outlier scale `ς` relative to the nominal noise.
    pub sigma_factor: f64,
    pub kappa: f64,
    pub hp: VbHyperparams,
    pub methods: Vec<Method>,
    pub runs: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub experiments: Experiments,
    pub uwb: UwbScenario,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::CoordinatedTurn,
            steps: 100,
            sensors: 50,
            dt: 1.0,
            eta1: 0.1,
            eta2: 1.75e-4,
            vartheta: 10.0,
            x0_mean: vec![0.0, 10.0, 0.0, -5.0, PI / 180.0],
            lambda: 0.4,
            sigma_factor: 1000f64.sqrt(),
            kappa: 0.0,
            hp: VbHyperparams::default(),
            methods: vec![Method::Ideal, Method::Asor, Method::Sor, Method::Ror],
            runs: 50,
            seed: 0,
            output: PathBuf::from("out"),
            experiments: Experiments::default(),
            uwb: UwbScenario::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.dt > 0.0) || self.eta1 < 0.0 || self.eta2 < 0.0 || self.vartheta < 0.0 {
            return bad("dt must be positive and eta1, eta2, vartheta non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) || !(self.sigma_factor >= 0.0) {
            return bad("lambda must lie in [0, 1] and sigma_factor be non-negative".into());
        }
        if self.model == ModelKind::CoordinatedTurn {
            if self.x0_mean.len() != 5 {
                return bad(format!("x0_mean needs 5 entries, got {}", self.x0_mean.len()));
            }
            build_sensor_grid(self.sensors)?;
        } else {
            self.uwb.validate()?;
        }
        if !(self.kappa >= 0.0) {
            return bad("kappa must be non-negative".into());
        }
        self.hp.validate()
    }

    pub fn dynamics(&self) -> Result<DynamicsModel> {
        match self.model {
            ModelKind::CoordinatedTurn => DynamicsModel::coordinated_turn(self.dt, self.eta1, self.eta2),
            ModelKind::RandomWalk => DynamicsModel::random_walk(2, self.uwb.process_variance),
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, run as u64)
    }
}

/// One Monte Carlo dataset: truth, contaminated measurements and the
/// estimator's prior, all derived from `(config.seed, run)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRun {
    pub run: usize,
    pub model: DynamicsModel,
    /// True states at the measurement times.
    pub truth: Vec<DVector<f64>>,
    pub data: MeasurementSet,
    pub outliers: OutlierGroundTruth,
    pub prior: GaussianBelief,
}

impl SimulatedRun {
    pub fn generate(config: &ScenarioConfig, run: usize) -> Result<Self> {
        let seed = config.run_seed(run);
        let model = config.dynamics()?;
        let p0 = &model.process_noise * config.vartheta;
        match config.model {
            ModelKind::CoordinatedTurn => {
                let mean = DVector::from_column_slice(&config.x0_mean);
                let traj = simulate_trajectory(&model, &mean, &p0, config.steps, seed)?;
                let grid = build_sensor_grid(config.sensors)?;
                let (data, outliers) =
                    simulate_measurements(&traj.states, &grid, config.lambda, config.sigma_factor, seed)?;
                Ok(Self {
                    run,
                    prior: GaussianBelief::new(mean, p0)?,
                    model,
                    truth: traj.states,
                    data,
                    outliers,
                })
            }
            ModelKind::RandomWalk => {
                let (ds, outliers) = simulate_uwb_scenario(&config.uwb, config.steps, seed)?;
                let path = ds.truth.expect("synthetic data has truth");
                let truth: Vec<DVector<f64>> = path.iter().map(|p| DVector::from_column_slice(p)).collect();
                let root = psd_sqrt(&p0).ok_or_else(|| Error::NotPositiveDefinite("initial covariance".into()))?;
                let mut rng = rng_for(seed, 4);
                let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mean = &truth[0] + root * z;
                Ok(Self {
                    run,
                    prior: GaussianBelief::new(mean, p0)?,
                    model,
                    truth,
                    data: ds.measurements,
                    outliers,
                })
            }
        }
    }

    pub fn problem(&self, config: &ScenarioConfig) -> SmoothingProblem {
        SmoothingProblem {
            model: self.model.clone(),
            data: self.data.clone(),
            prior: self.prior.clone(),
            kappa: config.kappa,
        }
    }
}

/// Position RMSE `√(mean_k ‖pos(x̂_k) − pos(x_k)‖²)`.
pub fn rmse(estimates: &[DVector<f64>], truth: &[DVector<f64>], position_index: [usize; 2]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} true states",
            estimates.len(),
            truth.len()
        )));
    }
    if estimates.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| position_index.iter().map(|&i| (e[i] - t[i]).powi(2)).sum::<f64>())
        .sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub run: usize,
    /// `None` when the run diverged.
    pub rmse: Option<f64>,
    /// Seconds.
    pub wall_time: f64,
    pub iterations: usize,
    pub diverged: bool,
}

/// Smoothed positions of every method for one run, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrajectory {
    pub run: usize,
    pub times: Vec<f64>,
    pub truth: Vec<[f64; 2]>,
    pub estimates: Vec<(Method, Option<Vec<[f64; 2]>>)>,
}

fn positions(states: &[DVector<f64>], idx: [usize; 2]) -> Vec<[f64; 2]> {
    states.iter().map(|x| [x[idx[0]], x[idx[1]]]).collect()
}

/// Runs one method on one dataset. Numerical failures become a diverged
/// result; configuration errors propagate.
pub fn evaluate_method(
    method: Method,
    sim: &SimulatedRun,
    config: &ScenarioConfig,
) -> Result<(RunResult, Option<VbOutcome>)> {
    let problem = sim.problem(config);
    let start = Instant::now();
    let outcome = run_method(method, &problem, &config.hp, Some(&sim.outliers));
    let wall_time = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    match outcome {
        Ok(out) => {
            let value = rmse(&out.smoothed_means(), &sim.truth, sim.model.position_index())?;
            let diverged = !value.is_finite();
            Ok((
                RunResult {
                    method,
                    run: sim.run,
                    rmse: (!diverged).then_some(value),
                    wall_time,
                    iterations: out.iterations,
                    diverged,
                },
                Some(out),
            ))
        }
        Err(e) if e.is_config() => Err(e),
        Err(e) => {
            warn!("run {} {method}: {e}", sim.run);
            Ok((
                RunResult {
                    method,
                    run: sim.run,
                    rmse: None,
                    wall_time,
                    iterations: 0,
                    diverged: true,
                },
                None,
            ))
        }
    }
}

/// Monte Carlo over `config.runs` datasets; every method sees the same data.
/// Results are ordered by run, then by the configured method order.
pub fn run_monte_carlo_detailed(config: &ScenarioConfig) -> Result<(Vec<RunResult>, Vec<RunTrajectory>)> {
    config.validate()?;
    let per_run: Vec<Result<(Vec<RunResult>, RunTrajectory)>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let sim = SimulatedRun::generate(config, run)?;
            let idx = sim.model.position_index();
            let mut results = vec![];
            let mut estimates = vec![];
            for &method in &config.methods {
                let (res, out) = evaluate_method(method, &sim, config)?;
                estimates.push((method, out.map(|o| positions(&o.smoothed_means(), idx))));
                results.push(res);
            }
            Ok((
                results,
                RunTrajectory {
                    run,
                    times: sim.data.times.clone(),
                    truth: positions(&sim.truth, idx),
                    estimates,
                },
            ))
        })
        .collect();
    let mut results = vec![];
    let mut trajectories = vec![];
    for r in per_run {
        let (res, traj) = r?;
        results.extend(res);
        trajectories.push(traj);
    }
    Ok((results, trajectories))
}

pub fn run_monte_carlo(config: &ScenarioConfig) -> Result<Vec<RunResult>> {
    run_monte_carlo_detailed(config).map(|(r, _)| r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub diverged: usize,
    /// Over non-diverged runs; `None` if there are none.
    pub mean_rmse: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two runs.
    pub std_rmse: Option<f64>,
    pub mean_wall_time: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub methods: Vec<MethodSummary>,
}

impl Summary {
    pub fn get(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn mean_rmse(&self, method: Method) -> Option<f64> {
        self.get(method).and_then(|m| m.mean_rmse)
    }
}

/// Aggregates per method, in first-seen order.
pub fn summarize(results: &[RunResult]) -> Summary {
    let mut order: Vec<Method> = vec![];
    for r in results {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    let methods = order
        .into_iter()
        .map(|method| {
            let rows: Vec<&RunResult> = results.iter().filter(|r| r.method == method).collect();
            let ok: Vec<f64> = rows.iter().filter_map(|r| r.rmse).collect();
            let n = ok.len();
            let mean = (n > 0).then(|| ok.iter().sum::<f64>() / n as f64);
            let std = mean
                .filter(|_| n > 1)
                .map(|mu| (ok.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
            MethodSummary {
                method,
                runs: rows.len(),
                diverged: rows.iter().filter(|r| r.diverged).count(),
                mean_rmse: mean,
                std_rmse: std,
                mean_wall_time: rows.iter().map(|r| r.wall_time).sum::<f64>() / rows.len() as f64,
                mean_iterations: rows.iter().map(|r| r.iterations as f64).sum::<f64>() / rows.len() as f64,
            }
        })
        .collect();
    Summary { methods }
}

pub const RUNS_HEADER: &str = "method,run,rmse,wall_time,iterations,diverged";

pub fn write_runs_csv(results: &[RunResult], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "{RUNS_HEADER}").map_err(io)?;
    for r in results {
        let rmse = r.rmse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.method, r.run, rmse, r.wall_time, r.iterations, r.diverged
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunResult>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = vec![];
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: format!("bad {what}"),
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        out.push(RunResult {
            method: field(0).parse()?,
            run: field(1).parse().map_err(|_| parse_err("run"))?,
            rmse: match field(2) {
                "" => None,
                s => Some(s.parse().map_err(|_| parse_err("rmse"))?),
            },
            wall_time: field(3).parse().map_err(|_| parse_err("wall_time"))?,
            iterations: field(4).parse().map_err(|_| parse_err("iterations"))?,
            diverged: field(5).parse().map_err(|_| parse_err("diverged"))?,
        });
    }
    Ok(out)
}

fn write_trajectory_csv(traj: &RunTrajectory, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    let mut header = String::from("t,truth_x,truth_y");
    for (m, _) in &traj.estimates {
        header.push_str(&format!(",{m}_x,{m}_y"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for (k, t) in traj.times.iter().enumerate() {
        let mut line = format!("{t},{},{}", traj.truth[k][0], traj.truth[k][1]);
        for (_, est) in &traj.estimates {
            match est {
                Some(e) => line.push_str(&format!(",{},{}", e[k][0], e[k][1])),
                None => line.push_str(",,"),
            }
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `runs.csv`, `summary.json` and one `trajectory_<run>.csv` per
/// entry of `trajectories` into `out_dir`.
pub fn emit_reports(results: &[RunResult], trajectories: &[RunTrajectory], out_dir: &Path) -> Result<Summary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_runs_csv(results, &out_dir.join("runs.csv"))?;
    let summary = summarize(results);
    write_json(&summary, &out_dir.join("summary.json"))?;
    for t in trajectories {
        write_trajectory_csv(t, &out_dir.join(format!("trajectory_{}.csv", t.run)))?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCell {
    pub method: Method,
    pub sensors: usize,
    /// Median over datasets of the median over repetitions (seconds).
    pub wall_time: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFit {
    pub method: Method,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub cells: Vec<TimingCell>,
    pub fits: Vec<TimingFit>,
}

/// Ordinary least squares `y = intercept + slope·x` with its R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Single-threaded wall time of each configured method versus sensor count,
/// with a log-log fit per method.
///
/// Cells are timed interleaved (every sensor count and method back to back
/// for each dataset and repetition) so that slow periods of the host hit all
/// cells alike. An untimed pass over everything comes first.
pub fn timing_sweep(config: &ScenarioConfig, m_values: &[usize]) -> Result<TimingReport> {
    config.validate()?;
    if m_values.len() < 2 {
        return Err(Error::Config("timing sweep needs at least two sensor counts".into()));
    }
    let reps = config.experiments.timing_repeats.max(1);
    let datasets = config.experiments.timing_runs.max(1);
    let configs: Vec<ScenarioConfig> = m_values
        .iter()
        .map(|&m| ScenarioConfig {
            sensors: m,
            ..config.clone()
        })
        .collect();
    let sims = configs
        .iter()
        .map(|cfg| (0..datasets).map(|run| SimulatedRun::generate(cfg, run)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;

    for (cfg, per_m) in configs.iter().zip(&sims) {
        for sim in per_m {
            for &method in &config.methods {
                evaluate_method(method, sim, cfg)?;
            }
        }
    }

    // times[method][m][dataset] holds one entry per repetition
    let n_methods = config.methods.len();
    let mut times = vec![vec![vec![vec![]; datasets]; m_values.len()]; n_methods];
    let mut iters = vec![vec![0.0; m_values.len()]; n_methods];
    for d in 0..datasets {
        for _ in 0..reps {
            for (j, cfg) in configs.iter().enumerate() {
                for (i, &method) in config.methods.iter().enumerate() {
                    let (res, _) = evaluate_method(method, &sims[j][d], cfg)?;
                    times[i][j][d].push(res.wall_time);
                    iters[i][j] += res.iterations as f64 / (reps * datasets) as f64;
                }
            }
        }
    }

    let mut cells = vec![];
    for (j, &m) in m_values.iter().enumerate() {
        for (i, &method) in config.methods.iter().enumerate() {
            let mut per_dataset: Vec<f64> = times[i][j]
                .iter_mut()
                .map(|reps| crate::diagnostics::median(reps))
                .collect();
            cells.push(TimingCell {
                method,
                sensors: m,
                wall_time: crate::diagnostics::median(&mut per_dataset),
                mean_iterations: iters[i][j],
            });
        }
    }
    let fits = config
        .methods
        .iter()
        .map(|&method| {
            let (x, y): (Vec<f64>, Vec<f64>) = cells
                .iter()
                .filter(|c| c.method == method)
                .map(|c| ((c.sensors as f64).ln(), c.wall_time.ln()))
                .unzip();
            let (slope, intercept, r_squared) = linear_fit(&x, &y);
            TimingFit {
                method,
                slope,
                intercept,
                r_squared,
            }
        })
        .collect();
    Ok(TimingReport { cells, fits })
}

/// Summary of one point of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: String,
    pub value: f64,
    pub summary: Summary,
}

/// Monte Carlo at each `λ` in `lambdas`.
pub fn lambda_sweep(config: &ScenarioConfig, lambdas: &[f64]) -> Result<Vec<(SweepPoint, Vec<RunResult>)>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = ScenarioConfig {
                lambda,
                ..config.clone()
            };
            let results = run_monte_carlo(&cfg)?;
            Ok((
                SweepPoint {
                    parameter: "lambda".into(),
                    value: lambda,
                    summary: summarize(&results),
                },
                results,
            ))
        })
        .collect()
}

/// Monte Carlo at each sensor count in `counts`.
pub fn sensor_sweep(config: &ScenarioConfig, counts: &[usize]) -> Result<Vec<(SweepPoint, Vec<RunResult>)>> {
    counts
        .iter()
        .map(|&sensors| {
            let cfg = ScenarioConfig {
                sensors,
                ..config.clone()
            };
            let results = run_monte_carlo(&cfg)?;
            Ok((
                SweepPoint {
                    parameter: "sensors".into(),
                    value: sensors as f64,
                    summary: summarize(&results),
                },
                results,
            ))
        })
        .collect()
}
