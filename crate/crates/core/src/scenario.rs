//! Ground-truth trajectories, contaminated multi-sensor measurements, the
//! range/bearing sensor grid and the UWB range-log interchange format.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::models::{wrap_angle, DynamicsModel, Sensor, SensorKind, SensorSuite};

pub const RANGE_VARIANCE: f64 = 10.0;
pub const GRID_SPACING: f64 = 350.0;

pub fn bearing_variance() -> f64 {
    (0.2 * PI / 180.0).powi(2)
}

/// Deterministic generator for a `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Time-indexed measurement vectors with per-sensor availability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub times: Vec<f64>,
    /// One vector per step; entries where the mask is false are 0 and unused.
    pub values: Vec<DVector<f64>>,
    /// `true` where a reading is present.
    pub mask: Vec<Vec<bool>>,
    pub sensors: SensorSuite,
}

impl MeasurementSet {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>, mask: Vec<Vec<bool>>, sensors: SensorSuite) -> Result<Self> {
        let set = Self {
            times,
            values,
            mask,
            sensors,
        };
        set.validate()?;
        Ok(set)
    }

    /// All readings present.
    pub fn fully_observed(values: Vec<DVector<f64>>, sensors: SensorSuite) -> Result<Self> {
        let t = values.len();
        let m = sensors.len();
        Self::new(
            (1..=t).map(|k| k as f64).collect(),
            values,
            vec![vec![true; m]; t],
            sensors,
        )
    }

    pub fn empty(sensors: SensorSuite) -> Self {
        Self {
            times: vec![],
            values: vec![],
            mask: vec![],
            sensors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.times.len();
        let m = self.sensors.len();
        if self.values.len() != t || self.mask.len() != t {
            return Err(Error::Dimension(format!(
                "{t} times, {} value rows, {} mask rows",
                self.values.len(),
                self.mask.len()
            )));
        }
        for (k, (v, mk)) in self.values.iter().zip(&self.mask).enumerate() {
            if v.len() != m || mk.len() != m {
                return Err(Error::Dimension(format!("step {k}: expected {m} sensors")));
            }
            if let Some(i) = (0..m).find(|&i| mk[i] && !v[i].is_finite()) {
                return Err(Error::Config(format!("step {k}, sensor {i}: non-finite reading")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    /// Copy with the measurement vector at step `k` replaced.
    pub fn with_step_replaced(&self, k: usize, y: DVector<f64>) -> Result<Self> {
        if k >= self.len() || y.len() != self.sensor_count() {
            return Err(Error::Dimension(format!(
                "cannot replace step {k} of {} with a {}-vector",
                self.len(),
                y.len()
            )));
        }
        let mut out = self.clone();
        out.values[k] = y;
        Ok(out)
    }

    /// Copy with the given entries hidden (mask set to false).
    pub fn without(&self, hide: &[Vec<bool>]) -> Self {
        let mut out = self.clone();
        for (row, h) in out.mask.iter_mut().zip(hide) {
            for (present, hidden) in row.iter_mut().zip(h) {
                *present &= !hidden;
            }
        }
        out
    }
}

/// Which readings were contaminated and by how much.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierGroundTruth {
    pub mask: Vec<Vec<bool>>,
    pub magnitudes: Vec<DVector<f64>>,
}

impl OutlierGroundTruth {
    pub fn none(steps: usize, sensors: usize) -> Self {
        Self {
            mask: vec![vec![false; sensors]; steps],
            magnitudes: vec![DVector::zeros(sensors); steps],
        }
    }

    pub fn contamination_fraction(&self) -> f64 {
        let total: usize = self.mask.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        let hit: usize = self.mask.iter().flatten().filter(|b| **b).count();
        hit as f64 / total as f64
    }

    /// Subtracts the injected magnitudes, recovering the nominal readings.
    pub fn remove_from(&self, data: &MeasurementSet) -> MeasurementSet {
        let mut out = data.clone();
        let angular = data.sensors.angular_flags();
        for (k, row) in out.values.iter_mut().enumerate() {
            for i in 0..row.len() {
                if self.mask[k][i] {
                    let v = row[i] - self.magnitudes[k][i];
                    row[i] = if angular[i] { wrap_angle(v) } else { v };
                }
            }
        }
        out
    }
}

/// `m/2` bearing sensors at `(350(j−1), 350(j mod 2))` followed by `m/2`
/// range sensors at `(350(j−1), 350((j+1) mod 2))`, `j = 1…m/2`.
pub fn build_sensor_grid(m: usize) -> Result<SensorSuite> {
    if m < 2 || !m.is_multiple_of(2) {
        return Err(Error::Config(format!("sensor count must be even and >= 2, got {m}")));
    }
    let half = m / 2;
    let bearings = (1..=half).map(|j| {
        Sensor::bearing(
            [GRID_SPACING * (j - 1) as f64, GRID_SPACING * (j % 2) as f64],
            bearing_variance(),
        )
    });
    let ranges = (1..=half).map(|j| {
        Sensor::range(
            [GRID_SPACING * (j - 1) as f64, GRID_SPACING * ((j + 1) % 2) as f64],
            RANGE_VARIANCE,
        )
    });
    SensorSuite::new(bearings.chain(ranges).collect(), [0, 2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: DVector<f64>,
    /// States at steps `1..=T`.
    pub states: Vec<DVector<f64>>,
}

fn sample_gaussian(rng: &mut impl Rng, mean: &DVector<f64>, root: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| standard_normal(rng));
    mean + root * z
}

/// `x₀ ~ N(mean, cov)`, `x_k = f(x_{k−1}) + q_k` with `q_k ~ N(0, Q)`.
pub fn simulate_trajectory(
    model: &DynamicsModel,
    x0_mean: &DVector<f64>,
    x0_cov: &DMatrix<f64>,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let n = model.state_dim();
    if x0_mean.len() != n || x0_cov.shape() != (n, n) {
        return Err(Error::Dimension(format!("initial state must have dimension {n}")));
    }
    let mut rng = rng_for(seed, 0);
    let x0_root = psd_sqrt(x0_cov).ok_or_else(|| Error::NotPositiveDefinite("initial covariance".into()))?;
    let q_root = psd_sqrt(&model.process_noise).ok_or_else(|| Error::NotPositiveDefinite("process noise".into()))?;
    let zero = DVector::zeros(n);

    let initial = sample_gaussian(&mut rng, x0_mean, &x0_root);
    let mut states = Vec::with_capacity(steps);
    let mut x = initial.clone();
    for _ in 0..steps {
        x = model.apply(&x) + sample_gaussian(&mut rng, &zero, &q_root);
        states.push(x.clone());
    }
    Ok(Trajectory { initial, states })
}

/// `y = h(x) + r + Λ·o` with `r ~ N(0, Rᵢᵢ)`, `Λ ~ Bernoulli(λ)` and
/// `o = ς·(independent draw of the nominal noise)`.
pub fn simulate_measurements(
    states: &[DVector<f64>],
    sensors: &SensorSuite,
    lambda: f64,
    sigma_factor: f64,
    seed: u64,
) -> Result<(MeasurementSet, OutlierGroundTruth)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "outlier probability must lie in [0, 1], got {lambda}"
        )));
    }
    if !(sigma_factor >= 0.0) {
        return Err(Error::Config(format!(
            "outlier scale must be non-negative, got {sigma_factor}"
        )));
    }
    let mut rng = rng_for(seed, 1);
    let m = sensors.len();
    let angular = sensors.angular_flags();
    let mut values = Vec::with_capacity(states.len());
    let mut truth = OutlierGroundTruth::none(states.len(), m);
    for (k, x) in states.iter().enumerate() {
        let clean = sensors.measure(x);
        let mut y = DVector::zeros(m);
        for i in 0..m {
            let sd = sensors.sensors[i].noise_variance.sqrt();
            let r = sd * standard_normal(&mut rng);
            let hit = rng.random_bool(lambda);
            let o = sigma_factor * sd * standard_normal(&mut rng);
            let mut v = clean[i] + r;
            if hit {
                v += o;
                truth.mask[k][i] = true;
                truth.magnitudes[k][i] = o;
            }
            y[i] = if angular[i] { wrap_angle(v) } else { v };
        }
        values.push(y);
    }
    Ok((MeasurementSet::fully_observed(values, sensors.clone())?, truth))
}

// ---------------------------------------------------------------------------
// UWB range logs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub anchor_id: String,
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UwbOptions {
    /// Nominal range variance in m².
    pub range_variance: f64,
    /// Tag height; each anchor's vertical offset is `z_m − tag_height`.
    pub tag_height: f64,
}

impl Default for UwbOptions {
    fn default() -> Self {
        Self {
            range_variance: 0.1,
            tag_height: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UwbDataset {
    pub measurements: MeasurementSet,
    pub anchors: Vec<Anchor>,
    /// Ground-truth positions aligned with `measurements.times`.
    pub truth: Option<Vec<[f64; 2]>>,
}

pub const RANGES_FILE: &str = "ranges.csv";
pub const ANCHORS_FILE: &str = "anchors.csv";
pub const TRUTH_FILE: &str = "truth.csv";

fn anchor_suite(anchors: &[Anchor], opts: &UwbOptions) -> Result<SensorSuite> {
    SensorSuite::new(
        anchors
            .iter()
            .map(|a| Sensor {
                kind: SensorKind::Range {
                    position: [a.x_m, a.y_m],
                    z_offset: a.z_m - opts.tag_height,
                },
                noise_variance: opts.range_variance,
            })
            .collect(),
        [0, 1],
    )
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<Option<csv::Reader<fs::File>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.is_empty() {
        return Ok(None);
    }
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(Some(reader))
}

fn parse_field(path: &Path, line: usize, name: &str, raw: Option<&str>) -> Result<f64> {
    let raw = raw.map(str::trim).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: format!("missing field `{name}`"),
    })?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: format!("field `{name}`: `{raw}` is not a finite number"),
        })
}

fn record_line(path: &Path, rec: &std::result::Result<csv::StringRecord, csv::Error>) -> Result<usize> {
    match rec {
        Ok(r) => Ok(r.position().map(|p| p.line() as usize).unwrap_or(0)),
        Err(e) => {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                reason: e.to_string(),
            })
        }
    }
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let Some(mut reader) = open_csv(path, header)? else {
        return Ok(vec![]);
    };
    let mut rows = vec![];
    for rec in reader.records() {
        let line = record_line(path, &rec)?;
        let rec = rec.expect("checked above");
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

pub fn read_anchors(path: &Path) -> Result<Vec<Anchor>> {
    read_rows(path, &["anchor_id", "x_m", "y_m", "z_m"])?
        .into_iter()
        .map(|(line, rec)| {
            Ok(Anchor {
                anchor_id: rec[0].trim().to_string(),
                x_m: parse_field(path, line, "x_m", rec.get(1))?,
                y_m: parse_field(path, line, "y_m", rec.get(2))?,
                z_m: parse_field(path, line, "z_m", rec.get(3))?,
            })
        })
        .collect()
}

/// Loads `ranges` with its sibling `anchors.csv` and, if present,
/// `truth.csv`, using the default options.
pub fn load_uwb_csv(ranges: &Path) -> Result<UwbDataset> {
    let dir = ranges.parent().unwrap_or_else(|| Path::new("."));
    let truth = dir.join(TRUTH_FILE);
    load_uwb(
        ranges,
        &dir.join(ANCHORS_FILE),
        truth.exists().then_some(truth.as_path()),
        &UwbOptions::default(),
    )
}

/// Readings absent from the log become masked entries. The time axis is the
/// sorted union of the range and truth timestamps.
pub fn load_uwb(
    ranges: &Path,
    anchors_path: &Path,
    truth_path: Option<&Path>,
    opts: &UwbOptions,
) -> Result<UwbDataset> {
    let anchors = read_anchors(anchors_path)?;
    let index: HashMap<&str, usize> = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| (a.anchor_id.as_str(), i))
        .collect();
    if index.len() != anchors.len() {
        return Err(Error::Config(format!(
            "{}: duplicate anchor id",
            anchors_path.display()
        )));
    }
    let sensors = anchor_suite(&anchors, opts)?;

    let mut readings = vec![];
    for (line, rec) in read_rows(ranges, &["t", "anchor_id", "range_m"])? {
        let t = parse_field(ranges, line, "t", rec.get(0))?;
        let id = rec[1].trim();
        let &i = index.get(id).ok_or_else(|| Error::Parse {
            path: ranges.to_path_buf(),
            line,
            reason: format!("unknown anchor id `{id}`"),
        })?;
        let r = parse_field(ranges, line, "range_m", rec.get(2))?;
        readings.push((line, t, i, r));
    }

    let mut truth_rows = vec![];
    if let Some(p) = truth_path {
        for (line, rec) in read_rows(p, &["t", "x_m", "y_m"])? {
            truth_rows.push((
                parse_field(p, line, "t", rec.get(0))?,
                [
                    parse_field(p, line, "x_m", rec.get(1))?,
                    parse_field(p, line, "y_m", rec.get(2))?,
                ],
            ));
        }
    }

    let mut times: Vec<f64> = readings
        .iter()
        .map(|r| r.1)
        .chain(truth_rows.iter().map(|r| r.0))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let slot = |t: f64| times.binary_search_by(|p| p.total_cmp(&t)).expect("time collected");

    let m = anchors.len();
    let mut values = vec![DVector::zeros(m); times.len()];
    let mut mask = vec![vec![false; m]; times.len()];
    for (line, t, i, r) in readings {
        let k = slot(t);
        if mask[k][i] {
            return Err(Error::Parse {
                path: ranges.to_path_buf(),
                line,
                reason: format!("duplicate reading for anchor `{}` at t={t}", anchors[i].anchor_id),
            });
        }
        mask[k][i] = true;
        values[k][i] = r;
    }

    let truth = match truth_path {
        None => None,
        Some(p) => {
            let mut path = vec![None; times.len()];
            for (t, xy) in truth_rows {
                path[slot(t)] = Some(xy);
            }
            let missing = path.iter().position(Option::is_none);
            if let Some(k) = missing {
                return Err(Error::Config(format!(
                    "{}: no ground truth for t={}",
                    p.display(),
                    times[k]
                )));
            }
            Some(path.into_iter().map(|v| v.expect("checked")).collect())
        }
    };

    Ok(UwbDataset {
        measurements: MeasurementSet::new(times, values, mask, sensors)?,
        anchors,
        truth,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `ranges.csv`, `anchors.csv` and (if present) `truth.csv` into `dir`.
pub fn write_uwb_csv(data: &UwbDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io = |p: &PathBuf| {
        let p = p.clone();
        move |e| Error::io(p, e)
    };

    let p = dir.join(ANCHORS_FILE);
    let mut w = create(&p)?;
    writeln!(w, "anchor_id,x_m,y_m,z_m").map_err(io(&p))?;
    for a in &data.anchors {
        writeln!(w, "{},{},{},{}", a.anchor_id, a.x_m, a.y_m, a.z_m).map_err(io(&p))?;
    }
    w.flush().map_err(io(&p))?;

    let p = dir.join(RANGES_FILE);
    let mut w = create(&p)?;
    writeln!(w, "t,anchor_id,range_m").map_err(io(&p))?;
    let ms = &data.measurements;
    for k in 0..ms.len() {
        for (i, a) in data.anchors.iter().enumerate() {
            if ms.mask[k][i] {
                writeln!(w, "{},{},{}", ms.times[k], a.anchor_id, ms.values[k][i]).map_err(io(&p))?;
            }
        }
    }
    w.flush().map_err(io(&p))?;

    if let Some(truth) = &data.truth {
        let p = dir.join(TRUTH_FILE);
        let mut w = create(&p)?;
        writeln!(w, "t,x_m,y_m").map_err(io(&p))?;
        for (t, xy) in ms.times.iter().zip(truth) {
            writeln!(w, "{},{},{}", t, xy[0], xy[1]).map_err(io(&p))?;
        }
        w.flush().map_err(io(&p))?;
    }
    Ok(())
}

/// Synthetic indoor range-only scenario: a tag walking an elliptical loop
/// inside an anchor network, ranging to (at most) its nearest anchors, with
/// a fraction of readings positively biased by non-line-of-sight
/// propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UwbScenario {
    pub anchors: usize,
    pub max_visible: usize,
    /// Probability that one of the nearest anchors drops out at a step.
    pub dropout: f64,
    pub nlos_fraction: f64,
    /// NLoS bias drawn uniformly from this interval (m).
    pub nlos_bias: [f64; 2],
    pub range_variance: f64,
    pub process_variance: f64,
    /// Hall extent (m).
    pub width: f64,
    pub depth: f64,
    pub anchor_height: f64,
    /// Distance walked per step (m).
    pub step_length: f64,
}

impl Default for UwbScenario {
    fn default() -> Self {
        Self {
            anchors: 11,
            max_visible: 4,
            dropout: 0.1,
            nlos_fraction: 0.2,
            nlos_bias: [1.0, 4.0],
            range_variance: 0.1,
            process_variance: 0.1,
            width: 30.0,
            depth: 16.0,
            anchor_height: 1.5,
            step_length: 0.5,
        }
    }
}

impl UwbScenario {
    pub fn validate(&self) -> Result<()> {
        if self.anchors < 3 || self.max_visible == 0 || self.max_visible > self.anchors {
            return Err(Error::Config("uwb: need >= 3 anchors and 1..=anchors visible".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.nlos_fraction) {
            return Err(Error::Config("uwb: probabilities must lie in [0, 1]".into()));
        }
        if self.nlos_bias[0] < 0.0 || self.nlos_bias[1] < self.nlos_bias[0] {
            return Err(Error::Config("uwb: nlos_bias must be a non-negative interval".into()));
        }
        if !(self.range_variance > 0.0) || self.process_variance < 0.0 {
            return Err(Error::Config("uwb: variances must be positive".into()));
        }
        Ok(())
    }

    /// Anchors spaced evenly around the hall perimeter.
    pub fn anchor_layout(&self) -> Vec<Anchor> {
        let perimeter = 2.0 * (self.width + self.depth);
        (0..self.anchors)
            .map(|i| {
                let s = perimeter * i as f64 / self.anchors as f64;
                let (x, y) = if s < self.width {
                    (s, 0.0)
                } else if s < self.width + self.depth {
                    (self.width, s - self.width)
                } else if s < 2.0 * self.width + self.depth {
                    (2.0 * self.width + self.depth - s, self.depth)
                } else {
                    (0.0, perimeter - s)
                };
                Anchor {
                    anchor_id: format!("A{}", i + 1),
                    x_m: x,
                    y_m: y,
                    z_m: self.anchor_height,
                }
            })
            .collect()
    }

    /// Tag path: an ellipse inset from the walls, walked at `step_length`.
    pub fn path(&self, steps: usize) -> Vec<[f64; 2]> {
        let (cx, cy) = (self.width / 2.0, self.depth / 2.0);
        let (rx, ry) = (self.width * 0.35, self.depth * 0.3);
        let mean_radius = ((rx * rx + ry * ry) / 2.0).sqrt();
        let dphi = self.step_length / mean_radius;
        (0..steps)
            .map(|k| {
                let phi = dphi * k as f64;
                [cx + rx * phi.cos(), cy + ry * phi.sin()]
            })
            .collect()
    }
}

/// Generates a synthetic UWB log. Returns the dataset (with truth) and the
/// NLoS ground truth.
pub fn simulate_uwb_scenario(sc: &UwbScenario, steps: usize, seed: u64) -> Result<(UwbDataset, OutlierGroundTruth)> {
    sc.validate()?;
    let mut rng = rng_for(seed, 2);
    let anchors = sc.anchor_layout();
    let opts = UwbOptions {
        range_variance: sc.range_variance,
        tag_height: 0.0,
    };
    let sensors = anchor_suite(&anchors, &opts)?;
    let path = sc.path(steps);
    let m = anchors.len();
    let sd = sc.range_variance.sqrt();

    let mut values = Vec::with_capacity(steps);
    let mut mask = Vec::with_capacity(steps);
    let mut outliers = OutlierGroundTruth::none(steps, m);
    for (k, p) in path.iter().enumerate() {
        let x = DVector::from_vec(p.to_vec());
        let clean = sensors.measure(&x);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| clean[a].total_cmp(&clean[b]));

        let mut y = DVector::zeros(m);
        let mut present = vec![false; m];
        for &i in order.iter().take(sc.max_visible) {
            let dropped = rng.random_bool(sc.dropout);
            let noise = sd * standard_normal(&mut rng);
            let nlos = rng.random_bool(sc.nlos_fraction);
            let bias = rng.random_range(sc.nlos_bias[0]..=sc.nlos_bias[1]);
            if dropped {
                continue;
            }
            present[i] = true;
            y[i] = clean[i] + noise;
            if nlos {
                y[i] += bias;
                outliers.mask[k][i] = true;
                outliers.magnitudes[k][i] = bias;
            }
        }
        values.push(y);
        mask.push(present);
    }
    let times = (0..steps).map(|k| k as f64 * 0.2).collect();
    Ok((
        UwbDataset {
            measurements: MeasurementSet::new(times, values, mask, sensors)?,
            anchors,
            truth: Some(path),
        },
        outliers,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DynamicsModel;

    #[test]
    fn grid_for_two_sensors() {
        let s = build_sensor_grid(2).unwrap();
        assert_eq!(s.sensors[0].kind, SensorKind::Bearing { position: [0.0, 350.0] });
        assert_eq!(
            s.sensors[1].kind,
            SensorKind::Range {
                position: [0.0, 0.0],
                z_offset: 0.0
            }
        );
    }

    #[test]
    fn grid_for_four_sensors() {
        let s = build_sensor_grid(4).unwrap();
        assert_eq!(s.sensors[1].kind, SensorKind::Bearing { position: [350.0, 0.0] });
        assert_eq!(
            s.sensors[3].kind,
            SensorKind::Range {
                position: [350.0, 350.0],
                z_offset: 0.0
            }
        );
        assert!(s.sensors.iter().all(|x| x.noise_variance > 0.0));
        assert_eq!(s.sensors[0].noise_variance, bearing_variance());
        assert_eq!(s.sensors[2].noise_variance, 10.0);
    }

    #[test]
    fn odd_grid_rejected() {
        assert!(build_sensor_grid(3).is_err());
        assert!(build_sensor_grid(0).is_err());
    }

    #[test]
    fn noiseless_trajectory_is_deterministic_orbit() {
        let mut model = DynamicsModel::coordinated_turn(1.0, 0.1, 1e-4).unwrap();
        model.process_noise.fill(0.0);
        let x0 = DVector::from_vec(vec![0.0, 10.0, 0.0, -5.0, PI / 180.0]);
        let tr = simulate_trajectory(&model, &x0, &DMatrix::zeros(5, 5), 5, 3).unwrap();
        assert_eq!(tr.initial, x0);
        let mut x = x0;
        for s in &tr.states {
            x = model.apply(&x);
            assert_eq!(s, &x);
        }
    }

    #[test]
    fn trajectories_repeat_per_seed() {
        let model = DynamicsModel::coordinated_turn(1.0, 0.1, 1.75e-4).unwrap();
        let x0 = DVector::from_vec(vec![0.0, 10.0, 0.0, -5.0, PI / 180.0]);
        let cov = &model.process_noise * 10.0;
        let a = simulate_trajectory(&model, &x0, &cov, 50, 9).unwrap();
        let b = simulate_trajectory(&model, &x0, &cov, 50, 9).unwrap();
        let c = simulate_trajectory(&model, &x0, &cov, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn states(t: usize) -> Vec<DVector<f64>> {
        (0..t)
            .map(|k| DVector::from_vec(vec![10.0 * k as f64, 10.0, -5.0 * k as f64, -5.0, 0.0]))
            .collect()
    }

    #[test]
    fn outlier_probability_extremes() {
        let grid = build_sensor_grid(6).unwrap();
        let (_, none) = simulate_measurements(&states(20), &grid, 0.0, 30.0, 1).unwrap();
        assert!(none.mask.iter().flatten().all(|b| !b));
        assert!(none.magnitudes.iter().all(|v| v.iter().all(|x| *x == 0.0)));
        let (_, all) = simulate_measurements(&states(20), &grid, 1.0, 30.0, 1).unwrap();
        assert!(all.mask.iter().flatten().all(|b| *b));
    }

    #[test]
    fn contamination_fraction_concentrates() {
        let grid = build_sensor_grid(50).unwrap();
        let (_, truth) = simulate_measurements(&states(100), &grid, 0.4, 30.0, 5).unwrap();
        let tol = 3.0 * (0.4f64 * 0.6 / 5000.0).sqrt();
        assert!((truth.contamination_fraction() - 0.4).abs() < tol);
    }

    #[test]
    fn outliers_are_additive() {
        let grid = build_sensor_grid(10).unwrap();
        let st = states(30);
        let (dirty, truth) = simulate_measurements(&st, &grid, 0.5, 30.0, 11).unwrap();
        let (clean, _) = simulate_measurements(&st, &grid, 0.0, 30.0, 11).unwrap();
        let recovered = truth.remove_from(&dirty);
        for (a, b) in recovered.values.iter().zip(&clean.values) {
            for i in 0..a.len() {
                let d = a[i] - b[i];
                let d = if grid.sensors[i].is_angular() { wrap_angle(d) } else { d };
                assert!(d.abs() < 1e-9);
            }
        }
        for row in &dirty.values {
            for (i, s) in grid.sensors.iter().enumerate() {
                if s.is_angular() {
                    assert!(row[i] > -PI && row[i] <= PI);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_measurements() {
        let grid = build_sensor_grid(8).unwrap();
        let a = simulate_measurements(&states(10), &grid, 0.3, 10.0, 4).unwrap();
        let b = simulate_measurements(&states(10), &grid, 0.3, 10.0, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_uwb_visibility() {
        let (ds, nlos) = simulate_uwb_scenario(&UwbScenario::default(), 200, 3).unwrap();
        assert_eq!(ds.anchors.len(), 11);
        for row in &ds.measurements.mask {
            assert!(row.iter().filter(|b| **b).count() <= 4);
        }
        let frac = nlos.contamination_fraction() * 11.0 / 4.0;
        assert!(frac > 0.1 && frac < 0.3, "nlos fraction among visible {frac}");
        for (k, row) in nlos.mask.iter().enumerate() {
            for (i, hit) in row.iter().enumerate() {
                if *hit {
                    assert!(ds.measurements.mask[k][i]);
                    assert!(nlos.magnitudes[k][i] > 0.0);
                }
            }
        }
    }
}
