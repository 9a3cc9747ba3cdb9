use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DVector;

use vbsmooth::bench::{
    emit_reports, lambda_sweep, run_monte_carlo_detailed, sensor_sweep, summarize, timing_sweep, write_json,
    write_runs_csv, ModelKind, RunResult, ScenarioConfig, SimulatedRun, Summary, SweepPoint,
};
use vbsmooth::diagnostics::{pif_sweep, summarize_pif, write_pif_csv};
use vbsmooth::scenario::{load_uwb, write_uwb_csv, UwbDataset, UwbOptions, ANCHORS_FILE, RANGES_FILE, TRUTH_FILE};
use vbsmooth::vb::{run_method, Method, SmoothingProblem};
use vbsmooth::{rmse, Error, GaussianBelief, Result};

#[derive(Parser)]
#[command(name = "vbsmooth", version, about = "Outlier-robust unscented RTS smoothing toolkit")]
struct Cli {
    /// TOML scenario file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated methods: plain, ideal, asor, asor-imq, sor, ror.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated datasets.
    Simulate,
    /// Run the configured methods on a dataset (`dataset.json`, a UWB
    /// `ranges.csv`, or a directory holding either).
    Smooth {
        #[arg(long)]
        input: PathBuf,
    },
    /// Monte Carlo experiments.
    Bench {
        #[arg(long, value_enum, default_value = "single")]
        experiment: Experiment,
    },
    /// Posterior influence sweep over the configured corruption scales.
    Pif,
    /// ASOR against ASOR with IMQ first-pass weights across outlier rates.
    ImqCompare,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    /// One Monte Carlo batch at the configured parameters.
    Single,
    /// Outlier-rate sweep.
    Lambda,
    /// Sensor-count sweep.
    Sensors,
    /// Wall time versus sensor count.
    Timing,
    /// Synthetic UWB range-only scenario.
    Uwb,
    All,
}

fn effective_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(r) = cli.runs {
        cfg.runs = r;
    }
    if let Some(ms) = &cli.methods {
        cfg.methods = ms.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn print_summary(label: &str, summary: &Summary) {
    println!("{label}");
    println!(
        "  {:<9} {:>5} {:>4} {:>12} {:>10} {:>10}",
        "method", "runs", "div", "mean_rmse", "std", "time_s"
    );
    for m in &summary.methods {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "  {:<9} {:>5} {:>4} {:>12} {:>10} {:>10.4}",
            m.method.to_string(),
            m.runs,
            m.diverged,
            fmt(m.mean_rmse),
            fmt(m.std_rmse),
            m.mean_wall_time
        );
    }
}

fn simulate(cfg: &ScenarioConfig) -> Result<()> {
    create_dir(&cfg.output)?;
    fs::write(cfg.output.join("config.toml"), cfg.to_toml_string()?).map_err(|e| Error::Io {
        path: cfg.output.join("config.toml"),
        source: e,
    })?;
    for run in 0..cfg.runs {
        let sim = SimulatedRun::generate(cfg, run)?;
        let dir = cfg.output.join(format!("run_{run}"));
        create_dir(&dir)?;
        write_json(&sim, &dir.join("dataset.json"))?;
        if cfg.model == ModelKind::RandomWalk {
            let anchors = cfg.uwb.anchor_layout();
            let ds = UwbDataset {
                measurements: sim.data.clone(),
                anchors,
                truth: Some(sim.truth.iter().map(|x| [x[0], x[1]]).collect()),
            };
            write_uwb_csv(&ds, &dir)?;
        }
    }
    println!("wrote {} datasets to {}", cfg.runs, cfg.output.display());
    Ok(())
}

fn load_input(input: &Path, cfg: &ScenarioConfig) -> Result<SimulatedRun> {
    let input = if input.is_dir() {
        let json = input.join("dataset.json");
        if json.exists() {
            json
        } else {
            input.join(RANGES_FILE)
        }
    } else {
        input.to_path_buf()
    };
    if input.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(&input).map_err(|e| Error::Io {
            path: input.clone(),
            source: e,
        })?;
        return Ok(serde_json::from_str(&text)?);
    }

    let dir = input.parent().unwrap_or_else(|| Path::new("."));
    let truth_path = dir.join(TRUTH_FILE);
    let ds = load_uwb(
        &input,
        &dir.join(ANCHORS_FILE),
        truth_path.exists().then_some(truth_path.as_path()),
        &UwbOptions {
            range_variance: cfg.uwb.range_variance,
            tag_height: 0.0,
        },
    )?;
    let model = vbsmooth::DynamicsModel::random_walk(2, cfg.uwb.process_variance)?;
    let start = match &ds.truth {
        Some(t) if !t.is_empty() => DVector::from_column_slice(&t[0]),
        _ => {
            // centroid of the anchors heard first, or of all anchors
            let first = ds.measurements.mask.iter().find(|row| row.iter().any(|b| *b));
            let picked: Vec<_> = ds
                .anchors
                .iter()
                .enumerate()
                .filter(|(i, _)| first.is_none_or(|row| row[*i]))
                .map(|(_, a)| [a.x_m, a.y_m])
                .collect();
            let n = picked.len().max(1) as f64;
            DVector::from_vec(vec![
                picked.iter().map(|p| p[0]).sum::<f64>() / n,
                picked.iter().map(|p| p[1]).sum::<f64>() / n,
            ])
        }
    };
    let steps = ds.measurements.len();
    let truth = ds
        .truth
        .map(|t| t.iter().map(|p| DVector::from_column_slice(p)).collect())
        .unwrap_or_default();
    Ok(SimulatedRun {
        run: 0,
        prior: GaussianBelief::new(start, &model.process_noise * cfg.vartheta)?,
        model,
        truth,
        outliers: vbsmooth::OutlierGroundTruth::none(steps, ds.measurements.sensor_count()),
        data: ds.measurements,
    })
}

fn smooth(cfg: &ScenarioConfig, input: &Path) -> Result<()> {
    let sim = load_input(input, cfg)?;
    let problem = SmoothingProblem {
        model: sim.model.clone(),
        data: sim.data.clone(),
        prior: sim.prior.clone(),
        kappa: cfg.kappa,
    };
    create_dir(&cfg.output)?;
    let idx = sim.model.position_index();
    let mut header = String::from("t");
    let mut columns = vec![];
    let mut results = vec![];
    for &method in &cfg.methods {
        let start = std::time::Instant::now();
        let out = run_method(method, &problem, &cfg.hp, Some(&sim.outliers))?;
        let wall_time = start.elapsed().as_secs_f64();
        let means = out.smoothed_means();
        let err = if sim.truth.len() == means.len() && !means.is_empty() {
            Some(rmse(&means, &sim.truth, idx)?)
        } else {
            None
        };
        info!("{method}: {} iterations, converged {}", out.iterations, out.converged);
        header.push_str(&format!(",{method}_x,{method}_y"));
        columns.push(means);
        results.push(RunResult {
            method,
            run: 0,
            rmse: err,
            wall_time,
            iterations: out.iterations,
            diverged: false,
        });
    }
    let mut text = header + "\n";
    for (k, t) in sim.data.times.iter().enumerate() {
        text.push_str(&t.to_string());
        for c in &columns {
            text.push_str(&format!(",{},{}", c[k][idx[0]], c[k][idx[1]]));
        }
        text.push('\n');
    }
    let path = cfg.output.join("smoothed.csv");
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    write_runs_csv(&results, &cfg.output.join("runs.csv"))?;
    print_summary("smooth", &summarize(&results));
    Ok(())
}

fn write_sweep(points: Vec<(SweepPoint, Vec<RunResult>)>, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let mut summaries = vec![];
    for (point, results) in points {
        let sub = dir.join(format!("{}_{}", point.parameter, point.value));
        create_dir(&sub)?;
        write_runs_csv(&results, &sub.join("runs.csv"))?;
        write_json(&point.summary, &sub.join("summary.json"))?;
        print_summary(&format!("{} = {}", point.parameter, point.value), &point.summary);
        summaries.push(point);
    }
    write_json(&summaries, &dir.join("sweep.json"))
}

fn bench(cfg: &ScenarioConfig, experiment: Experiment) -> Result<()> {
    let all = experiment == Experiment::All;
    if experiment == Experiment::Single || all {
        let (results, trajectories) = run_monte_carlo_detailed(cfg)?;
        let summary = emit_reports(&results, &trajectories, &cfg.output)?;
        print_summary("monte carlo", &summary);
    }
    if experiment == Experiment::Lambda || all {
        let points = lambda_sweep(cfg, &cfg.experiments.lambdas)?;
        write_sweep(points, &cfg.output.join("lambda"))?;
    }
    if experiment == Experiment::Sensors || all {
        let points = sensor_sweep(cfg, &cfg.experiments.sensor_counts)?;
        write_sweep(points, &cfg.output.join("sensors"))?;
    }
    if experiment == Experiment::Timing || all {
        let report = timing_sweep(cfg, &cfg.experiments.sensor_counts)?;
        let dir = cfg.output.join("timing");
        create_dir(&dir)?;
        write_json(&report, &dir.join("timing.json"))?;
        for c in &report.cells {
            println!(
                "  {:<9} m={:<4} {:.4}s ({:.1} iters)",
                c.method.to_string(),
                c.sensors,
                c.wall_time,
                c.mean_iterations
            );
        }
        for f in &report.fits {
            println!(
                "  {:<9} slope {:.3}  R² {:.3}",
                f.method.to_string(),
                f.slope,
                f.r_squared
            );
        }
    }
    if experiment == Experiment::Uwb || all {
        let uwb = ScenarioConfig {
            model: ModelKind::RandomWalk,
            ..cfg.clone()
        };
        let (results, trajectories) = run_monte_carlo_detailed(&uwb)?;
        let summary = emit_reports(&results, &trajectories, &cfg.output.join("uwb"))?;
        print_summary("uwb", &summary);
    }
    Ok(())
}

fn pif(cfg: &ScenarioConfig) -> Result<()> {
    let reports = pif_sweep(cfg, &cfg.experiments.pif_scales, cfg.runs)?;
    create_dir(&cfg.output)?;
    write_pif_csv(&reports, &cfg.output.join("pif.csv"))?;
    let summary = summarize_pif(&reports);
    write_json(&summary, &cfg.output.join("pif_summary.json"))?;
    println!("  {:<9} {:>10} {:>12} {:>12}", "method", "sigma", "median", "max");
    for s in &summary {
        println!(
            "  {:<9} {:>10.3} {:>12.4e} {:>12.4e}",
            s.method.to_string(),
            s.corruption_scale,
            s.median,
            s.max
        );
    }
    Ok(())
}

fn imq_compare(cfg: &ScenarioConfig) -> Result<()> {
    let cmp = ScenarioConfig {
        methods: vec![Method::Asor, Method::AsorImq],
        steps: cfg.experiments.imq_steps,
        ..cfg.clone()
    };
    let points = lambda_sweep(&cmp, &cfg.experiments.lambdas)?;
    write_sweep(points, &cfg.output.join("imq"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    match cli.command {
        Command::Simulate => simulate(&cfg),
        Command::Smooth { input } => smooth(&cfg, &input),
        Command::Bench { experiment } => bench(&cfg, experiment),
        Command::Pif => pif(&cfg),
        Command::ImqCompare => imq_compare(&cfg),
        Command::Config => {
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
