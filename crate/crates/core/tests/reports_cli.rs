use std::fs;
use std::path::Path;
use std::process::Command;

use vbsmooth::bench::{emit_reports, read_runs_csv, run_monte_carlo_detailed, summarize, write_runs_csv, RUNS_HEADER};
use vbsmooth::{Method, RunResult, ScenarioConfig};

fn small_config() -> ScenarioConfig {
    ScenarioConfig {
        steps: 25,
        sensors: 6,
        runs: 3,
        methods: vec![Method::Plain, Method::Ideal, Method::Asor, Method::Sor],
        ..Default::default()
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vbsmooth"))
        .args(args)
        .output()
        .unwrap()
}

fn strip_wall_time(text: &str) -> String {
    text.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(3);
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn empty_results_give_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    write_runs_csv(&[], &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap().trim_end(), RUNS_HEADER);
    assert!(read_runs_csv(&path).unwrap().is_empty());
    assert!(summarize(&[]).methods.is_empty());
}

#[test]
fn runs_csv_round_trips_into_the_same_summary() {
    let config = small_config();
    let (results, trajectories) = run_monte_carlo_detailed(&config).unwrap();
    assert_eq!(results.len(), 12);
    let dir = tempfile::tempdir().unwrap();
    let summary = emit_reports(&results, &trajectories, dir.path()).unwrap();
    let back = read_runs_csv(&dir.path().join("runs.csv")).unwrap();
    assert_eq!(back.len(), results.len());
    let again = summarize(&back);
    for (a, b) in summary.methods.iter().zip(&again.methods) {
        assert_eq!(a.method, b.method);
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.diverged, b.diverged);
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * (1.0 + x.abs()),
            (None, None) => true,
            _ => false,
        };
        assert!(close(a.mean_rmse, b.mean_rmse));
        assert!(close(a.std_rmse, b.std_rmse));
    }
    assert!(dir.path().join("summary.json").exists());
    assert!(dir.path().join("trajectory_0.csv").exists());
}

#[test]
fn diverged_runs_are_counted_not_averaged() {
    let ok = |run, rmse| RunResult {
        method: Method::Asor,
        run,
        rmse: Some(rmse),
        wall_time: 0.1,
        iterations: 3,
        diverged: false,
    };
    let bad = RunResult {
        rmse: None,
        diverged: true,
        ..ok(2, 0.0)
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    write_runs_csv(&[ok(0, 1.0), ok(1, 3.0), bad], &path).unwrap();
    let s = summarize(&read_runs_csv(&path).unwrap());
    let m = s.get(Method::Asor).unwrap();
    assert_eq!((m.runs, m.diverged), (3, 1));
    assert_eq!(m.mean_rmse, Some(2.0));
    assert!((m.std_rmse.unwrap() - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn monte_carlo_is_deterministic_for_a_seed() {
    let config = small_config();
    let (a, _) = run_monte_carlo_detailed(&config).unwrap();
    let (b, _) = run_monte_carlo_detailed(&config).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            (x.method, x.run, x.rmse, x.iterations),
            (y.method, y.run, y.rmse, y.iterations)
        );
    }
    let other = ScenarioConfig { seed: 1, ..config };
    let (c, _) = run_monte_carlo_detailed(&other).unwrap();
    assert_ne!(a[2].rmse, c[2].rmse);
}

#[test]
fn config_round_trips_through_toml() {
    let config = small_config();
    let text = config.to_toml_string().unwrap();
    assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), config);
    let partial = ScenarioConfig::from_toml_str("steps = 30\n[hp]\ntheta = 0.25\n").unwrap();
    assert_eq!(partial.steps, 30);
    assert_eq!(partial.hp.theta, 0.25);
    assert_eq!(partial.sensors, 50);
    assert!(ScenarioConfig::from_toml_str("stepz = 3\n").unwrap_err().is_config());
    assert!(ScenarioConfig::from_toml_str("lambda = 1.5\n").unwrap_err().is_config());
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, "steps = 20\nsensors = 4\nruns = 2\n").unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn cli_bench_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut texts = vec![];
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = cli(&["bench", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        texts.push(strip_wall_time(&fs::read_to_string(out.join("runs.csv")).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
    assert!(texts[0].starts_with("method,run,rmse,iterations,diverged"));
}

#[test]
fn cli_simulate_then_smooth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let o = cli(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("smoothed");
    let o = cli(&[
        "smooth",
        "--config",
        &cfg,
        "--methods",
        "plain,asor",
        "--input",
        data.join("run_0").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("smoothed.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,plain_x,plain_y,asor_x,asor_y");
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn cli_smooths_uwb_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("uwb.toml");
    fs::write(&cfg, "model = \"random-walk\"\nsteps = 30\nruns = 1\n").unwrap();
    let data = dir.path().join("data");
    let o = cli(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("res");
    let o = cli(&[
        "smooth",
        "--methods",
        "asor,sor",
        "--input",
        data.join("run_0").join("ranges.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = read_runs_csv(&out.join("runs.csv")).unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r.rmse.is_some()));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["config"]).status.code(), Some(0));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    assert_eq!(cli(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(cli(&["config", "--methods", "asor,bogus"]).status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "theta = 3\n").unwrap();
    assert_eq!(
        cli(&["config", "--config", bad.to_str().unwrap()]).status.code(),
        Some(1)
    );
    fs::write(&bad, "[hp]\ntheta = 3\n").unwrap();
    assert_eq!(
        cli(&["config", "--config", bad.to_str().unwrap()]).status.code(),
        Some(1)
    );

    let missing = dir.path().join("missing.json");
    let o = cli(&[
        "smooth",
        "--input",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
