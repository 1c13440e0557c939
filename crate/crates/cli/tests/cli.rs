use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use live_cli::commands::{fit, infer, simulate, FitArgs, InferArgs, SimulateArgs};
use live_cli::config::{preset, preset_names, SimulateConfig, PAPER_P};
use live_cli::io::{read_model, write_model, INTERCEPT_NAME};
use live_cli::CliError;
use live_core::numerics::{cholesky, RngStream};
use live_core::simulation::{gen_dataset, make_ar_covariance};
use live_core::types::Method;

fn live() -> Command {
    Command::new(env!("CARGO_BIN_EXE_live"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

/// Writes an `n`-row dataset with `p - 1` features (no intercept column).
fn write_data(dir: &Path, n: usize, p: usize, seed: u64) -> PathBuf {
    let mut beta = vec![0.0; p];
    beta[0] = 0.3;
    beta[1] = 1.0;
    beta[2] = -0.8;
    let chol = cholesky(&make_ar_covariance(p - 1, 0.5).unwrap()).unwrap();
    let data = gen_dataset(n, &beta, &chol, &RngStream::new(seed, 0)).unwrap();
    let mut text = String::from("y");
    for j in 1..p {
        text.push_str(&format!(",x{j}"));
    }
    text.push('\n');
    for i in 0..n {
        text.push_str(&format!("{}", data.y()[i]));
        for v in &data.x().row(i)[1..] {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path
}

fn write_loadings(dir: &Path, p: usize, rows: &[Vec<f64>]) -> PathBuf {
    let mut text = String::from(INTERCEPT_NAME);
    for j in 1..p {
        text.push_str(&format!(",x{j}"));
    }
    text.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let path = dir.join("loadings.csv");
    fs::write(&path, text).unwrap();
    path
}

fn unit_row(p: usize, j: usize, v: f64) -> Vec<f64> {
    let mut r = vec![0.0; p];
    r[0] = 1.0;
    r[j] = v;
    r
}

fn infer_args(data: PathBuf, loadings: PathBuf, method: Method) -> InferArgs {
    InferArgs {
        data,
        loadings,
        add_intercept: true,
        alpha: 0.05,
        threshold: 0.5,
        method,
        lambda: None,
        seed: 3,
        jobs: 1,
    }
}

#[test]
fn model_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.csv");
    let beta = vec![0.25, 0.0, -1.0 / 3.0, 0.0, 1e-300];
    let names: Vec<String> = ["intercept", "a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    write_model(&path, &beta, &names).unwrap();
    assert_eq!(read_model(&path, beta.len()).unwrap(), beta);
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn fit_writes_model_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 300, 21, 1);
    let out = dir.path().join("fit");
    let report = fit(&FitArgs {
        data,
        add_intercept: true,
        lambda: None,
        seed: 5,
        out: out.clone(),
    })
    .unwrap();
    assert!(report.cross_validated && report.converged);
    assert_eq!(report.p, 21);
    let beta = read_model(&out.join("model.csv"), 21).unwrap();
    assert_eq!(beta.iter().filter(|b| **b != 0.0).count(), report.nonzero);
    assert!(beta[1] > 0.0 && beta[2] < 0.0);
    let curve = fs::read_to_string(out.join("cv_curve.csv")).unwrap();
    assert!(curve.lines().count() > 2);
    assert!(out.join("report.json").exists());
}

#[test]
fn explicit_lambda_skips_cross_validation() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 200, 11, 2);
    let out = dir.path().join("fit");
    let report = fit(&FitArgs {
        data,
        add_intercept: true,
        lambda: Some(0.05),
        seed: 0,
        out: out.clone(),
    })
    .unwrap();
    assert!(!report.cross_validated);
    assert_eq!(report.lambda, 0.05);
    assert!(!out.join("cv_curve.csv").exists());
}

#[test]
fn malformed_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "y,x1,x2\n1,0.5,0.2\n0,0.1\n1,0.3,0.3\n").unwrap();
    let err = fit(&FitArgs {
        data: path.clone(),
        add_intercept: true,
        lambda: Some(0.1),
        seed: 0,
        out: dir.path().join("o"),
    })
    .unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, CliError::Validation(_)), "{msg}");
    assert!(msg.contains("line 3"), "{msg}");

    fs::write(&path, "y,x1\n1,0.5\n0,abc\n").unwrap();
    let msg = fit(&FitArgs {
        data: path,
        add_intercept: true,
        lambda: Some(0.1),
        seed: 0,
        out: dir.path().join("o"),
    })
    .unwrap_err()
    .to_string();
    assert!(msg.contains("line 3") && msg.contains("'x1'"), "{msg}");
}

#[test]
fn batch_inference_returns_one_row_per_loading() {
    let dir = tempfile::tempdir().unwrap();
    let p = 11;
    let data = write_data(dir.path(), 300, p, 4);
    let rows = vec![unit_row(p, 1, 1.0), unit_row(p, 2, 0.5), unit_row(p, 3, -1.0)];
    let loadings = write_loadings(dir.path(), p, &rows);
    let out = infer(&infer_args(data.clone(), loadings.clone(), Method::Live)).unwrap();
    assert_eq!(out.results.len(), 3);
    for r in &out.results {
        let (lo, hi) = r.ci().unwrap();
        assert!(lo < r.case_probability && r.case_probability < hi);
        assert!(r.variance.unwrap() > 0.0);
    }
    let mut parallel = infer_args(data, loadings, Method::Live);
    parallel.jobs = 4;
    let again = infer(&parallel).unwrap();
    assert_eq!(out.results, again.results);
}

#[test]
fn plugin_reports_no_variance() {
    let dir = tempfile::tempdir().unwrap();
    let p = 11;
    let data = write_data(dir.path(), 200, p, 6);
    let loadings = write_loadings(dir.path(), p, &[unit_row(p, 1, 1.0)]);
    let out = infer(&infer_args(data, loadings, Method::PluginLasso)).unwrap();
    let json = serde_json::to_value(&out).unwrap();
    let r = &json["results"][0];
    assert!(r["variance"].is_null());
    assert!(r["ci_lower"].is_null() && r["reject_null"].is_null());
    assert!(r["case_probability"].as_f64().unwrap() > 0.0);
}

#[test]
fn loading_header_must_match_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 100, 6, 7);
    let path = dir.path().join("l.csv");
    fs::write(&path, "intercept,x1,x2\n1,0,0\n").unwrap();
    let err = infer(&infer_args(data, path, Method::Live)).unwrap_err();
    assert!(err.to_string().contains("does not match"), "{err}");
}

fn small_config(reps: usize) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "settings": [
    {{
      "name": "small",
      "experiment": {{
        "n": 120, "p": 16,
        "beta": {{"kind": "exact_sparse"}},
        "loading": {{"kind": "loading1", "r": 0.2}},
        "n_reps": {reps}, "alpha": 0.05, "threshold": 0.5,
        "master_seed": 11, "loading_seed": 2,
        "methods": ["live", "plugin", "postsel"]
      }}
    }}
  ]
}}"#
    )
}

#[test]
fn simulation_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimulateConfig::parse(&small_config(6)).unwrap();
    let mut texts = Vec::new();
    for jobs in [1, 8] {
        let out = dir.path().join(format!("j{jobs}"));
        simulate(&SimulateArgs {
            config: cfg.clone(),
            jobs,
            out: out.clone(),
            timing: false,
        })
        .unwrap();
        texts.push((
            fs::read(out.join("summary.csv")).unwrap(),
            fs::read(out.join("replications.csv")).unwrap(),
        ));
    }
    assert_eq!(texts[0], texts[1]);
    let summary = String::from_utf8(texts[0].0.clone()).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.starts_with("setting,method,n,p,reps,truth,Cov,ERR,Len,RMSE,Bias,SE,t"));
}

#[test]
fn simulation_resumes_from_completed_replications() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let full = SimulateConfig::parse(&small_config(4)).unwrap();
    let args = |config: SimulateConfig| SimulateArgs {
        config,
        jobs: 1,
        out: out.clone(),
        timing: false,
    };
    simulate(&args(full.clone())).unwrap();
    let reference = fs::read(out.join("summary.csv")).unwrap();
    let rep_file = out.join("small").join("rep_000002.json");
    let kept = fs::read(out.join("small").join("rep_000000.json")).unwrap();
    fs::remove_file(&rep_file).unwrap();
    simulate(&args(full.clone())).unwrap();
    assert!(rep_file.exists());
    assert_eq!(fs::read(out.join("small").join("rep_000000.json")).unwrap(), kept);
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), reference);

    let mut changed = full;
    changed.settings[0].experiment.master_seed = 12;
    let err = simulate(&args(changed)).unwrap_err();
    assert!(err.to_string().contains("different configuration"), "{err}");
}

#[test]
fn unknown_config_field_is_rejected() {
    let text = small_config(3).replace("\"n_reps\"", "\"n_replicates\"");
    let err = SimulateConfig::parse(&text).unwrap_err();
    assert!(err.to_string().contains("n_replicates"), "{err}");
    let text = small_config(3).replace("\"n\": 120", "\"n\": 5");
    let err = SimulateConfig::parse(&text).unwrap_err();
    assert!(err.to_string().contains("settings[0].experiment.n:"), "{err}");
}

#[test]
fn presets_follow_the_config_schema() {
    let names = preset_names();
    assert_eq!(names.len(), 27);
    let cfg = preset("table1-loading1-r1_25-n400", 0).unwrap();
    assert_eq!(cfg.settings.len(), 1);
    let e = &cfg.settings[0].experiment;
    assert_eq!((e.n, e.p, e.n_reps), (400, PAPER_P, 200));
    assert_eq!(e.loading_seed, Some(59));
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(SimulateConfig::parse(&text).unwrap(), cfg);
    assert!(preset("table9", 0).is_err());
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "y,x1\n2,0.1\n").unwrap();
    let out = run(live().args(["fit"]).arg(&bad).arg("--out").arg(dir.path().join("o")));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = run(live().args(["fit", "/nonexistent/data.csv"]));
    assert_eq!(out.status.code(), Some(4));

    let out = run(live().args(["infer", "a.csv", "b.csv", "--method", "bogus"]));
    assert_eq!(out.status.code(), Some(2));

    let out = run(live().args(["simulate", "--list-presets"]));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("table5-loading3-n400"));
}

#[test]
fn infer_command_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = 6;
    let data = write_data(dir.path(), 200, p, 9);
    let loadings = write_loadings(dir.path(), p, &[unit_row(p, 1, 1.0), unit_row(p, 2, 1.0)]);
    let out = run(live()
        .arg("infer")
        .arg(&data)
        .arg(&loadings)
        .args(["--add-intercept", "--method", "postsel"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["results"].as_array().unwrap().len(), 2);
    assert_eq!(json["manifest"]["command"], "infer");
    assert_eq!(json["results"][0]["method"], "postsel");
}
