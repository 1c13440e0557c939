use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use live_core::baselines::{plugin_lasso_inference, post_selection_inference};
use live_core::exec::map_indexed;
use live_core::inference::{fit_shared, InferenceOptions, LiveContext, CV_STREAM};
use live_core::numerics::RngStream;
use live_core::simulation::{aggregate, run_replication, Experiment, ReplicationResult, SummaryMetrics};
use live_core::types::{InferenceResult, Method};

use crate::config::{SimulateConfig, Setting};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_num, fmt_opt, read_dataset, read_loadings, write_file, write_json, write_model};
use crate::manifest::{ManifestBuilder, RunManifest};

fn inference_options(seed: u64, lambda: Option<f64>) -> CliResult<InferenceOptions> {
    if let Some(l) = lambda {
        if !(l > 0.0 && l.is_finite()) {
            return Err(CliError::Validation(format!("--lambda must be positive, got {l}")));
        }
    }
    Ok(InferenceOptions {
        lambda,
        seed,
        ..Default::default()
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub struct FitArgs {
    pub data: PathBuf,
    pub add_intercept: bool,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub p: usize,
    pub columns: Vec<String>,
    pub lambda: f64,
    pub cross_validated: bool,
    pub nonzero: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub objective_value: f64,
    pub manifest: RunManifest,
}

/// Fits the lasso and writes `model.csv`, `cv_curve.csv` and `report.json`.
pub fn fit(args: &FitArgs) -> CliResult<FitReport> {
    let config = serde_json::json!({
        "data": args.data, "add_intercept": args.add_intercept, "lambda": args.lambda,
    });
    let mut manifest = ManifestBuilder::new("fit", config, args.seed);
    let loaded = read_dataset(&args.data, args.add_intercept)?;
    manifest.phase("read");
    let opts = inference_options(args.seed, args.lambda)?;
    let shared = fit_shared(&loaded.data, &opts, &RngStream::new(args.seed, CV_STREAM))?;
    manifest.phase("fit");
    create_dir(&args.out)?;
    write_model(&args.out.join("model.csv"), &shared.model.beta_hat, &loaded.columns)?;
    if let Some(cv) = &shared.cv {
        let mut text = String::from("lambda,cv_deviance,cv_se\n");
        for k in 0..cv.lambda_grid.len() {
            text.push_str(&format!(
                "{},{},{}\n",
                fmt_num(cv.lambda_grid[k]),
                fmt_num(cv.cv_deviance[k]),
                fmt_num(cv.cv_se[k])
            ));
        }
        write_file(&args.out.join("cv_curve.csv"), text.as_bytes())?;
    }
    manifest.phase("write");
    let m = &shared.model;
    let report = FitReport {
        n: loaded.data.n(),
        p: loaded.data.p(),
        columns: loaded.columns,
        lambda: m.lambda,
        cross_validated: shared.cv.is_some(),
        nonzero: m.beta_hat.iter().filter(|b| **b != 0.0).count(),
        converged: m.converged,
        kkt_residual: m.kkt_residual,
        objective_value: m.objective_value,
        manifest: manifest.finish(),
    };
    write_json(&args.out.join("report.json"), &report)?;
    Ok(report)
}

pub struct InferArgs {
    pub data: PathBuf,
    pub loadings: PathBuf,
    pub add_intercept: bool,
    pub alpha: f64,
    pub threshold: f64,
    pub method: Method,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferOutput {
    pub results: Vec<InferenceResult>,
    pub manifest: RunManifest,
}

/// One result per loading row, all sharing a single lasso fit.
pub fn infer(args: &InferArgs) -> CliResult<InferOutput> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Validation(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(CliError::Validation(format!("--threshold must lie in (0, 1), got {}", args.threshold)));
    }
    let config = serde_json::json!({
        "data": args.data, "loadings": args.loadings, "add_intercept": args.add_intercept,
        "alpha": args.alpha, "threshold": args.threshold, "method": args.method, "lambda": args.lambda,
    });
    let mut manifest = ManifestBuilder::new("infer", config, args.seed);
    let loaded = read_dataset(&args.data, args.add_intercept)?;
    let loadings = read_loadings(&args.loadings, &loaded.columns)?;
    manifest.phase("read");
    let data = &loaded.data;
    let opts = inference_options(args.seed, args.lambda)?;
    let shared = fit_shared(data, &opts, &RngStream::new(args.seed, CV_STREAM))?;
    manifest.phase("fit");
    let (alpha, threshold) = (args.alpha, args.threshold);
    let results: Vec<live_core::Result<InferenceResult>> = match args.method {
        Method::Live => {
            let ctx = LiveContext::new(data, shared, opts.weight_floor)?;
            map_indexed(loadings.len(), args.jobs, |k| {
                ctx.infer(data, &loadings[k], alpha, threshold, &opts.projection)
            })
        }
        Method::PluginLasso => loadings
            .iter()
            .map(|x| plugin_lasso_inference(&shared.model, x, alpha, threshold))
            .collect(),
        Method::PostSelection => loadings
            .iter()
            .map(|x| post_selection_inference(data, &shared.model, x, alpha, threshold))
            .collect(),
    };
    manifest.phase("infer");
    let results = results.into_iter().collect::<live_core::Result<Vec<_>>>()?;
    Ok(InferOutput {
        results,
        manifest: manifest.finish(),
    })
}

pub struct SimulateArgs {
    pub config: SimulateConfig,
    pub jobs: usize,
    pub out: PathBuf,
    pub timing: bool,
}

pub const SUMMARY_HEADER: &str = "setting,method,n,p,reps,truth,Cov,ERR,Len,RMSE,Bias,SE,t,failures,infeasible";
pub const REPLICATION_HEADER: &str =
    "setting,rep,method,truth,linear_estimate,probability,ci_lower,ci_upper,reject,feasible,runtime_seconds,error";

fn rep_path(dir: &Path, rep: usize) -> PathBuf {
    dir.join(format!("rep_{rep:06}.json"))
}

/// Completed replication files of a setting, keyed by index. Files left by
/// a different configuration make the directory unusable.
fn load_completed(dir: &Path, setting: &Setting) -> CliResult<BTreeMap<usize, ReplicationResult>> {
    let snapshot = dir.join("setting.json");
    let mut done = BTreeMap::new();
    if !snapshot.exists() {
        return Ok(done);
    }
    let text = fs::read_to_string(&snapshot).map_err(|e| CliError::io(&snapshot, e))?;
    let previous: Setting =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", snapshot.display())))?;
    if previous != *setting {
        return Err(CliError::Validation(format!(
            "{} holds results for a different configuration; choose another --out",
            dir.display()
        )));
    }
    for rep in 0..setting.experiment.n_reps {
        let path = rep_path(dir, rep);
        if let Ok(text) = fs::read_to_string(&path) {
            match serde_json::from_str::<ReplicationResult>(&text) {
                Ok(r) if r.rep_index == rep => {
                    done.insert(rep, r);
                }
                _ => log::warn!("ignoring unreadable replication file {}", path.display()),
            }
        }
    }
    Ok(done)
}

fn bool_field(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

fn replication_rows(setting: &str, results: &[ReplicationResult], timing: bool) -> String {
    let mut out = String::new();
    for r in results {
        for o in &r.outcomes {
            out.push_str(&format!(
                "{setting},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.rep_index,
                o.method,
                fmt_num(r.truth),
                fmt_opt(o.linear_estimate),
                fmt_opt(o.probability),
                fmt_opt(o.ci_lower),
                fmt_opt(o.ci_upper),
                bool_field(o.reject),
                bool_field(o.feasible),
                if timing { fmt_num(o.runtime_seconds) } else { String::new() },
                csv_text(o.error.as_deref().unwrap_or("")),
            ));
        }
    }
    out
}

pub fn summary_rows(setting: &Setting, summary: &SummaryMetrics, timing: bool) -> String {
    let e = &setting.experiment;
    let mut out = String::new();
    for m in &summary.methods {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            setting.name,
            m.method,
            e.n,
            e.p,
            m.replications,
            fmt_num(summary.truth),
            fmt_opt(m.cov),
            fmt_opt(m.err),
            fmt_opt(m.len),
            fmt_opt(m.rmse),
            fmt_opt(m.bias),
            fmt_opt(m.se),
            if timing { fmt_num(m.mean_runtime) } else { String::new() },
            m.failures,
            m.infeasible,
        ));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub summaries: Vec<(String, SummaryMetrics)>,
    pub manifest: RunManifest,
}

/// Runs every setting, resuming from replication files already under `out`,
/// then writes `summary.csv`, `replications.csv` and `manifest.json`.
pub fn simulate(args: &SimulateArgs) -> CliResult<SimulateOutput> {
    args.config.validate()?;
    let snapshot = serde_json::to_value(&args.config).map_err(|e| CliError::Validation(e.to_string()))?;
    let seed = args.config.settings[0].experiment.master_seed;
    let mut manifest = ManifestBuilder::new("simulate", snapshot, seed);
    create_dir(&args.out)?;
    let mut summary_text = format!("{SUMMARY_HEADER}\n");
    let mut reps_text = format!("{REPLICATION_HEADER}\n");
    let mut summaries = Vec::new();
    for setting in &args.config.settings {
        let dir = args.out.join(&setting.name);
        create_dir(&dir)?;
        let mut done = load_completed(&dir, setting)?;
        write_json(&dir.join("setting.json"), setting)?;
        let exp = Experiment::new(setting.experiment.clone(), InferenceOptions::default())?;
        let todo: Vec<usize> = (0..setting.experiment.n_reps).filter(|r| !done.contains_key(r)).collect();
        if !done.is_empty() {
            log::info!("{}: resuming with {} of {} replications done", setting.name, done.len(), setting.experiment.n_reps);
        }
        // workers compute, this thread is the only writer
        let (tx, rx) = mpsc::channel::<ReplicationResult>();
        let written = std::thread::scope(|scope| -> CliResult<()> {
            let exp = &exp;
            let todo = &todo;
            let jobs = args.jobs;
            scope.spawn(move || {
                map_indexed(todo.len(), jobs, |k| {
                    let _ = tx.send(run_replication(exp, todo[k]));
                });
            });
            for r in rx {
                write_json(&rep_path(&dir, r.rep_index), &r)?;
                log::debug!("{}: replication {} done", setting.name, r.rep_index);
                done.insert(r.rep_index, r);
            }
            Ok(())
        });
        written?;
        let results: Vec<ReplicationResult> = done.into_values().collect();
        let summary = aggregate(&results, exp.truth)?;
        summary_text.push_str(&summary_rows(setting, &summary, args.timing));
        reps_text.push_str(&replication_rows(&setting.name, &results, args.timing));
        manifest.phase(&setting.name);
        summaries.push((setting.name.clone(), summary));
    }
    write_file(&args.out.join("summary.csv"), summary_text.as_bytes())?;
    write_file(&args.out.join("replications.csv"), reps_text.as_bytes())?;
    let manifest = manifest.finish();
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(SimulateOutput { summaries, manifest })
}
