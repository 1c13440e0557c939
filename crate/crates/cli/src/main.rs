use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use live_cli::commands::{self, FitArgs, InferArgs, SimulateArgs};
use live_cli::config::{preset, preset_names, SimulateConfig};
use live_cli::io::write_json;
use live_cli::{CliError, CliResult};
use live_core::types::Method;

#[derive(Parser)]
#[command(name = "live", version, about = "Bias-corrected case-probability inference for sparse logistic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Live,
    Plugin,
    Postsel,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Live => Method::Live,
            MethodArg::Plugin => Method::PluginLasso,
            MethodArg::Postsel => Method::PostSelection,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the l1-penalized logistic model, choosing λ by cross-validation.
    Fit {
        /// CSV with a `y` column of 0/1 outcomes; other columns are features.
        data: PathBuf,
        /// Prepend an unpenalized all-ones column.
        #[arg(long)]
        add_intercept: bool,
        /// Use this penalty instead of cross-validation.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "fit_out")]
        out: PathBuf,
    },
    /// Estimate case probabilities with intervals and tests for each loading row.
    Infer {
        data: PathBuf,
        /// CSV whose header matches the model columns; one loading per row.
        loadings: PathBuf,
        #[arg(long)]
        add_intercept: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "live")]
        method: MethodArg,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write the JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run Monte-Carlo replications from a config file or a preset.
    Simulate {
        /// JSON config file.
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        list_presets: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "sim_out")]
        out: PathBuf,
        /// Override the replication count of every setting.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the master seed of every setting.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Leave runtime columns empty so outputs are byte-reproducible.
        #[arg(long)]
        no_timing: bool,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { data, add_intercept, lambda, seed, out } => {
            let report = commands::fit(&FitArgs { data, add_intercept, lambda, seed, out: out.clone() })?;
            println!(
                "λ = {:.6e}, {} nonzero of {} coefficients, written to {}",
                report.lambda,
                report.nonzero,
                report.p,
                out.display()
            );
        }
        Command::Infer {
            data,
            loadings,
            add_intercept,
            alpha,
            threshold,
            method,
            lambda,
            seed,
            jobs,
            out,
        } => {
            let output = commands::infer(&InferArgs {
                data,
                loadings,
                add_intercept,
                alpha,
                threshold,
                method: method.into(),
                lambda,
                seed,
                jobs,
            })?;
            match out {
                Some(path) => write_json(&path, &output)?,
                None => {
                    let text = serde_json::to_string_pretty(&output).map_err(|e| CliError::Validation(e.to_string()))?;
                    println!("{text}");
                }
            }
        }
        Command::Simulate {
            config,
            preset: preset_name,
            list_presets,
            jobs,
            out,
            reps,
            seed,
            alpha,
            threshold,
            no_timing,
        } => {
            if list_presets {
                for name in preset_names() {
                    println!("{name}");
                }
                return Ok(());
            }
            let mut cfg = match (config, preset_name) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                    SimulateConfig::parse(&text)?
                }
                (None, Some(name)) => preset(&name, seed.unwrap_or(0))?,
                (None, None) => {
                    return Err(CliError::Validation("simulate needs a config file or --preset".into()));
                }
            };
            for s in &mut cfg.settings {
                let e = &mut s.experiment;
                e.n_reps = reps.unwrap_or(e.n_reps);
                e.master_seed = seed.unwrap_or(e.master_seed);
                e.alpha = alpha.unwrap_or(e.alpha);
                e.threshold = threshold.unwrap_or(e.threshold);
            }
            let output = commands::simulate(&SimulateArgs { config: cfg, jobs, out: out.clone(), timing: !no_timing })?;
            for (name, summary) in &output.summaries {
                for m in &summary.methods {
                    println!(
                        "{name} {:<8} cov {:>6} err {:>6} len {:>6} bias {:>8}",
                        m.method.name(),
                        short(m.cov),
                        short(m.err),
                        short(m.len),
                        short(m.bias)
                    );
                }
            }
            println!("results in {}", out.display());
        }
    }
    Ok(())
}

fn short(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIVE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("live: {e}");
            e.exit_code()
        }
    }
}
