//! Simulation config files and built-in presets.
use serde::{Deserialize, Serialize};

use live_core::simulation::{find_loading_seed, BetaSpec, LoadingSpec, SimulationConfig, DESIGN_RHO};
use live_core::types::Method;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub name: String,
    pub experiment: SimulationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub settings: Vec<Setting>,
}

impl SimulateConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: SimulateConfig = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if self.settings.is_empty() {
            return Err(CliError::Validation("settings: at least one setting is required".into()));
        }
        for (k, s) in self.settings.iter().enumerate() {
            if s.name.is_empty() || s.name.contains(['/', '\\', ',']) {
                return Err(CliError::Validation(format!(
                    "settings[{k}].name: must be nonempty without '/', '\\\\' or ','"
                )));
            }
            if self.settings[..k].iter().any(|o| o.name == s.name) {
                return Err(CliError::Validation(format!("settings[{k}].name: duplicate '{}'", s.name)));
            }
            s.experiment
                .validate()
                .map_err(|e| CliError::Validation(format!("settings[{k}].experiment.{}", strip_domain(&e.to_string()))))?;
        }
        Ok(())
    }
}

fn strip_domain(msg: &str) -> &str {
    msg.strip_prefix("domain error: ").unwrap_or(msg)
}

pub const PAPER_P: usize = 501;
pub const DEFAULT_REPS: usize = 200;
/// Loadings are calibrated to the published case probabilities within this.
pub const LOADING_TOLERANCE: f64 = 0.02;
const SEED_SEARCH: u64 = 10_000;

/// Case probability reported for each published setting.
fn target_probability(beta: BetaSpec, loading: LoadingSpec) -> f64 {
    match (beta, loading) {
        (BetaSpec::Decay { exponent }, LoadingSpec::Loading1 { r }) => {
            let shrunk = r < 1.0;
            match (exponent == 1.0, shrunk) {
                (true, false) => 0.645,
                (true, true) => 0.523,
                (false, false) => 0.488,
                (false, true) => 0.481,
            }
        }
        (_, LoadingSpec::Loading2 { .. }) => 0.293,
        (_, LoadingSpec::Loading3) => 0.578,
        _ => 0.732,
    }
}

fn r_label(r: f64) -> &'static str {
    if r == 1.0 {
        "r1"
    } else {
        "r1_25"
    }
}

fn preset_catalog() -> Vec<(String, BetaSpec, LoadingSpec, usize)> {
    let ns = [200, 400, 600];
    let rs = [1.0, 1.0 / 25.0];
    let mut out = Vec::new();
    for tag in ["loading1", "loading2"] {
        for r in rs {
            let loading = if tag == "loading1" {
                LoadingSpec::Loading1 { r }
            } else {
                LoadingSpec::Loading2 { r }
            };
            for n in ns {
                out.push((format!("table1-{tag}-{}-n{n}", r_label(r)), BetaSpec::ExactSparse, loading, n));
            }
        }
    }
    for exponent in [1.0, 2.0] {
        for r in rs {
            for n in ns {
                out.push((
                    format!("table3-decay{exponent}-{}-n{n}", r_label(r)),
                    BetaSpec::Decay { exponent },
                    LoadingSpec::Loading1 { r },
                    n,
                ));
            }
        }
    }
    for n in ns {
        out.push((
            format!("table5-loading3-n{n}"),
            BetaSpec::ExactSparseAdversarial,
            LoadingSpec::Loading3,
            n,
        ));
    }
    out
}

pub fn preset_names() -> Vec<String> {
    preset_catalog().into_iter().map(|(name, ..)| name).collect()
}

/// A named preset, or every preset whose name starts with `name-` (so
/// `table1` selects the whole table).
pub fn preset(name: &str, master_seed: u64) -> CliResult<SimulateConfig> {
    let prefix = format!("{name}-");
    let chosen: Vec<_> = preset_catalog()
        .into_iter()
        .filter(|(n, ..)| n == name || n.starts_with(&prefix))
        .collect();
    if chosen.is_empty() {
        return Err(CliError::Validation(format!(
            "unknown preset '{name}'; available: {}",
            preset_names().join(", ")
        )));
    }
    let mut settings = Vec::new();
    for (name, beta, loading, n) in chosen {
        let target = target_probability(beta, loading);
        let (loading_seed, _) = find_loading_seed(beta, loading, PAPER_P, target, LOADING_TOLERANCE, SEED_SEARCH)?
            .ok_or_else(|| CliError::Numerical(format!("{name}: no loading within {LOADING_TOLERANCE} of {target}")))?;
        settings.push(Setting {
            name,
            experiment: SimulationConfig {
                n,
                p: PAPER_P,
                beta,
                loading,
                n_reps: DEFAULT_REPS,
                alpha: 0.05,
                threshold: 0.5,
                master_seed,
                loading_seed: Some(loading_seed),
                methods: Method::ALL.to_vec(),
                design_rho: DESIGN_RHO,
            },
        });
    }
    Ok(SimulateConfig {
        schema_version: SCHEMA_VERSION,
        settings,
    })
}
