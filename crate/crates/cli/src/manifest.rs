use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub artifact_version: String,
    pub wall_clock_seconds: f64,
    pub phases: Vec<PhaseTiming>,
}

/// Accumulates phase timings while a command runs.
pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    master_seed: u64,
    started: Instant,
    phase_start: Instant,
    phases: Vec<PhaseTiming>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, master_seed: u64) -> Self {
        let now = Instant::now();
        Self {
            command: command.into(),
            config,
            master_seed,
            started: now,
            phase_start: now,
            phases: Vec::new(),
        }
    }

    /// Closes the current phase under `name`.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.phases.push(PhaseTiming {
            phase: name.into(),
            seconds: (now - self.phase_start).as_secs_f64(),
        });
        self.phase_start = now;
    }

    pub fn finish(&self) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            config: self.config.clone(),
            master_seed: self.master_seed,
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            phases: self.phases.clone(),
        }
    }
}
