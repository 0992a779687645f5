//! Run manifest written next to every set of outputs. It embeds the scenario
//! source and the fully resolved configuration, so the CSVs can be
//! regenerated byte-for-byte.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use odeftc::consensus::Discretization;
use odeftc::scenario::Scenario;
use odeftc::simulator::{Initialization, SimConfig};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// The `--scenario` argument as given.
    pub scenario: String,
    pub scenario_name: String,
    pub output_dir: String,
    /// Command that regenerates the outputs from `scenario_source` saved as a file.
    pub reproduce: String,
    pub started_unix_seconds: u64,
    pub elapsed_seconds: f64,
    pub config: ConfigRecord,
    pub scenario_source: String,
}

#[derive(Debug, Serialize)]
pub struct ConfigRecord {
    pub h: f64,
    pub t_end: f64,
    pub steps: usize,
    pub realizations: usize,
    pub seed: u64,
    pub kappa: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub xi: f64,
    pub stride: usize,
    pub scheme: String,
    pub init: String,
    pub covariance_divisor: String,
    pub initial_state_noise: bool,
    pub process_noise: bool,
    pub measurement_noise: bool,
    pub rng: String,
}

impl ConfigRecord {
    pub fn new(c: &SimConfig) -> Self {
        Self {
            h: c.h,
            t_end: c.t_end,
            steps: c.steps(),
            realizations: c.realizations,
            seed: c.seed,
            kappa: c.kappa,
            alpha: c.consensus.alpha,
            gamma: c.consensus.gamma,
            xi: c.consensus.xi,
            stride: c.stride,
            scheme: match c.scheme {
                Discretization::Saturated => "saturated".into(),
                Discretization::Euler { deadband } => format!("euler(deadband = {deadband:e})"),
            },
            init: match c.init {
                Initialization::Matched => "matched".into(),
                Initialization::Random => "random".into(),
            },
            covariance_divisor: if c.unbiased { "M-1".into() } else { "M".into() },
            initial_state_noise: c.noise.initial_state,
            process_noise: c.noise.process,
            measurement_noise: c.noise.measurement,
            rng: "ChaCha8, seed_from_u64(seed), stream = realization index".into(),
        }
    }
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        scenario_arg: &str,
        scenario: &Scenario,
        source: &str,
        config: &SimConfig,
        out: &Path,
        started: Instant,
    ) -> Self {
        let reproduce = format!(
            "odeftc {subcommand} --scenario SCENARIO.toml --kappa {} --realizations {} --step {} --t-end {} --seed {} --stride {} --init {} --out DIR",
            config.kappa,
            config.realizations,
            config.h,
            config.t_end,
            config.seed,
            config.stride,
            if config.init == Initialization::Matched { "matched" } else { "random" },
        );
        let started_unix_seconds = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
            .saturating_sub(started.elapsed().as_secs());
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            scenario: scenario_arg.into(),
            scenario_name: scenario.name.clone(),
            output_dir: out.display().to_string(),
            reproduce,
            started_unix_seconds,
            elapsed_seconds: started.elapsed().as_secs_f64(),
            config: ConfigRecord::new(config),
            scenario_source: source.into(),
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
