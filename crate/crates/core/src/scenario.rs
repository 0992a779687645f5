//! Scenario files: a TOML document describing plant, sensors, graph, filter
//! parameters and integration settings.
//!
//! ```toml
//! [plant]
//! n = 1
//! A = [["0.5*sin(t)"]]      # row-major expression strings (numbers also accepted)
//! W = [["1"]]
//! x0 = [0.0]
//! P0 = [[1.0]]
//!
//! [[sensors]]
//! C = [["1"]]
//! R = [["0.05 + 0.01*sin(0.1*t)"]]
//!
//! [graph]
//! N = 1
//! edges = []                # 1-based node pairs
//!
//! [params]
//! kappa = 200.0
//! alpha = 20.0
//! gamma = 0.7
//! xi = 10.0
//!
//! [sim]
//! h = 1e-4
//! t_end = 10.0
//! realizations = 100
//! seed = 1
//! stride = 100              # optional, default 100
//! init = "matched"          # or "random"; optional, default "matched"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusParams;
use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::linalg::{Matrix, Vector};
use crate::model::{PlantModel, SamplingGrid, SensorModel, TimeVaryingMatrix};
use crate::simulator::{Initialization, SimConfig};

const PAPER_LTV: &str = include_str!("../scenarios/paper-ltv.toml");
const PAPER_LTI: &str = include_str!("../scenarios/paper-lti.toml");

/// Names accepted by [`Scenario::builtin`].
pub const BUILTIN_SCENARIOS: [&str; 2] = ["paper-ltv", "paper-lti"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

impl Entry {
    fn as_text(&self) -> String {
        match self {
            Entry::Number(v) if *v < 0.0 => format!("-{}", -v),
            Entry::Number(v) => v.to_string(),
            Entry::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub plant: PlantSection,
    pub sensors: Vec<SensorSection>,
    pub graph: GraphSection,
    pub params: ParamsSection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Entry>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<Entry>>,
    pub x0: Vec<f64>,
    #[serde(rename = "P0")]
    pub p0: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    #[serde(rename = "C")]
    pub c: Vec<Vec<Entry>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<Entry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(rename = "N")]
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub kappa: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub h: f64,
    pub t_end: f64,
    pub realizations: usize,
    pub seed: u64,
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub init: Option<String>,
}

/// A validated experiment description.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantModel,
    pub sensors: Vec<SensorModel>,
    pub graph: GraphTopology,
    pub kappa: f64,
    pub consensus: ConsensusParams,
    pub sim: SimSection,
}

fn text_grid(rows: &[Vec<Entry>]) -> Vec<Vec<String>> {
    rows.iter().map(|row| row.iter().map(Entry::as_text).collect()).collect()
}

fn numeric_matrix(name: &str, rows: &[Vec<f64>], n: usize) -> Result<Matrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("{name} must be {n}x{n}")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// One of [`BUILTIN_SCENARIOS`].
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "paper-ltv" => PAPER_LTV,
            "paper-lti" => PAPER_LTI,
            _ => return None,
        };
        Some(Self::from_toml_str(text).expect("shipped scenarios are valid"))
    }

    pub fn builtin_source(name: &str) -> Option<&'static str> {
        match name {
            "paper-ltv" => Some(PAPER_LTV),
            "paper-lti" => Some(PAPER_LTI),
            _ => None,
        }
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let n = file.plant.n;
        if file.plant.x0.len() != n {
            return Err(Error::Dimension(format!("x0 has {} entries, n = {n}", file.plant.x0.len())));
        }
        let a = TimeVaryingMatrix::parse("A", &text_grid(&file.plant.a))?;
        let w = TimeVaryingMatrix::parse("W", &text_grid(&file.plant.w))?;
        let p0 = numeric_matrix("P0", &file.plant.p0, n)?;
        let plant = PlantModel::new(a, w, Vector::from_vec(file.plant.x0.clone()), p0)?;

        let mut sensors = Vec::with_capacity(file.sensors.len());
        for (i, s) in file.sensors.iter().enumerate() {
            let c = TimeVaryingMatrix::parse(&format!("sensors[{}].C", i + 1), &text_grid(&s.c))?;
            let r = TimeVaryingMatrix::parse(&format!("sensors[{}].R", i + 1), &text_grid(&s.r))?;
            if c.cols() != n {
                return Err(Error::Dimension(format!("sensor {} C has {} columns, n = {n}", i + 1, c.cols())));
            }
            sensors.push(SensorModel::new(c, r)?);
        }
        if file.graph.nodes != sensors.len() {
            return Err(Error::Dimension(format!(
                "graph has N = {} but {} sensors are listed",
                file.graph.nodes,
                sensors.len()
            )));
        }
        let edges: Vec<(usize, usize)> = file.graph.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = GraphTopology::from_one_based(file.graph.nodes, &edges)?;

        let p = file.params;
        let consensus = ConsensusParams::new(p.alpha, p.gamma, p.xi)?;
        if !(p.kappa >= 0.0 && p.kappa.is_finite()) {
            return Err(crate::error::invalid("kappa", format!("must be non-negative, got {}", p.kappa)));
        }

        let mut grid = SamplingGrid::for_model(&plant, &sensors);
        grid.samples = grid.samples.min(1001);
        plant.validate_on(&grid)?;
        for s in &sensors {
            s.validate_on(&grid)?;
        }

        let scenario = Self {
            name: file.name.unwrap_or_else(|| "unnamed".into()),
            plant,
            sensors,
            graph,
            kappa: p.kappa,
            consensus,
            sim: file.sim,
        };
        scenario.sim_config()?.validate()?;
        Ok(scenario)
    }

    pub fn nodes(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.plant.is_time_invariant() && self.sensors.iter().all(SensorModel::is_time_invariant)
    }

    /// Simulation settings as written in the file.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let init = match self.sim.init.as_deref() {
            None | Some("matched") => Initialization::Matched,
            Some("random") => Initialization::Random,
            Some(other) => {
                return Err(Error::Scenario(format!("init must be \"matched\" or \"random\", got \"{other}\"")))
            }
        };
        let mut config = SimConfig::new(self.sim.h, self.sim.t_end, self.sim.realizations, self.sim.seed, self.kappa, self.consensus);
        config.stride = self.sim.stride.unwrap_or(config.stride);
        config.init = init;
        Ok(config)
    }
}
