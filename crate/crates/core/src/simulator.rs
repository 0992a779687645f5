//! Euler-Maruyama simulation of the plant, measurement synthesis and Monte
//! Carlo aggregation of the centralized filter and every network node.
//!
//! Covariances, gains and the information consensus do not depend on the
//! noise, so they are propagated once per run (the *schedule*) and shared by
//! all realizations. Realizations then only carry state vectors.
//!
//! Random streams: realization `r` draws from `ChaCha8Rng::seed_from_u64(seed)`
//! on stream `r`. Per realization the draw order is the initial state (n
//! normals), then per step the process increment (n normals) followed by each
//! sensor's measurement noise in node order. Draws happen even when a noise
//! source is switched off, so switching one source never shifts another.
//! The shared random initial estimates come from stream `u64::MAX`.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::centralized::riccati_rhs;
use crate::consensus::{local_informations, ConsensusParams, ConsensusState, Discretization};
use crate::error::{invalid, Error, Result};
use crate::linalg::{asymmetry, is_positive_definite, lambda_min, symmetrize_in_place, Matrix, Vector};
use crate::model::{network_information, PlantModel, SensorModel};
use crate::odeftc::IndefiniteEvent;
use crate::scenario::Scenario;

/// How node estimates start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initialization {
    /// `xhat_i(0) = x0`, `P_i(0) = P0`: consistent with the prior on `x(0)`.
    Matched,
    /// `xhat_i(0)` uniform in `[-1, 1]^n`, drawn once and shared by all realizations.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSwitches {
    pub initial_state: bool,
    pub process: bool,
    pub measurement: bool,
}

impl Default for NoiseSwitches {
    fn default() -> Self {
        Self { initial_state: true, process: true, measurement: true }
    }
}

impl NoiseSwitches {
    pub const NONE: Self = Self { initial_state: false, process: false, measurement: false };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub h: f64,
    pub t_end: f64,
    pub realizations: usize,
    pub seed: u64,
    pub kappa: f64,
    pub consensus: ConsensusParams,
    /// Record sampled quantities every `stride` steps (and at the last step).
    pub stride: usize,
    pub scheme: Discretization,
    pub init: Initialization,
    pub noise: NoiseSwitches,
    /// Divide empirical covariances by `M - 1` (true) or `M`.
    pub unbiased: bool,
}

pub const DEFAULT_STRIDE: usize = 100;
const BLOCK_STEPS: usize = 512;

impl SimConfig {
    pub fn new(h: f64, t_end: f64, realizations: usize, seed: u64, kappa: f64, consensus: ConsensusParams) -> Self {
        Self {
            h,
            t_end,
            realizations,
            seed,
            kappa,
            consensus,
            stride: DEFAULT_STRIDE,
            scheme: Discretization::default(),
            init: Initialization::Matched,
            noise: NoiseSwitches::default(),
            unbiased: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid("h", format!("must be positive, got {}", self.h)));
        }
        if !(self.t_end >= self.h && self.t_end.is_finite()) {
            return Err(invalid("t_end", format!("must be at least h = {}, got {}", self.h, self.t_end)));
        }
        if self.realizations == 0 {
            return Err(invalid("realizations", "must be at least 1"));
        }
        if self.stride == 0 {
            return Err(invalid("stride", "must be at least 1"));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(invalid("kappa", format!("must be non-negative, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.h).round() as usize
    }

    pub fn is_sample(&self, k: usize) -> bool {
        k.is_multiple_of(self.stride) || k == self.steps()
    }

    /// Step indices at which sampled quantities are recorded.
    pub fn sample_steps(&self) -> Vec<usize> {
        (0..=self.steps()).filter(|&k| self.is_sample(k)).collect()
    }
}

/// Symmetric square root `S` with `S S^T = W` for a PSD `W`.
pub fn sqrt_psd(w: &Matrix) -> Result<Matrix> {
    let skew = asymmetry(w);
    if skew > 1e-10 * w.norm().max(1.0) {
        return Err(Error::NotSymmetric { what: "W".into(), asymmetry: skew });
    }
    let eig = SymmetricEigen::new(w.clone());
    if let Some(&worst) = eig.eigenvalues.iter().find(|&&v| v < -1e-8) {
        return Err(invalid("W", format!("not positive semidefinite (eigenvalue {worst:e})")));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut s = &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    symmetrize_in_place(&mut s);
    Ok(s)
}

fn normals(rng: &mut impl Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `x + h A(t) x + sqrt(h) S(t) zeta`.
pub fn truth_step(x: &Vector, plant: &PlantModel, t: f64, h: f64, rng: &mut impl Rng) -> Result<Vector> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    let s = sqrt_psd(&plant.w.eval(t))?;
    let zeta = normals(rng, x.len());
    Ok(x + plant.a.eval(t) * x * h + s * zeta * h.sqrt())
}

/// `C(t) x + v` with `v ~ N(0, R(t) / h)`.
pub fn measure(x: &Vector, sensor: &SensorModel, t: f64, h: f64, rng: &mut impl Rng) -> Result<Vector> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    let l = sensor.r.eval(t).cholesky().ok_or(Error::Singular { what: "R".into(), t })?.unpack();
    let z = normals(rng, sensor.output_dim());
    Ok(sensor.c.eval(t) * x + l * z / h.sqrt())
}

/// Noise-free measurement `C(t) x`.
pub fn expected_measurement(x: &Vector, sensor: &SensorModel, t: f64) -> Vector {
    sensor.c.eval(t) * x
}

/// The random stream of realization `index`.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Shared initial node estimates for [`Initialization::Random`].
pub fn random_initial_estimates(seed: u64, nodes: usize, n: usize) -> Vec<Vector> {
    let mut rng = realization_rng(seed, u64::MAX);
    (0..nodes).map(|_| Vector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))).collect()
}

/// Deterministic per-sensor quantities for one step.
#[derive(Debug, Clone)]
struct SensorStep {
    c: Matrix,
    /// `chol(R) / sqrt(h)`.
    noise: Matrix,
    node_gain: Matrix,
    /// `kappa P_i`.
    coupling: Matrix,
    central_gain: Matrix,
}

#[derive(Debug, Clone)]
struct StepData {
    a: Matrix,
    /// `sqrt(h) S` with `S S^T = W`.
    process: Matrix,
    sensors: Vec<SensorStep>,
}

/// Sampled values of the deterministic part.
#[derive(Debug, Clone, Default)]
struct ScheduleSamples {
    p_central: Vec<Matrix>,
    p_nodes: Vec<Vec<Matrix>>,
    lambda_min: Vec<Vec<f64>>,
}

/// Propagates covariances, gains and the information consensus.
struct Schedule<'s> {
    plant: &'s PlantModel,
    sensors: &'s [SensorModel],
    graph: &'s crate::graph::GraphTopology,
    config: SimConfig,
    k: usize,
    p: Matrix,
    p_nodes: Vec<Matrix>,
    consensus: ConsensusState,
    z_next: Vec<Matrix>,
    constant_process: Option<Matrix>,
    indefinite: Vec<Option<IndefiniteEvent>>,
    samples: ScheduleSamples,
}

impl<'s> Schedule<'s> {
    fn new(scenario: &'s Scenario, config: SimConfig) -> Result<Self> {
        let plant = &scenario.plant;
        let sensors = scenario.sensors.as_slice();
        let constant_process = if plant.w.is_constant() {
            Some(sqrt_psd(&plant.w.eval(0.0))? * config.h.sqrt())
        } else {
            None
        };
        let z0 = local_informations(sensors, 0.0)?;
        let mut schedule = Self {
            plant,
            sensors,
            graph: &scenario.graph,
            config,
            k: 0,
            p: plant.p0.clone(),
            p_nodes: vec![plant.p0.clone(); sensors.len()],
            consensus: ConsensusState::new(&z0),
            z_next: z0,
            constant_process,
            indefinite: vec![None; sensors.len()],
            samples: ScheduleSamples::default(),
        };
        schedule.record();
        Ok(schedule)
    }

    fn record(&mut self) {
        if self.config.is_sample(self.k) {
            self.samples.p_central.push(self.p.clone());
            self.samples.p_nodes.push(self.p_nodes.clone());
            self.samples.lambda_min.push(self.p_nodes.iter().map(lambda_min).collect());
        }
    }

    /// Quantities for the step `k -> k + 1`; advances the covariances.
    fn next(&mut self) -> Result<StepData> {
        let h = self.config.h;
        let t = self.k as f64 * h;
        let nodes = self.sensors.len();
        let a = self.plant.a.eval(t);
        let w = self.plant.w.eval(t);
        let process = match &self.constant_process {
            Some(s) => s.clone(),
            None => sqrt_psd(&w)? * h.sqrt(),
        };
        let info = network_information(self.sensors, t)?;
        let mut sensors = Vec::with_capacity(nodes);
        for (i, sensor) in self.sensors.iter().enumerate() {
            let c = sensor.c.eval(t);
            let r = sensor.r.eval(t);
            let chol = r.cholesky().ok_or(Error::Singular { what: format!("R_{}", i + 1), t })?;
            let r_inv = chol.inverse();
            let node_gain = &self.p_nodes[i] * c.transpose() * &r_inv * nodes as f64;
            let central_gain = &self.p * c.transpose() * &r_inv;
            let coupling = &self.p_nodes[i] * self.config.kappa;
            sensors.push(SensorStep { noise: chol.unpack() / h.sqrt(), c, node_gain, coupling, central_gain });
        }

        let mut p = &self.p + riccati_rhs(&self.p, &a, &w, &info) * h;
        symmetrize_in_place(&mut p);
        if !is_positive_definite(&p) {
            return Err(Error::Numerical {
                what: "centralized covariance lost positive definiteness".into(),
                step: self.k + 1,
                t: t + h,
            });
        }
        self.p = p;
        for i in 0..nodes {
            let mut next = &self.p_nodes[i] + riccati_rhs(&self.p_nodes[i], &a, &w, self.consensus.zhat(i)) * h;
            symmetrize_in_place(&mut next);
            if self.indefinite[i].is_none() && !is_positive_definite(&next) {
                self.indefinite[i] = Some(IndefiniteEvent { step: self.k + 1, t: t + h });
            }
            self.p_nodes[i] = next;
        }
        self.z_next = local_informations(self.sensors, t + h)?;
        self.consensus.advance(&self.z_next, self.graph, &self.config.consensus, h, self.config.scheme);
        self.k += 1;
        self.record();
        Ok(StepData { a, process, sensors })
    }
}

/// Noise-driven state of one realization.
#[derive(Debug, Clone)]
struct Realization {
    rng: ChaCha8Rng,
    x: Vector,
    xhat: Vec<Vector>,
    xhat_next: Vec<Vector>,
    xc: Vector,
    ys: Vec<Vector>,
    drift: Vector,
    innovation: Vec<Vector>,
    coupling: Vector,
    scratch: Vector,
    /// `[step in block][N node errors, central error]`, flattened.
    block_sq: Vec<f64>,
    /// Error vectors `[e_1 .. e_N, e_c]` at sampled steps of the block.
    block_samples: Vec<Vec<f64>>,
    /// Full states at sampled steps, only kept for traces.
    states: Option<Vec<SampledState>>,
}

#[derive(Debug, Clone)]
struct SampledState {
    truth: Vector,
    nodes: Vec<Vector>,
    central: Vector,
}

impl Realization {
    fn new(scenario: &Scenario, config: &SimConfig, index: usize, init: &[Vector], keep_states: bool) -> Self {
        let n = scenario.plant.dim();
        let mut rng = realization_rng(config.seed, index as u64);
        let zeta = normals(&mut rng, n);
        let mut x = scenario.plant.x0.clone();
        if config.noise.initial_state {
            let l = scenario.plant.p0.clone().cholesky().expect("P0 validated positive definite").unpack();
            x += l * zeta;
        }
        let ys: Vec<Vector> = scenario.sensors.iter().map(|s| Vector::zeros(s.output_dim())).collect();
        let mut me = Self {
            rng,
            x,
            xhat: init.to_vec(),
            xhat_next: init.to_vec(),
            xc: scenario.plant.x0.clone(),
            innovation: ys.clone(),
            ys,
            drift: Vector::zeros(n),
            coupling: Vector::zeros(n),
            scratch: Vector::zeros(n),
            block_sq: Vec::new(),
            block_samples: Vec::new(),
            states: keep_states.then(Vec::new),
        };
        me.observe(true);
        me
    }

    fn errors(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.x.len() * (self.xhat.len() + 1));
        for est in self.xhat.iter().chain(std::iter::once(&self.xc)) {
            out.extend(self.x.iter().zip(est.iter()).map(|(x, e)| x - e));
        }
        out
    }

    fn observe(&mut self, sample: bool) {
        for est in self.xhat.iter().chain(std::iter::once(&self.xc)) {
            self.block_sq.push((&self.x - est).norm_squared());
        }
        if sample {
            self.block_samples.push(self.errors());
            if let Some(states) = &mut self.states {
                states.push(SampledState { truth: self.x.clone(), nodes: self.xhat.clone(), central: self.xc.clone() });
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(self.xc.iter()).chain(self.xhat.iter().flatten()).all(|v| v.is_finite())
    }

    /// One Euler-Maruyama step of truth, measurements and every filter.
    fn step(&mut self, d: &StepData, graph: &crate::graph::GraphTopology, config: &SimConfig) {
        let h = config.h;
        let n = self.x.len();

        let zeta = normals(&mut self.rng, n);
        for (y, s) in self.ys.iter_mut().zip(&d.sensors) {
            let z = normals(&mut self.rng, y.len());
            y.gemv(1.0, &s.c, &self.x, 0.0);
            if config.noise.measurement {
                y.gemv(1.0, &s.noise, &z, 1.0);
            }
        }

        // truth: x + h A x + sqrt(h) S zeta
        self.scratch.gemv(h, &d.a, &self.x, 0.0);
        if config.noise.process {
            self.scratch.gemv(1.0, &d.process, &zeta, 1.0);
        }
        self.x += &self.scratch;

        let coupled = config.kappa > 0.0;
        for (i, s) in d.sensors.iter().enumerate() {
            self.innovation[i].copy_from(&self.ys[i]);
            self.innovation[i].gemv(-1.0, &s.c, &self.xhat[i], 1.0);
            self.drift.gemv(1.0, &d.a, &self.xhat[i], 0.0);
            self.drift.gemv(1.0, &s.node_gain, &self.innovation[i], 1.0);
            if coupled {
                self.coupling.fill(0.0);
                for &j in graph.neighbors(i).expect("node ids come from the graph") {
                    for r in 0..n {
                        self.coupling[r] += self.xhat[j][r] - self.xhat[i][r];
                    }
                }
                self.drift.gemv(1.0, &s.coupling, &self.coupling, 1.0);
            }
            self.xhat_next[i].copy_from(&self.xhat[i]);
            self.xhat_next[i].axpy(h, &self.drift, 1.0);
        }
        std::mem::swap(&mut self.xhat, &mut self.xhat_next);

        self.drift.gemv(1.0, &d.a, &self.xc, 0.0);
        for (i, s) in d.sensors.iter().enumerate() {
            self.innovation[i].copy_from(&self.ys[i]);
            self.innovation[i].gemv(-1.0, &s.c, &self.xc, 1.0);
            self.drift.gemv(1.0, &s.central_gain, &self.innovation[i], 1.0);
        }
        self.xc.axpy(h, &self.drift, 1.0);
    }

    fn run_block(&mut self, data: &[StepData], first_step: usize, graph: &crate::graph::GraphTopology, config: &SimConfig) {
        self.block_sq.clear();
        self.block_samples.clear();
        for (j, d) in data.iter().enumerate() {
            self.step(d, graph, config);
            self.observe(config.is_sample(first_step + j + 1));
        }
    }
}

/// One realization, sampled every `stride` steps.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub index: usize,
    /// Sampled times.
    pub times: Vec<f64>,
    pub truth: Vec<Vector>,
    /// `[sample][node]`.
    pub node_estimates: Vec<Vec<Vector>>,
    pub central_estimate: Vec<Vector>,
    pub p_central: Vec<Matrix>,
    /// `[sample][node]`.
    pub p_nodes: Vec<Vec<Matrix>>,
    /// `[sample][node]` smallest eigenvalue of `P_i`.
    pub lambda_min_log: Vec<Vec<f64>>,
    /// Per step: `||x - xhat_c||^2`.
    pub sq_error_central: Vec<f64>,
    /// Per step, per node: `||x - xhat_i||^2`.
    pub sq_error_nodes: Vec<Vec<f64>>,
    pub indefinite: Vec<Option<IndefiniteEvent>>,
}

/// Monte Carlo statistics. Per-step series have `steps + 1` entries;
/// `[sample]` series follow `sample_times`.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub realizations: usize,
    pub h: f64,
    pub mse_central: Vec<f64>,
    /// `[step][node]`.
    pub mse_nodes: Vec<Vec<f64>>,
    pub sample_steps: Vec<usize>,
    pub sample_times: Vec<f64>,
    /// `[sample][node]`.
    pub empirical_cov_nodes: Vec<Vec<Matrix>>,
    pub empirical_cov_central: Vec<Matrix>,
    /// `[sample][node]`.
    pub mean_error: Vec<Vec<Vector>>,
    /// `[sample][node]` standard error of each mean-error component.
    pub mean_error_se: Vec<Vec<Vector>>,
    pub mean_error_central: Vec<Vector>,
    /// Riccati solution of the centralized filter at the sampled times.
    pub p_central: Vec<Matrix>,
    /// `[sample][node]` covariance propagated by each node.
    pub p_nodes: Vec<Vec<Matrix>>,
    /// `[sample][node]` `||empirical P_i - P||_F`.
    pub cov_gap: Vec<Vec<f64>>,
    /// `[sample][node]` Monte Carlo standard error of `cov_gap`.
    pub cov_gap_se: Vec<Vec<f64>>,
    /// Empirical covariance of the stacked node errors at `t_end` (`Nn x Nn`).
    pub aggregate_cov_final: Matrix,
    pub lambda_min_log: Vec<Vec<f64>>,
    pub indefinite: Vec<Option<IndefiniteEvent>>,
}

impl McSummary {
    /// `max_i ||empirical P_i(t_end) - P(t_end)||_F`.
    pub fn terminal_gap(&self) -> f64 {
        self.cov_gap.last().map_or(0.0, |row| row.iter().copied().fold(0.0, f64::max))
    }

    /// Standard error attached to [`McSummary::terminal_gap`] (largest over nodes).
    pub fn terminal_gap_se(&self) -> f64 {
        self.cov_gap_se.last().map_or(0.0, |row| row.iter().copied().fold(0.0, f64::max))
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.h
    }
}

fn initial_estimates(scenario: &Scenario, config: &SimConfig) -> Vec<Vector> {
    let nodes = scenario.nodes();
    match config.init {
        Initialization::Matched => vec![scenario.plant.x0.clone(); nodes],
        Initialization::Random => random_initial_estimates(config.seed, nodes, scenario.plant.dim()),
    }
}

fn check_inputs(scenario: &Scenario, config: &SimConfig) -> Result<()> {
    config.validate()?;
    if scenario.graph.node_count() != scenario.nodes() {
        return Err(Error::Dimension("graph and sensor counts differ".into()));
    }
    Ok(())
}

/// Drive `realizations` through the whole horizon in blocks, handing each
/// block's per-realization output to `reduce` in index order.
fn drive<'s>(
    scenario: &'s Scenario,
    config: &SimConfig,
    realizations: &mut [Realization],
    first_index: usize,
    mut reduce: impl FnMut(usize, &[Realization]),
) -> Result<Schedule<'s>> {
    let mut schedule = Schedule::new(scenario, *config)?;
    let steps = config.steps();
    reduce(0, realizations);
    let mut start = 0;
    while start < steps {
        let end = (start + BLOCK_STEPS).min(steps);
        let data: Vec<StepData> = (start..end).map(|_| schedule.next()).collect::<Result<_>>()?;
        realizations.par_iter_mut().for_each(|r| r.run_block(&data, start, &scenario.graph, config));
        for (offset, r) in realizations.iter().enumerate() {
            if !r.is_finite() {
                return Err(Error::Realization {
                    index: first_index + offset,
                    source: Box::new(Error::Numerical { what: "state became non-finite".into(), step: end, t: end as f64 * config.h }),
                });
            }
        }
        reduce(start + 1, realizations);
        start = end;
    }
    Ok(schedule)
}

pub fn run_realization(scenario: &Scenario, config: &SimConfig, index: usize) -> Result<SimulationTrace> {
    check_inputs(scenario, config)?;
    let nodes = scenario.nodes();
    let init = initial_estimates(scenario, config);
    let mut one = vec![Realization::new(scenario, config, index, &init, true)];
    let mut sq_central = Vec::with_capacity(config.steps() + 1);
    let mut sq_nodes = Vec::with_capacity(config.steps() + 1);
    let schedule = drive(scenario, config, &mut one, index, |_, rs| {
        for row in rs[0].block_sq.chunks(nodes + 1) {
            sq_nodes.push(row[..nodes].to_vec());
            sq_central.push(row[nodes]);
        }
    })
    .map_err(|e| match e {
        Error::Realization { .. } => e,
        other => Error::Realization { index, source: Box::new(other) },
    })?;
    let states = one.pop().and_then(|r| r.states).unwrap_or_default();
    let times = config.sample_steps().into_iter().map(|k| k as f64 * config.h).collect();
    let mut trace = SimulationTrace {
        index,
        times,
        truth: Vec::with_capacity(states.len()),
        node_estimates: Vec::with_capacity(states.len()),
        central_estimate: Vec::with_capacity(states.len()),
        p_central: schedule.samples.p_central,
        p_nodes: schedule.samples.p_nodes,
        lambda_min_log: schedule.samples.lambda_min,
        sq_error_central: sq_central,
        sq_error_nodes: sq_nodes,
        indefinite: schedule.indefinite,
    };
    for s in states {
        trace.truth.push(s.truth);
        trace.node_estimates.push(s.nodes);
        trace.central_estimate.push(s.central);
    }
    Ok(trace)
}

/// Error statistics of one sampled time across realizations.
struct SampleStats {
    mean: Vec<Vector>,
    mean_se: Vec<Vector>,
    cov: Vec<Matrix>,
    aggregate: Option<Matrix>,
}

fn sample_stats(errors: &[&[f64]], n: usize, blocks: usize, divisor: f64, aggregate: bool) -> SampleStats {
    let m = errors.len() as f64;
    let len = n * blocks;
    let mut mean = vec![0.0; len];
    for e in errors {
        for (acc, v) in mean.iter_mut().zip(e.iter()) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let centered: Vec<Vector> = errors.iter().map(|e| Vector::from_fn(len, |i, _| e[i] - mean[i])).collect();
    let mut cov = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let mut acc = Matrix::zeros(n, n);
        for e in &centered {
            let part = e.rows(b * n, n);
            acc.ger(1.0, &part, &part, 1.0);
        }
        acc /= divisor;
        symmetrize_in_place(&mut acc);
        cov.push(acc);
    }
    let aggregate = aggregate.then(|| {
        let nodes = blocks - 1;
        let mut acc = Matrix::zeros(n * nodes, n * nodes);
        for e in &centered {
            let part = e.rows(0, n * nodes);
            acc.ger(1.0, &part, &part, 1.0);
        }
        acc /= divisor;
        symmetrize_in_place(&mut acc);
        acc
    });
    let mean_vectors = (0..blocks).map(|b| Vector::from_column_slice(&mean[b * n..(b + 1) * n])).collect();
    let mean_se = cov
        .iter()
        .map(|c| Vector::from_fn(n, |i, _| (c[(i, i)] / m).sqrt()))
        .collect();
    SampleStats { mean: mean_vectors, mean_se, cov, aggregate }
}

/// Standard error of `||S - P||_F` for an empirical covariance `S` from
/// `m` samples, using `var(S_ab) ~ (S_aa S_bb + S_ab^2) / (m - 1)` and a
/// first-order expansion of the norm.
fn gap_standard_error(s: &Matrix, p: &Matrix, m: usize) -> f64 {
    let d = s - p;
    let gap = d.norm();
    let dof = (m.max(2) - 1) as f64;
    let var_entry = |a: usize, b: usize| (s[(a, a)] * s[(b, b)] + s[(a, b)] * s[(a, b)]) / dof;
    if gap == 0.0 {
        let total: f64 = (0..s.nrows()).flat_map(|a| (0..s.ncols()).map(move |b| (a, b))).map(|(a, b)| var_entry(a, b)).sum();
        return total.sqrt();
    }
    let mut var = 0.0;
    for a in 0..s.nrows() {
        for b in 0..s.ncols() {
            let w = d[(a, b)] / gap;
            var += w * w * var_entry(a, b);
        }
    }
    var.sqrt()
}

pub fn monte_carlo(scenario: &Scenario, config: &SimConfig) -> Result<McSummary> {
    check_inputs(scenario, config)?;
    let nodes = scenario.nodes();
    let n = scenario.plant.dim();
    let m = config.realizations;
    let steps = config.steps();
    let init = initial_estimates(scenario, config);
    let mut realizations: Vec<Realization> =
        (0..m).map(|r| Realization::new(scenario, config, r, &init, false)).collect();
    let divisor = if config.unbiased { (m.max(2) - 1) as f64 } else { m as f64 };

    let mut mse_central = Vec::with_capacity(steps + 1);
    let mut mse_nodes = Vec::with_capacity(steps + 1);
    let mut stats: Vec<SampleStats> = Vec::new();
    let mut sample_cursor = 0;
    let sample_steps = config.sample_steps();

    let schedule = drive(scenario, config, &mut realizations, 0, |_, rs| {
        let rows = rs[0].block_sq.len() / (nodes + 1);
        for j in 0..rows {
            let mut acc = vec![0.0; nodes + 1];
            for r in rs {
                for (a, v) in acc.iter_mut().zip(&r.block_sq[j * (nodes + 1)..(j + 1) * (nodes + 1)]) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|v| *v /= m as f64);
            mse_central.push(acc[nodes]);
            acc.truncate(nodes);
            mse_nodes.push(acc);
        }
        for s in 0..rs[0].block_samples.len() {
            let errors: Vec<&[f64]> = rs.iter().map(|r| r.block_samples[s].as_slice()).collect();
            let last = sample_steps[sample_cursor] == steps;
            stats.push(sample_stats(&errors, n, nodes + 1, divisor, last));
            sample_cursor += 1;
        }
    })?;

    let ScheduleSamples { p_central, p_nodes, lambda_min } = schedule.samples;
    let indefinite = schedule.indefinite;
    let mut summary = McSummary {
        realizations: m,
        h: config.h,
        mse_central,
        mse_nodes,
        sample_times: sample_steps.iter().map(|&k| k as f64 * config.h).collect(),
        sample_steps,
        empirical_cov_nodes: Vec::with_capacity(stats.len()),
        empirical_cov_central: Vec::with_capacity(stats.len()),
        mean_error: Vec::with_capacity(stats.len()),
        mean_error_se: Vec::with_capacity(stats.len()),
        mean_error_central: Vec::with_capacity(stats.len()),
        cov_gap: Vec::with_capacity(stats.len()),
        cov_gap_se: Vec::with_capacity(stats.len()),
        aggregate_cov_final: Matrix::zeros(n * nodes, n * nodes),
        p_central,
        p_nodes,
        lambda_min_log: lambda_min,
        indefinite,
    };
    for (s, mut st) in stats.into_iter().enumerate() {
        let p = &summary.p_central[s];
        summary.cov_gap.push(st.cov[..nodes].iter().map(|c| (c - p).norm()).collect());
        summary.cov_gap_se.push(st.cov[..nodes].iter().map(|c| gap_standard_error(c, p, m)).collect());
        if let Some(agg) = st.aggregate.take() {
            summary.aggregate_cov_final = agg;
        }
        summary.empirical_cov_central.push(st.cov.pop().expect("central block"));
        summary.mean_error_central.push(st.mean.pop().expect("central block"));
        st.mean_se.pop();
        summary.empirical_cov_nodes.push(st.cov);
        summary.mean_error.push(st.mean);
        summary.mean_error_se.push(st.mean_se);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphTopology;
    use crate::model::TimeVaryingMatrix;

    fn scalar_scenario(nodes: usize, a: f64, w: f64, r: f64) -> Scenario {
        let s = |v: f64| TimeVaryingMatrix::constant(&Matrix::from_element(1, 1, v));
        let plant = PlantModel::new(s(a), s(w), Vector::zeros(1), Matrix::identity(1, 1)).unwrap();
        let sensors = (0..nodes).map(|_| SensorModel::new(s(1.0), s(r)).unwrap()).collect();
        let graph = if nodes == 1 { GraphTopology::new(1, &[]).unwrap() } else { GraphTopology::path(nodes) };
        Scenario {
            name: "scalar".into(),
            plant,
            sensors,
            graph,
            kappa: 0.0,
            consensus: ConsensusParams::new(20.0, 0.7, 10.0).unwrap(),
            sim: crate::scenario::SimSection {
                h: 1e-3,
                t_end: 1.0,
                realizations: 1,
                seed: 0,
                stride: None,
                init: None,
            },
        }
    }

    #[test]
    fn sqrt_psd_examples() {
        assert_eq!(sqrt_psd(&Matrix::identity(3, 3)).unwrap(), Matrix::identity(3, 3));
        let w = Matrix::from_diagonal(&Vector::from_vec(vec![0.0, 0.0, 1.0, 1.0]));
        assert!((sqrt_psd(&w).unwrap() - &w).norm() < 1e-15);
        let w = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = sqrt_psd(&w).unwrap();
        assert!((&s * s.transpose() - &w).norm() < 1e-12);
        assert!(sqrt_psd(&Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(sqrt_psd(&Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1e-3]))).is_err());
    }

    #[test]
    fn truth_step_examples() {
        let s = |v: f64| TimeVaryingMatrix::constant(&Matrix::from_element(1, 1, v));
        let noiseless = PlantModel::new(s(2.0), s(0.0), Vector::zeros(1), Matrix::identity(1, 1)).unwrap();
        let mut rng = realization_rng(1, 0);
        let x = Vector::from_element(1, 1.5);
        assert_eq!(truth_step(&x, &noiseless, 0.0, 0.1, &mut rng).unwrap()[0], 1.5 + 0.1 * 2.0 * 1.5);
        assert_eq!(truth_step(&Vector::zeros(1), &noiseless, 0.0, 0.1, &mut rng).unwrap()[0], 0.0);

        let walk = PlantModel::new(s(0.0), s(1.0), Vector::zeros(1), Matrix::identity(1, 1)).unwrap();
        let h = 1e-2;
        let draws = 100_000;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let dx = truth_step(&Vector::zeros(1), &walk, 0.0, h, &mut rng).unwrap()[0];
            sum_sq += dx * dx;
        }
        // chi-square with 1e5 dof: relative sd ~ 0.45%
        let var = sum_sq / draws as f64;
        assert!((var / h - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn measurement_noise_scales_with_step() {
        let s = |v: f64| TimeVaryingMatrix::constant(&Matrix::from_element(1, 1, v));
        let sensor = SensorModel::new(s(1.0), s(0.02)).unwrap();
        let mut rng = realization_rng(3, 0);
        let draws = 100_000;
        let x = Vector::from_element(1, 0.0);
        let var = (0..draws).map(|_| measure(&x, &sensor, 0.0, 1e-4, &mut rng).unwrap()[0].powi(2)).sum::<f64>()
            / draws as f64;
        assert!((var / 200.0 - 1.0).abs() < 0.05, "variance {var}");

        let blind = SensorModel::new(TimeVaryingMatrix::constant(&Matrix::from_row_slice(1, 2, &[1.0, 0.0])), s(1.0)).unwrap();
        assert_eq!(expected_measurement(&Vector::from_vec(vec![0.0, 3.0]), &blind, 0.0)[0], 0.0);
        let singular = SensorModel::new(s(1.0), s(0.0)).unwrap();
        assert!(measure(&x, &singular, 0.0, 1e-4, &mut rng).is_err());
    }

    #[test]
    fn config_validation() {
        let p = ConsensusParams::new(20.0, 0.7, 10.0).unwrap();
        assert!(SimConfig::new(1e-3, 1.0, 1, 0, 0.0, p).validate().is_ok());
        assert!(SimConfig::new(0.0, 1.0, 1, 0, 0.0, p).validate().is_err());
        assert!(SimConfig::new(1e-3, 1e-4, 1, 0, 0.0, p).validate().is_err());
        assert!(SimConfig::new(1e-3, 1.0, 0, 0, 0.0, p).validate().is_err());
        assert!(SimConfig::new(1e-3, 1.0, 1, 0, -1.0, p).validate().is_err());
        let mut c = SimConfig::new(1e-3, 1.0, 1, 0, 0.0, p);
        c.stride = 300;
        assert_eq!(c.sample_steps(), vec![0, 300, 600, 900, 1000]);
    }

    #[test]
    fn noiseless_central_filter_has_zero_error() {
        let scenario = scalar_scenario(2, 0.5, 0.0, 0.1);
        let mut config = scenario.sim_config().unwrap();
        config.noise = NoiseSwitches::NONE;
        let trace = run_realization(&scenario, &config, 0).unwrap();
        assert!(trace.sq_error_central.iter().all(|&e| e == 0.0));
        assert_eq!(trace.sq_error_central.len(), config.steps() + 1);
    }

    #[test]
    fn single_node_matches_central() {
        let scenario = scalar_scenario(1, 0.3, 1.0, 0.2);
        let config = scenario.sim_config().unwrap();
        let trace = run_realization(&scenario, &config, 5).unwrap();
        for (c, nodes) in trace.sq_error_central.iter().zip(&trace.sq_error_nodes) {
            assert_eq!(*c, nodes[0]);
        }
    }

    #[test]
    fn realizations_are_reproducible_and_distinct() {
        let scenario = scalar_scenario(3, 0.3, 1.0, 0.2);
        let config = scenario.sim_config().unwrap();
        let a = run_realization(&scenario, &config, 2).unwrap();
        let b = run_realization(&scenario, &config, 2).unwrap();
        let c = run_realization(&scenario, &config, 3).unwrap();
        assert_eq!(a.sq_error_nodes, b.sq_error_nodes);
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn single_realization_mse_is_its_squared_error() {
        let scenario = scalar_scenario(2, 0.3, 1.0, 0.2);
        let mut config = scenario.sim_config().unwrap();
        config.realizations = 1;
        let mc = monte_carlo(&scenario, &config).unwrap();
        let trace = run_realization(&scenario, &config, 0).unwrap();
        assert_eq!(mc.mse_central, trace.sq_error_central);
        assert_eq!(mc.mse_nodes, trace.sq_error_nodes);
    }

    #[test]
    fn empirical_covariance_recovers_known_sigma() {
        use rand_distr::Distribution;
        let sigma = Matrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let l = sigma.clone().cholesky().unwrap().unpack();
        let mut rng = realization_rng(11, 0);
        let samples: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                let z = Vector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
                let e = &l * z;
                // one "node" block plus a dummy central block
                vec![e[0], e[1], 0.0, 0.0]
            })
            .collect();
        let refs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
        let stats = sample_stats(&refs, 2, 2, 999.0, true);
        assert!((&stats.cov[0] - &sigma).norm() / sigma.norm() < 0.15);
        assert_eq!(stats.aggregate.unwrap(), stats.cov[0]);
    }

    #[test]
    fn gap_standard_error_is_positive() {
        let s = Matrix::identity(2, 2);
        assert!(gap_standard_error(&s, &s, 50) > 0.0);
        assert!(gap_standard_error(&s, &(s.clone() * 0.5), 50) > 0.0);
    }
}
