//! Fixed-time consensus on the local information matrices.
//!
//! Each node keeps an integrator `Q_i` and publishes `Zhat_i = Z_i - Q_i`,
//! where `Z_i = N C_i^T R_i^{-1} C_i`. The integrators follow
//! `dQ_i/dt = alpha * sum_j phi(Zhat_i - Zhat_j)` elementwise, so that every
//! `Zhat_i` reaches the network information `sum_i C_i^T R_i^{-1} C_i` in a
//! time bounded independently of the initial disagreement.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::graph::GraphTopology;
use crate::linalg::Matrix;
use crate::model::SensorModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusParams {
    pub alpha: f64,
    pub gamma: f64,
    pub xi: f64,
}

impl ConsensusParams {
    pub fn new(alpha: f64, gamma: f64, xi: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be positive, got {alpha}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
        }
        if !(xi >= 0.0 && xi.is_finite()) {
            return Err(invalid("xi", format!("must be non-negative, got {xi}")));
        }
        Ok(Self { alpha, gamma, xi })
    }

    /// `xi >= 2L / (alpha sqrt(lambda_G))`.
    pub fn is_admissible(&self, l: f64, lambda_g: f64) -> Result<bool> {
        Ok(self.xi >= min_xi(l, self.alpha, lambda_g)?)
    }

    pub fn t_max(&self, g: &GraphTopology) -> Result<f64> {
        t_max(g.edge_count(), self.alpha, self.gamma, g.algebraic_connectivity())
    }
}

/// `(|x|^(1-gamma) + |x|^(1+gamma) + xi) sgn(x)`.
#[inline]
pub fn phi(x: f64, xi: f64, gamma: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let m = x.abs();
    (m.powf(1.0 - gamma) + m.powf(1.0 + gamma) + xi).copysign(x)
}

/// Smallest admissible `xi`: `2L / (alpha sqrt(lambda_G))`.
pub fn min_xi(l: f64, alpha: f64, lambda_g: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if !(lambda_g > 0.0) {
        return Err(invalid("lambda_g", format!("must be positive, got {lambda_g}")));
    }
    if !(l >= 0.0) {
        return Err(invalid("L", format!("must be non-negative, got {l}")));
    }
    Ok(2.0 * l / (alpha * lambda_g.sqrt()))
}

/// Settling-time bound `ell pi / (alpha gamma lambda_G)` in seconds.
pub fn t_max(edges: usize, alpha: f64, gamma: f64, lambda_g: f64) -> Result<f64> {
    if edges == 0 {
        return Err(invalid("ell", "edge count must be positive"));
    }
    if !(alpha > 0.0) {
        return Err(invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    if !(lambda_g > 0.0) {
        return Err(invalid("lambda_g", format!("must be positive, got {lambda_g}")));
    }
    Ok(edges as f64 * PI / (alpha * gamma * lambda_g))
}

/// How the discontinuous integrator dynamics are stepped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Discretization {
    /// Plain explicit Euler; `sgn` treats `|x| < deadband` as zero. Chatters
    /// with amplitude about `h alpha xi` once consensus is reached.
    Euler { deadband: f64 },
    /// Explicit Euler whose per-edge flow is capped at `|d| / (1 + max(deg_i, deg_j))`
    /// so a step never overshoots the pairwise agreement point. Away from
    /// consensus it coincides with Euler; close to it the update becomes a
    /// Metropolis averaging step, which settles on the sliding set instead of
    /// chattering around it.
    #[default]
    Saturated,
}

pub const DEFAULT_DEADBAND: f64 = 1e-9;

/// `N C_i(t)^T R_i(t)^{-1} C_i(t)`.
pub fn local_information(sensor: &SensorModel, t: f64, nodes: usize) -> Result<Matrix> {
    Ok(sensor.information(t)? * nodes as f64)
}

pub fn local_informations(sensors: &[SensorModel], t: f64) -> Result<Vec<Matrix>> {
    sensors.iter().map(|s| local_information(s, t, sensors.len())).collect()
}

/// Integrators `Q_i` and published estimates `Zhat_i` for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    q: Vec<Matrix>,
    zhat: Vec<Matrix>,
}

impl ConsensusState {
    /// `Q_i(0) = 0`, hence `Zhat_i(0) = Z_i(0)`.
    pub fn new(z_locals: &[Matrix]) -> Self {
        let q = z_locals.iter().map(|z| Matrix::zeros(z.nrows(), z.ncols())).collect();
        Self { q, zhat: z_locals.to_vec() }
    }

    /// Custom integrator initialization. The caller is responsible for `sum_i Q_i = 0`.
    pub fn with_integrators(q: Vec<Matrix>, z_locals: &[Matrix]) -> Self {
        let zhat = z_locals.iter().zip(&q).map(|(z, q)| z - q).collect();
        Self { q, zhat }
    }

    pub fn nodes(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self, node: usize) -> &Matrix {
        &self.q[node]
    }

    pub fn zhat(&self, node: usize) -> &Matrix {
        &self.zhat[node]
    }

    pub fn zhats(&self) -> &[Matrix] {
        &self.zhat
    }

    pub fn q_sum(&self) -> Matrix {
        let mut sum = Matrix::zeros(self.q[0].nrows(), self.q[0].ncols());
        for q in &self.q {
            sum += q;
        }
        sum
    }

    /// `max_i ||Zhat_i - target||_F`.
    pub fn disagreement(&self, target: &Matrix) -> f64 {
        self.zhat.iter().map(|z| (z - target).norm()).fold(0.0, f64::max)
    }

    /// Advance the integrators one step of length `h` using the current
    /// `Zhat` values, then republish `Zhat_i = Z_i - Q_i` with `z_next`
    /// (the local information at the new time).
    pub fn advance(
        &mut self,
        z_next: &[Matrix],
        graph: &GraphTopology,
        params: &ConsensusParams,
        h: f64,
        scheme: Discretization,
    ) {
        let degrees = graph.degrees();
        let (rows, cols) = self.zhat[0].shape();
        let step = h * params.alpha;
        for &(i, j) in graph.edges() {
            let cap = 1.0 / (1.0 + degrees[i].max(degrees[j]) as f64);
            for c in 0..cols {
                for r in 0..rows {
                    let d = self.zhat[i][(r, c)] - self.zhat[j][(r, c)];
                    let flow = match scheme {
                        Discretization::Euler { deadband } => {
                            if d.abs() < deadband {
                                0.0
                            } else {
                                step * phi(d, params.xi, params.gamma)
                            }
                        }
                        Discretization::Saturated => {
                            if d == 0.0 {
                                0.0
                            } else {
                                let euler = step * phi(d, params.xi, params.gamma);
                                euler.abs().min(cap * d.abs()).copysign(d)
                            }
                        }
                    };
                    self.q[i][(r, c)] += flow;
                    self.q[j][(r, c)] -= flow;
                }
            }
        }
        for ((zhat, z), q) in self.zhat.iter_mut().zip(z_next).zip(&self.q) {
            zhat.copy_from(z);
            *zhat -= q;
        }
    }
}

/// Functional form of [`ConsensusState::advance`].
pub fn consensus_step(
    state: &ConsensusState,
    z_next: &[Matrix],
    graph: &GraphTopology,
    params: &ConsensusParams,
    h: f64,
    scheme: Discretization,
) -> Result<ConsensusState> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    if z_next.len() != state.nodes() || graph.node_count() != state.nodes() {
        return Err(crate::Error::Dimension(format!(
            "consensus state has {} nodes, graph {}, inputs {}",
            state.nodes(),
            graph.node_count(),
            z_next.len()
        )));
    }
    let mut next = state.clone();
    next.advance(z_next, graph, params, h, scheme);
    Ok(next)
}

/// Step-size guidance `min(1e-4, 0.1 / (alpha (xi + initial disagreement)))`.
pub fn suggested_step(params: &ConsensusParams, initial_disagreement: f64) -> f64 {
    (0.1 / (params.alpha * (params.xi + initial_disagreement))).min(1e-4)
}

/// Result of running the protocol alone on a sensor set's `Z_i(t)`.
#[derive(Debug, Clone)]
pub struct ConsensusRun {
    pub times: Vec<f64>,
    /// `[sample][node]` Frobenius distance of `Zhat_i` to `sum_j C_j^T R_j^{-1} C_j`.
    pub disagreement: Vec<Vec<f64>>,
    /// Largest `||sum_i Q_i||` entry seen over the run.
    pub max_q_sum: f64,
    /// First sampled time after which every later sample stays below the threshold.
    pub settled_at: Option<f64>,
}

pub fn run_consensus(
    sensors: &[SensorModel],
    graph: &GraphTopology,
    params: &ConsensusParams,
    h: f64,
    t_end: f64,
    stride: usize,
    threshold: f64,
    scheme: Discretization,
) -> Result<ConsensusRun> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    if graph.node_count() != sensors.len() {
        return Err(crate::Error::Dimension(format!(
            "graph has {} nodes but {} sensors were given",
            graph.node_count(),
            sensors.len()
        )));
    }
    let stride = stride.max(1);
    let steps = (t_end / h).round() as usize;
    let mut state = ConsensusState::new(&local_informations(sensors, 0.0)?);
    let mut run = ConsensusRun { times: Vec::new(), disagreement: Vec::new(), max_q_sum: 0.0, settled_at: None };
    let record = |k: usize, state: &ConsensusState, run: &mut ConsensusRun| -> Result<()> {
        let t = k as f64 * h;
        let target = crate::model::network_information(sensors, t)?;
        let row: Vec<f64> = (0..state.nodes()).map(|i| (state.zhat(i) - &target).norm()).collect();
        let worst = row.iter().copied().fold(0.0, f64::max);
        if worst < threshold {
            run.settled_at.get_or_insert(t);
        } else {
            run.settled_at = None;
        }
        run.times.push(t);
        run.disagreement.push(row);
        Ok(())
    };
    record(0, &state, &mut run)?;
    for k in 1..=steps {
        let z = local_informations(sensors, k as f64 * h)?;
        state.advance(&z, graph, params, h, scheme);
        run.max_q_sum = run.max_q_sum.max(crate::linalg::max_abs(&state.q_sum()));
        if k % stride == 0 || k == steps {
            record(k, &state, &mut run)?;
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn phi_values() {
        assert_eq!(phi(0.0, 10.0, 0.7), 0.0);
        assert_eq!(phi(1.0, 10.0, 0.7), 12.0);
        // 4^0.5 + 4^1.5 + 0.5
        assert!((phi(-4.0, 0.5, 0.5) - (-10.5)).abs() < 1e-12);
    }

    #[test]
    fn xi_and_settling_time_formulas() {
        assert_eq!(min_xi(0.0, 20.0, 0.5).unwrap(), 0.0);
        assert!((min_xi(10.0, 20.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((min_xi(2.0, 20.0, 0.25).unwrap() - 0.4).abs() < 1e-15);
        assert!(min_xi(1.0, 0.0, 1.0).is_err());
        assert!(min_xi(1.0, 1.0, 0.0).is_err());

        assert!((t_max(2, 20.0, 0.7, 1.0).unwrap() - PI / 7.0).abs() < 1e-15);
        assert!((t_max(3, 20.0, 0.5, 3.0).unwrap() - PI / 10.0).abs() < 1e-15);
        assert!(t_max(1, PI, 1.0, 1.0).is_err());
        assert!(t_max(0, 1.0, 0.5, 1.0).is_err());
        assert!(ConsensusParams::new(20.0, 1.0, 10.0).is_err());
        assert!(ConsensusParams::new(-1.0, 0.5, 10.0).is_err());
    }

    #[test]
    fn identical_inputs_are_a_fixed_point() {
        let g = GraphTopology::ring(4);
        let z = Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let locals = vec![z.clone(); 4];
        let params = ConsensusParams::new(20.0, 0.7, 10.0).unwrap();
        for scheme in [Discretization::Saturated, Discretization::Euler { deadband: DEFAULT_DEADBAND }] {
            let mut state = ConsensusState::new(&locals);
            for _ in 0..100 {
                state.advance(&locals, &g, &params, 1e-4, scheme);
            }
            for i in 0..4 {
                assert_eq!(state.q(i), &Matrix::zeros(2, 2));
                assert_eq!(state.zhat(i), &z);
            }
        }
    }

    #[test]
    fn single_edge_step_by_hand() {
        let g = GraphTopology::path(2);
        let params = ConsensusParams::new(20.0, 0.7, 10.0).unwrap();
        let locals = vec![Matrix::from_element(1, 1, 1.0), Matrix::zeros(1, 1)];
        let h = 1e-4;
        let state = ConsensusState::new(&locals);
        let next = consensus_step(&state, &locals, &g, &params, h, Discretization::Euler { deadband: 0.0 }).unwrap();
        let expected = h * 20.0 * 12.0;
        assert!((next.q(0)[(0, 0)] - expected).abs() < 1e-15);
        assert!((next.q(1)[(0, 0)] + expected).abs() < 1e-15);
        assert!((next.zhat(0)[(0, 0)] - (1.0 - expected)).abs() < 1e-15);
        // the saturated scheme agrees while the flow is below the cap
        let sat = consensus_step(&state, &locals, &g, &params, h, Discretization::Saturated).unwrap();
        assert_eq!(sat, next);
    }

    #[test]
    fn saturated_scheme_caps_overshoot() {
        let g = GraphTopology::path(2);
        let params = ConsensusParams::new(20.0, 0.7, 10.0).unwrap();
        let locals = vec![Matrix::from_element(1, 1, 1e-3), Matrix::zeros(1, 1)];
        let next = consensus_step(&ConsensusState::new(&locals), &locals, &g, &params, 1e-4, Discretization::Saturated)
            .unwrap();
        // cap = 1/2 of the gap: both nodes meet halfway
        assert!((next.zhat(0)[(0, 0)] - 5e-4).abs() < 1e-18);
        assert!((next.zhat(1)[(0, 0)] - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_step_and_sizes() {
        let g = GraphTopology::path(2);
        let params = ConsensusParams::new(20.0, 0.7, 10.0).unwrap();
        let locals = vec![Matrix::zeros(1, 1); 2];
        let state = ConsensusState::new(&locals);
        assert!(consensus_step(&state, &locals, &g, &params, 0.0, Discretization::Saturated).is_err());
        assert!(consensus_step(&state, &locals[..1], &g, &params, 1e-4, Discretization::Saturated).is_err());
    }

    fn random_sym(rng: &mut impl rand::Rng, n: usize, scale: f64) -> Matrix {
        let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-scale..scale));
        (&m + m.transpose()) * 0.5
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn phi_is_odd(x in -1e3..1e3f64, xi in 0.0..20.0f64, gamma in 0.01..0.99f64) {
            prop_assert_eq!(phi(-x, xi, gamma), -phi(x, xi, gamma));
        }

        #[test]
        fn integrators_stay_zero_sum(g in crate::graph::tests::arb_connected_graph(), seed in any::<u64>(), euler in any::<bool>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let locals: Vec<Matrix> = (0..g.node_count()).map(|_| random_sym(&mut rng, 3, 50.0)).collect();
            let params = ConsensusParams::new(20.0, 0.7, 10.0).unwrap();
            let scheme = if euler { Discretization::Euler { deadband: DEFAULT_DEADBAND } } else { Discretization::Saturated };
            let mut state = ConsensusState::new(&locals);
            let steps = 2000;
            for _ in 0..steps {
                state.advance(&locals, &g, &params, 1e-4, scheme);
                for i in 0..g.node_count() {
                    prop_assert_eq!(state.zhat(i), &state.zhat(i).transpose());
                }
            }
            prop_assert!(crate::linalg::max_abs(&state.q_sum()) < 1e-9 * steps as f64);
        }

        #[test]
        fn fixed_time_convergence(g in crate::graph::tests::arb_connected_graph(), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let locals: Vec<Matrix> = (0..g.node_count()).map(|_| random_sym(&mut rng, 3, 50.0)).collect();
            let mean = locals.iter().fold(Matrix::zeros(3, 3), |acc, z| acc + z) / g.node_count() as f64;
            let params = ConsensusParams::new(20.0, 0.7, 10.0).unwrap();
            let horizon = params.t_max(&g).unwrap();
            let initial = locals.iter().map(|z| (z - &mean).norm()).fold(0.0, f64::max);
            let h = suggested_step(&params, initial);
            let mut state = ConsensusState::new(&locals);
            let steps = (horizon / h).ceil() as usize;
            for _ in 0..steps {
                state.advance(&locals, &g, &params, h, Discretization::Saturated);
            }
            prop_assert!(state.disagreement(&mean) < 1e-3, "disagreement {} after {horizon}s", state.disagreement(&mean));
        }
    }
}
