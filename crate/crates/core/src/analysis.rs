//! Closed-form gain bounds, aggregate error matrices and a randomized suite
//! of the algebraic identities the filter relies on.

use rand::Rng;

use crate::centralized::{riccati_rhs, riccati_step, steady_state_covariance, Integrator, SteadyStateOptions};
use crate::error::{invalid, Error, Result};
use crate::graph::GraphTopology;
use crate::linalg::{
    asymmetry, block_diag, disagreement_projector, lambda_max, lambda_min, ones, spectral_norm, symmetrize, vec_of,
    Matrix, Vector,
};
use crate::model::{estimate_bounds, network_information, stacked_c, stacked_r, SamplingGrid};
use crate::scenario::Scenario;

/// `c^2 / (2 r1 lambda_G)`.
pub fn kappa_sufficient(c: f64, r1: f64, lambda_g: f64) -> Result<f64> {
    for (name, v) in [("c", c), ("r1", r1), ("lambda_g", lambda_g)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be positive, got {v}")));
        }
    }
    Ok(c * c / (2.0 * r1 * lambda_g))
}

/// Terms of the time-invariant gain bound
/// `(||Pinf^-1 A + A^T Pinf^-1|| + eta) / lambda_G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantBound {
    pub lyapunov_term: f64,
    /// `4 N^2 lambda_max((Pinf^-1 W Pinf^-1 + G)^-1) lambda_max(G)`.
    pub eta: f64,
    pub value: f64,
}

/// Gain bound for a time-invariant model with steady-state covariance `pinf`.
/// `c` and `r` are the stacked output and noise matrices.
pub fn kappa_battilotti_terms(
    a: &Matrix,
    w: &Matrix,
    c: &Matrix,
    r: &Matrix,
    nodes: usize,
    lambda_g: f64,
    pinf: &Matrix,
) -> Result<InvariantBound> {
    let n = a.nrows();
    if w.shape() != (n, n) || pinf.shape() != (n, n) || c.ncols() != n || r.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::Dimension("A, W, Pinf must be n x n, C m x n, R m x m".into()));
    }
    if !(lambda_g > 0.0) {
        return Err(invalid("lambda_g", format!("must be positive, got {lambda_g}")));
    }
    let p_inv = pinf.clone().cholesky().ok_or(Error::Singular { what: "Pinf".into(), t: f64::INFINITY })?.inverse();
    let r_inv = r.clone().cholesky().ok_or(Error::Singular { what: "R".into(), t: f64::INFINITY })?.inverse();
    let g = symmetrize(&(c.transpose() * r_inv * c));
    let lyapunov_term = spectral_norm(&(&p_inv * a + a.transpose() * &p_inv));
    let m = symmetrize(&(&p_inv * w * &p_inv + &g));
    let m_min = lambda_min(&m);
    if !(m_min > 0.0) {
        return Err(Error::Singular { what: "Pinf^-1 W Pinf^-1 + G".into(), t: f64::INFINITY });
    }
    let nn = nodes as f64;
    let eta = 4.0 * nn * nn * lambda_max(&g) / m_min;
    Ok(InvariantBound { lyapunov_term, eta, value: (lyapunov_term + eta) / lambda_g })
}

pub fn kappa_battilotti(
    a: &Matrix,
    w: &Matrix,
    c: &Matrix,
    r: &Matrix,
    nodes: usize,
    lambda_g: f64,
    pinf: &Matrix,
) -> Result<f64> {
    Ok(kappa_battilotti_terms(a, w, c, r, nodes, lambda_g, pinf)?.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainBoundReport {
    /// `r1` taken as the infimum of `||R(t)||`.
    pub kappa0_paper: f64,
    /// `r1` taken as the infimum of `lambda_min(R(t))`.
    pub kappa0_strict: f64,
    /// Time-invariant scenarios only.
    pub kappa_battilotti: Option<InvariantBound>,
    pub c: f64,
    pub r1: f64,
    pub r_min_eigenvalue: f64,
    pub lambda_g: f64,
    /// Whether `lambda_g` came from an override instead of the scenario graph.
    pub lambda_g_overridden: bool,
    pub nodes: usize,
    pub l: f64,
}

/// Both sufficient-gain conventions and, for time-invariant scenarios, the
/// steady-state bound.
pub fn gain_bounds(scenario: &Scenario, lambda_g: Option<f64>) -> Result<GainBoundReport> {
    let grid = SamplingGrid::for_model(&scenario.plant, &scenario.sensors);
    let bounds = estimate_bounds(&scenario.plant, &scenario.sensors, &grid)?;
    let lg = lambda_g.unwrap_or_else(|| scenario.graph.algebraic_connectivity());
    let kappa_battilotti = if scenario.is_time_invariant() {
        let a = scenario.plant.a.eval(0.0);
        let w = scenario.plant.w.eval(0.0);
        let info = network_information(&scenario.sensors, 0.0)?;
        let pinf = steady_state_covariance(&a, &w, &info, &SteadyStateOptions::default())?;
        let c = stacked_c(&scenario.sensors, 0.0);
        let r = stacked_r(&scenario.sensors, 0.0);
        Some(kappa_battilotti_terms(&a, &w, &c, &r, scenario.nodes(), lg, &pinf)?)
    } else {
        None
    };
    Ok(GainBoundReport {
        kappa0_paper: kappa_sufficient(bounds.c, bounds.r1, lg)?,
        kappa0_strict: kappa_sufficient(bounds.c, bounds.r_min_eigenvalue, lg)?,
        kappa_battilotti,
        c: bounds.c,
        r1: bounds.r1,
        r_min_eigenvalue: bounds.r_min_eigenvalue,
        lambda_g: lg,
        lambda_g_overridden: lambda_g.is_some(),
        nodes: scenario.nodes(),
        l: bounds.l,
    })
}

fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// `diag(A - K_i C_i) - kappa diag(P_i) (Q_G kron I_n)` with `K_i = N P_i C_i^T R_i^-1`.
pub fn build_a_star(
    p_nodes: &[Matrix],
    c: &[Matrix],
    r: &[Matrix],
    a: &Matrix,
    q_g: &Matrix,
    kappa: f64,
) -> Result<Matrix> {
    let nodes = p_nodes.len();
    let n = a.nrows();
    if c.len() != nodes || r.len() != nodes || q_g.shape() != (nodes, nodes) {
        return Err(Error::Dimension(format!(
            "{nodes} covariances, {} output matrices, {} noise matrices, Laplacian {:?}",
            c.len(),
            r.len(),
            q_g.shape()
        )));
    }
    let mut closed = Vec::with_capacity(nodes);
    for i in 0..nodes {
        if p_nodes[i].shape() != (n, n) || c[i].ncols() != n {
            return Err(Error::Dimension(format!("node {i} blocks do not match n = {n}")));
        }
        let gain = crate::odeftc::local_gain(&p_nodes[i], &c[i], &r[i], nodes)?;
        closed.push(a - gain * &c[i]);
    }
    let coupling = block_diag(p_nodes) * kron(q_g, &Matrix::identity(n, n));
    Ok(block_diag(&closed) - coupling * kappa)
}

/// Aggregate disturbance covariance built from `P` and the per-node `G_i = C_i^T R_i^-1 C_i`.
pub fn sigma_disturbance(p: &Matrix, g_nodes: &[Matrix]) -> Result<Matrix> {
    let nodes = g_nodes.len();
    let n = p.nrows();
    if nodes == 0 || !p.is_square() || g_nodes.iter().any(|g| g.shape() != (n, n)) {
        return Err(Error::Dimension("P and every G_i must be n x n, with at least one node".into()));
    }
    let nn = nodes as f64;
    let g = g_nodes.iter().fold(Matrix::zeros(n, n), |acc, gi| acc + gi);
    let g_d = block_diag(g_nodes);
    let i_p = kron(&Matrix::identity(nodes, nodes), p);
    let u_p = kron(&ones(nodes), p);
    let sigma = &i_p * &g_d * &i_p * (nn * nn) - &u_p * &g_d * &i_p * nn - &i_p * &g_d * &u_p * nn
        + kron(&ones(nodes), &(p * g * p));
    Ok(sigma)
}

/// `X = P_agg - U_N kron P` and `max_i ||P_agg[i,i] - P||_F`.
pub fn covariance_mismatch(aggregate: &Matrix, p: &Matrix, nodes: usize) -> Result<(Matrix, f64)> {
    let n = p.nrows();
    if aggregate.shape() != (n * nodes, n * nodes) || !p.is_square() {
        return Err(Error::Dimension(format!(
            "aggregate is {:?}, expected {}x{}",
            aggregate.shape(),
            n * nodes,
            n * nodes
        )));
    }
    let x = aggregate - kron(&ones(nodes), p);
    let gap = (0..nodes).map(|i| x.view((i * n, i * n), (n, n)).norm()).fold(0.0, f64::max);
    Ok((x, gap))
}

/// Integrate `de/dt = A*(kappa, t) e` with every `P_i` equal to the centralized
/// `P(t)` (explicit Euler on both). Returns `(||e(0)||, ||e(t_end)||)`.
pub fn aggregate_error_decay(scenario: &Scenario, kappa: f64, e0: &Vector, t_end: f64, h: f64) -> Result<(f64, f64)> {
    let nodes = scenario.nodes();
    let n = scenario.plant.dim();
    if e0.len() != nodes * n {
        return Err(Error::Dimension(format!("e0 has {} entries, expected {}", e0.len(), nodes * n)));
    }
    let q_g = scenario.graph.laplacian();
    let steps = (t_end / h).round() as usize;
    let mut p = scenario.plant.p0.clone();
    let mut e = e0.clone();
    for k in 0..steps {
        let t = k as f64 * h;
        let a = scenario.plant.a.eval(t);
        let c: Vec<Matrix> = scenario.sensors.iter().map(|s| s.c.eval(t)).collect();
        let r: Vec<Matrix> = scenario.sensors.iter().map(|s| s.r.eval(t)).collect();
        let a_star = build_a_star(&vec![p.clone(); nodes], &c, &r, &a, &q_g, kappa)?;
        e += &a_star * &e * h;
        let info = network_information(&scenario.sensors, t)?;
        p += riccati_rhs(&p, &a, &scenario.plant.w.eval(t), &info) * h;
        p = symmetrize(&p);
    }
    Ok((e0.norm(), e.norm()))
}

/// Outcome of one family of randomized identity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest error seen, in the same units as `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    /// Description of the first failing instance.
    pub first_failure: Option<String>,
}

impl IdentityCheck {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, trials: 0, failures: 0, worst: 0.0, tolerance, first_failure: None }
    }

    fn record(&mut self, error: f64, instance: impl FnOnce() -> String) {
        self.trials += 1;
        if error.is_nan() || error > self.worst {
            self.worst = error;
        }
        if !(error < self.tolerance) {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(instance());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(IdentityCheck::passed)
    }
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `B B^T + shift I`.
fn random_spd(rng: &mut impl Rng, n: usize, shift: f64) -> Matrix {
    let b = random_matrix(rng, n, n);
    symmetrize(&(&b * b.transpose() + Matrix::identity(n, n) * shift))
}

fn random_graph(rng: &mut impl Rng, nodes: usize) -> GraphTopology {
    let mut edges: Vec<(usize, usize)> = (1..nodes).map(|i| (rng.random_range(0..i), i)).collect();
    for i in 0..nodes {
        for j in (i + 1)..nodes {
            if rng.random_bool(0.3) && !edges.contains(&(i, j)) {
                edges.push((i, j));
            }
        }
    }
    GraphTopology::new(nodes, &edges).expect("spanning tree plus extra edges is connected")
}

pub const FD_STEP: f64 = 1e-6;

/// Randomized checks of the Kronecker vectorization identity, the
/// disagreement projector algebra, Laplacian row sums, the inverse-covariance
/// derivative along a Riccati trajectory, and the orthogonality of the
/// aggregate disturbance covariance to the agreement direction.
pub fn verify_identities(rng: &mut impl Rng, trials: usize) -> Result<IdentityReport> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let mut vec_check = IdentityCheck::new("vec(ABC) = (C^T kron A) vec(B)", 1e-10);
    let mut idempotent = IdentityCheck::new("H^2 = H", 1e-12);
    let mut annihilates = IdentityCheck::new("H U = 0", 1e-12);
    let mut laplacian = IdentityCheck::new("1^T Q_G = 0", 1e-12);
    let mut inverse_rate = IdentityCheck::new("d/dt P^-1 (relative, central difference)", 1e-3);
    let mut orthogonal = IdentityCheck::new("(1^T kron I) Sigma (1 kron I) = 0 (relative)", 1e-10);
    let mut one_sided = IdentityCheck::new("(1^T kron I) Sigma = 0 (relative)", 1e-10);
    let mut symmetric = IdentityCheck::new("Sigma = Sigma^T (relative)", 1e-12);

    for _ in 0..trials {
        let (p, q, r, s) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
        let a = random_matrix(rng, p, q);
        let b = random_matrix(rng, q, r);
        let c = random_matrix(rng, r, s);
        let lhs = vec_of(&(&a * &b * &c));
        let rhs = kron(&c.transpose(), &a) * vec_of(&b);
        vec_check.record((lhs - rhs).norm(), || format!("A {p}x{q}, B {q}x{r}, C {r}x{s}"));

        let nodes = rng.random_range(1..12);
        let h = disagreement_projector(nodes);
        idempotent.record((&h * &h - &h).norm(), || format!("N = {nodes}"));
        annihilates.record((&h * ones(nodes)).norm(), || format!("N = {nodes}"));

        let nodes = rng.random_range(2..10);
        let g = random_graph(rng, nodes);
        let row = Matrix::from_element(1, nodes, 1.0) * g.laplacian();
        laplacian.record(row.norm(), || format!("graph with {nodes} nodes, edges {:?}", g.edges()));

        let (error, instance) = inverse_derivative_trial(rng);
        inverse_rate.record(error, || instance);

        let nodes = rng.random_range(1..7);
        let n = rng.random_range(1..5);
        let p = random_spd(rng, n, 0.5);
        let g_nodes: Vec<Matrix> = (0..nodes)
            .map(|_| {
                let m = rng.random_range(1..3);
                let c = random_matrix(rng, m, n);
                let r_inv = random_spd(rng, m, 0.1).try_inverse().expect("SPD is invertible");
                symmetrize(&(c.transpose() * r_inv * c))
            })
            .collect();
        let sigma = sigma_disturbance(&p, &g_nodes)?;
        let scale = sigma.norm().max(1.0);
        let left = kron(&Matrix::from_element(1, nodes, 1.0), &Matrix::identity(n, n));
        let both = &left * &sigma * left.transpose();
        orthogonal.record(both.norm() / scale, || format!("N = {nodes}, n = {n}"));
        one_sided.record((&left * &sigma).norm() / scale, || format!("N = {nodes}, n = {n}"));
        symmetric.record(asymmetry(&sigma) / scale, || format!("N = {nodes}, n = {n}"));
    }
    Ok(IdentityReport {
        checks: vec![vec_check, idempotent, annihilates, laplacian, inverse_rate, orthogonal, one_sided, symmetric],
    })
}

/// Integrate a random Riccati equation for a while, then compare a central
/// difference of `P^-1` with `-P^-1 A - A^T P^-1 - P^-1 W P^-1 + G`.
fn inverse_derivative_trial(rng: &mut impl Rng) -> (f64, String) {
    let n = rng.random_range(2..5);
    let m = rng.random_range(1..=n);
    let a = random_matrix(rng, n, n);
    let w = random_spd(rng, n, 0.1);
    let c = random_matrix(rng, m, n);
    let r_inv = random_spd(rng, m, 0.5).try_inverse().expect("SPD is invertible");
    let g = symmetrize(&(c.transpose() * r_inv * c));
    let mut p = random_spd(rng, n, 0.5);
    for _ in 0..100 {
        p = riccati_step(&p, &a, &w, &g, 1e-3, Integrator::Rk4);
    }
    let ahead = riccati_step(&p, &a, &w, &g, FD_STEP, Integrator::Rk4);
    let behind = riccati_step(&p, &a, &w, &g, -FD_STEP, Integrator::Rk4);
    let inv = |m: &Matrix| m.clone().try_inverse().unwrap_or_else(|| Matrix::from_element(n, n, f64::NAN));
    let p_inv = inv(&p);
    let numeric = (inv(&ahead) - inv(&behind)) / (2.0 * FD_STEP);
    let analytic = -&p_inv * &a - a.transpose() * &p_inv - &p_inv * &w * &p_inv + &g;
    let error = (numeric - &analytic).norm() / analytic.norm().max(1e-12);
    (error, format!("n = {n}, m = {m}, P = {p}"))
}
