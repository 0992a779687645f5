//! Centralized Kalman-Bucy filter: the optimal reference every node is compared against.

use crate::error::{invalid, Error, Result};
use crate::linalg::{is_positive_definite, symmetrize_in_place, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedFilterState {
    pub xhat: Vector,
    pub p: Matrix,
}

impl CentralizedFilterState {
    pub fn new(xhat: Vector, p: Matrix) -> Self {
        Self { xhat, p }
    }
}

/// `K = P C^T R^{-1}`.
pub fn central_gain(p: &Matrix, c: &Matrix, r: &Matrix) -> Result<Matrix> {
    if c.ncols() != p.nrows() || r.nrows() != c.nrows() || !r.is_square() {
        return Err(Error::Dimension(format!(
            "gain needs P n x n, C m x n, R m x m; got P {:?}, C {:?}, R {:?}",
            p.shape(),
            c.shape(),
            r.shape()
        )));
    }
    let r_inv = r.clone().cholesky().ok_or_else(|| Error::Singular { what: "R".into(), t: f64::NAN })?.inverse();
    Ok(p * c.transpose() * r_inv)
}

/// `A P + P A^T + W - P G P`.
pub fn riccati_rhs(p: &Matrix, a: &Matrix, w: &Matrix, info: &Matrix) -> Matrix {
    let ap = a * p;
    &ap + ap.transpose() + w - p * info * p
}

/// Time-sampled model quantities needed by one filter step.
#[derive(Debug, Clone)]
pub struct FilterInputs<'a> {
    pub a: &'a Matrix,
    pub w: &'a Matrix,
    pub c: &'a Matrix,
    pub r_inv: &'a Matrix,
    /// `C^T R^{-1} C`.
    pub info: &'a Matrix,
}

/// One explicit Euler step of the filter ODEs. `step` and `t` only label failures.
pub fn central_step(
    state: &CentralizedFilterState,
    inputs: &FilterInputs<'_>,
    y: &Vector,
    h: f64,
    step: usize,
    t: f64,
) -> Result<CentralizedFilterState> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    let gain = &state.p * inputs.c.transpose() * inputs.r_inv;
    let innovation = y - inputs.c * &state.xhat;
    let drift = inputs.a * &state.xhat + gain * innovation;
    let xhat = &state.xhat + drift * h;
    let mut p = &state.p + riccati_rhs(&state.p, inputs.a, inputs.w, inputs.info) * h;
    symmetrize_in_place(&mut p);
    if !is_positive_definite(&p) {
        return Err(Error::Numerical { what: "centralized covariance lost positive definiteness".into(), step, t });
    }
    Ok(CentralizedFilterState { xhat, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

/// One step of the time-invariant Riccati ODE.
pub fn riccati_step(p: &Matrix, a: &Matrix, w: &Matrix, info: &Matrix, h: f64, integrator: Integrator) -> Matrix {
    let f = |p: &Matrix| riccati_rhs(p, a, w, info);
    let mut next = match integrator {
        Integrator::Euler => p + f(p) * h,
        Integrator::Rk4 => {
            let k1 = f(p);
            let k2 = f(&(p + &k1 * (h / 2.0)));
            let k3 = f(&(p + &k2 * (h / 2.0)));
            let k4 = f(&(p + &k3 * h));
            p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
        }
    };
    symmetrize_in_place(&mut next);
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    /// Stop once `||dP/dt||_F < tol`.
    pub tol: f64,
    pub h: f64,
    pub max_time: f64,
    pub integrator: Integrator,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { tol: 1e-10, h: 1e-3, max_time: 1e4, integrator: Integrator::Rk4 }
    }
}

/// Steady-state covariance of a time-invariant model, integrated forward from `P = I`.
pub fn steady_state_covariance(a: &Matrix, w: &Matrix, info: &Matrix, opts: &SteadyStateOptions) -> Result<Matrix> {
    let n = a.nrows();
    if !a.is_square() || w.shape() != (n, n) || info.shape() != (n, n) {
        return Err(Error::Dimension("A, W and C^T R^-1 C must all be n x n".into()));
    }
    if !(opts.h > 0.0 && opts.tol > 0.0) {
        return Err(invalid("steady_state", "step and tolerance must be positive"));
    }
    let max_steps = (opts.max_time / opts.h).ceil() as usize;
    let mut p = Matrix::identity(n, n);
    for _ in 0..max_steps {
        let rate = riccati_rhs(&p, a, w, info).norm();
        if !rate.is_finite() {
            return Err(Error::NonConvergence("Riccati integration diverged".into()));
        }
        if rate < opts.tol {
            return Ok(p);
        }
        p = riccati_step(&p, a, w, info, opts.h, opts.integrator);
    }
    Err(Error::NonConvergence(format!(
        "||dP/dt|| still {:e} after {} s",
        riccati_rhs(&p, a, w, info).norm(),
        opts.max_time
    )))
}
