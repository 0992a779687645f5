//! Plant and sensor models with time-varying matrices, and extraction of the
//! uniform bound constants the gain formulas need.

use std::f64::consts::TAU;

use crate::error::{invalid, Error, Result};
use crate::expr::{parse_expr, ScalarExpr};
use crate::linalg::{asymmetry, block_diag, is_positive_definite, lambda_min, spectral_norm, vstack, Matrix, Vector};

/// A matrix whose entries are [`ScalarExpr`]s in time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingMatrix {
    rows: usize,
    cols: usize,
    /// Row-major.
    entries: Vec<ScalarExpr>,
}

impl TimeVaryingMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<ScalarExpr>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn constant(m: &Matrix) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(ScalarExpr::constant(m[(i, j)]));
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), entries }
    }

    /// Parse a row-major grid of expression strings. `name` is used in error messages.
    pub fn parse<S: AsRef<str>>(name: &str, rows: &[Vec<S>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(nrows * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::Dimension(format!(
                    "{name}: row {} has {} entries, expected {ncols}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, text) in row.iter().enumerate() {
                let expr = parse_expr(text.as_ref()).map_err(|source| Error::Expression {
                    location: format!("{name}[{}][{}]", i + 1, j + 1),
                    source,
                })?;
                entries.push(expr);
            }
        }
        Self::new(nrows, ncols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, row: usize, col: usize) -> &ScalarExpr {
        &self.entries[row * self.cols + col]
    }

    pub fn eval(&self, t: f64) -> Matrix {
        Matrix::from_row_iterator(self.rows, self.cols, self.entries.iter().map(|e| e.eval(t)))
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(ScalarExpr::is_constant)
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().flat_map(ScalarExpr::frequencies)
    }
}

/// `dx = A(t) x dt + dw`, `cov(dw) = W(t) dt`, `x(0) ~ N(x0, P0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: TimeVaryingMatrix,
    pub w: TimeVaryingMatrix,
    pub x0: Vector,
    pub p0: Matrix,
}

impl PlantModel {
    pub fn new(a: TimeVaryingMatrix, w: TimeVaryingMatrix, x0: Vector, p0: Matrix) -> Result<Self> {
        let n = x0.len();
        if n == 0 {
            return Err(invalid("n", "state dimension must be positive"));
        }
        for (name, r, c) in [("A", a.rows(), a.cols()), ("W", w.rows(), w.cols()), ("P0", p0.nrows(), p0.ncols())] {
            if r != n || c != n {
                return Err(Error::Dimension(format!("{name} is {r}x{c}, expected {n}x{n}")));
            }
        }
        let skew = asymmetry(&p0);
        if skew > 1e-12 {
            return Err(Error::NotSymmetric { what: "P0".into(), asymmetry: skew });
        }
        if !is_positive_definite(&p0) {
            return Err(Error::NotPositive { what: "P0".into(), kind: "definite", t: 0.0 });
        }
        Ok(Self { a, w, x0, p0 })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.a.is_constant() && self.w.is_constant()
    }

    /// Check that `W(t)` is symmetric PSD on every grid sample.
    pub fn validate_on(&self, grid: &SamplingGrid) -> Result<()> {
        for t in grid.times() {
            let w = self.w.eval(t);
            let skew = asymmetry(&w);
            if skew > 1e-12 {
                return Err(Error::NotSymmetric { what: format!("W({t})"), asymmetry: skew });
            }
            if lambda_min(&w) < -1e-10 {
                return Err(Error::NotPositive { what: "W".into(), kind: "semidefinite", t });
            }
        }
        Ok(())
    }
}

/// `y_i = C_i(t) x + v_i`, `v_i` white with intensity `R_i(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub c: TimeVaryingMatrix,
    pub r: TimeVaryingMatrix,
}

impl SensorModel {
    pub fn new(c: TimeVaryingMatrix, r: TimeVaryingMatrix) -> Result<Self> {
        if r.rows() != r.cols() {
            return Err(Error::Dimension(format!("R is {}x{}, must be square", r.rows(), r.cols())));
        }
        if c.rows() != r.rows() {
            return Err(Error::Dimension(format!("C has {} rows but R is {}x{}", c.rows(), r.rows(), r.cols())));
        }
        Ok(Self { c, r })
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.c.is_constant() && self.r.is_constant()
    }

    /// `R(t)^{-1}`, failing when the sample is singular.
    pub fn r_inverse(&self, t: f64) -> Result<Matrix> {
        self.r
            .eval(t)
            .cholesky()
            .map(|ch| ch.inverse())
            .ok_or_else(|| Error::Singular { what: "R".into(), t })
    }

    /// `C(t)^T R(t)^{-1} C(t)`.
    pub fn information(&self, t: f64) -> Result<Matrix> {
        let c = self.c.eval(t);
        let r_inv = self.r_inverse(t)?;
        Ok(c.transpose() * r_inv * c)
    }

    pub fn validate_on(&self, grid: &SamplingGrid) -> Result<()> {
        for t in grid.times() {
            let r = self.r.eval(t);
            let skew = asymmetry(&r);
            if skew > 1e-12 {
                return Err(Error::NotSymmetric { what: format!("R({t})"), asymmetry: skew });
            }
            if !is_positive_definite(&r) {
                return Err(Error::NotPositive { what: "R".into(), kind: "definite", t });
            }
        }
        Ok(())
    }
}

/// `C(t) = col(C_i(t))`.
pub fn stacked_c(sensors: &[SensorModel], t: f64) -> Matrix {
    vstack(&sensors.iter().map(|s| s.c.eval(t)).collect::<Vec<_>>())
}

/// `R(t) = diag(R_i(t))`.
pub fn stacked_r(sensors: &[SensorModel], t: f64) -> Matrix {
    block_diag(&sensors.iter().map(|s| s.r.eval(t)).collect::<Vec<_>>())
}

/// `sum_i C_i^T R_i^{-1} C_i`, the network information rate.
pub fn network_information(sensors: &[SensorModel], t: f64) -> Result<Matrix> {
    let n = sensors.first().map_or(0, |s| s.c.cols());
    let mut g = Matrix::zeros(n, n);
    for s in sensors {
        g += s.information(t)?;
    }
    Ok(g)
}

/// Uniform bound constants over a sampling grid.
///
/// `r1`/`r2` bound the spectral norm of the stacked `R(t)`; `r_min_eigenvalue`
/// is the infimum of its smallest eigenvalue, which is what a bound on
/// `||R(t)^{-1}||` actually needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelBounds {
    pub a: f64,
    pub c: f64,
    pub w1: f64,
    pub w2: f64,
    pub r1: f64,
    pub r2: f64,
    pub l: f64,
    pub r_min_eigenvalue: f64,
}

/// Uniform time grid `[start, end]` with `samples` points (endpoints included).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingGrid {
    pub start: f64,
    pub end: f64,
    pub samples: usize,
}

pub const DEFAULT_GRID_SAMPLES: usize = 10_001;
pub const APERIODIC_HORIZON: f64 = 100.0;
const FD_STEP: f64 = 1e-4;

impl SamplingGrid {
    pub fn single(t: f64) -> Self {
        Self { start: t, end: t, samples: 1 }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> {
        let Self { start, end, samples } = *self;
        let step = if samples > 1 { (end - start) / (samples - 1) as f64 } else { 0.0 };
        (0..samples).map(move |k| start + step * k as f64)
    }

    /// One joint period of every sinusoid present, or `[0, 100]` when the
    /// frequencies are incommensurate. Time-invariant models get a single sample.
    pub fn covering<I: IntoIterator<Item = f64>>(frequencies: I) -> Self {
        let freqs: Vec<f64> = frequencies.into_iter().filter(|w| *w > 0.0).collect();
        let Some(w_min) = freqs.iter().copied().reduce(f64::min) else {
            return Self::single(0.0);
        };
        let end = joint_period(&freqs, w_min).unwrap_or(APERIODIC_HORIZON);
        Self { start: 0.0, end, samples: DEFAULT_GRID_SAMPLES }
    }

    pub fn for_model(plant: &PlantModel, sensors: &[SensorModel]) -> Self {
        let mut freqs: Vec<f64> = plant.a.frequencies().chain(plant.w.frequencies()).collect();
        for s in sensors {
            freqs.extend(s.c.frequencies().chain(s.r.frequencies()));
        }
        Self::covering(freqs)
    }
}

fn joint_period(freqs: &[f64], w_min: f64) -> Option<f64> {
    (1..=1000).map(|m| TAU * m as f64 / w_min).find(|period| {
        freqs.iter().all(|w| {
            let cycles = w * period / TAU;
            (cycles - cycles.round()).abs() < 1e-9 * cycles.max(1.0)
        })
    })
}

/// Sample the model on `grid` and return the bound constants.
///
/// `L` is estimated as the largest central finite difference of
/// `N C_i^T R_i^{-1} C_i` over nodes and samples.
pub fn estimate_bounds(plant: &PlantModel, sensors: &[SensorModel], grid: &SamplingGrid) -> Result<ModelBounds> {
    if sensors.is_empty() {
        return Err(invalid("sensors", "at least one sensor is required"));
    }
    let nodes = sensors.len() as f64;
    let time_invariant = plant.is_time_invariant() && sensors.iter().all(SensorModel::is_time_invariant);
    let mut b = ModelBounds {
        a: 0.0,
        c: 0.0,
        w1: f64::INFINITY,
        w2: 0.0,
        r1: f64::INFINITY,
        r2: 0.0,
        l: 0.0,
        r_min_eigenvalue: f64::INFINITY,
    };
    for t in grid.times() {
        b.a = b.a.max(spectral_norm(&plant.a.eval(t)));
        b.c = b.c.max(spectral_norm(&stacked_c(sensors, t)));
        let w_norm = spectral_norm(&plant.w.eval(t));
        b.w1 = b.w1.min(w_norm);
        b.w2 = b.w2.max(w_norm);
        let r = stacked_r(sensors, t);
        if !is_positive_definite(&r) {
            return Err(Error::Singular { what: "R".into(), t });
        }
        let r_norm = spectral_norm(&r);
        b.r1 = b.r1.min(r_norm);
        b.r2 = b.r2.max(r_norm);
        b.r_min_eigenvalue = b.r_min_eigenvalue.min(lambda_min(&r));
        if !time_invariant {
            for s in sensors {
                let ahead = s.information(t + FD_STEP)?;
                let behind = s.information(t - FD_STEP)?;
                let rate = spectral_norm(&((ahead - behind) * (nodes / (2.0 * FD_STEP))));
                b.l = b.l.max(rate);
            }
        }
    }
    Ok(b)
}
