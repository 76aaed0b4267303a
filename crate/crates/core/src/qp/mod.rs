//! Dense convex quadratic programming with exact duals.
//!
//! Problems have the form
//!
//! ```text
//! minimize    1/2 x'Hx + b'x
//! subject to  A_eq x  = c_eq      (y)
//!             A_in x <= c_in      (z >= 0)
//!             lower <= x <= upper (z_lo, z_up >= 0)
//! ```
//!
//! with Lagrangian `f + y'(A_eq x - c_eq) + z'(A_in x - c_in) + z_lo'(lower - x) + z_up'(x - upper)`.

mod dual_active_set;
mod dual_face;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dual_active_set::solve_with;
pub use dual_face::{dual_extremes, DualWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub c_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub c_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained problem.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        QuadraticProgram {
            hessian,
            linear,
            a_eq: DMatrix::zeros(0, n),
            c_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            c_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, c: DVector<f64>) -> Self {
        self.a_eq = a;
        self.c_eq = c;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, c: DVector<f64>) -> Self {
        self.a_in = a;
        self.c_in = c;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let check = |what: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::invalid("qp_dimensions", format!("{what}: expected {want}, got {got}")));
            }
            Ok(())
        };
        check("hessian rows", self.hessian.nrows(), n)?;
        check("hessian cols", self.hessian.ncols(), n)?;
        check("A_eq cols", self.a_eq.ncols(), n)?;
        check("c_eq length", self.c_eq.len(), self.a_eq.nrows())?;
        check("A_in cols", self.a_in.ncols(), n)?;
        check("c_in length", self.c_in.len(), self.a_in.nrows())?;
        check("lower length", self.lower.len(), n)?;
        check("upper length", self.upper.len(), n)?;
        let scale = self.hessian.amax().max(1.0);
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::invalid("qp_symmetric", format!("hessian asymmetry {asym:.3e}")));
        }
        for i in 0..n {
            if !(self.lower[i] <= self.upper[i]) {
                return Err(Error::invalid(
                    "qp_bounds",
                    format!("variable {i}: lower {} > upper {}", self.lower[i], self.upper[i]),
                ));
            }
        }
        let finite = self
            .hessian
            .iter()
            .chain(self.linear.iter())
            .chain(self.a_eq.iter())
            .chain(self.a_in.iter())
            .chain(self.c_eq.iter())
            .chain(self.c_in.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("qp_finite", "non-finite coefficient"));
        }
        Ok(())
    }
}

/// Identifies a constraint of a [`QuadraticProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constraint {
    Equality(usize),
    Inequality(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `|Hx + b + A_eq'y + A_in'z - z_lo + z_up|_inf`
    pub stationarity: f64,
    /// Largest primal constraint violation.
    pub feasibility: f64,
    /// Largest `|dual * slack|`, or dual sign violation.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub in_duals: DVector<f64>,
    pub lower_duals: DVector<f64>,
    pub upper_duals: DVector<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    /// Active constraints at the solution; feed back as a warm start.
    pub active: Vec<Constraint>,
    /// More constraints are tight than their gradients have rank: duals are not unique.
    pub degenerate: bool,
    /// The Hessian was singular and a ridge was added.
    pub regularized: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub stat_tol: f64,
    /// Ridge relative to the Hessian diagonal scale when it is only semidefinite.
    pub ridge: f64,
    /// `None` picks `50 * (n + m) + 100`.
    pub max_iter: Option<usize>,
    pub warm_start: Option<Vec<Constraint>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            stat_tol: 1e-8,
            ridge: 1e-9,
            max_iter: None,
            warm_start: None,
        }
    }
}

pub fn solve_convex_qp(qp: &QuadraticProgram) -> Result<QpSolution> {
    solve_with(qp, &SolverOptions::default())
}

/// KKT residuals of a primal/dual pair.
pub fn kkt_residuals(
    qp: &QuadraticProgram,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    z_lo: &DVector<f64>,
    z_up: &DVector<f64>,
) -> KktResiduals {
    let grad = &qp.hessian * x + &qp.linear + qp.a_eq.transpose() * y + qp.a_in.transpose() * z - z_lo + z_up;
    let stationarity = grad.amax();
    let mut feasibility: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    let eq = &qp.a_eq * x - &qp.c_eq;
    feasibility = feasibility.max(eq.amax());
    let slack = &qp.c_in - &qp.a_in * x;
    for i in 0..slack.len() {
        feasibility = feasibility.max(-slack[i]);
        complementarity = complementarity.max((z[i] * slack[i]).abs()).max(-z[i]);
    }
    for j in 0..x.len() {
        if qp.lower[j].is_finite() {
            let s = x[j] - qp.lower[j];
            feasibility = feasibility.max(-s);
            complementarity = complementarity.max((z_lo[j] * s).abs()).max(-z_lo[j]);
        }
        if qp.upper[j].is_finite() {
            let s = qp.upper[j] - x[j];
            feasibility = feasibility.max(-s);
            complementarity = complementarity.max((z_up[j] * s).abs()).max(-z_up[j]);
        }
    }
    KktResiduals {
        stationarity,
        feasibility: feasibility.max(0.0),
        complementarity,
    }
}
