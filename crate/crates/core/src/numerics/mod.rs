//! Dense linear algebra plus in-repo LP and convex-QP solvers.
//!
//! Problems are stated over `l <= A z <= u` row bounds together with
//! per-variable bounds; infinities are encoded by the [`INF`] sentinel.
//! The LP path is a two-phase dense revised simplex with a Bland's-rule
//! fallback for cycling; the QP path is operator splitting (ADMM with
//! over-relaxation) followed by an active-set polish solve. Problem sizes in
//! this crate are tiny (at most a few hundred variables), so everything is
//! dense and deterministic: the same input yields bitwise-identical output
//! on one platform.

mod qp;
mod simplex;

pub use qp::{solve_qp, QpSettings, QpWorkspace};
pub use simplex::solve_lp;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Magnitude at or above which a bound is treated as infinite.
pub const INF: f64 = 1e30;

/// Is `b` an upper bound meaning "unbounded above"?
pub fn is_pos_inf(b: f64) -> bool {
    b >= INF
}

/// Is `b` a lower bound meaning "unbounded below"?
pub fn is_neg_inf(b: f64) -> bool {
    b <= -INF
}

fn check_bound_pairs(lower: &DVector<f64>, upper: &DVector<f64>, what: &str) -> Result<()> {
    for i in 0..lower.len() {
        let (l, u) = (lower[i], upper[i]);
        if l.is_nan() || u.is_nan() {
            return Err(Error::InvalidInput(format!("{what} bound {i} is NaN")));
        }
        if l > u {
            return Err(Error::InvalidInput(format!(
                "{what} bounds inverted at {i}: {l} > {u}"
            )));
        }
        if is_pos_inf(l) || is_neg_inf(u) {
            return Err(Error::InvalidInput(format!(
                "{what} bound {i} pins a value at infinity"
            )));
        }
        // Finite magnitudes beyond the sentinel are almost certainly a bug.
        if (l.is_finite() && l.abs() > INF && !is_neg_inf(l))
            || (u.is_finite() && u.abs() > INF && !is_pos_inf(u))
        {
            return Err(Error::InvalidInput(format!("{what} bound {i} out of range")));
        }
    }
    Ok(())
}

/// Linear program `min c'z` subject to `l <= A z <= u` and per-variable
/// bounds.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub row_lower: DVector<f64>,
    pub row_upper: DVector<f64>,
    pub var_lower: DVector<f64>,
    pub var_upper: DVector<f64>,
}

impl LinearProgram {
    pub fn new(
        objective: DVector<f64>,
        constraints: DMatrix<f64>,
        row_lower: DVector<f64>,
        row_upper: DVector<f64>,
        var_lower: DVector<f64>,
        var_upper: DVector<f64>,
    ) -> Result<Self> {
        let n = objective.len();
        let (m, nc) = constraints.shape();
        if nc != n {
            return Err(Error::Dimension(format!(
                "constraint matrix has {nc} columns, objective has {n}"
            )));
        }
        if row_lower.len() != m || row_upper.len() != m {
            return Err(Error::Dimension("row bound length != row count".into()));
        }
        if var_lower.len() != n || var_upper.len() != n {
            return Err(Error::Dimension("variable bound length != variable count".into()));
        }
        if objective.iter().any(|v| !v.is_finite()) || constraints.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "objective and constraint entries must be finite".into(),
            ));
        }
        check_bound_pairs(&row_lower, &row_upper, "row")?;
        check_bound_pairs(&var_lower, &var_upper, "variable")?;
        Ok(Self {
            objective,
            constraints,
            row_lower,
            row_upper,
            var_lower,
            var_upper,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.nrows()
    }

    /// Worst violation of row and variable bounds at `z`.
    pub fn infeasibility(&self, z: &DVector<f64>) -> f64 {
        let az = &self.constraints * z;
        let mut worst: f64 = 0.0;
        for i in 0..self.num_rows() {
            if !is_neg_inf(self.row_lower[i]) {
                worst = worst.max(self.row_lower[i] - az[i]);
            }
            if !is_pos_inf(self.row_upper[i]) {
                worst = worst.max(az[i] - self.row_upper[i]);
            }
        }
        for j in 0..self.num_vars() {
            if !is_neg_inf(self.var_lower[j]) {
                worst = worst.max(self.var_lower[j] - z[j]);
            }
            if !is_pos_inf(self.var_upper[j]) {
                worst = worst.max(z[j] - self.var_upper[j]);
            }
        }
        worst
    }
}

/// Convex quadratic program `min 0.5 z'Pz + q'z` over the same constraint
/// shape as [`LinearProgram`].
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub row_lower: DVector<f64>,
    pub row_upper: DVector<f64>,
    pub var_lower: DVector<f64>,
    pub var_upper: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        constraints: DMatrix<f64>,
        row_lower: DVector<f64>,
        row_upper: DVector<f64>,
        var_lower: DVector<f64>,
        var_upper: DVector<f64>,
    ) -> Result<Self> {
        let n = linear.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::Dimension("Hessian shape != variable count".into()));
        }
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((hessian[(i, j)] - hessian[(j, i)]).abs());
            }
        }
        if asym > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "Hessian asymmetry {asym:.2e} exceeds 1e-10"
            )));
        }
        // PSD within 1e-8: the shifted matrix must admit a Cholesky factor;
        // fall back to an eigendecomposition at the boundary.
        let sym = (&hessian + hessian.transpose()) * 0.5;
        let shifted = &sym + DMatrix::identity(n, n) * 1e-8;
        if shifted.clone().cholesky().is_none() {
            let min_eig = sym
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -1e-8 {
                return Err(Error::InvalidInput(format!(
                    "Hessian is not PSD: smallest eigenvalue {min_eig:.3e}"
                )));
            }
        }
        let lp_shape = LinearProgram::new(
            linear.clone(),
            constraints,
            row_lower,
            row_upper,
            var_lower,
            var_upper,
        )?;
        Ok(Self {
            hessian: sym,
            linear,
            constraints: lp_shape.constraints,
            row_lower: lp_shape.row_lower,
            row_upper: lp_shape.row_upper,
            var_lower: lp_shape.var_lower,
            var_upper: lp_shape.var_upper,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective_at(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.dot(&(&self.hessian * z))) + self.linear.dot(z)
    }

    /// Relaxation to the feasibility LP over the same constraints.
    pub fn feasibility_lp(&self) -> LinearProgram {
        LinearProgram {
            objective: DVector::zeros(self.num_vars()),
            constraints: self.constraints.clone(),
            row_lower: self.row_lower.clone(),
            row_upper: self.row_upper.clone(),
            var_lower: self.var_lower.clone(),
            var_upper: self.var_upper.clone(),
        }
    }
}

/// Solve outcome classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveKind {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Result of an LP/QP solve.
#[derive(Debug, Clone)]
pub struct SolveStatus {
    pub kind: SolveKind,
    /// Objective at `solution` (NaN when no meaningful iterate exists).
    pub objective: f64,
    pub solution: DVector<f64>,
    /// Worst constraint violation at `solution`.
    pub primal_residual: f64,
    /// Stationarity residual (QP) or reduced-cost residual (LP).
    pub dual_residual: f64,
    pub iterations: usize,
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        self.kind == SolveKind::Optimal
    }
}
