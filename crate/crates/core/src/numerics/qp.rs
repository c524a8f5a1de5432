//! Convex QP solver: operator splitting (ADMM with over-relaxation) plus an
//! active-set polish solve.
//!
//! Variable bounds are stacked as identity rows under the constraint block so
//! the iteration only projects onto `[l, u]`. Equality rows get a stiffer
//! penalty weight. A successful polish returns a KKT point accurate to well
//! below the configured tolerances; otherwise the loop runs until the
//! absolute+relative stopping test or the iteration cap.
//!
//! [`QpWorkspace`] factors the KKT matrix once and can then be solved many
//! times with different row bounds. The finite-horizon solver relies on this:
//! terminal-candidate subproblems differ only in the right-hand side of the
//! terminal equality rows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{is_neg_inf, is_pos_inf, QuadraticProgram, SolveKind, SolveStatus};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    pub rho_eq_scale: f64,
    pub check_every: usize,
    /// Relative tolerance of the infeasibility certificates.
    pub eps_inf: f64,
    /// Residual level at which polish attempts start.
    pub polish_threshold: f64,
    pub max_polish_attempts: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            max_iter: 200_000,
            alpha: 1.6,
            sigma: 1e-6,
            rho: 0.1,
            rho_eq_scale: 1e3,
            check_every: 25,
            eps_inf: 1e-9,
            polish_threshold: 1e-5,
            max_polish_attempts: 25,
        }
    }
}

const EQ_TOL: f64 = 1e-12;
const POLISH_KKT_TOL: f64 = 1e-9;

/// Factored ADMM workspace for one constraint structure.
pub struct QpWorkspace {
    n: usize,
    m: usize,
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    a_t: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    rho: DVector<f64>,
    rho_inv: DVector<f64>,
    kkt: Cholesky<f64, Dyn>,
    pub settings: QpSettings,
}

impl QpWorkspace {
    pub fn new(qp: &QuadraticProgram, settings: QpSettings) -> Result<Self> {
        let n = qp.num_vars();
        let m_rows = qp.constraints.nrows();

        // Stack variable-bound rows under the constraint block.
        let bounded: Vec<usize> = (0..n)
            .filter(|&j| !is_neg_inf(qp.var_lower[j]) || !is_pos_inf(qp.var_upper[j]))
            .collect();
        let m = m_rows + bounded.len();
        let mut a = DMatrix::zeros(m, n);
        a.view_mut((0, 0), (m_rows, n)).copy_from(&qp.constraints);
        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        l.rows_mut(0, m_rows).copy_from(&qp.row_lower);
        u.rows_mut(0, m_rows).copy_from(&qp.row_upper);
        for (k, &j) in bounded.iter().enumerate() {
            a[(m_rows + k, j)] = 1.0;
            l[m_rows + k] = qp.var_lower[j];
            u[m_rows + k] = qp.var_upper[j];
        }

        let rho = DVector::from_fn(m, |i, _| {
            if (u[i] - l[i]).abs() <= EQ_TOL {
                settings.rho * settings.rho_eq_scale
            } else {
                settings.rho
            }
        });
        let rho_inv = rho.map(|r| 1.0 / r);

        // KKT = P + sigma I + A' diag(rho) A, factored once.
        let mut kkt_mat = qp.hessian.clone();
        for i in 0..n {
            kkt_mat[(i, i)] += settings.sigma;
        }
        let mut scaled_a = a.clone();
        for i in 0..m {
            let r = rho[i];
            for j in 0..n {
                scaled_a[(i, j)] *= r;
            }
        }
        kkt_mat.gemm_tr(1.0, &a, &scaled_a, 1.0);
        let kkt = kkt_mat
            .cholesky()
            .ok_or_else(|| Error::Solver("ADMM KKT matrix is not positive definite".into()))?;

        let a_t = a.transpose();
        Ok(QpWorkspace {
            n,
            m,
            p: qp.hessian.clone(),
            q: qp.linear.clone(),
            a,
            a_t,
            l,
            u,
            rho,
            rho_inv,
            kkt,
            settings,
        })
    }

    pub fn num_stacked_rows(&self) -> usize {
        self.m
    }

    /// Solve with the stored bounds.
    pub fn solve(&self) -> SolveStatus {
        self.solve_with_bounds(&[])
    }

    /// Solve with some constraint-row bounds replaced. Overridden rows must
    /// keep their equality/inequality class so the stored factorization
    /// remains valid.
    pub fn solve_with_bounds(&self, overrides: &[(usize, f64, f64)]) -> SolveStatus {
        let mut l = self.l.clone();
        let mut u = self.u.clone();
        for &(i, lo, hi) in overrides {
            debug_assert!(
                ((hi - lo).abs() <= EQ_TOL) == ((self.u[i] - self.l[i]).abs() <= EQ_TOL),
                "bound override changes the equality class of row {i}"
            );
            l[i] = lo;
            u[i] = hi;
        }
        self.run_admm(&l, &u)
    }

    fn run_admm(&self, l: &DVector<f64>, u: &DVector<f64>) -> SolveStatus {
        let (n, m) = (self.n, self.m);
        let s = &self.settings;

        let mut x = DVector::<f64>::zeros(n);
        let mut z = DVector::from_fn(m, |i, _| 0.0_f64.clamp(l[i], u[i]));
        let mut y = DVector::<f64>::zeros(m);

        let mut xt = DVector::<f64>::zeros(n);
        let mut tmp_m = DVector::<f64>::zeros(m);
        let mut axt = DVector::<f64>::zeros(m);
        let mut ax = DVector::<f64>::zeros(m);
        let mut px = DVector::<f64>::zeros(n);
        let mut aty = DVector::<f64>::zeros(n);

        let mut x_prev = x.clone();
        let mut y_prev = y.clone();
        let mut polish_attempts = 0usize;
        let mut best: Option<(f64, SolveStatus)> = None;

        let mut iter = 0usize;
        while iter < s.max_iter {
            iter += 1;

            // x-step: (P + sigma I + A' rho A) xt = sigma x - q + A'(rho z - y)
            for i in 0..m {
                tmp_m[i] = self.rho[i] * z[i] - y[i];
            }
            xt.gemv(1.0, &self.a_t, &tmp_m, 0.0);
            xt.axpy(s.sigma, &x, 1.0);
            xt -= &self.q;
            self.kkt.solve_mut(&mut xt);

            axt.gemv(1.0, &self.a, &xt, 0.0);

            // Over-relaxed z/y updates.
            for i in 0..m {
                let azr = s.alpha * axt[i] + (1.0 - s.alpha) * z[i];
                let zc = azr + y[i] * self.rho_inv[i];
                let znew = zc.clamp(l[i], u[i]);
                y[i] += self.rho[i] * (azr - znew);
                z[i] = znew;
            }
            for j in 0..n {
                x[j] = s.alpha * xt[j] + (1.0 - s.alpha) * x[j];
            }

            if iter % s.check_every != 0 && iter != s.max_iter {
                continue;
            }

            // Residuals (unscaled problem data).
            ax.gemv(1.0, &self.a, &x, 0.0);
            px.gemv(1.0, &self.p, &x, 0.0);
            aty.gemv(1.0, &self.a_t, &y, 0.0);
            let mut r_prim = 0.0_f64;
            let mut norm_ax = 0.0_f64;
            let mut norm_z = 0.0_f64;
            for i in 0..m {
                r_prim = r_prim.max((ax[i] - z[i]).abs());
                norm_ax = norm_ax.max(ax[i].abs());
                norm_z = norm_z.max(z[i].abs());
            }
            let mut r_dual = 0.0_f64;
            let mut norm_px = 0.0_f64;
            let mut norm_aty = 0.0_f64;
            for j in 0..n {
                r_dual = r_dual.max((px[j] + self.q[j] + aty[j]).abs());
                norm_px = norm_px.max(px[j].abs());
                norm_aty = norm_aty.max(aty[j].abs());
            }
            let norm_q = self.q.amax();
            let eps_prim = s.eps_abs + s.eps_rel * norm_ax.max(norm_z);
            let eps_dual = s.eps_abs + s.eps_rel * norm_px.max(norm_aty).max(norm_q);

            let converged = r_prim <= eps_prim && r_dual <= eps_dual;
            let near = r_prim <= eps_prim.max(s.polish_threshold)
                && r_dual <= eps_dual.max(s.polish_threshold);

            if near && polish_attempts < s.max_polish_attempts {
                polish_attempts += 1;
                if let Some(status) = self.polish(l, u, &z, &y, iter) {
                    return status;
                }
            }
            if converged {
                return self.finish(SolveKind::Optimal, &x, r_prim, r_dual, iter);
            }
            let score = r_prim.max(r_dual);
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, self.finish(SolveKind::MaxIter, &x, r_prim, r_dual, iter)));
            }

            // Infeasibility certificates from the progress made since the
            // previous check.
            let dy = &y - &y_prev;
            let dx = &x - &x_prev;
            if self.primal_infeasibility_certificate(&dy, l, u) {
                return SolveStatus {
                    kind: SolveKind::Infeasible,
                    objective: f64::NAN,
                    solution: x.clone(),
                    primal_residual: f64::NAN,
                    dual_residual: f64::NAN,
                    iterations: iter,
                };
            }
            if self.dual_infeasibility_certificate(&dx, l, u) {
                return SolveStatus {
                    kind: SolveKind::Unbounded,
                    objective: f64::NEG_INFINITY,
                    solution: x.clone(),
                    primal_residual: f64::NAN,
                    dual_residual: f64::NAN,
                    iterations: iter,
                };
            }
            x_prev.copy_from(&x);
            y_prev.copy_from(&y);
        }

        best.map(|(_, st)| st).unwrap_or(SolveStatus {
            kind: SolveKind::MaxIter,
            objective: f64::NAN,
            solution: x,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            iterations: iter,
        })
    }

    fn finish(
        &self,
        kind: SolveKind,
        x: &DVector<f64>,
        r_prim: f64,
        r_dual: f64,
        iterations: usize,
    ) -> SolveStatus {
        let objective = 0.5 * x.dot(&(&self.p * x)) + self.q.dot(x);
        SolveStatus {
            kind,
            objective,
            solution: x.clone(),
            primal_residual: r_prim,
            dual_residual: r_dual,
            iterations,
        }
    }

    /// Solve the equality-constrained QP on the active rows guessed from the
    /// current dual iterate; accept only if the result is a verified KKT
    /// point.
    fn polish(
        &self,
        l: &DVector<f64>,
        u: &DVector<f64>,
        z: &DVector<f64>,
        y: &DVector<f64>,
        iterations: usize,
    ) -> Option<SolveStatus> {
        let (n, m) = (self.n, self.m);
        let mut active: Vec<(usize, f64)> = Vec::new();
        for i in 0..m {
            let eq = (u[i] - l[i]).abs() <= EQ_TOL;
            if eq {
                active.push((i, l[i]));
            } else if y[i] < -1e-11 {
                active.push((i, l[i]));
            } else if y[i] > 1e-11 {
                active.push((i, u[i]));
            } else if !is_neg_inf(l[i]) && (z[i] - l[i]).abs() <= 1e-10 {
                active.push((i, l[i]));
            } else if !is_pos_inf(u[i]) && (u[i] - z[i]).abs() <= 1e-10 {
                active.push((i, u[i]));
            }
        }
        let k = active.len();
        let dim = n + k;
        let reg = 1e-10;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        for j in 0..n {
            kkt[(j, j)] += reg;
        }
        for (row, &(i, _)) in active.iter().enumerate() {
            for j in 0..n {
                let v = self.a[(i, j)];
                kkt[(n + row, j)] = v;
                kkt[(j, n + row)] = v;
            }
            kkt[(n + row, n + row)] = -reg;
        }
        let mut rhs = DVector::zeros(dim);
        for j in 0..n {
            rhs[j] = -self.q[j];
        }
        for (row, &(_, h)) in active.iter().enumerate() {
            rhs[n + row] = h;
        }
        let lu = kkt.clone().lu();
        let mut sol = lu.solve(&rhs)?;
        // One step of iterative refinement against the unregularized system.
        let mut kkt0 = kkt;
        for j in 0..n {
            kkt0[(j, j)] -= reg;
        }
        for row in 0..k {
            kkt0[(n + row, n + row)] += reg;
        }
        let resid = &rhs - &kkt0 * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }

        let x = sol.rows(0, n).clone_owned();
        let mut y_full = DVector::zeros(m);
        for (row, &(i, _)) in active.iter().enumerate() {
            y_full[i] = sol[n + row];
        }

        // Verify the polished point before accepting it.
        let ax = &self.a * &x;
        let mut r_prim = 0.0_f64;
        for i in 0..m {
            if !is_neg_inf(l[i]) {
                r_prim = r_prim.max(l[i] - ax[i]);
            }
            if !is_pos_inf(u[i]) {
                r_prim = r_prim.max(ax[i] - u[i]);
            }
        }
        let stat = &self.p * &x + &self.q + &self.a_t * &y_full;
        let r_dual = stat.amax();
        if r_prim <= POLISH_KKT_TOL && r_dual <= POLISH_KKT_TOL {
            Some(self.finish(SolveKind::Optimal, &x, r_prim.max(0.0), r_dual, iterations))
        } else {
            None
        }
    }

    fn primal_infeasibility_certificate(
        &self,
        dy: &DVector<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
    ) -> bool {
        let norm = dy.amax();
        if norm <= 1e-12 {
            return false;
        }
        let t = self.settings.eps_inf * norm;
        let mut aty = DVector::<f64>::zeros(self.n);
        aty.gemv(1.0, &self.a_t, dy, 0.0);
        if aty.amax() > t {
            return false;
        }
        let mut support = 0.0;
        for i in 0..self.m {
            if dy[i] > 0.0 {
                if is_pos_inf(u[i]) {
                    return false;
                }
                support += u[i] * dy[i];
            } else if dy[i] < 0.0 {
                if is_neg_inf(l[i]) {
                    return false;
                }
                support += l[i] * dy[i];
            }
        }
        support <= -t
    }

    fn dual_infeasibility_certificate(
        &self,
        dx: &DVector<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
    ) -> bool {
        let norm = dx.amax();
        if norm <= 1e-12 {
            return false;
        }
        let t = self.settings.eps_inf * norm;
        let mut pdx = DVector::<f64>::zeros(self.n);
        pdx.gemv(1.0, &self.p, dx, 0.0);
        if pdx.amax() > t {
            return false;
        }
        if self.q.dot(dx) > -t {
            return false;
        }
        let adx = &self.a * dx;
        for i in 0..self.m {
            if !is_pos_inf(u[i]) && adx[i] > t {
                return false;
            }
            if !is_neg_inf(l[i]) && adx[i] < -t {
                return false;
            }
        }
        true
    }
}

/// Solve a convex QP with the default operator-splitting settings.
pub fn solve_qp(qp: &QuadraticProgram) -> Result<SolveStatus> {
    let ws = QpWorkspace::new(qp, QpSettings::default())?;
    Ok(ws.solve())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::INF;
    use nalgebra::{dmatrix, dvector};

    fn qp_1d(p: f64, q: f64, lo: f64, hi: f64) -> QuadraticProgram {
        QuadraticProgram::new(
            dmatrix![p],
            dvector![q],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(0),
            dvector![lo],
            dvector![hi],
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_minimum() {
        // min (z-1)^2 = z^2 - 2z + 1 -> P = 2, q = -2, offset 1.
        let qp = qp_1d(2.0, -2.0, -INF, INF);
        let s = solve_qp(&qp).unwrap();
        assert!(s.is_optimal());
        assert!((s.solution[0] - 1.0).abs() < 1e-7);
        assert!((s.objective + 1.0).abs() < 1e-7); // objective excludes the +1 offset
    }

    #[test]
    fn active_bound() {
        // min z^2 s.t. z >= 2
        let qp = qp_1d(2.0, 0.0, 2.0, INF);
        let s = solve_qp(&qp).unwrap();
        assert!(s.is_optimal());
        assert!((s.solution[0] - 2.0).abs() < 1e-7);
        assert!((s.objective - 4.0).abs() < 1e-6);
        assert!(s.primal_residual <= 1e-6 && s.dual_residual <= 1e-6);
    }

    #[test]
    fn infeasible_detected() {
        // z >= 1 and z <= -1 via two rows.
        let qp = QuadraticProgram::new(
            dmatrix![2.0],
            dvector![0.0],
            dmatrix![1.0; 1.0],
            dvector![1.0, -INF],
            dvector![INF, -1.0],
            dvector![-INF],
            dvector![INF],
        )
        .unwrap();
        let s = solve_qp(&qp).unwrap();
        assert_eq!(s.kind, SolveKind::Infeasible);
    }

    #[test]
    fn equality_rows() {
        // min z1^2 + z2^2 s.t. z1 + z2 = 1 -> z = (0.5, 0.5).
        let qp = QuadraticProgram::new(
            dmatrix![2.0, 0.0; 0.0, 2.0],
            dvector![0.0, 0.0],
            dmatrix![1.0, 1.0],
            dvector![1.0],
            dvector![1.0],
            dvector![-INF, -INF],
            dvector![INF, INF],
        )
        .unwrap();
        let s = solve_qp(&qp).unwrap();
        assert!(s.is_optimal());
        assert!((s.solution[0] - 0.5).abs() < 1e-7);
        assert!((s.solution[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn rejects_non_psd() {
        let r = QuadraticProgram::new(
            dmatrix![-1.0],
            dvector![0.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(0),
            dvector![-INF],
            dvector![INF],
        );
        assert!(r.is_err());
    }

    #[test]
    fn deterministic_across_runs() {
        let qp = QuadraticProgram::new(
            dmatrix![2.0, 0.3; 0.3, 1.5],
            dvector![-1.0, 0.7],
            dmatrix![1.0, 1.0; 1.0, -2.0],
            dvector![-1.0, -INF],
            dvector![1.0, 0.5],
            dvector![-2.0, -2.0],
            dvector![2.0, 2.0],
        )
        .unwrap();
        let a = solve_qp(&qp).unwrap();
        let b = solve_qp(&qp).unwrap();
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.solution[0].to_bits(), b.solution[0].to_bits());
        assert_eq!(a.iterations, b.iterations);
    }
}
