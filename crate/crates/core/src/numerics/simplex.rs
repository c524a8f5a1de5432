//! Two-phase dense revised simplex.
//!
//! The bounded-variable problem is rewritten in standard form
//! `min c'x, Ax = b, x >= 0` (variable shifts/negations/splits, slack and
//! surplus columns, range rows split in two), then solved with an explicit
//! dense basis inverse. Pricing is Dantzig by default and falls back to
//! Bland's rule after a run of degenerate pivots, which guarantees
//! termination on the tiny problems this crate generates.

use nalgebra::{DMatrix, DVector};

use super::{is_neg_inf, is_pos_inf, LinearProgram, SolveKind, SolveStatus};
use crate::{Error, Result};

const TOL_PRICE: f64 = 1e-9;
const TOL_PIVOT: f64 = 1e-9;
const TOL_FEAS_P1: f64 = 1e-8;
const DEGENERATE_STREAK_LIMIT: usize = 40;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = lb + x'
    Shifted { col: usize, lb: f64 },
    /// x = ub - x'
    Negated { col: usize, ub: f64 },
    /// x = x+ - x-
    Split { pos: usize, neg: usize },
}

struct Standard {
    a: DMatrix<f64>,
    b: DVector<f64>,
    cost: DVector<f64>,
    var_map: Vec<VarMap>,
    /// Per row: column index usable as the initial basic variable, if any.
    natural_basic: Vec<Option<usize>>,
}

enum RowKind {
    Eq,
    Le,
    Ge,
}

fn standardize(lp: &LinearProgram) -> Standard {
    let n = lp.num_vars();

    // Variable transforms.
    let mut var_map = Vec::with_capacity(n);
    let mut n_struct = 0usize;
    for j in 0..n {
        let (vl, vu) = (lp.var_lower[j], lp.var_upper[j]);
        if !is_neg_inf(vl) {
            var_map.push(VarMap::Shifted { col: n_struct, lb: vl });
            n_struct += 1;
        } else if !is_pos_inf(vu) {
            var_map.push(VarMap::Negated { col: n_struct, ub: vu });
            n_struct += 1;
        } else {
            var_map.push(VarMap::Split {
                pos: n_struct,
                neg: n_struct + 1,
            });
            n_struct += 2;
        }
    }

    // Assemble rows: original row constraints, then upper-bound rows for
    // doubly-bounded variables.
    struct RowSpec {
        coeffs: Vec<(usize, f64)>,
        kind: RowKind,
        rhs: f64,
    }
    let mut rows: Vec<RowSpec> = Vec::new();
    for i in 0..lp.num_rows() {
        let (l, u) = (lp.row_lower[i], lp.row_upper[i]);
        if is_neg_inf(l) && is_pos_inf(u) {
            continue;
        }
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        let mut shift = 0.0;
        for j in 0..n {
            let aij = lp.constraints[(i, j)];
            if aij == 0.0 {
                continue;
            }
            match var_map[j] {
                VarMap::Shifted { col, lb } => {
                    coeffs.push((col, aij));
                    shift += aij * lb;
                }
                VarMap::Negated { col, ub } => {
                    coeffs.push((col, -aij));
                    shift += aij * ub;
                }
                VarMap::Split { pos, neg } => {
                    coeffs.push((pos, aij));
                    coeffs.push((neg, -aij));
                }
            }
        }
        if l == u {
            rows.push(RowSpec {
                coeffs,
                kind: RowKind::Eq,
                rhs: l - shift,
            });
        } else {
            if !is_neg_inf(l) {
                rows.push(RowSpec {
                    coeffs: coeffs.clone(),
                    kind: RowKind::Ge,
                    rhs: l - shift,
                });
            }
            if !is_pos_inf(u) {
                rows.push(RowSpec {
                    coeffs,
                    kind: RowKind::Le,
                    rhs: u - shift,
                });
            }
        }
    }
    for j in 0..n {
        if let VarMap::Shifted { col, lb } = var_map[j] {
            let vu = lp.var_upper[j];
            if !is_pos_inf(vu) {
                rows.push(RowSpec {
                    coeffs: vec![(col, 1.0)],
                    kind: RowKind::Le,
                    rhs: vu - lb,
                });
            }
        }
    }

    // Standard-form matrix with slack/surplus columns, right-hand side
    // normalized nonnegative.
    let m = rows.len();
    let n_slack = rows
        .iter()
        .filter(|r| !matches!(r.kind, RowKind::Eq))
        .count();
    let n_total = n_struct + n_slack;
    let mut a = DMatrix::zeros(m, n_total);
    let mut b = DVector::zeros(m);
    let mut natural_basic = vec![None; m];
    let mut slack_at = n_struct;
    for (i, row) in rows.iter().enumerate() {
        let negate = row.rhs < 0.0;
        let sgn = if negate { -1.0 } else { 1.0 };
        for &(c, v) in &row.coeffs {
            a[(i, c)] += sgn * v;
        }
        b[i] = sgn * row.rhs;
        let slack_sign = match row.kind {
            RowKind::Eq => None,
            RowKind::Le => Some(1.0),
            RowKind::Ge => Some(-1.0),
        };
        if let Some(s) = slack_sign {
            a[(i, slack_at)] = sgn * s;
            if sgn * s > 0.0 {
                natural_basic[i] = Some(slack_at);
            }
            slack_at += 1;
        }
    }

    // Phase-2 cost over standard variables.
    let mut cost = DVector::zeros(n_total);
    for j in 0..n {
        let cj = lp.objective[j];
        match var_map[j] {
            VarMap::Shifted { col, .. } => cost[col] += cj,
            VarMap::Negated { col, .. } => cost[col] -= cj,
            VarMap::Split { pos, neg } => {
                cost[pos] += cj;
                cost[neg] -= cj;
            }
        }
    }

    Standard {
        a,
        b,
        cost,
        var_map,
        natural_basic,
    }
}

/// Simplex state over the standard-form problem; columns `n..n+m` are the
/// implicit artificial identity columns.
struct Tableau<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    m: usize,
    n: usize,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    is_artificial_basic: Vec<bool>,
    b_inv: DMatrix<f64>,
    x_b: DVector<f64>,
    pivots_since_refactor: usize,
    iterations: usize,
}

enum StepOutcome {
    Optimal,
    Pivoted { nondegenerate: bool },
    Unbounded,
}

impl<'a> Tableau<'a> {
    fn new(std: &'a Standard) -> Self {
        let m = std.a.nrows();
        let n = std.a.ncols();
        let mut basis = Vec::with_capacity(m);
        let mut in_basis = vec![false; n + m];
        let mut is_artificial_basic = vec![false; m];
        for i in 0..m {
            match std.natural_basic[i] {
                Some(c) => {
                    basis.push(c);
                    in_basis[c] = true;
                }
                None => {
                    basis.push(n + i);
                    in_basis[n + i] = true;
                    is_artificial_basic[i] = true;
                }
            }
        }
        let mut t = Tableau {
            a: &std.a,
            b: &std.b,
            m,
            n,
            basis,
            in_basis,
            is_artificial_basic,
            b_inv: DMatrix::identity(m, m),
            x_b: DVector::zeros(m),
            pivots_since_refactor: 0,
            iterations: 0,
        };
        t.refactor().expect("initial basis is an identity");
        t
    }

    fn column(&self, j: usize, out: &mut DVector<f64>) {
        if j < self.n {
            out.copy_from(&self.a.column(j));
        } else {
            out.fill(0.0);
            out[j - self.n] = 1.0;
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let mut bmat = DMatrix::zeros(self.m, self.m);
        let mut col = DVector::zeros(self.m);
        for (k, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            bmat.set_column(k, &col);
        }
        self.b_inv = bmat
            .try_inverse()
            .ok_or_else(|| Error::Solver("singular simplex basis".into()))?;
        self.x_b = &self.b_inv * self.b;
        self.pivots_since_refactor = 0;
        Ok(())
    }

    fn cost_of(&self, cost: &DVector<f64>, j: usize, artificial_cost: f64) -> f64 {
        if j < self.n {
            cost[j]
        } else {
            artificial_cost
        }
    }

    /// One pricing + ratio-test + pivot step.
    fn step(&mut self, cost: &DVector<f64>, artificial_cost: f64, bland: bool) -> Result<StepOutcome> {
        self.iterations += 1;

        // Simplex multipliers y = B^-T c_B.
        let c_b = DVector::from_fn(self.m, |i, _| self.cost_of(cost, self.basis[i], artificial_cost));
        let y = self.b_inv.transpose() * c_b;

        // Pricing over nonbasic real columns; artificials never re-enter.
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..self.n {
            if self.in_basis[j] {
                continue;
            }
            let d = cost[j] - y.dot(&self.a.column(j));
            if d < -TOL_PRICE {
                if bland {
                    entering = Some((j, d));
                    break;
                }
                match entering {
                    Some((_, best)) if d >= best => {}
                    _ => entering = Some((j, d)),
                }
            }
        }
        let Some((e, _)) = entering else {
            return Ok(StepOutcome::Optimal);
        };

        // Direction w = B^-1 a_e.
        let mut a_e = DVector::zeros(self.m);
        self.column(e, &mut a_e);
        let w = &self.b_inv * &a_e;

        // Ratio test. A basic artificial already at zero must stay there:
        // any movement in its row blocks at theta = 0 and pivots it out.
        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let candidate = if self.is_artificial_basic[i] && self.x_b[i] <= 1e-12 {
                if w[i].abs() > TOL_PIVOT {
                    Some(0.0)
                } else {
                    None
                }
            } else if w[i] > TOL_PIVOT {
                Some((self.x_b[i].max(0.0)) / w[i])
            } else {
                None
            };
            if let Some(theta) = candidate {
                let better = match leaving {
                    None => true,
                    Some((li, lt)) => {
                        theta < lt - 1e-12
                            || (theta < lt + 1e-12 && self.basis[i] < self.basis[li])
                    }
                };
                if better {
                    leaving = Some((i, theta));
                }
            }
        }
        let Some((r, theta)) = leaving else {
            return Ok(StepOutcome::Unbounded);
        };

        // Pivot: update basis, x_b, and the explicit inverse.
        let leaving_var = self.basis[r];
        self.in_basis[leaving_var] = false;
        self.in_basis[e] = true;
        self.basis[r] = e;
        self.is_artificial_basic[r] = e >= self.n;

        for i in 0..self.m {
            if i != r {
                self.x_b[i] -= theta * w[i];
            }
        }
        self.x_b[r] = theta;

        let pivot = w[r];
        let mut row_r = self.b_inv.row(r).clone_owned();
        row_r /= pivot;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let factor = w[i];
            if factor != 0.0 {
                for k in 0..self.m {
                    self.b_inv[(i, k)] -= factor * row_r[k];
                }
            }
        }
        self.b_inv.row_mut(r).copy_from(&row_r);

        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok(StepOutcome::Pivoted {
            nondegenerate: theta > 1e-12,
        })
    }

    /// Run until optimality/unboundedness or the pivot cap.
    fn optimize(
        &mut self,
        cost: &DVector<f64>,
        artificial_cost: f64,
        max_pivots: usize,
    ) -> Result<SolveKind> {
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        for _ in 0..max_pivots {
            match self.step(cost, artificial_cost, bland)? {
                StepOutcome::Optimal => return Ok(SolveKind::Optimal),
                StepOutcome::Unbounded => return Ok(SolveKind::Unbounded),
                StepOutcome::Pivoted { nondegenerate } => {
                    if nondegenerate {
                        degenerate_streak = 0;
                        bland = false;
                    } else {
                        degenerate_streak += 1;
                        if degenerate_streak > DEGENERATE_STREAK_LIMIT {
                            bland = true;
                        }
                    }
                }
            }
        }
        Ok(SolveKind::MaxIter)
    }

    fn phase1_value(&self) -> f64 {
        (0..self.m)
            .filter(|&i| self.is_artificial_basic[i])
            .map(|i| self.x_b[i].max(0.0))
            .sum()
    }

    /// Pivot basic artificials out wherever a real column can replace them.
    fn evict_artificials(&mut self) -> Result<()> {
        for r in 0..self.m {
            if !self.is_artificial_basic[r] {
                continue;
            }
            let mut found = None;
            for j in 0..self.n {
                if self.in_basis[j] {
                    continue;
                }
                let mut val = 0.0;
                for k in 0..self.m {
                    val += self.b_inv[(r, k)] * self.a[(k, j)];
                }
                if val.abs() > TOL_PIVOT {
                    found = Some((j, val));
                    break;
                }
            }
            if let Some((j, _)) = found {
                let leaving_var = self.basis[r];
                self.in_basis[leaving_var] = false;
                self.in_basis[j] = true;
                self.basis[r] = j;
                self.is_artificial_basic[r] = false;
                self.refactor()?;
            }
            // A row with no usable real column is redundant; its artificial
            // stays basic at zero and the ratio-test guard keeps it there.
        }
        Ok(())
    }

    fn solution(&self, n_total: usize) -> DVector<f64> {
        let mut x = DVector::zeros(n_total);
        for (i, &j) in self.basis.iter().enumerate() {
            if j < n_total {
                x[j] = self.x_b[i].max(0.0);
            }
        }
        x
    }
}

fn recover(lp: &LinearProgram, std: &Standard, x_std: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(lp.num_vars(), |j, _| match std.var_map[j] {
        VarMap::Shifted { col, lb } => lb + x_std[col],
        VarMap::Negated { col, ub } => ub - x_std[col],
        VarMap::Split { pos, neg } => x_std[pos] - x_std[neg],
    })
}

/// Solve a linear program with the two-phase revised simplex method.
pub fn solve_lp(lp: &LinearProgram) -> Result<SolveStatus> {
    let std = standardize(lp);
    let m = std.a.nrows();
    let n_total = std.a.ncols();
    if m == 0 {
        // No binding rows: optimum is at a variable bound.
        return solve_unconstrained(lp);
    }
    let max_pivots = 20_000 + 10 * (n_total + m);

    let mut t = Tableau::new(&std);

    let needs_phase1 = t.is_artificial_basic.iter().any(|&x| x);
    if needs_phase1 {
        let zero_cost = DVector::zeros(n_total);
        let kind = t.optimize(&zero_cost, 1.0, max_pivots)?;
        if kind == SolveKind::MaxIter {
            return Ok(finish(lp, &std, &t, SolveKind::MaxIter));
        }
        if kind == SolveKind::Unbounded {
            return Err(Error::Solver("phase-1 subproblem reported unbounded".into()));
        }
        if t.phase1_value() > TOL_FEAS_P1 {
            return Ok(finish(lp, &std, &t, SolveKind::Infeasible));
        }
        t.evict_artificials()?;
    }

    let kind = t.optimize(&std.cost, 0.0, max_pivots)?;
    Ok(finish(lp, &std, &t, kind))
}

fn finish(lp: &LinearProgram, std: &Standard, t: &Tableau, kind: SolveKind) -> SolveStatus {
    let x_std = t.solution(std.a.ncols());
    let z = recover(lp, std, &x_std);
    let objective = match kind {
        SolveKind::Optimal | SolveKind::MaxIter => lp.objective.dot(&z),
        SolveKind::Infeasible => f64::NAN,
        SolveKind::Unbounded => f64::NEG_INFINITY,
    };
    let primal_residual = match kind {
        SolveKind::Optimal | SolveKind::MaxIter => lp.infeasibility(&z),
        _ => f64::NAN,
    };
    SolveStatus {
        kind,
        objective,
        solution: z,
        primal_residual,
        dual_residual: 0.0,
        iterations: t.iterations,
    }
}

/// Degenerate case: no rows at all. Each variable sits at the bound that
/// minimizes its cost term; a negative cost with no upper bound means the
/// problem is unbounded.
fn solve_unconstrained(lp: &LinearProgram) -> Result<SolveStatus> {
    let n = lp.num_vars();
    let mut z = DVector::zeros(n);
    for j in 0..n {
        let c = lp.objective[j];
        let (vl, vu) = (lp.var_lower[j], lp.var_upper[j]);
        if c > 0.0 {
            if is_neg_inf(vl) {
                return Ok(unbounded(n));
            }
            z[j] = vl;
        } else if c < 0.0 {
            if is_pos_inf(vu) {
                return Ok(unbounded(n));
            }
            z[j] = vu;
        } else {
            // Zero cost: pick zero if admissible, otherwise the nearest bound.
            z[j] = if !is_neg_inf(vl) && vl > 0.0 {
                vl
            } else if !is_pos_inf(vu) && vu < 0.0 {
                vu
            } else {
                0.0
            };
        }
    }
    Ok(SolveStatus {
        kind: SolveKind::Optimal,
        objective: lp.objective.dot(&z),
        primal_residual: lp.infeasibility(&z),
        dual_residual: 0.0,
        solution: z,
        iterations: 0,
    })
}

fn unbounded(n: usize) -> SolveStatus {
    SolveStatus {
        kind: SolveKind::Unbounded,
        objective: f64::NEG_INFINITY,
        solution: DVector::zeros(n),
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        iterations: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::INF;

    fn lp(
        c: &[f64],
        a: &[&[f64]],
        rl: &[f64],
        ru: &[f64],
        vl: &[f64],
        vu: &[f64],
    ) -> LinearProgram {
        let n = c.len();
        let m = a.len();
        LinearProgram::new(
            DVector::from_column_slice(c),
            DMatrix::from_fn(m, n, |i, j| a[i][j]),
            DVector::from_column_slice(rl),
            DVector::from_column_slice(ru),
            DVector::from_column_slice(vl),
            DVector::from_column_slice(vu),
        )
        .unwrap()
    }

    #[test]
    fn single_active_bound() {
        // min z s.t. z >= 1
        let p = lp(&[1.0], &[&[1.0]], &[1.0], &[INF], &[-INF], &[INF]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.kind, SolveKind::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-9);
        assert!((s.solution[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn simplex_vertex() {
        // min -z1 - z2 s.t. z1 + z2 <= 1, z >= 0
        let p = lp(
            &[-1.0, -1.0],
            &[&[1.0, 1.0]],
            &[-INF],
            &[1.0],
            &[0.0, 0.0],
            &[INF, INF],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.kind, SolveKind::Optimal);
        assert!((s.objective + 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_certified() {
        // z <= -1 and z >= 1
        let p = lp(
            &[0.0],
            &[&[1.0], &[1.0]],
            &[-INF, 1.0],
            &[-1.0, INF],
            &[-INF],
            &[INF],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.kind, SolveKind::Infeasible);
    }

    #[test]
    fn unbounded_certified() {
        // min -z s.t. z >= 0
        let p = lp(&[-1.0], &[&[1.0]], &[0.0], &[INF], &[-INF], &[INF]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.kind, SolveKind::Unbounded);
    }

    #[test]
    fn equality_and_range_rows() {
        // min z1 + 2 z2 s.t. z1 + z2 = 1, 0.2 <= z1 - z2 <= 0.5, z free
        let p = lp(
            &[1.0, 2.0],
            &[&[1.0, 1.0], &[1.0, -1.0]],
            &[1.0, 0.2],
            &[1.0, 0.5],
            &[-INF, -INF],
            &[INF, INF],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.kind, SolveKind::Optimal);
        // z1 - z2 = 0.5 minimizes cost: z1 = 0.75, z2 = 0.25.
        assert!((s.solution[0] - 0.75).abs() < 1e-8);
        assert!((s.solution[1] - 0.25).abs() < 1e-8);
        assert!(s.primal_residual < 1e-9);
    }

    #[test]
    fn doubly_bounded_variables() {
        // min -z1 - 0.5 z2, 0 <= z1 <= 0.3, 0 <= z2 <= 2, z1 + z2 <= 1.
        let p = lp(
            &[-1.0, -0.5],
            &[&[1.0, 1.0]],
            &[-INF],
            &[1.0],
            &[0.0, 0.0],
            &[0.3, 2.0],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.kind, SolveKind::Optimal);
        assert!((s.solution[0] - 0.3).abs() < 1e-8);
        assert!((s.solution[1] - 0.7).abs() < 1e-8);
        assert!((s.objective + 0.65).abs() < 1e-9);
    }

    #[test]
    fn deterministic_across_runs() {
        let p = lp(
            &[-1.0, 2.0, -0.5],
            &[&[1.0, 1.0, 1.0], &[1.0, -1.0, 0.0]],
            &[-INF, -0.5],
            &[2.0, 0.5],
            &[0.0, 0.0, 0.0],
            &[INF, INF, 1.0],
        );
        let s1 = solve_lp(&p).unwrap();
        let s2 = solve_lp(&p).unwrap();
        assert_eq!(s1.objective.to_bits(), s2.objective.to_bits());
        assert_eq!(s1.iterations, s2.iterations);
        for j in 0..3 {
            assert_eq!(s1.solution[j].to_bits(), s2.solution[j].to_bits());
        }
    }
}
