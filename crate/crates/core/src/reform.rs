//! Tractable dual reformulations of the worst-case CVaR constraint.
//!
//! For a total-variation ball of radius theta around empirical weights `p`,
//!
//! ```text
//! sup_mu CVaR_beta[g(x, w)] = inf  2*lambda*theta + eta + nu + sum_l (g1_l - g2_l) p_l
//!                             s.t. beta*(g1_l - g2_l + nu) >= [g(x, w_l) - eta]_+
//!                                  g1_l + g2_l = lambda,    lambda, g1, g2 >= 0,
//! ```
//!
//! and for an order-1 Wasserstein ball,
//!
//! ```text
//! sup_mu CVaR_beta[g(x, w)] = inf  lambda*theta + eta + sum_l s_l
//!                             s.t. p_l ([g(x, w_i) - eta]_+ - lambda ||w_i - w_l||) <= beta s_l,
//!                                  lambda >= 0.
//! ```
//!
//! The positive parts are linearized with epigraph variables `e >= 0`,
//! `e >= g - eta`; this is exact because they only appear on the larger side
//! of the constraints. [`eval_worst_case_cvar_dual`] minimizes the dual
//! objective at a fixed state, which must agree with the brute-force oracles
//! in [`crate::risk`]. [`emit_dual_block`] instead emits the constraint rows
//! over state decision variables with the dual objective capped at the risk
//! tolerance, for embedding into the finite-horizon problem.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec;
use crate::numerics::{self, LinearProgram, SolveKind, INF};
use crate::risk::{
    worst_case_cvar_tv_oracle, worst_case_cvar_w1_oracle, AmbiguitySet, DiscreteDistribution,
    Metric, RiskSpec,
};
use crate::{Error, Result};

/// One affine piece `coeffs' x + offset` of a constraint function in the
/// state decision variables.
#[derive(Debug, Clone)]
pub struct AffinePiece {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

/// Per-atom constraint evaluations: scalars at a fixed state, or a max of
/// affine pieces when the state is a decision variable.
#[derive(Debug, Clone)]
pub enum ConstraintAtomValues {
    Fixed(Vec<f64>),
    MaxAffine(Vec<Vec<AffinePiece>>),
}

/// Auxiliary variable bounds inside a [`DualBlock`].
#[derive(Debug, Clone, Copy)]
pub struct AuxVar {
    pub lower: f64,
    pub upper: f64,
}

/// One linear row of a [`DualBlock`]; state coefficients address global
/// decision-variable indices, aux coefficients address block-local indices.
#[derive(Debug, Clone)]
pub struct BlockRow {
    pub state_coeffs: Vec<(usize, f64)>,
    pub aux_coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

/// Linear-inequality encoding of "the worst-case CVaR of g(x, .) is at most
/// delta": a state admits feasible auxiliary variables iff the DR constraint
/// holds there.
#[derive(Debug, Clone)]
pub struct DualBlock {
    pub aux_vars: Vec<AuxVar>,
    pub rows: Vec<BlockRow>,
}

fn free() -> AuxVar {
    AuxVar {
        lower: -INF,
        upper: INF,
    }
}

fn nonneg() -> AuxVar {
    AuxVar {
        lower: 0.0,
        upper: INF,
    }
}

struct TvLayout {
    eta: usize,
    nu: usize,
    lambda: usize,
    gamma1: usize,
    gamma2: usize,
    epi: usize,
    count: usize,
}

fn tv_layout(l: usize) -> TvLayout {
    TvLayout {
        eta: 0,
        nu: 1,
        lambda: 2,
        gamma1: 3,
        gamma2: 3 + l,
        epi: 3 + 2 * l,
        count: 3 + 3 * l,
    }
}

struct W1Layout {
    eta: usize,
    lambda: usize,
    s: usize,
    epi: usize,
    count: usize,
}

fn w1_layout(l: usize) -> W1Layout {
    W1Layout {
        eta: 0,
        lambda: 1,
        s: 2,
        epi: 2 + l,
        count: 2 + 2 * l,
    }
}

/// Auxiliary variables and dual objective coefficients for one block.
fn dual_objective(amb: &AmbiguitySet) -> (Vec<AuxVar>, Vec<f64>) {
    let l = amb.reference.len();
    let p = amb.reference.weights();
    match amb.metric {
        Metric::TotalVariation => {
            let lay = tv_layout(l);
            let mut vars = vec![nonneg(); lay.count];
            vars[lay.eta] = free();
            vars[lay.nu] = free();
            let mut obj = vec![0.0; lay.count];
            obj[lay.eta] = 1.0;
            obj[lay.nu] = 1.0;
            obj[lay.lambda] = 2.0 * amb.radius;
            for i in 0..l {
                obj[lay.gamma1 + i] = p[i];
                obj[lay.gamma2 + i] = -p[i];
            }
            (vars, obj)
        }
        Metric::Wasserstein => {
            let lay = w1_layout(l);
            let mut vars = vec![nonneg(); lay.count];
            vars[lay.eta] = free();
            for i in 0..l {
                vars[lay.s + i] = free();
            }
            let mut obj = vec![0.0; lay.count];
            obj[lay.eta] = 1.0;
            obj[lay.lambda] = amb.radius;
            for i in 0..l {
                obj[lay.s + i] = 1.0;
            }
            (vars, obj)
        }
    }
}

/// Rows that do not involve g: the dual feasibility system minus the
/// epigraph rows.
fn structural_rows(amb: &AmbiguitySet, beta: f64) -> Vec<BlockRow> {
    let l = amb.reference.len();
    let p = amb.reference.weights();
    let mut rows = Vec::new();
    match amb.metric {
        Metric::TotalVariation => {
            let lay = tv_layout(l);
            for i in 0..l {
                // beta (gamma1_i - gamma2_i + nu) - e_i >= 0
                rows.push(BlockRow {
                    state_coeffs: vec![],
                    aux_coeffs: vec![
                        (lay.gamma1 + i, beta),
                        (lay.gamma2 + i, -beta),
                        (lay.nu, beta),
                        (lay.epi + i, -1.0),
                    ],
                    lower: 0.0,
                    upper: INF,
                });
                // gamma1_i + gamma2_i = lambda
                rows.push(BlockRow {
                    state_coeffs: vec![],
                    aux_coeffs: vec![
                        (lay.gamma1 + i, 1.0),
                        (lay.gamma2 + i, 1.0),
                        (lay.lambda, -1.0),
                    ],
                    lower: 0.0,
                    upper: 0.0,
                });
            }
        }
        Metric::Wasserstein => {
            let lay = w1_layout(l);
            let dist = amb.reference.distance_matrix();
            for i in 0..l {
                for s in 0..l {
                    // p_s (e_i - lambda d_is) <= beta s_s
                    rows.push(BlockRow {
                        state_coeffs: vec![],
                        aux_coeffs: vec![
                            (lay.epi + i, p[s]),
                            (lay.lambda, -p[s] * dist[(i, s)]),
                            (lay.s + s, -beta),
                        ],
                        lower: -INF,
                        upper: 0.0,
                    });
                }
            }
        }
    }
    rows
}

fn epigraph_index(amb: &AmbiguitySet, atom: usize) -> usize {
    let l = amb.reference.len();
    match amb.metric {
        Metric::TotalVariation => tv_layout(l).epi + atom,
        Metric::Wasserstein => w1_layout(l).epi + atom,
    }
}

fn eta_index(amb: &AmbiguitySet) -> usize {
    match amb.metric {
        Metric::TotalVariation => tv_layout(amb.reference.len()).eta,
        Metric::Wasserstein => w1_layout(amb.reference.len()).eta,
    }
}

/// Evaluate the worst-case CVaR at a fixed state by minimizing the dual
/// objective; equals the matching brute-force oracle.
pub fn eval_worst_case_cvar_dual(values: &[f64], amb: &AmbiguitySet, beta: f64) -> Result<f64> {
    let l = amb.reference.len();
    if values.len() != l {
        return Err(Error::Dimension(format!(
            "{} constraint values for {} atoms",
            values.len(),
            l
        )));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidInput(format!("beta = {beta} outside (0, 1]")));
    }
    let (vars, obj) = dual_objective(amb);
    let mut rows = structural_rows(amb, beta);
    let eta = eta_index(amb);
    for (i, &g) in values.iter().enumerate() {
        // e_i + eta >= g_i
        rows.push(BlockRow {
            state_coeffs: vec![],
            aux_coeffs: vec![(epigraph_index(amb, i), 1.0), (eta, 1.0)],
            lower: g,
            upper: INF,
        });
    }

    let n = vars.len();
    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut rl = DVector::zeros(m);
    let mut ru = DVector::zeros(m);
    for (r, row) in rows.iter().enumerate() {
        for &(j, c) in &row.aux_coeffs {
            a[(r, j)] += c;
        }
        rl[r] = row.lower;
        ru[r] = row.upper;
    }
    let lp = LinearProgram::new(
        DVector::from_vec(obj),
        a,
        rl,
        ru,
        DVector::from_fn(n, |j, _| vars[j].lower),
        DVector::from_fn(n, |j, _| vars[j].upper),
    )?;
    let status = numerics::solve_lp(&lp)?;
    match status.kind {
        SolveKind::Optimal => Ok(status.objective),
        SolveKind::MaxIter => Err(Error::Solver(
            "dual reformulation LP hit the pivot cap".into(),
        )),
        other => Err(Error::Solver(format!(
            "dual reformulation LP unexpectedly {other:?}"
        ))),
    }
}

/// Emit the DR constraint block over state decision variables: the rows
/// admit feasible auxiliary variables iff
/// `sup_mu CVaR_beta[g(x, .)] <= delta` at that state. For max-of-affine g
/// the epigraph relaxation is exact because `[g - eta]_+` only appears on
/// the larger side of the dual constraints.
pub fn emit_dual_block(
    g_forms: &ConstraintAtomValues,
    amb: &AmbiguitySet,
    risk: &RiskSpec,
    state_var_indices: &[usize],
) -> Result<DualBlock> {
    let l = amb.reference.len();
    let pieces: Vec<Vec<AffinePiece>> = match g_forms {
        ConstraintAtomValues::Fixed(values) => {
            if values.len() != l {
                return Err(Error::Dimension(format!(
                    "{} constraint values for {} atoms",
                    values.len(),
                    l
                )));
            }
            values
                .iter()
                .map(|&v| {
                    vec![AffinePiece {
                        coeffs: vec![0.0; state_var_indices.len()],
                        offset: v,
                    }]
                })
                .collect()
        }
        ConstraintAtomValues::MaxAffine(pieces) => {
            if pieces.len() != l {
                return Err(Error::Dimension(format!(
                    "{} atom piece lists for {} atoms",
                    pieces.len(),
                    l
                )));
            }
            for (i, atom_pieces) in pieces.iter().enumerate() {
                if atom_pieces.is_empty() {
                    return Err(Error::InvalidInput(format!("atom {i} has no affine pieces")));
                }
                for piece in atom_pieces {
                    if piece.coeffs.len() != state_var_indices.len() {
                        return Err(Error::Dimension(
                            "affine piece length != state variable count".into(),
                        ));
                    }
                    if piece.coeffs.iter().any(|c| !c.is_finite()) || !piece.offset.is_finite() {
                        return Err(Error::InvalidInput("affine piece must be finite".into()));
                    }
                }
            }
            pieces.clone()
        }
    };

    let (vars, obj) = dual_objective(amb);
    let mut rows = structural_rows(amb, risk.beta);
    let eta = eta_index(amb);

    // Epigraph rows: e_i + eta - a_m' x >= b_m for every piece of every atom.
    for (i, atom_pieces) in pieces.iter().enumerate() {
        for piece in atom_pieces {
            let state_coeffs: Vec<(usize, f64)> = state_var_indices
                .iter()
                .zip(&piece.coeffs)
                .filter(|(_, &c)| c != 0.0)
                .map(|(&idx, &c)| (idx, -c))
                .collect();
            rows.push(BlockRow {
                state_coeffs,
                aux_coeffs: vec![(epigraph_index(amb, i), 1.0), (eta, 1.0)],
                lower: piece.offset,
                upper: INF,
            });
        }
    }

    // Linking row: dual objective <= delta.
    rows.push(BlockRow {
        state_coeffs: vec![],
        aux_coeffs: obj
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c != 0.0)
            .map(|(j, &c)| (j, c))
            .collect(),
        lower: -INF,
        upper: risk.delta,
    });

    Ok(DualBlock {
        aux_vars: vars,
        rows,
    })
}

impl DualBlock {
    /// Feasibility of the block at a fixed assignment of the state variables
    /// it was emitted against: the state contribution of each row folds into
    /// the bounds and a feasibility LP over the auxiliaries decides.
    pub fn feasible_at(&self, state: &[f64], state_var_indices: &[usize]) -> Result<bool> {
        if state.len() != state_var_indices.len() {
            return Err(Error::Dimension(
                "state length != state variable index count".into(),
            ));
        }
        let pos_of: std::collections::HashMap<usize, usize> = state_var_indices
            .iter()
            .enumerate()
            .map(|(k, &idx)| (idx, k))
            .collect();
        let n = self.aux_vars.len();
        let m = self.rows.len();
        let mut a = DMatrix::zeros(m, n);
        let mut rl = DVector::zeros(m);
        let mut ru = DVector::zeros(m);
        for (r, row) in self.rows.iter().enumerate() {
            let mut shift = 0.0;
            for &(idx, c) in &row.state_coeffs {
                let k = pos_of.get(&idx).ok_or_else(|| {
                    Error::InvalidInput(format!("row references unknown state var {idx}"))
                })?;
                shift += c * state[*k];
            }
            for &(j, c) in &row.aux_coeffs {
                a[(r, j)] += c;
            }
            rl[r] = if row.lower <= -INF {
                -INF
            } else {
                row.lower - shift
            };
            ru[r] = if row.upper >= INF {
                INF
            } else {
                row.upper - shift
            };
        }
        let lp = LinearProgram::new(
            DVector::zeros(n),
            a,
            rl,
            ru,
            DVector::from_fn(n, |j, _| self.aux_vars[j].lower),
            DVector::from_fn(n, |j, _| self.aux_vars[j].upper),
        )?;
        let status = numerics::solve_lp(&lp)?;
        match status.kind {
            SolveKind::Optimal => Ok(true),
            SolveKind::Infeasible => Ok(false),
            other => Err(Error::Solver(format!("feasibility LP ended {other:?}"))),
        }
    }
}

/// Outcome of the random dual-vs-oracle verification suite.
#[derive(Debug, Clone)]
pub struct ReformVerification {
    pub instances_per_metric: usize,
    pub max_abs_error_tv: f64,
    pub max_abs_error_w1: f64,
}

impl ReformVerification {
    pub fn max_error(&self) -> f64 {
        self.max_abs_error_tv.max(self.max_abs_error_w1)
    }
}

struct ReformInstance {
    dist: DiscreteDistribution,
    values: Vec<f64>,
    beta: f64,
    tv_radius: f64,
    w1_radius: f64,
}

fn random_instance(rng: &mut ChaCha8Rng) -> ReformInstance {
    let l = rng.random_range(2..=9usize);
    // Distinct scalar atoms on a jittered grid.
    let mut atoms: Vec<f64> = (0..l)
        .map(|i| -2.0 + 4.0 * (i as f64) / ((l - 1).max(1) as f64) + rng.random_range(-0.1..0.1))
        .collect();
    atoms.sort_by(f64::total_cmp);
    let mut weights: Vec<f64> = (0..l).map(|_| rng.random_range(0.05..1.0f64)).collect();
    // Occasionally zero a bin to exercise unseen support atoms.
    if l > 2 && rng.random_bool(0.3) {
        let k = rng.random_range(0..l);
        weights[k] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    // Put any rounding slack on the heaviest bin.
    let sum: f64 = weights.iter().sum();
    let heaviest = (0..l).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap();
    weights[heaviest] += 1.0 - sum;
    let dist = DiscreteDistribution::from_scalars(&atoms, &weights).unwrap();
    let diam = atoms[l - 1] - atoms[0];
    let betas = [0.1, 0.2, 0.5, 1.0];
    ReformInstance {
        values: (0..l).map(|_| rng.random_range(-3.0..3.0)).collect(),
        beta: betas[rng.random_range(0..4)],
        tv_radius: rng.random_range(0.0..1.0),
        w1_radius: rng.random_range(0.0..diam.max(1e-6)),
        dist,
    }
}

/// Compare the dual reformulations against the brute-force oracles on random
/// instances of both metrics; returns the worst absolute disagreement.
pub fn verify_dual_vs_oracle(instances_per_metric: usize, seed: u64) -> Result<ReformVerification> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances: Vec<ReformInstance> = (0..instances_per_metric)
        .map(|_| random_instance(&mut rng))
        .collect();

    let errors = exec::map_collect(&instances, |inst| -> Result<(f64, f64)> {
        let tv = AmbiguitySet::new(Metric::TotalVariation, inst.tv_radius, inst.dist.clone())?;
        let tv_oracle = worst_case_cvar_tv_oracle(&inst.values, &tv, inst.beta)?;
        let tv_dual = eval_worst_case_cvar_dual(&inst.values, &tv, inst.beta)?;

        let w1 = AmbiguitySet::new(Metric::Wasserstein, inst.w1_radius, inst.dist.clone())?;
        let w1_oracle = worst_case_cvar_w1_oracle(&inst.values, &w1, inst.beta)?;
        let w1_dual = eval_worst_case_cvar_dual(&inst.values, &w1, inst.beta)?;

        Ok(((tv_dual - tv_oracle).abs(), (w1_dual - w1_oracle).abs()))
    });

    let mut max_tv = 0.0_f64;
    let mut max_w1 = 0.0_f64;
    for e in errors {
        let (tv, w1) = e?;
        max_tv = max_tv.max(tv);
        max_w1 = max_w1.max(w1);
    }
    Ok(ReformVerification {
        instances_per_metric,
        max_abs_error_tv: max_tv,
        max_abs_error_w1: max_w1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atom_tv(theta: f64) -> AmbiguitySet {
        AmbiguitySet::new(
            Metric::TotalVariation,
            theta,
            DiscreteDistribution::uniform_scalars(&[0.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn x_minus_w_pieces() -> ConstraintAtomValues {
        ConstraintAtomValues::MaxAffine(vec![
            vec![AffinePiece {
                coeffs: vec![1.0],
                offset: 0.0,
            }],
            vec![AffinePiece {
                coeffs: vec![1.0],
                offset: -1.0,
            }],
        ])
    }

    #[test]
    fn eval_matches_trivial_mean() {
        let amb = two_atom_tv(0.0);
        let v = eval_worst_case_cvar_dual(&[0.0, 1.0], &amb, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-8);
    }

    #[test]
    fn eval_matches_tv_oracle_hand_case() {
        let amb = two_atom_tv(0.25);
        let v = eval_worst_case_cvar_dual(&[0.0, 1.0], &amb, 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn eval_matches_w1_transport_case() {
        let reference = DiscreteDistribution::from_scalars(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        let amb = AmbiguitySet::new(Metric::Wasserstein, 0.3, reference).unwrap();
        let v = eval_worst_case_cvar_dual(&[0.0, 1.0], &amb, 1.0).unwrap();
        assert!((v - 0.3).abs() < 1e-8);
    }

    #[test]
    fn block_constant_g() {
        let amb = two_atom_tv(0.25);
        let risk = RiskSpec::new(0.5, 0.0).unwrap();
        let block = emit_dual_block(
            &ConstraintAtomValues::Fixed(vec![-1.0, -1.0]),
            &amb,
            &risk,
            &[],
        )
        .unwrap();
        assert!(block.feasible_at(&[], &[]).unwrap());

        let block = emit_dual_block(
            &ConstraintAtomValues::Fixed(vec![1.0, 1.0]),
            &amb,
            &risk,
            &[],
        )
        .unwrap();
        assert!(!block.feasible_at(&[], &[]).unwrap());
    }

    #[test]
    fn block_boundary_matches_evaluator_bisection() {
        // g(x, w) = x - w on atoms {0, 1}, p = [0.5, 0.5], TV theta = 0.25,
        // beta = 0.5, delta = 0: feasibility boundary at x = 0.
        let amb = two_atom_tv(0.25);
        let risk = RiskSpec::new(0.5, 0.0).unwrap();
        let block = emit_dual_block(&x_minus_w_pieces(), &amb, &risk, &[0]).unwrap();
        assert_eq!(block.aux_vars.len(), 3 + 2 * 2 + 2);

        let eval_at = |x: f64| eval_worst_case_cvar_dual(&[x, x - 1.0], &amb, 0.5).unwrap();
        let (mut lo, mut hi) = (-1.0, 1.0);
        assert!(eval_at(lo) <= 0.0 && eval_at(hi) > 0.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if eval_at(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(lo.abs() < 1e-9, "boundary at {lo}");

        assert!(block.feasible_at(&[-1e-7], &[0]).unwrap());
        assert!(!block.feasible_at(&[1e-4], &[0]).unwrap());
    }

    #[test]
    fn block_and_evaluator_consistent_on_grid() {
        let amb = two_atom_tv(0.25);
        let risk = RiskSpec::new(0.5, 0.0).unwrap();
        let block = emit_dual_block(&x_minus_w_pieces(), &amb, &risk, &[0]).unwrap();
        for k in -8..=8 {
            let x = k as f64 * 0.25;
            let value = eval_worst_case_cvar_dual(&[x, x - 1.0], &amb, 0.5).unwrap();
            let feasible = block.feasible_at(&[x], &[0]).unwrap();
            assert_eq!(
                feasible,
                value <= risk.delta + 1e-7,
                "x = {x}, value = {value}, feasible = {feasible}"
            );
        }
    }

    #[test]
    fn feasible_state_set_shrinks_with_theta() {
        let risk = RiskSpec::new(0.5, 0.0).unwrap();
        let grid: Vec<f64> = (-12..=12).map(|k| k as f64 * 0.2).collect();
        let mut previous: Option<Vec<bool>> = None;
        for theta in [0.0, 0.1, 0.25, 0.5] {
            let amb = two_atom_tv(theta);
            let block = emit_dual_block(&x_minus_w_pieces(), &amb, &risk, &[0]).unwrap();
            let feas: Vec<bool> = grid
                .iter()
                .map(|&x| block.feasible_at(&[x], &[0]).unwrap())
                .collect();
            if let Some(prev) = &previous {
                for (i, (&now, &before)) in feas.iter().zip(prev).enumerate() {
                    assert!(!now || before, "state {} became feasible as theta grew", grid[i]);
                }
            }
            previous = Some(feas);
        }
    }

    #[test]
    fn dual_equals_oracle_on_random_instances() {
        let report = verify_dual_vs_oracle(60, 42).unwrap();
        assert!(
            report.max_error() <= 1e-6,
            "max dual-oracle error {:.3e}",
            report.max_error()
        );
    }

    #[test]
    fn rejects_empty_pieces() {
        let amb = two_atom_tv(0.1);
        let risk = RiskSpec::new(0.5, 0.0).unwrap();
        let bad = ConstraintAtomValues::MaxAffine(vec![vec![], vec![]]);
        assert!(emit_dual_block(&bad, &amb, &risk, &[0]).is_err());
    }
}
