//! Finite-support distributions, exact CVaR/VaR, distance-based ambiguity
//! sets, and brute-force worst-case-CVaR oracles.
//!
//! The oracles here are deliberately direct — a greedy mass transfer for the
//! total-variation ball and a primal transport LP for the Wasserstein ball —
//! and serve as ground truth for the dual reformulations in [`crate::reform`].

use nalgebra::{DMatrix, DVector};

use crate::numerics::{self, LinearProgram, SolveKind, INF};
use crate::{Error, Result};

/// Probability distribution with finite support.
///
/// Atoms are points in the uncertainty space; weights live on the unit
/// simplex. Zero weights are allowed (the support is the declared atom set,
/// not the observed one).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    atoms: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidInput("distribution needs at least one atom".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        let dim = atoms[0].len();
        for (i, a) in atoms.iter().enumerate() {
            if a.len() != dim {
                return Err(Error::Dimension(format!("atom {i} has dimension {}", a.len())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("atom {i} has non-finite coordinates")));
            }
        }
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                if atoms[i] == atoms[j] {
                    return Err(Error::InvalidInput(format!("atoms {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { atoms, weights })
    }

    /// Scalar-support convenience constructor.
    pub fn from_scalars(atoms: &[f64], weights: &[f64]) -> Result<Self> {
        Self::new(
            atoms.iter().map(|&a| DVector::from_element(1, a)).collect(),
            weights.to_vec(),
        )
    }

    /// Uniform distribution on scalar atoms.
    pub fn uniform_scalars(atoms: &[f64]) -> Result<Self> {
        let w = 1.0 / atoms.len() as f64;
        Self::from_scalars(atoms, &vec![w; atoms.len()])
    }

    /// Empirical distribution from per-atom sample counts over a declared
    /// support.
    pub fn from_counts(atoms: Vec<DVector<f64>>, counts: &[usize]) -> Result<Self> {
        if atoms.len() != counts.len() {
            return Err(Error::Dimension("counts length != atom count".into()));
        }
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::InvalidInput("empirical distribution needs at least one sample".into()));
        }
        let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self::new(atoms, weights)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[DVector<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Pairwise Euclidean distances between atoms.
    pub fn distance_matrix(&self) -> DMatrix<f64> {
        let l = self.len();
        DMatrix::from_fn(l, l, |i, j| (&self.atoms[i] - &self.atoms[j]).norm())
    }
}

/// Metric choice for distance-based ambiguity sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Total variation: half the l1 distance between weight vectors.
    TotalVariation,
    /// Order-1 Wasserstein transport distance on the atom coordinates.
    Wasserstein,
}

/// Ball of distributions around an empirical reference.
#[derive(Debug, Clone)]
pub struct AmbiguitySet {
    pub metric: Metric,
    pub radius: f64,
    pub reference: DiscreteDistribution,
}

impl AmbiguitySet {
    pub fn new(metric: Metric, radius: f64, reference: DiscreteDistribution) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::InvalidInput(format!("ambiguity radius {radius} must be >= 0")));
        }
        Ok(Self {
            metric,
            radius,
            reference,
        })
    }
}

/// Risk-averseness level and tolerance of the CVaR constraint
/// `CVaR_beta[g] <= delta`.
#[derive(Debug, Clone, Copy)]
pub struct RiskSpec {
    pub beta: f64,
    pub delta: f64,
}

impl RiskSpec {
    pub fn new(beta: f64, delta: f64) -> Result<Self> {
        check_beta(beta)?;
        if !delta.is_finite() {
            return Err(Error::InvalidInput("risk tolerance must be finite".into()));
        }
        Ok(Self { beta, delta })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "risk-averseness beta = {beta} outside (0, 1]"
        )));
    }
    Ok(())
}

fn check_values(values: &[f64], dist_len: usize) -> Result<()> {
    if values.len() != dist_len {
        return Err(Error::Dimension(format!(
            "{} values for {} atoms",
            values.len(),
            dist_len
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("values must be finite".into()));
    }
    Ok(())
}

/// Exact CVaR of a finite-support loss: `min_t t + E[Z - t]_+ / beta`,
/// with the minimizer search restricted to the atom values (the objective
/// is piecewise linear in `t` with breakpoints exactly there).
pub fn cvar(values: &[f64], dist: &DiscreteDistribution, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_values(values, dist.len())?;
    let mut best = f64::INFINITY;
    for &t in values {
        let mut tail = 0.0;
        for (v, w) in values.iter().zip(dist.weights()) {
            tail += w * (v - t).max(0.0);
        }
        best = best.min(t + tail / beta);
    }
    Ok(best)
}

/// Exact VaR: the left-side `(1 - beta)`-quantile by cumulative-weight scan.
pub fn var(values: &[f64], dist: &DiscreteDistribution, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_values(values, dist.len())?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let target = 1.0 - beta;
    let mut cum = 0.0;
    for &i in &order {
        cum += dist.weights()[i];
        if cum >= target - 1e-12 {
            return Ok(values[i]);
        }
    }
    Ok(values[order[order.len() - 1]])
}

/// Greedy maximizer of `sum_l mu_l a_l` over the TV ball
/// `0.5 * ||mu - p||_1 <= theta` on the simplex: move up to `theta` of mass
/// from the smallest-value atoms onto the largest-value atom. Ties break by
/// ascending atom index.
fn tv_ball_max_expectation(a: &[f64], p: &[f64], theta: f64) -> f64 {
    let l = a.len();
    // Receiver: largest value, lowest index on ties.
    let mut recv = 0usize;
    for i in 1..l {
        if a[i] > a[recv] {
            recv = i;
        }
    }
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(i.cmp(&j)));
    let mut mu: Vec<f64> = p.to_vec();
    let mut budget = theta;
    for &i in &order {
        if i == recv || budget <= 0.0 {
            continue;
        }
        let take = mu[i].min(budget);
        mu[i] -= take;
        mu[recv] += take;
        budget -= take;
    }
    mu.iter().zip(a).map(|(m, v)| m * v).sum()
}

/// Brute-force worst-case CVaR over a total-variation ball: for each
/// candidate threshold `t` (an atom value), maximize the tail expectation by
/// greedy mass transfer, then take the outer minimum over `t`.
pub fn worst_case_cvar_tv_oracle(
    values: &[f64],
    amb: &AmbiguitySet,
    beta: f64,
) -> Result<f64> {
    if amb.metric != Metric::TotalVariation {
        return Err(Error::InvalidInput("oracle requires a TV ambiguity set".into()));
    }
    check_beta(beta)?;
    check_values(values, amb.reference.len())?;
    let p = amb.reference.weights();
    let mut best = f64::INFINITY;
    for &t in values {
        let shifted: Vec<f64> = values.iter().map(|&v| (v - t).max(0.0)).collect();
        let tail = tv_ball_max_expectation(&shifted, p, amb.radius);
        best = best.min(t + tail / beta);
    }
    Ok(best)
}

/// Brute-force worst-case CVaR over an order-1 Wasserstein ball: for each
/// candidate threshold `t`, solve the primal transport LP
/// `max sum_i (sum_l k_il) [z_i - t]_+` over couplings `k >= 0` with column
/// sums equal to the empirical weights and transport cost at most `theta`.
pub fn worst_case_cvar_w1_oracle(
    values: &[f64],
    amb: &AmbiguitySet,
    beta: f64,
) -> Result<f64> {
    if amb.metric != Metric::Wasserstein {
        return Err(Error::InvalidInput("oracle requires a Wasserstein ambiguity set".into()));
    }
    check_beta(beta)?;
    check_values(values, amb.reference.len())?;
    let l = amb.reference.len();
    let p = amb.reference.weights();
    let dist = amb.reference.distance_matrix();

    let mut best = f64::INFINITY;
    for &t in values {
        let gain: Vec<f64> = values.iter().map(|&v| (v - t).max(0.0)).collect();
        // Variables k_il, column-major by destination i, source l: index i*l + l.
        let nv = l * l;
        let mut objective = DVector::zeros(nv);
        for i in 0..l {
            for s in 0..l {
                objective[i * l + s] = -gain[i]; // maximize => minimize negative
            }
        }
        // Rows: column sums (equality, one per source atom) + cost row.
        let m = l + 1;
        let mut a = DMatrix::zeros(m, nv);
        let mut rl = DVector::zeros(m);
        let mut ru = DVector::zeros(m);
        for s in 0..l {
            for i in 0..l {
                a[(s, i * l + s)] = 1.0;
            }
            rl[s] = p[s];
            ru[s] = p[s];
        }
        for i in 0..l {
            for s in 0..l {
                a[(l, i * l + s)] = dist[(i, s)];
            }
        }
        rl[l] = -INF;
        ru[l] = amb.radius;
        let lp = LinearProgram::new(
            objective,
            a,
            rl,
            ru,
            DVector::zeros(nv),
            DVector::from_element(nv, INF),
        )?;
        let status = numerics::solve_lp(&lp)?;
        if status.kind != SolveKind::Optimal {
            return Err(Error::Solver(format!(
                "transport LP ended with {:?}",
                status.kind
            )));
        }
        best = best.min(t - status.objective / beta);
    }
    Ok(best)
}

/// Total-variation radius for a `(zeta, N)`-reliable ambiguity set over `L`
/// support points: `0.5 * sqrt((2/N) (L ln 2 + ln(1/(1-zeta))))`, the l1
/// concentration bound halved for TV.
pub fn tv_radius_for_confidence(n: usize, zeta: f64, support_size: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be >= 1".into()));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidInput(format!("confidence {zeta} outside (0, 1)")));
    }
    if support_size < 2 {
        return Err(Error::InvalidInput("support size must be >= 2".into()));
    }
    let l = support_size as f64;
    let inner = (2.0 / n as f64) * (l * std::f64::consts::LN_2 + (1.0 / (1.0 - zeta)).ln());
    Ok(0.5 * inner.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform4() -> DiscreteDistribution {
        DiscreteDistribution::uniform_scalars(&[1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn cvar_point_mass() {
        let d = DiscreteDistribution::from_scalars(&[2.0], &[1.0]).unwrap();
        for beta in [0.1, 0.5, 1.0] {
            assert!((cvar(&[2.0], &d, beta).unwrap() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cvar_beta_one_is_mean() {
        let d = uniform4();
        assert!((cvar(&[1.0, 2.0, 3.0, 4.0], &d, 1.0).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn cvar_quarter_tail() {
        let d = uniform4();
        assert!((cvar(&[1.0, 2.0, 3.0, 4.0], &d, 0.25).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn var_examples() {
        let point = DiscreteDistribution::from_scalars(&[2.0], &[1.0]).unwrap();
        assert_eq!(var(&[2.0], &point, 0.3).unwrap(), 2.0);
        let d = uniform4();
        assert_eq!(var(&[1.0, 2.0, 3.0, 4.0], &d, 0.25).unwrap(), 3.0);
        assert_eq!(var(&[1.0, 2.0, 3.0, 4.0], &d, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn cvar_rejects_bad_beta() {
        let d = uniform4();
        assert!(cvar(&[1.0, 2.0, 3.0, 4.0], &d, 0.0).is_err());
        assert!(cvar(&[1.0, 2.0, 3.0, 4.0], &d, 1.5).is_err());
    }

    #[test]
    fn tv_oracle_examples() {
        // theta = 0, beta = 1: empirical mean.
        let amb = AmbiguitySet::new(
            Metric::TotalVariation,
            0.0,
            DiscreteDistribution::uniform_scalars(&[0.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert!((worst_case_cvar_tv_oracle(&[0.0, 1.0], &amb, 1.0).unwrap() - 0.5).abs() < 1e-12);

        // theta >= 1: the ball is the whole simplex; worst case is the max atom.
        let amb = AmbiguitySet::new(
            Metric::TotalVariation,
            1.0,
            DiscreteDistribution::uniform_scalars(&[0.0, 0.5, 1.0]).unwrap(),
        )
        .unwrap();
        assert!((worst_case_cvar_tv_oracle(&[1.0, 2.0, 3.0], &amb, 0.5).unwrap() - 3.0).abs() < 1e-12);

        // Hand-worked shift: p = [0.5, 0.5], z = [0, 1], beta = 0.5,
        // theta = 0.25 -> mu = [0.25, 0.75], answer 1.0.
        let amb = AmbiguitySet::new(
            Metric::TotalVariation,
            0.25,
            DiscreteDistribution::uniform_scalars(&[0.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert!((worst_case_cvar_tv_oracle(&[0.0, 1.0], &amb, 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w1_oracle_examples() {
        // theta = 0 reduces to the empirical CVaR.
        let reference = DiscreteDistribution::uniform_scalars(&[0.0, 1.0, 3.0]).unwrap();
        let values = [0.5, 2.0, 1.0];
        let amb = AmbiguitySet::new(Metric::Wasserstein, 0.0, reference.clone()).unwrap();
        let w = worst_case_cvar_w1_oracle(&values, &amb, 0.4).unwrap();
        let c = cvar(&values, &reference, 0.4).unwrap();
        assert!((w - c).abs() < 1e-8);

        // Mass at 0, moving 0.3 of it to atom 1 costs exactly theta = 0.3.
        let reference = DiscreteDistribution::from_scalars(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        let amb = AmbiguitySet::new(Metric::Wasserstein, 0.3, reference).unwrap();
        let w = worst_case_cvar_w1_oracle(&[0.0, 1.0], &amb, 1.0).unwrap();
        assert!((w - 0.3).abs() < 1e-8);

        // Radius at least the support diameter: everything can move to the top.
        let reference = DiscreteDistribution::uniform_scalars(&[0.0, 1.0, 2.0]).unwrap();
        let amb = AmbiguitySet::new(Metric::Wasserstein, 2.0, reference).unwrap();
        let w = worst_case_cvar_w1_oracle(&[1.0, 2.0, 3.0], &amb, 0.3).unwrap();
        assert!((w - 3.0).abs() < 1e-8);
    }

    #[test]
    fn tv_radius_examples() {
        let theta = tv_radius_for_confidence(5, 0.9, 9).unwrap();
        assert!((theta - 0.9242).abs() < 5e-4, "theta = {theta}");
        // More confidence demands a larger ball.
        let tight = tv_radius_for_confidence(5, 1.0 - 1e-9, 9);
        // zeta extremely close to 1 is fine; compare against a small zeta too.
        let loose = tv_radius_for_confidence(5, 1e-9, 9).unwrap();
        assert!(theta > loose);
        assert!(tight.unwrap() > theta);
        // sqrt(N) scaling: quadrupling the samples halves the radius.
        let t1 = tv_radius_for_confidence(7, 0.9, 9).unwrap();
        let t4 = tv_radius_for_confidence(28, 0.9, 9).unwrap();
        assert!((t4 - t1 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn distribution_invariants_enforced() {
        assert!(DiscreteDistribution::from_scalars(&[0.0, 0.0], &[0.5, 0.5]).is_err());
        assert!(DiscreteDistribution::from_scalars(&[0.0, 1.0], &[0.6, 0.5]).is_err());
        assert!(DiscreteDistribution::from_scalars(&[0.0, 1.0], &[-0.1, 1.1]).is_err());
    }
}
