//! Distributionally robust risk-constrained iterative MPC.
//!
//! The crate provides the pieces needed to run an iterative, data-driven MPC
//! scheme in which a risk (CVaR) constraint is enforced for every probability
//! distribution inside a metric ball around the empirical distribution of the
//! observed uncertainty:
//!
//! * [`numerics`] — dense LP (revised simplex) and convex QP (operator
//!   splitting) solvers; no external solver dependency.
//! * [`risk`] — finite-support distributions, exact CVaR/VaR, and brute-force
//!   worst-case CVaR oracles for total-variation and Wasserstein balls.
//! * [`reform`] — tractable dual reformulations of the worst-case CVaR
//!   constraint, both as point evaluators and as linear constraint blocks
//!   over decision variables.
//! * [`safe_set`] — sampled safe set storage, minimum cost-to-go, and the
//!   whole-trajectory pruning update.
//! * [`ocp`] — the finite-horizon problem with discrete terminal candidates
//!   solved by enumeration.
//! * [`mpc`] — closed-loop rollout, iteration bookkeeping, and the
//!   theory-derived runtime assertions.
//! * [`scenario`] — shipped scenarios (two-robot obstacle avoidance, scalar
//!   integrator, one-step-reachable system) and uncertainty samplers.
//!
//! With the `parallel` feature (default) independent subproblems — terminal
//! candidate QPs, sweep arms, verification instances — run on a rayon pool;
//! without it the same code paths run sequentially.

pub mod exec;
pub mod numerics;
pub mod reform;
pub mod report;
pub mod risk;
pub mod safe_set;
pub mod scenario;

pub mod mpc;
pub mod ocp;

mod error;

pub use error::{Error, Result};
