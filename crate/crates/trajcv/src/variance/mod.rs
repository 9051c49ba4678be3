//! Law-of-total-variance decompositions, exact and sampled, plus the
//! ordering-residue enumerator and the gradient variance bound.

mod chain;
mod exact;
mod ordering;
mod sampled;

pub use chain::{chain_decompose, ChainSpec, ChainVariable};
pub use exact::{decompose_exact, variance_bound_check, BoundCheck};
pub use ordering::{
    enumerate_orderings, feasible_orderings, natural_ordering, ordering_residue,
    FiniteReparamPolicy, OrderVar, OrderingSpec,
};
pub use sampled::{decompose_sampled, sigma_scan, ScanRow, SigmaScan};

use crate::env::{State, Trajectory};
use crate::error::Result;
use crate::estimator::{
    pg_state_action_cv, pg_state_cv, pg_trajcv, pg_vanilla, GradEstimate, QSource, StateBaseline,
};

/// Which estimator's component `G̃_t` a decomposition studies.
pub enum EstimatorKind<'a> {
    Vanilla,
    StateCv(&'a dyn StateBaseline),
    StateActionCv(&'a dyn QSource),
    TrajCv(&'a dyn QSource),
}

impl EstimatorKind<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Vanilla => "vanilla",
            EstimatorKind::StateCv(_) => "state",
            EstimatorKind::StateActionCv(_) => "state-action",
            EstimatorKind::TrajCv(_) => "trajcv",
        }
    }

    pub fn estimate(&self, traj: &Trajectory) -> Result<GradEstimate> {
        match self {
            EstimatorKind::Vanilla => pg_vanilla(traj),
            EstimatorKind::StateCv(v) => pg_state_cv(traj, *v),
            EstimatorKind::StateActionCv(q) => pg_state_action_cv(traj, *q),
            EstimatorKind::TrajCv(q) => pg_trajcv(traj, *q),
        }
    }
}

/// Per-step terms of the fine decomposition, indexed by the absolute step
/// `k = t+1 ..= h` (entry 0 is `k = t+1`).
#[derive(Debug, Clone, PartialEq)]
pub struct FineTerms {
    /// Variance injected by the transition into `S_k`.
    pub dynamics: Vec<f64>,
    /// Variance injected by the action choice at `A_k`.
    pub actions: Vec<f64>,
}

/// Jackknife standard errors of the sampled components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentErrors {
    pub se_state: f64,
    pub se_action: f64,
    pub se_future: f64,
}

/// The three-term trace-of-variance split of one gradient component:
/// state randomness before `t`, action randomness at `t`, and everything
/// after `(S_t, A_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceComponents {
    pub v_state: f64,
    pub v_action: f64,
    pub v_future: f64,
    /// Exact decompositions also split `v_future` per step.
    pub fine: Option<FineTerms>,
    /// Sampled decompositions carry standard errors.
    pub se: Option<ComponentErrors>,
}

impl VarianceComponents {
    pub fn total(&self) -> f64 {
        self.v_state + self.v_action + self.v_future
    }
}

/// Both sides of `Var_X E_Y[f] <= E_Y Var_X[f]` for independent finite
/// `X ~ px`, `Y ~ py` and a table `f[x][y]`.
pub fn independent_variance_sides(px: &[f64], py: &[f64], f: &[Vec<f64>]) -> (f64, f64) {
    let ex_over_all: f64 = px
        .iter()
        .enumerate()
        .map(|(x, &p)| {
            p * py
                .iter()
                .enumerate()
                .map(|(y, &q)| q * f[x][y])
                .sum::<f64>()
        })
        .sum();

    // Var_X E_Y[f].
    let lhs: f64 = px
        .iter()
        .enumerate()
        .map(|(x, &p)| {
            let ey: f64 = py.iter().enumerate().map(|(y, &q)| q * f[x][y]).sum();
            p * (ey - ex_over_all) * (ey - ex_over_all)
        })
        .sum();

    // E_Y Var_X[f].
    let rhs: f64 = py
        .iter()
        .enumerate()
        .map(|(y, &q)| {
            let mean_x: f64 = px.iter().enumerate().map(|(x, &p)| p * f[x][y]).sum();
            let var_x: f64 = px
                .iter()
                .enumerate()
                .map(|(x, &p)| p * (f[x][y] - mean_x) * (f[x][y] - mean_x))
                .sum();
            q * var_x
        })
        .sum();

    (lhs, rhs)
}

/// Shared helper: evaluate an estimator's first component on a suffix
/// trajectory rooted at step `t`.
pub(crate) fn component_at_root(
    estimator: &EstimatorKind<'_>,
    traj: &Trajectory,
) -> Result<nalgebra::DVector<f64>> {
    let est = estimator.estimate(traj)?;
    Ok(est.per_t.expect("estimators fill per-step components")[0].clone())
}

pub(crate) fn tabular_state(index: usize, time_index: usize) -> State {
    State::new(nalgebra::DVector::from_vec(vec![index as f64]), time_index)
}
