//! Policy-gradient estimators: vanilla, state CV, state-action CV, and the
//! trajectory-wise CV.
//!
//! All four are pure functions of a trajectory plus fitted models, return
//! per-step components alongside the total, and are unbiased for any CV
//! function as long as the subtracted conditional expectations are exact.

mod sources;

pub use sources::{McSource, QuadraticSource, TabularQSource};

use nalgebra::DVector;

use crate::env::{State, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, Policy, ReparamDraw};
use crate::rng::substream;

/// A policy-gradient estimate: the flat parameter-space vector, optionally
/// split into per-step components whose sum is the total.
#[derive(Debug, Clone)]
pub struct GradEstimate {
    pub total: DVector<f64>,
    pub per_t: Option<Vec<DVector<f64>>>,
}

impl GradEstimate {
    fn from_components(per_t: Vec<DVector<f64>>) -> Self {
        let dim = per_t[0].len();
        let mut total = DVector::zeros(dim);
        for c in &per_t {
            total += c;
        }
        GradEstimate {
            total,
            per_t: Some(per_t),
        }
    }
}

/// How conditional action expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationMethod {
    ClosedForm,
    Mc {
        n_samples: usize,
        common_random_numbers: bool,
    },
}

impl ExpectationMethod {
    pub fn validate(&self) -> Result<()> {
        if let ExpectationMethod::Mc { n_samples, .. } = self {
            if *n_samples == 0 {
                return Err(Error::invalid("Monte Carlo expectation needs n >= 1"));
            }
        }
        Ok(())
    }
}

/// A state-only baseline.
pub trait StateBaseline: Sync {
    fn baseline(&self, s: &State) -> f64;
}

impl StateBaseline for crate::critic::ValueModel {
    fn baseline(&self, s: &State) -> f64 {
        self.value(s)
    }
}

impl<F: Fn(&State) -> f64 + Sync> StateBaseline for F {
    fn baseline(&self, s: &State) -> f64 {
        self(s)
    }
}

/// An action-value CV: pointwise values plus the exact-or-approximate
/// conditional expectation pair `(E_{A|s}[Q̂], ∇ E_{A|s}[Q̂])`.
pub trait QSource: Sync {
    fn value(&self, s: &State, a: &crate::env::Action) -> Result<f64>;
    fn expectation(&self, s: &State) -> Result<(f64, DVector<f64>)>;
}

fn check_nonempty(traj: &Trajectory) -> Result<()> {
    if traj.is_empty() {
        return Err(Error::invalid("cannot estimate from an empty trajectory"));
    }
    Ok(())
}

/// `G_t = N_t C_{t:T}`.
pub fn pg_vanilla(traj: &Trajectory) -> Result<GradEstimate> {
    check_nonempty(traj)?;
    let suffix = traj.suffix_costs();
    let per_t = (0..traj.len())
        .map(|t| &traj.scores[t] * suffix[t])
        .collect();
    Ok(GradEstimate::from_components(per_t))
}

/// `G̃_t = N_t (C_{t:T} − v̂(S_t))`; the subtracted term has zero
/// conditional mean for any baseline.
pub fn pg_state_cv(traj: &Trajectory, v: &dyn StateBaseline) -> Result<GradEstimate> {
    check_nonempty(traj)?;
    let suffix = traj.suffix_costs();
    let per_t = (0..traj.len())
        .map(|t| &traj.scores[t] * (suffix[t] - v.baseline(&traj.states[t])))
        .collect();
    Ok(GradEstimate::from_components(per_t))
}

/// `G̃_t = N_t (C_{t:T} − Q̂_t) + ∇E_{A_t|S_t}[Q̂_t]`.
pub fn pg_state_action_cv(traj: &Trajectory, q: &dyn QSource) -> Result<GradEstimate> {
    check_nonempty(traj)?;
    let suffix = traj.suffix_costs();
    let mut per_t = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let qt = q.value(&traj.states[t], &traj.actions[t])?;
        let (_, grad_e) = q.expectation(&traj.states[t])?;
        per_t.push(&traj.scores[t] * (suffix[t] - qt) + grad_e);
    }
    Ok(GradEstimate::from_components(per_t))
}

/// Trajectory-wise CV. With `Ê_k = E_{A_k|S_k}[Q̂_k]` and suffix sums
/// `W_t = Σ_{k>t} (Q̂_k − Ê_k)`:
///
/// `G̃_t = N_t (C_{t:T} − Q̂_t − W_t) + ∇E_{A_t|S_t}[Q̂_t]`.
///
/// One backward pass computes every component from a single sweep of
/// per-step `(Q̂, Ê, ∇Ê)` evaluations, so the whole-gradient cost is
/// linear in the trajectory length.
pub fn pg_trajcv(traj: &Trajectory, q: &dyn QSource) -> Result<GradEstimate> {
    check_nonempty(traj)?;
    let n = traj.len();
    let suffix = traj.suffix_costs();

    let mut q_vals = Vec::with_capacity(n);
    let mut e_vals = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for t in 0..n {
        q_vals.push(q.value(&traj.states[t], &traj.actions[t])?);
        let (e, g) = q.expectation(&traj.states[t])?;
        e_vals.push(e);
        grads.push(g);
    }

    // w[t] = sum over k > t of (Q̂_k − Ê_k).
    let mut w = vec![0.0; n];
    for t in (0..n - 1).rev() {
        w[t] = w[t + 1] + q_vals[t + 1] - e_vals[t + 1];
    }

    let mut per_t = Vec::with_capacity(n);
    for t in 0..n {
        per_t.push(&traj.scores[t] * (suffix[t] - q_vals[t] - w[t]) + &grads[t]);
    }
    Ok(GradEstimate::from_components(per_t))
}

/// Monte Carlo estimate of `(E_{A|s}[q̂], ∇E_{A|s}[q̂])` for a Gaussian
/// policy, using reparameterized draws from `crn_seed`.
///
/// The gradient part pairs each sampled `q̂(a_i)` against the fixed value at
/// the mean action, so action-independent functions yield an exact zero
/// while the estimate stays unbiased (the pairing term has zero mean).
pub fn mc_conditional_expectation(
    q: &(dyn Fn(&State, &DVector<f64>) -> f64 + Sync),
    s: &State,
    policy: &GaussianPolicy,
    n: usize,
    crn_seed: u64,
) -> Result<(f64, DVector<f64>)> {
    if n == 0 {
        return Err(Error::invalid("Monte Carlo expectation needs n >= 1"));
    }
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = substream(crn_seed, 0x4d43, 0);
    let d_a = policy.action_dim();
    let baseline = q(s, &policy.mean(s));

    let mut e_sum = 0.0;
    let mut g_sum = DVector::zeros(policy.param_dim());
    for _ in 0..n {
        let r = ReparamDraw::new(DVector::from_iterator(
            d_a,
            (0..d_a).map(|_| StandardNormal.sample(&mut rng)),
        ));
        let a = policy.reparam_apply(s, &r)?;
        let av = a.continuous()?;
        let qv = q(s, av);
        e_sum += qv;
        let score = policy.score(s, &a)?;
        g_sum.axpy(qv - baseline, &score, 1.0);
    }
    Ok((e_sum / n as f64, g_sum / n as f64))
}
