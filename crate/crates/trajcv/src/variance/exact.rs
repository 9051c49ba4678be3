//! Exact decompositions by enumeration over the trajectory suffix tree.

use nalgebra::DVector;

use crate::env::{Action, TabularMdp, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{Policy, SoftmaxPolicy};

use super::{component_at_root, tabular_state, EstimatorKind, FineTerms, VarianceComponents};

/// Exact three-term (and per-step fine) decomposition of
/// `Tr Var[G̃_t]` for the chosen estimator, by enumerating all suffixes
/// rooted at step `t` (one-based) under the roll-in state distribution.
pub fn decompose_exact(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    estimator: &EstimatorKind<'_>,
    t: usize,
    budget: f64,
) -> Result<VarianceComponents> {
    let walker = SuffixWalker::new(mdp, policy, t, budget)?;
    let levels = 2 * (mdp.horizon - t + 1);
    let mut terms = vec![0.0; levels];

    let mut traj = empty_traj(mdp.horizon - t + 1);
    let mut root_children = Vec::new();
    for (s, &ps) in walker.rho.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        let mean = walker.state_node(estimator, s, t, ps, &mut traj, &mut terms)?;
        root_children.push((ps, mean));
    }
    let root_mean = weighted_mean(&root_children, walker.dim);
    terms[0] = scatter(&root_children, &root_mean);

    let h = mdp.horizon;
    let fine = FineTerms {
        dynamics: (t + 1..=h).map(|k| terms[2 * (k - t)]).collect(),
        actions: (t + 1..=h).map(|k| terms[2 * (k - t) + 1]).collect(),
    };
    Ok(VarianceComponents {
        v_state: terms[0],
        v_action: terms[1],
        v_future: terms[2..].iter().sum(),
        fine: Some(fine),
        se: None,
    })
}

/// Independent route to `Tr Var[G̃_t]`: enumerate the same suffix tree but
/// only accumulate the first and second moments of the component.
pub fn component_trace_variance(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    estimator: &EstimatorKind<'_>,
    t: usize,
    budget: f64,
) -> Result<f64> {
    let walker = SuffixWalker::new(mdp, policy, t, budget)?;
    let mut mean = DVector::zeros(walker.dim);
    let mut second = 0.0;
    let mut traj = empty_traj(mdp.horizon - t + 1);
    walker.for_each_leaf(estimator, &mut traj, &mut |g, p| {
        mean.axpy(p, g, 1.0);
        second += p * g.norm_squared();
    })?;
    Ok(second - mean.norm_squared())
}

/// Exact check of `Tr Var[G] <= h · Σ_t Tr Var[G_t]` by full enumeration.
#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn variance_bound_check(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    budget: f64,
) -> Result<BoundCheck> {
    let dim = policy.param_dim();
    let h = mdp.horizon;
    let mut mean_total = DVector::zeros(dim);
    let mut sq_total = 0.0;
    let mut mean_t = vec![DVector::zeros(dim); h];
    let mut sq_t = vec![0.0; h];

    mdp.enumerate_trajectories(policy, budget, |traj, p| {
        let suffix = traj.suffix_costs();
        let mut g = DVector::zeros(dim);
        for t in 0..traj.len() {
            let gt = &traj.scores[t] * suffix[t];
            sq_t[t] += p * gt.norm_squared();
            mean_t[t].axpy(p, &gt, 1.0);
            g += gt;
        }
        sq_total += p * g.norm_squared();
        mean_total.axpy(p, &g, 1.0);
    })?;

    let lhs = sq_total - mean_total.norm_squared();
    let per_t_sum: f64 = (0..h)
        .map(|t| sq_t[t] - mean_t[t].norm_squared())
        .sum();
    let rhs = h as f64 * per_t_sum;
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-10,
    })
}

struct SuffixWalker<'a> {
    mdp: &'a TabularMdp,
    policy: &'a SoftmaxPolicy,
    t: usize,
    rho: Vec<f64>,
    dim: usize,
}

impl<'a> SuffixWalker<'a> {
    fn new(
        mdp: &'a TabularMdp,
        policy: &'a SoftmaxPolicy,
        t: usize,
        budget: f64,
    ) -> Result<Self> {
        if t == 0 || t > mdp.horizon {
            return Err(Error::invalid(format!(
                "step {t} outside horizon {}",
                mdp.horizon
            )));
        }
        let leaves = (mdp.n_states as f64)
            * (mdp.n_actions as f64).powi((mdp.horizon - t + 1) as i32)
            * (mdp.n_states as f64).powi((mdp.horizon - t) as i32);
        if leaves > budget {
            return Err(Error::Capacity {
                required: leaves,
                budget,
            });
        }
        let rho = mdp.state_occupancy(policy)?[t - 1].clone();
        Ok(SuffixWalker {
            mdp,
            policy,
            t,
            rho,
            dim: policy.param_dim(),
        })
    }

    /// Conditional mean of the component given the prefix ending in state
    /// `s` at `time`; accumulates the per-level scatter terms on the way up.
    fn state_node(
        &self,
        estimator: &EstimatorKind<'_>,
        s: usize,
        time: usize,
        prob: f64,
        traj: &mut Trajectory,
        terms: &mut [f64],
    ) -> Result<DVector<f64>> {
        let state = tabular_state(s, time);
        let mut action_children = Vec::with_capacity(self.mdp.n_actions);
        for a in 0..self.mdp.n_actions {
            let action = Action::Discrete(a);
            let pa = self.policy.prob(&state, &action)?;
            if pa == 0.0 {
                continue;
            }
            traj.states.push(state.clone());
            traj.actions.push(action.clone());
            traj.costs.push(self.mdp.cost[s][a]);
            traj.scores.push(self.policy.score(&state, &action)?);

            let action_mean = if time == self.mdp.horizon {
                component_at_root(estimator, traj)?
            } else {
                let mut next_children = Vec::with_capacity(self.mdp.n_states);
                for (s2, &pt) in self.mdp.transition[s][a].iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    let child =
                        self.state_node(estimator, s2, time + 1, prob * pa * pt, traj, terms)?;
                    next_children.push((pt, child));
                }
                let mean = weighted_mean(&next_children, self.dim);
                terms[2 * (time + 1 - self.t)] += prob * pa * scatter(&next_children, &mean);
                mean
            };

            traj.states.pop();
            traj.actions.pop();
            traj.costs.pop();
            traj.scores.pop();
            action_children.push((pa, action_mean));
        }
        let mean = weighted_mean(&action_children, self.dim);
        terms[2 * (time - self.t) + 1] += prob * scatter(&action_children, &mean);
        Ok(mean)
    }

    /// Visit every suffix leaf with its component vector and probability.
    fn for_each_leaf(
        &self,
        estimator: &EstimatorKind<'_>,
        traj: &mut Trajectory,
        visit: &mut dyn FnMut(&DVector<f64>, f64),
    ) -> Result<()> {
        fn go(
            w: &SuffixWalker<'_>,
            estimator: &EstimatorKind<'_>,
            s: usize,
            time: usize,
            prob: f64,
            traj: &mut Trajectory,
            visit: &mut dyn FnMut(&DVector<f64>, f64),
        ) -> Result<()> {
            let state = tabular_state(s, time);
            for a in 0..w.mdp.n_actions {
                let action = Action::Discrete(a);
                let pa = w.policy.prob(&state, &action)?;
                if pa == 0.0 {
                    continue;
                }
                traj.states.push(state.clone());
                traj.actions.push(action.clone());
                traj.costs.push(w.mdp.cost[s][a]);
                traj.scores.push(w.policy.score(&state, &action)?);
                if time == w.mdp.horizon {
                    let g = component_at_root(estimator, traj)?;
                    visit(&g, prob * pa);
                } else {
                    for (s2, &pt) in w.mdp.transition[s][a].iter().enumerate() {
                        if pt > 0.0 {
                            go(w, estimator, s2, time + 1, prob * pa * pt, traj, visit)?;
                        }
                    }
                }
                traj.states.pop();
                traj.actions.pop();
                traj.costs.pop();
                traj.scores.pop();
            }
            Ok(())
        }

        for (s, &ps) in self.rho.iter().enumerate() {
            if ps > 0.0 {
                go(self, estimator, s, self.t, ps, traj, visit)?;
            }
        }
        Ok(())
    }
}

fn empty_traj(capacity: usize) -> Trajectory {
    Trajectory {
        states: Vec::with_capacity(capacity),
        actions: Vec::with_capacity(capacity),
        costs: Vec::with_capacity(capacity),
        scores: Vec::with_capacity(capacity),
    }
}

fn weighted_mean(children: &[(f64, DVector<f64>)], dim: usize) -> DVector<f64> {
    let mut mean = DVector::zeros(dim);
    let total: f64 = children.iter().map(|(w, _)| w).sum();
    for (w, v) in children {
        mean.axpy(w / total, v, 1.0);
    }
    mean
}

fn scatter(children: &[(f64, DVector<f64>)], mean: &DVector<f64>) -> f64 {
    let total: f64 = children.iter().map(|(w, _)| w).sum();
    children
        .iter()
        .map(|(w, v)| w / total * (v - mean).norm_squared())
        .sum()
}
