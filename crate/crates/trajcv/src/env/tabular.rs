//! Tabular MDP with exact enumeration and dynamic-programming oracles.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::Stream;

use super::{Action, Environment, State, Trajectory};

/// Default cap on the number of enumerated trajectory leaves.
pub const DEFAULT_ENUMERATION_BUDGET: f64 = 1e7;

/// Explicit finite MDP: transition tensor, cost table, start distribution.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a]` is the distribution over next states.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `cost[s][a]`.
    pub cost: Vec<Vec<f64>>,
    /// Initial distribution over states.
    pub p1: Vec<f64>,
    pub horizon: usize,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        cost: Vec<Vec<f64>>,
        p1: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 || horizon == 0 {
            return Err(Error::invalid("tabular MDP needs states and a horizon"));
        }
        let n_actions = transition[0].len();
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(Error::invalid("ragged transition tensor"));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::invalid("transition row has wrong arity"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 || row.iter().any(|p| *p < 0.0) {
                    return Err(Error::invalid(format!(
                        "transition[{s}][{a}] does not sum to 1 (got {sum})"
                    )));
                }
            }
        }
        if cost.len() != n_states || cost.iter().any(|r| r.len() != n_actions) {
            return Err(Error::invalid("cost table shape mismatch"));
        }
        if cost.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite entries in cost table"));
        }
        let p1_sum: f64 = p1.iter().sum();
        if p1.len() != n_states || (p1_sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("p1 must be a distribution over states"));
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            transition,
            cost,
            p1,
            horizon,
        })
    }

    fn state(&self, index: usize, time_index: usize) -> State {
        State::new(DVector::from_vec(vec![index as f64]), time_index)
    }

    /// Leaf count of the full enumeration tree (may overflow f64 range checks
    /// long before usize would).
    fn leaf_count(&self) -> f64 {
        (self.n_states as f64).powi(self.horizon as i32)
            * (self.n_actions as f64).powi(self.horizon as i32)
    }

    fn check_budget(&self, budget: f64) -> Result<()> {
        let required = self.leaf_count();
        if required > budget {
            return Err(Error::Capacity { required, budget });
        }
        Ok(())
    }

    /// Depth-first visit of every positive-probability trajectory together
    /// with its probability. Trajectories are materialized lazily, one at a
    /// time, so memory stays bounded by the horizon.
    pub fn enumerate_trajectories<F>(
        &self,
        policy: &dyn Policy,
        budget: f64,
        mut visit: F,
    ) -> Result<()>
    where
        F: FnMut(&Trajectory, f64),
    {
        self.check_budget(budget)?;
        let mut traj = Trajectory {
            states: Vec::with_capacity(self.horizon),
            actions: Vec::with_capacity(self.horizon),
            costs: Vec::with_capacity(self.horizon),
            scores: Vec::with_capacity(self.horizon),
        };
        for (s1, &p) in self.p1.iter().enumerate() {
            if p > 0.0 {
                self.dfs(policy, s1, 1, p, &mut traj, &mut visit)?;
            }
        }
        Ok(())
    }

    fn dfs<F>(
        &self,
        policy: &dyn Policy,
        s: usize,
        t: usize,
        prob: f64,
        traj: &mut Trajectory,
        visit: &mut F,
    ) -> Result<()>
    where
        F: FnMut(&Trajectory, f64),
    {
        let state = self.state(s, t);
        for a in 0..self.n_actions {
            let action = Action::Discrete(a);
            let pa = policy.prob(&state, &action)?;
            if pa <= 0.0 {
                continue;
            }
            traj.states.push(state.clone());
            traj.actions.push(action.clone());
            traj.costs.push(self.cost[s][a]);
            traj.scores.push(policy.score(&state, &action)?);
            if t == self.horizon {
                visit(traj, prob * pa);
            } else {
                for (s2, &pt) in self.transition[s][a].iter().enumerate() {
                    if pt > 0.0 {
                        self.dfs(policy, s2, t + 1, prob * pa * pt, traj, visit)?;
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

    /// Collect the full enumeration into a vector (small instances only).
    pub fn collect_trajectories(
        &self,
        policy: &dyn Policy,
        budget: f64,
    ) -> Result<Vec<(Trajectory, f64)>> {
        let mut out = Vec::new();
        self.enumerate_trajectories(policy, budget, |traj, p| out.push((traj.clone(), p)))?;
        Ok(out)
    }

    /// Expected accumulated cost `J(π)` by backward induction.
    pub fn exact_objective(&self, policy: &dyn Policy) -> Result<f64> {
        let v = self.value_table(policy)?;
        Ok((0..self.n_states).map(|s| self.p1[s] * v[0][s]).sum())
    }

    /// Per-step Q table `q[t][s][a] = E[C_{t:h} | S_t=s, A_t=a]`
    /// (zero-based `t`), by backward induction.
    pub fn q_table(&self, policy: &dyn Policy) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut q = vec![vec![vec![0.0; self.n_actions]; self.n_states]; self.horizon];
        let mut v_next = vec![0.0; self.n_states];
        for t in (0..self.horizon).rev() {
            let mut v_here = vec![0.0; self.n_states];
            for s in 0..self.n_states {
                let state = self.state(s, t + 1);
                for a in 0..self.n_actions {
                    let future: f64 = if t + 1 < self.horizon {
                        self.transition[s][a]
                            .iter()
                            .zip(&v_next)
                            .map(|(p, v)| p * v)
                            .sum()
                    } else {
                        0.0
                    };
                    q[t][s][a] = self.cost[s][a] + future;
                    v_here[s] += policy.prob(&state, &Action::Discrete(a))? * q[t][s][a];
                }
            }
            v_next = v_here;
        }
        Ok(q)
    }

    /// Per-step value table `v[t][s] = E[C_{t:h} | S_t=s]` (zero-based `t`).
    pub fn value_table(&self, policy: &dyn Policy) -> Result<Vec<Vec<f64>>> {
        let q = self.q_table(policy)?;
        let mut v = vec![vec![0.0; self.n_states]; self.horizon];
        for t in 0..self.horizon {
            for s in 0..self.n_states {
                let state = self.state(s, t + 1);
                for a in 0..self.n_actions {
                    v[t][s] += policy.prob(&state, &Action::Discrete(a))? * q[t][s][a];
                }
            }
        }
        Ok(v)
    }

    /// Marginal state distribution at each step under `policy`
    /// (zero-based `t`).
    pub fn state_occupancy(&self, policy: &dyn Policy) -> Result<Vec<Vec<f64>>> {
        let mut occ = vec![vec![0.0; self.n_states]; self.horizon];
        occ[0].copy_from_slice(&self.p1);
        for t in 1..self.horizon {
            for s in 0..self.n_states {
                let ps = occ[t - 1][s];
                if ps == 0.0 {
                    continue;
                }
                let state = self.state(s, t);
                for a in 0..self.n_actions {
                    let pa = policy.prob(&state, &Action::Discrete(a))?;
                    if pa == 0.0 {
                        continue;
                    }
                    for (s2, &pt) in self.transition[s][a].iter().enumerate() {
                        occ[t][s2] += ps * pa * pt;
                    }
                }
            }
        }
        Ok(occ)
    }

    /// Exact policy gradient `Σ_t E[N_t q^π(S_t, A_t)]` via occupancy
    /// measures and the backward-induction Q table. This route never touches
    /// per-trajectory estimates, so it serves as an independent reference for
    /// the trajectory-based estimators.
    pub fn exact_policy_gradient(&self, policy: &dyn Policy) -> Result<DVector<f64>> {
        let q = self.q_table(policy)?;
        let occ = self.state_occupancy(policy)?;
        let mut grad = DVector::zeros(policy.param_dim());
        for t in 0..self.horizon {
            for s in 0..self.n_states {
                let ps = occ[t][s];
                if ps == 0.0 {
                    continue;
                }
                let state = self.state(s, t + 1);
                for a in 0..self.n_actions {
                    let action = Action::Discrete(a);
                    let pa = policy.prob(&state, &action)?;
                    if pa == 0.0 {
                        continue;
                    }
                    let n = policy.score(&state, &action)?;
                    grad.axpy(ps * pa * q[t][s][a], &n, 1.0);
                }
            }
        }
        Ok(grad)
    }

    /// Exact trace of the gradient covariance `Tr Var[G]`, where
    /// `G = Σ_t N_t C_{t:h}`, by full enumeration.
    pub fn trace_var_total(&self, policy: &dyn Policy, budget: f64) -> Result<f64> {
        let dim = policy.param_dim();
        let mut mean = DVector::zeros(dim);
        let mut sq = 0.0;
        self.enumerate_trajectories(policy, budget, |traj, p| {
            let mut g = DVector::zeros(dim);
            let suffix = traj.suffix_costs();
            for t in 0..traj.len() {
                g.axpy(suffix[t], &traj.scores[t], 1.0);
            }
            sq += p * g.norm_squared();
            mean.axpy(p, &g, 1.0);
        })?;
        Ok(sq - mean.norm_squared())
    }
}

impl Environment for TabularMdp {
    fn state_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut Stream) -> State {
        let s = sample_index(&self.p1, rng);
        self.state(s, 1)
    }

    fn step(&self, s: &State, a: &Action, rng: &mut Stream) -> Result<(State, f64, bool)> {
        let si = s.tabular_index();
        let ai = a.discrete()?;
        if si >= self.n_states || ai >= self.n_actions {
            return Err(Error::invalid("state or action index out of range"));
        }
        if s.time_index > self.horizon {
            return Err(Error::invalid("stepping past the horizon"));
        }
        let next = sample_index(&self.transition[si][ai], rng);
        let cost = self.cost[si][ai];
        let t_next = s.time_index + 1;
        Ok((self.state(next, t_next), cost, t_next > self.horizon))
    }
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut Stream) -> usize {
    use rand::Rng;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
