//! Finite-horizon MDP abstractions and concrete environments.
//!
//! Time is embedded in the state (`time_index`, one-based), so non-stationary
//! quantities are plain functions of `State`. Rewards are stored as costs
//! (negated) internally; reporting layers flip the sign back.

mod cartpole;
mod lqg;
pub mod synth;
mod tabular;

pub use cartpole::{CartPole, CartPoleConfig};
pub use lqg::{Lqg, LqgConfig};
pub use tabular::{TabularMdp, DEFAULT_ENUMERATION_BUDGET};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::Stream;

/// Environment state: value vector plus the one-based step index `t ∈ [1, h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub values: DVector<f64>,
    pub time_index: usize,
}

impl State {
    pub fn new(values: DVector<f64>, time_index: usize) -> Self {
        State { values, time_index }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Index of a tabular state (the single value, rounded).
    pub fn tabular_index(&self) -> usize {
        self.values[0].round() as usize
    }
}

/// Either a continuous action vector or a discrete action index (zero-based).
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Continuous(DVector<f64>),
    Discrete(usize),
}

impl Action {
    pub fn continuous(&self) -> Result<&DVector<f64>> {
        match self {
            Action::Continuous(v) => Ok(v),
            Action::Discrete(_) => Err(Error::invalid("expected a continuous action")),
        }
    }

    pub fn discrete(&self) -> Result<usize> {
        match self {
            Action::Discrete(i) => Ok(*i),
            Action::Continuous(_) => Err(Error::invalid("expected a discrete action")),
        }
    }
}

/// One rollout: per-step states, actions, costs and score vectors.
///
/// All lists share the same length `T ≤ h`; `T < h` only after early
/// termination. `scores[t]` is the policy score ∇ log π at step `t`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub costs: Vec<f64>,
    pub scores: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Suffix cost sums: entry `t` holds `C_{t:T}` (zero-based `t`).
    pub fn suffix_costs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut acc = 0.0;
        for t in (0..self.len()).rev() {
            acc += self.costs[t];
            out[t] = acc;
        }
        out
    }

    /// Total cost `C_{1:T}`.
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    fn check_consistent(&self) -> Result<()> {
        let n = self.states.len();
        if self.actions.len() != n || self.costs.len() != n || self.scores.len() != n {
            return Err(Error::invalid("trajectory lists have unequal lengths"));
        }
        Ok(())
    }
}

/// A finite-horizon environment with a pure step function.
///
/// Environments are immutable configuration; all randomness comes through the
/// caller-provided stream, so rollouts can run concurrently.
pub trait Environment: Sync {
    fn state_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Draw the start state `S_1`.
    fn reset(&self, rng: &mut Stream) -> State;
    /// Advance one step: returns next state (time_index + 1), the
    /// instantaneous cost `c(s, a)`, and whether the episode is done
    /// (terminal condition hit or the horizon is exhausted).
    fn step(&self, s: &State, a: &Action, rng: &mut Stream) -> Result<(State, f64, bool)>;
}

/// Instantaneous cost with analytic action derivatives, used by the
/// quadratic Q builders. Implemented by the continuous environments.
pub trait ActionCost: Sync {
    fn cost(&self, s: &State, a: &DVector<f64>) -> f64;
    fn cost_action_gradient(&self, s: &State, a: &DVector<f64>) -> DVector<f64>;
    fn cost_action_hessian(&self, s: &State, a: &DVector<f64>) -> DMatrix<f64>;
    /// Whether `c(s, ·)` is exactly quadratic, so a second-order expansion
    /// reproduces it everywhere.
    fn quadratic_in_action(&self) -> bool;
}

/// Execute `policy` from the start distribution until done. Scores are
/// filled from `policy.score`. Fails if a non-finite state appears.
pub fn rollout(env: &dyn Environment, policy: &dyn Policy, rng: &mut Stream) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(env.horizon());
    let mut actions = Vec::with_capacity(env.horizon());
    let mut costs = Vec::with_capacity(env.horizon());
    let mut scores = Vec::with_capacity(env.horizon());

    let mut s = env.reset(rng);
    loop {
        if !s.is_finite() {
            return Err(Error::Numeric {
                step: s.time_index,
                message: "non-finite state encountered during rollout".into(),
            });
        }
        let a = policy.sample(&s, rng);
        let n = policy.score(&s, &a)?;
        let (next, cost, done) = env.step(&s, &a, rng)?;
        states.push(s);
        actions.push(a);
        costs.push(cost);
        scores.push(n);
        if done {
            break;
        }
        s = next;
    }

    let traj = Trajectory {
        states,
        actions,
        costs,
        scores,
    };
    traj.check_consistent()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::SoftmaxPolicy;
    use crate::rng::substream;

    #[test]
    fn suffix_costs_accumulate_backwards() {
        let traj = Trajectory {
            states: vec![
                State::new(DVector::from_vec(vec![0.0]), 1),
                State::new(DVector::from_vec(vec![0.0]), 2),
            ],
            actions: vec![Action::Discrete(0), Action::Discrete(0)],
            costs: vec![1.0, 2.5],
            scores: vec![DVector::zeros(2), DVector::zeros(2)],
        };
        assert_eq!(traj.suffix_costs(), vec![3.5, 2.5]);
        assert_eq!(traj.total_cost(), 3.5);
    }

    #[test]
    fn rollout_is_seed_deterministic() {
        let mdp = synth::random_mdp(&mut substream(5, 0, 0), 3, 2, 4);
        let policy = SoftmaxPolicy::uniform(3, 2);
        let a = rollout(&mdp, &policy, &mut substream(9, 1, 2)).unwrap();
        let b = rollout(&mdp, &policy, &mut substream(9, 1, 2)).unwrap();
        assert_eq!(a.costs, b.costs);
        assert_eq!(a.actions, b.actions);
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x.values, y.values);
        }
    }
}
