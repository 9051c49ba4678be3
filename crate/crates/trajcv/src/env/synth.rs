//! Random small instances for enumeration-based checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::policy::SoftmaxPolicy;
use crate::rng::Stream;

use super::TabularMdp;

fn random_distribution(rng: &mut Stream, n: usize) -> Vec<f64> {
    // Exponential spacings give a uniform draw from the simplex.
    let raw: Vec<f64> = (0..n)
        .map(|_| -(rng.random_range(1e-12..1.0f64)).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Random stochastic MDP with costs in `[-1, 1]`.
pub fn random_mdp(rng: &mut Stream, n_states: usize, n_actions: usize, horizon: usize) -> TabularMdp {
    let transition = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| random_distribution(rng, n_states))
                .collect()
        })
        .collect();
    let cost = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let p1 = random_distribution(rng, n_states);
    TabularMdp::new(transition, cost, p1, horizon).expect("generated MDP is valid")
}

/// Random MDP whose transitions are deterministic (one-hot rows).
pub fn random_deterministic_mdp(
    rng: &mut Stream,
    n_states: usize,
    n_actions: usize,
    horizon: usize,
) -> TabularMdp {
    let transition = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let mut row = vec![0.0; n_states];
                    row[rng.random_range(0..n_states)] = 1.0;
                    row
                })
                .collect()
        })
        .collect();
    let cost = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut p1 = vec![0.0; n_states];
    p1[rng.random_range(0..n_states)] = 1.0;
    TabularMdp::new(transition, cost, p1, horizon).expect("generated MDP is valid")
}

/// Random softmax policy with logits in `[-1, 1]`.
pub fn random_softmax(rng: &mut Stream, n_states: usize, n_actions: usize) -> SoftmaxPolicy {
    let logits = DMatrix::from_fn(n_states, n_actions, |_, _| rng.random_range(-1.0..1.0));
    SoftmaxPolicy::new(logits).expect("finite logits")
}

/// Central finite differences of the enumerated objective over the logits.
pub fn finite_difference_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    step: f64,
) -> Result<DVector<f64>> {
    let n_s = policy.n_states();
    let n_a = policy.n_actions();
    let mut grad = DVector::zeros(n_s * n_a);
    for s in 0..n_s {
        for a in 0..n_a {
            let mut up = policy.logits().clone();
            let mut dn = policy.logits().clone();
            up[(s, a)] += step;
            dn[(s, a)] -= step;
            let ju = mdp.exact_objective(&SoftmaxPolicy::new(up)?)?;
            let jd = mdp.exact_objective(&SoftmaxPolicy::new(dn)?)?;
            grad[s * n_a + a] = (ju - jd) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Random state-value table exposed as a function of (state index, time).
pub fn random_state_values(
    rng: &mut Stream,
    n_states: usize,
    horizon: usize,
    scale: f64,
) -> Vec<Vec<f64>> {
    (0..horizon)
        .map(|_| (0..n_states).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

/// Random state-action value table `[t][s][a]`.
pub fn random_q_values(
    rng: &mut Stream,
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    scale: f64,
) -> Vec<Vec<Vec<f64>>> {
    (0..horizon)
        .map(|_| {
            (0..n_states)
                .map(|_| (0..n_actions).map(|_| rng.random_range(-scale..scale)).collect())
                .collect()
        })
        .collect()
}
