//! Conditional-expectation providers backing the action-dependent CVs.

use std::sync::Arc;

use nalgebra::DVector;

use crate::env::{Action, State};
use crate::error::Result;
use crate::policy::{CenterSensitivity, GaussianPolicy, Policy, QuadraticQ, SoftmaxPolicy};
use crate::rng::substream;

use super::{mc_conditional_expectation, QSource};

/// Closed-form source: a per-state quadratic model under a Gaussian policy.
#[derive(Clone)]
pub struct QuadraticSource {
    builder: Arc<dyn Fn(&State) -> Result<(QuadraticQ, CenterSensitivity)> + Sync + Send>,
    policy: GaussianPolicy,
    /// Differentiate through the expansion center as well as the
    /// distribution (the center must sit at the policy mean).
    chain_rule_center: bool,
}

impl QuadraticSource {
    pub fn new(
        builder: Arc<dyn Fn(&State) -> Result<(QuadraticQ, CenterSensitivity)> + Sync + Send>,
        policy: GaussianPolicy,
    ) -> Self {
        QuadraticSource {
            builder,
            policy,
            chain_rule_center: false,
        }
    }

    pub fn with_chain_rule_center(mut self, enabled: bool) -> Self {
        self.chain_rule_center = enabled;
        self
    }
}

impl QSource for QuadraticSource {
    fn value(&self, s: &State, a: &Action) -> Result<f64> {
        let (q, _) = (self.builder)(s)?;
        Ok(q.eval(a.continuous()?))
    }

    fn expectation(&self, s: &State) -> Result<(f64, DVector<f64>)> {
        let (q, sens) = (self.builder)(s)?;
        let e = self.policy.expectation_quadratic(s, &q);
        let grad = self.policy.grad_expectation_quadratic(
            s,
            &q,
            self.chain_rule_center.then_some(&sens),
        )?;
        Ok((e, grad))
    }
}

/// Monte Carlo source for a general scalar Q model under a Gaussian policy.
///
/// With common random numbers enabled, every step of a trajectory reuses the
/// identical draws (seeded by `crn_seed`); otherwise each time index gets its
/// own derived stream.
#[derive(Clone)]
pub struct McSource {
    q: Arc<dyn Fn(&State, &DVector<f64>) -> f64 + Sync + Send>,
    policy: GaussianPolicy,
    n_samples: usize,
    crn_seed: u64,
    common_random_numbers: bool,
}

impl McSource {
    pub fn new(
        q: Arc<dyn Fn(&State, &DVector<f64>) -> f64 + Sync + Send>,
        policy: GaussianPolicy,
        n_samples: usize,
        crn_seed: u64,
        common_random_numbers: bool,
    ) -> Self {
        McSource {
            q,
            policy,
            n_samples,
            crn_seed,
            common_random_numbers,
        }
    }
}

impl QSource for McSource {
    fn value(&self, s: &State, a: &Action) -> Result<f64> {
        Ok((self.q)(s, a.continuous()?))
    }

    fn expectation(&self, s: &State) -> Result<(f64, DVector<f64>)> {
        let seed = if self.common_random_numbers {
            self.crn_seed
        } else {
            // Stable per-step stream derived from the base seed.
            let mut rng = substream(self.crn_seed, 0x7374, s.time_index as u64);
            use rand::Rng;
            rng.random()
        };
        mc_conditional_expectation(self.q.as_ref(), s, &self.policy, self.n_samples, seed)
    }
}

/// Exact source for tabular MDPs under a softmax policy: the conditional
/// expectation is a finite sum over actions.
#[derive(Clone)]
pub struct TabularQSource {
    q: Arc<dyn Fn(&State, usize) -> f64 + Sync + Send>,
    policy: SoftmaxPolicy,
}

impl TabularQSource {
    pub fn new(q: Arc<dyn Fn(&State, usize) -> f64 + Sync + Send>, policy: SoftmaxPolicy) -> Self {
        TabularQSource { q, policy }
    }
}

impl QSource for TabularQSource {
    fn value(&self, s: &State, a: &Action) -> Result<f64> {
        Ok((self.q)(s, a.discrete()?))
    }

    fn expectation(&self, s: &State) -> Result<(f64, DVector<f64>)> {
        let si = s.tabular_index();
        let probs = self.policy.probs(si);
        let n_actions = self.policy.n_actions();
        let mut e = 0.0;
        for a in 0..n_actions {
            e += probs[a] * (self.q)(s, a);
        }
        // ∇_z Σ_a π(a|s) q(s,a): component (s, b) is π_b (q_b − E).
        let mut grad = DVector::zeros(self.policy.param_dim());
        for b in 0..n_actions {
            grad[si * n_actions + b] = probs[b] * ((self.q)(s, b) - e);
        }
        Ok((e, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::State;
    use crate::policy::FeatureMap;
    use nalgebra::DMatrix;

    #[test]
    fn tabular_expectation_gradient_matches_finite_differences() {
        let policy = SoftmaxPolicy::new(DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 0.8, 0.1]))
            .unwrap();
        let q = Arc::new(|s: &State, a: usize| 0.7 * s.values[0] + 1.3 * a as f64 - 0.2);
        let src = TabularQSource::new(q.clone(), policy.clone());
        let s = State::new(DVector::from_vec(vec![1.0]), 1);
        let (_, grad) = src.expectation(&s).unwrap();

        let eps = 1e-6;
        for k in 0..4 {
            let mut up = policy.logits().clone();
            let mut dn = policy.logits().clone();
            up[(k / 2, k % 2)] += eps;
            dn[(k / 2, k % 2)] -= eps;
            let e_at = |logits: DMatrix<f64>| -> f64 {
                let p = SoftmaxPolicy::new(logits).unwrap();
                let probs = p.probs(1);
                (0..2).map(|a| probs[a] * q(&s, a)).sum()
            };
            let fd = (e_at(up) - e_at(dn)) / (2.0 * eps);
            assert!((grad[k] - fd).abs() < 1e-6, "logit {k}: {} vs {fd}", grad[k]);
        }
    }

    #[test]
    fn quadratic_source_matches_direct_policy_calls() {
        let policy = GaussianPolicy::new(
            DMatrix::from_row_slice(1, 2, &[0.5, 0.1]),
            0.6,
            FeatureMap::affine(),
        )
        .unwrap();
        let q = QuadraticQ::new(
            0.3,
            DVector::from_vec(vec![0.8]),
            DMatrix::from_vec(1, 1, vec![1.2]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let src = QuadraticSource::new(
            {
                let q = q.clone();
                Arc::new(move |_: &State| Ok((q.clone(), CenterSensitivity::zeros(1))))
            },
            policy.clone(),
        );
        let s = State::new(DVector::from_vec(vec![0.4]), 1);
        let (e, grad) = src.expectation(&s).unwrap();
        assert_eq!(e, policy.expectation_quadratic(&s, &q));
        assert_eq!(
            grad,
            policy.grad_expectation_quadratic(&s, &q, None).unwrap()
        );
    }
}
