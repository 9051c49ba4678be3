//! Tabular softmax (Gibbs) policy over discrete actions.

use nalgebra::{DMatrix, DVector};

use crate::env::{Action, State};
use crate::error::{Error, Result};
use crate::rng::Stream;

use super::{Policy, TrainablePolicy};

/// Categorical policy `π(a|s) ∝ exp(z[s][a])` with one logit per
/// state-action pair. The parameter vector is `z` flattened state-major.
#[derive(Debug, Clone)]
pub struct SoftmaxPolicy {
    logits: DMatrix<f64>,
}

impl SoftmaxPolicy {
    pub fn new(logits: DMatrix<f64>) -> Result<Self> {
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite logits"));
        }
        if logits.nrows() == 0 || logits.ncols() == 0 {
            return Err(Error::invalid("empty logits table"));
        }
        Ok(SoftmaxPolicy { logits })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        SoftmaxPolicy {
            logits: DMatrix::zeros(n_states, n_actions),
        }
    }

    pub fn n_states(&self) -> usize {
        self.logits.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &DMatrix<f64> {
        &self.logits
    }

    /// Action distribution at a tabular state.
    pub fn probs(&self, s: usize) -> DVector<f64> {
        let row = self.logits.row(s);
        let zmax = row.max();
        let mut p = DVector::from_iterator(
            self.n_actions(),
            row.iter().map(|z| (z - zmax).exp()),
        );
        let total = p.sum();
        p /= total;
        p
    }

    fn state_index(&self, s: &State) -> Result<usize> {
        let i = s.tabular_index();
        if i >= self.n_states() {
            return Err(Error::invalid(format!("state index {i} out of range")));
        }
        Ok(i)
    }

    fn flat(&self, s: usize, a: usize) -> usize {
        s * self.n_actions() + a
    }
}

impl Policy for SoftmaxPolicy {
    fn param_dim(&self) -> usize {
        self.n_states() * self.n_actions()
    }

    fn sample(&self, s: &State, rng: &mut Stream) -> Action {
        use rand::Rng;
        let si = self.state_index(s).expect("state index in range");
        let p = self.probs(si);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for a in 0..self.n_actions() {
            acc += p[a];
            if u < acc {
                return Action::Discrete(a);
            }
        }
        Action::Discrete(self.n_actions() - 1)
    }

    fn log_prob(&self, s: &State, a: &Action) -> Result<f64> {
        Ok(self.prob(s, a)?.ln())
    }

    fn prob(&self, s: &State, a: &Action) -> Result<f64> {
        let si = self.state_index(s)?;
        let ai = a.discrete()?;
        if ai >= self.n_actions() {
            return Err(Error::invalid(format!("action index {ai} out of range")));
        }
        Ok(self.probs(si)[ai])
    }

    /// Score component for logit `(s', b)` is `1{s'=s} (1{b=a} − π_s(b))`.
    fn score(&self, s: &State, a: &Action) -> Result<DVector<f64>> {
        let si = self.state_index(s)?;
        let ai = a.discrete()?;
        let p = self.probs(si);
        let mut out = DVector::zeros(self.param_dim());
        for b in 0..self.n_actions() {
            out[self.flat(si, b)] = if b == ai { 1.0 - p[b] } else { -p[b] };
        }
        Ok(out)
    }
}

impl TrainablePolicy for SoftmaxPolicy {
    fn opt_dim(&self) -> usize {
        self.param_dim()
    }

    fn opt_params(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.opt_dim());
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                v[self.flat(s, a)] = self.logits[(s, a)];
            }
        }
        v
    }

    fn with_opt_params(&self, params: &DVector<f64>) -> Result<Self> {
        if params.len() != self.opt_dim() {
            return Err(Error::invalid("optimizer parameter length mismatch"));
        }
        let mut logits = DMatrix::zeros(self.n_states(), self.n_actions());
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                logits[(s, a)] = params[self.flat(s, a)];
            }
        }
        SoftmaxPolicy::new(logits)
    }

    fn score_to_opt(&self, score: &DVector<f64>) -> DVector<f64> {
        score.clone()
    }

    fn kl(&self, other: &Self, s: &State) -> f64 {
        let si = s.tabular_index();
        let p = self.probs(si);
        let q = other.probs(si);
        (0..self.n_actions())
            .map(|a| p[a] * (p[a] / q[a]).ln())
            .sum()
    }
}
