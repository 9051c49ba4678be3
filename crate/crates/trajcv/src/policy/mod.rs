//! Parametric stochastic policies with analytic scores and closed-form
//! Gaussian expectations of quadratics.

mod features;
mod gaussian;
mod quadratic;
mod softmax;

pub use features::{FeatureKind, FeatureMap};
pub use gaussian::GaussianPolicy;
pub use quadratic::{CenterSensitivity, QuadraticQ};
pub use softmax::SoftmaxPolicy;

use nalgebra::DVector;

use crate::env::{Action, State};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// A standard-normal draw used to reparameterize a stochastic policy:
/// the action is a deterministic function of `(state, draw)`.
#[derive(Debug, Clone)]
pub struct ReparamDraw {
    pub values: DVector<f64>,
}

impl ReparamDraw {
    pub fn new(values: DVector<f64>) -> Self {
        ReparamDraw { values }
    }

    pub fn zeros(dim: usize) -> Self {
        ReparamDraw {
            values: DVector::zeros(dim),
        }
    }
}

/// A stochastic policy over a fixed parameter vector.
///
/// Policies are immutable value objects; sampling takes an external stream,
/// so concurrent use is safe by construction.
pub trait Policy: Sync {
    /// Length of the (documented, fixed-order) parameter vector.
    fn param_dim(&self) -> usize;

    fn sample(&self, s: &State, rng: &mut Stream) -> Action;

    fn log_prob(&self, s: &State, a: &Action) -> Result<f64>;

    /// Probability (density or mass) of `a` at `s`.
    fn prob(&self, s: &State, a: &Action) -> Result<f64> {
        Ok(self.log_prob(s, a)?.exp())
    }

    /// Score vector `∇ log π_s(a)` with respect to the parameter vector.
    fn score(&self, s: &State, a: &Action) -> Result<DVector<f64>>;

    /// Push a standard-normal draw through the reparameterization
    /// `ω(s, r)`. Only continuous policies support this.
    fn reparam_apply(&self, _s: &State, _r: &ReparamDraw) -> Result<Action> {
        Err(Error::unsupported(
            "this policy has no continuous reparameterization",
        ))
    }
}

/// A policy the natural-gradient trainer can update.
///
/// Optimization runs in unconstrained coordinates (`log σ` instead of `σ`
/// for Gaussian policies); `score_to_opt` maps score vectors into those
/// coordinates by the chain rule.
pub trait TrainablePolicy: Policy + Clone {
    fn opt_dim(&self) -> usize;
    fn opt_params(&self) -> DVector<f64>;
    fn with_opt_params(&self, params: &DVector<f64>) -> Result<Self>
    where
        Self: Sized;
    fn score_to_opt(&self, score: &DVector<f64>) -> DVector<f64>;
    /// Exact KL(self ‖ other) at one state.
    fn kl(&self, other: &Self, s: &State) -> f64;
    /// Policy noise scale for logging, when the policy has one.
    fn noise_scale(&self) -> Option<f64> {
        None
    }
}
