//! Gaussian policy with a feature-linear mean and isotropic covariance.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::env::{Action, State};
use crate::error::{Error, Result};
use crate::rng::Stream;

use super::{
    CenterSensitivity, FeatureMap, Policy, QuadraticQ, ReparamDraw, TrainablePolicy,
};

/// `π_s = N(μ_θ(s), σ I)` with mean `μ_θ(s) = θ φ(s)`.
///
/// `σ` is the covariance scale (a variance, not a standard deviation). The
/// parameter vector is the row-major flattening of `θ` followed by `σ`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    theta: DMatrix<f64>,
    sigma: f64,
    features: FeatureMap,
}

impl GaussianPolicy {
    pub fn new(theta: DMatrix<f64>, sigma: f64, features: FeatureMap) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "policy variance must be positive and finite (got {sigma})"
            )));
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite policy mean parameters"));
        }
        Ok(GaussianPolicy {
            theta,
            sigma,
            features,
        })
    }

    /// Zero-mean policy with affine features.
    pub fn zeros(action_dim: usize, state_dim: usize, sigma: f64) -> Result<Self> {
        let features = FeatureMap::affine();
        Self::new(
            DMatrix::zeros(action_dim, features.dim(state_dim)),
            sigma,
            features,
        )
    }

    pub fn action_dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn feature_vector(&self, s: &State) -> DVector<f64> {
        self.features.map(&s.values)
    }

    pub fn mean(&self, s: &State) -> DVector<f64> {
        &self.theta * self.feature_vector(s)
    }

    fn residual(&self, s: &State, a: &Action) -> Result<DVector<f64>> {
        let a = a.continuous()?;
        if a.len() != self.action_dim() {
            return Err(Error::invalid(format!(
                "action dimension {} does not match policy dimension {}",
                a.len(),
                self.action_dim()
            )));
        }
        Ok(a - self.mean(s))
    }

    /// Closed-form `E_{A ~ π_s}[q(A)]` for a quadratic model:
    /// `q0 + gᵀδ + ½ δᵀHδ + (σ/2) tr(H)` with `δ = μ_θ(s) − m`.
    pub fn expectation_quadratic(&self, s: &State, q: &QuadraticQ) -> f64 {
        let delta = self.mean(s) - &q.m;
        q.q0 + q.g.dot(&delta) + 0.5 * delta.dot(&(&q.h * &delta)) + 0.5 * self.sigma * q.h.trace()
    }

    /// Gradient of [`expectation_quadratic`](Self::expectation_quadratic)
    /// with respect to `(θ, σ)`.
    ///
    /// With `sensitivity = None` the coefficients of `q` are held constant,
    /// which makes the result equal `E[N · q(A)]` exactly. Passing a
    /// sensitivity switches to the full chain rule through the expansion
    /// center, valid when `m = μ_θ(s)`.
    pub fn grad_expectation_quadratic(
        &self,
        s: &State,
        q: &QuadraticQ,
        sensitivity: Option<&CenterSensitivity>,
    ) -> Result<DVector<f64>> {
        if q.action_dim() != self.action_dim() {
            return Err(Error::invalid("quadratic model has wrong action dimension"));
        }
        let mu = self.mean(s);
        let delta = &mu - &q.m;
        let phi = self.feature_vector(s);

        let d_mu: DVector<f64> = match sensitivity {
            None => &q.g + &q.h * &delta,
            Some(sens) => {
                if delta.amax() > 1e-9 {
                    return Err(Error::invalid(
                        "center sensitivities require the expansion center to sit at the policy mean",
                    ));
                }
                if sens.dq0_dm.len() != q.action_dim() {
                    return Err(Error::invalid("sensitivity dimension mismatch"));
                }
                &sens.dq0_dm + &sens.dtrace_h_dm * (0.5 * self.sigma)
            }
        };

        let mut out = DVector::zeros(self.param_dim());
        let fdim = self.feature_dim();
        for i in 0..self.action_dim() {
            for j in 0..fdim {
                out[i * fdim + j] = d_mu[i] * phi[j];
            }
        }
        out[self.param_dim() - 1] = 0.5 * q.h.trace();
        Ok(out)
    }
}

impl Policy for GaussianPolicy {
    fn param_dim(&self) -> usize {
        self.theta.nrows() * self.theta.ncols() + 1
    }

    fn sample(&self, s: &State, rng: &mut Stream) -> Action {
        let std = self.sigma.sqrt();
        let mut a = self.mean(s);
        for v in a.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += std * z;
        }
        Action::Continuous(a)
    }

    fn log_prob(&self, s: &State, a: &Action) -> Result<f64> {
        let r = self.residual(s, a)?;
        let d = self.action_dim() as f64;
        Ok(-0.5 * d * (TAU * self.sigma).ln() - r.norm_squared() / (2.0 * self.sigma))
    }

    fn score(&self, s: &State, a: &Action) -> Result<DVector<f64>> {
        let r = self.residual(s, a)?;
        let phi = self.feature_vector(s);
        let fdim = self.feature_dim();
        let mut out = DVector::zeros(self.param_dim());
        for i in 0..self.action_dim() {
            for j in 0..fdim {
                out[i * fdim + j] = r[i] * phi[j] / self.sigma;
            }
        }
        let d = self.action_dim() as f64;
        out[self.param_dim() - 1] =
            r.norm_squared() / (2.0 * self.sigma * self.sigma) - d / (2.0 * self.sigma);
        Ok(out)
    }

    fn reparam_apply(&self, s: &State, r: &ReparamDraw) -> Result<Action> {
        if r.values.len() != self.action_dim() {
            return Err(Error::invalid("reparameterization draw dimension mismatch"));
        }
        Ok(Action::Continuous(
            self.mean(s) + &r.values * self.sigma.sqrt(),
        ))
    }
}

impl TrainablePolicy for GaussianPolicy {
    fn opt_dim(&self) -> usize {
        self.param_dim()
    }

    /// `(θ row-major, ln σ)`; the log keeps σ positive under unconstrained
    /// updates.
    fn opt_params(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.opt_dim());
        let fdim = self.feature_dim();
        for i in 0..self.action_dim() {
            for j in 0..fdim {
                v[i * fdim + j] = self.theta[(i, j)];
            }
        }
        v[self.opt_dim() - 1] = self.sigma.ln();
        v
    }

    fn with_opt_params(&self, params: &DVector<f64>) -> Result<Self> {
        if params.len() != self.opt_dim() {
            return Err(Error::invalid("optimizer parameter length mismatch"));
        }
        let fdim = self.feature_dim();
        let mut theta = DMatrix::zeros(self.action_dim(), fdim);
        for i in 0..self.action_dim() {
            for j in 0..fdim {
                theta[(i, j)] = params[i * fdim + j];
            }
        }
        GaussianPolicy::new(theta, params[self.opt_dim() - 1].exp(), self.features)
    }

    fn score_to_opt(&self, score: &DVector<f64>) -> DVector<f64> {
        let mut v = score.clone();
        let last = v.len() - 1;
        v[last] *= self.sigma;
        v
    }

    fn kl(&self, other: &Self, s: &State) -> f64 {
        let d = self.action_dim() as f64;
        let dm = other.mean(s) - self.mean(s);
        0.5 * (d * self.sigma / other.sigma + dm.norm_squared() / other.sigma - d
            + d * (other.sigma / self.sigma).ln())
    }

    fn noise_scale(&self) -> Option<f64> {
        Some(self.sigma)
    }
}
