//! Linear-quadratic-Gaussian testbed: linear dynamics, Gaussian process
//! noise, quadratic cost.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Stream;

use super::{Action, ActionCost, Environment, State};

#[derive(Debug, Clone)]
pub struct LqgConfig {
    /// State transition `s' = A s + B a + w`.
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Process noise covariance (positive semidefinite).
    pub w: DMatrix<f64>,
    /// Cost `sᵀ Q_c s + q_linᵀ s + aᵀ R_c a`.
    pub q_cost: DMatrix<f64>,
    /// Linear state-cost term.
    pub q_lin: DVector<f64>,
    pub r_cost: DMatrix<f64>,
    /// Start covariance of `S_1` (mean zero).
    pub init_cov: DMatrix<f64>,
    /// Constant subtracted from every step cost; centering the running
    /// cost keeps gradient-variance scans numerically resolvable.
    pub cost_offset: f64,
    pub horizon: usize,
}

impl LqgConfig {
    /// Mildly stable two-state, one-input system used by the noise scans.
    /// The state cost is linear, so the expected cost level is exactly zero
    /// under a zero-mean policy at every noise scale and the variance
    /// components stay resolvable at desk-scale sample sizes.
    pub fn default_scan(horizon: usize) -> Self {
        LqgConfig {
            a: DMatrix::from_row_slice(2, 2, &[0.98, 0.10, 0.0, 0.97]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 0.35]),
            w: DMatrix::identity(2, 2) * 0.25,
            q_cost: DMatrix::zeros(2, 2),
            q_lin: DVector::from_vec(vec![1.0, 1.0]),
            r_cost: DMatrix::identity(1, 1) * 1e-4,
            init_cov: DMatrix::identity(2, 2),
            cost_offset: 0.0,
            horizon,
        }
    }

    /// Classic fully-quadratic cost instance (identity weights).
    pub fn quadratic(horizon: usize) -> Self {
        LqgConfig {
            a: DMatrix::from_row_slice(2, 2, &[0.95, 0.10, 0.0, 0.9]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            w: DMatrix::identity(2, 2) * 0.01,
            q_cost: DMatrix::identity(2, 2),
            q_lin: DVector::zeros(2),
            r_cost: DMatrix::identity(1, 1) * 0.1,
            init_cov: DMatrix::identity(2, 2) * 0.25,
            cost_offset: 0.0,
            horizon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lqg {
    pub config: LqgConfig,
    chol_w: Option<DMatrix<f64>>,
    chol_init: Option<DMatrix<f64>>,
}

impl Lqg {
    pub fn new(config: LqgConfig) -> Result<Self> {
        let d = config.a.nrows();
        if config.a.ncols() != d
            || config.b.nrows() != d
            || config.w.nrows() != d
            || config.w.ncols() != d
            || config.q_cost.nrows() != d
            || config.init_cov.nrows() != d
        {
            return Err(Error::invalid("LQG matrix dimensions are inconsistent"));
        }
        if config.r_cost.nrows() != config.b.ncols() {
            return Err(Error::invalid("LQG action-cost matrix has wrong size"));
        }
        if config.q_lin.len() != d {
            return Err(Error::invalid("LQG linear cost term has wrong size"));
        }
        let chol_w = psd_factor(&config.w)?;
        let chol_init = psd_factor(&config.init_cov)?;
        if Cholesky::new(config.r_cost.clone()).is_none() {
            return Err(Error::invalid("LQG R_c must be positive definite"));
        }
        Ok(Lqg {
            config,
            chol_w,
            chol_init,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.config.b.ncols()
    }

    fn gaussian(&self, factor: &Option<DMatrix<f64>>, rng: &mut Stream) -> DVector<f64> {
        let d = self.config.a.nrows();
        match factor {
            None => DVector::zeros(d),
            Some(l) => {
                let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
                l * z
            }
        }
    }
}

/// Cholesky-like factor of a PSD matrix; `None` for the zero matrix.
fn psd_factor(m: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    if m.amax() == 0.0 {
        return Ok(None);
    }
    // Jitter-free first, then a tiny diagonal shift for semidefinite inputs.
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(Some(c.l()));
    }
    let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * 1e-12;
    Cholesky::new(shifted)
        .map(|c| Some(c.l()))
        .ok_or_else(|| Error::invalid("covariance matrix is not positive semidefinite"))
}

impl Environment for Lqg {
    fn state_dim(&self) -> usize {
        self.config.a.nrows()
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reset(&self, rng: &mut Stream) -> State {
        State::new(self.gaussian(&self.chol_init, rng), 1)
    }

    fn step(&self, s: &State, a: &Action, rng: &mut Stream) -> Result<(State, f64, bool)> {
        let a = a.continuous()?;
        if a.len() != self.action_dim() {
            return Err(Error::invalid(format!(
                "LQG action dimension {} != {}",
                a.len(),
                self.action_dim()
            )));
        }
        if s.time_index > self.config.horizon {
            return Err(Error::invalid("stepping past the horizon"));
        }
        let cost = ActionCost::cost(self, s, a);
        let next = &self.config.a * &s.values + &self.config.b * a + self.gaussian(&self.chol_w, rng);
        let t_next = s.time_index + 1;
        Ok((
            State::new(next, t_next),
            cost,
            t_next > self.config.horizon,
        ))
    }
}

impl ActionCost for Lqg {
    fn cost(&self, s: &State, a: &DVector<f64>) -> f64 {
        s.values.dot(&(&self.config.q_cost * &s.values))
            + self.config.q_lin.dot(&s.values)
            + a.dot(&(&self.config.r_cost * a))
            - self.config.cost_offset
    }

    fn cost_action_gradient(&self, _s: &State, a: &DVector<f64>) -> DVector<f64> {
        (&self.config.r_cost + self.config.r_cost.transpose()) * a
    }

    fn cost_action_hessian(&self, _s: &State, _a: &DVector<f64>) -> DMatrix<f64> {
        &self.config.r_cost + self.config.r_cost.transpose()
    }

    fn quadratic_in_action(&self) -> bool {
        true
    }
}
