//! Cart-pole balancing with a continuous force action.
//!
//! Standard two-DOF cart-pole ODE integrated with semi-implicit Euler.
//! The reward is an indicator that the pole is within the angle threshold;
//! it is stored internally as a cost of -1 per upright step. The episode
//! terminates when the angle crosses the threshold.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::Stream;

use super::{Action, ActionCost, Environment, State};

#[derive(Debug, Clone)]
pub struct CartPoleConfig {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half pole length, as in the classic benchmark.
    pub pole_length: f64,
    pub gravity: f64,
    pub dt: f64,
    /// Episode ends when |pole angle| exceeds this (radians).
    pub angle_threshold: f64,
    pub horizon: usize,
    /// Start states are uniform on `[-w, w]^4` around upright-and-still.
    pub start_offset: f64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        CartPoleConfig {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.8,
            dt: 0.02,
            angle_threshold: 0.2,
            horizon: 200,
            start_offset: 0.01,
        }
    }
}

impl CartPoleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::invalid("cart-pole dt must be positive"));
        }
        if self.angle_threshold <= 0.0 {
            return Err(Error::invalid("cart-pole angle threshold must be positive"));
        }
        Ok(())
    }

    /// A copy with physical parameters (masses, length, gravity) scaled by
    /// `factor`; used as the deliberately-biased data generator for critic
    /// pretraining.
    pub fn perturbed(&self, factor: f64) -> Self {
        CartPoleConfig {
            cart_mass: self.cart_mass * factor,
            pole_mass: self.pole_mass * factor,
            pole_length: self.pole_length * factor,
            gravity: self.gravity * factor,
            ..self.clone()
        }
    }
}

/// State layout: `(x, x_dot, theta, theta_dot)`.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub config: CartPoleConfig,
}

impl CartPole {
    pub fn new(config: CartPoleConfig) -> Result<Self> {
        config.validate()?;
        Ok(CartPole { config })
    }

    fn upright(&self, theta: f64) -> bool {
        theta.abs() <= self.config.angle_threshold
    }

    fn accelerations(&self, theta: f64, theta_dot: f64, force: f64) -> (f64, f64) {
        let c = &self.config;
        let total_mass = c.cart_mass + c.pole_mass;
        let pml = c.pole_mass * c.pole_length;
        let cos = theta.cos();
        let sin = theta.sin();
        let temp = (force + pml * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (c.gravity * sin - cos * temp)
            / (c.pole_length * (4.0 / 3.0 - c.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pml * theta_acc * cos / total_mass;
        (x_acc, theta_acc)
    }
}

impl Environment for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reset(&self, rng: &mut Stream) -> State {
        let w = self.config.start_offset;
        let values = DVector::from_iterator(4, (0..4).map(|_| rng.random_range(-w..=w)));
        State::new(values, 1)
    }

    fn step(&self, s: &State, a: &Action, _rng: &mut Stream) -> Result<(State, f64, bool)> {
        let force = {
            let v = a.continuous()?;
            if v.len() != 1 {
                return Err(Error::invalid("cart-pole takes a one-dimensional force"));
            }
            v[0]
        };
        if s.time_index > self.config.horizon {
            return Err(Error::invalid("stepping past the horizon"));
        }
        let (x, x_dot, theta, theta_dot) = (s.values[0], s.values[1], s.values[2], s.values[3]);

        let (x_acc, theta_acc) = self.accelerations(theta, theta_dot, force);
        let dt = self.config.dt;
        // Semi-implicit Euler: velocities first, then positions with the
        // updated velocities.
        let x_dot_new = x_dot + dt * x_acc;
        let theta_dot_new = theta_dot + dt * theta_acc;
        let x_new = x + dt * x_dot_new;
        let theta_new = theta + dt * theta_dot_new;

        let cost = if self.upright(theta) { -1.0 } else { 0.0 };
        let crossed = !self.upright(theta_new);
        let t_next = s.time_index + 1;
        let next = State::new(
            DVector::from_vec(vec![x_new, x_dot_new, theta_new, theta_dot_new]),
            t_next,
        );
        Ok((next, cost, crossed || t_next > self.config.horizon))
    }
}

impl ActionCost for CartPole {
    fn cost(&self, s: &State, _a: &DVector<f64>) -> f64 {
        if self.upright(s.values[2]) {
            -1.0
        } else {
            0.0
        }
    }

    fn cost_action_gradient(&self, _s: &State, _a: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }

    fn cost_action_hessian(&self, _s: &State, _a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn quadratic_in_action(&self) -> bool {
        true
    }
}
