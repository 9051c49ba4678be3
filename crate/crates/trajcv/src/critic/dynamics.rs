//! Deterministic next-state model, affine in state features and action.

use nalgebra::{DMatrix, DVector};

use crate::env::{Action, State};
use crate::error::{Error, Result};

use super::solve_least_squares;

/// `d̂(s, a) = C s + B a + b`.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    state_mat: DMatrix<f64>,
    action_mat: DMatrix<f64>,
    offset: DVector<f64>,
    pub mse: f64,
    pub ridged: bool,
}

impl DynamicsModel {
    pub fn from_coefficients(
        state_mat: DMatrix<f64>,
        action_mat: DMatrix<f64>,
        offset: DVector<f64>,
    ) -> Result<Self> {
        let d = state_mat.nrows();
        if state_mat.ncols() != d || action_mat.nrows() != d || offset.len() != d {
            return Err(Error::invalid("dynamics-model coefficient shapes disagree"));
        }
        Ok(DynamicsModel {
            state_mat,
            action_mat,
            offset,
            mse: 0.0,
            ridged: false,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_mat.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.action_mat.ncols()
    }

    /// Predicted next-state values (the caller advances the time index).
    pub fn predict(&self, s: &State, a: &DVector<f64>) -> DVector<f64> {
        &self.state_mat * &s.values + &self.action_mat * a + &self.offset
    }

    /// `∂ d̂ / ∂ a`, a `state_dim × action_dim` Jacobian (constant for this
    /// model family).
    pub fn action_jacobian(&self, _s: &State, _a: &DVector<f64>) -> DMatrix<f64> {
        self.action_mat.clone()
    }

    pub fn state_matrix(&self) -> &DMatrix<f64> {
        &self.state_mat
    }

    pub fn action_matrix(&self) -> &DMatrix<f64> {
        &self.action_mat
    }

    /// Flat text serialization, mirroring the value-model format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "dynamics-model {} {} {}\n",
            self.state_dim(),
            self.action_dim(),
            u8::from(self.ridged)
        ));
        let mut push = |v: f64| out.push_str(&format!("{:.16e}\n", v));
        for v in self.state_mat.iter() {
            push(*v);
        }
        for v in self.action_mat.iter() {
            push(*v);
        }
        for v in self.offset.iter() {
            push(*v);
        }
        push(self.mse);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty dynamics-model text"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "dynamics-model" {
            return Err(Error::invalid("bad dynamics-model header"));
        }
        let d: usize = fields[1].parse().map_err(|_| Error::invalid("bad dims"))?;
        let k: usize = fields[2].parse().map_err(|_| Error::invalid("bad dims"))?;
        let ridged = fields[3] == "1";
        let mut values = Vec::new();
        for line in lines {
            values.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid("bad coefficient line"))?,
            );
        }
        let expected = d * d + d * k + d + 1;
        if values.len() != expected {
            return Err(Error::invalid("dynamics-model coefficient count mismatch"));
        }
        let state_mat = DMatrix::from_vec(d, d, values[0..d * d].to_vec());
        let action_mat = DMatrix::from_vec(d, k, values[d * d..d * d + d * k].to_vec());
        let offset = DVector::from_vec(values[d * d + d * k..d * d + d * k + d].to_vec());
        let mut model = DynamicsModel::from_coefficients(state_mat, action_mat, offset)?;
        model.mse = values[expected - 1];
        model.ridged = ridged;
        Ok(model)
    }
}

/// Least-squares fit of observed transitions.
pub fn fit_dynamics(data: &[(State, Action, State)]) -> Result<DynamicsModel> {
    if data.is_empty() {
        return Err(Error::invalid("no transitions to fit a dynamics model"));
    }
    let d = data[0].0.values.len();
    let k = data[0].1.continuous()?.len();
    let n_coef = d + k + 1;
    if data.len() < n_coef {
        return Err(Error::invalid(format!(
            "dynamics fit needs at least {n_coef} samples, got {}",
            data.len()
        )));
    }

    let mut x = DMatrix::zeros(data.len(), n_coef);
    for (row, (s, a, _)) in data.iter().enumerate() {
        let a = a.continuous()?;
        for i in 0..d {
            x[(row, i)] = s.values[i];
        }
        for j in 0..k {
            x[(row, d + j)] = a[j];
        }
        x[(row, d + k)] = 1.0;
    }

    let mut state_mat = DMatrix::zeros(d, d);
    let mut action_mat = DMatrix::zeros(d, k);
    let mut offset = DVector::zeros(d);
    let mut mse = 0.0;
    let mut ridged = false;
    for out in 0..d {
        let y = DVector::from_iterator(data.len(), data.iter().map(|(_, _, ns)| ns.values[out]));
        let (w, used_ridge) = solve_least_squares(&x, &y)?;
        ridged |= used_ridge;
        for i in 0..d {
            state_mat[(out, i)] = w[i];
        }
        for j in 0..k {
            action_mat[(out, j)] = w[d + j];
        }
        offset[out] = w[d + k];
        let resid = &x * &w - &y;
        mse += resid.norm_squared() / data.len() as f64;
    }

    let mut model = DynamicsModel::from_coefficients(state_mat, action_mat, offset)?;
    model.mse = mse;
    model.ridged = ridged;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, CartPole, CartPoleConfig, Lqg, LqgConfig};
    use crate::policy::GaussianPolicy;
    use crate::rng::substream;

    #[test]
    fn noiseless_lqg_recovers_the_generator() {
        let mut cfg = LqgConfig::quadratic(8);
        cfg.w = DMatrix::zeros(2, 2);
        let env = Lqg::new(cfg.clone()).unwrap();
        let policy = GaussianPolicy::zeros(1, 2, 0.5).unwrap();
        let mut data = Vec::new();
        for i in 0..40 {
            let mut rng = substream(50, 0, i);
            let traj = rollout(&env, &policy, &mut rng).unwrap();
            for t in 0..traj.len() - 1 {
                data.push((
                    traj.states[t].clone(),
                    traj.actions[t].clone(),
                    traj.states[t + 1].clone(),
                ));
            }
        }
        let model = fit_dynamics(&data).unwrap();
        assert!(model.mse < 1e-10, "mse {}", model.mse);
        assert!((model.state_matrix() - &cfg.a).amax() < 1e-8);
        assert!((model.action_matrix() - &cfg.b).amax() < 1e-8);
    }

    #[test]
    fn repeated_transition_is_predicted_exactly() {
        let s = State::new(DVector::from_vec(vec![1.0, 2.0]), 1);
        let a = Action::Continuous(DVector::from_vec(vec![0.5]));
        let ns = State::new(DVector::from_vec(vec![1.5, 1.0]), 2);
        let data: Vec<_> = (0..8).map(|_| (s.clone(), a.clone(), ns.clone())).collect();
        let model = fit_dynamics(&data).unwrap();
        assert!(model.ridged);
        let pred = model.predict(&s, a.continuous().unwrap());
        assert!((pred - ns.values).amax() < 1e-3);
    }

    #[test]
    fn cartpole_residual_shrinks_with_more_data() {
        let env = CartPole::new(CartPoleConfig::default()).unwrap();
        let policy = GaussianPolicy::zeros(1, 4, 1.0).unwrap();
        let collect = |episodes: usize| -> Vec<(State, Action, State)> {
            let mut data = Vec::new();
            let mut i = 0;
            while data.len() < episodes {
                let mut rng = substream(60, 0, i);
                let traj = rollout(&env, &policy, &mut rng).unwrap();
                for t in 0..traj.len().saturating_sub(1) {
                    data.push((
                        traj.states[t].clone(),
                        traj.actions[t].clone(),
                        traj.states[t + 1].clone(),
                    ));
                }
                i += 1;
            }
            data.truncate(episodes);
            data
        };
        let small = fit_dynamics(&collect(100)).unwrap();
        let large = fit_dynamics(&collect(10_000)).unwrap();
        // Larger samples cannot be fit as tightly by the affine family.
        assert!(large.mse >= small.mse * 0.5);
        // But the held-out error of the larger fit is no worse.
        let probe = collect(500);
        let err = |m: &DynamicsModel| -> f64 {
            probe
                .iter()
                .map(|(s, a, ns)| (m.predict(s, a.continuous().unwrap()) - &ns.values).norm_squared())
                .sum::<f64>()
                / probe.len() as f64
        };
        assert!(err(&large) <= err(&small) * 1.05);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cfg = LqgConfig::quadratic(4);
        let env = Lqg::new(cfg).unwrap();
        let policy = GaussianPolicy::zeros(1, 2, 1.0).unwrap();
        let mut data = Vec::new();
        for i in 0..20 {
            let traj = rollout(&env, &policy, &mut substream(61, 0, i)).unwrap();
            for t in 0..traj.len() - 1 {
                data.push((
                    traj.states[t].clone(),
                    traj.actions[t].clone(),
                    traj.states[t + 1].clone(),
                ));
            }
        }
        let model = fit_dynamics(&data).unwrap();
        let s = State::new(DVector::from_vec(vec![0.2, -0.4]), 1);
        let a = DVector::from_vec(vec![0.1]);
        let jac = model.action_jacobian(&s, &a);
        let eps = 1e-6;
        let up = model.predict(&s, &DVector::from_vec(vec![0.1 + eps]));
        let dn = model.predict(&s, &DVector::from_vec(vec![0.1 - eps]));
        let fd = (up - dn) / (2.0 * eps);
        for i in 0..2 {
            assert!((jac[(i, 0)] - fd[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn text_round_trip() {
        let model = DynamicsModel::from_coefficients(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DVector::from_vec(vec![0.01, -0.02]),
        )
        .unwrap();
        let restored = DynamicsModel::from_text(&model.to_text()).unwrap();
        let s = State::new(DVector::from_vec(vec![0.3, 0.4]), 1);
        let a = DVector::from_vec(vec![0.2]);
        assert_eq!(model.predict(&s, &a), restored.predict(&s, &a));
    }
}
