//! Quadratic-in-features state-value model.

use nalgebra::{DMatrix, DVector};

use crate::env::State;
use crate::error::{Error, Result};

use super::solve_least_squares;

/// How the value regression reads its input from a state.
#[derive(Debug, Clone, Copy)]
pub struct ValueFitConfig {
    /// Append the remaining horizon `h − t + 1` as an extra input so one
    /// model can represent time-varying values.
    pub include_time: bool,
    pub horizon: usize,
}

impl ValueFitConfig {
    pub fn stationary() -> Self {
        ValueFitConfig {
            include_time: false,
            horizon: 0,
        }
    }

    pub fn with_horizon(horizon: usize) -> Self {
        ValueFitConfig {
            include_time: true,
            horizon,
        }
    }
}

/// `v̂(s) = b + lᵀ z + ½ zᵀ W z` over the input `z(s)`, with `W` symmetric.
///
/// Gradient and Hessian are taken with respect to the raw state values only;
/// the optional time input is a constant coordinate.
#[derive(Debug, Clone)]
pub struct ValueModel {
    bias: f64,
    linear: DVector<f64>,
    quad: DMatrix<f64>,
    state_dim: usize,
    config: ValueFitConfig,
    /// Training mean squared error.
    pub mse: f64,
    /// True when the fit fell back to a ridge solve.
    pub ridged: bool,
}

impl ValueModel {
    pub fn from_coefficients(
        bias: f64,
        linear: DVector<f64>,
        quad: DMatrix<f64>,
        state_dim: usize,
        config: ValueFitConfig,
    ) -> Result<Self> {
        let z_dim = state_dim + usize::from(config.include_time);
        if linear.len() != z_dim || quad.nrows() != z_dim || quad.ncols() != z_dim {
            return Err(Error::invalid("value-model coefficient shapes disagree"));
        }
        if (&quad - quad.transpose()).amax() > 1e-10 {
            return Err(Error::invalid("value-model quadratic term must be symmetric"));
        }
        Ok(ValueModel {
            bias,
            linear,
            quad,
            state_dim,
            config,
            mse: 0.0,
            ridged: false,
        })
    }

    /// The all-zero value function.
    pub fn zero(state_dim: usize, config: ValueFitConfig) -> Self {
        let z_dim = state_dim + usize::from(config.include_time);
        ValueModel {
            bias: 0.0,
            linear: DVector::zeros(z_dim),
            quad: DMatrix::zeros(z_dim, z_dim),
            state_dim,
            config,
            mse: 0.0,
            ridged: false,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input(&self, s: &State) -> DVector<f64> {
        if !self.config.include_time {
            return s.values.clone();
        }
        let mut z = DVector::zeros(self.state_dim + 1);
        z.rows_mut(0, self.state_dim).copy_from(&s.values);
        z[self.state_dim] = (self.config.horizon + 1).saturating_sub(s.time_index) as f64;
        z
    }

    pub fn value(&self, s: &State) -> f64 {
        let z = self.input(s);
        self.bias + self.linear.dot(&z) + 0.5 * z.dot(&(&self.quad * &z))
    }

    /// `∇_s v̂(s)` over the raw state values.
    pub fn gradient(&self, s: &State) -> DVector<f64> {
        let z = self.input(s);
        let full = &self.linear + &self.quad * z;
        full.rows(0, self.state_dim).into_owned()
    }

    /// `∇²_s v̂(s)` over the raw state values.
    pub fn hessian(&self) -> DMatrix<f64> {
        self.quad
            .view((0, 0), (self.state_dim, self.state_dim))
            .into_owned()
    }

    /// Flat text serialization: a header line with dimensions, then one
    /// coefficient per line at 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "value-model {} {} {} {}\n",
            self.state_dim,
            u8::from(self.config.include_time),
            self.config.horizon,
            u8::from(self.ridged),
        ));
        let mut push = |v: f64| out.push_str(&format!("{:.16e}\n", v));
        push(self.bias);
        for v in self.linear.iter() {
            push(*v);
        }
        for v in self.quad.iter() {
            push(*v);
        }
        push(self.mse);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty value-model text"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "value-model" {
            return Err(Error::invalid("bad value-model header"));
        }
        let state_dim: usize = fields[1].parse().map_err(|_| Error::invalid("bad dims"))?;
        let include_time = fields[2] == "1";
        let horizon: usize = fields[3].parse().map_err(|_| Error::invalid("bad dims"))?;
        let ridged = fields[4] == "1";
        let z_dim = state_dim + usize::from(include_time);
        let mut values = Vec::new();
        for line in lines {
            values.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid("bad coefficient line"))?,
            );
        }
        let expected = 1 + z_dim + z_dim * z_dim + 1;
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "value-model expects {expected} coefficients, found {}",
                values.len()
            )));
        }
        let bias = values[0];
        let linear = DVector::from_vec(values[1..1 + z_dim].to_vec());
        let quad =
            DMatrix::from_vec(z_dim, z_dim, values[1 + z_dim..1 + z_dim + z_dim * z_dim].to_vec());
        let mse = values[expected - 1];
        let mut model = ValueModel::from_coefficients(
            bias,
            linear,
            quad,
            state_dim,
            ValueFitConfig {
                include_time,
                horizon,
            },
        )?;
        model.mse = mse;
        model.ridged = ridged;
        Ok(model)
    }
}

/// Least-squares fit of empirical returns on quadratic features of the
/// model input.
pub fn fit_value(data: &[(State, f64)], config: ValueFitConfig) -> Result<ValueModel> {
    if data.is_empty() {
        return Err(Error::invalid("no samples to fit a value model"));
    }
    let state_dim = data[0].0.values.len();
    let z_dim = state_dim + usize::from(config.include_time);
    let n_coef = 1 + z_dim + z_dim * (z_dim + 1) / 2;
    if data.len() < n_coef {
        return Err(Error::invalid(format!(
            "value fit needs at least {n_coef} samples, got {}",
            data.len()
        )));
    }

    let probe = ValueModel::zero(state_dim, config);
    let mut x = DMatrix::zeros(data.len(), n_coef);
    let mut y = DVector::zeros(data.len());
    for (row, (s, ret)) in data.iter().enumerate() {
        let z = probe.input(s);
        let mut col = 0;
        x[(row, col)] = 1.0;
        col += 1;
        for i in 0..z_dim {
            x[(row, col)] = z[i];
            col += 1;
        }
        for i in 0..z_dim {
            for j in i..z_dim {
                x[(row, col)] = z[i] * z[j];
                col += 1;
            }
        }
        y[row] = *ret;
    }

    let (w, ridged) = solve_least_squares(&x, &y)?;

    let bias = w[0];
    let linear = DVector::from_vec(w.as_slice()[1..1 + z_dim].to_vec());
    let mut quad = DMatrix::zeros(z_dim, z_dim);
    let mut col = 1 + z_dim;
    for i in 0..z_dim {
        for j in i..z_dim {
            if i == j {
                quad[(i, i)] = 2.0 * w[col];
            } else {
                quad[(i, j)] = w[col];
                quad[(j, i)] = w[col];
            }
            col += 1;
        }
    }

    let mut model = ValueModel::from_coefficients(bias, linear, quad, state_dim, config)?;
    let resid = &x * &w - &y;
    model.mse = resid.norm_squared() / data.len() as f64;
    model.ridged = ridged;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn state(values: Vec<f64>, t: usize) -> State {
        State::new(DVector::from_vec(values), t)
    }

    #[test]
    fn exact_quadratic_targets_are_recovered() {
        let mut rng = substream(8, 0, 0);
        let truth = |x: f64, y: f64| 1.5 - 0.3 * x + 0.8 * y + 0.25 * x * x - x * y + 0.5 * y * y;
        let data: Vec<(State, f64)> = (0..50)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                let y: f64 = rng.random_range(-2.0..2.0);
                (state(vec![x, y], 1), truth(x, y))
            })
            .collect();
        let model = fit_value(&data, ValueFitConfig::stationary()).unwrap();
        assert!(model.mse < 1e-10, "mse {}", model.mse);
        assert!(!model.ridged);
        let probe = state(vec![0.7, -1.1], 1);
        assert!((model.value(&probe) - truth(0.7, -1.1)).abs() < 1e-8);
    }

    #[test]
    fn constant_targets_give_a_constant_model() {
        let mut rng = substream(9, 0, 0);
        let data: Vec<(State, f64)> = (0..20)
            .map(|_| (state(vec![rng.random_range(-1.0..1.0)], 1), 4.2))
            .collect();
        let model = fit_value(&data, ValueFitConfig::stationary()).unwrap();
        for _ in 0..5 {
            let probe = state(vec![rng.random_range(-1.0..1.0)], 1);
            assert!((model.value(&probe) - 4.2).abs() < 1e-8);
        }
    }

    #[test]
    fn noisy_fit_error_stays_below_target_variance() {
        let mut rng = substream(10, 0, 0);
        let n = 400;
        let mut data = Vec::with_capacity(n);
        let mut mean = 0.0;
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.random_range(-1.0..1.0);
            let noise: f64 = rng.random_range(-0.5..0.5);
            let y = x * x + noise;
            data.push((state(vec![x], 1), y));
            targets.push(y);
            mean += y;
        }
        mean /= n as f64;
        let var: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
        let model = fit_value(&data, ValueFitConfig::stationary()).unwrap();
        assert!(model.mse <= var, "mse {} vs variance {var}", model.mse);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = substream(11, 0, 0);
        let data: Vec<(State, f64)> = (0..60)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                let y: f64 = rng.random_range(-2.0..2.0);
                (state(vec![x, y], 3), x * x - 0.5 * x * y + y)
            })
            .collect();
        let model = fit_value(&data, ValueFitConfig::with_horizon(10)).unwrap();
        let probe = state(vec![0.4, -0.6], 3);
        let grad = model.gradient(&probe);
        let eps = 1e-5;
        for k in 0..2 {
            let mut up = probe.clone();
            let mut dn = probe.clone();
            up.values[k] += eps;
            dn.values[k] -= eps;
            let fd = (model.value(&up) - model.value(&dn)) / (2.0 * eps);
            assert!((fd - grad[k]).abs() < 1e-5, "coordinate {k}");
        }
        // Hessian is symmetric by construction.
        let h = model.hessian();
        assert!((&h - h.transpose()).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_designs_fall_back_to_ridge() {
        // Same state repeated: the design cannot identify the coefficients.
        let data: Vec<(State, f64)> = (0..10).map(|_| (state(vec![1.0], 1), 2.0)).collect();
        let model = fit_value(&data, ValueFitConfig::stationary()).unwrap();
        assert!(model.ridged);
        assert!((model.value(&state(vec![1.0], 1)) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn text_round_trip_preserves_the_model() {
        let mut rng = substream(12, 0, 0);
        let data: Vec<(State, f64)> = (0..30)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                (state(vec![x], 2), 0.3 * x - x * x)
            })
            .collect();
        let model = fit_value(&data, ValueFitConfig::with_horizon(5)).unwrap();
        let restored = ValueModel::from_text(&model.to_text()).unwrap();
        let probe = state(vec![0.33], 4);
        assert_eq!(model.value(&probe), restored.value(&probe));
        assert_eq!(model.mse, restored.mse);
    }
}
