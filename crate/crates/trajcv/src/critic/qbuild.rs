//! Q-function approximators assembled from the value model, the dynamics
//! model, and the known cost.

use nalgebra::DVector;

use crate::env::{ActionCost, State};
use crate::error::{Error, Result};
use crate::policy::{CenterSensitivity, GaussianPolicy, QuadraticQ};

use super::{DynamicsModel, ValueModel};

/// Which Q approximator to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QVariant {
    /// `c(s,a) + v̂(d̂(s,a))`; general scalar, evaluated by Monte Carlo.
    Dyn,
    /// First-order expansion of the next-state value around the policy mean.
    Next,
    /// `Next` plus the Gauss-Newton curvature of the value pushforward.
    NextGn,
    /// Expansion of the one-step change around the current value.
    Diff,
    /// `Diff` plus the Gauss-Newton curvature term.
    DiffGn,
}

impl QVariant {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "dyn" => Ok(QVariant::Dyn),
            "next" => Ok(QVariant::Next),
            "next-gn" | "next_gn" => Ok(QVariant::NextGn),
            "diff" => Ok(QVariant::Diff),
            "diff-gn" | "diff_gn" => Ok(QVariant::DiffGn),
            other => Err(Error::Config(format!("unknown q variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            QVariant::Dyn => "dyn",
            QVariant::Next => "next",
            QVariant::NextGn => "next-gn",
            QVariant::Diff => "diff",
            QVariant::DiffGn => "diff-gn",
        }
    }
}

/// `q̂(s, a) = c(s, a) + v̂(d̂(s, a))`, with the terminal convention that the
/// value of any state past the horizon is zero.
pub fn q_dyn(
    v: &ValueModel,
    d: &DynamicsModel,
    cost: &dyn ActionCost,
    s: &State,
    a: &DVector<f64>,
    horizon: usize,
) -> f64 {
    let c = cost.cost(s, a);
    if s.time_index >= horizon {
        return c;
    }
    let next = State::new(d.predict(s, a), s.time_index + 1);
    c + v.value(&next)
}

/// Build the quadratic-in-action approximator for `variant`, expanded around
/// the policy mean `m = μ_θ(s)`. Also returns the sensitivity of the
/// coefficients to the expansion center for the full chain-rule gradient
/// mode.
pub fn build_quadratic_q(
    variant: QVariant,
    v: &ValueModel,
    d: &DynamicsModel,
    cost: &dyn ActionCost,
    s: &State,
    policy: &GaussianPolicy,
    horizon: usize,
) -> Result<(QuadraticQ, CenterSensitivity)> {
    let m = policy.mean(s);
    let d_a = m.len();

    if matches!(variant, QVariant::Dyn) {
        return Err(Error::unsupported(
            "the dyn approximator is not quadratic in the action; evaluate it by Monte Carlo",
        ));
    }
    if matches!(variant, QVariant::Next | QVariant::NextGn) && !cost.quadratic_in_action() {
        return Err(Error::unsupported(format!(
            "variant {} requires a cost that is quadratic in the action",
            variant.name()
        )));
    }

    let c0 = cost.cost(s, &m);
    let c1 = cost.cost_action_gradient(s, &m);
    let c2 = cost.cost_action_hessian(s, &m);

    // Next-state value data at s' = d̂(s, m); all zero past the horizon.
    let terminal = s.time_index >= horizon;
    let (v_next, dv_next, jac) = if terminal {
        (
            0.0,
            DVector::zeros(d.state_dim()),
            nalgebra::DMatrix::zeros(d.state_dim(), d_a),
        )
    } else {
        let next = State::new(d.predict(s, &m), s.time_index + 1);
        (v.value(&next), v.gradient(&next), d.action_jacobian(s, &m))
    };
    // Value gradient and curvature pulled back through the dynamics.
    let pullback = jac.transpose() * &dv_next;
    let gauss_newton = if terminal {
        nalgebra::DMatrix::zeros(d_a, d_a)
    } else {
        jac.transpose() * v.hessian() * &jac
    };

    let (q0, g, mut h, dq0_dm) = match variant {
        QVariant::Next => (c0 + v_next, &c1 + &pullback, c2, &c1 + &pullback),
        QVariant::NextGn => (
            c0 + v_next,
            &c1 + &pullback,
            &c2 + &gauss_newton,
            &c1 + &pullback,
        ),
        QVariant::Diff => (v.value(s), &c1 + &pullback, c2, DVector::zeros(d_a)),
        QVariant::DiffGn => (
            v.value(s),
            &c1 + &pullback,
            &c2 + &gauss_newton,
            DVector::zeros(d_a),
        ),
        QVariant::Dyn => unreachable!(),
    };

    // Clean up round-off asymmetry before the symmetry check.
    h = (&h + h.transpose()) * 0.5;

    let quad = QuadraticQ::new(q0, g, h, m)?;
    let sensitivity = CenterSensitivity {
        dq0_dm,
        dtrace_h_dm: DVector::zeros(d_a),
    };
    Ok((quad, sensitivity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{fit_dynamics, ValueFitConfig};
    use crate::env::{Lqg, LqgConfig};
    use crate::policy::FeatureMap;
    use crate::rng::substream;
    use nalgebra::DMatrix;
    use rand::Rng;

    /// Quadratic value `v(x) = xᵀ P x + pᵀ x + r`.
    #[derive(Clone)]
    struct QuadValue {
        p: DMatrix<f64>,
        lin: DVector<f64>,
        cst: f64,
    }

    impl QuadValue {
        fn zero(d: usize) -> Self {
            QuadValue {
                p: DMatrix::zeros(d, d),
                lin: DVector::zeros(d),
                cst: 0.0,
            }
        }

        fn eval(&self, x: &DVector<f64>) -> f64 {
            x.dot(&(&self.p * x)) + self.lin.dot(x) + self.cst
        }

        fn to_model(&self) -> ValueModel {
            ValueModel::from_coefficients(
                self.cst,
                self.lin.clone(),
                &self.p + self.p.transpose(),
                self.p.nrows(),
                ValueFitConfig::stationary(),
            )
            .unwrap()
        }
    }

    /// Exact finite-horizon policy evaluation for an LQG under the linear
    /// Gaussian policy `a = K s + k0 + noise(σ I)`: one backward step of
    /// `v_t(s) = E[c(s, a) + v_{t+1}(A s + B a + w)]`.
    fn backward_value(cfg: &LqgConfig, k: &DMatrix<f64>, k0: &DVector<f64>, sigma: f64, next: &QuadValue) -> QuadValue {
        let m = &cfg.a + &cfg.b * k; // closed-loop state matrix
        let b_k0 = &cfg.b * k0;
        let p = &cfg.q_cost
            + k.transpose() * &cfg.r_cost * k
            + m.transpose() * &next.p * &m;
        let lin = 2.0 * k.transpose() * &cfg.r_cost * k0
            + m.transpose() * (&next.p + next.p.transpose()) * &b_k0
            + m.transpose() * &next.lin;
        let bbt = &cfg.b * cfg.b.transpose();
        let cst = k0.dot(&(&cfg.r_cost * k0))
            + sigma * cfg.r_cost.trace()
            + b_k0.dot(&(&next.p * &b_k0))
            + (next.p.clone() * (&bbt * sigma + &cfg.w)).trace()
            + next.lin.dot(&b_k0)
            + next.cst;
        QuadValue { p, lin, cst }
    }

    fn noiseless_lqg(h: usize) -> LqgConfig {
        let mut cfg = LqgConfig::quadratic(h);
        cfg.w = DMatrix::zeros(2, 2);
        cfg
    }

    fn linear_policy(k_row: &[f64], k0: f64, sigma: f64) -> GaussianPolicy {
        // Affine features (s, 1): theta = [K | k0].
        let theta = DMatrix::from_row_slice(1, 3, &[k_row[0], k_row[1], k0]);
        GaussianPolicy::new(theta, sigma, FeatureMap::affine()).unwrap()
    }

    fn exact_dynamics(cfg: &LqgConfig) -> DynamicsModel {
        DynamicsModel::from_coefficients(cfg.a.clone(), cfg.b.clone(), DVector::zeros(2)).unwrap()
    }

    #[test]
    fn zero_value_reduces_q_dyn_to_the_cost() {
        let cfg = noiseless_lqg(6);
        let env = Lqg::new(cfg.clone()).unwrap();
        let v = ValueModel::zero(2, ValueFitConfig::stationary());
        let d = exact_dynamics(&cfg);
        let s = State::new(DVector::from_vec(vec![0.5, -0.3]), 2);
        let a = DVector::from_vec(vec![0.4]);
        let q = q_dyn(&v, &d, &env, &s, &a, 6);
        assert!((q - ActionCost::cost(&env, &s, &a)).abs() < 1e-14);
    }

    #[test]
    fn q_dyn_matches_exact_policy_evaluation() {
        // Noiseless LQG, exact value of the policy at t+1, exact dynamics:
        // the one-step backup reproduces the exact Q.
        let h = 6;
        let cfg = noiseless_lqg(h);
        let env = Lqg::new(cfg.clone()).unwrap();
        let k = DMatrix::from_row_slice(1, 2, &[-0.2, -0.5]);
        let k0 = DVector::from_vec(vec![0.1]);
        let sigma = 0.3;

        // Values v_t for t = h+1 .. target.
        let t = 3usize;
        let mut v = QuadValue::zero(2);
        for _ in (t + 1..=h).rev() {
            v = backward_value(&cfg, &k, &k0, sigma, &v);
        }
        // v now holds v_{t+1}.
        let model = v.to_model();
        let d = exact_dynamics(&cfg);

        let mut rng = substream(70, 0, 0);
        for _ in 0..20 {
            let s = State::new(
                DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                t,
            );
            let a = DVector::from_vec(vec![rng.random_range(-1.0..1.0)]);
            let q_hat = q_dyn(&model, &d, &env, &s, &a, h);
            // Independent route: c(s,a) + v_{t+1}(As + Ba), no process noise.
            let next = &cfg.a * &s.values + &cfg.b * &a;
            let q_exact = ActionCost::cost(&env, &s, &a) + v.eval(&next);
            assert!((q_hat - q_exact).abs() < 1e-8, "{q_hat} vs {q_exact}");
        }
    }

    #[test]
    fn all_variants_evaluate_to_q0_at_the_mean() {
        let cfg = noiseless_lqg(6);
        let env = Lqg::new(cfg.clone()).unwrap();
        let policy = linear_policy(&[-0.3, 0.2], 0.05, 0.4);
        let v = QuadValue {
            p: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.7]),
            lin: DVector::from_vec(vec![0.2, -0.4]),
            cst: 1.1,
        }
        .to_model();
        let d = exact_dynamics(&cfg);
        let s = State::new(DVector::from_vec(vec![0.6, -0.2]), 2);
        let m = policy.mean(&s);

        for variant in [QVariant::Next, QVariant::NextGn, QVariant::Diff, QVariant::DiffGn] {
            let (q, _) = build_quadratic_q(variant, &v, &d, &env, &s, &policy, 6).unwrap();
            assert!((q.eval(&m) - q.q0).abs() < 1e-12);
            match variant {
                QVariant::Next | QVariant::NextGn => {
                    let next = State::new(d.predict(&s, &m), 3);
                    let expect = ActionCost::cost(&env, &s, &m) + v.value(&next);
                    assert!((q.q0 - expect).abs() < 1e-12);
                }
                QVariant::Diff | QVariant::DiffGn => {
                    assert!((q.q0 - v.value(&s)).abs() < 1e-12);
                }
                QVariant::Dyn => unreachable!(),
            }
        }
    }

    #[test]
    fn quadratic_models_reproduce_their_defining_formula() {
        // Direct evaluation of each variant's defining expression at random
        // actions must match the packed quadratic exactly.
        let cfg = noiseless_lqg(6);
        let env = Lqg::new(cfg.clone()).unwrap();
        let policy = linear_policy(&[0.4, -0.1], -0.2, 0.2);
        let vq = QuadValue {
            p: DMatrix::from_row_slice(2, 2, &[0.3, -0.2, -0.2, 0.9]),
            lin: DVector::from_vec(vec![-0.1, 0.6]),
            cst: 0.4,
        };
        let v = vq.to_model();
        let d = exact_dynamics(&cfg);
        let s = State::new(DVector::from_vec(vec![-0.4, 0.7]), 2);
        let m = policy.mean(&s);
        let s_next = d.predict(&s, &m);
        let next_state = State::new(s_next.clone(), 3);
        let jac = d.action_jacobian(&s, &m);
        let dv = v.gradient(&next_state);
        let hv = v.hessian();

        let mut rng = substream(71, 0, 0);
        for _ in 0..100 {
            let a = DVector::from_vec(vec![rng.random_range(-2.0..2.0)]);
            let da = &a - &m;
            let c_at_a = ActionCost::cost(&env, &s, &a);
            let lin_v = (jac.transpose() * &dv).dot(&da);
            let gn = 0.5 * da.dot(&(jac.transpose() * &hv * &jac * &da));

            let direct = [
                (QVariant::Next, c_at_a + v.value(&next_state) + lin_v),
                (QVariant::NextGn, c_at_a + v.value(&next_state) + lin_v + gn),
                (
                    QVariant::Diff,
                    v.value(&s)
                        + (env.cost_action_gradient(&s, &m) + jac.transpose() * &dv).dot(&da)
                        + 0.5 * da.dot(&(env.cost_action_hessian(&s, &m) * &da)),
                ),
                (
                    QVariant::DiffGn,
                    v.value(&s)
                        + (env.cost_action_gradient(&s, &m) + jac.transpose() * &dv).dot(&da)
                        + 0.5 * da.dot(&(env.cost_action_hessian(&s, &m) * &da))
                        + gn,
                ),
            ];
            for (variant, expect) in direct {
                let (q, _) = build_quadratic_q(variant, &v, &d, &env, &s, &policy, 6).unwrap();
                assert!(
                    (q.eval(&a) - expect).abs() < 1e-10,
                    "variant {} at a = {}",
                    variant.name(),
                    a[0]
                );
            }
        }
    }

    #[test]
    fn gn_hessian_difference_is_exactly_the_pullback_curvature() {
        let cfg = noiseless_lqg(6);
        let env = Lqg::new(cfg.clone()).unwrap();
        let policy = linear_policy(&[0.4, -0.1], 0.0, 0.2);
        let v = QuadValue {
            p: DMatrix::from_row_slice(2, 2, &[0.3, -0.2, -0.2, 0.9]),
            lin: DVector::zeros(2),
            cst: 0.0,
        }
        .to_model();
        let d = exact_dynamics(&cfg);
        let s = State::new(DVector::from_vec(vec![0.1, 0.2]), 2);
        let m = policy.mean(&s);
        let jac = d.action_jacobian(&s, &m);

        let (qd, _) = build_quadratic_q(QVariant::Diff, &v, &d, &env, &s, &policy, 6).unwrap();
        let (qg, _) = build_quadratic_q(QVariant::DiffGn, &v, &d, &env, &s, &policy, 6).unwrap();
        let gap = &qg.h - &qd.h;
        let gn = jac.transpose() * v.hessian() * &jac;
        assert!((gap - gn).amax() < 1e-14);
    }

    #[test]
    fn next_gn_recovers_q_dyn_for_linear_dynamics_and_quadratic_value() {
        let cfg = noiseless_lqg(6);
        let env = Lqg::new(cfg.clone()).unwrap();
        let policy = linear_policy(&[-0.25, 0.15], 0.1, 0.5);
        let v = QuadValue {
            p: DMatrix::from_row_slice(2, 2, &[0.8, 0.05, 0.05, 0.4]),
            lin: DVector::from_vec(vec![0.3, -0.2]),
            cst: -0.7,
        }
        .to_model();
        let d = exact_dynamics(&cfg);
        let s = State::new(DVector::from_vec(vec![0.9, -0.6]), 2);
        let (q, _) = build_quadratic_q(QVariant::NextGn, &v, &d, &env, &s, &policy, 6).unwrap();
        let mut rng = substream(72, 0, 0);
        for _ in 0..50 {
            let a = DVector::from_vec(vec![rng.random_range(-3.0..3.0)]);
            let expect = q_dyn(&v, &d, &env, &s, &a, 6);
            assert!((q.eval(&a) - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn first_order_agreement_with_q_dyn_decays_quadratically() {
        // Use the stationary value of the deterministic mean policy (the
        // Lyapunov fixed point v(s) = c(s, Ks) + v(Ms)), so every variant
        // matches q_dyn at a = m and the residual is pure curvature.
        let h = 1000; // large horizon: the builder never hits the terminal guard
        let cfg = noiseless_lqg(h);
        let env = Lqg::new(cfg.clone()).unwrap();
        let k = DMatrix::from_row_slice(1, 2, &[-0.2, -0.4]);
        let policy = linear_policy(&[-0.2, -0.4], 0.0, 0.3);
        let d = exact_dynamics(&cfg);

        let closed_loop = &cfg.a + &cfg.b * &k;
        let mut p = DMatrix::zeros(2, 2);
        for _ in 0..800 {
            p = &cfg.q_cost + k.transpose() * &cfg.r_cost * &k
                + closed_loop.transpose() * &p * &closed_loop;
        }
        let v = QuadValue {
            p,
            lin: DVector::zeros(2),
            cst: 0.0,
        };
        let model = v.to_model();

        let s = State::new(DVector::from_vec(vec![0.7, -0.5]), 3);
        let m = policy.mean(&s);
        // Fixed-point property at this state.
        let bellman_gap = v.eval(&s.values)
            - (ActionCost::cost(&env, &s, &m) + v.eval(&d.predict(&s, &m)));
        assert!(bellman_gap.abs() < 1e-9, "fixed point violated: {bellman_gap}");

        for (variant, expect_exact) in [
            (QVariant::Next, false),
            (QVariant::Diff, false),
            (QVariant::NextGn, true),
            (QVariant::DiffGn, true),
        ] {
            let (q, _) = build_quadratic_q(variant, &model, &d, &env, &s, &policy, h).unwrap();
            let err = |scale: f64| -> f64 {
                let a = &m + DVector::from_vec(vec![scale]);
                (q.eval(&a) - q_dyn(&model, &d, &env, &s, &a, h)).abs()
            };
            if expect_exact {
                assert!(err(0.8) < 1e-9 && err(0.1) < 1e-9, "{}", variant.name());
            } else {
                let e1 = err(0.8);
                let e2 = err(0.4);
                let e3 = err(0.2);
                let r1 = e1 / e2.max(1e-300);
                let r2 = e2 / e3.max(1e-300);
                assert!(
                    r1 > 3.5 && r1 < 4.5 && r2 > 3.5 && r2 < 4.5,
                    "variant {}: ratios {r1}, {r2}",
                    variant.name()
                );
            }
        }
    }

    #[test]
    fn dyn_variant_is_rejected_by_the_builder() {
        let cfg = noiseless_lqg(4);
        let env = Lqg::new(cfg.clone()).unwrap();
        let policy = linear_policy(&[0.0, 0.0], 0.0, 1.0);
        let v = ValueModel::zero(2, ValueFitConfig::stationary());
        let d = exact_dynamics(&cfg);
        let s = State::new(DVector::zeros(2), 1);
        let err = build_quadratic_q(QVariant::Dyn, &v, &d, &env, &s, &policy, 4).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn non_quadratic_costs_reject_the_next_variants() {
        struct CubicCost;
        impl ActionCost for CubicCost {
            fn cost(&self, _s: &State, a: &DVector<f64>) -> f64 {
                a[0].powi(3)
            }
            fn cost_action_gradient(&self, _s: &State, a: &DVector<f64>) -> DVector<f64> {
                DVector::from_vec(vec![3.0 * a[0] * a[0]])
            }
            fn cost_action_hessian(&self, _s: &State, a: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_vec(1, 1, vec![6.0 * a[0]])
            }
            fn quadratic_in_action(&self) -> bool {
                false
            }
        }
        let cfg = noiseless_lqg(4);
        let policy = linear_policy(&[0.0, 0.0], 0.0, 1.0);
        let v = ValueModel::zero(2, ValueFitConfig::stationary());
        let d = exact_dynamics(&cfg);
        let s = State::new(DVector::zeros(2), 1);
        for variant in [QVariant::Next, QVariant::NextGn] {
            let err =
                build_quadratic_q(variant, &v, &d, &CubicCost, &s, &policy, 4).unwrap_err();
            assert!(matches!(err, Error::Unsupported(_)));
        }
        // diff accepts non-quadratic costs.
        assert!(build_quadratic_q(QVariant::Diff, &v, &d, &CubicCost, &s, &policy, 4).is_ok());
    }

    #[test]
    fn dynamics_fit_then_build_round_trip() {
        // End-to-end: fit d̂ from noiseless rollouts, then the builder's
        // next-gn model matches the dyn backup everywhere.
        let cfg = noiseless_lqg(5);
        let env = Lqg::new(cfg.clone()).unwrap();
        let policy = linear_policy(&[0.1, -0.3], 0.0, 0.8);
        let mut data = Vec::new();
        for i in 0..30 {
            let traj =
                crate::env::rollout(&env, &policy, &mut substream(73, 0, i)).unwrap();
            for t in 0..traj.len() - 1 {
                data.push((
                    traj.states[t].clone(),
                    traj.actions[t].clone(),
                    traj.states[t + 1].clone(),
                ));
            }
        }
        let d = fit_dynamics(&data).unwrap();
        let v = QuadValue {
            p: DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.2]),
            lin: DVector::from_vec(vec![0.1, 0.1]),
            cst: 0.0,
        }
        .to_model();
        let s = State::new(DVector::from_vec(vec![0.2, 0.3]), 2);
        let (q, _) = build_quadratic_q(QVariant::NextGn, &v, &d, &env, &s, &policy, 5).unwrap();
        let mut rng = substream(74, 0, 0);
        for _ in 0..20 {
            let a = DVector::from_vec(vec![rng.random_range(-1.0..1.0)]);
            assert!((q.eval(&a) - q_dyn(&v, &d, &env, &s, &a, 5)).abs() < 1e-6);
        }
    }
}

