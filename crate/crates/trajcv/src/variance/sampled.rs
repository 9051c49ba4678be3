//! Nested Monte Carlo estimates of the variance components, with jackknife
//! standard errors, and the policy-noise scan built on them.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::env::{Action, Environment, State, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, Policy};
use crate::rng::{substream, Stream};

use super::{component_at_root, ComponentErrors, EstimatorKind, VarianceComponents};

/// Roll the policy forward to step `t`; `None` when the episode ends first.
fn roll_in(
    env: &dyn Environment,
    policy: &dyn Policy,
    t: usize,
    rng: &mut Stream,
) -> Result<Option<State>> {
    let mut s = env.reset(rng);
    while s.time_index < t {
        let a = policy.sample(&s, rng);
        let (next, _, done) = env.step(&s, &a, rng)?;
        if done {
            return Ok(None);
        }
        s = next;
    }
    Ok(Some(s))
}

/// Simulate from `(s_t, a_t)` to the end of the episode, recording the
/// suffix as a trajectory (whose first component is the step-`t` one).
fn suffix_rollout(
    env: &dyn Environment,
    policy: &dyn Policy,
    s0: &State,
    a0: &Action,
    rng: &mut Stream,
) -> Result<Trajectory> {
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut costs = Vec::new();
    let mut scores = Vec::new();
    let mut s = s0.clone();
    let mut forced = Some(a0.clone());
    loop {
        if !s.is_finite() {
            return Err(Error::Numeric {
                step: s.time_index,
                message: "non-finite state during suffix rollout".into(),
            });
        }
        let a = match forced.take() {
            Some(a) => a,
            None => policy.sample(&s, rng),
        };
        let n = policy.score(&s, &a)?;
        let (next, cost, done) = env.step(&s, &a, rng)?;
        states.push(s);
        actions.push(a);
        costs.push(cost);
        scores.push(n);
        if done {
            break;
        }
        s = next;
    }
    Ok(Trajectory {
        states,
        actions,
        costs,
        scores,
    })
}

struct OuterStats {
    z: DVector<f64>,
    w2: f64,
    a2: f64,
}

/// Unbiased trace of the sample covariance of `vecs` (n−1 denominator).
fn trace_sample_var(vecs: &[DVector<f64>]) -> f64 {
    let n = vecs.len();
    let dim = vecs[0].len();
    let mut mean = DVector::zeros(dim);
    for v in vecs {
        mean += v;
    }
    mean /= n as f64;
    vecs.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / (n as f64 - 1.0)
}

/// Nested Monte Carlo decomposition of `Tr Var[G̃_t]`.
///
/// Samples `n_outer` roll-ins to `S_t`, `n_mid` actions per state, and
/// `n_inner` futures per action; composes unbiased variance estimators at
/// each level with the plug-in bias corrections. Roll-ins that terminate
/// before `t` are discarded; it is an error if none survive.
#[allow(clippy::too_many_arguments)]
pub fn decompose_sampled(
    env: &dyn Environment,
    policy: &dyn Policy,
    estimator: &EstimatorKind<'_>,
    t: usize,
    n_outer: usize,
    n_mid: usize,
    n_inner: usize,
    seed: u64,
) -> Result<VarianceComponents> {
    if t == 0 || t > env.horizon() {
        return Err(Error::invalid(format!(
            "step {t} outside horizon {}",
            env.horizon()
        )));
    }
    if n_outer < 4 {
        return Err(Error::invalid("nested decomposition needs n_outer >= 4"));
    }
    if n_mid < 2 || n_inner < 2 {
        return Err(Error::invalid(
            "unbiased nested variance estimates need n_mid >= 2 and n_inner >= 2",
        ));
    }

    let per_outer: Vec<Option<OuterStats>> = (0..n_outer)
        .into_par_iter()
        .map(|i| -> Result<Option<OuterStats>> {
            let mut rng = substream(seed, i as u64, 0);
            let Some(s_t) = roll_in(env, policy, t, &mut rng)? else {
                return Ok(None);
            };
            let mut y = Vec::with_capacity(n_mid);
            let mut tr_inner = Vec::with_capacity(n_mid);
            for j in 0..n_mid {
                let mut rng_a = substream(seed, i as u64, 1 + j as u64);
                let a_t = policy.sample(&s_t, &mut rng_a);
                let mut g = Vec::with_capacity(n_inner);
                for k in 0..n_inner {
                    let mut rng_f = substream(
                        seed,
                        i as u64,
                        1 + n_mid as u64 + (j * n_inner + k) as u64,
                    );
                    let traj = suffix_rollout(env, policy, &s_t, &a_t, &mut rng_f)?;
                    g.push(component_at_root(estimator, &traj)?);
                }
                tr_inner.push(trace_sample_var(&g));
                let dim = g[0].len();
                let mut mean = DVector::zeros(dim);
                for v in &g {
                    mean += v;
                }
                y.push(mean / n_inner as f64);
            }
            let w2 = tr_inner.iter().sum::<f64>() / n_mid as f64;
            let b2 = trace_sample_var(&y);
            let a2 = b2 - w2 / n_inner as f64;
            let dim = y[0].len();
            let mut z = DVector::zeros(dim);
            for v in &y {
                z += v;
            }
            z /= n_mid as f64;
            Ok(Some(OuterStats { z, w2, a2 }))
        })
        .collect::<Result<Vec<_>>>()?;

    let stats: Vec<OuterStats> = per_outer.into_iter().flatten().collect();
    let n = stats.len();
    if n < 4 {
        return Err(Error::Estimation(format!(
            "only {n} of {n_outer} roll-ins reached step {t}; cannot decompose"
        )));
    }

    let compose = |w2_mean: f64, a2_mean: f64, t2: f64| -> (f64, f64, f64) {
        let v_future = w2_mean;
        let v_action = a2_mean;
        let v_state = t2 - (v_action + v_future / n_inner as f64) / n_mid as f64;
        (v_state, v_action, v_future)
    };

    let zs: Vec<DVector<f64>> = stats.iter().map(|s| s.z.clone()).collect();
    let w2_mean = stats.iter().map(|s| s.w2).sum::<f64>() / n as f64;
    let a2_mean = stats.iter().map(|s| s.a2).sum::<f64>() / n as f64;
    let (v_state, v_action, v_future) = compose(w2_mean, a2_mean, trace_sample_var(&zs));

    // Jackknife over the outer index.
    let mut loo = Vec::with_capacity(n);
    for drop in 0..n {
        let kept: Vec<DVector<f64>> = zs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop)
            .map(|(_, z)| z.clone())
            .collect();
        let w2 = (w2_mean * n as f64 - stats[drop].w2) / (n as f64 - 1.0);
        let a2 = (a2_mean * n as f64 - stats[drop].a2) / (n as f64 - 1.0);
        loo.push(compose(w2, a2, trace_sample_var(&kept)));
    }
    let jack = |pick: &dyn Fn(&(f64, f64, f64)) -> f64| -> f64 {
        let mean = loo.iter().map(pick).sum::<f64>() / n as f64;
        let ss = loo
            .iter()
            .map(|v| (pick(v) - mean) * (pick(v) - mean))
            .sum::<f64>();
        ((n as f64 - 1.0) / n as f64 * ss).sqrt()
    };

    Ok(VarianceComponents {
        v_state,
        v_action,
        v_future,
        fine: None,
        se: Some(ComponentErrors {
            se_state: jack(&|v| v.0),
            se_action: jack(&|v| v.1),
            se_future: jack(&|v| v.2),
        }),
    })
}

/// One row of a policy-noise scan.
#[derive(Debug, Clone)]
pub struct ScanRow {
    pub sigma: f64,
    pub components: VarianceComponents,
}

/// A scan of the vanilla component's variance split across policy noise
/// scales, with log-log slopes of each component against σ.
#[derive(Debug, Clone)]
pub struct SigmaScan {
    pub t: usize,
    pub rows: Vec<ScanRow>,
    pub slope_state: f64,
    pub slope_action: f64,
    pub slope_future: f64,
}

/// Sampled decomposition of the vanilla gradient component at `t` for each
/// noise scale in `sigmas` (positive, descending).
#[allow(clippy::too_many_arguments)]
pub fn sigma_scan(
    env: &dyn Environment,
    policy_template: &GaussianPolicy,
    sigmas: &[f64],
    t: usize,
    n_outer: usize,
    n_mid: usize,
    n_inner: usize,
    seed: u64,
) -> Result<SigmaScan> {
    if sigmas.is_empty() {
        return Err(Error::invalid("empty noise-scale list"));
    }
    for pair in sigmas.windows(2) {
        if pair[1] >= pair[0] {
            return Err(Error::invalid("noise scales must be strictly descending"));
        }
    }
    if sigmas.iter().any(|s| *s <= 0.0) {
        return Err(Error::invalid("noise scales must be positive"));
    }

    let mut rows = Vec::with_capacity(sigmas.len());
    for (idx, &sigma) in sigmas.iter().enumerate() {
        let policy = GaussianPolicy::new(
            policy_template.theta().clone(),
            sigma,
            *policy_template.features(),
        )?;
        use rand::Rng;
        let row_seed: u64 = substream(seed, idx as u64, 0xD5).random();
        let components = decompose_sampled(
            env,
            &policy,
            &EstimatorKind::Vanilla,
            t,
            n_outer,
            n_mid,
            n_inner,
            row_seed,
        )?;
        rows.push(ScanRow { sigma, components });
    }

    let slope = |pick: &dyn Fn(&VarianceComponents) -> f64| -> f64 {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.sigma.ln(), pick(&r.components).max(1e-300).ln()))
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };

    Ok(SigmaScan {
        t,
        rows: rows.clone(),
        slope_state: slope(&|c| c.v_state),
        slope_action: slope(&|c| c.v_action),
        slope_future: slope(&|c| c.v_future),
    })
}
