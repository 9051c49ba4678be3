//! Exact law-of-total-variance decomposition along an ordered chain of
//! finite random variables.

use std::sync::Arc;

use crate::error::{Error, Result};

/// One finite variable with a conditional distribution given every earlier
/// outcome in the chain.
#[derive(Clone)]
pub struct ChainVariable {
    pub support: usize,
    /// `dist(prefix)` is the distribution of this variable given the
    /// outcomes of all earlier variables.
    pub dist: Arc<dyn Fn(&[usize]) -> Vec<f64> + Sync + Send>,
}

impl ChainVariable {
    /// A variable independent of everything before it.
    pub fn independent(probs: Vec<f64>) -> Self {
        let support = probs.len();
        ChainVariable {
            support,
            dist: Arc::new(move |_| probs.clone()),
        }
    }
}

/// An ordered list of finite variables plus a target function of all of
/// them.
#[derive(Clone)]
pub struct ChainSpec {
    pub variables: Vec<ChainVariable>,
    pub target: Arc<dyn Fn(&[usize]) -> f64 + Sync + Send>,
}

/// Per-variable terms `E Var E` of the repeated law of total variance along
/// the chain order. The terms sum to `Var[f]` exactly.
pub fn chain_decompose(chain: &ChainSpec) -> Result<Vec<f64>> {
    if chain.variables.is_empty() {
        return Err(Error::invalid("empty chain"));
    }
    let mut terms = vec![0.0; chain.variables.len()];
    let mut prefix = Vec::with_capacity(chain.variables.len());
    recurse(chain, &mut prefix, 1.0, &mut terms)?;
    Ok(terms)
}

/// Returns `E[f | prefix]`, accumulating `P(prefix) · Var_{next | prefix}`
/// of the child conditional means into the level term.
fn recurse(
    chain: &ChainSpec,
    prefix: &mut Vec<usize>,
    prob: f64,
    terms: &mut [f64],
) -> Result<f64> {
    let level = prefix.len();
    if level == chain.variables.len() {
        return Ok((chain.target)(prefix));
    }
    let dist = (chain.variables[level].dist)(prefix);
    if dist.len() != chain.variables[level].support {
        return Err(Error::invalid("conditional has the wrong support size"));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 || dist.iter().any(|p| *p < 0.0) {
        return Err(Error::invalid(format!(
            "conditional at level {level} is not normalized (sum {total})"
        )));
    }

    let mut means = Vec::with_capacity(dist.len());
    let mut own_mean = 0.0;
    for (x, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            means.push(0.0);
            continue;
        }
        prefix.push(x);
        let child = recurse(chain, prefix, prob * p, terms)?;
        prefix.pop();
        means.push(child);
        own_mean += p * child;
    }
    let var: f64 = dist
        .iter()
        .zip(&means)
        .filter(|(p, _)| **p > 0.0)
        .map(|(&p, &m)| p * (m - own_mean) * (m - own_mean))
        .sum();
    terms[level] += prob * var;
    Ok(own_mean)
}
