//! Ordering-residue enumeration: which law-of-total-variance orderings are
//! feasible when only the policy is known, and how much variance each one
//! leaves after its optimal CVs are subtracted.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;

use crate::env::TabularMdp;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// One position in an ordering: the state at step `k`, or the action
/// randomness consumed at step `k` (one-based absolute steps).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OrderVar {
    StateAt(usize),
    NoiseAt(usize),
}

/// An ordering of the window variables `{S_t..S_h, R_t..R_h}` starting at
/// `S_t`. Feasible means every `R_k` precedes all later states, so its
/// conditional expectation needs only the (known) policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderingSpec {
    pub sequence: Vec<OrderVar>,
    pub feasible: bool,
}

impl OrderingSpec {
    pub fn describe(&self) -> String {
        self.sequence
            .iter()
            .map(|v| match v {
                OrderVar::StateAt(k) => format!("S{k}"),
                OrderVar::NoiseAt(k) => format!("R{k}"),
            })
            .collect::<Vec<_>>()
            .join(">")
    }
}

fn causal(sequence: &[OrderVar], t: usize, h: usize) -> bool {
    let pos = |v: OrderVar| sequence.iter().position(|x| *x == v);
    for k in t..h {
        let Some(rk) = pos(OrderVar::NoiseAt(k)) else {
            return false;
        };
        for j in k + 1..=h {
            match pos(OrderVar::StateAt(j)) {
                Some(sj) if sj < rk => return false,
                Some(_) => {}
                None => return false,
            }
        }
    }
    true
}

/// The interleaved ordering `S_t, R_t, S_{t+1}, R_{t+1}, ...`.
pub fn natural_ordering(t: usize, h: usize) -> OrderingSpec {
    let mut sequence = Vec::with_capacity(2 * (h - t + 1));
    for k in t..=h {
        sequence.push(OrderVar::StateAt(k));
        sequence.push(OrderVar::NoiseAt(k));
    }
    OrderingSpec {
        sequence,
        feasible: true,
    }
}

/// Every permutation of the window variables with `S_t` first, tagged with
/// its feasibility. Window width is capped because of factorial growth.
pub fn enumerate_orderings(t: usize, h: usize) -> Result<Vec<OrderingSpec>> {
    if t == 0 || t > h {
        return Err(Error::invalid("window start must satisfy 1 <= t <= h"));
    }
    let w = h - t + 1;
    if w > 4 {
        return Err(Error::Capacity {
            required: (1..=(2 * w - 1) as u32).map(f64::from).product(),
            budget: 5040.0,
        });
    }
    let mut rest = Vec::new();
    for k in t..=h {
        if k > t {
            rest.push(OrderVar::StateAt(k));
        }
        rest.push(OrderVar::NoiseAt(k));
    }

    let mut out = Vec::new();
    permute(&mut rest, 0, &mut |perm| {
        let mut sequence = Vec::with_capacity(2 * w);
        sequence.push(OrderVar::StateAt(t));
        sequence.extend_from_slice(perm);
        let feasible = causal(&sequence, t, h);
        out.push(OrderingSpec { sequence, feasible });
    });
    Ok(out)
}

/// Only the feasible orderings.
pub fn feasible_orderings(t: usize, h: usize) -> Result<Vec<OrderingSpec>> {
    Ok(enumerate_orderings(t, h)?
        .into_iter()
        .filter(|o| o.feasible)
        .collect())
}

fn permute(items: &mut Vec<OrderVar>, k: usize, visit: &mut impl FnMut(&[OrderVar])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// A policy reparameterized over a finite uniform noise alphabet:
/// `A = ω(s, R)` with `R` uniform on `{0..n_r-1}`. Every conditional
/// expectation over the window becomes a finite sum.
#[derive(Debug, Clone)]
pub struct FiniteReparamPolicy {
    /// `omega[s][r]` is the chosen action index.
    pub omega: Vec<Vec<usize>>,
    pub n_actions: usize,
}

impl FiniteReparamPolicy {
    pub fn new(omega: Vec<Vec<usize>>, n_actions: usize) -> Result<Self> {
        if omega.is_empty() || omega[0].is_empty() {
            return Err(Error::invalid("empty reparameterization table"));
        }
        let n_r = omega[0].len();
        for row in &omega {
            if row.len() != n_r {
                return Err(Error::invalid("ragged reparameterization table"));
            }
            if row.iter().any(|a| *a >= n_actions) {
                return Err(Error::invalid("action index out of range in table"));
            }
            // Positive probability for every action keeps scores finite.
            for a in 0..n_actions {
                if !row.contains(&a) {
                    return Err(Error::invalid(
                        "every action needs at least one noise value per state",
                    ));
                }
            }
        }
        Ok(FiniteReparamPolicy { omega, n_actions })
    }

    /// Random surjective table; needs `n_r >= n_actions`.
    pub fn random(rng: &mut Stream, n_states: usize, n_actions: usize, n_r: usize) -> Self {
        assert!(n_r >= n_actions);
        let omega = (0..n_states)
            .map(|_| {
                // First a permutation covering all actions, then free picks.
                let mut row: Vec<usize> = (0..n_actions).collect();
                for i in (1..row.len()).rev() {
                    row.swap(i, rng.random_range(0..=i));
                }
                while row.len() < n_r {
                    row.push(rng.random_range(0..n_actions));
                }
                for i in (1..row.len()).rev() {
                    row.swap(i, rng.random_range(0..=i));
                }
                row
            })
            .collect();
        FiniteReparamPolicy::new(omega, n_actions).expect("constructed table is valid")
    }

    pub fn n_states(&self) -> usize {
        self.omega.len()
    }

    pub fn n_r(&self) -> usize {
        self.omega[0].len()
    }

    /// Induced action distribution at a state.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n_actions];
        for &a in &self.omega[s] {
            p[a] += 1.0 / self.n_r() as f64;
        }
        p
    }

    /// Score of the induced categorical policy with respect to per-pair
    /// logits: component `(s', b)` is `1{s'=s} (1{b=a} − π_s(b))`.
    pub fn score(&self, s: usize, a: usize) -> DVector<f64> {
        let p = self.probs(s);
        let mut out = DVector::zeros(self.n_states() * self.n_actions);
        for b in 0..self.n_actions {
            out[s * self.n_actions + b] = if b == a { 1.0 - p[b] } else { -p[b] };
        }
        out
    }

    /// Marginal state distribution at each step (zero-based index).
    pub fn occupancy(&self, mdp: &TabularMdp) -> Vec<Vec<f64>> {
        let mut occ = vec![vec![0.0; mdp.n_states]; mdp.horizon];
        occ[0].copy_from_slice(&mdp.p1);
        for t in 1..mdp.horizon {
            for s in 0..mdp.n_states {
                let ps = occ[t - 1][s];
                if ps == 0.0 {
                    continue;
                }
                for (a, &pa) in self.probs(s).iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    for (s2, &pt) in mdp.transition[s][a].iter().enumerate() {
                        occ[t][s2] += ps * pa * pt;
                    }
                }
            }
        }
        occ
    }
}

/// One atom of the window's joint distribution: variable values in the
/// canonical order `S_t..S_h, R_t..R_h`, its probability, and the gradient
/// component realized on it.
struct Atom {
    states: Vec<usize>,
    noises: Vec<usize>,
    prob: f64,
    g: DVector<f64>,
}

fn enumerate_atoms(
    mdp: &TabularMdp,
    policy: &FiniteReparamPolicy,
    t: usize,
) -> Result<Vec<Atom>> {
    let h = mdp.horizon;
    let rho = policy.occupancy(mdp)[t - 1].clone();
    let w = h - t + 1;
    let atom_bound = (mdp.n_states as f64).powi(w as i32)
        * (policy.n_r() as f64).powi(w as i32);
    if atom_bound > 1e7 {
        return Err(Error::Capacity {
            required: atom_bound,
            budget: 1e7,
        });
    }

    let mut atoms = Vec::new();
    let mut states = Vec::with_capacity(w);
    let mut noises = Vec::with_capacity(w);

    fn go(
        mdp: &TabularMdp,
        policy: &FiniteReparamPolicy,
        t: usize,
        time: usize,
        s: usize,
        prob: f64,
        cost_so_far: f64,
        states: &mut Vec<usize>,
        noises: &mut Vec<usize>,
        atoms: &mut Vec<Atom>,
    ) {
        states.push(s);
        let p_r = 1.0 / policy.n_r() as f64;
        for r in 0..policy.n_r() {
            noises.push(r);
            let a = policy.omega[s][r];
            let cost = cost_so_far + mdp.cost[s][a];
            if time == mdp.horizon {
                // Component of the first window step: N_t C_{t:h}.
                let n_t = policy.score(states[0], policy.omega[states[0]][noises[0]]);
                atoms.push(Atom {
                    states: states.clone(),
                    noises: noises.clone(),
                    prob: prob * p_r,
                    g: n_t * cost,
                });
            } else {
                for (s2, &pt) in mdp.transition[s][a].iter().enumerate() {
                    if pt > 0.0 {
                        go(
                            mdp,
                            policy,
                            t,
                            time + 1,
                            s2,
                            prob * p_r * pt,
                            cost,
                            states,
                            noises,
                            atoms,
                        );
                    }
                }
            }
            noises.pop();
        }
        states.pop();
    }

    for (s, &ps) in rho.iter().enumerate() {
        if ps > 0.0 {
            go(mdp, policy, t, t, s, ps, 0.0, &mut states, &mut noises, &mut atoms);
        }
    }
    let _ = &atoms; // atoms carry the full joint; callers group them
    Ok(atoms)
}

fn atom_value(atom: &Atom, var: OrderVar, t: usize) -> usize {
    match var {
        OrderVar::StateAt(k) => atom.states[k - t],
        OrderVar::NoiseAt(k) => atom.noises[k - t],
    }
}

/// Residue of an ordering: the variance of the step-`t` component left
/// after subtracting the optimal CV at every position whose conditional
/// expectation the policy alone can supply. What remains is exactly the sum
/// of the decomposition terms at state positions inside the window.
pub fn ordering_residue(
    mdp: &TabularMdp,
    policy: &FiniteReparamPolicy,
    ordering: &OrderingSpec,
    t: usize,
) -> Result<f64> {
    let h = mdp.horizon;
    if t == 0 || t > h {
        return Err(Error::invalid("window start must satisfy 1 <= t <= h"));
    }
    let w = h - t + 1;
    if ordering.sequence.len() != 2 * w || ordering.sequence[0] != OrderVar::StateAt(t) {
        return Err(Error::invalid(
            "ordering must cover the window and start at its first state",
        ));
    }
    for k in t..=h {
        if !ordering.sequence.contains(&OrderVar::StateAt(k))
            || !ordering.sequence.contains(&OrderVar::NoiseAt(k))
        {
            return Err(Error::invalid("ordering is missing a window variable"));
        }
    }
    if !ordering.feasible || !causal(&ordering.sequence, t, h) {
        return Err(Error::invalid(
            "infeasible ordering: its optimal CV would need the unknown dynamics",
        ));
    }

    let atoms = enumerate_atoms(mdp, policy, t)?;
    let dim = policy.n_states() * policy.n_actions;

    // Conditional means keyed by the value prefix of the ordering, one map
    // per prefix length (0 = global mean).
    let mut level_means: Vec<BTreeMap<Vec<usize>, (f64, DVector<f64>)>> = Vec::new();
    for len in 0..=ordering.sequence.len() {
        let mut map: BTreeMap<Vec<usize>, (f64, DVector<f64>)> = BTreeMap::new();
        for atom in &atoms {
            let key: Vec<usize> = ordering.sequence[..len]
                .iter()
                .map(|v| atom_value(atom, *v, t))
                .collect();
            let entry = map
                .entry(key)
                .or_insert_with(|| (0.0, DVector::zeros(dim)));
            entry.0 += atom.prob;
            entry.1.axpy(atom.prob, &atom.g, 1.0);
        }
        for (_, entry) in map.iter_mut() {
            let p = entry.0;
            entry.1 /= p;
        }
        level_means.push(map);
    }

    // Term at position i: E over prefixes of the scatter of the level-(i+1)
    // conditional means around their level-i parent.
    let mut residue = 0.0;
    for (i, var) in ordering.sequence.iter().enumerate() {
        if i == 0 || matches!(var, OrderVar::NoiseAt(_)) {
            continue;
        }
        let parents = &level_means[i];
        let children = &level_means[i + 1];
        let mut term = 0.0;
        for (key, (p_child, m_child)) in children {
            let parent_key: Vec<usize> = key[..i].to_vec();
            let (_, m_parent) = &parents[&parent_key];
            term += p_child * (m_child - m_parent).norm_squared();
        }
        residue += term;
    }
    Ok(residue)
}
