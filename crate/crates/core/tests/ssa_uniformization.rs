//! Gillespie transition distributions against the exact CTMC solution.
//!
//! Each test network is closed, so its reachable state space is finite.
//! `p(t) = Σ_k Poisson(k; Λt) π₀ Pᵏ` with `P = I + Q/Λ` (uniformization)
//! gives the exact law of `x(t)`; the empirical law of many independent SSA
//! runs must match it in total variation.

use std::collections::{BTreeMap, VecDeque};

use skm_core::gillespie::simulate_interval;
use skm_core::model::{ReactionNetwork, StateVector};
use skm_core::rng::substream;

fn reachable(net: &ReactionNetwork, x0: &[i64]) -> Vec<Vec<i64>> {
    let mut seen = BTreeMap::new();
    let mut queue = VecDeque::from([x0.to_vec()]);
    seen.insert(x0.to_vec(), ());
    while let Some(x) = queue.pop_front() {
        for r in 0..net.reaction_count() {
            if net.hazard(r, &x, 1.0) > 0.0 {
                let next = net.apply_reaction(&StateVector::new(x.clone()), r).unwrap().0;
                if seen.insert(next.clone(), ()).is_none() {
                    queue.push_back(next);
                }
            }
        }
    }
    seen.into_keys().collect()
}

fn exact_law(net: &ReactionNetwork, rates: &[f64], x0: &[i64], t: f64) -> BTreeMap<Vec<i64>, f64> {
    let states = reachable(net, x0);
    let index: BTreeMap<&[i64], usize> = states.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let n = states.len();
    let mut q = vec![vec![0.0; n]; n];
    for (i, x) in states.iter().enumerate() {
        for r in 0..net.reaction_count() {
            let h = net.hazard(r, x, rates[r]);
            if h > 0.0 {
                let y = net.apply_reaction(&StateVector::new(x.clone()), r).unwrap().0;
                q[i][index[y.as_slice()]] += h;
                q[i][i] -= h;
            }
        }
    }
    let lambda = (0..n).map(|i| -q[i][i]).fold(0.0, f64::max) * 1.05;
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = f64::from(i == j) + q[i][j] / lambda;
        }
    }
    let mut pi = vec![0.0; n];
    pi[index[x0]] = 1.0;
    let mut out = vec![0.0; n];
    let mut poisson = (-lambda * t).exp();
    let mut mass = 0.0;
    let mut k = 0usize;
    while 1.0 - mass > 1e-14 && k < 10_000 {
        for j in 0..n {
            out[j] += poisson * pi[j];
        }
        mass += poisson;
        pi = (0..n).map(|j| (0..n).map(|i| pi[i] * p[i][j]).sum()).collect();
        k += 1;
        poisson *= lambda * t / k as f64;
    }
    states.into_iter().zip(out).collect()
}

fn total_variation(net: &ReactionNetwork, rates: &[f64], x0: &[i64], t: f64, runs: u64, seed: u64) -> f64 {
    total_variation_between(net, rates, rates, x0, t, runs, seed)
}

/// TV between the exact law under `exact_rates` and SSA runs under `sim_rates`.
fn total_variation_between(
    net: &ReactionNetwork,
    exact_rates: &[f64],
    rates: &[f64],
    x0: &[i64],
    t: f64,
    runs: u64,
    seed: u64,
) -> f64 {
    let exact = exact_law(net, exact_rates, x0, t);
    assert!((exact.values().sum::<f64>() - 1.0).abs() < 1e-10);
    let mut counts: BTreeMap<Vec<i64>, u64> = BTreeMap::new();
    let start = StateVector::new(x0.to_vec());
    for run in 0..runs {
        let (x, _) = simulate_interval(net, rates, &start, t, &mut substream(seed, &[run])).unwrap();
        assert!(exact.contains_key(&x.0), "SSA left the reachable set: {:?}", x.0);
        *counts.entry(x.0).or_default() += 1;
    }
    let tv: f64 = exact
        .iter()
        .map(|(s, p)| (counts.get(s).copied().unwrap_or(0) as f64 / runs as f64 - p).abs())
        .sum();
    tv / 2.0
}

#[test]
fn dimerisation_matches_uniformization() {
    // 2P -> P2, P2 -> 2P with P + 2 P2 = 10.
    let net = ReactionNetwork::new(
        vec!["P".into(), "P2".into()],
        vec!["dimerise".into(), "dissociate".into()],
        vec![2, 0, 0, 1],
        vec![0, 1, 2, 0],
        vec![],
    )
    .unwrap();
    let tv = total_variation(&net, &[0.15, 0.6], &[10, 0], 1.3, 40_000, 17);
    assert!(tv < 0.02, "TV = {tv}");
    // The comparison has power: a 30% error in one rate is plainly visible.
    let off = total_variation_between(&net, &[0.15, 0.6], &[0.15, 0.78], &[10, 0], 1.3, 40_000, 17);
    assert!(off > 0.05, "TV = {off}");
}

#[test]
fn cyclic_isomerisation_matches_uniformization() {
    // A -> B -> C -> A and a second-order A + B -> 2C, four molecules in total.
    let net = ReactionNetwork::new(
        vec!["A".into(), "B".into(), "C".into()],
        vec!["ab".into(), "bc".into(), "ca".into(), "abc".into()],
        vec![1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0],
        vec![0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 2],
        vec![],
    )
    .unwrap();
    let rates = [0.8, 0.5, 0.3, 0.2];
    let tv = total_variation(&net, &rates, &[4, 0, 0], 0.9, 40_000, 29);
    assert!(tv < 0.02, "TV = {tv}");
    let tv_long = total_variation(&net, &rates, &[2, 1, 1], 3.0, 40_000, 31);
    assert!(tv_long < 0.02, "TV = {tv_long}");
}
