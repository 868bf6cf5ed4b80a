//! Reference oracles that share no code paths with the library's searches:
//! everything here works from permutations enumerated directly and calls
//! `ValueFunction::evaluate` without a cache.

#![allow(dead_code)]

use naopc::toy::{GateToyModel, RandomSetFunction};
use naopc::{Instance, RemovedSet, ValueFunction};

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut all = vec![current.clone()];
    // next lexicographic permutation
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return all;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        all.push(current.clone());
    }
}

/// `(1/N) Σ_i [f(x) − f(x with order[..=i] removed)]`, evaluated directly.
pub fn direct_aopc(v: &dyn ValueFunction, x: &Instance, order: &[usize]) -> f64 {
    let base = v.evaluate(x, &RemovedSet::empty()).unwrap();
    let mut removed = RemovedSet::empty();
    let mut total = 0.0;
    for &j in order {
        removed.insert(j);
        total += base - v.evaluate(x, &removed).unwrap();
    }
    total / order.len() as f64
}

/// Minimum and maximum AOPC over every ordering.
pub fn brute_force_limits(v: &dyn ValueFunction, x: &Instance) -> (f64, f64) {
    permutations(x.feature_count())
        .iter()
        .map(|p| direct_aopc(v, x, p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)))
}

/// Shapley values of the kept-coalition game `w(K) = f(x with N∖K removed)`,
/// as the mean marginal contribution over all arrival orders.
pub fn permutation_shapley(v: &dyn ValueFunction, x: &Instance) -> Vec<f64> {
    let n = x.feature_count();
    let worth = |kept: &[bool]| {
        let removed = RemovedSet::from_indices((0..n).filter(|&i| !kept[i]));
        v.evaluate(x, &removed).unwrap()
    };
    let perms = permutations(n);
    let mut phi = vec![0.0; n];
    for p in &perms {
        let mut kept = vec![false; n];
        let mut before = worth(&kept);
        for &i in p {
            kept[i] = true;
            let after = worth(&kept);
            phi[i] += after - before;
            before = after;
        }
    }
    phi.iter().map(|s| s / perms.len() as f64).collect()
}

/// A random set function or gate circuit, alternating by `k`.
pub fn synthetic_model(k: u64, n: usize) -> (Box<dyn ValueFunction>, Instance) {
    if k.is_multiple_of(2) {
        let f = RandomSetFunction::new(n, k).unwrap();
        let x = f.instance(&format!("rand-{k}"));
        (Box::new(f), x)
    } else {
        let f = GateToyModel::random(n, k).unwrap();
        let x = Instance::with_values(format!("gates-{k}"), &vec![1.0; n]).unwrap();
        (Box::new(f), x)
    }
}

/// Feature counts 4..=8 cycling with `k`.
pub fn feature_count_for(k: u64) -> usize {
    4 + (k % 5) as usize
}
