//! Black-box attribution baselines: single-feature occlusion, brute-force
//! Shapley values, and seeded random scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::{evaluate_masked_many, EvalCache};
use crate::error::{Error, Result};
use crate::types::{AttributionVector, Instance, RemovedSet};
use crate::value::ValueFunction;

/// Feature cap for [`exact_shapley`], which evaluates all `2^N` subsets.
pub const SHAPLEY_MAX_FEATURES: usize = 16;

/// `e_i = f(x) − f(p(x, {i}))`.
pub fn occlusion1(v: &dyn ValueFunction, x: &Instance, cache: &EvalCache) -> Result<AttributionVector> {
    let n = x.feature_count();
    let mut sets = vec![RemovedSet::empty()];
    sets.extend((0..n).map(|i| RemovedSet::from_indices([i])));
    let out = evaluate_masked_many(v, x, &sets, cache)?;
    AttributionVector::new(out[1..].iter().map(|o| out[0] - o).collect())
}

/// Shapley values of the game whose coalitions are the *kept* features:
/// `w(K) = f(p(x, N \ K))`.
///
/// Efficiency holds: the values sum to `f(x) − f(p(x, all))`.
pub fn exact_shapley(v: &dyn ValueFunction, x: &Instance, cache: &EvalCache) -> Result<AttributionVector> {
    let n = x.feature_count();
    if n > SHAPLEY_MAX_FEATURES {
        return Err(Error::FeatureCountExceedsExactCap {
            n,
            cap: SHAPLEY_MAX_FEATURES,
        });
    }
    let full = (1u64 << n) - 1;
    // index by kept mask
    let sets: Vec<RemovedSet> = (0..=full).map(|kept| RemovedSet::from_mask(full ^ kept)).collect();
    let worth = evaluate_masked_many(v, x, &sets, cache)?;

    // phi_i = mean over coalition sizes k of the mean marginal contribution
    // of i to coalitions of size k
    let mut binom = vec![1u64; n];
    for k in 1..n {
        binom[k] = binom[k - 1] * (n - k) as u64 / k as u64;
    }
    let mut phi = vec![0.0_f64; n];
    let mut by_size = vec![0.0_f64; n];
    for (i, value) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        by_size.iter_mut().for_each(|s| *s = 0.0);
        for kept in (0..=full).filter(|k| k & bit == 0) {
            by_size[kept.count_ones() as usize] += worth[(kept | bit) as usize] - worth[kept as usize];
        }
        let total: f64 = by_size.iter().zip(&binom).map(|(s, &c)| s / c as f64).sum();
        *value = total / n as f64;
    }
    AttributionVector::new(phi)
}

/// Scores drawn uniformly from `[-1, 1]`, fixed by `seed`.
pub fn random_attribution(n: usize, seed: u64) -> Result<AttributionVector> {
    if n == 0 {
        return Err(Error::InvalidFeatureCount(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AttributionVector::new((0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{ones_instance, reference_instance, BuiltinModel, LinearToyModel};
    use crate::value::{ConstantValue, FnValue};

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn occlusion_examples() {
        let x = reference_instance();
        let e = occlusion1(&BuiltinModel::F1.model(), &x, &EvalCache::new()).unwrap();
        assert_close(e.scores(), &[0.2, 0.3, 0.1, 0.4], 1e-12);
        let e = occlusion1(&BuiltinModel::F3.model(), &x, &EvalCache::new()).unwrap();
        assert_eq!(e.scores(), &[0.0; 4]);
        let e = occlusion1(&ConstantValue(0.3), &x, &EvalCache::new()).unwrap();
        assert_eq!(e.scores(), &[0.0; 4]);
    }

    #[test]
    fn shapley_examples() {
        let x = reference_instance();
        let e = exact_shapley(&BuiltinModel::F3.model(), &x, &EvalCache::new()).unwrap();
        assert_close(e.scores(), &[0.35, 0.35, 0.15, 0.15], 1e-12);
        let e = exact_shapley(&BuiltinModel::F1.model(), &x, &EvalCache::new()).unwrap();
        assert_close(e.scores(), &[0.2, 0.3, 0.1, 0.4], 1e-12);

        let single = ones_instance("one", 1);
        let v = FnValue::new("one", |_, s: &RemovedSet| if s.is_empty() { 0.8 } else { 0.25 });
        let e = exact_shapley(&v, &single, &EvalCache::new()).unwrap();
        assert_eq!(e.scores(), &[0.8 - 0.25]);
    }

    #[test]
    fn dyadic_linear_model_is_bit_exact() {
        let m = LinearToyModel::new(vec![0.5, 0.25, 0.125, 1.0, 0.0625]).unwrap();
        let x = ones_instance("d", 5);
        let truth = m.ground_truth_attribution(&x).unwrap();
        assert_eq!(occlusion1(&m, &x, &EvalCache::new()).unwrap(), truth);
        assert_eq!(exact_shapley(&m, &x, &EvalCache::new()).unwrap(), truth);
    }

    #[test]
    fn shapley_cap() {
        let x = ones_instance("w", 17);
        assert!(matches!(
            exact_shapley(&ConstantValue(0.0), &x, &EvalCache::new()),
            Err(Error::FeatureCountExceedsExactCap { n: 17, cap: 16 })
        ));
    }

    #[test]
    fn random_attribution_is_seeded() {
        let a = random_attribution(4, 9).unwrap();
        assert_eq!(a, random_attribution(4, 9).unwrap());
        assert_ne!(a, random_attribution(4, 10).unwrap());
        assert!(a.scores().iter().all(|s| (-1.0..=1.0).contains(s)));
        assert!(matches!(random_attribution(0, 1), Err(Error::InvalidFeatureCount(0))));
    }
}
