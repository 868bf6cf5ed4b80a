//! Memoized value-function evaluation.
//!
//! Every search routine funnels its queries through an [`EvalCache`], so a
//! subset is sent to the model at most once per cache (unless an LRU capacity
//! evicts it). One cache must only ever be used with one value function.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;
use rayon::prelude::*;

use crate::error::{EvaluationError, EvaluationFailure, ValueError};
use crate::types::{Instance, RemovedSet, SubsetKey};
use crate::value::{Concurrency, ValueFunction};

type CacheKey = (Arc<str>, SubsetKey);

/// Queries per rayon task when a value function admits parallel calls.
const PARALLEL_CHUNK: usize = 64;

/// One in this many fresh evaluations is repeated when determinism checks are on.
const DETERMINISM_SAMPLE: u64 = 100;

enum Store {
    Unbounded(HashMap<CacheKey, f64>),
    Bounded(LruCache<CacheKey, f64>),
}

impl Store {
    fn get(&mut self, key: &CacheKey) -> Option<f64> {
        match self {
            Store::Unbounded(map) => map.get(key).copied(),
            Store::Bounded(lru) => lru.get(key).copied(),
        }
    }

    fn insert(&mut self, key: CacheKey, value: f64) {
        match self {
            Store::Unbounded(map) => {
                map.insert(key, value);
            }
            Store::Bounded(lru) => {
                lru.put(key, value);
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Store::Unbounded(map) => map.len(),
            Store::Bounded(lru) => lru.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

pub struct EvalCache {
    store: Mutex<Store>,
    hits: AtomicU64,
    misses: AtomicU64,
    check_determinism: bool,
}

impl Default for EvalCache {
    fn default() -> Self {
        Self::new()
    }
}

impl EvalCache {
    /// Unbounded cache. Determinism spot checks are on in debug builds.
    pub fn new() -> Self {
        Self::with_store(Store::Unbounded(HashMap::new()))
    }

    /// Cache that keeps at most `capacity` entries, evicting least recently used.
    pub fn with_capacity(capacity: NonZeroUsize) -> Self {
        Self::with_store(Store::Bounded(LruCache::new(capacity)))
    }

    fn with_store(store: Store) -> Self {
        Self {
            store: Mutex::new(store),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            check_determinism: cfg!(debug_assertions),
        }
    }

    pub fn with_determinism_check(mut self, enabled: bool) -> Self {
        self.check_determinism = enabled;
        self
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.store.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Evaluates `v` on `x` with the features in `removed` perturbed.
pub fn evaluate_masked(
    v: &dyn ValueFunction,
    x: &Instance,
    removed: &RemovedSet,
    cache: &EvalCache,
) -> Result<f64, EvaluationError> {
    let values = evaluate_masked_many(v, x, std::slice::from_ref(removed), cache)?;
    Ok(values[0])
}

/// Evaluates many subsets of one instance, sending only cache misses to the
/// value function (deduplicated, batched, and in parallel when allowed).
///
/// Output is index-aligned with `sets`. On failure the error refers to the
/// first failing subset in `sets` order.
pub fn evaluate_masked_many(
    v: &dyn ValueFunction,
    x: &Instance,
    sets: &[RemovedSet],
    cache: &EvalCache,
) -> Result<Vec<f64>, EvaluationError> {
    let n = x.feature_count();
    let fail = |set: &RemovedSet, failure: EvaluationFailure| EvaluationError {
        instance_id: x.id().to_string(),
        removed: set.clone(),
        failure,
    };
    for set in sets {
        if let Some(index) = set.max_index().filter(|&i| i >= n) {
            return Err(fail(set, EvaluationFailure::InvalidSubset { index: index + 1, n }));
        }
    }

    let keys: Vec<CacheKey> = sets
        .iter()
        .map(|s| (x.shared_id().clone(), s.key(n)))
        .collect();
    let mut out = vec![f64::NAN; sets.len()];
    // position in `sets` of each distinct missing key, and where its
    // duplicates should be copied
    let mut miss_first: Vec<usize> = Vec::new();
    let mut miss_slot: HashMap<&CacheKey, usize> = HashMap::new();
    let mut pending: Vec<(usize, usize)> = Vec::new();
    {
        let mut store = cache.store.lock();
        let mut hits = 0;
        for (i, key) in keys.iter().enumerate() {
            if let Some(value) = store.get(key) {
                out[i] = value;
                hits += 1;
            } else if let Some(&slot) = miss_slot.get(key) {
                pending.push((i, slot));
                hits += 1;
            } else {
                miss_slot.insert(key, miss_first.len());
                miss_first.push(i);
            }
        }
        cache.hits.fetch_add(hits, Ordering::Relaxed);
    }
    if miss_first.is_empty() {
        return Ok(out);
    }
    cache
        .misses
        .fetch_add(miss_first.len() as u64, Ordering::Relaxed);

    let to_eval: Vec<RemovedSet> = miss_first.iter().map(|&i| sets[i].clone()).collect();
    let results: Vec<Result<f64, ValueError>> =
        if v.concurrency() == Concurrency::Parallel && to_eval.len() > 1 {
            to_eval
                .par_chunks(PARALLEL_CHUNK)
                .flat_map_iter(|chunk| v.evaluate_batch(x, chunk))
                .collect()
        } else {
            v.evaluate_batch(x, &to_eval)
        };
    if results.len() != to_eval.len() {
        return Err(fail(
            &to_eval[0],
            EvaluationFailure::Value(ValueError::Other(format!(
                "value function answered {} of {} queries",
                results.len(),
                to_eval.len()
            ))),
        ));
    }

    let mut fresh = Vec::with_capacity(results.len());
    for (slot, result) in results.into_iter().enumerate() {
        let set = &to_eval[slot];
        let value = match result {
            Ok(value) if value.is_finite() => value,
            Ok(value) => return Err(fail(set, ValueError::NonFinite(value).into())),
            Err(e) => return Err(fail(set, e.into())),
        };
        let key = &keys[miss_first[slot]];
        if cache.check_determinism && sampled(key) {
            let again = v.evaluate(x, set).map_err(|e| fail(set, e.into()))?;
            if again.to_bits() != value.to_bits() {
                return Err(fail(
                    set,
                    EvaluationFailure::NonDeterministic {
                        first: value,
                        second: again,
                    },
                ));
            }
        }
        fresh.push(value);
    }

    {
        let mut store = cache.store.lock();
        for (slot, &value) in fresh.iter().enumerate() {
            let i = miss_first[slot];
            out[i] = value;
            store.insert(keys[i].clone(), value);
        }
    }
    for (i, slot) in pending {
        out[i] = fresh[slot];
    }
    Ok(out)
}

fn sampled(key: &CacheKey) -> bool {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    h.finish().is_multiple_of(DETERMINISM_SAMPLE)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::AtomicUsize;

    use super::*;
    use crate::value::FnValue;

    fn x4() -> Instance {
        Instance::with_values("x", &[1.0; 4]).unwrap()
    }

    #[test]
    fn second_call_is_served_from_cache() {
        let calls = AtomicUsize::new(0);
        let v = FnValue::new("count", |_, s: &RemovedSet| {
            calls.fetch_add(1, Ordering::SeqCst);
            s.len() as f64
        });
        let cache = EvalCache::new().with_determinism_check(false);
        let s = RemovedSet::from_indices([1, 3]);
        let a = evaluate_masked(&v, &x4(), &s, &cache).unwrap();
        let b = evaluate_masked(&v, &x4(), &RemovedSet::from_indices([3, 1]), &cache).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 1 });
    }

    #[test]
    fn duplicates_in_one_request_are_evaluated_once() {
        let calls = AtomicUsize::new(0);
        let v = FnValue::new("count", |_, s: &RemovedSet| {
            calls.fetch_add(1, Ordering::SeqCst);
            s.len() as f64
        });
        let cache = EvalCache::new().with_determinism_check(false);
        let sets = vec![
            RemovedSet::from_indices([0]),
            RemovedSet::from_indices([0, 1]),
            RemovedSet::from_indices([0]),
        ];
        let out = evaluate_masked_many(&v, &x4(), &sets, &cache).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 1.0]);
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 2 });
    }

    #[test]
    fn out_of_range_subset_is_rejected() {
        let v = FnValue::new("zero", |_, _: &RemovedSet| 0.0);
        let err = evaluate_masked(&v, &x4(), &RemovedSet::from_indices([4]), &EvalCache::new())
            .unwrap_err();
        assert_eq!(err.failure, EvaluationFailure::InvalidSubset { index: 5, n: 4 });
    }

    struct Failing;
    impl ValueFunction for Failing {
        fn evaluate(&self, _: &Instance, s: &RemovedSet) -> Result<f64, ValueError> {
            if s.contains(2) {
                Err(ValueError::Server("unreachable".into()))
            } else {
                Ok(0.5)
            }
        }
        fn description(&self) -> String {
            "failing".into()
        }
    }

    #[test]
    fn failure_carries_offending_subset() {
        let sets = vec![
            RemovedSet::from_indices([0]),
            RemovedSet::from_indices([0, 2]),
            RemovedSet::from_indices([2]),
        ];
        let err = evaluate_masked_many(&Failing, &x4(), &sets, &EvalCache::new()).unwrap_err();
        assert_eq!(err.removed, sets[1]);
        assert_eq!(err.instance_id, "x");
        assert!(err.to_string().contains("{1, 3}"));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let v = FnValue::new("nan", |_, _: &RemovedSet| f64::NAN);
        let err = evaluate_masked(&v, &x4(), &RemovedSet::empty(), &EvalCache::new()).unwrap_err();
        assert!(matches!(
            err.failure,
            EvaluationFailure::Value(ValueError::NonFinite(_))
        ));
    }

    #[test]
    fn nondeterminism_is_detected() {
        let counter = AtomicUsize::new(0);
        let v = FnValue::new("drifting", |_, _: &RemovedSet| {
            counter.fetch_add(1, Ordering::SeqCst) as f64
        });
        let x = Instance::new("wide", 20, crate::types::Payload::None).unwrap();
        let sets: Vec<RemovedSet> = (0..1u64 << 12).map(RemovedSet::from_mask).collect();
        let cache = EvalCache::new().with_determinism_check(true);
        let err = evaluate_masked_many(&v, &x, &sets, &cache).unwrap_err();
        assert!(matches!(err.failure, EvaluationFailure::NonDeterministic { .. }));
    }

    #[test]
    fn bounded_cache_evicts_but_stays_transparent() {
        let v = FnValue::new("len", |_, s: &RemovedSet| s.len() as f64 * 0.1);
        let bounded = EvalCache::with_capacity(NonZeroUsize::new(3).unwrap());
        let x = x4();
        for round in 0..3 {
            for mask in 0..16u64 {
                let s = RemovedSet::from_mask(mask);
                let got = evaluate_masked(&v, &x, &s, &bounded).unwrap();
                assert_eq!(got, s.len() as f64 * 0.1, "round {round}");
            }
        }
        assert_eq!(bounded.len(), 3);
    }
}
