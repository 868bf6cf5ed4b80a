//! Domain types shared by every search and scoring routine.
//!
//! Feature indices are stored 0-based. The `*_one_based` constructors and
//! accessors are the conversion boundary used by file formats and the CLI,
//! and `Display` impls print 1-based indices.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Opaque data handed through to the value function unchanged.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    None,
    /// Real feature values, e.g. bit assignments for the toy models.
    Values(Arc<[f64]>),
    /// Token ids for externally hosted models.
    Tokens(Arc<[i64]>),
    Text(Arc<str>),
}

/// One model input with `feature_count` perturbable features.
///
/// The id is the instance's identity inside an [`EvalCache`](crate::EvalCache)
/// and on the model-server wire, so it must be unique per cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    id: Arc<str>,
    feature_count: usize,
    payload: Payload,
}

impl Instance {
    pub fn new(id: impl Into<Arc<str>>, feature_count: usize, payload: Payload) -> Result<Self> {
        if feature_count == 0 {
            return Err(Error::InvalidFeatureCount(0));
        }
        match &payload {
            Payload::Values(v) if v.len() != feature_count => {
                return Err(Error::LengthMismatch {
                    expected: feature_count,
                    got: v.len(),
                })
            }
            _ => {}
        }
        Ok(Self {
            id: id.into(),
            feature_count,
            payload,
        })
    }

    /// Instance whose payload is the given feature values.
    pub fn with_values(id: impl Into<Arc<str>>, values: &[f64]) -> Result<Self> {
        Self::new(id, values.len(), Payload::Values(values.into()))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub(crate) fn shared_id(&self) -> &Arc<str> {
        &self.id
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.payload {
            Payload::Values(v) => Some(v),
            _ => None,
        }
    }
}

/// Set of removed (perturbed) features, stored as a bitset.
///
/// Trailing zero words are trimmed so that equal sets compare and hash equal
/// no matter how they were built.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RemovedSet {
    words: Vec<u64>,
}

impl RemovedSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set from 0-based indices.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut set = Self::empty();
        for i in indices {
            set.insert(i);
        }
        set
    }

    /// Builds a set from 1-based indices, validating them against `n`.
    pub fn from_one_based(indices: &[usize], n: usize) -> Result<Self> {
        let mut set = Self::empty();
        for &i in indices {
            if i == 0 || i > n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            set.insert(i - 1);
        }
        Ok(set)
    }

    pub fn from_mask(mask: u64) -> Self {
        let mut set = Self { words: vec![mask] };
        set.trim();
        set
    }

    /// All features `0..n` removed.
    pub fn full(n: usize) -> Self {
        Self::from_indices(0..n)
    }

    pub fn insert(&mut self, index: usize) {
        let (w, b) = (index / 64, index % 64);
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << b;
    }

    pub fn with(&self, index: usize) -> Self {
        let mut next = self.clone();
        next.insert(index);
        next
    }

    pub fn contains(&self, index: usize) -> bool {
        self.words
            .get(index / 64)
            .is_some_and(|w| w & (1 << (index % 64)) != 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Ascending 0-based members.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            (0..64).filter(move |b| word & (1 << b) != 0).map(move |b| w * 64 + b)
        })
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.iter().map(|i| i + 1).collect()
    }

    /// Largest member, if any.
    pub fn max_index(&self) -> Option<usize> {
        let last = self.words.last()?;
        Some((self.words.len() - 1) * 64 + 63 - last.leading_zeros() as usize)
    }

    /// The set as a single-word mask, when every member is below 64.
    pub fn as_mask(&self) -> Option<u64> {
        match self.words.len() {
            0 => Some(0),
            1 => Some(self.words[0]),
            _ => None,
        }
    }

    /// Canonical cache key for this set within an instance of `n` features.
    pub fn key(&self, n: usize) -> SubsetKey {
        subset_key(self, n)
    }

    fn trim(&mut self) {
        while self.words.last() == Some(&0) {
            self.words.pop();
        }
    }
}

impl fmt::Display for RemovedSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for RemovedSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RemovedSet{self}")
    }
}

/// Canonical, order-independent identity of a removed set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubsetKey {
    /// Bitmask form, used whenever the instance has at most 64 features.
    Dense(u64),
    /// Sorted 0-based member list for wider instances.
    Sparse(Box<[u32]>),
}

pub const DENSE_KEY_WIDTH: usize = 64;

pub fn subset_key(set: &RemovedSet, n: usize) -> SubsetKey {
    match set.as_mask() {
        Some(mask) if n <= DENSE_KEY_WIDTH => SubsetKey::Dense(mask),
        _ => SubsetKey::Sparse(set.iter().map(|i| i as u32).collect()),
    }
}

/// A permutation of the feature indices: the order features are perturbed in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureOrdering(Vec<usize>);

impl FeatureOrdering {
    /// Validates that `order` (0-based) is a permutation of `0..order.len()`.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        if n == 0 {
            return Err(Error::InvalidFeatureCount(0));
        }
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n {
                return Err(Error::InvalidOrdering {
                    n,
                    reason: format!("index {} out of range", i + 1),
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidOrdering {
                    n,
                    reason: format!("index {} repeated", i + 1),
                });
            }
        }
        Ok(Self(order))
    }

    pub fn from_one_based(order: &[usize]) -> Result<Self> {
        let n = order.len();
        if let Some(&bad) = order.iter().find(|&&i| i == 0 || i > n) {
            return Err(Error::InvalidOrdering {
                n,
                reason: format!("index {bad} out of range"),
            });
        }
        Self::new(order.iter().map(|i| i - 1).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub(crate) fn from_vec_unchecked(order: Vec<usize>) -> Self {
        debug_assert!(Self::new(order.clone()).is_ok());
        Self(order)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.iter().rev().copied().collect())
    }

    /// Removed sets for every prefix `r[..=i]`, `i = 0..N`.
    pub fn prefixes(&self) -> Vec<RemovedSet> {
        let mut acc = RemovedSet::empty();
        self.0
            .iter()
            .map(|&i| {
                acc.insert(i);
                acc.clone()
            })
            .collect()
    }
}

impl fmt::Display for FeatureOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.to_one_based())
    }
}

/// Per-feature attribution scores, index-aligned with the features.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionVector(Vec<f64>);

impl AttributionVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidFeatureCount(0));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore { feature: i + 1 });
        }
        Ok(Self(scores))
    }

    /// Checks the vector against an instance's feature count.
    pub fn for_instance(scores: Vec<f64>, instance: &Instance) -> Result<Self> {
        if scores.len() != instance.feature_count() {
            return Err(Error::LengthMismatch {
                expected: instance.feature_count(),
                got: scores.len(),
            });
        }
        Self::new(scores)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// The per-step output drops behind one AOPC score.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCurve {
    /// `drops[i] = f(x) - f(p(x, r[..=i]))`.
    pub drops: Vec<f64>,
    pub ordering: FeatureOrdering,
    pub base_output: f64,
}

impl PerturbationCurve {
    /// Model output after each perturbation step.
    pub fn outputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.drops.iter().map(move |d| self.base_output - d)
    }

    pub fn mean_drop(&self) -> f64 {
        self.drops.iter().fold(0.0, |acc, d| acc + d) / self.drops.len() as f64
    }
}

/// How a pair of AOPC limits was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitMethod {
    Exact,
    Beam(usize),
}

impl LimitMethod {
    pub fn is_exact(self) -> bool {
        matches!(self, LimitMethod::Exact)
    }

    pub fn beam_size(self) -> Option<usize> {
        match self {
            LimitMethod::Exact => None,
            LimitMethod::Beam(b) => Some(b),
        }
    }
}

impl fmt::Display for LimitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LimitMethod::Exact => write!(f, "exact"),
            LimitMethod::Beam(b) => write!(f, "beam({b})"),
        }
    }
}

/// Lowest and highest AOPC reachable for one (model, input) pair, with the
/// orderings that attain them.
#[derive(Debug, Clone, PartialEq)]
pub struct AopcLimits {
    pub lower: f64,
    pub upper: f64,
    pub method: LimitMethod,
    pub arg_lower: FeatureOrdering,
    pub arg_upper: FeatureOrdering,
}

impl AopcLimits {
    pub fn span(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, aopc: f64) -> bool {
        self.lower <= aopc && aopc <= self.upper
    }
}
