//! AOPC for a fixed ordering, and the comprehensiveness / sufficiency scores
//! derived from an attribution vector.

use std::cmp::Ordering;

use crate::cache::{evaluate_masked_many, EvalCache};
use crate::error::{Error, Result};
use crate::types::{AttributionVector, FeatureOrdering, Instance, PerturbationCurve, RemovedSet};
use crate::value::ValueFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankDirection {
    #[default]
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    AscendingIndex,
}

/// How attribution scores are turned into a perturbation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RankPolicy {
    pub direction: RankDirection,
    pub tie_break: TieBreak,
}

impl RankPolicy {
    pub const DECREASING: Self = Self {
        direction: RankDirection::Decreasing,
        tie_break: TieBreak::AscendingIndex,
    };
    pub const INCREASING: Self = Self {
        direction: RankDirection::Increasing,
        tie_break: TieBreak::AscendingIndex,
    };
}

/// Orders features by score; equal scores keep ascending feature order.
///
/// `0.0` and `-0.0` are treated as equal.
pub fn rank(e: &AttributionVector, policy: RankPolicy) -> FeatureOrdering {
    let scores = e.scores();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // scores are finite, so partial_cmp never fails
    let by_score = |a: &usize, b: &usize| scores[*a].partial_cmp(&scores[*b]).unwrap_or(Ordering::Equal);
    match (policy.direction, policy.tie_break) {
        (RankDirection::Decreasing, TieBreak::AscendingIndex) => {
            order.sort_by(|a, b| by_score(b, a).then(a.cmp(b)))
        }
        (RankDirection::Increasing, TieBreak::AscendingIndex) => {
            order.sort_by(|a, b| by_score(a, b).then(a.cmp(b)))
        }
    }
    FeatureOrdering::from_vec_unchecked(order)
}

/// Mean output drop as the features in `r` are removed cumulatively.
///
/// Issues exactly `N + 1` distinct subset queries: the empty set and the
/// `N` prefixes of `r`.
pub fn aopc(
    v: &dyn ValueFunction,
    x: &Instance,
    r: &FeatureOrdering,
    cache: &EvalCache,
) -> Result<(f64, PerturbationCurve)> {
    let n = x.feature_count();
    if r.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: r.len(),
        });
    }
    let mut sets = Vec::with_capacity(n + 1);
    sets.push(RemovedSet::empty());
    sets.extend(r.prefixes());
    let outputs = evaluate_masked_many(v, x, &sets, cache)?;
    let base = outputs[0];
    let drops: Vec<f64> = outputs[1..].iter().map(|o| base - o).collect();
    // same left fold as the limit searches: a witness ordering reproduces its
    // limit bit for bit, and no ordering escapes the exact limits by rounding
    let score = drops.iter().fold(0.0, |acc, d| acc + d) / n as f64;
    Ok((
        score,
        PerturbationCurve {
            drops,
            ordering: r.clone(),
            base_output: base,
        },
    ))
}

/// AOPC with features removed from the highest score down. Higher is better.
pub fn comprehensiveness(
    v: &dyn ValueFunction,
    x: &Instance,
    e: &AttributionVector,
    cache: &EvalCache,
) -> Result<f64> {
    scored(v, x, e, RankPolicy::DECREASING, cache)
}

/// AOPC with features removed from the lowest score up. Lower is better.
pub fn sufficiency(
    v: &dyn ValueFunction,
    x: &Instance,
    e: &AttributionVector,
    cache: &EvalCache,
) -> Result<f64> {
    scored(v, x, e, RankPolicy::INCREASING, cache)
}

fn scored(
    v: &dyn ValueFunction,
    x: &Instance,
    e: &AttributionVector,
    policy: RankPolicy,
    cache: &EvalCache,
) -> Result<f64> {
    if e.len() != x.feature_count() {
        return Err(Error::LengthMismatch {
            expected: x.feature_count(),
            got: e.len(),
        });
    }
    Ok(aopc(v, x, &rank(e, policy), cache)?.0)
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut compensation = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}
