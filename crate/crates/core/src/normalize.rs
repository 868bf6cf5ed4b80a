//! Min-max normalization of AOPC-family scores by their limits.
//!
//! The lower limit maps to 0 and the upper limit to 1. Scores normalized by
//! beam limits can land outside `[0, 1]`; they are reported as-is and flagged
//! through [`NormalizedScore::out_of_range`], never clamped.

use crate::cache::EvalCache;
use crate::curve::{comprehensiveness, sufficiency};
use crate::error::{Error, Result};
use crate::types::{AopcLimits, AttributionVector, Instance};
use crate::value::ValueFunction;

/// Limits closer together than this make the normalized score undefined.
pub const DEGENERACY_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScore {
    pub value: f64,
    pub raw: f64,
    pub limits: AopcLimits,
}

impl NormalizedScore {
    pub fn out_of_range(&self) -> bool {
        !(0.0..=1.0).contains(&self.value)
    }

    /// `lower + value · (upper − lower)`.
    pub fn reconstruct_raw(&self) -> f64 {
        self.limits.lower + self.value * self.limits.span()
    }
}

pub fn normalize(raw: f64, limits: &AopcLimits) -> Result<NormalizedScore> {
    let span = limits.upper - limits.lower;
    if span.is_nan() || span <= DEGENERACY_EPSILON {
        return Err(Error::DegenerateLimits {
            lower: limits.lower,
            upper: limits.upper,
        });
    }
    Ok(NormalizedScore {
        value: (raw - limits.lower) / span,
        raw,
        limits: limits.clone(),
    })
}

/// Comprehensiveness normalized by `limits`, which must belong to the same
/// `(v, x)`.
pub fn naopc_comprehensiveness(
    v: &dyn ValueFunction,
    x: &Instance,
    e: &AttributionVector,
    limits: &AopcLimits,
    cache: &EvalCache,
) -> Result<NormalizedScore> {
    normalize(comprehensiveness(v, x, e, cache)?, limits)
}

pub fn naopc_sufficiency(
    v: &dyn ValueFunction,
    x: &Instance,
    e: &AttributionVector,
    limits: &AopcLimits,
    cache: &EvalCache,
) -> Result<NormalizedScore> {
    normalize(sufficiency(v, x, e, cache)?, limits)
}

/// How per-example normalized scores are combined into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Normalize each example by its own limits, then average.
    #[default]
    PerExampleMean,
}

impl Aggregation {
    pub fn label(self) -> &'static str {
        match self {
            Aggregation::PerExampleMean => "per-example-normalized-mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateScore {
    pub mean: f64,
    pub count: usize,
    pub out_of_range: usize,
    pub aggregation: Aggregation,
}

/// Mean of per-example normalized scores; `None` for an empty slice.
pub fn aggregate(scores: &[NormalizedScore]) -> Option<AggregateScore> {
    if scores.is_empty() {
        return None;
    }
    let sum = crate::curve::compensated_sum(scores.iter().map(|s| s.value));
    Some(AggregateScore {
        mean: sum / scores.len() as f64,
        count: scores.len(),
        out_of_range: scores.iter().filter(|s| s.out_of_range()).count(),
        aggregation: Aggregation::PerExampleMean,
    })
}
