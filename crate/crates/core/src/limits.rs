//! Lower and upper AOPC limits: the extreme AOPC values reachable by any
//! perturbation order for one (model, input) pair.
//!
//! Exhaustive search uses the fact that AOPC only depends on the chain of
//! prefix *sets*: the best score of a set `S` is the best score of some
//! `S \ {j}` plus the drop at `S`. That turns `N!` orderings into `2^N`
//! subset evaluations and `N · 2^N` additions. Beam search grows partial
//! orderings one feature at a time and keeps the best `B` of them per round.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::cache::{evaluate_masked_many, EvalCache};
use crate::error::{Error, Result};
use crate::types::{AopcLimits, FeatureOrdering, Instance, LimitMethod, RemovedSet};
use crate::value::ValueFunction;

/// Default cap on the feature count for exhaustive search.
pub const DEFAULT_EXACT_CAP: usize = 12;

/// Exhaustive search keeps `2^N` scores in memory; no cap may exceed this.
pub const EXACT_HARD_CAP: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitMode {
    Upper,
    Lower,
}

impl LimitMode {
    /// Orders scores so that the better one for this mode comes first.
    fn better_first(self, a: f64, b: f64) -> Ordering {
        match self {
            LimitMode::Upper => b.total_cmp(&a),
            LimitMode::Lower => a.total_cmp(&b),
        }
    }
}

/// Exact limits over all `N!` orderings. Fails when `N` exceeds
/// [`DEFAULT_EXACT_CAP`].
pub fn exhaustive_limits(v: &dyn ValueFunction, x: &Instance, cache: &EvalCache) -> Result<AopcLimits> {
    exhaustive_limits_with_cap(v, x, cache, DEFAULT_EXACT_CAP)
}

pub fn exhaustive_limits_with_cap(
    v: &dyn ValueFunction,
    x: &Instance,
    cache: &EvalCache,
    cap: usize,
) -> Result<AopcLimits> {
    let n = x.feature_count();
    let cap = cap.min(EXACT_HARD_CAP);
    if n > cap {
        return Err(Error::FeatureCountExceedsExactCap { n, cap });
    }
    let full = 1usize << n;
    let sets: Vec<RemovedSet> = (0..full as u64).map(RemovedSet::from_mask).collect();
    let outputs = evaluate_masked_many(v, x, &sets, cache)?;
    let base = outputs[0];

    // best[S] = best prefix-chain score ending in S; last[S] = feature added last
    let mut hi = vec![0.0_f64; full];
    let mut lo = vec![0.0_f64; full];
    let mut hi_last = vec![0u8; full];
    let mut lo_last = vec![0u8; full];
    for set in 1..full {
        let drop = base - outputs[set];
        let (mut best_hi, mut best_lo) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut arg_hi, mut arg_lo) = (0u8, 0u8);
        let mut rest = set;
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let prev = set & !(1 << j);
            if hi[prev] > best_hi {
                best_hi = hi[prev];
                arg_hi = j as u8;
            }
            if lo[prev] < best_lo {
                best_lo = lo[prev];
                arg_lo = j as u8;
            }
        }
        hi[set] = best_hi + drop;
        lo[set] = best_lo + drop;
        hi_last[set] = arg_hi;
        lo_last[set] = arg_lo;
    }

    let witness = |last: &[u8]| {
        let mut order = Vec::with_capacity(n);
        let mut set = full - 1;
        while set != 0 {
            let j = last[set] as usize;
            order.push(j);
            set &= !(1 << j);
        }
        order.reverse();
        FeatureOrdering::from_vec_unchecked(order)
    };
    Ok(AopcLimits {
        lower: lo[full - 1] / n as f64,
        upper: hi[full - 1] / n as f64,
        method: LimitMethod::Exact,
        arg_lower: witness(&lo_last),
        arg_upper: witness(&hi_last),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub mode: LimitMode,
    /// Drop entries that share both prefix set and score with a
    /// lexicographically smaller entry. Their completions are identical.
    pub dedupe: bool,
}

impl BeamConfig {
    pub fn new(beam_size: usize, mode: LimitMode) -> Self {
        Self {
            beam_size,
            mode,
            dedupe: true,
        }
    }
}

/// A partial ordering in the beam with its accumulated drop.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    pub prefix: Vec<usize>,
    pub removed: RemovedSet,
    /// Sum of `f(x) - f(p(x, prefix[..=i]))` over the prefix.
    pub cumulative_drop: f64,
}

/// Beam search for one limit. Returns the limit and the ordering attaining it.
///
/// Candidates are ranked by accumulated drop (largest first for
/// [`LimitMode::Upper`], smallest first for [`LimitMode::Lower`]); equal
/// scores prefer the lexicographically smaller prefix.
pub fn beam_limit(
    v: &dyn ValueFunction,
    x: &Instance,
    cfg: BeamConfig,
    cache: &EvalCache,
) -> Result<(f64, FeatureOrdering)> {
    if cfg.beam_size == 0 {
        return Err(Error::InvalidConfig("beam size must be at least 1".into()));
    }
    let n = x.feature_count();
    let base = evaluate_masked_many(v, x, &[RemovedSet::empty()], cache)?[0];
    let mut beam = vec![BeamEntry {
        prefix: Vec::new(),
        removed: RemovedSet::empty(),
        cumulative_drop: 0.0,
    }];

    for _ in 0..n {
        let mut candidates: Vec<BeamEntry> = Vec::with_capacity(beam.len() * n);
        for entry in &beam {
            for j in (0..n).filter(|&j| !entry.removed.contains(j)) {
                let mut prefix = Vec::with_capacity(entry.prefix.len() + 1);
                prefix.extend_from_slice(&entry.prefix);
                prefix.push(j);
                candidates.push(BeamEntry {
                    prefix,
                    removed: entry.removed.with(j),
                    cumulative_drop: entry.cumulative_drop,
                });
            }
        }
        let sets: Vec<RemovedSet> = candidates.iter().map(|c| c.removed.clone()).collect();
        let outputs = evaluate_masked_many(v, x, &sets, cache)?;
        for (c, out) in candidates.iter_mut().zip(outputs) {
            c.cumulative_drop += base - out;
        }
        beam = top_b(candidates, cfg);
    }

    let best = beam.swap_remove(0);
    Ok((
        best.cumulative_drop / n as f64,
        FeatureOrdering::from_vec_unchecked(best.prefix),
    ))
}

fn top_b(mut candidates: Vec<BeamEntry>, cfg: BeamConfig) -> Vec<BeamEntry> {
    let cmp = |a: &BeamEntry, b: &BeamEntry| {
        cfg.mode
            .better_first(a.cumulative_drop, b.cumulative_drop)
            .then_with(|| a.prefix.cmp(&b.prefix))
    };
    // the full sort keeps the result independent of evaluation order
    candidates.sort_by(cmp);
    if !cfg.dedupe {
        candidates.truncate(cfg.beam_size);
        return candidates;
    }
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(cfg.beam_size.min(candidates.len()));
    for c in candidates {
        if kept.len() == cfg.beam_size {
            break;
        }
        if seen.insert((c.removed.clone(), c.cumulative_drop.to_bits())) {
            kept.push(c);
        }
    }
    kept
}

/// Runs [`beam_limit`] once per mode, sharing the cache.
///
/// Both runs return real orderings, so if the lower search ends above the
/// upper one the two witnesses are swapped: each is still a valid bound.
pub fn beam_limits(v: &dyn ValueFunction, x: &Instance, beam_size: usize, cache: &EvalCache) -> Result<AopcLimits> {
    let (upper, arg_upper) = beam_limit(v, x, BeamConfig::new(beam_size, LimitMode::Upper), cache)?;
    let (lower, arg_lower) = beam_limit(v, x, BeamConfig::new(beam_size, LimitMode::Lower), cache)?;
    let limits = if lower <= upper {
        AopcLimits {
            lower,
            upper,
            method: LimitMethod::Beam(beam_size),
            arg_lower,
            arg_upper,
        }
    } else {
        AopcLimits {
            lower: upper,
            upper: lower,
            method: LimitMethod::Beam(beam_size),
            arg_lower: arg_upper,
            arg_upper: arg_lower,
        }
    };
    debug_assert!(limits.lower <= limits.upper);
    Ok(limits)
}

/// Beam-size doubling schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoBeamConfig {
    pub initial_beam: usize,
    pub growth_factor: usize,
    /// Largest absolute change in either limit that still counts as stable.
    pub threshold: f64,
    /// Consecutive stable growth steps required to stop.
    pub stable_rounds: usize,
    pub max_beam: usize,
}

impl Default for AutoBeamConfig {
    fn default() -> Self {
        Self {
            initial_beam: 1,
            growth_factor: 2,
            threshold: 1e-4,
            stable_rounds: 2,
            max_beam: 1024,
        }
    }
}

impl AutoBeamConfig {
    pub fn validate(&self) -> Result<()> {
        let problem = if self.initial_beam == 0 {
            "initial beam size must be at least 1"
        } else if self.growth_factor < 2 {
            "growth factor must be at least 2"
        } else if self.threshold.is_nan() || self.threshold < 0.0 {
            "threshold must be non-negative"
        } else if self.stable_rounds == 0 {
            "stable rounds must be at least 1"
        } else if self.max_beam < self.initial_beam {
            "max beam size is below the initial beam size"
        } else {
            return Ok(());
        };
        Err(Error::InvalidConfig(problem.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamTraceStep {
    pub beam_size: usize,
    pub lower: f64,
    pub upper: f64,
}

pub type BeamTrace = Vec<BeamTraceStep>;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoBeamOutcome {
    /// Beam size of the last run.
    pub beam_size: usize,
    pub limits: AopcLimits,
    pub trace: BeamTrace,
}

/// Grows the beam from `initial_beam` by `growth_factor` until both limits
/// move by at most `threshold` for `stable_rounds` consecutive steps.
///
/// Fails with [`Error::MaxBeamExceeded`] (carrying the trace) if the next
/// beam size would exceed `max_beam` first.
pub fn auto_beam_size(
    v: &dyn ValueFunction,
    x: &Instance,
    cfg: AutoBeamConfig,
    cache: &EvalCache,
) -> Result<AutoBeamOutcome> {
    cfg.validate()?;
    let mut trace = BeamTrace::new();
    let mut beam_size = cfg.initial_beam;
    let mut stable = 0;
    loop {
        let limits = beam_limits(v, x, beam_size, cache)?;
        if let Some(prev) = trace.last() {
            let moved = (limits.lower - prev.lower).abs() > cfg.threshold
                || (limits.upper - prev.upper).abs() > cfg.threshold;
            stable = if moved { 0 } else { stable + 1 };
        }
        trace.push(BeamTraceStep {
            beam_size,
            lower: limits.lower,
            upper: limits.upper,
        });
        if stable >= cfg.stable_rounds {
            return Ok(AutoBeamOutcome {
                beam_size,
                limits,
                trace,
            });
        }
        match beam_size.checked_mul(cfg.growth_factor) {
            Some(next) if next <= cfg.max_beam => beam_size = next,
            _ => {
                return Err(Error::MaxBeamExceeded {
                    max_beam: cfg.max_beam,
                    trace: Box::new(trace),
                })
            }
        }
    }
}
