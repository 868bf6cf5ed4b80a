//! Perturbation-curve faithfulness metrics for feature attributions, and
//! their normalization by per-(model, input) AOPC limits.
//!
//! A model is seen only through a [`ValueFunction`]: the output for an input
//! with some set of features perturbed. From that the crate computes
//!
//! - AOPC for an ordering, comprehensiveness and sufficiency for an
//!   attribution vector ([`curve`]),
//! - the lowest and highest AOPC any ordering can reach, exactly or by beam
//!   search ([`limits`]),
//! - scores min-max normalized by those limits ([`normalize`]),
//! - Kendall rank correlation between raw and normalized rankings ([`rank`]).
//!
//! ```
//! use naopc::{comprehensiveness, exhaustive_limits, normalize, EvalCache};
//! use naopc::toy::{reference_instance, BuiltinModel};
//!
//! let f1 = BuiltinModel::F1.model();
//! let x = reference_instance();
//! let e = BuiltinModel::F1.linear().unwrap().ground_truth_attribution(&x).unwrap();
//! let cache = EvalCache::new();
//!
//! let comp = comprehensiveness(&f1, &x, &e, &cache).unwrap();
//! let limits = exhaustive_limits(&f1, &x, &cache).unwrap();
//! assert!((comp - 0.75).abs() < 1e-12);
//! assert!((normalize(comp, &limits).unwrap().value - 1.0).abs() < 1e-12);
//! ```

pub mod attribution;
pub mod cache;
pub mod cli;
pub mod curve;
pub mod error;
pub mod io;
pub mod limits;
pub mod normalize;
pub mod rank;
pub mod server;
pub mod toy;
pub mod types;
pub mod value;

pub use attribution::{exact_shapley, occlusion1, random_attribution};
pub use cache::{evaluate_masked, evaluate_masked_many, CacheStats, EvalCache};
pub use curve::{aopc, comprehensiveness, rank as rank_features, sufficiency, RankDirection, RankPolicy};
pub use error::{Error, EvaluationError, EvaluationFailure, Result, ValueError};
pub use limits::{
    auto_beam_size, beam_limit, beam_limits, exhaustive_limits, exhaustive_limits_with_cap, AutoBeamConfig,
    AutoBeamOutcome, BeamConfig, BeamTrace, BeamTraceStep, LimitMode,
};
pub use normalize::{naopc_comprehensiveness, naopc_sufficiency, normalize, NormalizedScore};
pub use types::{
    subset_key, AopcLimits, AttributionVector, FeatureOrdering, Instance, LimitMethod, Payload, PerturbationCurve,
    RemovedSet, SubsetKey,
};
pub use value::{Affine, Concurrency, ConstantValue, FnValue, ValueFunction};
