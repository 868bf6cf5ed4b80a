//! Small reference models: the four-feature linear and logic-gate models
//! used as golden examples, plus seeded random families for property tests.
//!
//! All toy models perturb a feature by setting it to 0.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, ValueError};
use crate::types::{AttributionVector, Instance, RemovedSet};
use crate::value::ValueFunction;

/// Gap between `v(∅)` and the largest other table entry of a [`RandomSetFunction`].
pub const RANDOM_TABLE_MARGIN: f64 = 0.1;

/// Largest feature count a [`RandomSetFunction`] tabulates.
pub const RANDOM_TABLE_MAX_FEATURES: usize = 16;

fn feature_values<'a>(x: &'a Instance, n: usize, what: &str) -> Result<&'a [f64], ValueError> {
    match x.values() {
        Some(v) if v.len() == n => Ok(v),
        Some(v) => Err(ValueError::Other(format!(
            "{what} expects {n} feature values, instance `{}` has {}",
            x.id(),
            v.len()
        ))),
        None => Err(ValueError::Other(format!(
            "{what} needs feature values, instance `{}` has none",
            x.id()
        ))),
    }
}

/// `f(x) = Σ w_i x_i` over the features that were not removed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearToyModel {
    weights: Vec<f64>,
}

impl LinearToyModel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidFeatureCount(0));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `e_i = w_i · x_i`, the exact contribution of each feature.
    pub fn ground_truth_attribution(&self, x: &Instance) -> Result<AttributionVector> {
        let values = feature_values(x, self.weights.len(), "linear model")
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        AttributionVector::new(self.weights.iter().zip(values).map(|(w, v)| w * v).collect())
    }
}

impl ValueFunction for LinearToyModel {
    fn evaluate(&self, x: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        let values = feature_values(x, self.weights.len(), "linear model")?;
        Ok(self
            .weights
            .iter()
            .zip(values)
            .enumerate()
            .filter(|(i, _)| !removed.contains(*i))
            .map(|(_, (w, v))| w * v)
            .sum())
    }

    fn description(&self) -> String {
        format!("linear {:?}", self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    /// 0-based feature indices.
    pub inputs: Vec<usize>,
    pub weight: f64,
}

/// Weighted sum of AND/OR gates over binary features. A feature is "on" when
/// its value is non-zero and it has not been removed.
#[derive(Debug, Clone, PartialEq)]
pub struct GateToyModel {
    n: usize,
    gates: Vec<Gate>,
}

impl GateToyModel {
    pub fn new(n: usize, gates: Vec<Gate>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidFeatureCount(0));
        }
        for gate in &gates {
            if gate.inputs.is_empty() {
                return Err(Error::InvalidConfig("gate without inputs".into()));
            }
            if let Some(&i) = gate.inputs.iter().find(|&&i| i >= n) {
                return Err(Error::IndexOutOfRange { index: i + 1, n });
            }
        }
        Ok(Self { n, gates })
    }

    /// A seeded random circuit: between 1 and `n` gates, each reading 1 to 3
    /// features, with weights in `[0.05, 1)`.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidFeatureCount(0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gate_count = rng.gen_range(1..=n);
        let gates = (0..gate_count)
            .map(|_| {
                let arity = rng.gen_range(1..=n.min(3));
                let inputs = rand::seq::index::sample(&mut rng, n, arity).into_vec();
                Gate {
                    kind: if rng.gen_bool(0.5) { GateKind::And } else { GateKind::Or },
                    inputs,
                    weight: rng.gen_range(0.05..1.0),
                }
            })
            .collect();
        Self::new(n, gates)
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn feature_count(&self) -> usize {
        self.n
    }
}

impl ValueFunction for GateToyModel {
    fn evaluate(&self, x: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        let values = feature_values(x, self.n, "gate model")?;
        let on = |i: &usize| values[*i] != 0.0 && !removed.contains(*i);
        Ok(self
            .gates
            .iter()
            .map(|g| {
                let fires = match g.kind {
                    GateKind::And => g.inputs.iter().all(on),
                    GateKind::Or => g.inputs.iter().any(on),
                };
                if fires {
                    g.weight
                } else {
                    0.0
                }
            })
            .sum())
    }

    fn description(&self) -> String {
        let terms: Vec<String> = self
            .gates
            .iter()
            .map(|g| {
                let op = match g.kind {
                    GateKind::And => " and ",
                    GateKind::Or => " or ",
                };
                let inputs: Vec<String> = g.inputs.iter().map(|i| format!("x{}", i + 1)).collect();
                format!("{}*({})", g.weight, inputs.join(op))
            })
            .collect();
        format!("gates {}", terms.join(" + "))
    }
}

/// An arbitrary seeded set function: one uniform `[0, 1)` value per removed
/// subset, with the unperturbed output lifted above every other entry.
///
/// The instance payload is ignored; only the removed set matters.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSetFunction {
    n: usize,
    seed: u64,
    table: Vec<f64>,
}

impl RandomSetFunction {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidFeatureCount(0));
        }
        if n > RANDOM_TABLE_MAX_FEATURES {
            return Err(Error::FeatureCountExceedsExactCap {
                n,
                cap: RANDOM_TABLE_MAX_FEATURES,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table: Vec<f64> = (0..1usize << n).map(|_| rng.gen::<f64>()).collect();
        let max = table[1..].iter().copied().fold(0.0, f64::max);
        table[0] = max + RANDOM_TABLE_MARGIN;
        Ok(Self { n, seed, table })
    }

    pub fn feature_count(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Values indexed by removed-set bitmask.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// An instance this function can be evaluated on.
    pub fn instance(&self, id: &str) -> Instance {
        Instance::new(id, self.n, crate::types::Payload::None).expect("n >= 1")
    }
}

impl ValueFunction for RandomSetFunction {
    fn evaluate(&self, x: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        if x.feature_count() != self.n {
            return Err(ValueError::Other(format!(
                "random set function has {} features, instance `{}` has {}",
                self.n,
                x.id(),
                x.feature_count()
            )));
        }
        let mask = removed.as_mask().ok_or(ValueError::MissingValue)?;
        self.table
            .get(mask as usize)
            .copied()
            .ok_or(ValueError::MissingValue)
    }

    fn description(&self) -> String {
        format!("random set function (n={}, seed={})", self.n, self.seed)
    }
}

/// Either kind of built-in toy model.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyModel {
    Linear(LinearToyModel),
    Gate(GateToyModel),
}

impl ValueFunction for ToyModel {
    fn evaluate(&self, x: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        match self {
            ToyModel::Linear(m) => m.evaluate(x, removed),
            ToyModel::Gate(m) => m.evaluate(x, removed),
        }
    }

    fn description(&self) -> String {
        match self {
            ToyModel::Linear(m) => m.description(),
            ToyModel::Gate(m) => m.description(),
        }
    }
}

/// The four reference models over binary features `x1..x4`:
///
/// - `F1 = 0.2 x1 + 0.3 x2 + 0.1 x3 + 0.4 x4`
/// - `F2 = 0.0 x1 + 0.1 x2 + 0.7 x3 + 0.2 x4`
/// - `F3 = 0.7 (x1 or x2) + 0.3 (x3 or x4)`
/// - `F4 = 0.7 (x1 and x2) + 0.3 (x3 and x4)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinModel {
    F1,
    F2,
    F3,
    F4,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 4] = [Self::F1, Self::F2, Self::F3, Self::F4];

    pub fn model(self) -> ToyModel {
        match self.linear() {
            Some(m) => ToyModel::Linear(m),
            None => {
                let kind = if self == Self::F3 { GateKind::Or } else { GateKind::And };
                let gates = vec![
                    Gate {
                        kind,
                        inputs: vec![0, 1],
                        weight: 0.7,
                    },
                    Gate {
                        kind,
                        inputs: vec![2, 3],
                        weight: 0.3,
                    },
                ];
                ToyModel::Gate(GateToyModel::new(4, gates).expect("valid gates"))
            }
        }
    }

    /// The linear model behind `F1`/`F2`; `None` for the gate models.
    pub fn linear(self) -> Option<LinearToyModel> {
        let weights = match self {
            Self::F1 => vec![0.2, 0.3, 0.1, 0.4],
            Self::F2 => vec![0.0, 0.1, 0.7, 0.2],
            _ => return None,
        };
        Some(LinearToyModel::new(weights).expect("non-empty"))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::F1 => "f1",
            Self::F2 => "f2",
            Self::F3 => "f3",
            Self::F4 => "f4",
        }
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(Self::F1),
            "f2" => Ok(Self::F2),
            "f3" => Ok(Self::F3),
            "f4" => Ok(Self::F4),
            other => Err(Error::InvalidConfig(format!("unknown built-in model `{other}`"))),
        }
    }
}

/// The all-ones input `(1, 1, 1, 1)` with id `x0`.
pub fn reference_instance() -> Instance {
    ones_instance("x0", 4)
}

/// An instance of `n` features, all set to 1.
pub fn ones_instance(id: &str, n: usize) -> Instance {
    Instance::with_values(id, &vec![1.0; n]).expect("n >= 1")
}
