//! The black-box view of a model: `(instance, removed set) -> output`.

use std::fmt;
use std::sync::Arc;

use crate::error::ValueError;
use crate::types::{Instance, RemovedSet};

/// Whether a value function may be queried from several threads at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Parallel,
    Serial,
}

/// A model together with its perturbation function.
///
/// `evaluate(x, ∅)` must return the unperturbed output `f(x)`, and repeated
/// calls with equal arguments must return bit-identical values. How features
/// are perturbed (zeroing, mask tokens, ...) is entirely up to the
/// implementation.
pub trait ValueFunction: Send + Sync {
    fn evaluate(&self, instance: &Instance, removed: &RemovedSet) -> Result<f64, ValueError>;

    /// Evaluates several subsets of one instance. Implementations backed by a
    /// remote service override this to batch requests.
    fn evaluate_batch(
        &self,
        instance: &Instance,
        removed: &[RemovedSet],
    ) -> Vec<Result<f64, ValueError>> {
        removed.iter().map(|s| self.evaluate(instance, s)).collect()
    }

    fn description(&self) -> String;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for &V {
    fn evaluate(&self, instance: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        (**self).evaluate(instance, removed)
    }
    fn evaluate_batch(&self, instance: &Instance, removed: &[RemovedSet]) -> Vec<Result<f64, ValueError>> {
        (**self).evaluate_batch(instance, removed)
    }
    fn description(&self) -> String {
        (**self).description()
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for Box<V> {
    fn evaluate(&self, instance: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        (**self).evaluate(instance, removed)
    }
    fn evaluate_batch(&self, instance: &Instance, removed: &[RemovedSet]) -> Vec<Result<f64, ValueError>> {
        (**self).evaluate_batch(instance, removed)
    }
    fn description(&self) -> String {
        (**self).description()
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for Arc<V> {
    fn evaluate(&self, instance: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        (**self).evaluate(instance, removed)
    }
    fn evaluate_batch(&self, instance: &Instance, removed: &[RemovedSet]) -> Vec<Result<f64, ValueError>> {
        (**self).evaluate_batch(instance, removed)
    }
    fn description(&self) -> String {
        (**self).description()
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

/// Returns the same output for every subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantValue(pub f64);

impl ValueFunction for ConstantValue {
    fn evaluate(&self, _: &Instance, _: &RemovedSet) -> Result<f64, ValueError> {
        Ok(self.0)
    }

    fn description(&self) -> String {
        format!("constant {}", self.0)
    }
}

/// `scale * inner + shift`.
#[derive(Debug, Clone)]
pub struct Affine<V> {
    pub inner: V,
    pub scale: f64,
    pub shift: f64,
}

impl<V> Affine<V> {
    pub fn new(inner: V, scale: f64, shift: f64) -> Self {
        Self { inner, scale, shift }
    }
}

impl<V: ValueFunction> ValueFunction for Affine<V> {
    fn evaluate(&self, instance: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        Ok(self.scale * self.inner.evaluate(instance, removed)? + self.shift)
    }

    fn description(&self) -> String {
        format!("{} * ({}) + {}", self.scale, self.inner.description(), self.shift)
    }

    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }
}

/// Adapts a closure into a value function.
pub struct FnValue<F> {
    f: F,
    description: String,
}

impl<F> FnValue<F>
where
    F: Fn(&Instance, &RemovedSet) -> f64 + Send + Sync,
{
    pub fn new(description: impl Into<String>, f: F) -> Self {
        Self {
            f,
            description: description.into(),
        }
    }
}

impl<F> fmt::Debug for FnValue<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnValue").field("description", &self.description).finish()
    }
}

impl<F> ValueFunction for FnValue<F>
where
    F: Fn(&Instance, &RemovedSet) -> f64 + Send + Sync,
{
    fn evaluate(&self, instance: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        Ok((self.f)(instance, removed))
    }

    fn description(&self) -> String {
        self.description.clone()
    }
}
