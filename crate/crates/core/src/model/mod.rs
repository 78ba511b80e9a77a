//! Hierarchical lognormal mixed model, its priors and transforms, and the
//! conjugate normal oracle used to validate the estimators.

mod conjugate;
mod dataset;
mod effect;
mod lmm;
mod prior;

pub use conjugate::ConjugateModel;
pub use dataset::{Dataset, DesignRow, RawRow, Row};
pub use effect::{effect_log_to_ms, effect_ms_to_log};
pub use lmm::{log_joint, GroupParams, LmmModelSpec, LmmPosterior, ParameterVector, RandomEffects};
pub use prior::{HalfNormalPrior, LkjPrior, NormalPrior, PriorSpec};

use crate::rng::EngineRng;

/// A differentiable log density over an unconstrained real vector.
///
/// Implementations must be pure: the same `theta` always yields the same value,
/// and evaluation from several threads at once is allowed.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density at `theta` and writes its gradient into `grad`.
    /// Non-finite return values mark points outside the usable region.
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, theta: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.log_density_grad(theta, &mut grad)
    }

    /// A starting point for sampling, typically a prior draw in unconstrained space.
    fn initial_point(&self, rng: &mut EngineRng) -> Vec<f64>;
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_grad(theta, grad)
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn initial_point(&self, rng: &mut EngineRng) -> Vec<f64> {
        (**self).initial_point(rng)
    }
}
