//! Benchmark inverse problems and the negative log-likelihood interface.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{GaussianMeasure, GridSpec};
use crate::rng::{standard_normal_vec, stream, Purpose};

pub mod darcy;
pub mod levelset;
pub mod linear;

pub use darcy::{solve_darcy_1d, DarcyProblem, DarcyVariant};
pub use levelset::{solve_levelset_poisson, LevelSetProblem, PoissonSolver};
pub use linear::{effective_dimension, exact_posterior, AnalyticGaussianPosterior, LinearProblem};

/// Negative log-likelihood `Φ` on grid coefficients.
///
/// Must be a pure function of its argument.
pub trait Potential: Send + Sync {
    fn phi(&self, u: &DVector<f64>) -> Result<f64>;
}

impl<F> Potential for F
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
{
    fn phi(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(self(u))
    }
}

/// `Φ ≡ 0`: the target is the prior itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn phi(&self, _u: &DVector<f64>) -> Result<f64> {
        Ok(0.0)
    }
}

/// Point observations `y` with i.i.d. noise of standard deviation `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub points: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub gamma: f64,
    /// Seed the noise was drawn with, when synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `‖y − G(u†)‖ / ‖G(u†)‖` for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_noise: Option<f64>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Common surface of the benchmark problems.
pub trait InverseProblem: Potential {
    fn grid(&self) -> &GridSpec;
    fn prior(&self) -> &Arc<GaussianMeasure>;
    /// Forward map `G(u)` at the observation points.
    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn observations(&self) -> &ObservationSet;
    fn set_observations(&mut self, obs: ObservationSet) -> Result<()>;
    /// Coefficients of the ground-truth state.
    fn truth(&self) -> DVector<f64>;
}

/// `½ γ⁻² ‖G(u) − y‖²`.
pub(crate) fn misfit(gu: &DVector<f64>, obs: &ObservationSet) -> Result<f64> {
    if gu.len() != obs.y.len() {
        return Err(Error::invalid("forward map output length differs from the data"));
    }
    let mut s = 0.0;
    for (a, b) in gu.iter().zip(&obs.y) {
        let r = a - b;
        s += r * r;
    }
    Ok(0.5 * s / (obs.gamma * obs.gamma))
}

/// Synthetic data `y = G(u†) + γζ` with `ζ ~ N(0, I)` drawn from the data stream of `seed`.
///
/// Installs the data on `problem` and returns it.
pub fn make_data<P: InverseProblem + ?Sized>(problem: &mut P, seed: u64) -> Result<ObservationSet> {
    let clean = problem.forward(&problem.truth())?;
    let mut obs = problem.observations().clone();
    let mut rng = stream(seed, Purpose::Data, 0);
    let noise = standard_normal_vec(&mut rng, clean.len()) * obs.gamma;
    let y = &clean + &noise;
    let denom = clean.norm();
    obs.relative_noise = Some(if denom > 0.0 { noise.norm() / denom } else { 0.0 });
    obs.y = y.iter().copied().collect();
    obs.seed = Some(seed);
    problem.set_observations(obs.clone())?;
    Ok(obs)
}

/// Equally spaced points `L j / J`, `j = 1..=J`, on `(0, L]`.
pub(crate) fn line_points(extent: f64, count: usize) -> Vec<Vec<f64>> {
    (1..=count)
        .map(|j| vec![extent * j as f64 / count as f64])
        .collect()
}
