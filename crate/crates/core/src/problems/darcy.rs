use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{line_points, misfit, InverseProblem, ObservationSet, Potential};
use crate::error::{Error, Result};
use crate::gauss::{Boundary, GaussianMeasure, GridSpec, PrecisionRecipe};

/// The two prior/noise setups of the 1D Darcy benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DarcyVariant {
    /// Periodic `4(μT − Δ)²` precision with `μ = 100`, `γ = 10⁻²`.
    I,
    /// Neumann `I − Δ` precision, `γ = 10⁻⁴`.
    Ii,
}

impl DarcyVariant {
    pub fn default_gamma(self) -> f64 {
        match self {
            DarcyVariant::I => 1e-2,
            DarcyVariant::Ii => 1e-4,
        }
    }

    pub fn default_recipe(self) -> &'static str {
        match self {
            DarcyVariant::I => "inv:4*(100*T - lap)^2",
            DarcyVariant::Ii => "inv:(I - lap)",
        }
    }

    pub fn prior_boundary(self) -> Boundary {
        match self {
            DarcyVariant::I => Boundary::Periodic,
            DarcyVariant::Ii => Boundary::Neumann,
        }
    }
}

/// Solves `−(e^u p')' = f` with periodic boundary conditions and `∫p = 0`.
///
/// Conservative differences with face conductivities `exp((u_i + u_{i+1})/2)`.
/// `f` is projected to zero mean first. The periodic 1D system is solved
/// exactly through the cumulative flux, so no matrix is formed.
pub fn solve_darcy_1d(u: &DVector<f64>, f: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let n = u.len();
    if f.len() != n || n == 0 {
        return Err(Error::invalid("conductivity and source lengths differ"));
    }
    if !u.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("non-finite log-conductivity"));
    }
    let f_mean = f.mean();
    // cumulative source F_i = h Σ_{l ≤ i} f_l, flux φ_i = c − F_i on face i+½
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &fi in f.iter() {
        acc += h * (fi - f_mean);
        cum.push(acc);
    }
    let mut inv_k = Vec::with_capacity(n);
    for i in 0..n {
        let k = (0.5 * (u[i] + u[(i + 1) % n])).exp();
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::numerical(format!("conductivity {k} at face {i} is not usable")));
        }
        inv_k.push(1.0 / k);
    }
    let sum_inv: f64 = inv_k.iter().sum();
    let sum_f: f64 = cum.iter().zip(&inv_k).map(|(c, k)| c * k).sum();
    let c = sum_f / sum_inv;
    let mut p: DVector<f64> = DVector::zeros(n);
    for i in 0..n - 1 {
        p[i + 1] = p[i] + h * (c - cum[i]) * inv_k[i];
    }
    for _ in 0..2 {
        let m = p.mean();
        p.add_scalar_mut(-m);
    }
    Ok(p)
}

/// Source `exp(−(x − π)²/10)` projected to zero mean on the grid nodes.
pub fn darcy_source(grid: &GridSpec) -> DVector<f64> {
    let raw = DVector::from_iterator(
        grid.dof(),
        (0..grid.dof()).map(|i| {
            let x = grid.node(i)[0];
            (-(x - PI).powi(2) / 10.0).exp()
        }),
    );
    let m = raw.mean();
    raw.add_scalar(-m)
}

/// Darcy flow on `(0, 2π)` observed at `J` nodes.
#[derive(Debug, Clone)]
pub struct DarcyProblem {
    variant: DarcyVariant,
    grid: GridSpec,
    prior: Arc<GaussianMeasure>,
    source: DVector<f64>,
    obs_nodes: Vec<usize>,
    obs: ObservationSet,
    amplitude: f64,
}

impl DarcyProblem {
    pub fn new(variant: DarcyVariant, points: usize, observations: usize, gamma: Option<f64>) -> Result<Self> {
        let grid = GridSpec::line(2.0 * PI, points, variant.prior_boundary())?;
        let recipe = PrecisionRecipe::parse(variant.default_recipe())?;
        Self::with_prior(variant, &grid, &recipe, observations, gamma.unwrap_or(variant.default_gamma()), 0.5)
    }

    pub fn with_prior(
        variant: DarcyVariant,
        grid: &GridSpec,
        recipe: &PrecisionRecipe,
        observations: usize,
        gamma: f64,
        amplitude: f64,
    ) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::config("problem.points", "Darcy problem is one-dimensional"));
        }
        if !(gamma > 0.0) {
            return Err(Error::config("problem.gamma", "noise level must be positive"));
        }
        let prior = Arc::new(GaussianMeasure::from_recipe(recipe, grid, None)?);
        let points = line_points(grid.extent(), observations);
        let obs_nodes = points
            .iter()
            .map(|p| grid.nearest_node(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variant,
            source: darcy_source(grid),
            grid: grid.clone(),
            prior,
            obs_nodes,
            obs: ObservationSet {
                points,
                y: vec![0.0; observations],
                gamma,
                seed: None,
                relative_noise: None,
            },
            amplitude,
        })
    }

    pub fn variant(&self) -> DarcyVariant {
        self.variant
    }

    pub fn source(&self) -> &DVector<f64> {
        &self.source
    }

    /// Pressure field for log-conductivity `u`.
    pub fn pressure(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        solve_darcy_1d(u, &self.source, self.grid.spacing(0))
    }
}

impl Potential for DarcyProblem {
    fn phi(&self, u: &DVector<f64>) -> Result<f64> {
        misfit(&self.forward(u)?, &self.obs)
    }
}

impl InverseProblem for DarcyProblem {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn prior(&self) -> &Arc<GaussianMeasure> {
        &self.prior
    }

    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.pressure(u)?;
        Ok(DVector::from_iterator(self.obs_nodes.len(), self.obs_nodes.iter().map(|&i| p[i])))
    }

    fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    fn set_observations(&mut self, obs: ObservationSet) -> Result<()> {
        if obs.y.len() != self.obs_nodes.len() {
            return Err(Error::invalid("data length does not match the observation points"));
        }
        self.obs = obs;
        Ok(())
    }

    fn truth(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.grid.dof(),
            (0..self.grid.dof()).map(|i| self.amplitude * self.grid.node(i)[0].sin()),
        )
    }
}
