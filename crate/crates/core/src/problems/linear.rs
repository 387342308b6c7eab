use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{line_points, misfit, InverseProblem, ObservationSet, Potential};
use crate::error::{Error, Result};
use crate::gauss::{Boundary, GaussianMeasure, GridSpec, PrecisionRecipe};

/// Linear-Gaussian problem `y = A u + η`, `η ~ N(0, γ² I)`.
///
/// The regression benchmark uses point evaluation at grid nodes for `A`; the
/// general constructor accepts any dense forward matrix, which is how the small
/// conjugate test targets are built.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    grid: GridSpec,
    prior: Arc<GaussianMeasure>,
    forward: DMatrix<f64>,
    obs: ObservationSet,
    truth: DVector<f64>,
}

impl LinearProblem {
    pub fn new(
        prior: Arc<GaussianMeasure>,
        forward: DMatrix<f64>,
        obs: ObservationSet,
        truth: DVector<f64>,
    ) -> Result<Self> {
        let d = prior.dim();
        if forward.ncols() != d || forward.nrows() != obs.y.len() || truth.len() != d {
            return Err(Error::invalid("forward matrix, data and truth shapes disagree"));
        }
        if !(obs.gamma > 0.0) {
            return Err(Error::config("problem.gamma", "noise level must be positive"));
        }
        Ok(Self {
            grid: prior.grid().clone(),
            prior,
            forward,
            obs,
            truth,
        })
    }

    /// Point-observation regression on `(0, 2π)` with a Neumann `(I − Δ)⁻¹` prior
    /// and truth `sin(x)/2`.
    pub fn regression(points: usize, observations: usize, gamma: f64) -> Result<Self> {
        let grid = GridSpec::line(2.0 * PI, points, Boundary::Neumann)?;
        let recipe = PrecisionRecipe::parse("inv:(I - lap)")?;
        Self::regression_with(&grid, &recipe, observations, gamma, 0.5)
    }

    pub fn regression_with(
        grid: &GridSpec,
        recipe: &PrecisionRecipe,
        observations: usize,
        gamma: f64,
        amplitude: f64,
    ) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::config("problem.points", "linear regression problem is one-dimensional"));
        }
        let prior = Arc::new(GaussianMeasure::from_recipe(recipe, grid, None)?);
        let points = line_points(grid.extent(), observations);
        let mut a = DMatrix::zeros(observations, grid.dof());
        for (j, p) in points.iter().enumerate() {
            a[(j, grid.nearest_node(p)?)] = 1.0;
        }
        let truth = DVector::from_iterator(grid.dof(), (0..grid.dof()).map(|i| amplitude * grid.node(i)[0].sin()));
        let obs = ObservationSet {
            points,
            y: vec![0.0; observations],
            gamma,
            seed: None,
            relative_noise: None,
        };
        Self::new(prior, a, obs, truth)
    }

    pub fn forward_matrix(&self) -> &DMatrix<f64> {
        &self.forward
    }

    pub fn gamma(&self) -> f64 {
        self.obs.gamma
    }
}

impl Potential for LinearProblem {
    fn phi(&self, u: &DVector<f64>) -> Result<f64> {
        misfit(&(&self.forward * u), &self.obs)
    }
}

impl InverseProblem for LinearProblem {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn prior(&self) -> &Arc<GaussianMeasure> {
        &self.prior
    }

    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.forward * u)
    }

    fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    fn set_observations(&mut self, obs: ObservationSet) -> Result<()> {
        if obs.y.len() != self.forward.nrows() {
            return Err(Error::invalid("data length does not match the observation operator"));
        }
        self.obs = obs;
        Ok(())
    }

    fn truth(&self) -> DVector<f64> {
        self.truth.clone()
    }
}

/// Closed-form Gaussian posterior of a linear problem.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub precision: DMatrix<f64>,
}

/// `C_p⁻¹ = Aᵀ Γ⁻¹ A + C0⁻¹` and `C_p⁻¹ m_p = Aᵀ Γ⁻¹ y + C0⁻¹ m0`.
pub fn exact_posterior(problem: &LinearProblem) -> Result<AnalyticGaussianPosterior> {
    let prior = problem.prior();
    let a = problem.forward_matrix();
    let g2 = problem.gamma() * problem.gamma();
    let mut precision = prior.precision().clone();
    if a.nrows() > 0 {
        precision += a.tr_mul(a) / g2;
    }
    let y = DVector::from_column_slice(&problem.observations().y);
    let mut rhs = prior.precision() * prior.mean();
    if a.nrows() > 0 {
        rhs += a.tr_mul(&y) / g2;
    }
    let chol = Cholesky::new(precision.clone())
        .ok_or_else(|| Error::numerical("posterior precision is not positive definite"))?;
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(AnalyticGaussianPosterior {
        mean,
        covariance,
        precision,
    })
}

/// `tr(Q (I + Q)⁻¹)` with `Q = C0^{1/2} Aᵀ Γ⁻¹ A C0^{1/2}`.
pub fn effective_dimension(problem: &LinearProblem) -> f64 {
    let a = problem.forward_matrix();
    if a.nrows() == 0 {
        return 0.0;
    }
    let g2 = problem.gamma() * problem.gamma();
    let l = problem.prior().cov_sqrt();
    let al = a * l;
    let q = al.tr_mul(&al) / g2;
    let q = (&q + q.transpose()) * 0.5;
    SymmetricEigen::new(q)
        .eigenvalues
        .iter()
        .map(|&v| {
            let v = v.max(0.0);
            v / (1.0 + v)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::make_data;
    use crate::rng::{standard_normal_vec, stream, Purpose};

    #[test]
    fn phi_matches_loop() {
        let mut p = LinearProblem::regression(50, 25, 1e-3).unwrap();
        make_data(&mut p, 3).unwrap();
        let u = standard_normal_vec(&mut stream(1, Purpose::Diagnostics, 0), 50);
        let mut s = 0.0;
        for (j, pt) in p.observations().points.iter().enumerate() {
            let idx = p.grid().nearest_node(pt).unwrap();
            let r = u[idx] - p.observations().y[j];
            s += r * r;
        }
        let expected = 0.5 * s / 1e-6;
        let got = p.phi(&u).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn zero_misfit_at_data() {
        let p = LinearProblem::regression(50, 25, 1e-3).unwrap();
        // data defaults to zeros, so u = 0 reproduces them exactly
        assert_eq!(p.phi(&DVector::zeros(50)).unwrap(), 0.0);
    }

    #[test]
    fn noiseless_data_reproduces_forward_map() {
        let mut p = LinearProblem::regression(50, 25, 1e-3).unwrap();
        let mut obs = p.observations().clone();
        obs.gamma = 0.0;
        p.obs = obs;
        let data = make_data(&mut p, 1).unwrap();
        let clean = p.forward(&p.truth()).unwrap();
        assert_eq!(DVector::from_column_slice(&data.y), clean);
    }

    #[test]
    fn uninformative_data_returns_prior() {
        let mut p = LinearProblem::regression(30, 10, 1e12).unwrap();
        make_data(&mut p, 2).unwrap();
        let post = exact_posterior(&p).unwrap();
        let c0 = p.prior().covariance();
        assert!(post.mean.amax() < 1e-6);
        for (a, b) in post.covariance.iter().zip(c0.iter()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn no_observations_gives_prior_posterior() {
        let p = LinearProblem::regression(20, 0, 1e-3).unwrap();
        let post = exact_posterior(&p).unwrap();
        assert_eq!(&post.precision, p.prior().precision());
        assert!((post.covariance - p.prior().covariance()).amax() < 1e-10);
        assert_eq!(effective_dimension(&p), 0.0);
    }

    #[test]
    fn posterior_matches_dense_bayes_oracle() {
        let d = 6;
        let mut rng = stream(8, Purpose::Diagnostics, 0);
        let grid = GridSpec::line(d as f64, d, Boundary::Neumann).unwrap();
        let b = DMatrix::from_fn(d, d, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let c0 = &b * b.transpose() + DMatrix::identity(d, d);
        let prior = Arc::new(GaussianMeasure::from_covariance(&grid, DVector::zeros(d), c0.clone()).unwrap());
        let a = DMatrix::from_fn(2, d, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let y = vec![0.3, -1.1];
        let gamma = 0.4;
        let obs = ObservationSet {
            points: vec![vec![1.0], vec![2.0]],
            y: y.clone(),
            gamma,
            seed: None,
            relative_noise: None,
        };
        let p = LinearProblem::new(prior, a.clone(), obs, DVector::zeros(d)).unwrap();
        let post = exact_posterior(&p).unwrap();
        // Kalman-form oracle: m = C0 Aᵀ (A C0 Aᵀ + Γ)⁻¹ y, C = C0 − C0 Aᵀ (A C0 Aᵀ + Γ)⁻¹ A C0
        let s = &a * &c0 * a.transpose() + DMatrix::identity(2, 2) * (gamma * gamma);
        let k = &c0 * a.transpose() * s.try_inverse().unwrap();
        let m = &k * DVector::from_vec(y);
        let c = &c0 - &k * &a * &c0;
        assert!((post.mean - m).amax() < 1e-10);
        assert!((post.covariance - c).amax() < 1e-10);
    }

    #[test]
    fn identity_effective_dimension() {
        let grid = GridSpec::line(5.0, 5, Boundary::Neumann).unwrap();
        let prior = Arc::new(
            GaussianMeasure::from_recipe(&PrecisionRecipe::parse("inv:I").unwrap(), &grid, None).unwrap(),
        );
        let obs = ObservationSet {
            points: (1..=5).map(|i| vec![i as f64]).collect(),
            y: vec![0.0; 5],
            gamma: 1.0,
            seed: None,
            relative_noise: None,
        };
        let p = LinearProblem::new(prior, DMatrix::identity(5, 5), obs, DVector::zeros(5)).unwrap();
        assert!((effective_dimension(&p) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn effective_dimension_bounds() {
        for (d, j, g) in [(20, 5, 1e-1), (40, 10, 1e-3), (30, 30, 1.0)] {
            let p = LinearProblem::regression(d, j, g).unwrap();
            let e = effective_dimension(&p);
            assert!((0.0..=j.min(d) as f64).contains(&e), "{e}");
        }
    }
}
