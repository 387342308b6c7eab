use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{misfit, InverseProblem, ObservationSet, Potential};
use crate::error::{Error, Result};
use crate::gauss::{laplacian, Boundary, GaussianMeasure, GridSpec, PrecisionRecipe};

/// Dirichlet Poisson solver `−Δp = s` on the unit-square grid.
///
/// Nodes with index `D` on either axis lie on the boundary and carry `p = 0`;
/// the remaining `(D−1)²` nodes are unknowns. The interior operator is factored
/// once.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    grid: GridSpec,
    interior: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
}

impl PoissonSolver {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        if grid.dim() != 2 || grid.points()[0] != grid.points()[1] {
            return Err(Error::config("problem.points", "level-set problem needs a square 2D grid"));
        }
        let d = grid.points()[0];
        if d < 2 {
            return Err(Error::config("problem.points", "level-set grid needs at least 2 points per axis"));
        }
        let inner = GridSpec::square(grid.extent() * (d - 1) as f64 / d as f64, d - 1, d - 1, Boundary::Dirichlet)?;
        let a = -laplacian(&inner);
        let chol = Cholesky::new(a).ok_or_else(|| Error::numerical("Dirichlet Laplacian factorization failed"))?;
        let mut interior = Vec::with_capacity((d - 1) * (d - 1));
        for j in 0..d - 1 {
            for i in 0..d - 1 {
                interior.push(j * d + i);
            }
        }
        Ok(Self {
            grid: grid.clone(),
            interior,
            chol,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Full-grid solution for a full-grid source; boundary source values are ignored.
    pub fn solve(&self, source: &DVector<f64>) -> Result<DVector<f64>> {
        if source.len() != self.grid.dof() {
            return Err(Error::invalid("source length does not match the grid"));
        }
        let rhs = DVector::from_iterator(self.interior.len(), self.interior.iter().map(|&k| source[k]));
        let p_int = self.chol.solve(&rhs);
        let mut p = DVector::zeros(self.grid.dof());
        for (v, &k) in p_int.iter().zip(&self.interior) {
            p[k] = *v;
        }
        Ok(p)
    }

    /// Row `k` gives `p(node_k)` as a linear functional of the full-grid source.
    pub fn observation_matrix(&self, nodes: &[usize]) -> Result<DMatrix<f64>> {
        let n_int = self.interior.len();
        let mut pos = vec![usize::MAX; self.grid.dof()];
        for (r, &k) in self.interior.iter().enumerate() {
            pos[k] = r;
        }
        let mut out = DMatrix::zeros(nodes.len(), self.grid.dof());
        for (row, &node) in nodes.iter().enumerate() {
            if pos[node] == usize::MAX {
                // boundary node: p is identically zero there
                continue;
            }
            let mut e = DVector::zeros(n_int);
            e[pos[node]] = 1.0;
            let g = self.chol.solve(&e);
            for (r, &k) in self.interior.iter().enumerate() {
                out[(row, k)] = g[r];
            }
        }
        Ok(out)
    }
}

/// `sgn` with `sgn(0) = 0`.
pub fn sign_field(u: &DVector<f64>) -> DVector<f64> {
    u.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Solves `−Δp = sgn(u)` with homogeneous Dirichlet data.
pub fn solve_levelset_poisson(u: &DVector<f64>, grid: &GridSpec) -> Result<DVector<f64>> {
    PoissonSolver::new(grid)?.solve(&sign_field(u))
}

/// Level-set inversion on `(0, 1)²` observed on a regular interior lattice.
#[derive(Debug, Clone)]
pub struct LevelSetProblem {
    grid: GridSpec,
    prior: Arc<GaussianMeasure>,
    solver: PoissonSolver,
    obs_nodes: Vec<usize>,
    obs_map: DMatrix<f64>,
    obs: ObservationSet,
    radius: f64,
}

impl LevelSetProblem {
    /// Defaults: `(I − Δ)⁻²` Neumann prior, observations on `{¼, ½, ¾}²`.
    pub fn new(points: usize, gamma: f64) -> Result<Self> {
        let grid = GridSpec::square(1.0, points, points, Boundary::Neumann)?;
        let recipe = PrecisionRecipe::parse("inv:(I - lap)^2")?;
        Self::with_prior(&grid, &recipe, 3, gamma, 0.25)
    }

    /// `lattice` observation points per axis at `k/(lattice+1)`, truth `r − |x − c|`.
    pub fn with_prior(
        grid: &GridSpec,
        recipe: &PrecisionRecipe,
        lattice: usize,
        gamma: f64,
        radius: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::config("problem.gamma", "noise level must be positive"));
        }
        let solver = PoissonSolver::new(grid)?;
        let prior = Arc::new(GaussianMeasure::from_recipe(recipe, grid, None)?);
        let step = grid.extent() / (lattice + 1) as f64;
        let mut points = Vec::with_capacity(lattice * lattice);
        for j in 1..=lattice {
            for i in 1..=lattice {
                points.push(vec![i as f64 * step, j as f64 * step]);
            }
        }
        let obs_nodes = points
            .iter()
            .map(|p| grid.nearest_node(p))
            .collect::<Result<Vec<_>>>()?;
        let obs_map = solver.observation_matrix(&obs_nodes)?;
        let n_obs = points.len();
        Ok(Self {
            grid: grid.clone(),
            prior,
            solver,
            obs_nodes,
            obs_map,
            obs: ObservationSet {
                points,
                y: vec![0.0; n_obs],
                gamma,
                seed: None,
                relative_noise: None,
            },
            radius,
        })
    }

    pub fn solver(&self) -> &PoissonSolver {
        &self.solver
    }

    pub fn observation_nodes(&self) -> &[usize] {
        &self.obs_nodes
    }
}

impl Potential for LevelSetProblem {
    fn phi(&self, u: &DVector<f64>) -> Result<f64> {
        misfit(&self.forward(u)?, &self.obs)
    }
}

impl InverseProblem for LevelSetProblem {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn prior(&self) -> &Arc<GaussianMeasure> {
        &self.prior
    }

    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.grid.dof() {
            return Err(Error::invalid("state length does not match the grid"));
        }
        Ok(&self.obs_map * sign_field(u))
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
        let c = 0.5 * self.grid.extent();
        DVector::from_iterator(
            self.grid.dof(),
            (0..self.grid.dof()).map(|k| {
                let [x, y] = self.grid.node(k);
                self.radius - ((x - c).powi(2) + (y - c).powi(2)).sqrt()
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_grid(d: usize) -> GridSpec {
        GridSpec::square(1.0, d, d, Boundary::Neumann).unwrap()
    }

    /// Series solution of `−Δp = 1` with zero boundary values on the unit square.
    fn series(x: f64, y: f64) -> f64 {
        let mut s = 0.0;
        for m in (1..200).step_by(2) {
            for n in (1..200).step_by(2) {
                let (mf, nf) = (m as f64, n as f64);
                s += 16.0 / (PI.powi(4) * mf * nf * (mf * mf + nf * nf))
                    * (mf * PI * x).sin()
                    * (nf * PI * y).sin();
            }
        }
        s
    }

    #[test]
    fn constant_source_matches_series_solution() {
        let d = 32;
        let g = unit_grid(d);
        let p = solve_levelset_poisson(&DVector::from_element(g.dof(), 1.0), &g).unwrap();
        let centre = g.nearest_node(&[0.5, 0.5]).unwrap();
        let exact = series(0.5, 0.5);
        assert!((exact - 0.0737).abs() < 1e-4);
        assert!((p[centre] - exact).abs() < 2e-3 * exact.max(1.0), "{} vs {exact}", p[centre]);
    }

    #[test]
    fn zero_level_set_gives_zero_pressure() {
        let g = unit_grid(12);
        let p = solve_levelset_poisson(&DVector::zeros(g.dof()), &g).unwrap();
        assert_eq!(p.amax(), 0.0);
    }

    #[test]
    fn boundary_nodes_are_zero_and_sign_flip_negates() {
        let g = unit_grid(10);
        let u = DVector::from_fn(g.dof(), |k, _| ((k * 7919) % 13) as f64 - 6.0);
        let p = solve_levelset_poisson(&u, &g).unwrap();
        let q = solve_levelset_poisson(&(-&u), &g).unwrap();
        assert_eq!(p, -q);
        for k in 0..g.dof() {
            if k % 10 == 9 || k / 10 == 9 {
                assert_eq!(p[k], 0.0);
            }
        }
    }

    #[test]
    fn observation_matrix_matches_direct_solve() {
        let prob = LevelSetProblem::new(16, 0.05).unwrap();
        let u = prob.truth();
        let full = prob.solver().solve(&sign_field(&u)).unwrap();
        let direct = DVector::from_iterator(9, prob.observation_nodes().iter().map(|&k| full[k]));
        assert!((prob.forward(&u).unwrap() - direct).amax() < 1e-12);
    }

    #[test]
    fn sign_convention_at_zero() {
        let s = sign_field(&DVector::from_vec(vec![-2.0, 0.0, 3.0, -0.0]));
        assert_eq!(s.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
    }
}
