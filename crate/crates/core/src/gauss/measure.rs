use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use super::grid::{Field, GridSpec};
use super::recipe::{assemble_operator, PrecisionRecipe};
use crate::error::{Error, Result};
use crate::rng::standard_normal_vec;

/// Gaussian measure on grid coefficients.
///
/// `precision` is the coordinate precision matrix, i.e. `h^d` times the
/// operator assembled in the mesh-weighted inner product. The symmetric
/// factors `C^{1/2}` and `C^{-1/2}` come from one eigendecomposition and are
/// cached for the lifetime of the measure.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    grid: GridSpec,
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
    prec_sqrt: DMatrix<f64>,
    /// Covariance eigenvalues, decreasing.
    cov_eigenvalues: DVector<f64>,
    /// Matching orthonormal eigenvectors (Karhunen–Loève modes).
    modes: DMatrix<f64>,
}

impl GaussianMeasure {
    /// Prior `N(mean, C)` with `C⁻¹` given by `recipe` on `grid`.
    pub fn from_recipe(
        recipe: &PrecisionRecipe,
        grid: &GridSpec,
        mean: Option<DVector<f64>>,
    ) -> Result<Self> {
        let op = assemble_operator(recipe, grid)?;
        let precision = op * grid.cell_volume();
        let mean = mean.unwrap_or_else(|| DVector::zeros(grid.dof()));
        Self::from_precision(grid, mean, precision).map_err(|e| match e {
            Error::Numerical(m) => Error::numerical(format!("recipe `{recipe}`: {m}")),
            other => other,
        })
    }

    /// Measure from an explicit coordinate precision matrix.
    pub fn from_precision(grid: &GridSpec, mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let n = grid.dof();
        if precision.nrows() != n || precision.ncols() != n || mean.len() != n {
            return Err(Error::invalid("precision/mean shape does not match the grid"));
        }
        let precision = (&precision + precision.transpose()) * 0.5;
        let eig = SymmetricEigen::new(precision.clone());
        let min = eig.eigenvalues.min();
        if !(min > 0.0) || !eig.eigenvalues.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical(format!(
                "precision is not positive definite (smallest eigenvalue {min:e})"
            )));
        }
        Ok(Self::from_eigen(grid, mean, precision, eig.eigenvalues, eig.eigenvectors))
    }

    /// Measure from an explicit SPD covariance matrix.
    pub fn from_covariance(grid: &GridSpec, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = grid.dof();
        if covariance.nrows() != n || covariance.ncols() != n || mean.len() != n {
            return Err(Error::invalid("covariance/mean shape does not match the grid"));
        }
        let cov = (&covariance + covariance.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov);
        let min = eig.eigenvalues.min();
        if !(min > 0.0) {
            return Err(Error::numerical(format!(
                "covariance is not positive definite (smallest eigenvalue {min:e})"
            )));
        }
        let prec_vals = eig.eigenvalues.map(|v| 1.0 / v);
        let precision = &eig.eigenvectors * DMatrix::from_diagonal(&prec_vals) * eig.eigenvectors.transpose();
        let precision = (&precision + precision.transpose()) * 0.5;
        Ok(Self::from_eigen(grid, mean, precision, prec_vals, eig.eigenvectors))
    }

    fn from_eigen(
        grid: &GridSpec,
        mean: DVector<f64>,
        precision: DMatrix<f64>,
        prec_vals: DVector<f64>,
        vectors: DMatrix<f64>,
    ) -> Self {
        let n = prec_vals.len();
        // order modes by decreasing covariance eigenvalue = increasing precision eigenvalue
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| prec_vals[a].total_cmp(&prec_vals[b]));
        let modes = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
        let pv = DVector::from_iterator(n, order.iter().map(|&i| prec_vals[i]));
        let cov_eigenvalues = pv.map(|v| 1.0 / v);
        let scaled = |f: &dyn Fn(f64) -> f64| {
            let mut left = modes.clone();
            for (c, mut col) in left.column_iter_mut().enumerate() {
                col *= f(pv[c]);
            }
            let m = &left * modes.transpose();
            (&m + m.transpose()) * 0.5
        };
        let cov_sqrt = scaled(&|v| 1.0 / v.sqrt());
        let prec_sqrt = scaled(&|v| v.sqrt());
        Self {
            grid: grid.clone(),
            mean,
            precision,
            cov_sqrt,
            prec_sqrt,
            cov_eigenvalues,
            modes,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn is_centered(&self) -> bool {
        self.mean.iter().all(|&v| v == 0.0)
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Symmetric `C^{1/2}`.
    pub fn cov_sqrt(&self) -> &DMatrix<f64> {
        &self.cov_sqrt
    }

    /// Symmetric `C^{-1/2}`.
    pub fn prec_sqrt(&self) -> &DMatrix<f64> {
        &self.prec_sqrt
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_sqrt * &self.cov_sqrt
    }

    /// Covariance eigenvalues in decreasing order.
    pub fn cov_eigenvalues(&self) -> &DVector<f64> {
        &self.cov_eigenvalues
    }

    /// The leading `m` Karhunen–Loève modes as orthonormal columns.
    pub fn kl_modes(&self, m: usize) -> DMatrix<f64> {
        self.modes.columns(0, m.min(self.dim())).into_owned()
    }

    /// One draw of the coefficient vector.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let zeta = standard_normal_vec(rng, self.dim());
        &self.mean + &self.cov_sqrt * zeta
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Field {
        Field::new(self.grid.clone(), self.draw(rng)).expect("draw has grid length")
    }

    /// `‖u − mean‖²_C = (u − mean)ᵀ C⁻¹ (u − mean)`.
    pub fn cameron_martin_sq(&self, u: &DVector<f64>) -> f64 {
        let d = u - &self.mean;
        d.dot(&(&self.precision * &d))
    }

    /// Maps to white coordinates, `C^{-1/2}(u − mean)`.
    pub fn whiten_coeffs(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.prec_sqrt * (u - &self.mean)
    }

    /// Maps white coordinates back, `mean + C^{1/2} ξ`.
    pub fn unwhiten_coeffs(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.cov_sqrt * xi
    }

    pub fn whiten(&self, u: &Field) -> Field {
        Field::new(self.grid.clone(), self.whiten_coeffs(u.coeffs())).expect("grid length")
    }

    pub fn unwhiten(&self, xi: &Field) -> Field {
        Field::new(self.grid.clone(), self.unwhiten_coeffs(xi.coeffs())).expect("grid length")
    }
}
