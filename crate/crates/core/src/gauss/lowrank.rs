use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::measure::GaussianMeasure;
use crate::error::{Error, Result};

/// Capacitance matrices with a larger condition number are refused.
pub const MAX_CAPACITANCE_CONDITION: f64 = 1e12;

/// Normalized centred data matrix: column `j` is `(u_j − ū) / √(|S| − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationMatrix {
    columns: DMatrix<f64>,
    mean: DVector<f64>,
}

/// Builds the deviation matrix of `members`; needs at least two of them.
pub fn deviation_matrix<'a, I>(members: I) -> Result<DeviationMatrix>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let members: Vec<&DVector<f64>> = members.into_iter().collect();
    let s = members.len();
    if s < 2 {
        return Err(Error::invalid(format!(
            "deviation matrix needs at least 2 members, got {s}"
        )));
    }
    let d = members[0].len();
    if members.iter().any(|m| m.len() != d) {
        return Err(Error::invalid("deviation matrix members differ in length"));
    }
    let mut mean = DVector::zeros(d);
    for m in &members {
        mean += *m;
    }
    mean /= s as f64;
    let scale = 1.0 / ((s - 1) as f64).sqrt();
    let mut columns = DMatrix::zeros(d, s);
    for (j, m) in members.iter().enumerate() {
        let mut col = columns.column_mut(j);
        col.copy_from(*m);
        col -= &mean;
        col *= scale;
    }
    Ok(DeviationMatrix { columns, mean })
}

impl DeviationMatrix {
    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Number of members `|S|`.
    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    /// `V Vᵀ`, the unbiased sample covariance of the members.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        &self.columns * self.columns.transpose()
    }
}

/// Jump distribution `N(m, C)` with `C = C_* + γ² V Vᵀ`.
///
/// Only the `|S|×|S|` capacitance `γ⁻² I + Vᵀ C_*⁻¹ V` is ever factorized.
#[derive(Debug, Clone)]
pub struct LowRankJump {
    base: Arc<GaussianMeasure>,
    mean: DVector<f64>,
    base_prec_mean: DVector<f64>,
    mean_is_zero: bool,
    deviation: DMatrix<f64>,
    gamma: f64,
    capacitance: Option<Cholesky<f64, Dyn>>,
}

impl LowRankJump {
    /// Jump equal to the base measure (`γ = 0`), centred at `mean`.
    pub fn plain(base: Arc<GaussianMeasure>, mean: DVector<f64>) -> Result<Self> {
        let d = base.dim();
        Self::new(base, mean, DMatrix::zeros(d, 0), 0.0)
    }

    pub fn new(
        base: Arc<GaussianMeasure>,
        mean: DVector<f64>,
        deviation: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if deviation.nrows() != base.dim() || mean.len() != base.dim() {
            return Err(Error::invalid("jump mean/deviation shape does not match the base measure"));
        }
        let base_prec_mean = base.precision() * &mean;
        let base_prec_dev = base.precision() * &deviation;
        Self::from_parts(base, mean, base_prec_mean, deviation, base_prec_dev, gamma)
    }

    pub fn from_deviation(
        base: Arc<GaussianMeasure>,
        mean: DVector<f64>,
        deviation: &DeviationMatrix,
        gamma: f64,
    ) -> Result<Self> {
        Self::new(base, mean, deviation.columns().clone(), gamma)
    }

    /// Assembles a jump from precomputed `C_*⁻¹ m` and `C_*⁻¹ V`.
    pub(crate) fn from_parts(
        base: Arc<GaussianMeasure>,
        mean: DVector<f64>,
        base_prec_mean: DVector<f64>,
        deviation: DMatrix<f64>,
        base_prec_dev: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("jump scale γ must be finite and ≥ 0, got {gamma}")));
        }
        let capacitance = if gamma > 0.0 && deviation.ncols() > 0 {
            let mut k = deviation.transpose() * &base_prec_dev;
            k = (&k + k.transpose()) * 0.5;
            let inv_g2 = 1.0 / (gamma * gamma);
            for i in 0..k.nrows() {
                k[(i, i)] += inv_g2;
            }
            // eigenvalues of K lie in [γ⁻², γ⁻² + tr(VᵀC_*⁻¹V)]
            let bound = 1.0 + gamma * gamma * (k.trace() - k.nrows() as f64 * inv_g2).max(0.0);
            if bound > MAX_CAPACITANCE_CONDITION {
                let eig = SymmetricEigen::new(k.clone()).eigenvalues;
                let cond = eig.max() / eig.min();
                if !(cond <= MAX_CAPACITANCE_CONDITION) {
                    return Err(Error::numerical(format!(
                        "capacitance matrix is ill-conditioned (condition number {cond:e} > {MAX_CAPACITANCE_CONDITION:e}, γ = {gamma:e})"
                    )));
                }
            }
            Some(Cholesky::new(k).ok_or_else(|| {
                Error::numerical("capacitance matrix is not positive definite")
            })?)
        } else {
            None
        };
        let mean_is_zero = mean.iter().all(|&v| v == 0.0);
        Ok(Self {
            base,
            mean,
            base_prec_mean,
            mean_is_zero,
            deviation,
            gamma,
            capacitance,
        })
    }

    pub fn base(&self) -> &Arc<GaussianMeasure> {
        &self.base
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn deviation(&self) -> &DMatrix<f64> {
        &self.deviation
    }

    pub(crate) fn has_low_rank(&self) -> bool {
        self.capacitance.is_some()
    }

    /// Dense `C = C_* + γ² V Vᵀ`; intended for small problems and tests.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = self.base.covariance();
        if self.gamma > 0.0 {
            c += &self.deviation * self.deviation.transpose() * (self.gamma * self.gamma);
        }
        c
    }

    /// Jump noise `ξ = C_*^{1/2} ζ + γ V z`, distributed as `N(0, C)`.
    pub fn jump_noise(&self, zeta: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let mut xi = self.base.cov_sqrt() * zeta;
        if self.has_low_rank() {
            xi += &self.deviation * z * self.gamma;
        }
        xi
    }

    /// `I_C(u)` for a prior that is *not* necessarily the jump base.
    ///
    /// Equals `½‖u‖²_{C0} − ½‖u − m‖²_C`; the C-norm is expanded with the
    /// Woodbury identity so that only the capacitance is inverted.
    pub fn i_c(&self, u: &DVector<f64>, prior: &GaussianMeasure) -> f64 {
        let base_is_prior = std::ptr::eq(Arc::as_ptr(&self.base), prior);
        let pu_base = self.base.precision() * u;
        if base_is_prior {
            self.i_c_cached(u, &pu_base, None)
        } else {
            let pu_prior = prior.precision() * u;
            self.i_c_cached(u, &pu_base, Some(&pu_prior))
        }
    }

    /// `I_C(u)` from cached `C_*⁻¹ u` and, when the prior differs from the
    /// base, `C0⁻¹ u`. `None` means the prior is the base measure itself.
    pub(crate) fn i_c_cached(
        &self,
        u: &DVector<f64>,
        pu_base: &DVector<f64>,
        pu_prior: Option<&DVector<f64>>,
    ) -> f64 {
        let mut value = match pu_prior {
            None => {
                if self.mean_is_zero {
                    0.0
                } else {
                    pu_base.dot(&self.mean) - 0.5 * self.base_prec_mean.dot(&self.mean)
                }
            }
            Some(p0u) => {
                let d = u - &self.mean;
                let pd = pu_base - &self.base_prec_mean;
                0.5 * u.dot(p0u) - 0.5 * d.dot(&pd)
            }
        };
        if let Some(chol) = &self.capacitance {
            let pd = if self.mean_is_zero {
                self.deviation.tr_mul(pu_base)
            } else {
                self.deviation.tr_mul(&(pu_base - &self.base_prec_mean))
            };
            let sol = chol.solve(&pd);
            value += 0.5 * pd.dot(&sol);
        }
        value
    }
}

/// Free-function form of [`LowRankJump::i_c`].
pub fn i_c(u: &DVector<f64>, jump: &LowRankJump, prior: &GaussianMeasure) -> f64 {
    jump.i_c(u, prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::grid::{Boundary, GridSpec};
    use crate::rng::{standard_normal_vec, stream, Purpose};
    use rand::Rng;

    fn grid(d: usize) -> GridSpec {
        GridSpec::line(d as f64, d, Boundary::Neumann).unwrap()
    }

    fn random_spd<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    /// `½‖u‖²_{C0} − ½‖u − m‖²_C` with every inverse formed densely.
    fn dense_i_c(u: &DVector<f64>, jump: &LowRankJump, prior: &GaussianMeasure) -> f64 {
        let cinv = jump.covariance().try_inverse().unwrap();
        let d = u - jump.mean();
        0.5 * u.dot(&(prior.precision() * u)) - 0.5 * d.dot(&(&cinv * &d))
    }

    #[test]
    fn identical_members_give_zero_matrix() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let v = deviation_matrix([&u, &u, &u]).unwrap();
        assert_eq!(v.columns(), &DMatrix::zeros(3, 3));
    }

    #[test]
    fn small_sample_covariance_matches_loop() {
        let s = [
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![2.0, 0.0]),
            DVector::from_vec(vec![1.0, 3.0]),
        ];
        let v = deviation_matrix(s.iter()).unwrap();
        // loop oracle
        let mean = [1.0, 1.0];
        let mut cov = DMatrix::zeros(2, 2);
        for x in &s {
            for i in 0..2 {
                for j in 0..2 {
                    cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / 2.0;
                }
            }
        }
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        assert!((&cov - &expected).amax() < 1e-12);
        assert!((v.sample_covariance() - expected).amax() < 1e-12);
    }

    #[test]
    fn too_few_members_is_an_error() {
        let u = DVector::from_vec(vec![1.0]);
        assert!(deviation_matrix([&u]).is_err());
    }

    #[test]
    fn generic_rank_is_members_minus_one() {
        let mut rng = stream(2, Purpose::Diagnostics, 0);
        for s in 2..=6 {
            let members: Vec<DVector<f64>> = (0..s).map(|_| standard_normal_vec(&mut rng, 8)).collect();
            let v = deviation_matrix(members.iter()).unwrap();
            let sv = v.sample_covariance().svd(false, false).singular_values;
            let tol = 1e-10 * sv.max();
            assert_eq!(sv.iter().filter(|&&x| x > tol).count(), s - 1);
            let col_sum: DVector<f64> = v.columns().column_sum();
            assert!(col_sum.amax() < 1e-13);
        }
    }

    #[test]
    fn plain_pcn_jump_has_zero_correction() {
        let g = grid(5);
        let mut rng = stream(4, Purpose::Diagnostics, 0);
        let prior = Arc::new(GaussianMeasure::from_precision(&g, DVector::zeros(5), random_spd(&mut rng, 5)).unwrap());
        let jump = LowRankJump::plain(prior.clone(), DVector::zeros(5)).unwrap();
        for _ in 0..20 {
            let u = standard_normal_vec(&mut rng, 5) * 10.0;
            assert_eq!(jump.i_c(&u, &prior), 0.0);
        }
    }

    #[test]
    fn woodbury_matches_dense_formula() {
        let d = 6;
        let g = grid(d);
        let mut rng = stream(9, Purpose::Diagnostics, 0);
        let prior = GaussianMeasure::from_precision(&g, DVector::zeros(d), random_spd(&mut rng, d)).unwrap();
        let base = Arc::new(GaussianMeasure::from_precision(&g, DVector::zeros(d), random_spd(&mut rng, d)).unwrap());
        let members: Vec<DVector<f64>> = (0..4).map(|_| standard_normal_vec(&mut rng, d)).collect();
        let v = deviation_matrix(members.iter()).unwrap();
        let m = standard_normal_vec(&mut rng, d) * 0.3;
        let jump = LowRankJump::from_deviation(base, m, &v, 0.8).unwrap();
        let u = standard_normal_vec(&mut rng, d);
        let fast = jump.i_c(&u, &prior);
        let dense = dense_i_c(&u, &jump, &prior);
        assert!((fast - dense).abs() <= 1e-8 * dense.abs().max(1e-300), "{fast} vs {dense}");
    }

    #[test]
    fn centred_prior_base_reduces_to_small_matrix_form() {
        let d = 7;
        let g = grid(d);
        let mut rng = stream(10, Purpose::Diagnostics, 0);
        let prior = Arc::new(GaussianMeasure::from_precision(&g, DVector::zeros(d), random_spd(&mut rng, d)).unwrap());
        let members: Vec<DVector<f64>> = (0..5).map(|_| standard_normal_vec(&mut rng, d)).collect();
        let v = deviation_matrix(members.iter()).unwrap();
        let gamma = 1.7;
        let jump = LowRankJump::from_deviation(prior.clone(), DVector::zeros(d), &v, gamma).unwrap();
        let u = standard_normal_vec(&mut rng, d);
        // ½⟨VᵀP0u, (γ⁻²I + VᵀP0V)⁻¹ VᵀP0u⟩
        let p0 = prior.precision();
        let vv = v.columns();
        let w = vv.transpose() * p0 * &u;
        let small = DMatrix::identity(5, 5) / (gamma * gamma) + vv.transpose() * p0 * vv;
        let expected = 0.5 * w.dot(&(small.try_inverse().unwrap() * &w));
        let got = jump.i_c(&u, &prior);
        assert!((got - expected).abs() <= 1e-10 * expected.abs(), "{got} vs {expected}");
    }

    #[test]
    fn ill_conditioned_capacitance_is_refused() {
        let d = 4;
        let g = grid(d);
        let prior = Arc::new(GaussianMeasure::from_precision(&g, DVector::zeros(d), DMatrix::identity(d, d)).unwrap());
        let members = [
            DVector::from_vec(vec![1e3, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![-1e3, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0]),
        ];
        let v = deviation_matrix(members.iter()).unwrap();
        let err = LowRankJump::from_deviation(prior, DVector::zeros(d), &v, 1e5).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("condition number")));
    }
}
