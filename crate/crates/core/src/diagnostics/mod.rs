//! Chain diagnostics: averaged autocorrelation, MPSRF, moment errors and span leakage.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Particle-averaged normalized autocorrelation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrCurve {
    pub values: Vec<f64>,
    pub integrated_time: f64,
}

impl AutocorrCurve {
    pub fn max_lag(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// Default maximum lag `min(5000, K/10)`.
pub fn default_max_lag(len: usize) -> usize {
    (len / 10).min(5000)
}

/// `c(j) = N⁻¹ Σ_n c_j⁽ⁿ⁾ / c_0⁽ⁿ⁾`, `c_j⁽ⁿ⁾ = K⁻¹ Σ_{k<K−j} (g_k − ḡ)(g_{k+j} − ḡ)`.
pub fn autocorrelation(series: &[Vec<f64>], max_lag: usize) -> Result<AutocorrCurve> {
    if series.is_empty() {
        return Err(Error::invalid("autocorrelation needs at least one series"));
    }
    let mut acc = vec![0.0; max_lag + 1];
    for (n, s) in series.iter().enumerate() {
        let k = s.len();
        if k <= max_lag {
            return Err(Error::invalid(format!(
                "series {n} has {k} samples, need more than the maximum lag {max_lag}"
            )));
        }
        let mean = s.iter().sum::<f64>() / k as f64;
        let centred: Vec<f64> = s.iter().map(|v| v - mean).collect();
        let c0: f64 = centred.iter().map(|v| v * v).sum::<f64>() / k as f64;
        if !(c0 > 0.0) {
            return Err(Error::numerical(format!("series {n} is constant")));
        }
        acc[0] += 1.0;
        for (j, slot) in acc.iter_mut().enumerate().skip(1) {
            let cj: f64 = centred[..k - j].iter().zip(&centred[j..]).map(|(a, b)| a * b).sum::<f64>() / k as f64;
            *slot += cj / c0;
        }
    }
    let n = series.len() as f64;
    let values: Vec<f64> = acc.into_iter().map(|v| v / n).collect();
    let integrated_time = integrated_time(&values);
    Ok(AutocorrCurve {
        values,
        integrated_time,
    })
}

/// `τ = −1 + 2 Σ_m (c(2m) + c(2m+1))`, stopped before the first negative pair.
pub fn integrated_time(c: &[f64]) -> f64 {
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < c.len() {
        let pair = c[2 * m] + c[2 * m + 1];
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    tau
}

/// Brooks–Gelman multivariate potential scale reduction factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsrfResult {
    pub value: f64,
    pub chains: usize,
    pub length: usize,
    /// Dimension the statistic was computed in.
    pub dim: usize,
    /// Original dimension when the chains were projected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected_from: Option<usize>,
    /// `λ_max(W⁻¹ B/n)`.
    pub lambda_max: f64,
    pub within_min_eigenvalue: f64,
    pub within_max_eigenvalue: f64,
}

fn check_chains(chains: &[Vec<DVector<f64>>]) -> Result<(usize, usize, usize)> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::invalid(format!("MPSRF needs at least 2 chains, got {m}")));
    }
    let n = chains[0].len();
    if n < 10 {
        return Err(Error::invalid(format!("MPSRF needs chains of length ≥ 10, got {n}")));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("MPSRF chains must have equal lengths"));
    }
    let p = chains[0][0].len();
    if chains.iter().flatten().any(|x| x.len() != p) {
        return Err(Error::invalid("MPSRF samples differ in dimension"));
    }
    Ok((m, n, p))
}

/// `R = (n−1)/n + (m+1)/m · λ_max(W⁻¹ B/n)` in the full sample dimension.
pub fn mpsrf(chains: &[Vec<DVector<f64>>]) -> Result<MpsrfResult> {
    let (m, n, p) = check_chains(chains)?;
    let mut w = DMatrix::zeros(p, p);
    let mut means = Vec::with_capacity(m);
    for chain in chains {
        let mut mean = DVector::zeros(p);
        for x in chain {
            mean += x;
        }
        mean /= n as f64;
        let mut dev = DMatrix::zeros(p, n);
        for (k, x) in chain.iter().enumerate() {
            dev.set_column(k, &(x - &mean));
        }
        w += &dev * dev.transpose() / (n - 1) as f64;
        means.push(mean);
    }
    w /= m as f64;
    let mut grand = DVector::zeros(p);
    for mu in &means {
        grand += mu;
    }
    grand /= m as f64;
    let mut b_over_n = DMatrix::zeros(p, p);
    for mu in &means {
        let d = mu - &grand;
        b_over_n += &d * d.transpose();
    }
    b_over_n /= (m - 1) as f64;

    let w = (&w + w.transpose()) * 0.5;
    let w_eig = SymmetricEigen::new(w.clone()).eigenvalues;
    let (wmin, wmax) = (w_eig.min(), w_eig.max());
    let chol = Cholesky::new(w).filter(|_| wmin > 1e-14 * wmax.abs().max(f64::MIN_POSITIVE)).ok_or_else(|| {
        Error::numerical(format!(
            "within-chain covariance is singular (eigenvalues {wmin:e}..{wmax:e}); reduce the projection dimension"
        ))
    })?;
    let l = chol.l();
    let linv_b = l
        .solve_lower_triangular(&b_over_n)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let whitened = l
        .solve_lower_triangular(&linv_b.transpose())
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let lambda_max = SymmetricEigen::new(whitened).eigenvalues.max().max(0.0);
    let value = (n - 1) as f64 / n as f64 + (m + 1) as f64 / m as f64 * lambda_max;
    Ok(MpsrfResult {
        value,
        chains: m,
        length: n,
        dim: p,
        projected_from: None,
        lambda_max,
        within_min_eigenvalue: wmin,
        within_max_eigenvalue: wmax,
    })
}

/// MPSRF after projecting onto the leading `max_dim` principal components of
/// the pooled samples, when the dimension exceeds `max_dim`.
pub fn mpsrf_projected(chains: &[Vec<DVector<f64>>], max_dim: usize) -> Result<MpsrfResult> {
    let (_, _, p) = check_chains(chains)?;
    if max_dim == 0 {
        return Err(Error::config("mpsrf_dim", "projection dimension must be positive"));
    }
    if p <= max_dim {
        return mpsrf(chains);
    }
    let pooled: Vec<&DVector<f64>> = chains.iter().flatten().collect();
    let total = pooled.len();
    let mut mean = DVector::zeros(p);
    for x in &pooled {
        mean += *x;
    }
    mean /= total as f64;
    let mut cov = DMatrix::zeros(p, p);
    for x in &pooled {
        let d = *x - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (total - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_fn(p, max_dim, |r, c| eig.eigenvectors[(r, order[c])]);
    let projected: Vec<Vec<DVector<f64>>> = chains
        .iter()
        .map(|c| c.iter().map(|x| basis.tr_mul(x)).collect())
        .collect();
    let mut res = mpsrf(&projected)?;
    res.projected_from = Some(p);
    Ok(res)
}

/// Relative errors of pooled sample moments against exact ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    pub rel_mean_error: f64,
    pub rel_cov_error: f64,
}

/// Sample mean and unbiased covariance.
pub fn sample_moments(samples: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {}", samples.len())));
    }
    let p = samples[0].len();
    let mut mean = DVector::zeros(p);
    for x in samples {
        mean += x;
    }
    mean /= samples.len() as f64;
    let mut cov = DMatrix::zeros(p, p);
    for x in samples {
        let d = x - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (samples.len() - 1) as f64;
    Ok((mean, cov))
}

/// `‖ū − m‖/‖m‖` and `‖Ĉ − C‖_F/‖C‖_F`.
pub fn moment_errors(samples: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<MomentErrors> {
    let (m_hat, c_hat) = sample_moments(samples)?;
    if m_hat.len() != mean.len() || c_hat.shape() != cov.shape() {
        return Err(Error::invalid("sample dimension differs from the reference moments"));
    }
    let mn = mean.norm();
    let rel_mean_error = if mn > 0.0 { (&m_hat - mean).norm() / mn } else { m_hat.norm() };
    Ok(MomentErrors {
        rel_mean_error,
        rel_cov_error: (&c_hat - cov).norm() / cov.norm(),
    })
}

/// Orthogonal distance of each sample from the affine span of `initial`.
pub fn span_distance(samples: &[DVector<f64>], initial: &[DVector<f64>]) -> Result<Vec<f64>> {
    if initial.len() < 2 {
        return Err(Error::invalid("span needs at least 2 initial particles"));
    }
    let p = initial[0].len();
    let mut centre = DVector::zeros(p);
    for x in initial {
        centre += x;
    }
    centre /= initial.len() as f64;
    let mut dev = DMatrix::zeros(p, initial.len());
    for (j, x) in initial.iter().enumerate() {
        dev.set_column(j, &(x - &centre));
    }
    // column-pivoted QR: |R_ii| is non-increasing, so the rank cut is a prefix
    let qr = dev.col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let top = diag.first().copied().unwrap_or(0.0);
    let rank = diag.iter().take_while(|&&v| top > 0.0 && v > 1e-12 * top).count();
    let basis = qr.q().columns(0, rank).into_owned();
    Ok(samples
        .iter()
        .map(|x| {
            let d = x - &centre;
            (&d - &basis * basis.tr_mul(&d)).norm()
        })
        .collect())
}

/// Batch-means standard error of the mean of `series`.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(series.len());
    let len = series.len() / b;
    if len == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b)
        .map(|i| series[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream, Purpose};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(seed: u64, k: usize) -> Vec<f64> {
        let mut rng = stream(seed, Purpose::Diagnostics, 0);
        (0..k).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn white_noise_has_small_autocorrelation() {
        let c = autocorrelation(&[white(1, 100_000)], 50).unwrap();
        assert_eq!(c.values[0], 1.0);
        assert!(c.values[1..].iter().all(|v| v.abs() <= 0.02));
    }

    #[test]
    fn ar1_autocorrelation_matches_geometric_decay() {
        let mut rng = stream(2, Purpose::Diagnostics, 0);
        let rho: f64 = 0.9;
        let mut x = 0.0;
        let mut s = Vec::with_capacity(200_000);
        for _ in 0..200_000 {
            let e: f64 = StandardNormal.sample(&mut rng);
            x = rho * x + (1.0 - rho * rho).sqrt() * e;
            s.push(x);
        }
        let c = autocorrelation(&[s], 20).unwrap();
        for j in 0..=20 {
            assert!((c.values[j] - rho.powi(j as i32)).abs() < 0.02, "lag {j}");
        }
    }

    #[test]
    fn spike_series_is_normalized_and_constant_is_rejected() {
        let mut s = vec![1.0; 100];
        s[40] = 5.0;
        assert_eq!(autocorrelation(&[s], 5).unwrap().values[0], 1.0);
        assert!(autocorrelation(&[vec![2.0; 100]], 5).is_err());
        assert!(autocorrelation(&[vec![2.0; 5]], 5).is_err());
    }

    #[test]
    fn integrated_time_of_white_noise_is_one() {
        let mut c = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(integrated_time(&c), 1.0);
        c[1] = 0.5;
        c[2] = 0.25;
        c[3] = -0.3;
        assert_eq!(integrated_time(&c), -1.0 + 2.0 * 1.5);
    }

    fn iid_chains(m: usize, n: usize, p: usize, seed: u64) -> Vec<Vec<DVector<f64>>> {
        (0..m)
            .map(|j| {
                let mut rng = stream(seed, Purpose::Diagnostics, j as u32);
                (0..n).map(|_| standard_normal_vec(&mut rng, p)).collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_give_mpsrf_near_one() {
        let r = mpsrf(&iid_chains(4, 10_000, 3, 3)).unwrap();
        assert!(r.value < 1.05, "{}", r.value);
    }

    #[test]
    fn separated_chains_give_large_mpsrf() {
        let mut chains = iid_chains(2, 1000, 2, 4);
        for x in &mut chains[0] {
            x.add_scalar_mut(10.0);
        }
        for x in &mut chains[1] {
            x.add_scalar_mut(-10.0);
        }
        assert!(mpsrf(&chains).unwrap().value > 5.0);
    }

    #[test]
    fn halves_of_one_stream_agree() {
        let all = iid_chains(1, 20_000, 3, 5).pop().unwrap();
        let chains = vec![all[..10_000].to_vec(), all[10_000..].to_vec()];
        let r = mpsrf(&chains).unwrap().value;
        assert!((1.0..=1.1).contains(&r) || (r - 1.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn mpsrf_is_affine_invariant() {
        let chains = iid_chains(3, 500, 4, 6);
        let mut rng = stream(7, Purpose::Diagnostics, 9);
        let a = DMatrix::from_fn(4, 4, |r, c| if r == c { 2.0 } else { 0.0 } + rng.random_range(-0.5..0.5));
        let b = standard_normal_vec(&mut rng, 4);
        let mapped: Vec<Vec<DVector<f64>>> = chains
            .iter()
            .map(|c| c.iter().map(|x| &a * x + &b).collect())
            .collect();
        let r1 = mpsrf(&chains).unwrap().value;
        let r2 = mpsrf(&mapped).unwrap().value;
        assert!((r1 - r2).abs() < 1e-8);
    }

    #[test]
    fn singular_within_covariance_is_an_error() {
        let mut chains = iid_chains(2, 50, 3, 8);
        for c in &mut chains {
            for x in c.iter_mut() {
                x[2] = x[0];
            }
        }
        assert!(matches!(mpsrf(&chains), Err(Error::Numerical(_))));
    }

    #[test]
    fn projection_reports_dimension() {
        let r = mpsrf_projected(&iid_chains(3, 300, 12, 10), 5).unwrap();
        assert_eq!(r.dim, 5);
        assert_eq!(r.projected_from, Some(12));
    }

    #[test]
    fn moment_error_edge_cases() {
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let e = moment_errors(&vec![m.clone(); 10], &m, &c).unwrap();
        assert_eq!(e.rel_mean_error, 0.0);
        assert_eq!(e.rel_cov_error, 1.0);
        assert!(moment_errors(&[m.clone()], &m, &c).is_err());
    }

    #[test]
    fn span_distance_of_constructed_points() {
        let init = vec![
            DVector::from_vec(vec![0.0, 0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
        ];
        let inside = DVector::from_vec(vec![0.3, -2.0, 0.0]);
        let out = DVector::from_vec(vec![0.3, -2.0, 0.7]);
        let d = span_distance(&[inside, out], &init).unwrap();
        assert!(d[0] < 1e-12);
        assert!((d[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn batch_means_of_white_noise() {
        let s = white(11, 100_000);
        let se = batch_means_se(&s, 50);
        assert!((se - 1.0 / (100_000f64).sqrt()).abs() < 0.3 / (100_000f64).sqrt());
    }
}
