use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normal_vec;

/// Monte Carlo estimate of a scalar expectation with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Estimates `E⟨ξ, Zξ⟩²` for `ξ ~ N(0, I)`.
///
/// Exists to check the fourth-moment identity against an independent route;
/// the exact value is `(tr Z)² + 2‖Z‖²_HS`.
pub fn quadratic_moment_mc<R: Rng + ?Sized>(z: &DMatrix<f64>, n_samples: usize, rng: &mut R) -> Result<McEstimate> {
    let d = z.nrows();
    if z.ncols() != d {
        return Err(Error::invalid("Z must be square"));
    }
    if d > 16 {
        return Err(Error::invalid(format!("Z has dimension {d}, at most 16 supported")));
    }
    if (z - z.transpose()).amax() > 1e-12 * z.amax().max(1.0) {
        return Err(Error::invalid("Z must be symmetric"));
    }
    if n_samples < 1000 {
        return Err(Error::invalid(format!("need at least 1000 samples, got {n_samples}")));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let xi = standard_normal_vec(rng, d);
        let q = xi.dot(&(z * &xi));
        let v = q * q;
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    })
}
