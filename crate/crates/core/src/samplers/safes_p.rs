use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{check_current, decide, EnsembleState, ProposalRecord};
use crate::error::{Error, Result};
use crate::gauss::{deviation_matrix, GaussianMeasure};
use crate::problems::Potential;
use crate::rng::{standard_normal_vec, ParticleStreams};

/// Retained eigenvalues of `V Vᵀ` must exceed this fraction of the largest.
pub const RANK_GUARD: f64 = 1e-12;

/// Leading eigenpairs `(U_M, Σ_M)` of the sample covariance `V_S V_Sᵀ`, in whitened coordinates.
#[derive(Debug, Clone)]
pub struct SubspaceJump {
    basis: DMatrix<f64>,
    /// Eigenvalues of `V_S V_Sᵀ`, decreasing.
    sigma: DVector<f64>,
    gamma: f64,
    /// True when fewer than the requested `M` pairs survived the guard.
    pub guarded: bool,
}

impl SubspaceJump {
    /// Works from the `|S|×|S|` Gram matrix `V_Sᵀ V_S`; its nonzero spectrum is that of `V_S V_Sᵀ`.
    pub fn new(members: &[&DVector<f64>], m: usize, gamma: f64) -> Result<Self> {
        let d = members.first().map_or(0, |v| v.len());
        if members.len() < 2 || m == 0 {
            return Ok(Self {
                basis: DMatrix::zeros(d, 0),
                sigma: DVector::zeros(0),
                gamma,
                guarded: m > 0,
            });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("jump scale γ must be positive, got {gamma}")));
        }
        let v = deviation_matrix(members.iter().copied())?;
        let gram = v.columns().tr_mul(v.columns());
        let gram = (&gram + gram.transpose()) * 0.5;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]];
        let kept: Vec<usize> = order
            .into_iter()
            .filter(|&i| top > 0.0 && eig.eigenvalues[i] > RANK_GUARD * top)
            .take(m)
            .collect();
        let guarded = kept.len() < m;
        let mut basis = DMatrix::zeros(d, kept.len());
        let mut sigma = DVector::zeros(kept.len());
        for (c, &i) in kept.iter().enumerate() {
            let s2 = eig.eigenvalues[i];
            let col = v.columns() * eig.eigenvectors.column(i) / s2.sqrt();
            basis.set_column(c, &col);
            sigma[c] = s2;
        }
        Ok(Self {
            basis,
            sigma,
            gamma,
            guarded,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// `û = m + √(1−β²)(w − m) + β [U_M (γ Σ_M^{1/2} − I) U_Mᵀ ξ + ξ]`.
    pub fn propose(&self, w: &DVector<f64>, mean: &DVector<f64>, beta: f64, xi: &DVector<f64>) -> DVector<f64> {
        let a = (1.0 - beta * beta).sqrt();
        let mut noise = xi.clone();
        if self.dim() > 0 {
            let mut t = self.basis.tr_mul(xi);
            for (ti, s2) in t.iter_mut().zip(self.sigma.iter()) {
                *ti *= self.gamma * s2.sqrt() - 1.0;
            }
            noise += &self.basis * t;
        }
        let mut out = (w - mean) * a;
        out += mean;
        out += noise * beta;
        out
    }

    /// `J(U_Mᵀ w) = ½‖z‖² − (2γ²)⁻¹ ⟨z, Σ_M⁻¹ z⟩`.
    pub fn j(&self, w: &DVector<f64>) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let z = self.basis.tr_mul(w);
        let g2 = self.gamma * self.gamma;
        z.iter()
            .zip(self.sigma.iter())
            .map(|(zi, s2)| 0.5 * zi * zi - zi * zi / (2.0 * g2 * s2))
            .sum()
    }
}

/// One SAFES-P update of particle `n`; particles carry whitened coordinates.
#[allow(clippy::too_many_arguments)]
pub fn safes_p_step(
    n: usize,
    state: &mut EnsembleState,
    beta: f64,
    lambda: f64,
    m: usize,
    prior: &GaussianMeasure,
    potential: &dyn Potential,
    streams: &mut ParticleStreams,
) -> Result<ProposalRecord> {
    if state.len() < 2 {
        return Err(Error::invalid("SAFES-P needs at least 2 particles"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("β must lie in (0, 1], got {beta}")));
    }
    check_current(state.particles[n].phi)?;
    let gamma = lambda / beta;
    let m = if lambda > 0.0 { m } else { 0 };
    let jump = SubspaceJump::new(&state.others(n), m, gamma)?;
    let d = prior.dim();
    let xi = standard_normal_vec(&mut streams.jump, d);
    let current = &state.particles[n];
    let zero = DVector::zeros(d);
    let proposal = jump.propose(&current.coords, &zero, beta, &xi);
    let field = prior.unwhiten_coeffs(&proposal);
    let phi_hat = potential.phi(&field)?;
    let dj = jump.j(&current.coords) - jump.j(&proposal);
    if !dj.is_finite() {
        return Err(Error::numerical("subspace correction is not finite"));
    }
    let mut rec = decide(&mut streams.accept, field, current.phi - phi_hat, dj);
    rec.rank_guarded = jump.guarded && lambda > 0.0;
    if rec.accepted {
        state.particles[n].set(proposal, rec.proposed.clone(), phi_hat, prior);
    }
    Ok(rec)
}
