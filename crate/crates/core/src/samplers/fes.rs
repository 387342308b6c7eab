use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{check_current, decide, EnsembleState, ProposalRecord};
use crate::error::{Error, Result};
use crate::gauss::GaussianMeasure;
use crate::problems::Potential;
use crate::rng::{standard_normal_vec, ParticleStreams};

/// Fixed reference basis of FES: the leading prior KL modes, which are also
/// orthonormal directions in whitened coordinates.
#[derive(Debug, Clone)]
pub struct FesContext {
    modes: DMatrix<f64>,
    stretch_a: f64,
}

impl FesContext {
    pub fn new(prior: &GaussianMeasure, m: usize, stretch_a: f64) -> Result<Self> {
        if m > prior.dim() {
            return Err(Error::invalid(format!("FES subspace dimension {m} exceeds the state dimension")));
        }
        if !(stretch_a > 1.0) {
            return Err(Error::invalid(format!("stretch parameter must exceed 1, got {stretch_a}")));
        }
        Ok(Self {
            modes: prior.kl_modes(m),
            stretch_a,
        })
    }

    pub fn dim(&self) -> usize {
        self.modes.ncols()
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }
}

/// Inverse-CDF draw from `g(z) ∝ z^{-1/2}` on `[1/a, a]`.
pub fn stretch_factor(a: f64, uniform: f64) -> f64 {
    let t = (a - 1.0) * uniform + 1.0;
    t * t / a
}

/// One FES update of particle `n` in whitened coordinates.
///
/// A stretch move on the mode coefficients (skipped when `M = 0`), then a pCN
/// move on the complement. Returns both records.
#[allow(clippy::too_many_arguments)]
pub fn fes_step(
    n: usize,
    state: &mut EnsembleState,
    beta: f64,
    ctx: &FesContext,
    prior: &GaussianMeasure,
    potential: &dyn Potential,
    streams: &mut ParticleStreams,
) -> Result<(Option<ProposalRecord>, ProposalRecord)> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("β must lie in (0, 1], got {beta}")));
    }
    check_current(state.particles[n].phi)?;
    let modes = &ctx.modes;
    let m = ctx.dim();
    let stretch = if m > 0 {
        let others = state.len() - 1;
        if others < 2 {
            return Err(Error::invalid("FES needs at least 3 particles"));
        }
        let r = streams.ensemble.random_range(0..others);
        let partner = if r >= n { r + 1 } else { r };
        let z = stretch_factor(ctx.stretch_a, streams.ensemble.random());
        let w = &state.particles[n].coords;
        let a_cur = modes.tr_mul(w);
        let a_partner = modes.tr_mul(&state.particles[partner].coords);
        let a_new = &a_partner + (&a_cur - &a_partner) * z;
        let proposal = w + modes * (&a_new - &a_cur);
        let field = prior.unwhiten_coeffs(&proposal);
        let phi_hat = potential.phi(&field)?;
        let correction =
            (m as f64 - 1.0) * z.ln() + 0.5 * a_cur.norm_squared() - 0.5 * a_new.norm_squared();
        let rec = decide(&mut streams.accept, field, state.particles[n].phi - phi_hat, correction);
        if rec.accepted {
            state.particles[n].set(proposal, rec.proposed.clone(), phi_hat, prior);
        }
        Some(rec)
    } else {
        None
    };

    let d = prior.dim();
    let zeta = standard_normal_vec(&mut streams.jump, d);
    let w = &state.particles[n].coords;
    let (low, comp_noise) = if m > 0 {
        let low = modes * modes.tr_mul(w);
        let noise = &zeta - modes * modes.tr_mul(&zeta);
        (low, noise)
    } else {
        (DVector::zeros(d), zeta)
    };
    let a = (1.0 - beta * beta).sqrt();
    let mut proposal = (w - &low) * a;
    proposal += &low;
    proposal += comp_noise * beta;
    let field = prior.unwhiten_coeffs(&proposal);
    let phi_hat = potential.phi(&field)?;
    let rec = decide(&mut streams.accept, field, state.particles[n].phi - phi_hat, 0.0);
    if rec.accepted {
        state.particles[n].set(proposal, rec.proposed.clone(), phi_hat, prior);
    }
    Ok((stretch, rec))
}
