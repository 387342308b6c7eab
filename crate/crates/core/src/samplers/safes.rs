use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::pcn::gpcn_step;
use super::{EnsembleState, ProposalRecord};
use crate::error::{Error, Result};
use crate::gauss::{deviation_matrix, GaussianMeasure, LowRankJump};
use crate::problems::Potential;
use crate::rng::ParticleStreams;

/// SAFES proposal with explicit noise:
/// `û = m + √(1−β²)(u − m) + β ξ + λ V_S z`.
pub fn safes_propose(
    u: &DVector<f64>,
    s: &[&DVector<f64>],
    mean: &DVector<f64>,
    beta: f64,
    lambda: f64,
    xi: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let v = deviation_matrix(s.iter().copied())?;
    if z.len() != v.len() {
        return Err(Error::invalid("one weight per ensemble member is required"));
    }
    let a = (1.0 - beta * beta).sqrt();
    let mut out = (u - mean) * a;
    out += mean;
    out += xi * beta;
    out += v.columns() * z * lambda;
    Ok(out)
}

/// Jump `N(m, C_* + γ² V_S V_Sᵀ)` with `S` the ensemble without particle `n`.
///
/// When `base` is the prior, `C_*⁻¹ V_S` is assembled from the cached
/// `C0⁻¹ u_j` of the members.
pub(crate) fn ensemble_jump(
    n: usize,
    state: &EnsembleState,
    gamma: f64,
    base: &Arc<GaussianMeasure>,
    mean: &DVector<f64>,
    prior: &Arc<GaussianMeasure>,
) -> Result<LowRankJump> {
    let d = prior.dim();
    let members: Vec<usize> = (0..state.len()).filter(|&j| j != n).collect();
    let s = members.len();
    if s < 2 {
        return LowRankJump::plain(base.clone(), mean.clone());
    }
    let v = deviation_matrix(members.iter().map(|&j| &state.particles[j].field))?;
    let base_prec_dev = if Arc::ptr_eq(base, prior) {
        let mut pv = DMatrix::zeros(d, s);
        let mut pmean = DVector::zeros(d);
        for &j in &members {
            pmean += &state.particles[j].prior_prec_field;
        }
        pmean /= s as f64;
        let scale = 1.0 / ((s - 1) as f64).sqrt();
        for (c, &j) in members.iter().enumerate() {
            let mut col = pv.column_mut(c);
            col.copy_from(&state.particles[j].prior_prec_field);
            col -= &pmean;
            col *= scale;
        }
        pv
    } else {
        base.precision() * v.columns()
    };
    let base_prec_mean = base.precision() * mean;
    LowRankJump::from_parts(base.clone(), mean.clone(), base_prec_mean, v.columns().clone(), base_prec_dev, gamma)
}

/// One SAFES update of particle `n` with `C_* = base`, jump mean `mean` and `γ = λ/β`.
#[allow(clippy::too_many_arguments)]
pub fn safes_step(
    n: usize,
    state: &mut EnsembleState,
    beta: f64,
    lambda: f64,
    base: &Arc<GaussianMeasure>,
    mean: &DVector<f64>,
    prior: &Arc<GaussianMeasure>,
    potential: &dyn Potential,
    streams: &mut ParticleStreams,
) -> Result<ProposalRecord> {
    if state.len() < 2 {
        return Err(Error::invalid("SAFES needs at least 2 particles"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("β must lie in (0, 1], got {beta}")));
    }
    let jump = ensemble_jump(n, state, lambda / beta, base, mean, prior)?;
    gpcn_step(&mut state.particles[n], beta, &jump, prior, potential, streams)
}
