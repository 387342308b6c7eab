use std::sync::Arc;

use nalgebra::DVector;

use super::{check_current, decide, Particle, ProposalRecord};
use crate::error::{Error, Result};
use crate::gauss::{GaussianMeasure, LowRankJump};
use crate::problems::Potential;
use crate::rng::{standard_normal_vec, ParticleStreams};

fn check_beta(beta: f64) -> Result<f64> {
    if beta > 0.0 && beta <= 1.0 {
        Ok((1.0 - beta * beta).sqrt())
    } else {
        Err(Error::invalid(format!("β must lie in (0, 1], got {beta}")))
    }
}

/// pCN: `û = m0 + √(1−β²)(u − m0) + β C0^{1/2} ζ`, accepted on `Φ(u) − Φ(û)`.
///
/// Operates on grid coefficients; the particle's working coordinates must be
/// its field.
pub fn pcn_step(
    particle: &mut Particle,
    beta: f64,
    prior: &GaussianMeasure,
    potential: &dyn Potential,
    streams: &mut ParticleStreams,
) -> Result<ProposalRecord> {
    let a = check_beta(beta)?;
    check_current(particle.phi)?;
    let zeta = standard_normal_vec(&mut streams.jump, prior.dim());
    let noise = prior.cov_sqrt() * zeta;
    let m = prior.mean();
    let mut proposal = (&particle.field - m) * a;
    proposal += m;
    proposal += noise * beta;
    let phi_hat = potential.phi(&proposal)?;
    let rec = decide(&mut streams.accept, proposal, particle.phi - phi_hat, 0.0);
    if rec.accepted {
        particle.set(rec.proposed.clone(), rec.proposed.clone(), phi_hat, prior);
    }
    Ok(rec)
}

/// gpCN with jump `N(m, C)`: `û = m + √(1−β²)(u − m) + β ξ`, `ξ ~ N(0, C)`.
///
/// Accepted on `Φ(u) − Φ(û) + I_C(u) − I_C(û)`. `ζ` comes from the jump stream
/// and the low-rank weights `z` from the ensemble stream.
pub fn gpcn_step(
    particle: &mut Particle,
    beta: f64,
    jump: &LowRankJump,
    prior: &Arc<GaussianMeasure>,
    potential: &dyn Potential,
    streams: &mut ParticleStreams,
) -> Result<ProposalRecord> {
    let a = check_beta(beta)?;
    check_current(particle.phi)?;
    let d = prior.dim();
    let zeta = standard_normal_vec(&mut streams.jump, d);
    let z = if jump.has_low_rank() {
        standard_normal_vec(&mut streams.ensemble, jump.deviation().ncols())
    } else {
        DVector::zeros(0)
    };
    let noise = jump.jump_noise(&zeta, &z);
    let m = jump.mean();
    let mut proposal = (&particle.field - m) * a;
    proposal += m;
    proposal += noise * beta;
    let phi_hat = potential.phi(&proposal)?;

    let base_is_prior = Arc::ptr_eq(jump.base(), prior);
    let (ic_u, ic_hat) = if base_is_prior {
        let p_hat = prior.precision() * &proposal;
        (
            jump.i_c_cached(&particle.field, &particle.prior_prec_field, None),
            jump.i_c_cached(&proposal, &p_hat, None),
        )
    } else {
        let base = jump.base().precision();
        let p_hat = prior.precision() * &proposal;
        (
            jump.i_c_cached(&particle.field, &(base * &particle.field), Some(&particle.prior_prec_field)),
            jump.i_c_cached(&proposal, &(base * &proposal), Some(&p_hat)),
        )
    };
    if !(ic_u.is_finite() && ic_hat.is_finite()) {
        return Err(Error::numerical("correction functional is not finite"));
    }
    let rec = decide(&mut streams.accept, proposal, particle.phi - phi_hat, ic_u - ic_hat);
    if rec.accepted {
        particle.set(rec.proposed.clone(), rec.proposed.clone(), phi_hat, prior);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{Boundary, GridSpec, PrecisionRecipe};
    use crate::problems::ZeroPotential;

    fn prior(d: usize) -> Arc<GaussianMeasure> {
        let g = GridSpec::line(1.0, d, Boundary::Neumann).unwrap();
        Arc::new(GaussianMeasure::from_recipe(&PrecisionRecipe::parse("inv:(I - lap)").unwrap(), &g, None).unwrap())
    }

    #[test]
    fn beta_one_under_flat_likelihood_is_an_independent_prior_draw() {
        let pr = prior(6);
        let mut p = Particle::new(DVector::from_element(6, 3.0), &pr, &ZeroPotential, false).unwrap();
        let mut streams = ParticleStreams::new(4, 0);
        let rec = pcn_step(&mut p, 1.0, &pr, &ZeroPotential, &mut streams).unwrap();
        assert_eq!(rec.acceptance_probability(), 1.0);
        assert!(rec.accepted);
        // same ζ stream gives the prior draw directly
        let draw = pr.draw(&mut ParticleStreams::new(4, 0).jump);
        assert!((rec.proposed - draw).amax() < 1e-14);
    }

    #[test]
    fn equal_likelihood_is_always_accepted() {
        let pr = prior(5);
        let pot = |_: &DVector<f64>| 7.25;
        let mut p = Particle::new(DVector::zeros(5), &pr, &pot, false).unwrap();
        let mut streams = ParticleStreams::new(1, 0);
        for _ in 0..50 {
            let rec = pcn_step(&mut p, 0.3, &pr, &pot, &mut streams).unwrap();
            assert_eq!(rec.acceptance_probability(), 1.0);
            assert!(rec.accepted);
        }
    }

    #[test]
    fn gpcn_with_prior_jump_accepts_everything_under_flat_likelihood() {
        let pr = prior(5);
        let jump = LowRankJump::plain(pr.clone(), DVector::zeros(5)).unwrap();
        let mut p = Particle::new(DVector::zeros(5), &pr, &ZeroPotential, false).unwrap();
        let mut streams = ParticleStreams::new(2, 0);
        for _ in 0..50 {
            assert!(gpcn_step(&mut p, 0.5, &jump, &pr, &ZeroPotential, &mut streams).unwrap().accepted);
        }
    }

    #[test]
    fn rejects_bad_beta_and_non_finite_state() {
        let pr = prior(3);
        let mut p = Particle::new(DVector::zeros(3), &pr, &ZeroPotential, false).unwrap();
        let mut streams = ParticleStreams::new(2, 0);
        assert!(pcn_step(&mut p, 0.0, &pr, &ZeroPotential, &mut streams).is_err());
        p.phi = f64::INFINITY;
        assert!(pcn_step(&mut p, 0.5, &pr, &ZeroPotential, &mut streams).is_err());
    }

    #[test]
    fn gpcn_trajectory_bit_matches_pcn() {
        let pr = prior(8);
        let pot = |u: &DVector<f64>| 0.5 * (u[2] - 1.0).powi(2) / 0.01;
        let jump = LowRankJump::plain(pr.clone(), DVector::zeros(8)).unwrap();
        let start = DVector::from_element(8, 0.1);
        let mut a = Particle::new(start.clone(), &pr, &pot, false).unwrap();
        let mut b = a.clone();
        let mut sa = ParticleStreams::new(9, 3);
        let mut sb = ParticleStreams::new(9, 3);
        for _ in 0..500 {
            let ra = pcn_step(&mut a, 0.4, &pr, &pot, &mut sa).unwrap();
            let rb = gpcn_step(&mut b, 0.4, &jump, &pr, &pot, &mut sb).unwrap();
            assert_eq!(ra.accepted, rb.accepted);
            assert_eq!(a.field.as_slice(), b.field.as_slice());
        }
    }
}
