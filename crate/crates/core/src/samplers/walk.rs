use nalgebra::DVector;
use rand::Rng;

use super::{acceptance_probability, check_current, decide, EnsembleState, ProposalRecord};
use crate::error::{Error, Result};
use crate::gauss::GaussianMeasure;
use crate::problems::Potential;
use crate::rng::{standard_normal_vec, ParticleStreams};

/// Walk move with explicit weights: `û = u + λ |S|^{-1/2} Σ_j z_j (u_j − ū_S)`.
pub fn walk_propose_with(u: &DVector<f64>, s: &[&DVector<f64>], lambda: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
    if s.len() < 2 {
        return Err(Error::invalid(format!("walk move needs at least 2 ensemble members, got {}", s.len())));
    }
    if z.len() != s.len() {
        return Err(Error::invalid("one weight per ensemble member is required"));
    }
    let mut mean = DVector::zeros(u.len());
    for m in s {
        mean += *m;
    }
    mean /= s.len() as f64;
    let mut step = DVector::zeros(u.len());
    for (m, &zj) in s.iter().zip(z.iter()) {
        step += (*m - &mean) * zj;
    }
    Ok(u + step * (lambda / (s.len() as f64).sqrt()))
}

/// Walk move with `z_j ~ N(0, 1)` drawn from `rng`.
pub fn walk_propose<R: Rng + ?Sized>(u: &DVector<f64>, s: &[&DVector<f64>], lambda: f64, rng: &mut R) -> Result<DVector<f64>> {
    let z = standard_normal_vec(rng, s.len());
    walk_propose_with(u, s, lambda, &z)
}

/// Log acceptance ratio of the walk move against prior times likelihood.
fn walk_log_ratio(u: &DVector<f64>, proposal: &DVector<f64>, phi_u: f64, phi_hat: f64, prior: &GaussianMeasure) -> (f64, f64) {
    let prior_term = 0.5 * prior.cameron_martin_sq(u) - 0.5 * prior.cameron_martin_sq(proposal);
    (phi_u - phi_hat, prior_term)
}

/// `min{1, exp(Φ(u) − Φ(û) + ½‖u‖²_{C0} − ½‖û‖²_{C0})}`.
pub fn aies_accept(u: &DVector<f64>, proposal: &DVector<f64>, phi_u: f64, phi_hat: f64, prior: &GaussianMeasure) -> Result<f64> {
    if !phi_u.is_finite() || phi_hat.is_nan() {
        return Err(Error::numerical("non-finite likelihood in walk-move acceptance"));
    }
    let (dphi, dprior) = walk_log_ratio(u, proposal, phi_u, phi_hat, prior);
    Ok(acceptance_probability(dphi + dprior))
}

/// One walk-move update of particle `n` against the rest of the ensemble.
pub fn aies_step(
    n: usize,
    state: &mut EnsembleState,
    lambda: f64,
    prior: &GaussianMeasure,
    potential: &dyn Potential,
    streams: &mut ParticleStreams,
) -> Result<ProposalRecord> {
    let current = &state.particles[n];
    check_current(current.phi)?;
    let others = state.others(n);
    let proposal = walk_propose(&current.field, &others, lambda, &mut streams.ensemble)?;
    let phi_hat = potential.phi(&proposal)?;
    let (dphi, dprior) = walk_log_ratio(&current.field, &proposal, current.phi, phi_hat, prior);
    let rec = decide(&mut streams.accept, proposal, dphi, dprior);
    if rec.accepted {
        state.particles[n].set(rec.proposed.clone(), rec.proposed.clone(), phi_hat, prior);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{Boundary, GridSpec, PrecisionRecipe};
    use crate::rng::{stream, Purpose};
    use nalgebra::DMatrix;

    fn vecs(rows: &[[f64; 3]]) -> Vec<DVector<f64>> {
        rows.iter().map(|r| DVector::from_row_slice(r)).collect()
    }

    #[test]
    fn identical_members_leave_u_unchanged() {
        let s = vecs(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        let refs: Vec<&DVector<f64>> = s.iter().collect();
        let u = DVector::from_vec(vec![0.5, -1.0, 4.0]);
        let out = walk_propose(&u, &refs, 0.7, &mut stream(1, Purpose::Ensemble, 0)).unwrap();
        assert_eq!(out, u);
    }

    #[test]
    fn zero_lambda_leaves_u_unchanged() {
        let s = vecs(&[[1.0, 0.0, 3.0], [0.0, 2.0, 3.0]]);
        let refs: Vec<&DVector<f64>> = s.iter().collect();
        let u = DVector::from_vec(vec![0.5, -1.0, 4.0]);
        assert_eq!(walk_propose(&u, &refs, 0.0, &mut stream(1, Purpose::Ensemble, 0)).unwrap(), u);
    }

    #[test]
    fn walk_is_affine_equivariant_with_shared_weights() {
        let mut rng = stream(3, Purpose::Diagnostics, 0);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
        let b = standard_normal_vec(&mut rng, 3);
        let s = vec![standard_normal_vec(&mut rng, 3), standard_normal_vec(&mut rng, 3), standard_normal_vec(&mut rng, 3)];
        let u = standard_normal_vec(&mut rng, 3);
        let z = standard_normal_vec(&mut rng, 3);
        let refs: Vec<&DVector<f64>> = s.iter().collect();
        let mapped: Vec<DVector<f64>> = s.iter().map(|v| &a * v + &b).collect();
        let mrefs: Vec<&DVector<f64>> = mapped.iter().collect();
        let lhs = walk_propose_with(&(&a * &u + &b), &mrefs, 0.8, &z).unwrap();
        let rhs = &a * walk_propose_with(&u, &refs, 0.8, &z).unwrap() + &b;
        assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + a.norm() * u.norm()));
    }

    #[test]
    fn acceptance_of_identity_and_prior_contraction() {
        let g = GridSpec::line(1.0, 3, Boundary::Neumann).unwrap();
        let prior = GaussianMeasure::from_recipe(&PrecisionRecipe::parse("inv:(I - lap)").unwrap(), &g, None).unwrap();
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(aies_accept(&u, &u, 3.0, 3.0, &prior).unwrap(), 1.0);
        let smaller = &u * 0.5;
        assert_eq!(aies_accept(&u, &smaller, 0.0, 0.0, &prior).unwrap(), 1.0);
        assert!(aies_accept(&smaller, &u, 0.0, 0.0, &prior).unwrap() < 1.0);
        assert!(aies_accept(&u, &u, f64::NAN, 0.0, &prior).is_err());
    }
}
