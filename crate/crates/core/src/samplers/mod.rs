//! Metropolis–Hastings kernels and the ensemble sweep driver.
//!
//! Working coordinates are grid coefficients for pCN, gpCN, the walk move and
//! SAFES, and whitened coefficients `C0^{-1/2}(u − m0)` for SAFES-P and FES.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::GaussianMeasure;
use crate::problems::Potential;

pub mod adapt;
pub mod fes;
pub mod pcn;
pub mod run;
pub mod safes;
pub mod safes_p;
pub mod store;
pub mod walk;

pub use adapt::{adapt_beta, BetaController, BETA_MAX, BETA_MIN};
pub use fes::{fes_step, stretch_factor, FesContext};
pub use pcn::{gpcn_step, pcn_step};
pub use run::{run, ChainRecord};
pub use safes::{safes_propose, safes_step};
pub use safes_p::{safes_p_step, SubspaceJump};
pub use store::ChainStore;
pub use walk::{aies_accept, aies_step, walk_propose, walk_propose_with};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Pcn,
    Gpcn,
    AiesWalk,
    Fes,
    Safes,
    SafesP,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Pcn => "pcn",
            SamplerKind::Gpcn => "gpcn",
            SamplerKind::AiesWalk => "aies_walk",
            SamplerKind::Fes => "fes",
            SamplerKind::Safes => "safes",
            SamplerKind::SafesP => "safes_p",
        }
    }

    /// Kernels that run in whitened coordinates.
    pub fn whitened(self) -> bool {
        matches!(self, SamplerKind::Fes | SamplerKind::SafesP)
    }

    /// Kernels whose `β` is adapted.
    pub fn adapts_beta(self) -> bool {
        !matches!(self, SamplerKind::AiesWalk)
    }

    pub fn min_particles(self) -> usize {
        match self {
            SamplerKind::Pcn | SamplerKind::Gpcn => 1,
            SamplerKind::Safes | SamplerKind::SafesP => 2,
            SamplerKind::AiesWalk | SamplerKind::Fes => 3,
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Acceptance-rate controller for `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptPolicy {
    pub target_low: f64,
    pub target_high: f64,
    /// Proposals per adaptation check.
    pub window: usize,
    pub factor: f64,
    pub freeze_after_burn_in: bool,
}

impl Default for AdaptPolicy {
    fn default() -> Self {
        Self {
            target_low: 0.15,
            target_high: 0.3,
            window: 100,
            factor: 1.5,
            freeze_after_burn_in: true,
        }
    }
}

impl AdaptPolicy {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(0.0 < self.target_low && self.target_low < self.target_high && self.target_high < 1.0) {
            return Err(Error::config(
                format!("{prefix}.target_low"),
                format!(
                    "need 0 < target_low < target_high < 1, got {} and {}",
                    self.target_low, self.target_high
                ),
            ));
        }
        if self.window == 0 {
            return Err(Error::config(format!("{prefix}.window"), "window must be positive"));
        }
        if !(self.factor > 1.0 && self.factor.is_finite()) {
            return Err(Error::config(format!("{prefix}.factor"), "factor must exceed 1"));
        }
        Ok(())
    }
}

/// Sampler settings. The seed is supplied by the run, not the sampler block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n_particles: usize,
    pub n_steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace_dim: Option<usize>,
    #[serde(default = "default_stretch")]
    pub stretch_a: f64,
    #[serde(default)]
    pub adapt: AdaptPolicy,
    #[serde(skip)]
    pub seed: u64,
}

fn default_burn_in() -> f64 {
    0.25
}
fn default_beta0() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    0.2
}
fn default_stretch() -> f64 {
    2.0
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, n_particles: usize, n_steps: usize) -> Self {
        Self {
            kind,
            n_particles,
            n_steps,
            burn_in_fraction: default_burn_in(),
            beta0: default_beta0(),
            lambda: default_lambda(),
            subspace_dim: None,
            stretch_a: default_stretch(),
            adapt: AdaptPolicy::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_subspace_dim(mut self, m: usize) -> Self {
        self.subspace_dim = Some(m);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Number of burn-in sweeps, `⌊fraction · K⌋`.
    pub fn burn_in(&self) -> usize {
        (self.burn_in_fraction * self.n_steps as f64).floor() as usize
    }

    /// Checks the settings against a state dimension `dof`.
    pub fn validate(&self, dof: usize) -> Result<()> {
        let min = self.kind.min_particles();
        if self.n_particles < min {
            return Err(Error::config(
                "sampler.n_particles",
                format!("{} needs at least {min} particles, got {}", self.kind, self.n_particles),
            ));
        }
        if self.n_particles > u32::MAX as usize {
            return Err(Error::config("sampler.n_particles", "too many particles"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::config(
                "sampler.burn_in_fraction",
                format!("must lie in [0, 1), got {}", self.burn_in_fraction),
            ));
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(Error::config("sampler.beta0", format!("must lie in (0, 1], got {}", self.beta0)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("sampler.lambda", format!("must be finite and ≥ 0, got {}", self.lambda)));
        }
        if !(self.stretch_a > 1.0 && self.stretch_a.is_finite()) {
            return Err(Error::config("sampler.stretch_a", format!("must exceed 1, got {}", self.stretch_a)));
        }
        match (self.kind, self.subspace_dim) {
            (SamplerKind::Fes | SamplerKind::SafesP, None) => {
                return Err(Error::config("sampler.subspace_dim", format!("{} needs a subspace dimension", self.kind)));
            }
            (SamplerKind::Fes | SamplerKind::SafesP, Some(m)) if m == 0 || m > dof => {
                return Err(Error::config(
                    "sampler.subspace_dim",
                    format!("must lie in 1..={dof}, got {m}"),
                ));
            }
            _ => {}
        }
        self.adapt.validate("sampler.adapt")
    }
}

/// One member of the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Working coordinates of the kernel.
    pub coords: DVector<f64>,
    /// Grid coefficients `u`.
    pub field: DVector<f64>,
    /// `Φ(u)`.
    pub phi: f64,
    /// `C0⁻¹ u`, kept for the Cameron–Martin terms.
    pub prior_prec_field: DVector<f64>,
}

impl Particle {
    /// Particle at grid coefficients `field`; `whitened` selects the working coordinates.
    pub fn new(field: DVector<f64>, prior: &GaussianMeasure, potential: &dyn Potential, whitened: bool) -> Result<Self> {
        let phi = potential.phi(&field)?;
        if !phi.is_finite() {
            return Err(Error::numerical(format!(
                "Φ = {phi} at the initial state; re-seed or redraw the initial ensemble from the prior"
            )));
        }
        let coords = if whitened {
            prior.whiten_coeffs(&field)
        } else {
            field.clone()
        };
        let prior_prec_field = prior.precision() * &field;
        Ok(Self {
            coords,
            field,
            phi,
            prior_prec_field,
        })
    }

    /// Particle at whitened coordinates `xi`.
    pub fn from_whitened(xi: DVector<f64>, prior: &GaussianMeasure, potential: &dyn Potential) -> Result<Self> {
        let field = prior.unwhiten_coeffs(&xi);
        let mut p = Self::new(field, prior, potential, false)?;
        p.coords = xi;
        Ok(p)
    }

    pub(crate) fn set(&mut self, coords: DVector<f64>, field: DVector<f64>, phi: f64, prior: &GaussianMeasure) {
        self.prior_prec_field = prior.precision() * &field;
        self.coords = coords;
        self.field = field;
        self.phi = phi;
    }
}

/// Particles plus per-particle adaptation state.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub particles: Vec<Particle>,
    pub controllers: Vec<BetaController>,
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
    /// Completed sweeps.
    pub step: usize,
}

impl EnsembleState {
    pub fn new(particles: Vec<Particle>, beta0: f64, policy: &AdaptPolicy) -> Self {
        let n = particles.len();
        Self {
            particles,
            controllers: (0..n).map(|_| BetaController::new(beta0, policy.clone())).collect(),
            accepted: vec![0; n],
            proposed: vec![0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn beta(&self, n: usize) -> f64 {
        self.controllers[n].beta()
    }

    /// Working coordinates of every particle except `n`, in ensemble order.
    pub fn others(&self, n: usize) -> Vec<&DVector<f64>> {
        self.particles
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != n)
            .map(|(_, p)| &p.coords)
            .collect()
    }

    pub fn acceptance_rate(&self, n: usize) -> f64 {
        if self.proposed[n] == 0 {
            0.0
        } else {
            self.accepted[n] as f64 / self.proposed[n] as f64
        }
    }
}

/// Audit trail of one Metropolis–Hastings decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRecord {
    /// Proposed grid coefficients.
    pub proposed: DVector<f64>,
    /// `Φ(u) − Φ(û)`.
    pub delta_phi: f64,
    /// Kernel-specific correction: `ΔI_C`, prior-norm difference, `ΔJ`, or the stretch term.
    pub correction: f64,
    pub log_ratio: f64,
    pub uniform: f64,
    pub accepted: bool,
    /// Set when the subspace rank guard reduced `M` for this proposal.
    pub rank_guarded: bool,
}

impl ProposalRecord {
    pub fn acceptance_probability(&self) -> f64 {
        acceptance_probability(self.log_ratio)
    }
}

/// `min(1, exp(log_ratio))`, with NaN treated as certain rejection.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio.is_nan() {
        0.0
    } else {
        log_ratio.min(0.0).exp()
    }
}

/// Draws the uniform and builds the record.
pub(crate) fn decide<R: Rng + ?Sized>(
    accept_rng: &mut R,
    proposed: DVector<f64>,
    delta_phi: f64,
    correction: f64,
) -> ProposalRecord {
    let log_ratio = delta_phi + correction;
    let uniform: f64 = accept_rng.random();
    let accepted = uniform < acceptance_probability(log_ratio);
    ProposalRecord {
        proposed,
        delta_phi,
        correction,
        log_ratio,
        uniform,
        accepted,
        rank_guarded: false,
    }
}

/// `Φ` at the current state must be finite.
pub(crate) fn check_current(phi: f64) -> Result<()> {
    if phi.is_finite() {
        Ok(())
    } else {
        Err(Error::numerical(format!("Φ = {phi} at the current state")))
    }
}
