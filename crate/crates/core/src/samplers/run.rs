use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::fes::{fes_step, FesContext};
use super::pcn::{gpcn_step, pcn_step};
use super::safes::safes_step;
use super::safes_p::safes_p_step;
use super::walk::aies_step;
use super::{EnsembleState, Particle, ProposalRecord, SamplerConfig, SamplerKind};
use crate::error::Result;
use crate::gauss::{deviation_matrix, l2_norm_sq, GaussianMeasure, LowRankJump};
use crate::problems::Potential;
use crate::rng::{stream, ParticleStreams, Purpose};

/// In-memory result of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub config: SamplerConfig,
    pub dof: usize,
    /// `h^d`, the weight of `g(u) = ‖u‖²_{L²}`.
    pub cell_volume: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// `g[n][k−1]` after sweep `k`.
    pub g: Vec<Vec<f64>>,
    pub accepted: Vec<Vec<bool>>,
    /// `β` in force for the proposal of sweep `k`.
    pub beta: Vec<Vec<f64>>,
    /// Sweeps at which fields were stored; always starts with 0.
    pub field_steps: Vec<usize>,
    /// Flat stored fields, `fields[n][i·dof .. (i+1)·dof]` for `field_steps[i]`.
    pub fields: Vec<Vec<f64>>,
    pub acceptance_rates: Vec<f64>,
    pub stretch_acceptance_rates: Option<Vec<f64>>,
    pub likelihood_evaluations: u64,
    pub rank_guard_events: u64,
}

impl ChainRecord {
    pub fn n_particles(&self) -> usize {
        self.g.len()
    }

    pub fn n_steps(&self) -> usize {
        self.g.first().map_or(0, |g| g.len())
    }

    pub fn field(&self, n: usize, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.fields[n][i * self.dof..(i + 1) * self.dof])
    }

    /// Stored initial fields.
    pub fn initial_ensemble(&self) -> Vec<DVector<f64>> {
        (0..self.n_particles()).map(|n| self.field(n, 0)).collect()
    }

    /// Stored fields after burn-in, per particle.
    pub fn post_burn_in_fields(&self) -> Vec<Vec<DVector<f64>>> {
        let idx: Vec<usize> = self
            .field_steps
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > self.burn_in)
            .map(|(i, _)| i)
            .collect();
        (0..self.n_particles())
            .map(|n| idx.iter().map(|&i| self.field(n, i)).collect())
            .collect()
    }

    /// `g` series after burn-in, per particle.
    pub fn post_burn_in_g(&self) -> Vec<Vec<f64>> {
        self.g.iter().map(|s| s[self.burn_in.min(s.len())..].to_vec()).collect()
    }

    pub fn mean_acceptance(&self) -> f64 {
        if self.acceptance_rates.is_empty() {
            0.0
        } else {
            self.acceptance_rates.iter().sum::<f64>() / self.acceptance_rates.len() as f64
        }
    }
}

/// Likelihood evaluations per particle update of `kind`.
pub fn evaluations_per_update(kind: SamplerKind) -> u64 {
    match kind {
        SamplerKind::Fes => 2,
        _ => 1,
    }
}

enum Kernel {
    Pcn,
    Gpcn { deviation: DMatrix<f64>, prec_dev: DMatrix<f64> },
    Walk,
    Safes,
    SafesP { m: usize },
    Fes(FesContext),
}

/// Initial ensemble: i.i.d. prior draws from the init streams of `seed`.
pub fn initial_ensemble(prior: &GaussianMeasure, n: usize, seed: u64) -> Vec<DVector<f64>> {
    (0..n).map(|i| prior.draw(&mut stream(seed, Purpose::Init, i as u32))).collect()
}

/// Runs `config.n_steps` sweeps from i.i.d. prior draws.
pub fn run(
    prior: &Arc<GaussianMeasure>,
    potential: &dyn Potential,
    config: &SamplerConfig,
    thin: usize,
) -> Result<ChainRecord> {
    let init = initial_ensemble(prior, config.n_particles, config.seed);
    run_from(prior, potential, config, thin, init)
}

/// Runs from a given initial ensemble of grid coefficients.
pub fn run_from(
    prior: &Arc<GaussianMeasure>,
    potential: &dyn Potential,
    config: &SamplerConfig,
    thin: usize,
    init: Vec<DVector<f64>>,
) -> Result<ChainRecord> {
    let dof = prior.dim();
    config.validate(dof)?;
    let thin = thin.max(1);
    let kind = config.kind;
    let n_part = init.len();
    let particles = init
        .into_iter()
        .map(|u| Particle::new(u, prior, potential, kind.whitened()))
        .collect::<Result<Vec<_>>>()?;
    let mut state = EnsembleState::new(particles, config.beta0, &config.adapt);
    let mut streams: Vec<ParticleStreams> = (0..n_part)
        .map(|n| ParticleStreams::new(config.seed, n as u32))
        .collect();
    let zero = DVector::zeros(dof);

    let kernel = match kind {
        SamplerKind::Pcn => Kernel::Pcn,
        SamplerKind::Gpcn => {
            if n_part >= 2 {
                let v = deviation_matrix(state.particles.iter().map(|p| &p.field))?;
                let prec_dev = prior.precision() * v.columns();
                Kernel::Gpcn {
                    deviation: v.columns().clone(),
                    prec_dev,
                }
            } else {
                Kernel::Gpcn {
                    deviation: DMatrix::zeros(dof, 0),
                    prec_dev: DMatrix::zeros(dof, 0),
                }
            }
        }
        SamplerKind::AiesWalk => Kernel::Walk,
        SamplerKind::Safes => Kernel::Safes,
        SamplerKind::SafesP => Kernel::SafesP {
            m: config.subspace_dim.unwrap_or(0),
        },
        SamplerKind::Fes => Kernel::Fes(FesContext::new(prior, config.subspace_dim.unwrap_or(0), config.stretch_a)?),
    };

    let k_total = config.n_steps;
    let burn_in = config.burn_in();
    let mut g = vec![Vec::with_capacity(k_total); n_part];
    let mut accepted = vec![Vec::with_capacity(k_total); n_part];
    let mut beta = vec![Vec::with_capacity(k_total); n_part];
    let mut field_steps = vec![0];
    let mut fields: Vec<Vec<f64>> = state.particles.iter().map(|p| p.field.iter().copied().collect()).collect();
    let mut evaluations = n_part as u64;
    let mut rank_guard_events = 0u64;
    let mut stretch_counts = vec![(0u64, 0u64); n_part];

    for k in 1..=k_total {
        if k == burn_in + 1 {
            for c in &mut state.controllers {
                c.end_burn_in();
            }
        }
        for n in 0..n_part {
            let b = state.beta(n);
            let s = &mut streams[n];
            let rec: ProposalRecord = match &kernel {
                Kernel::Pcn => pcn_step(&mut state.particles[n], b, prior, potential, s)?,
                Kernel::Gpcn { deviation, prec_dev } => {
                    let jump = LowRankJump::from_parts(
                        prior.clone(),
                        zero.clone(),
                        zero.clone(),
                        deviation.clone(),
                        prec_dev.clone(),
                        config.lambda / b,
                    )?;
                    gpcn_step(&mut state.particles[n], b, &jump, prior, potential, s)?
                }
                Kernel::Walk => aies_step(n, &mut state, config.lambda, prior, potential, s)?,
                Kernel::Safes => safes_step(n, &mut state, b, config.lambda, prior, &zero, prior, potential, s)?,
                Kernel::SafesP { m } => safes_p_step(n, &mut state, b, config.lambda, *m, prior, potential, s)?,
                Kernel::Fes(ctx) => {
                    let (stretch, rec) = fes_step(n, &mut state, b, ctx, prior, potential, s)?;
                    if let Some(st) = stretch {
                        evaluations += 1;
                        stretch_counts[n].1 += 1;
                        if st.accepted {
                            stretch_counts[n].0 += 1;
                        }
                    }
                    rec
                }
            };
            evaluations += 1;
            if rec.rank_guarded {
                rank_guard_events += 1;
            }
            state.proposed[n] += 1;
            if rec.accepted {
                state.accepted[n] += 1;
            }
            if kind.adapts_beta() {
                state.controllers[n].record(rec.accepted);
            }
            accepted[n].push(rec.accepted);
            beta[n].push(b);
        }
        state.step = k;
        for n in 0..n_part {
            g[n].push(l2_norm_sq(prior.grid(), &state.particles[n].field));
        }
        if k % thin == 0 {
            field_steps.push(k);
            for n in 0..n_part {
                fields[n].extend(state.particles[n].field.iter().copied());
            }
        }
    }

    let acceptance_rates = (0..n_part).map(|n| state.acceptance_rate(n)).collect();
    let stretch_acceptance_rates = matches!(kernel, Kernel::Fes(ref c) if c.dim() > 0).then(|| {
        stretch_counts
            .iter()
            .map(|&(a, p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
            .collect()
    });
    Ok(ChainRecord {
        config: config.clone(),
        dof,
        cell_volume: prior.grid().cell_volume(),
        burn_in,
        thin,
        g,
        accepted,
        beta,
        field_steps,
        fields,
        acceptance_rates,
        stretch_acceptance_rates,
        likelihood_evaluations: evaluations,
        rank_guard_events,
    })
}
