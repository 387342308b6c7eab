//! Orchestration behind the command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{ProblemConfig, ProblemKind, RunConfig};
use crate::diagnostics::{
    autocorrelation, default_max_lag, moment_errors, mpsrf_projected, span_distance, AutocorrCurve, MomentErrors,
    MpsrfResult,
};
use crate::error::{Error, Result};
use crate::gauss::{fmt_f64, csv_row, Boundary, GridSpec, PrecisionRecipe};
use crate::problems::{
    effective_dimension, exact_posterior, make_data, AnalyticGaussianPosterior, DarcyProblem, InverseProblem,
    LevelSetProblem, LinearProblem, ObservationSet,
};
use crate::samplers::run::{evaluations_per_update, run, ChainRecord};
use crate::samplers::store::ChainStore;

/// Default number of principal components kept for MPSRF.
pub const DEFAULT_MPSRF_DIM: usize = 10;

/// An assembled benchmark problem with its data installed.
#[derive(Debug, Clone)]
pub enum Problem {
    Linear(LinearProblem),
    Darcy(DarcyProblem),
    LevelSet(LevelSetProblem),
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

impl Problem {
    /// Assembles the problem without observations.
    pub fn assemble(cfg: &ProblemConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.fill_defaults();
        cfg.validate()?;
        let points = cfg.points.unwrap_or_default();
        let recipe = PrecisionRecipe::parse(cfg.prior.as_deref().unwrap_or_default())?;
        let j = cfg.observations.unwrap_or_default();
        let gamma = cfg.gamma.unwrap_or_default();
        let truth = cfg.truth.unwrap_or_default();
        let two_pi = 2.0 * std::f64::consts::PI;
        Ok(match cfg.kind {
            ProblemKind::Linear => {
                let grid = GridSpec::line(two_pi, points, Boundary::Neumann)?;
                Problem::Linear(LinearProblem::regression_with(&grid, &recipe, j, gamma, truth)?)
            }
            ProblemKind::Darcy => {
                let variant = cfg.variant.unwrap_or(crate::problems::DarcyVariant::I);
                let grid = GridSpec::line(two_pi, points, variant.prior_boundary())?;
                Problem::Darcy(DarcyProblem::with_prior(variant, &grid, &recipe, j, gamma, truth)?)
            }
            ProblemKind::LevelSet => {
                let grid = GridSpec::square(1.0, points, points, Boundary::Neumann)?;
                Problem::LevelSet(LevelSetProblem::with_prior(&grid, &recipe, j, gamma, truth)?)
            }
        })
    }

    /// Assembles the problem and installs loaded or synthetic data.
    pub fn build(cfg: &ProblemConfig, run_seed: u64) -> Result<Self> {
        let mut problem = Self::assemble(cfg)?;
        match &cfg.data {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                let obs: ObservationSet = serde_json::from_str(&text)?;
                problem.as_inverse_mut().set_observations(obs)?;
            }
            None => {
                make_data(problem.as_inverse_mut(), cfg.data_seed.unwrap_or(run_seed))?;
            }
        }
        Ok(problem)
    }

    pub fn as_inverse(&self) -> &dyn InverseProblem {
        match self {
            Problem::Linear(p) => p,
            Problem::Darcy(p) => p,
            Problem::LevelSet(p) => p,
        }
    }

    pub fn as_inverse_mut(&mut self) -> &mut dyn InverseProblem {
        match self {
            Problem::Linear(p) => p,
            Problem::Darcy(p) => p,
            Problem::LevelSet(p) => p,
        }
    }

    pub fn linear(&self) -> Option<&LinearProblem> {
        match self {
            Problem::Linear(p) => Some(p),
            _ => None,
        }
    }

    pub fn analytic_posterior(&self) -> Result<Option<AnalyticGaussianPosterior>> {
        self.linear().map(exact_posterior).transpose()
    }
}

/// Summary of one `run`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub config_hash: String,
    pub record: ChainRecord,
    pub seconds: f64,
}

/// `runs/<sampler>-<first 12 hash digits>`.
pub fn default_run_dir(cfg: &RunConfig, hash: &str) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{}", cfg.sampler.kind, &hash[..12]))
}

/// Runs the configured sampler and persists a chain store.
pub fn cmd_run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let problem = Problem::build(&cfg.problem, cfg.seed)?;
    let inverse = problem.as_inverse();
    let mut sampler = cfg.sampler.clone();
    sampler.seed = cfg.seed;
    let start = Instant::now();
    let record = run(inverse.prior(), inverse, &sampler, cfg.output.thin)?;
    let seconds = start.elapsed().as_secs_f64();
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| default_run_dir(cfg, &hash));
    let store = ChainStore::write(&dir, record, cfg.to_value()?, hash.clone())?;
    Ok(RunOutcome {
        dir,
        config_hash: hash,
        record: store.record,
        seconds,
    })
}

/// Writes `data.json` for the configured problem.
pub fn cmd_make_data(cfg: &RunConfig, out: &Path) -> Result<ObservationSet> {
    let problem = Problem::build(&cfg.problem, cfg.seed)?;
    let obs = problem.as_inverse().observations().clone();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_json(&out.join("data.json"), &obs)?;
    Ok(obs)
}

/// Writes `posterior_mean.csv` and `posterior_cov.csv` for the linear problem.
pub fn cmd_exact_posterior(cfg: &RunConfig, out: &Path) -> Result<AnalyticGaussianPosterior> {
    let problem = Problem::build(&cfg.problem, cfg.seed)?;
    let post = problem
        .analytic_posterior()?
        .ok_or_else(|| Error::config("problem.kind", "the exact posterior is only available for the linear problem"))?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let d = post.mean.len();
    let header: Vec<String> = (0..d).map(|i| format!("u{i}")).collect();
    let header = header.join(",");
    write_text(
        &out.join("posterior_mean.csv"),
        &format!("{header}\n{}\n", csv_row(post.mean.iter().copied())),
    )?;
    let mut cov = format!("{header}\n");
    for r in 0..d {
        cov.push_str(&csv_row(post.covariance.row(r).iter().copied()));
        cov.push('\n');
    }
    write_text(&out.join("posterior_cov.csv"), &cov)?;
    Ok(post)
}

/// Effective dimension `tr(Q(I+Q)⁻¹)` of the linear problem.
pub fn cmd_efd(cfg: &RunConfig) -> Result<f64> {
    let problem = Problem::build(&cfg.problem, cfg.seed)?;
    problem
        .linear()
        .map(effective_dimension)
        .ok_or_else(|| Error::config("problem.kind", "the effective dimension is only defined for the linear problem"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    /// Pooled post-burn-in samples used.
    pub samples: usize,
    /// Present when the analytic posterior is available.
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub errors: Option<MomentErrors>,
}

/// Everything `diagnose` computes for one run.
#[derive(Debug, Clone)]
pub struct DiagnoseReport {
    pub autocorr: AutocorrCurve,
    pub mpsrf: MpsrfResult,
    pub moments: MomentsReport,
    /// `(step, particle, distance)` for every stored sample.
    pub span: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DiagnoseSummary {
    integrated_time: f64,
    max_lag: usize,
    mpsrf: f64,
    mean_acceptance: f64,
    max_span_distance: f64,
}

/// Diagnostics of an in-memory record; `posterior` enables moment errors.
pub fn diagnose_record(
    record: &ChainRecord,
    posterior: Option<&AnalyticGaussianPosterior>,
    mpsrf_dim: usize,
) -> Result<DiagnoseReport> {
    let g = record.post_burn_in_g();
    let len = g.first().map_or(0, |s| s.len());
    let autocorr = autocorrelation(&g, default_max_lag(len))?;
    let chains = record.post_burn_in_fields();
    let mpsrf = mpsrf_projected(&chains, mpsrf_dim)?;
    let pooled: Vec<DVector<f64>> = chains.into_iter().flatten().collect();
    let errors = match posterior {
        Some(p) => Some(moment_errors(&pooled, &p.mean, &p.covariance)?),
        None => None,
    };
    let moments = MomentsReport {
        samples: pooled.len(),
        errors,
    };
    let initial = record.initial_ensemble();
    let mut span = Vec::new();
    if initial.len() >= 2 {
        for n in 0..record.n_particles() {
            let samples: Vec<DVector<f64>> = (0..record.field_steps.len()).map(|i| record.field(n, i)).collect();
            for (i, d) in span_distance(&samples, &initial)?.into_iter().enumerate() {
                span.push((record.field_steps[i], n, d));
            }
        }
        span.sort_by_key(|&(k, n, _)| (k, n));
    }
    Ok(DiagnoseReport {
        autocorr,
        mpsrf,
        moments,
        span,
    })
}

/// Reads a chain store and writes `autocorr.csv`, `mpsrf.json`, `moments.json`,
/// `span.csv` and `summary.json` into `out` (the store itself by default).
pub fn cmd_diagnose(store_dir: &Path, mpsrf_dim: usize, out: Option<&Path>) -> Result<DiagnoseReport> {
    let store = ChainStore::open(store_dir)?;
    let cfg: RunConfig = serde_json::from_value(store.meta.config.clone())?;
    let posterior = match cfg.problem.kind {
        ProblemKind::Linear => Problem::build(&cfg.problem, cfg.seed)?.analytic_posterior()?,
        _ => None,
    };
    let report = diagnose_record(&store.record, posterior.as_ref(), mpsrf_dim)?;
    let out = out.unwrap_or(store_dir);
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let mut text = String::from("lag,value\n");
    for (j, v) in report.autocorr.values.iter().enumerate() {
        text.push_str(&format!("{j},{}\n", fmt_f64(*v)));
    }
    write_text(&out.join("autocorr.csv"), &text)?;
    write_json(&out.join("mpsrf.json"), &report.mpsrf)?;
    write_json(&out.join("moments.json"), &report.moments)?;
    let mut text = String::from("step,particle,distance\n");
    for (k, n, d) in &report.span {
        text.push_str(&format!("{k},{n},{}\n", fmt_f64(*d)));
    }
    write_text(&out.join("span.csv"), &text)?;
    write_json(
        &out.join("summary.json"),
        &DiagnoseSummary {
            integrated_time: report.autocorr.integrated_time,
            max_lag: report.autocorr.max_lag(),
            mpsrf: report.mpsrf.value,
            mean_acceptance: store.record.mean_acceptance(),
            max_span_distance: report.span.iter().map(|s| s.2).fold(0.0, f64::max),
        },
    )?;
    Ok(report)
}

/// Likelihood evaluations of a full run: the initial ensemble plus every update.
pub fn run_budget(cfg: &RunConfig) -> u64 {
    let n = cfg.sampler.n_particles as u64;
    n + n * cfg.sampler.n_steps as u64 * evaluations_per_update(cfg.sampler.kind)
}

/// Chooses `K` so the run's evaluation count is closest to `budget`.
pub fn match_budget(cfg: &mut RunConfig, budget: u64) -> Result<()> {
    let n = cfg.sampler.n_particles as u64;
    let per_sweep = n * evaluations_per_update(cfg.sampler.kind);
    let k = ((budget.saturating_sub(n) as f64) / per_sweep as f64).round() as usize;
    cfg.sampler.n_steps = k;
    let got = run_budget(cfg) as f64;
    if (got - budget as f64).abs() > 0.01 * budget as f64 {
        return Err(Error::config(
            "sampler.n_steps",
            format!(
                "cannot match a budget of {budget} likelihood evaluations within 1% for {} with {} particles",
                cfg.sampler.kind, cfg.sampler.n_particles
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub sampler: String,
    pub config_hash: String,
    pub dir: PathBuf,
    pub n_particles: usize,
    pub n_steps: usize,
    pub likelihood_evaluations: u64,
    /// Absent when the diagnostics failed; see `diagnostic_error`.
    pub mpsrf: Option<f64>,
    pub integrated_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_mean_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_cov_error: Option<f64>,
    pub acceptance: f64,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub budget: u64,
    pub mpsrf_dim: usize,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn row(&self, sampler: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.sampler == sampler)
    }

    pub fn to_csv(&self) -> String {
        let mut text = String::from(
            "sampler,config_hash,n_particles,n_steps,likelihood_evaluations,mpsrf,integrated_time,rel_mean_error,rel_cov_error,acceptance,seconds\n",
        );
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.sampler,
                r.config_hash,
                r.n_particles,
                r.n_steps,
                r.likelihood_evaluations,
                opt(r.mpsrf),
                opt(r.integrated_time),
                opt(r.rel_mean_error),
                opt(r.rel_cov_error),
                fmt_f64(r.acceptance),
                fmt_f64(r.seconds),
            ));
        }
        text
    }
}

/// Runs every config at the likelihood budget of the first one.
///
/// All configs must share the problem block and seed. Each run is stored under
/// `out/<index>-<sampler>-<hash prefix>`; the table goes to `compare.csv` and `compare.json`.
pub fn cmd_compare(configs: &[RunConfig], out: &Path, mpsrf_dim: usize) -> Result<CompareReport> {
    let first = configs.first().ok_or_else(|| Error::invalid("compare needs at least one config"))?;
    for (i, c) in configs.iter().enumerate().skip(1) {
        if c.problem != first.problem {
            return Err(Error::config("problem", format!("config {i} has a different problem block than config 0")));
        }
        if c.seed != first.seed {
            return Err(Error::config("seed", format!("config {i} has a different seed than config 0")));
        }
    }
    let budget = run_budget(first);
    let problem = Problem::build(&first.problem, first.seed)?;
    let posterior = problem.analytic_posterior()?;
    let inverse = problem.as_inverse();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut rows = Vec::with_capacity(configs.len());
    for (i, c) in configs.iter().enumerate() {
        let mut cfg = c.clone();
        match_budget(&mut cfg, budget)?;
        cfg.set_seed(first.seed);
        cfg.validate()?;
        let hash = cfg.hash()?;
        let start = Instant::now();
        let record = run(inverse.prior(), inverse, &cfg.sampler, cfg.output.thin)?;
        let seconds = start.elapsed().as_secs_f64();
        let dir = out.join(format!("{i}-{}-{}", cfg.sampler.kind, &hash[..12]));
        let store = ChainStore::write(&dir, record, cfg.to_value()?, hash.clone())?;
        // a failed diagnostic keeps the row; the stored run can be re-diagnosed
        let (report, diagnostic_error) = match diagnose_record(&store.record, posterior.as_ref(), mpsrf_dim) {
            Ok(r) => (Some(r), None),
            Err(e @ (Error::Numerical(_) | Error::InvalidArgument(_))) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        let errors = report.as_ref().and_then(|r| r.moments.errors);
        rows.push(CompareRow {
            sampler: cfg.sampler.kind.to_string(),
            config_hash: hash,
            dir,
            n_particles: cfg.sampler.n_particles,
            n_steps: cfg.sampler.n_steps,
            likelihood_evaluations: store.record.likelihood_evaluations,
            mpsrf: report.as_ref().map(|r| r.mpsrf.value),
            integrated_time: report.as_ref().map(|r| r.autocorr.integrated_time),
            rel_mean_error: errors.map(|e| e.rel_mean_error),
            rel_cov_error: errors.map(|e| e.rel_cov_error),
            acceptance: store.record.mean_acceptance(),
            seconds,
            diagnostic_error,
        });
    }
    let report = CompareReport {
        budget,
        mpsrf_dim,
        rows,
    };
    write_text(&out.join("compare.csv"), &report.to_csv())?;
    write_json(&out.join("compare.json"), &report)?;
    Ok(report)
}
