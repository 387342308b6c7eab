use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safes_core::config::RunConfig;
use safes_core::experiment::{
    cmd_compare, cmd_diagnose, cmd_efd, cmd_exact_posterior, cmd_make_data, cmd_run, DEFAULT_MPSRF_DIM,
};
use safes_core::{Error, Result};

/// Ensemble function-space MCMC for Bayesian inverse problems.
#[derive(Debug, Parser)]
#[command(name = "safes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stride between stored fields; overrides the config.
    #[arg(long, global = true)]
    thin: Option<usize>,
    /// Principal components kept for MPSRF.
    #[arg(long, global = true, default_value_t = DEFAULT_MPSRF_DIM)]
    mpsrf_dim: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one sampler and write a chain store.
    Run { config: PathBuf },
    /// Compute diagnostics of a chain store.
    Diagnose { store: PathBuf },
    /// Write synthetic observations to data.json.
    MakeData { config: PathBuf },
    /// Write the analytic posterior of a linear problem.
    ExactPosterior { config: PathBuf },
    /// Print the effective dimension of a linear problem.
    Efd { config: PathBuf },
    /// Run several samplers at an equal likelihood budget and tabulate diagnostics.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

impl Cli {
    fn load(&self, path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(thin) = self.thin {
            cfg.output.thin = thin;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = cli.load(config)?;
            let outcome = cmd_run(&cfg, cli.out.as_deref())?;
            let rec = &outcome.record;
            println!("config hash   {}", outcome.config_hash);
            println!("store         {}", outcome.dir.display());
            println!(
                "sampler       {} (N = {}, K = {}, burn-in {})",
                cfg.sampler.kind,
                rec.n_particles(),
                rec.n_steps(),
                rec.burn_in
            );
            let rates = &rec.acceptance_rates;
            let (lo, hi) = rates
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
            println!("acceptance    mean {:.4}, range [{lo:.4}, {hi:.4}]", rec.mean_acceptance());
            println!("evaluations   {}", rec.likelihood_evaluations);
            if rec.rank_guard_events > 0 {
                println!("rank guard    {} events", rec.rank_guard_events);
            }
            println!("wall clock    {:.1} s", outcome.seconds);
        }
        Command::Diagnose { store } => {
            let report = cmd_diagnose(store, cli.mpsrf_dim, cli.out.as_deref())?;
            println!("integrated autocorrelation time {:.4}", report.autocorr.integrated_time);
            match report.mpsrf.projected_from {
                Some(p) => println!("MPSRF {:.4} (projected {p} -> {})", report.mpsrf.value, report.mpsrf.dim),
                None => println!("MPSRF {:.4}", report.mpsrf.value),
            }
            if let Some(e) = report.moments.errors {
                println!("relative mean error {:.6}", e.rel_mean_error);
                println!("relative covariance error {:.6}", e.rel_cov_error);
            }
        }
        Command::MakeData { config } => {
            let cfg = cli.load(config)?;
            let out = cli.out_or(".");
            let obs = cmd_make_data(&cfg, &out)?;
            println!("wrote {}", out.join("data.json").display());
            if let Some(r) = obs.relative_noise {
                println!("relative noise level {:.4}%", 100.0 * r);
            }
        }
        Command::ExactPosterior { config } => {
            let cfg = cli.load(config)?;
            let out = cli.out_or(".");
            cmd_exact_posterior(&cfg, &out)?;
            println!("wrote {} and {}", out.join("posterior_mean.csv").display(), out.join("posterior_cov.csv").display());
        }
        Command::Efd { config } => {
            let cfg = cli.load(config)?;
            println!("{}", cmd_efd(&cfg)?);
        }
        Command::Compare { configs } => {
            let cfgs = configs.iter().map(|c| cli.load(c)).collect::<Result<Vec<_>>>()?;
            let out = cli.out_or("compare");
            let report = cmd_compare(&cfgs, &out, cli.mpsrf_dim)?;
            println!("budget {} likelihood evaluations per sampler", report.budget);
            println!("{:<10} {:>8} {:>10} {:>12} {:>10} {:>10} {:>8}", "sampler", "K", "MPSRF", "tau", "mean err", "cov err", "acc");
            for r in &report.rows {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:<10} {:>8} {:>10} {:>12} {:>10} {:>10} {:>8.3}",
                    r.sampler,
                    r.n_steps,
                    opt(r.mpsrf),
                    opt(r.integrated_time),
                    opt(r.rel_mean_error),
                    opt(r.rel_cov_error),
                    r.acceptance
                );
            }
            for r in report.rows.iter().filter(|r| r.diagnostic_error.is_some()) {
                eprintln!("warning: {}: {}", r.sampler, r.diagnostic_error.as_deref().unwrap_or_default());
            }
            println!("wrote {}", out.join("compare.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
