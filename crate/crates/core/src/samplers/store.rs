use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::ChainRecord;
use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::gauss::{csv_row, fmt_f64};

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub config_hash: String,
    /// Echo of the configuration that produced the run.
    pub config: serde_json::Value,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub dof: usize,
    pub cell_volume: f64,
    pub n_particles: usize,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub acceptance_rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stretch_acceptance_rates: Option<Vec<f64>>,
    /// Per particle, `(sweep, β)` at the start and at every change.
    pub beta_trajectory: Vec<Vec<(usize, f64)>>,
    pub likelihood_evaluations: u64,
    pub rank_guard_events: u64,
}

/// A run persisted as a directory of `meta.json`, `scalars.csv` and `fields_<n>.csv`.
#[derive(Debug, Clone)]
pub struct ChainStore {
    pub dir: PathBuf,
    pub meta: StoreMeta,
    pub record: ChainRecord,
}

fn beta_changes(series: &[f64]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut last = f64::NAN;
    for (k, &b) in series.iter().enumerate() {
        if b != last {
            out.push((k + 1, b));
            last = b;
        }
    }
    out
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::invalid(format!("{}:{line}: cannot parse `{s}` as a number", path.display())))
}

impl ChainStore {
    /// Writes `record` under `dir`, creating it if needed.
    pub fn write(dir: impl AsRef<Path>, record: ChainRecord, config: serde_json::Value, config_hash: String) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let meta = StoreMeta {
            config_hash,
            config,
            sampler: record.config.clone(),
            seed: record.config.seed,
            dof: record.dof,
            cell_volume: record.cell_volume,
            n_particles: record.n_particles(),
            n_steps: record.n_steps(),
            burn_in: record.burn_in,
            thin: record.thin,
            acceptance_rates: record.acceptance_rates.clone(),
            stretch_acceptance_rates: record.stretch_acceptance_rates.clone(),
            beta_trajectory: record.beta.iter().map(|b| beta_changes(b)).collect(),
            likelihood_evaluations: record.likelihood_evaluations,
            rank_guard_events: record.rank_guard_events,
        };
        let meta_path = dir.join("meta.json");
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(&meta_path, text).map_err(|e| io_err(&meta_path, e))?;

        let scalars = dir.join("scalars.csv");
        let file = fs::File::create(&scalars).map_err(|e| io_err(&scalars, e))?;
        let mut w = BufWriter::new(file);
        let mut body = String::from("step,particle,g_value,accepted,beta\n");
        for k in 0..record.n_steps() {
            for n in 0..record.n_particles() {
                body.push_str(&format!(
                    "{},{},{},{},{}\n",
                    k + 1,
                    n,
                    fmt_f64(record.g[n][k]),
                    u8::from(record.accepted[n][k]),
                    fmt_f64(record.beta[n][k])
                ));
            }
            if body.len() > 1 << 20 {
                w.write_all(body.as_bytes()).map_err(|e| io_err(&scalars, e))?;
                body.clear();
            }
        }
        w.write_all(body.as_bytes()).map_err(|e| io_err(&scalars, e))?;
        w.flush().map_err(|e| io_err(&scalars, e))?;

        let header: Vec<String> = std::iter::once("step".to_string())
            .chain((0..record.dof).map(|i| format!("u{i}")))
            .collect();
        let header = header.join(",");
        for n in 0..record.n_particles() {
            let path = dir.join(format!("fields_{n}.csv"));
            let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{header}").map_err(|e| io_err(&path, e))?;
            for (i, &k) in record.field_steps.iter().enumerate() {
                let row = &record.fields[n][i * record.dof..(i + 1) * record.dof];
                writeln!(w, "{k},{}", csv_row(row.iter().copied())).map_err(|e| io_err(&path, e))?;
            }
            w.flush().map_err(|e| io_err(&path, e))?;
        }
        Ok(Self { dir, meta, record })
    }

    /// Reads a store written by [`ChainStore::write`].
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
        let mut meta: StoreMeta = serde_json::from_str(&text)?;
        // the sampler block never serializes its seed
        meta.sampler.seed = meta.seed;
        let (np, ns, dof) = (meta.n_particles, meta.n_steps, meta.dof);

        let mut g = vec![Vec::with_capacity(ns); np];
        let mut accepted = vec![Vec::with_capacity(ns); np];
        let mut beta = vec![Vec::with_capacity(ns); np];
        let scalars = dir.join("scalars.csv");
        let file = fs::File::open(&scalars).map_err(|e| io_err(&scalars, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate().skip(1) {
            let line = line.map_err(|e| io_err(&scalars, e))?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::invalid(format!("{}:{}: expected 5 columns", scalars.display(), i + 1)));
            }
            let n: usize = cols[1]
                .parse()
                .ok()
                .filter(|&n| n < np)
                .ok_or_else(|| Error::invalid(format!("{}:{}: bad particle index", scalars.display(), i + 1)))?;
            g[n].push(parse_f64(cols[2], &scalars, i + 1)?);
            accepted[n].push(cols[3].trim() == "1");
            beta[n].push(parse_f64(cols[4], &scalars, i + 1)?);
        }
        if g.iter().any(|s| s.len() != ns) {
            return Err(Error::invalid(format!("{}: series lengths disagree with meta.json", scalars.display())));
        }

        let mut field_steps = Vec::new();
        let mut fields = Vec::with_capacity(np);
        for n in 0..np {
            let path = dir.join(format!("fields_{n}.csv"));
            let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
            let mut flat = Vec::new();
            let mut steps = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate().skip(1) {
                let line = line.map_err(|e| io_err(&path, e))?;
                let mut cols = line.split(',');
                let step = cols
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::invalid(format!("{}:{}: bad step", path.display(), i + 1)))?;
                steps.push(step);
                let before = flat.len();
                for c in cols {
                    flat.push(parse_f64(c, &path, i + 1)?);
                }
                if flat.len() - before != dof {
                    return Err(Error::invalid(format!("{}:{}: expected {dof} coefficients", path.display(), i + 1)));
                }
            }
            if n == 0 {
                field_steps = steps;
            } else if steps != field_steps {
                return Err(Error::invalid(format!("{}: stored steps differ between particles", path.display())));
            }
            fields.push(flat);
        }

        let config = meta.sampler.clone();
        let record = ChainRecord {
            config,
            dof,
            cell_volume: meta.cell_volume,
            burn_in: meta.burn_in,
            thin: meta.thin,
            g,
            accepted,
            beta,
            field_steps,
            fields,
            acceptance_rates: meta.acceptance_rates.clone(),
            stretch_acceptance_rates: meta.stretch_acceptance_rates.clone(),
            likelihood_evaluations: meta.likelihood_evaluations,
            rank_guard_events: meta.rank_guard_events,
        };
        Ok(Self { dir, meta, record })
    }
}
