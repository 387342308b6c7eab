//! Run configuration: problem, sampler and output blocks plus the master seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gauss::PrecisionRecipe;
use crate::problems::DarcyVariant;
use crate::samplers::SamplerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Linear,
    Darcy,
    LevelSet,
}

/// Benchmark problem settings. Unset fields take the per-kind defaults on
/// [`RunConfig::parse`], so a parsed config always echoes every value used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Darcy only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<DarcyVariant>,
    /// Grid points per axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Prior precision recipe, e.g. `inv:(I - lap)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
    /// Observation count `J` on a line, or lattice points per axis for the level set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Truth amplitude `a` in `a·sin(x)` (linear, Darcy) or circle radius (level set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    /// Seed of the synthetic observation noise; the run seed when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    /// Observations to load instead of synthesizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

impl ProblemConfig {
    pub fn new(kind: ProblemKind) -> Self {
        Self {
            kind,
            variant: None,
            points: None,
            prior: None,
            observations: None,
            gamma: None,
            truth: None,
            data_seed: None,
            data: None,
        }
    }

    /// Fills unset fields with the benchmark defaults of the kind.
    pub fn fill_defaults(&mut self) {
        match self.kind {
            ProblemKind::Linear => {
                self.points.get_or_insert(100);
                self.prior.get_or_insert_with(|| "inv:(I - lap)".into());
                self.observations.get_or_insert(25);
                self.gamma.get_or_insert(1e-3);
                self.truth.get_or_insert(0.5);
            }
            ProblemKind::Darcy => {
                let v = *self.variant.get_or_insert(DarcyVariant::I);
                self.points.get_or_insert(100);
                self.prior.get_or_insert_with(|| v.default_recipe().into());
                self.observations.get_or_insert(10);
                self.gamma.get_or_insert(v.default_gamma());
                self.truth.get_or_insert(0.5);
            }
            ProblemKind::LevelSet => {
                self.points.get_or_insert(32);
                self.prior.get_or_insert_with(|| "inv:(I - lap)^2".into());
                self.observations.get_or_insert(3);
                self.gamma.get_or_insert(1e-3);
                self.truth.get_or_insert(0.25);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant.is_some() && self.kind != ProblemKind::Darcy {
            return Err(Error::config("problem.variant", "only the darcy problem has variants"));
        }
        if let Some(p) = self.points {
            if p < 2 {
                return Err(Error::config("problem.points", format!("need at least 2 grid points, got {p}")));
            }
        }
        if let Some(j) = self.observations {
            if j == 0 {
                return Err(Error::config("problem.observations", "need at least one observation"));
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::config("problem.gamma", format!("must be positive and finite, got {g}")));
            }
        }
        if let Some(t) = self.truth {
            if !t.is_finite() {
                return Err(Error::config("problem.truth", "must be finite"));
            }
        }
        if let Some(r) = &self.prior {
            PrecisionRecipe::parse(r).map_err(|e| match e {
                Error::Config { message, .. } => Error::config("problem.prior", message),
                other => other,
            })?;
        }
        Ok(())
    }
}

/// Scalar functional recorded per sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    /// `g(u) = ‖u‖²_{L²}`.
    #[default]
    L2NormSq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Store directory; `runs/<sampler>-<hash prefix>` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Stride between stored fields.
    pub thin: usize,
    pub functional: Functional,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            thin: 10,
            functional: Functional::L2NormSq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(problem: ProblemConfig, sampler: SamplerConfig, seed: u64) -> Self {
        let mut cfg = Self {
            problem,
            sampler,
            output: OutputConfig::default(),
            seed,
        };
        cfg.problem.fill_defaults();
        cfg.sampler.seed = seed;
        cfg
    }

    /// Parses JSON text, fills defaults and validates; errors carry key paths.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.problem.fill_defaults();
        cfg.sampler.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    /// Structural checks that need no problem assembly.
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if self.output.thin == 0 {
            return Err(Error::config("output.thin", "stride must be positive"));
        }
        let dof = self.problem.points.map(|p| match self.problem.kind {
            ProblemKind::LevelSet => p * p,
            _ => p,
        });
        self.sampler.validate(dof.unwrap_or(usize::MAX))
    }

    /// Sets the master seed in both places it is read.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sampler.seed = seed;
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    /// Hex SHA-256 of the compact JSON encoding, whose key order is fixed by the types.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::SamplerKind;

    const MINIMAL: &str = r#"{
        "problem": {"kind": "linear"},
        "sampler": {"kind": "safes", "n_particles": 40, "n_steps": 100}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.sampler.lambda, 0.2);
        assert_eq!(cfg.sampler.burn_in_fraction, 0.25);
        assert_eq!(cfg.sampler.beta0, 0.5);
        assert_eq!(cfg.sampler.stretch_a, 2.0);
        assert_eq!(cfg.problem.points, Some(100));
        assert_eq!(cfg.problem.observations, Some(25));
        assert_eq!(cfg.problem.gamma, Some(1e-3));
        assert_eq!(cfg.output.thin, 10);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn particle_count_is_required() {
        let text = r#"{"problem": {"kind": "linear"}, "sampler": {"kind": "safes", "n_steps": 10}}"#;
        match RunConfig::parse(text) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "sampler");
                assert!(message.contains("n_particles"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_name_key_paths() {
        let neg = MINIMAL.replace("\"n_steps\": 100", "\"n_steps\": 100, \"lambda\": -1");
        match RunConfig::parse(&neg) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "sampler.lambda"),
            other => panic!("{other:?}"),
        }
        let unknown = MINIMAL.replace("\"kind\": \"linear\"", "\"kind\": \"linear\", \"colour\": 3");
        match RunConfig::parse(&unknown) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "problem.colour");
                assert!(message.contains("unknown field"));
            }
            other => panic!("{other:?}"),
        }
        let gamma = MINIMAL.replace("\"kind\": \"linear\"", "\"kind\": \"linear\", \"gamma\": 0");
        assert!(matches!(RunConfig::parse(&gamma), Err(Error::Config { path, .. }) if path == "problem.gamma"));
        let m = MINIMAL.replace("\"safes\"", "\"safes_p\"").replace("100}", "100, \"subspace_dim\": 101}");
        assert!(matches!(RunConfig::parse(&m), Err(Error::Config { path, .. }) if path == "sampler.subspace_dim"));
        let variant = MINIMAL.replace("\"kind\": \"linear\"", "\"kind\": \"linear\", \"variant\": \"i\"");
        assert!(matches!(RunConfig::parse(&variant), Err(Error::Config { path, .. }) if path == "problem.variant"));
    }

    #[test]
    fn parse_serialize_parse_round_trips() {
        let text = r#"{
            "problem": {"kind": "darcy", "variant": "ii", "points": 50},
            "sampler": {"kind": "fes", "n_particles": 8, "n_steps": 20, "subspace_dim": 4,
                        "adapt": {"window": 50}},
            "output": {"thin": 3, "dir": "somewhere"},
            "seed": 18446744073709551615
        }"#;
        let a = RunConfig::parse(text).unwrap();
        assert_eq!(a.problem.gamma, Some(1e-4));
        assert_eq!(a.sampler.seed, u64::MAX);
        let b = RunConfig::parse(&a.to_json_pretty().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.set_seed(1);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
        let c = RunConfig::new(ProblemConfig::new(ProblemKind::Linear), SamplerConfig::new(SamplerKind::Safes, 40, 100), 0);
        assert_eq!(a, c);
    }
}
