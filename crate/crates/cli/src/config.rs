//! Run configuration read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use epphier::data::ParamVector;
use epphier::dynamics::DynamicsConfig;
use epphier::evaluation::SimConfig;
use epphier::likelihood::{LikelihoodConfig, ModelConfig};
use epphier::priors::DEFAULT_LAMBDA;
use epphier::sampler::ImisConfig;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub sampler: ImisConfig,
    #[serde(default)]
    pub likelihood: LikelihoodConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub pooling: PoolingSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    pub simulate: Option<SimulateSection>,
    #[serde(default, rename = "area")]
    pub areas: Vec<AreaEntry>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingSection {
    pub candidates: usize,
    /// Joint draws used for trajectory quantiles.
    pub draws: usize,
    pub lambda: [f64; 8],
    pub correlation_years: Vec<i32>,
}

impl Default for PoolingSection {
    fn default() -> Self {
        PoolingSection {
            candidates: 1_000_000,
            draws: 2000,
            lambda: DEFAULT_LAMBDA,
            correlation_years: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub candidates: usize,
    pub draws: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            candidates: 200_000,
            draws: 1000,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub truth: ParamVector,
    pub areas: Vec<String>,
    pub sites: usize,
    pub first_year: i32,
    pub last_year: i32,
    #[serde(default)]
    pub observation: SimConfig,
    pub demography: DemographySpec,
}

/// Constant-rate demography written alongside simulated data.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographySpec {
    pub year_start: i32,
    pub year_end: i32,
    pub initial_population: f64,
    pub mu: f64,
    pub a50: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaEntry {
    pub id: String,
    pub anc: PathBuf,
    pub npbs: PathBuf,
    pub demography: PathBuf,
    pub initial_population: f64,
    /// Ensemble written by `fit` and read by `pool`; defaults to
    /// `<out_dir>/<id>_ensemble.csv`.
    pub ensemble: Option<PathBuf>,
}

/// A loaded config together with the directory its paths are relative to.
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
    pub out_dir: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn ensemble_path(&self, area: &AreaEntry) -> PathBuf {
        match &area.ensemble {
            Some(p) => self.resolve(p),
            None => self.out_dir.join(format!("{}_ensemble.csv", area.id)),
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dynamics: self.config.dynamics,
            likelihood: self.config.likelihood,
        }
    }
}

pub fn load(path: &Path, seed: Option<u64>, out_dir: Option<&Path>) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut config: RunConfig =
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let out_dir = match (out_dir, &config.out_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) if o.is_absolute() => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => base.join("out"),
    };
    let mut ids: Vec<&str> = config.areas.iter().map(|a| a.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        bail!("{}: area ids must be unique", path.display());
    }
    Ok(Loaded {
        config,
        base,
        out_dir,
    })
}

/// Parses `--lambda a,b,c,d,e,f,g,h`.
pub fn parse_lambda(s: &str) -> Result<[f64; 8]> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--lambda: cannot parse {s:?} as numbers"))?;
    match <[f64; 8]>::try_from(vals) {
        Ok(a) => Ok(a),
        Err(v) => bail!("--lambda needs 8 comma-separated values, got {}", v.len()),
    }
}
