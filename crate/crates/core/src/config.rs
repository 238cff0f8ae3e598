//! JSON run configuration shared by every subcommand.
//!
//! A config file holds the global keys (`seed`, `threads`, `dataset`,
//! `activation`, `out`) plus one section per subcommand. Sections that the
//! invoked subcommand does not use may be present; unknown keys anywhere are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dataset::{load_dataset, synth_dataset, Dataset, DEFAULT_NORM_CONSTANT};
use crate::error::{Error, Result};
use crate::gram::DEFAULT_MC_SAMPLES;
use crate::harness::{
    FitMode, Thresholds, DEFAULT_MAX_STEPS, DEFAULT_RECORDS, DEFAULT_STOP_LOSS_RATIO,
    MIN_SWEEP_WIDTH,
};
use crate::integrator::DEFAULT_BLOWUP_NORM;
use crate::scaling::{ScalingConfig, Scheme};

fn default_seed() -> u64 {
    1
}

fn default_activation() -> String {
    Activation::Tanh.name().to_string()
}

fn default_records() -> usize {
    DEFAULT_RECORDS
}

fn default_stop_loss_ratio() -> f64 {
    DEFAULT_STOP_LOSS_RATIO
}

fn default_blowup_norm() -> f64 {
    DEFAULT_BLOWUP_NORM
}

fn default_max_steps() -> Option<usize> {
    Some(DEFAULT_MAX_STEPS)
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

fn default_label_scale() -> f64 {
    1.0
}

fn default_c() -> f64 {
    DEFAULT_NORM_CONSTANT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSource {
    Synth(SynthSpec),
    /// CSV file; relative paths resolve against the config file's directory.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_label_scale")]
    pub label_scale: f64,
}

/// Exactly one of `scheme`, `gamma1`/`gamma2` or `gamma`/`gamma_prime`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_prime: Option<f64>,
}

impl ScalingSpec {
    pub fn resolve(&self, d: usize, key: &str) -> Result<ScalingConfig> {
        let err = |msg: String| Error::Config(format!("key `{key}`: {msg}"));
        let exps = (self.gamma1, self.gamma2);
        let coords = (self.gamma, self.gamma_prime);
        let given = [self.scheme.is_some(), exps != (None, None), coords != (None, None)];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(err(
                "give exactly one of `scheme`, `gamma1`+`gamma2`, `gamma`+`gamma_prime`".into(),
            ));
        }
        let built = match (&self.scheme, exps, coords) {
            (Some(name), _, _) => {
                let scheme: Scheme = name.parse().map_err(|e: Error| err(e.to_string()))?;
                ScalingConfig::named_scheme(scheme, self.m, d)
            }
            (None, (Some(g1), Some(g2)), _) => ScalingConfig::from_exponents(self.m, g1, g2),
            (None, _, (Some(g), Some(gp))) => ScalingConfig::from_coordinates(self.m, g, gp),
            _ => return Err(err("exponents must be given in pairs".into())),
        };
        built.map_err(|e| err(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub scaling: ScalingSpec,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_records")]
    pub records: usize,
    #[serde(default = "default_stop_loss_ratio")]
    pub stop_loss_ratio: f64,
    #[serde(default = "default_blowup_norm")]
    pub blowup_norm: f64,
    /// Also write the final parameters as a binary snapshot.
    #[serde(default)]
    pub snapshot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `(γ, γ')` pairs.
    pub points: Vec<[f64; 2]>,
    pub widths: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_records")]
    pub records: usize,
    #[serde(default = "default_stop_loss_ratio")]
    pub stop_loss_ratio: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: Option<usize>,
    /// Overrides the mode implied by each point's region.
    #[serde(default)]
    pub fit_mode: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGridSection {
    pub gammas: Vec<f64>,
    pub gamma_primes: Vec<f64>,
    pub m_probe: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default = "default_records")]
    pub records: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GramSection {
    pub scaling: ScalingSpec,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// `ε` for the Monte Carlo kernels; the scaling's own `ε` when absent.
    #[serde(default)]
    pub kernel_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "default_c")]
    pub c: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { c: DEFAULT_NORM_CONSTANT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    pub dataset: DatasetSource,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub phase_grid: Option<PhaseGridSection>,
    #[serde(default)]
    pub gram: Option<GramSection>,
    #[serde(default)]
    pub validate: Option<ValidateSection>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Parse `path`, resolving a relative dataset path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let DatasetSource::Path(p) = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn activation(&self) -> Result<Activation> {
        self.activation.parse().map_err(|e: Error| Error::Config(format!("key `activation`: {e}")))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Synth(s) => synth_dataset(s.n, s.d, s.seed, s.label_scale),
            DatasetSource::Path(p) => load_dataset(p),
        }
    }

    /// Structural checks that need no data.
    fn check(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        self.activation()?;
        if self.threads == Some(0) {
            return cfg("key `threads`: must be at least 1".into());
        }
        if let DatasetSource::Synth(s) = &self.dataset {
            if s.n == 0 || s.d == 0 {
                return cfg("key `dataset.synth`: n and d must be positive".into());
            }
        }
        if let Some(s) = &self.simulate {
            check_schedule("simulate", s.t_max, s.dt, s.records)?;
        }
        if let Some(s) = &self.sweep {
            check_schedule("sweep", s.t_max, s.dt, s.records)?;
            if s.points.is_empty() {
                return cfg("key `sweep.points`: empty".into());
            }
            if s.widths.is_empty() || s.seeds.is_empty() {
                return cfg("key `sweep.widths`/`sweep.seeds`: empty".into());
            }
            if s.widths.windows(2).any(|w| w[0] >= w[1]) {
                return cfg("key `sweep.widths`: must be strictly increasing".into());
            }
            if s.widths[0] < MIN_SWEEP_WIDTH {
                return cfg(format!("key `sweep.widths`: widths must be >= {MIN_SWEEP_WIDTH}"));
            }
            if let Some(mode) = &s.fit_mode {
                mode.parse::<FitMode>()
                    .map_err(|e| Error::Config(format!("key `sweep.fit_mode`: {e}")))?;
            }
        }
        if let Some(g) = &self.phase_grid {
            check_schedule("phase_grid", g.t_max, None, g.records)?;
            if g.gammas.is_empty() || g.gamma_primes.is_empty() {
                return cfg("key `phase_grid.gammas`/`phase_grid.gamma_primes`: empty grid".into());
            }
            if g.seeds.is_empty() {
                return cfg("key `phase_grid.seeds`: empty".into());
            }
            if g.m_probe < 2 {
                return cfg("key `phase_grid.m_probe`: must be at least 2".into());
            }
        }
        if let Some(g) = &self.gram {
            if g.samples == 0 {
                return cfg("key `gram.samples`: must be positive".into());
            }
            if let Some(e) = g.kernel_eps {
                if !(e > 0.0 && e.is_finite()) {
                    return cfg("key `gram.kernel_eps`: must be positive".into());
                }
            }
        }
        if let Some(v) = &self.validate {
            if !(v.c >= 1.0 && v.c.is_finite()) {
                return cfg("key `validate.c`: must be a finite value >= 1".into());
            }
        }
        Ok(())
    }
}

fn check_schedule(
    section: &str,
    t_max: Option<f64>,
    dt: Option<f64>,
    records: usize,
) -> Result<()> {
    for (name, v) in [("t_max", t_max), ("dt", dt)] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("key `{section}.{name}`: must be positive")));
            }
        }
    }
    if records == 0 {
        return Err(Error::Config(format!("key `{section}.records`: must be positive")));
    }
    Ok(())
}
