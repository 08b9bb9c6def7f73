//! Run configuration loaded from TOML. Unknown keys are rejected and every
//! command that writes a run directory stores the resolved snapshot there.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemsim::ReferenceSet;
use crate::datakit::{KeyPolicy, Phase1Format};
use crate::distill::DistillConfig;
use crate::grpo::GrpoConfig;
use crate::llmclient::LlmConfig;
use crate::tasks::{ScoringContext, StereoMode, TableOracle, WsrForm};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Scoring options for `eval`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub wsr_form: WsrForm,
    pub stereo: StereoMode,
    pub include_hydrogens: bool,
    /// SMILES-per-line reference set for MolCustom novelty.
    pub reference_set: Option<PathBuf>,
    /// Extra property oracles as `name -> smiles<TAB>value` tables, e.g. `qed`.
    pub property_tables: BTreeMap<String, PathBuf>,
}

impl EvalConfig {
    pub fn scoring_context(&self) -> Result<ScoringContext, ConfigError> {
        let mut ctx = ScoringContext {
            stereo: self.stereo,
            wsr_form: self.wsr_form,
            include_hydrogens: self.include_hydrogens,
            ..Default::default()
        };
        if let Some(p) = &self.reference_set {
            let r = ReferenceSet::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            ctx = ctx.with_reference(Arc::new(r));
        }
        for (name, p) in &self.property_tables {
            let t = TableOracle::load(name, p).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            ctx = ctx.with_oracle(name, Arc::new(t));
        }
        Ok(ctx)
    }
}

/// Options for `grpo-sim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoSimConfig {
    /// α values swept by the simulator.
    pub alphas: Vec<f64>,
    pub seed: u64,
    /// Objective settings; a scenario file's own `[grpo]` table wins.
    pub grpo: GrpoConfig,
}

impl Default for GrpoSimConfig {
    fn default() -> Self {
        GrpoSimConfig {
            alphas: vec![0.0, 1.0],
            seed: 0,
            grpo: GrpoConfig::default(),
        }
    }
}

/// Options for `data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub key_policy: KeyPolicy,
    /// Keep records that share a leakage key in one split.
    pub enforce_leakage: bool,
    pub phase1_format: Phase1Format,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
            key_policy: KeyPolicy::default(),
            enforce_leakage: true,
            phase1_format: Phase1Format::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_dir: Option<PathBuf>,
    /// Dataset for `distill`.
    pub dataset: Option<PathBuf>,
    pub teacher: LlmConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
    pub grpo_sim: GrpoSimConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`; relative paths inside the file resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = RunConfig::parse(&text, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.run_dir);
        fix(&mut self.dataset);
        fix(&mut self.teacher.cassette_path);
        fix(&mut self.distill.template_dir);
        fix(&mut self.distill.alignment_path);
        fix(&mut self.eval.reference_set);
        for p in self.eval.property_tables.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grpo_sim.grpo.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.grpo_sim.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(ConfigError::Invalid("grpo_sim.alphas must be finite and >= 0".into()));
        }
        if self.teacher.concurrency == 0 {
            return Err(ConfigError::Invalid("teacher.concurrency must be >= 1".into()));
        }
        if self.distill.k == 0 || self.distill.samples_per_question == 0 {
            return Err(ConfigError::Invalid("distill.k and distill.samples_per_question must be >= 1".into()));
        }
        let r = self.data.ratios;
        if r.iter().any(|x| x.is_nan() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(format!("data.ratios {r:?} must be >= 0 and sum to 1")));
        }
        Ok(())
    }

    /// The resolved config as TOML.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<(), ConfigError> {
        let io = |e: std::io::Error| ConfigError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("config.snapshot.toml"), self.snapshot()).map_err(io)
    }
}
