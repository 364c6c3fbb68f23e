//! Run configuration, loaded from TOML and overridable from the environment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OrchestratorError;
use crate::dataset::PipelineConfig;
use crate::eval::DEPTHS;
use crate::expansion::CoExpansionConfig;
use crate::oracles::{ErrorInjectionProfile, ErrorType, RemoteConfig};

pub const ENV_STORE: &str = "COTREE_STORE";
pub const ENV_JUDGE_ENDPOINT: &str = "COTREE_JUDGE_ENDPOINT";
pub const ENV_JUDGE_TIMEOUT_MS: &str = "COTREE_JUDGE_TIMEOUT_MS";
pub const ENV_JUDGE_RETRIES: &str = "COTREE_JUDGE_RETRIES";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Synthesize,
    Evaluate,
    Dataset,
    Report,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Synthesize => "synthesize",
            Mode::Evaluate => "evaluate",
            Mode::Dataset => "dataset",
            Mode::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub runs_per_case: u32,
    pub depths: Vec<u32>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            runs_per_case: 3,
            depths: DEPTHS.to_vec(),
            seed: 0,
        }
    }
}

/// Remote judge settings; scripted judges are used when `endpoint` is unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        let r = RemoteConfig::default();
        JudgeConfig {
            endpoint: None,
            timeout_ms: r.timeout_ms,
            retries: r.retries,
            backoff_ms: r.backoff_ms,
            max_in_flight: r.max_in_flight,
        }
    }
}

impl JudgeConfig {
    pub fn remote(&self, endpoint: &str) -> RemoteConfig {
        RemoteConfig {
            endpoint: endpoint.to_string(),
            timeout_ms: self.timeout_ms,
            retries: self.retries,
            backoff_ms: self.backoff_ms,
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub count: usize,
    pub seed: u64,
    pub stochasticity: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            count: 10,
            seed: 0,
            stochasticity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Glob over task ids.
    pub tasks: String,
    pub mode: Mode,
    pub workers: usize,
    pub base_seed: u64,
    pub store: PathBuf,
    pub co_expansion: CoExpansionConfig,
    pub policy: ErrorInjectionProfile,
    pub recovery: ErrorInjectionProfile,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub judge: JudgeConfig,
    pub generate: GenerateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut recovery = ErrorInjectionProfile::uniform(0.01, 0.6);
        recovery.rates.remove(&ErrorType::FailToTerminate);
        RunConfig {
            tasks: "*".into(),
            mode: Mode::Synthesize,
            workers: 1,
            base_seed: 0,
            store: PathBuf::from("store"),
            co_expansion: CoExpansionConfig::default(),
            policy: ErrorInjectionProfile::uniform(0.03, 0.2),
            recovery,
            pipeline: PipelineConfig::default(),
            eval: EvalConfig::default(),
            judge: JudgeConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            OrchestratorError::Config(m) => OrchestratorError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `COTREE_*` overrides read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), OrchestratorError> {
        if let Some(s) = var(ENV_STORE).filter(|s| !s.is_empty()) {
            self.store = PathBuf::from(s);
        }
        if let Some(s) = var(ENV_JUDGE_ENDPOINT) {
            self.judge.endpoint = (!s.is_empty()).then_some(s);
        }
        let num = |name: &str, s: String| {
            s.parse::<u64>()
                .map_err(|e| OrchestratorError::Config(format!("{name}={s}: {e}")))
        };
        if let Some(s) = var(ENV_JUDGE_TIMEOUT_MS) {
            self.judge.timeout_ms = num(ENV_JUDGE_TIMEOUT_MS, s)?;
        }
        if let Some(s) = var(ENV_JUDGE_RETRIES) {
            self.judge.retries = num(ENV_JUDGE_RETRIES, s)? as u32;
        }
        Ok(())
    }

    pub fn apply_process_env(&mut self) -> Result<(), OrchestratorError> {
        self.apply_env(|k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let cfg = |m: String| Err(OrchestratorError::Config(m));
        if self.workers == 0 {
            return cfg("workers must be at least 1".into());
        }
        if let Err(e) = glob::Pattern::new(&self.tasks) {
            return cfg(format!("task glob `{}`: {e}", self.tasks));
        }
        self.co_expansion
            .validate()
            .map_err(|e| OrchestratorError::Config(e.to_string()))?;
        self.pipeline
            .validate()
            .map_err(|e| OrchestratorError::Config(e.to_string()))?;
        self.policy
            .validate()
            .map_err(|e| OrchestratorError::Config(format!("policy: {e}")))?;
        self.recovery
            .validate()
            .map_err(|e| OrchestratorError::Config(format!("recovery: {e}")))?;
        if self.eval.runs_per_case == 0 {
            return cfg("eval.runs_per_case must be positive".into());
        }
        if let Some(d) = self.eval.depths.iter().find(|d| !DEPTHS.contains(d)) {
            return cfg(format!("eval depth {d} is not one of {DEPTHS:?}"));
        }
        if !(0.0..=1.0).contains(&self.generate.stochasticity) {
            return cfg("generate.stochasticity must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Digest of every setting that affects a task's synthesized tree.
    pub fn synthesis_hash(&self) -> String {
        let key = serde_json::json!({
            "base_seed": self.base_seed,
            "co_expansion": self.co_expansion,
            "policy": self.policy,
            "recovery": self.recovery,
            "judge": self.judge.endpoint,
        });
        hex::encode(&Sha256::digest(key.to_string().as_bytes())[..8])
    }
}
