//! Training harness: configuration, the per-step trainer, the mean@k
//! evaluator, the experiment runner, and plotting.

pub mod eval;
pub mod experiment;
pub mod plot;
pub mod train;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;

use crate::advantage::AdvantageMode;
use crate::distill::Divergence;
use crate::error::{Error, Result};
use crate::policy::ModelConfig;
use crate::reflect::ReflectorMode;
use crate::tasks::TaskFamily;

pub use eval::evaluate;
pub use experiment::{run_experiment, RunSummary};
pub use plot::{available_metrics, plot};
pub use train::Trainer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GRPO")]
    Grpo,
    #[serde(rename = "SDPO")]
    Sdpo,
    #[serde(rename = "ROSD")]
    Rosd,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grpo" => Ok(Method::Grpo),
            "sdpo" => Ok(Method::Sdpo),
            "rosd" => Ok(Method::Rosd),
            other => Err(Error::Config(format!("unknown method: {other}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Grpo => "grpo",
            Method::Sdpo => "sdpo",
            Method::Rosd => "rosd",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeacherMode {
    #[serde(rename = "FROZEN")]
    Frozen,
    #[serde(rename = "EMA")]
    Ema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextSource {
    /// Condition the SDPO teacher on a successful rollout from the group.
    #[serde(rename = "GROUP")]
    Group,
    /// Condition the SDPO teacher on the task's reference solution.
    #[serde(rename = "ORACLE")]
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "SGD")]
    Sgd,
    #[serde(rename = "ADAM")]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistillNorm {
    /// Plain sum over positions.
    #[serde(rename = "SUM")]
    Sum,
    /// Mean over unmasked positions.
    #[serde(rename = "TOKEN_MEAN")]
    TokenMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub train_family: TaskFamily,
    pub eval_families: Vec<TaskFamily>,
    pub group_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub divergence: Divergence,
    pub alpha: f64,
    pub top_k: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    pub advantage_mode: AdvantageMode,
    pub sigma_eps: f64,
    pub teacher_mode: TeacherMode,
    pub ema_tau: f64,
    pub reflector_mode: ReflectorMode,
    pub context_source: ContextSource,
    pub seed: u64,
    pub lr: f64,
    pub lambda_grpo: f64,
    /// Supervised format warmup steps on reference solutions before the RL
    /// phase; the teacher and reflector snapshot the post-warmup weights.
    pub warmup_steps: usize,
    /// Learning rate for the warmup phase (always Adam).
    pub warmup_lr: f64,
    /// Global-norm gradient clip for the RL phase; 0 disables.
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub distill_norm: DistillNorm,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub train_problems: usize,
    pub eval_problems: usize,
    pub checkpoint_every: usize,
    pub log_reflections: bool,
    pub strict_locate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Rosd,
            train_family: TaskFamily::ArithChain,
            eval_families: vec![TaskFamily::ArithChain, TaskFamily::StringTransform],
            group_size: 8,
            batch_size: 32,
            steps: 500,
            eval_every: 10,
            eval_samples: 8,
            divergence: Divergence::Jsd,
            alpha: 0.5,
            top_k: 100,
            eps_low: 0.2,
            eps_high: 0.28,
            advantage_mode: AdvantageMode::Unbiased,
            sigma_eps: 1e-6,
            teacher_mode: TeacherMode::Frozen,
            ema_tau: 0.9,
            reflector_mode: ReflectorMode::Oracle,
            context_source: ContextSource::Group,
            seed: 0,
            lr: 0.05,
            lambda_grpo: 0.0,
            warmup_steps: 0,
            warmup_lr: 0.003,
            grad_clip: 1.0,
            optimizer: OptimizerKind::Sgd,
            temperature: 1.0,
            max_new_tokens: 96,
            distill_norm: DistillNorm::Sum,
            n_layers: 2,
            d_model: 64,
            n_heads: 8,
            context_len: 512,
            train_problems: 512,
            eval_problems: 32,
            checkpoint_every: 100,
            log_reflections: false,
            strict_locate: false,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.context_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if self.eval_samples < 1 {
            return Err(Error::Config("eval_samples must be >= 1".into()));
        }
        if self.lambda_grpo < 0.0 {
            return Err(Error::Config("lambda_grpo must be >= 0".into()));
        }
        if self.batch_size < 1 || self.steps < 1 || self.eval_every < 1 {
            return Err(Error::Config(
                "batch_size, steps, and eval_every must be >= 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0,1)".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_tau) {
            return Err(Error::Config("ema_tau must lie in [0,1]".into()));
        }
        if self.eval_families.is_empty() {
            return Err(Error::Config("eval_families must not be empty".into()));
        }
        Ok(())
    }

    /// Builds a config from flat key/value pairs (config files and CLI flags
    /// share this path). Unknown keys are rejected.
    pub fn from_kv(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in pairs {
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str, v: &str| Error::Config(format!("invalid {what}: {v}"));
        match key {
            "method" => self.method = value.parse()?,
            "train_family" => self.train_family = value.parse()?,
            "eval_families" => {
                self.eval_families = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse())
                    .collect::<Result<Vec<_>>>()?;
            }
            "group_size" => self.group_size = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "steps" => self.steps = value.parse().map_err(|_| bad(key, value))?,
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad(key, value))?,
            "eval_samples" => self.eval_samples = value.parse().map_err(|_| bad(key, value))?,
            "divergence" => self.divergence = value.parse()?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad(key, value))?,
            "top_k" => self.top_k = value.parse().map_err(|_| bad(key, value))?,
            "eps_low" => self.eps_low = value.parse().map_err(|_| bad(key, value))?,
            "eps_high" => self.eps_high = value.parse().map_err(|_| bad(key, value))?,
            "advantage_mode" => self.advantage_mode = value.parse()?,
            "sigma_eps" => self.sigma_eps = value.parse().map_err(|_| bad(key, value))?,
            "teacher_mode" => {
                self.teacher_mode = match value.to_ascii_lowercase().as_str() {
                    "frozen" => TeacherMode::Frozen,
                    "ema" => TeacherMode::Ema,
                    other => return Err(Error::Config(format!("unknown teacher mode: {other}"))),
                }
            }
            "ema_tau" => self.ema_tau = value.parse().map_err(|_| bad(key, value))?,
            "reflector_mode" => self.reflector_mode = value.parse()?,
            "context_source" => {
                self.context_source = match value.to_ascii_lowercase().as_str() {
                    "group" => ContextSource::Group,
                    "oracle" => ContextSource::Oracle,
                    other => return Err(Error::Config(format!("unknown context source: {other}"))),
                }
            }
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "lr" => self.lr = value.parse().map_err(|_| bad(key, value))?,
            "lambda_grpo" => self.lambda_grpo = value.parse().map_err(|_| bad(key, value))?,
            "warmup_steps" => self.warmup_steps = value.parse().map_err(|_| bad(key, value))?,
            "warmup_lr" => self.warmup_lr = value.parse().map_err(|_| bad(key, value))?,
            "grad_clip" => self.grad_clip = value.parse().map_err(|_| bad(key, value))?,
            "optimizer" => {
                self.optimizer = match value.to_ascii_lowercase().as_str() {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    other => return Err(Error::Config(format!("unknown optimizer: {other}"))),
                }
            }
            "temperature" => self.temperature = value.parse().map_err(|_| bad(key, value))?,
            "max_new_tokens" => self.max_new_tokens = value.parse().map_err(|_| bad(key, value))?,
            "distill_norm" => {
                self.distill_norm = match value.to_ascii_lowercase().as_str() {
                    "sum" => DistillNorm::Sum,
                    "token_mean" => DistillNorm::TokenMean,
                    other => return Err(Error::Config(format!("unknown distill norm: {other}"))),
                }
            }
            "n_layers" => self.n_layers = value.parse().map_err(|_| bad(key, value))?,
            "d_model" => self.d_model = value.parse().map_err(|_| bad(key, value))?,
            "n_heads" => self.n_heads = value.parse().map_err(|_| bad(key, value))?,
            "context_len" => self.context_len = value.parse().map_err(|_| bad(key, value))?,
            "train_problems" => self.train_problems = value.parse().map_err(|_| bad(key, value))?,
            "eval_problems" => self.eval_problems = value.parse().map_err(|_| bad(key, value))?,
            "checkpoint_every" => {
                self.checkpoint_every = value.parse().map_err(|_| bad(key, value))?
            }
            "log_reflections" => {
                self.log_reflections = value.parse().map_err(|_| bad(key, value))?
            }
            "strict_locate" => self.strict_locate = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(Error::Config(format!("unknown config key: {other}"))),
        }
        Ok(())
    }
}

/// Parses a flat `key = value` config file (one pair per line, `#` comments).
pub fn parse_kv_file(content: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "config line {} is not `key = value`: {line}",
                lineno + 1
            )));
        };
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Per-step training metrics. Wall time lives outside the reproducible
/// metrics log (see `timings.jsonl`), so it is not serialized here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub rollout_accuracy: f64,
    pub loss: f64,
    pub match_rate: Option<f64>,
    pub mean_normalized_error_position: Option<f64>,
    pub mean_response_length: f64,
    pub grad_norm: f64,
    pub skipped_update: bool,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl StepMetrics {
    pub fn assert_finite(&self) -> Result<()> {
        let mut values = vec![
            self.rollout_accuracy,
            self.loss,
            self.mean_response_length,
            self.grad_norm,
        ];
        if let Some(m) = self.match_rate {
            values.push(m);
        }
        if let Some(m) = self.mean_normalized_error_position {
            values.push(m);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite metric at step {}: {self:?}",
                self.step
            )));
        }
        Ok(())
    }
}

/// A localization record appended to the metrics log for each located quote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub step: usize,
    pub rollout_id: String,
    pub k: usize,
    pub t: usize,
    pub match_kind: crate::locate::MatchKind,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MetricsRecord {
    #[serde(rename = "step")]
    Step(StepMetrics),
    #[serde(rename = "eval")]
    Eval {
        step: usize,
        family: TaskFamily,
        mean_at_k: f64,
        k: usize,
    },
    #[serde(rename = "localization")]
    Localization(LocalizationRecord),
}
