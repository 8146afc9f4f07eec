//! JSON run configuration: task, loss, model and optimizer settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::synthetic::SyntheticTaskSpec;
use crate::semantic::SemanticLossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 0.05, momentum: 0.9, steps: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// One head for both sides; otherwise the output side gets its own head.
    pub shared_head: bool,
    pub normalize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_dim: 64, shared_head: true, normalize: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: SyntheticTaskSpec,
    pub loss: SemanticLossConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// Patches per step, clamped to `H·W`.
    pub patches: usize,
    pub seed: u64,
    /// Draw a fresh pair every step instead of training on one pair.
    pub resample_pair: bool,
    /// When set, the curriculum warmup is this fraction of `optimizer.steps`,
    /// overriding `loss.schedule.warmup_steps`.
    pub warmup_fraction: Option<f64>,
    /// Diagnostics are evaluated and recorded every this many steps.
    pub log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: SyntheticTaskSpec::default(),
            loss: SemanticLossConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            patches: 256,
            seed: 0,
            resample_pair: false,
            warmup_fraction: Some(0.5),
            log_every: 10,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.loss.validate()?;
        if self.model.embed_dim == 0 {
            return Err(Error::Config("model.embed_dim must be positive".into()));
        }
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("optimizer.lr must be nonnegative, got {}", self.optimizer.lr)));
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(Error::Config(format!("optimizer.momentum must be in [0, 1), got {}", self.optimizer.momentum)));
        }
        if self.optimizer.steps == 0 {
            return Err(Error::Config("optimizer.steps must be at least 1".into()));
        }
        if self.patches < 3 {
            return Err(Error::Config(format!("patches must be at least 3, got {}", self.patches)));
        }
        if let Some(f) = self.warmup_fraction {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("warmup_fraction must be nonnegative, got {f}")));
            }
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Loss settings with the warmup resolved against the step budget.
    pub fn effective_loss(&self) -> SemanticLossConfig {
        let mut loss = self.loss;
        if let Some(f) = self.warmup_fraction {
            loss.schedule.warmup_steps = (f * self.optimizer.steps as f64).round() as u64;
        }
        loss
    }

    /// Patch count actually drawn per step.
    pub fn patch_count(&self) -> usize {
        self.patches.min(self.task.height * self.task.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"optimizer": {"lr": 0.1, "beta": 2}}"#).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
        let err = RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = RunConfig::from_json(r#"{"loss": {"contrast": {"temp": 1}}}"#).unwrap_err();
        assert!(err.to_string().contains("temp"), "{err}");
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"optimizer": {"steps": 40}, "loss": {"lambda_src": 0.0}}"#).unwrap();
        assert_eq!(cfg.optimizer.steps, 40);
        assert_eq!(cfg.optimizer.lr, 0.05);
        assert_eq!(cfg.loss.lambda_src, 0.0);
        assert_eq!(cfg.effective_loss().schedule.warmup_steps, 20);
    }

    #[test]
    fn invalid_values() {
        assert!(RunConfig::from_json(r#"{"optimizer": {"steps": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"loss": {"lambda_src": 0, "lambda_hdce": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"task": {"channels": 1}}"#).is_err());
    }
}
