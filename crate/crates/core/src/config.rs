//! Run configuration files.
//!
//! A run config is a TOML document bundling the training configuration
//! with a seed list and an output directory. Unknown keys are rejected at
//! parse time so typos fail loudly instead of silently using defaults.
//!
//! ```toml
//! out_dir = "runs/abc"
//! seeds = [1, 2, 3, 4, 5]
//!
//! [task]
//! kind = "last_token"
//! vocab_size = 16
//! episode_len = 9
//!
//! [train]
//! mode = "abc"
//! steps = 500
//! lr = 0.5
//! ```
//!
//! Everything under `[train]` (and its nested `task`/`policy`/`clip`/`eval`
//! tables) is optional and falls back to the documented defaults. `eps3 =
//! inf` is valid TOML and selects the unbounded suppression side.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{EvalSettings, PolicyShape, TaskSpec, TrainConfig};

/// Top-level run configuration document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Output directory; a CLI `--out` flag or the `GRPOLAB_OUT_ROOT`
    /// environment variable can override or prefix it.
    pub out_dir: Option<String>,
    /// Seeds to run. Empty means "use the default seed list".
    pub seeds: Vec<u64>,
    /// Task definition (mirrors `train.task`; kept at top level for
    /// readability of shipped configs).
    pub task: Option<TaskSpec>,
    /// Policy shape override.
    pub policy: Option<PolicyShape>,
    /// Clip thresholds override.
    pub clip: Option<crate::clip::ClipConfig>,
    /// Evaluation settings override.
    pub eval: Option<EvalSettings>,
    /// Core training parameters.
    pub train: TrainConfig,
}

/// Default seed list used when a config (and the CLI) provide none.
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

impl RunConfig {
    /// Parse and validate a TOML run config.
    pub fn from_str(body: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(body).map_err(|e| Error::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Load a run config from disk.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<RunConfig> {
        let body = std::fs::read_to_string(&path)?;
        RunConfig::from_str(&body)
    }

    /// Seeds to run: the config's list, or the default sweep.
    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            DEFAULT_SEEDS.to_vec()
        } else {
            self.seeds.clone()
        }
    }

    /// True when the config did not specify seeds explicitly.
    pub fn used_default_seeds(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Materialize the training config for one seed, applying the
    /// top-level task/policy/clip/eval overrides.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut config = self.train.clone();
        if let Some(task) = &self.task {
            config.task = task.clone();
        }
        if let Some(policy) = &self.policy {
            config.policy = *policy;
        }
        if let Some(clip) = &self.clip {
            config.clip = *clip;
        }
        if let Some(eval) = &self.eval {
            config.eval = eval.clone();
        }
        config.seed = seed;
        config
    }

    pub fn validate(&self) -> Result<()> {
        // Validate the merged view, not the raw parts.
        let seed = self.seeds.first().copied().unwrap_or(DEFAULT_SEEDS[0]);
        self.train_config(seed).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::ClipMode;

    #[test]
    fn minimal_config_uses_defaults() {
        let config = RunConfig::from_str("").unwrap();
        assert_eq!(config.seeds(), DEFAULT_SEEDS.to_vec());
        assert!(config.used_default_seeds());
        let train = config.train_config(7);
        assert_eq!(train.seed, 7);
        assert_eq!(train.group_size, 8);
        assert_eq!(train.minibatches_per_batch, 4);
        assert_eq!(train.clip.grpo_eps, 0.2);
    }

    #[test]
    fn top_level_tables_override_train() {
        let body = r#"
seeds = [9]

[task]
kind = "needle"
vocab_size = 8
episode_len = 6
needle_pos = 2

[clip]
eps1 = 0.3
eps2 = 0.3
eps3 = inf
eps4 = 0.3
grpo_eps = 0.3

[train]
mode = "grpo"
steps = 10
"#;
        let config = RunConfig::from_str(body).unwrap();
        let train = config.train_config(9);
        assert_eq!(train.mode, ClipMode::Grpo);
        assert_eq!(train.task.kind, "needle");
        assert_eq!(train.clip.eps3, f64::INFINITY);
        assert_eq!(train.steps, 10);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_name() {
        let err = RunConfig::from_str("stepz = 5\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("stepz"), "diagnostic should name the key: {msg}");

        let nested = RunConfig::from_str("[train]\nlearning_rate = 0.1\n").unwrap_err();
        let msg = format!("{nested}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn semantic_validation_runs_on_load() {
        let err = RunConfig::from_str("[train]\ngroup_size = 1\n").unwrap_err();
        assert!(format!("{err}").contains("group_size"));
    }

    #[test]
    fn round_trips_through_toml() {
        let body = r#"
seeds = [1, 2]

[train]
mode = "abc"
steps = 3
lr = 0.25
"#;
        let config = RunConfig::from_str(body).unwrap();
        let emitted = toml::to_string_pretty(&config).unwrap();
        let reparsed = RunConfig::from_str(&emitted).unwrap();
        assert_eq!(config, reparsed);
    }
}
