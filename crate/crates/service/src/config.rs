use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use selffeed::nn::{AdaMaxConfig, EncoderConfig};
use selffeed::sim::WorldConfig;
use selffeed::train::TrainConfig;

use crate::ServiceError;

pub const DEFAULT_GREETING: &str = "start a conversation with the chatbot! say anything you like.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub checkpoint: PathBuf,
    /// Saved candidate pool; falls back to the targets of `hh_data`.
    pub pool: Option<PathBuf>,
    /// Experience store directory; in memory when absent.
    pub store: Option<PathBuf>,
    /// Supervised Dialogue examples mixed into every retrain.
    pub hh_data: Option<PathBuf>,
    pub threshold: f64,
    pub retrain_every: usize,
    pub retrain_epochs: usize,
    pub max_sessions: usize,
    pub session_idle_timeout_secs: u64,
    pub history_limit: usize,
    pub greeting: String,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            checkpoint: PathBuf::from("checkpoint"),
            pool: None,
            store: None,
            hh_data: None,
            threshold: 0.5,
            retrain_every: 1000,
            retrain_epochs: 5,
            max_sessions: 64,
            session_idle_timeout_secs: 1800,
            history_limit: selffeed::text::DEFAULT_HISTORY_LIMIT,
            greeting: DEFAULT_GREETING.into(),
            seed: 0,
        }
    }
}

/// Training settings; every key has a matching `train` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub patience: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub history_limit: usize,
    pub feedback_factor: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let e = EncoderConfig::default();
        Self {
            epochs: t.max_epochs,
            batch_size: t.batch_size,
            lr: t.optimizer.base_lr,
            warmup_steps: t.optimizer.warmup_steps,
            patience: t.patience,
            seed: t.seed,
            embed_dim: e.embed_dim,
            layers: e.layers,
            heads: e.heads,
            ffn_dim: e.ffn_dim,
            max_seq_len: e.max_seq_len,
            history_limit: selffeed::text::DEFAULT_HISTORY_LIMIT,
            feedback_factor: 1.0,
        }
    }
}

impl TrainSettings {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            embed_dim: self.embed_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            optimizer: AdaMaxConfig {
                base_lr: self.lr,
                warmup_steps: self.warmup_steps,
                ..AdaMaxConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub history_limit: Option<usize>,
    #[arg(long)]
    pub feedback_factor: Option<f64>,
}

macro_rules! overlay {
    ($flags:expr, $cfg:expr, $($field:ident),*) => {
        $(if let Some(v) = &$flags.$field {
            $cfg.$field = v.clone();
        })*
    };
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainSettings) {
        overlay!(
            self,
            cfg,
            epochs,
            batch_size,
            lr,
            warmup_steps,
            patience,
            seed,
            embed_dim,
            layers,
            heads,
            ffn_dim,
            max_seq_len,
            history_limit,
            feedback_factor
        );
    }
}

/// The file named by `--config` or `SELFFEED_CONFIG`: one table per command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub serve: ServiceConfig,
    pub train: TrainSettings,
    pub world: Option<WorldConfig>,
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if self.retrain_every == 0 || self.retrain_epochs == 0 {
            return bad("retrain-every and retrain-epochs must be positive");
        }
        if self.max_sessions == 0 || self.session_idle_timeout_secs == 0 {
            return bad("max-sessions and session-idle-timeout-secs must be positive");
        }
        if self.history_limit == 0 {
            return bad("history-limit must be positive");
        }
        Ok(())
    }
}

/// Command-line overrides, one flag per config key.
#[derive(Debug, Clone, Default, Args)]
pub struct ServiceFlags {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub hh_data: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub retrain_every: Option<usize>,
    #[arg(long)]
    pub retrain_epochs: Option<usize>,
    #[arg(long)]
    pub max_sessions: Option<usize>,
    #[arg(long)]
    pub session_idle_timeout_secs: Option<u64>,
    #[arg(long)]
    pub history_limit: Option<usize>,
    #[arg(long)]
    pub greeting: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ServiceFlags {
    pub fn apply(&self, cfg: &mut ServiceConfig) {
        overlay!(
            self,
            cfg,
            bind,
            checkpoint,
            threshold,
            retrain_every,
            retrain_epochs,
            max_sessions,
            session_idle_timeout_secs,
            history_limit,
            greeting,
            seed
        );
        if self.pool.is_some() {
            cfg.pool = self.pool.clone();
        }
        if self.store.is_some() {
            cfg.store = self.store.clone();
        }
        if self.hh_data.is_some() {
            cfg.hh_data = self.hh_data.clone();
        }
    }
}
