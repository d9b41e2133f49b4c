use std::path::Path;

use anyhow::{Context, Result};
use flowconv::analysis::SplitConfig;
use flowconv::fcgru::{ModelSpec, Variant};
use flowconv::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Experiment settings shared by the training and analysis commands. Every
/// key is optional in the JSON file; grid keys of an ingest config are
/// accepted and ignored, so one file can drive the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(rename = "history_T")]
    pub history: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub layers: usize,
    pub hidden: usize,
    pub diffusion_steps: usize,
    pub kernel_size: usize,
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub emd_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let split = SplitConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            history: split.history,
            train_frac: split.train_frac,
            val_frac: split.val_frac,
            layers: 3,
            hidden: 64,
            diffusion_steps: 2,
            kernel_size: 3,
            variant: Variant::Full,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            clip_norm: train.clip_norm,
            seed: train.seed,
            emd_threshold: 0.1,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn split(&self) -> SplitConfig {
        SplitConfig {
            history: self.history,
            train_frac: self.train_frac,
            val_frac: self.val_frac,
        }
    }

    pub fn model(&self, m: usize, k: usize, variant: Variant) -> ModelSpec {
        ModelSpec {
            m,
            k,
            layers: self.layers,
            hidden: self.hidden,
            diffusion_steps: self.diffusion_steps,
            history: self.history,
            kernel_size: self.kernel_size,
            variant,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            clip_norm: self.clip_norm,
        }
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Model depth.
    #[arg(long)]
    pub num_layers: Option<usize>,
    /// Hidden channels per layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Diffusion steps K.
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    /// History length T.
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        if let Some(v) = self.num_layers {
            cfg.layers = v;
        }
        take!(hidden, diffusion_steps, history, epochs, batch_size, lr, train_frac, val_frac);
        if self.clip_norm.is_some() {
            cfg.clip_norm = self.clip_norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_config_doubles_as_run_config() {
        let json = r#"{"lat_min":0,"lat_max":1,"lon_min":0,"lon_max":1,"m":2,"k":2,
                       "interval_seconds":3600,"t0":0,"history_T":4,"epochs":3}"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.history, 4);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.lr, 2e-4);
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig {
            epochs: 3,
            ..RunConfig::default()
        };
        Overrides {
            epochs: Some(9),
            clip_norm: Some(1.0),
            ..Overrides::default()
        }
        .apply(&mut cfg);
        assert_eq!(cfg.epochs, 9);
        assert_eq!(cfg.clip_norm, Some(1.0));
        assert_eq!(cfg.hidden, 64);
    }
}
