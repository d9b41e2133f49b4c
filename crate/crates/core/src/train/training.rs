use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::fcgru::{accumulate_grad, predict, ModelParams, ModelSpec};
use crate::ingest::WindowDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            lr: 2e-4,
            seed: 7,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch (best validation loss, or the last).
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Epoch the returned parameters come from; 0 means initialization.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Mean per-window squared-error loss.
pub fn evaluate_loss(ds: &WindowDataset, spec: &ModelSpec, params: &ModelParams) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation dataset has no windows".into()));
    }
    let losses: Vec<f64> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let w = ds.window(i);
            let p = predict(&w, spec, params)?;
            crate::fcgru::loss(&p.values, &w.target.values)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / ds.len() as f64)
}

/// Mini-batch Adam on mean-over-batch squared error.
///
/// Parameters come from a ChaCha8 stream seeded with `config.seed`; the same
/// stream then shuffles window order each epoch. Per-window gradients are
/// computed in parallel and summed in window order, so results do not depend
/// on the thread count.
pub fn train(
    train_ds: &WindowDataset,
    val_ds: Option<&WindowDataset>,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Empty("training dataset has no windows".into()));
    }
    if train_ds.history() != spec.history {
        return Err(Error::Config(format!(
            "dataset history {} differs from model history {}",
            train_ds.history(),
            spec.history
        )));
    }
    let val_ds = val_ds.filter(|v| !v.is_empty());
    let batch_size = config.batch_size.max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(spec, &mut rng);
    let mut optimizer = OptimizerState::new(
        spec,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );

    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let parts: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|&i| {
                    let w = train_ds.window(i);
                    let mut g = ModelParams::zeros(spec);
                    let l = accumulate_grad(w.inputs, w.flows, w.target, spec, &params, weight, &mut g)?;
                    Ok((l, g))
                })
                .collect::<Result<_>>()?;
            let mut grad = ModelParams::zeros(spec);
            for (l, g) in &parts {
                epoch_loss += l;
                grad.axpy(1.0, g);
            }
            if let Some(max) = config.clip_norm {
                let norm = grad.norm();
                if norm > max {
                    grad.scale(max / norm);
                }
            }
            adam_step(&mut params, &grad, &mut optimizer);
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("parameters after epoch {epoch} update {}", optimizer.step),
                });
            }
        }
        let train_loss = epoch_loss / train_ds.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("training loss at epoch {epoch}"),
            });
        }
        let val_loss = val_ds.map(|v| evaluate_loss(v, spec, &params)).transpose()?;
        log::info!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if let Some(v) = val_loss {
            if v < best.0 {
                best = (v, epoch, params.clone());
            }
        }
    }

    let (params, epoch) = if val_ds.is_some() && best.1 > 0 {
        (best.2, best.1)
    } else {
        (params, config.epochs)
    };
    Ok(TrainOutcome {
        params,
        optimizer,
        epoch,
        log,
    })
}

/// `epoch,train_loss,val_loss` CSV; empty `val_loss` when absent.
pub fn write_loss_log<W: std::io::Write>(w: W, log: &[EpochLog]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in log {
        wtr.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
