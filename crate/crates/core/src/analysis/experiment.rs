//! Train/validation/test preparation and scoring on the original scale.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ha_predict, EvalReport};
use crate::error::{Error, Result};
use crate::fcgru::{predict, ModelSpec, Variant};
use crate::ingest::{split_ranges, DatasetFile, GridSpec, IntervalSeries, MinMaxScaler, Splits, WindowDataset};
use crate::train::{train, Checkpoint, EpochLog, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub history: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            history: 6,
            train_frac: 0.7,
            val_frac: 0.1,
        }
    }
}

/// Raw and scaled windows for each split. Scaling statistics come from the
/// training intervals only.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: GridSpec,
    pub splits: Splits,
    pub scaler: MinMaxScaler,
    pub raw: Arc<IntervalSeries>,
    pub scaled: Arc<IntervalSeries>,
    pub train: WindowDataset,
    pub val: WindowDataset,
    pub test: WindowDataset,
}

impl Prepared {
    pub fn new(file: &DatasetFile, cfg: &SplitConfig) -> Result<Self> {
        let raw = &file.series;
        let splits = split_ranges(raw.len(), cfg.train_frac, cfg.val_frac);
        let scaler = MinMaxScaler::fit(&raw.volumes[splits.train.clone()], &raw.flows[splits.train]);
        Self::with_scaler(file, cfg, scaler)
    }

    /// Like [`Prepared::new`] but with fixed scaling statistics, e.g. the
    /// ones stored in a checkpoint.
    pub fn with_scaler(file: &DatasetFile, cfg: &SplitConfig, scaler: MinMaxScaler) -> Result<Self> {
        let raw = file.series.clone();
        let splits = split_ranges(raw.len(), cfg.train_frac, cfg.val_frac);
        let scaled = Arc::new(scale_series(&raw, &scaler)?);
        let ds = |r: std::ops::Range<usize>| WindowDataset::build(scaled.clone(), r, cfg.history);
        Ok(Prepared {
            grid: file.grid().clone(),
            train: ds(splits.train.clone()),
            val: ds(splits.val.clone()),
            test: ds(splits.test.clone()),
            splits,
            scaler,
            raw,
            scaled,
        })
    }

    /// The same windows over unscaled data.
    pub fn raw_view(&self, ds: &WindowDataset) -> WindowDataset {
        ds.with_series(self.raw.clone())
    }
}

pub fn scale_series(series: &IntervalSeries, scaler: &MinMaxScaler) -> Result<IntervalSeries> {
    Ok(IntervalSeries {
        volumes: series.volumes.iter().map(|v| scaler.apply_volume(v)).collect(),
        flows: series.flows.iter().map(|f| scaler.apply_flows(f)).collect::<Result<_>>()?,
    })
}

/// Scores a trained model on `ds` (scaled windows); predictions are mapped
/// back through `scaler` and compared with the unscaled targets.
pub fn evaluate_model(
    ds: &WindowDataset,
    raw: &Arc<IntervalSeries>,
    grid: &GridSpec,
    spec: &ModelSpec,
    params: &crate::fcgru::ModelParams,
    scaler: &MinMaxScaler,
) -> Result<EvalReport> {
    let pairs: Vec<(usize, Vec<f64>, Vec<f64>)> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let w = ds.window(i);
            let mut p = predict(&w, spec, params)?.values;
            scaler.invert_values(&mut p);
            Ok((grid.hour_of(w.t), p, raw.volumes[w.t].values.clone()))
        })
        .collect::<Result<_>>()?;
    EvalReport::from_instances(&pairs)
}

/// Historical-average baseline on unscaled windows.
pub fn evaluate_ha(ds: &WindowDataset, grid: &GridSpec) -> Result<EvalReport> {
    let pairs: Vec<(usize, Vec<f64>, Vec<f64>)> = ds
        .iter()
        .map(|w| Ok((grid.hour_of(w.t), ha_predict(w.inputs)?.values, w.target.values.clone())))
        .collect::<Result<_>>()?;
    EvalReport::from_instances(&pairs)
}

/// Result of training one model and scoring it on the test split.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub test: EvalReport,
}

pub fn train_and_evaluate(prep: &Prepared, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    if prep.test.is_empty() {
        return Err(Error::Empty("test split has no windows".into()));
    }
    let outcome = train(&prep.train, Some(&prep.val), spec, cfg)?;
    let test = evaluate_model(&prep.test, &prep.raw, &prep.grid, spec, &outcome.params, &prep.scaler)?;
    Ok(TrainedModel {
        checkpoint: Checkpoint {
            spec: spec.clone(),
            params: outcome.params,
            optimizer: Some(outcome.optimizer),
            scaler: prep.scaler.clone(),
            seed: cfg.seed,
            epoch: outcome.epoch,
        },
        log: outcome.log,
        test,
    })
}

/// Display name of a method in result tables.
pub fn method_name(variant: Option<Variant>) -> &'static str {
    match variant {
        None => "HA",
        Some(Variant::Fc) => "FC-GRU",
        Some(Variant::Full) => "FlowConvGRU",
        Some(Variant::Nc) => "FlowConvGRU-nc",
        Some(Variant::Nf) => "FlowConvGRU-nf",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layers: usize,
    pub rmse: f64,
    pub mae: f64,
}

/// Trains one model per depth with a shared seed and scores each on the
/// test split.
pub fn layer_sweep(
    prep: &Prepared,
    base: &ModelSpec,
    cfg: &TrainConfig,
    depths: &[usize],
) -> Result<Vec<(SweepRow, TrainedModel)>> {
    depths
        .iter()
        .map(|&layers| {
            let spec = ModelSpec { layers, ..base.clone() };
            let model = train_and_evaluate(prep, &spec, cfg)?;
            Ok((
                SweepRow {
                    layers,
                    rmse: model.test.rmse,
                    mae: model.test.mae,
                },
                model,
            ))
        })
        .collect()
}
