use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ingest::VolumeTensor;

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check(preds, targets)?;
    let sse: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check(preds, targets)?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

fn check(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.len() != targets.len() {
        return shape_err(format!("{} predictions for {} targets", preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no entries to score".into()));
    }
    Ok(())
}

/// Historical average: elementwise mean of the input tensors.
pub fn ha_predict(history: &[VolumeTensor]) -> Result<VolumeTensor> {
    let first = history
        .first()
        .ok_or_else(|| Error::Empty("historical average needs at least one interval".into()))?;
    let mut out = VolumeTensor::zeros(first.m, first.k, first.t + history.len());
    for v in history {
        if v.values.len() != out.values.len() {
            return shape_err("history tensors differ in shape");
        }
        for (o, x) in out.values.iter_mut().zip(&v.values) {
            *o += x;
        }
    }
    let n = history.len() as f64;
    out.values.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyError {
    pub hour: usize,
    pub rmse: f64,
    pub mae: f64,
    pub instances: usize,
}

/// Scores over every region, channel and instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub instances: usize,
    pub hourly: Option<Vec<HourlyError>>,
}

impl EvalReport {
    /// `pairs` holds `(hour of target, prediction, target)` per instance.
    pub fn from_instances(pairs: &[(usize, Vec<f64>, Vec<f64>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("no instances to evaluate".into()));
        }
        let flat = |sel: &dyn Fn(&(usize, Vec<f64>, Vec<f64>)) -> bool| {
            let mut p = Vec::new();
            let mut t = Vec::new();
            for x in pairs.iter().filter(|x| sel(x)) {
                p.extend_from_slice(&x.1);
                t.extend_from_slice(&x.2);
            }
            (p, t)
        };
        let (p, t) = flat(&|_| true);
        let mut hourly = Vec::new();
        for hour in 0..24 {
            let count = pairs.iter().filter(|x| x.0 == hour).count();
            if count == 0 {
                continue;
            }
            let (hp, ht) = flat(&|x| x.0 == hour);
            hourly.push(HourlyError {
                hour,
                rmse: rmse(&hp, &ht)?,
                mae: mae(&hp, &ht)?,
                instances: count,
            });
        }
        Ok(EvalReport {
            rmse: rmse(&p, &t)?,
            mae: mae(&p, &t)?,
            instances: pairs.len(),
            hourly: Some(hourly),
        })
    }
}
