//! Evaluation metrics, the historical-average baseline, flow-churn analysis
//! and experiment drivers, plus their CSV outputs.

mod churn;
pub mod emd;
mod experiment;
mod metrics;

use std::io::Write;

pub use churn::{
    cell_distance, churn_for_targets, churn_series, emd_churn, filter_high_churn, hourly_aggregate,
    jaccard_churn, FlowChurn, HourlyChurn,
};
pub use experiment::{
    evaluate_ha, evaluate_model, layer_sweep, method_name, scale_series, train_and_evaluate, Prepared,
    SplitConfig, SweepRow, TrainedModel,
};
pub use metrics::{ha_predict, mae, rmse, EvalReport, HourlyError};

use crate::error::Result;
use crate::ingest::GridSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub variant: String,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

/// `method,variant,rmse,mae,n`
pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "variant", "rmse", "mae", "n"])?;
    for r in rows {
        wtr.write_record([
            r.method.clone(),
            r.variant.clone(),
            r.rmse.to_string(),
            r.mae.to_string(),
            r.n.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `t,hour,jaccard,emd`; undefined EMD values are left empty.
pub fn write_churn_csv<W: Write>(w: W, churns: &[FlowChurn], grid: &GridSpec) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "hour", "jaccard", "emd"])?;
    for c in churns {
        wtr.write_record([
            c.t.to_string(),
            grid.hour_of(c.t).to_string(),
            c.jaccard.to_string(),
            if c.emd_undefined { String::new() } else { c.emd.to_string() },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `hour,jaccard,emd,count`
pub fn write_hourly_csv<W: Write>(w: W, rows: &[HourlyChurn]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["hour", "jaccard", "emd", "count"])?;
    for r in rows {
        wtr.write_record([r.hour.to_string(), r.jaccard.to_string(), r.emd.to_string(), r.count.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `layers,rmse,mae`
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["layers", "rmse", "mae"])?;
    for r in rows {
        wtr.write_record([r.layers.to_string(), r.rmse.to_string(), r.mae.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
