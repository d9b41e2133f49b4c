use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::emd::normalized_emd;
use crate::error::{shape_err, Result};
use crate::flowgraph::SparseFlowMatrix;
use crate::ingest::{GridSpec, IntervalSeries, WindowDataset};

/// Change in flow structure between interval `t` and `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowChurn {
    pub t: usize,
    pub jaccard: f64,
    pub emd: f64,
    /// No region had in-flow at both intervals; `emd` is 0 by convention.
    pub emd_undefined: bool,
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Mean over regions of the Jaccard similarity of receptive fields; a
/// region with empty fields at both times counts as 1.
pub fn jaccard_churn(f_t: &SparseFlowMatrix, f_next: &SparseFlowMatrix) -> Result<f64> {
    if f_t.n() != f_next.n() {
        return shape_err(format!("flow graphs over {} and {} regions", f_t.n(), f_next.n()));
    }
    let n = f_t.n();
    if n == 0 {
        return Ok(1.0);
    }
    let a = f_t.receptive_fields();
    let b = f_next.receptive_fields();
    Ok(a.iter().zip(&b).map(|(x, y)| jaccard(x, y)).sum::<f64>() / n as f64)
}

/// Euclidean distance between two cell centres, in cell units.
pub fn cell_distance(grid: &GridSpec, a: usize, b: usize) -> f64 {
    let (ra, ca) = grid.cell(a);
    let (rb, cb) = grid.cell(b);
    let dr = ra as f64 - rb as f64;
    let dc = ca as f64 - cb as f64;
    (dr * dr + dc * dc).sqrt()
}

/// In-flow column `f[:, i]` as a dense vector over source regions.
fn in_flow_column(f: &SparseFlowMatrix, i: usize) -> Vec<f64> {
    let mut col = vec![0.0; f.n()];
    for &(src, dst, w) in f.entries() {
        if dst == i {
            col[src] = w;
        }
    }
    col
}

/// Mean EMD between consecutive normalized in-flow distributions, over
/// regions with in-flow at both times. Returns `(value, included regions)`;
/// value 0 when nothing is included.
pub fn emd_churn(f_t: &SparseFlowMatrix, f_next: &SparseFlowMatrix, grid: &GridSpec) -> Result<(f64, usize)> {
    if f_t.n() != f_next.n() || f_t.n() != grid.regions() {
        return shape_err("flow graphs and grid disagree on region count");
    }
    let in_a = f_t.column_sums();
    let in_b = f_next.column_sums();
    let mut total = 0.0;
    let mut included = 0;
    for i in 0..grid.regions() {
        if in_a[i] <= 0.0 || in_b[i] <= 0.0 {
            continue;
        }
        let a = in_flow_column(f_t, i);
        let b = in_flow_column(f_next, i);
        if let Some(d) = normalized_emd(&a, &b, |x, y| cell_distance(grid, x, y))? {
            total += d;
            included += 1;
        }
    }
    Ok(if included == 0 {
        (0.0, 0)
    } else {
        (total / included as f64, included)
    })
}

/// Churn between every pair of consecutive intervals.
pub fn churn_series(series: &IntervalSeries, grid: &GridSpec) -> Result<Vec<FlowChurn>> {
    use rayon::prelude::*;
    (0..series.len().saturating_sub(1))
        .into_par_iter()
        .map(|t| {
            let (a, b) = (&series.flows[t], &series.flows[t + 1]);
            let (emd, included) = emd_churn(a, b, grid)?;
            Ok(FlowChurn {
                t,
                jaccard: jaccard_churn(a, b)?,
                emd,
                emd_undefined: included == 0,
            })
        })
        .collect()
}

/// Churn leading into each window's target: the change from `t − 1` to `t`.
pub fn churn_for_targets(ds: &WindowDataset, churns: &[FlowChurn]) -> Vec<f64> {
    ds.targets()
        .iter()
        .map(|&t| churns.iter().find(|c| c.t + 1 == t).map_or(0.0, |c| c.emd))
        .collect()
}

/// Windows whose churn strictly exceeds `threshold`.
pub fn filter_high_churn(ds: &WindowDataset, churns: &[f64], threshold: f64) -> Result<WindowDataset> {
    if churns.len() != ds.len() {
        return shape_err(format!("{} churn values for {} windows", churns.len(), ds.len()));
    }
    Ok(ds.subset(|i, _| churns[i] > threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyChurn {
    pub hour: usize,
    pub jaccard: f64,
    pub emd: f64,
    pub count: usize,
}

/// Mean churn per hour of day (by the start of interval `t`). Intervals
/// with undefined EMD are left out of the EMD mean. Hours without data
/// report `NaN`.
pub fn hourly_aggregate(churns: &[FlowChurn], grid: &GridSpec) -> Vec<HourlyChurn> {
    let mut acc = [(0.0f64, 0usize, 0.0f64, 0usize); 24];
    for c in churns {
        let a = &mut acc[grid.hour_of(c.t)];
        a.0 += c.jaccard;
        a.1 += 1;
        if !c.emd_undefined {
            a.2 += c.emd;
            a.3 += 1;
        }
    }
    acc.iter()
        .enumerate()
        .map(|(hour, &(js, jn, es, en))| HourlyChurn {
            hour,
            jaccard: if jn > 0 { js / jn as f64 } else { f64::NAN },
            emd: if en > 0 { es / en as f64 } else { f64::NAN },
            count: jn,
        })
        .collect()
}
