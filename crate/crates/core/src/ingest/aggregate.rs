use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::trips::TripRecord;
use crate::error::{Error, Result};
use crate::flowgraph::SparseFlowMatrix;

/// A trip mapped onto regions and interval indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignedTrip {
    pub start_region: usize,
    pub end_region: usize,
    pub start_interval: usize,
    pub end_interval: usize,
}

/// Why trips were dropped during assignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectCounts {
    pub out_of_bounds: usize,
    pub end_before_start: usize,
    pub before_t0: usize,
}

impl RejectCounts {
    pub fn total(&self) -> usize {
        self.out_of_bounds + self.end_before_start + self.before_t0
    }
}

#[derive(Debug, Clone)]
pub struct Assignment {
    pub trips: Vec<AssignedTrip>,
    pub rejected: RejectCounts,
    /// Length of the time axis: one past the latest end interval.
    pub intervals: usize,
}

pub fn assign_trips(trips: &[TripRecord], grid: &GridSpec) -> Assignment {
    let mut rejected = RejectCounts::default();
    let mut out = Vec::with_capacity(trips.len());
    for t in trips {
        if t.t_s > t.t_e {
            rejected.end_before_start += 1;
            continue;
        }
        let (Some(si), Some(ei)) = (grid.interval_of(t.t_s), grid.interval_of(t.t_e)) else {
            rejected.before_t0 += 1;
            continue;
        };
        let (Some(sr), Some(er)) = (
            grid.assign_region(t.start_lat, t.start_lon),
            grid.assign_region(t.end_lat, t.end_lon),
        ) else {
            rejected.out_of_bounds += 1;
            continue;
        };
        out.push(AssignedTrip {
            start_region: sr,
            end_region: er,
            start_interval: si,
            end_interval: ei,
        });
    }
    let intervals = out.iter().map(|t| t.end_interval + 1).max().unwrap_or(0);
    Assignment {
        trips: out,
        rejected,
        intervals,
    }
}

/// Per-interval `m x k x 2` volume: channel 0 in-flow, channel 1 out-flow.
/// Stored row-major, so `values[region * 2 + channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeTensor {
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub values: Vec<f64>,
}

impl VolumeTensor {
    pub fn zeros(m: usize, k: usize, t: usize) -> Self {
        VolumeTensor {
            m,
            k,
            t,
            values: vec![0.0; m * k * 2],
        }
    }

    pub fn regions(&self) -> usize {
        self.m * self.k
    }

    pub fn in_flow(&self, region: usize) -> f64 {
        self.values[region * 2]
    }

    pub fn out_flow(&self, region: usize) -> f64 {
        self.values[region * 2 + 1]
    }
}

fn check_interval(t: usize, intervals: usize) -> Result<()> {
    if t >= intervals {
        Err(Error::Range(format!("interval {t} outside axis of {intervals}")))
    } else {
        Ok(())
    }
}

/// Trips that end during `t`, counted per `(start region, end region)`.
pub fn build_flow_matrix(
    trips: &[AssignedTrip],
    t: usize,
    intervals: usize,
    grid: &GridSpec,
) -> Result<SparseFlowMatrix> {
    check_interval(t, intervals)?;
    SparseFlowMatrix::from_triplets(
        grid.regions(),
        trips
            .iter()
            .filter(|tr| tr.end_interval == t)
            .map(|tr| (tr.start_region, tr.end_region, 1.0)),
    )
}

/// In-flow counts trips ending in a region during `t`; out-flow counts trips
/// starting there during `t`, wherever they end.
pub fn build_volume_tensor(
    trips: &[AssignedTrip],
    t: usize,
    intervals: usize,
    grid: &GridSpec,
) -> Result<VolumeTensor> {
    check_interval(t, intervals)?;
    let mut v = VolumeTensor::zeros(grid.m, grid.k, t);
    for tr in trips {
        if tr.end_interval == t {
            v.values[tr.end_region * 2] += 1.0;
        }
        if tr.start_interval == t {
            v.values[tr.start_region * 2 + 1] += 1.0;
        }
    }
    Ok(v)
}

/// Volume tensors and flow matrices for every interval on the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSeries {
    pub volumes: Vec<VolumeTensor>,
    pub flows: Vec<SparseFlowMatrix>,
}

impl IntervalSeries {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

/// Single pass over the trips producing the whole series.
pub fn aggregate(assignment: &Assignment, grid: &GridSpec) -> IntervalSeries {
    let n = grid.regions();
    let len = assignment.intervals;
    let mut volumes: Vec<VolumeTensor> = (0..len).map(|t| VolumeTensor::zeros(grid.m, grid.k, t)).collect();
    let mut triplets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); len];
    for tr in &assignment.trips {
        volumes[tr.end_interval].values[tr.end_region * 2] += 1.0;
        volumes[tr.start_interval].values[tr.start_region * 2 + 1] += 1.0;
        triplets[tr.end_interval].push((tr.start_region, tr.end_region, 1.0));
    }
    let flows = triplets
        .into_iter()
        .map(|tr| SparseFlowMatrix::from_triplets(n, tr).expect("regions come from the grid"))
        .collect();
    IntervalSeries { volumes, flows }
}
