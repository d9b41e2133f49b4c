use serde::{Deserialize, Serialize};

use super::aggregate::VolumeTensor;
use crate::error::Result;
use crate::flowgraph::SparseFlowMatrix;

/// Min-max statistics for volume channels and flow weights.
///
/// Flow statistics range over every `(i, j)` pair, absent pairs counting as
/// zero, so for any sparse graph `fmin == 0` and scaling flows is a pure
/// rescale that leaves the sparsity pattern intact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub vmin: [f64; 2],
    pub vmax: [f64; 2],
    pub fmin: f64,
    pub fmax: f64,
}

fn affine(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn inverse(y: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        y * (hi - lo) + lo
    } else {
        lo
    }
}

impl MinMaxScaler {
    /// Fits on the given training intervals. With no intervals the scaler is
    /// the identity on `[0, 1]`.
    pub fn fit(volumes: &[VolumeTensor], flows: &[SparseFlowMatrix]) -> Self {
        let mut vmin = [f64::INFINITY; 2];
        let mut vmax = [f64::NEG_INFINITY; 2];
        for v in volumes {
            for pair in v.values.chunks_exact(2) {
                for c in 0..2 {
                    vmin[c] = vmin[c].min(pair[c]);
                    vmax[c] = vmax[c].max(pair[c]);
                }
            }
        }
        for c in 0..2 {
            if vmin[c] > vmax[c] {
                vmin[c] = 0.0;
                vmax[c] = 1.0;
            }
        }
        let mut fmin = f64::INFINITY;
        let mut fmax = f64::NEG_INFINITY;
        for f in flows {
            let n = f.n();
            if f.nnz() < n * n {
                fmin = fmin.min(0.0);
                fmax = fmax.max(0.0);
            }
            for &(_, _, w) in f.entries() {
                fmin = fmin.min(w);
                fmax = fmax.max(w);
            }
        }
        if fmin > fmax {
            fmin = 0.0;
            fmax = 1.0;
        }
        MinMaxScaler { vmin, vmax, fmin, fmax }
    }

    /// True when some statistic has zero range and maps everything to 0.
    pub fn degenerate(&self) -> bool {
        self.vmax[0] <= self.vmin[0] || self.vmax[1] <= self.vmin[1] || self.fmax <= self.fmin
    }

    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        affine(x, self.vmin[channel], self.vmax[channel])
    }

    pub fn invert(&self, channel: usize, y: f64) -> f64 {
        inverse(y, self.vmin[channel], self.vmax[channel])
    }

    pub fn apply_flow(&self, w: f64) -> f64 {
        affine(w, self.fmin, self.fmax)
    }

    pub fn invert_flow(&self, y: f64) -> f64 {
        inverse(y, self.fmin, self.fmax)
    }

    /// Scales an interleaved `(in, out)` buffer in place.
    pub fn apply_values(&self, values: &mut [f64]) {
        for pair in values.chunks_exact_mut(2) {
            pair[0] = self.apply(0, pair[0]);
            pair[1] = self.apply(1, pair[1]);
        }
    }

    pub fn invert_values(&self, values: &mut [f64]) {
        for pair in values.chunks_exact_mut(2) {
            pair[0] = self.invert(0, pair[0]);
            pair[1] = self.invert(1, pair[1]);
        }
    }

    pub fn apply_volume(&self, v: &VolumeTensor) -> VolumeTensor {
        let mut out = v.clone();
        self.apply_values(&mut out.values);
        out
    }

    pub fn apply_flows(&self, f: &SparseFlowMatrix) -> Result<SparseFlowMatrix> {
        f.map_weights(|w| self.apply_flow(w))
    }
}
