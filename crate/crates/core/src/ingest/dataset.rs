use std::ops::Range;
use std::sync::Arc;

use super::aggregate::{IntervalSeries, VolumeTensor};
use crate::flowgraph::SparseFlowMatrix;

/// Sliding windows of `history` consecutive intervals, each paired with the
/// interval that follows as its target. Windows borrow from a shared series.
#[derive(Debug, Clone)]
pub struct WindowDataset {
    series: Arc<IntervalSeries>,
    history: usize,
    targets: Vec<usize>,
}

/// One training instance.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub inputs: &'a [VolumeTensor],
    pub flows: &'a [SparseFlowMatrix],
    pub target: &'a VolumeTensor,
    /// Interval index of the target.
    pub t: usize,
}

impl WindowDataset {
    /// One window per target interval in `range` that has `history`
    /// preceding intervals inside `range`.
    pub fn build(series: Arc<IntervalSeries>, range: Range<usize>, history: usize) -> Self {
        let range = range.start.min(series.len())..range.end.min(series.len());
        let targets: Vec<usize> = if history == 0 || range.len() < history + 1 {
            if history > 0 {
                log::warn!(
                    "segment {range:?} has {} intervals, need at least {} for history {history}; no windows",
                    range.len(),
                    history + 1
                );
            }
            Vec::new()
        } else {
            (range.start + history..range.end).collect()
        };
        WindowDataset {
            series,
            history,
            targets,
        }
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn series(&self) -> &Arc<IntervalSeries> {
        &self.series
    }

    /// Target interval indices in window order.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn window(&self, i: usize) -> Window<'_> {
        let t = self.targets[i];
        let lo = t - self.history;
        Window {
            inputs: &self.series.volumes[lo..t],
            flows: &self.series.flows[lo..t],
            target: &self.series.volumes[t],
            t,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Window<'_>> + '_ {
        (0..self.len()).map(move |i| self.window(i))
    }

    /// Same windows over a different series of equal length (e.g. scaled).
    pub fn with_series(&self, series: Arc<IntervalSeries>) -> Self {
        assert_eq!(series.len(), self.series.len());
        WindowDataset {
            series,
            history: self.history,
            targets: self.targets.clone(),
        }
    }

    /// Keeps the windows selected by `keep`, preserving order.
    pub fn subset(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        WindowDataset {
            series: self.series.clone(),
            history: self.history,
            targets: self
                .targets
                .iter()
                .enumerate()
                .filter(|&(i, &t)| keep(i, t))
                .map(|(_, &t)| t)
                .collect(),
        }
    }
}

/// Contiguous train / validation / test interval ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn split_ranges(len: usize, train_frac: f64, val_frac: f64) -> Splits {
    let a = ((len as f64 * train_frac).round() as usize).min(len);
    let b = ((len as f64 * (train_frac + val_frac)).round() as usize).clamp(a, len);
    Splits {
        train: 0..a,
        val: a..b,
        test: b..len,
    }
}
