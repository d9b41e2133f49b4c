use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial grid over a bounding box plus the time axis origin and step.
///
/// Regions are numbered row-major: row 0 is the northern edge (`lat_max`),
/// column 0 the western edge (`lon_min`), and `region = row * k + col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub m: usize,
    pub k: usize,
    pub interval_seconds: i64,
    pub t0: i64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lat_min < self.lat_max
            && self.lon_min < self.lon_max
            && self.m >= 1
            && self.k >= 1
            && self.interval_seconds > 0
            && [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid grid {self:?}")))
        }
    }

    pub fn regions(&self) -> usize {
        self.m * self.k
    }

    /// Region containing `(lat, lon)`, or `None` outside the bounding box.
    ///
    /// The northern and western edges belong to their cells; the southern and
    /// eastern edges belong to the last row and column.
    pub fn assign_region(&self, lat: f64, lon: f64) -> Option<usize> {
        if !(lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max)
        {
            return None;
        }
        let fr = (self.lat_max - lat) / (self.lat_max - self.lat_min);
        let fc = (lon - self.lon_min) / (self.lon_max - self.lon_min);
        let row = ((fr * self.m as f64).floor() as usize).min(self.m - 1);
        let col = ((fc * self.k as f64).floor() as usize).min(self.k - 1);
        Some(row * self.k + col)
    }

    /// `(row, col)` of a region.
    pub fn cell(&self, region: usize) -> (usize, usize) {
        (region / self.k, region % self.k)
    }

    /// Geographic center `(lat, lon)` of a region.
    pub fn cell_center(&self, region: usize) -> (f64, f64) {
        let (row, col) = self.cell(region);
        let dlat = (self.lat_max - self.lat_min) / self.m as f64;
        let dlon = (self.lon_max - self.lon_min) / self.k as f64;
        (
            self.lat_max - (row as f64 + 0.5) * dlat,
            self.lon_min + (col as f64 + 0.5) * dlon,
        )
    }

    /// Interval index of an epoch timestamp; `None` before `t0`.
    pub fn interval_of(&self, ts: i64) -> Option<usize> {
        if ts < self.t0 {
            None
        } else {
            Some(((ts - self.t0) / self.interval_seconds) as usize)
        }
    }

    /// Epoch seconds at which interval `t` starts.
    pub fn interval_start(&self, t: usize) -> i64 {
        self.t0 + t as i64 * self.interval_seconds
    }

    /// Hour of day (UTC) at the start of interval `t`.
    pub fn hour_of(&self, t: usize) -> usize {
        (self.interval_start(t).rem_euclid(86_400) / 3600) as usize
    }
}
