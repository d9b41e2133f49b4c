//! Seeded synthetic commute traffic: morning home→work pulses per hub, each
//! trip answered by a work→home return a fixed number of intervals later,
//! plus uniform background trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GridSpec, TripRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hub {
    pub home: usize,
    pub work: usize,
    /// Mean home→work trips per morning interval.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub grid: GridSpec,
    pub days: usize,
    pub hubs: Vec<Hub>,
    /// Mean background trips per interval over the whole grid.
    pub noise_rate: f64,
    /// Intervals between a morning trip and its return.
    pub return_lag: usize,
    /// Hours of day `[start, end)` whose intervals carry commute pulses.
    #[serde(default = "default_morning")]
    pub morning_hours: (usize, usize),
    /// Poisson counts when true, otherwise `round(rate)` trips exactly.
    #[serde(default = "default_true")]
    pub poisson: bool,
    pub seed: u64,
}

fn default_morning() -> (usize, usize) {
    (7, 10)
}

fn default_true() -> bool {
    true
}

impl SynthConfig {
    /// 4x4 grid, hourly intervals, 14 days, four commute hubs.
    pub fn reference(seed: u64) -> Self {
        let grid = GridSpec {
            lat_min: 40.70,
            lat_max: 40.78,
            lon_min: -74.02,
            lon_max: -73.94,
            m: 4,
            k: 4,
            interval_seconds: 3600,
            t0: 1_420_070_400, // 2015-01-01T00:00:00Z
        };
        SynthConfig {
            grid,
            days: 14,
            hubs: vec![
                Hub { home: 0, work: 5, rate: 24.0 },
                Hub { home: 3, work: 6, rate: 18.0 },
                Hub { home: 12, work: 9, rate: 20.0 },
                Hub { home: 15, work: 10, rate: 14.0 },
            ],
            noise_rate: 12.0,
            return_lag: 4,
            morning_hours: default_morning(),
            poisson: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.grid.regions();
        let bad_hub = self
            .hubs
            .iter()
            .any(|h| h.home >= n || h.work >= n || !(h.rate >= 0.0 && h.rate.is_finite()));
        if bad_hub || !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) || self.return_lag == 0 {
            return Err(Error::Config("synthetic config has invalid hubs, rates or lag".into()));
        }
        if 86_400 % self.grid.interval_seconds != 0 {
            return Err(Error::Config("interval length must divide a day".into()));
        }
        Ok(())
    }

    pub fn intervals_per_day(&self) -> usize {
        (86_400 / self.grid.interval_seconds) as usize
    }
}

/// Commute trips drawn for one hub in one morning interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub day: usize,
    pub hub: usize,
    pub interval: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthOutput {
    pub trips: Vec<TripRecord>,
    pub pulses: Vec<PulseRecord>,
    pub noise_trips: usize,
}

/// Poisson draw by sequential inversion of the CDF. Large means are split
/// into chunks so `exp(-λ)` stays representable.
pub fn poisson<R: Rng>(rng: &mut R, lambda: f64) -> usize {
    let mut remaining = lambda;
    let mut total = 0;
    while remaining > 0.0 {
        let lam = remaining.min(500.0);
        remaining -= lam;
        let u: f64 = rng.gen();
        let mut k = 0usize;
        let mut p = (-lam).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= lam / k as f64;
            cdf += p;
            if p == 0.0 && cdf < u {
                break;
            }
        }
        total += k;
    }
    total
}

fn jittered<R: Rng>(rng: &mut R, grid: &GridSpec, region: usize) -> (f64, f64) {
    let (lat, lon) = grid.cell_center(region);
    let dlat = (grid.lat_max - grid.lat_min) / grid.m as f64;
    let dlon = (grid.lon_max - grid.lon_min) / grid.k as f64;
    (
        lat + rng.gen_range(-0.25..0.25) * dlat,
        lon + rng.gen_range(-0.25..0.25) * dlon,
    )
}

/// Start and end times inside interval `t`: departure in the first half,
/// arrival before the interval closes.
fn trip_times<R: Rng>(rng: &mut R, grid: &GridSpec, t: usize) -> (i64, i64) {
    let dt = grid.interval_seconds;
    let start = grid.interval_start(t) + rng.gen_range(0..(dt / 2).max(1));
    let end = start + rng.gen_range(0..(dt / 2 - 1).max(1));
    (start, end)
}

fn make_trip<R: Rng>(rng: &mut R, grid: &GridSpec, from: usize, to: usize, t: usize) -> TripRecord {
    let (t_s, t_e) = trip_times(rng, grid, t);
    let (start_lat, start_lon) = jittered(rng, grid, from);
    let (end_lat, end_lon) = jittered(rng, grid, to);
    TripRecord {
        t_s,
        t_e,
        start_lat,
        start_lon,
        end_lat,
        end_lon,
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let grid = &cfg.grid;
    let n = grid.regions();
    let per_day = cfg.intervals_per_day();
    let total = cfg.days * per_day;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = SynthOutput::default();

    let draw = |rng: &mut ChaCha8Rng, rate: f64| {
        if cfg.poisson {
            poisson(rng, rate)
        } else {
            rate.round() as usize
        }
    };

    for day in 0..cfg.days {
        for slot in 0..per_day {
            let t = day * per_day + slot;
            let hour = grid.hour_of(t);
            if hour >= cfg.morning_hours.0 && hour < cfg.morning_hours.1 {
                for (h, hub) in cfg.hubs.iter().enumerate() {
                    let count = draw(&mut rng, hub.rate);
                    out.pulses.push(PulseRecord {
                        day,
                        hub: h,
                        interval: t,
                        count,
                    });
                    for _ in 0..count {
                        out.trips.push(make_trip(&mut rng, grid, hub.home, hub.work, t));
                        let back = t + cfg.return_lag;
                        if back < total {
                            out.trips.push(make_trip(&mut rng, grid, hub.work, hub.home, back));
                        }
                    }
                }
            }
            let noise = draw(&mut rng, cfg.noise_rate);
            for _ in 0..noise {
                let from = rng.gen_range(0..n);
                let to = rng.gen_range(0..n);
                out.trips.push(make_trip(&mut rng, grid, from, to, t));
            }
            out.noise_trips += noise;
        }
    }
    out.trips.sort_by_key(|t| (t.t_s, t.t_e));
    Ok(out)
}
