use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One mobility trip: start and end timestamps (epoch seconds) and endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub t_s: i64,
    pub t_e: i64,
    pub start_lat: f64,
    pub start_lon: f64,
    pub end_lat: f64,
    pub end_lon: f64,
}

/// Trips parsed from CSV plus the number of rows that failed to parse.
#[derive(Debug, Clone, Default)]
pub struct TripCsv {
    pub trips: Vec<TripRecord>,
    pub malformed: usize,
}

/// Reads the `t_s,t_e,start_lat,start_lon,end_lat,end_lon` trip format.
/// Rows that do not parse are skipped and counted.
pub fn read_trips_csv<R: Read>(reader: R) -> Result<TripCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut out = TripCsv::default();
    for row in rdr.deserialize::<TripRecord>() {
        match row {
            Ok(t) => out.trips.push(t),
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => out.malformed += 1,
        }
    }
    Ok(out)
}

pub fn write_trips_csv<W: Write>(writer: W, trips: &[TripRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    // serialize() would skip the header for an empty slice
    wtr.write_record(["t_s", "t_e", "start_lat", "start_lon", "end_lat", "end_lon"])?;
    for t in trips {
        wtr.write_record(&[
            t.t_s.to_string(),
            t.t_e.to_string(),
            t.start_lat.to_string(),
            t.start_lon.to_string(),
            t.end_lat.to_string(),
            t.end_lon.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
