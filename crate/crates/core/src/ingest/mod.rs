//! Trip ingestion: gridding, per-interval volume tensors and flow matrices,
//! min-max scaling, and sliding-window datasets.

mod aggregate;
mod dataset;
mod format;
mod grid;
mod scaler;
mod trips;

pub use aggregate::{
    aggregate, assign_trips, build_flow_matrix, build_volume_tensor, AssignedTrip, Assignment,
    IntervalSeries, RejectCounts, VolumeTensor,
};
pub use dataset::{split_ranges, Splits, Window, WindowDataset};
pub use format::{DatasetFile, DatasetMeta, DATASET_MAGIC};
pub use grid::GridSpec;
pub use scaler::MinMaxScaler;
pub use trips::{read_trips_csv, write_trips_csv, TripCsv, TripRecord};

/// Parses, grids and aggregates a batch of trips into a dataset file.
pub fn ingest_trips(trips: &[TripRecord], malformed: usize, grid: &GridSpec) -> crate::Result<DatasetFile> {
    grid.validate()?;
    let assignment = assign_trips(trips, grid);
    let series = aggregate(&assignment, grid);
    Ok(DatasetFile::new(grid.clone(), series, assignment.rejected, malformed))
}
