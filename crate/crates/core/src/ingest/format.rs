//! `FCDS1` processed-dataset files.
//!
//! Layout: magic `FCDS1`, little-endian `u32` length of a JSON metadata
//! block, the block, then per interval the `m x k x 2` volume tensor as
//! row-major `f64`, a `u32` edge count, and `(u32 src, u32 dst, f64 w)` edges.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::aggregate::{IntervalSeries, RejectCounts, VolumeTensor};
use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::flowgraph::SparseFlowMatrix;
use crate::io::{read_f64, read_u32, write_f64, write_u32};

pub const DATASET_MAGIC: &[u8; 5] = b"FCDS1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub intervals: usize,
    pub m: usize,
    pub k: usize,
    pub channels: usize,
    pub grid: GridSpec,
    pub rejected: RejectCounts,
    pub malformed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub meta: DatasetMeta,
    pub series: Arc<IntervalSeries>,
}

impl DatasetFile {
    pub fn new(grid: GridSpec, series: IntervalSeries, rejected: RejectCounts, malformed: usize) -> Self {
        DatasetFile {
            meta: DatasetMeta {
                intervals: series.len(),
                m: grid.m,
                k: grid.k,
                channels: 2,
                grid,
                rejected,
                malformed,
            },
            series: Arc::new(series),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.meta.grid
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        let meta = serde_json::to_vec(&self.meta)?;
        write_u32(&mut w, meta.len() as u32)?;
        w.write_all(&meta)?;
        for (v, f) in self.series.volumes.iter().zip(&self.series.flows) {
            for &x in &v.values {
                write_f64(&mut w, x)?;
            }
            write_u32(&mut w, f.nnz() as u32)?;
            for &(i, j, wt) in f.entries() {
                write_u32(&mut w, i as u32)?;
                write_u32(&mut w, j as u32)?;
                write_f64(&mut w, wt)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not an FCDS1 dataset".into()));
        }
        let len = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let meta: DatasetMeta = serde_json::from_slice(&buf)?;
        if meta.channels != 2 || meta.m != meta.grid.m || meta.k != meta.grid.k {
            return Err(Error::Format(format!("inconsistent metadata {meta:?}")));
        }
        let n = meta.m * meta.k;
        let mut volumes = Vec::with_capacity(meta.intervals);
        let mut flows = Vec::with_capacity(meta.intervals);
        for t in 0..meta.intervals {
            let mut values = vec![0.0; n * 2];
            for x in values.iter_mut() {
                *x = read_f64(&mut r)?;
            }
            volumes.push(VolumeTensor {
                m: meta.m,
                k: meta.k,
                t,
                values,
            });
            let count = read_u32(&mut r)? as usize;
            let mut triplets = Vec::with_capacity(count);
            for _ in 0..count {
                let i = read_u32(&mut r)? as usize;
                let j = read_u32(&mut r)? as usize;
                triplets.push((i, j, read_f64(&mut r)?));
            }
            let f = SparseFlowMatrix::from_triplets(n, triplets)?;
            if f.nnz() != count {
                return Err(Error::Format(format!("interval {t}: duplicate or zero flow entries")));
            }
            flows.push(f);
        }
        if r.read(&mut [0u8])? != 0 {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        Ok(DatasetFile {
            meta,
            series: Arc::new(IntervalSeries { volumes, flows }),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }
}
