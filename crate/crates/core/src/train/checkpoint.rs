//! `FCGRU1` checkpoint files.
//!
//! Layout: magic `FCGRU1`, `u16` version, `u32` length of a JSON metadata
//! block, the block, then one record per array: `u32` name length, UTF-8
//! name, `u8` rank, `u32` dims, row-major `f64` payload. All integers and
//! floats are little-endian.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, OptimizerState};
use crate::array::Array;
use crate::error::{Error, Result};
use crate::fcgru::{ModelParams, ModelSpec};
use crate::ingest::MinMaxScaler;
use crate::io::{read_f64, read_u16, read_u32, read_u8, write_f64, write_u16, write_u32};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"FCGRU1";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
    pub scaler: MinMaxScaler,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerMeta {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    spec: ModelSpec,
    scaler: MinMaxScaler,
    seed: u64,
    epoch: usize,
    arrays: usize,
    optimizer: Option<OptimizerMeta>,
}

const MOMENT_PREFIXES: [&str; 2] = ["adam.m.", "adam.v."];

impl Checkpoint {
    fn named_arrays(&self) -> Vec<(String, &Array)> {
        let mut out = self.params.named();
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in MOMENT_PREFIXES.iter().zip([&opt.m, &opt.v]) {
                out.extend(moments.named().into_iter().map(|(n, a)| (format!("{prefix}{n}"), a)));
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let arrays = self.named_arrays();
        let meta = CheckpointMeta {
            spec: self.spec.clone(),
            scaler: self.scaler.clone(),
            seed: self.seed,
            epoch: self.epoch,
            arrays: arrays.len(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                config: o.config,
                step: o.step,
            }),
        };
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u16(&mut w, CHECKPOINT_VERSION)?;
        let json = serde_json::to_vec(&meta)?;
        write_u32(&mut w, json.len() as u32)?;
        w.write_all(&json)?;
        for (name, arr) in arrays {
            write_u32(&mut w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[arr.shape.len() as u8])?;
            for &d in &arr.shape {
                write_u32(&mut w, d as u32)?;
            }
            for &v in &arr.data {
                write_f64(&mut w, v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an FCGRU1 checkpoint".into()));
        }
        let version = read_u16(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let meta: CheckpointMeta = serde_json::from_slice(&json)?;
        meta.spec.validate()?;

        let mut params = ModelParams::zeros(&meta.spec);
        let mut optimizer = meta.optimizer.as_ref().map(|o| OptimizerState {
            config: o.config,
            step: o.step,
            m: ModelParams::zeros(&meta.spec),
            v: ModelParams::zeros(&meta.spec),
        });
        let names = params.names();
        let mut expected: Vec<String> = names.clone();
        if optimizer.is_some() {
            for prefix in MOMENT_PREFIXES {
                expected.extend(names.iter().map(|n| format!("{prefix}{n}")));
            }
        }
        if meta.arrays != expected.len() {
            return Err(Error::Format(format!(
                "checkpoint lists {} arrays, spec needs {}",
                meta.arrays,
                expected.len()
            )));
        }

        let per_set = names.len();
        for (idx, want) in expected.iter().enumerate() {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            if &name != want {
                return Err(Error::Format(format!("expected array {want}, found {name}")));
            }
            let rank = read_u8(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let target = match idx / per_set {
                0 => &mut params,
                1 => &mut optimizer.as_mut().expect("moments listed").m,
                _ => &mut optimizer.as_mut().expect("moments listed").v,
            };
            let arr = target.arrays_mut().swap_remove(idx % per_set);
            if arr.shape != shape {
                return Err(Error::Format(format!("{name}: shape {shape:?}, expected {:?}", arr.shape)));
            }
            for v in arr.data.iter_mut() {
                *v = read_f64(&mut r)?;
            }
        }
        if r.read(&mut [0u8])? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            spec: meta.spec,
            params,
            optimizer,
            scaler: meta.scaler,
            seed: meta.seed,
            epoch: meta.epoch,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}
