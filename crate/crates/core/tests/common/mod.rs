#![allow(dead_code)]

use flowconv::fcgru::{ModelParams, ModelSpec};
use flowconv::flowgraph::SparseFlowMatrix;
use flowconv::ingest::VolumeTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_flow<R: Rng>(rng: &mut R, n: usize, density: f64) -> SparseFlowMatrix {
    let mut trip = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.gen_bool(density) {
                trip.push((i, j, rng.gen_range(1..6) as f64));
            }
        }
    }
    SparseFlowMatrix::from_triplets(n, trip).unwrap()
}

pub fn random_volume<R: Rng>(rng: &mut R, m: usize, k: usize, t: usize) -> VolumeTensor {
    VolumeTensor {
        m,
        k,
        t,
        values: (0..m * k * 2).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

pub struct RandomWindow {
    pub volumes: Vec<VolumeTensor>,
    pub flows: Vec<SparseFlowMatrix>,
    pub target: VolumeTensor,
}

pub fn random_window<R: Rng>(rng: &mut R, spec: &ModelSpec) -> RandomWindow {
    let n = spec.regions();
    RandomWindow {
        volumes: (0..spec.history).map(|t| random_volume(rng, spec.m, spec.k, t)).collect(),
        flows: (0..spec.history).map(|_| random_flow(rng, n, 0.3)).collect(),
        target: random_volume(rng, spec.m, spec.k, spec.history),
    }
}

/// Glorot init, then biases filled with small random values so their
/// gradients are exercised away from zero.
pub fn random_params<R: Rng>(rng: &mut R, spec: &ModelSpec) -> ModelParams {
    let mut p = ModelParams::init(spec, rng);
    let names = p.names();
    for (name, arr) in names.iter().zip(p.arrays_mut()) {
        if name.ends_with("bias") {
            for v in arr.data.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    p
}

/// Relative error with the denominator floored at 1e-6, below which
/// central differences at h = 1e-5 cannot resolve a gradient.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
