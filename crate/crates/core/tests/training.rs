mod common;

use std::sync::Arc;

use common::{random_flow, rng};
use flowconv::fcgru::{ModelSpec, Variant};
use flowconv::ingest::{IntervalSeries, MinMaxScaler, VolumeTensor, WindowDataset};
use flowconv::train::{evaluate_loss, train, Checkpoint, TrainConfig};
use rand::Rng;

/// Values already in the unit range, as after scaling.
fn unit_series(seed: u64, m: usize, k: usize, len: usize) -> Arc<IntervalSeries> {
    let mut r = rng(seed);
    let n = m * k;
    Arc::new(IntervalSeries {
        volumes: (0..len)
            .map(|t| VolumeTensor { m, k, t, values: (0..n * 2).map(|_| r.gen_range(0.0..1.0)).collect() })
            .collect(),
        flows: (0..len).map(|_| random_flow(&mut r, n, 0.5).scaled(0.1).unwrap()).collect(),
    })
}

fn small_spec(variant: Variant) -> ModelSpec {
    ModelSpec { hidden: 4, layers: 2, history: 3, variant, ..ModelSpec::new(2, 2) }
}

fn checkpoint_bytes(ds: &WindowDataset, val: &WindowDataset, spec: &ModelSpec, cfg: &TrainConfig) -> Vec<u8> {
    let out = train(ds, Some(val), spec, cfg).unwrap();
    Checkpoint {
        spec: spec.clone(),
        params: out.params,
        optimizer: Some(out.optimizer),
        scaler: MinMaxScaler { vmin: [0.0; 2], vmax: [1.0; 2], fmin: 0.0, fmax: 1.0 },
        seed: cfg.seed,
        epoch: out.epoch,
    }
    .to_bytes()
    .unwrap()
}

#[test]
fn training_is_reproducible_and_thread_independent() {
    let series = unit_series(40, 2, 2, 16);
    let tr = WindowDataset::build(series.clone(), 0..12, 3);
    let val = WindowDataset::build(series, 9..16, 3);
    let cfg = TrainConfig { epochs: 4, batch_size: 3, lr: 1e-2, seed: 11, clip_norm: None };
    for v in Variant::ALL {
        let spec = small_spec(v);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| checkpoint_bytes(&tr, &val, &spec, &cfg));
        let b = many.install(|| checkpoint_bytes(&tr, &val, &spec, &cfg));
        assert_eq!(a, b, "{v:?}");
        let c = checkpoint_bytes(&tr, &val, &spec, &TrainConfig { seed: 12, ..cfg.clone() });
        assert_ne!(a, c, "{v:?}");
    }
}

#[test]
fn overfits_a_single_window() {
    let series = unit_series(41, 2, 2, 4);
    let ds = WindowDataset::build(series, 0..4, 3);
    assert_eq!(ds.len(), 1);
    let spec = small_spec(Variant::Full);
    let cfg = TrainConfig { epochs: 200, batch_size: 1, lr: 1e-2, seed: 3, clip_norm: None };
    let out = train(&ds, None, &spec, &cfg).unwrap();
    let first = out.log[0].train_loss;
    let last = evaluate_loss(&ds, &spec, &out.params).unwrap();
    assert!(last < 1e-3, "loss {first} -> {last}");
    assert_eq!(out.epoch, 200);
}

#[test]
fn validation_selects_the_best_epoch() {
    let series = unit_series(42, 2, 2, 14);
    let tr = WindowDataset::build(series.clone(), 0..10, 3);
    let val = WindowDataset::build(series, 7..14, 3);
    let spec = small_spec(Variant::Nf);
    let cfg = TrainConfig { epochs: 6, batch_size: 2, lr: 5e-2, seed: 5, clip_norm: Some(1.0) };
    let out = train(&tr, Some(&val), &spec, &cfg).unwrap();
    assert_eq!(out.log.len(), 6);
    let best = out.log.iter().map(|l| l.val_loss.unwrap()).fold(f64::INFINITY, f64::min);
    let picked = evaluate_loss(&val, &spec, &out.params).unwrap();
    assert!(picked <= best + 1e-12, "{picked} vs {best}");
    assert_eq!(out.log[out.epoch - 1].val_loss.unwrap(), picked);
}
