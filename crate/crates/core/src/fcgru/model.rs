//! Stacked layers, the per-region output head, and backpropagation through
//! the whole window.

use super::cell::{step_backward, step_forward, StepCache};
use super::params::ModelParams;
use super::spec::ModelSpec;
use crate::convops::{GraphSignal, GridTensor};
use crate::error::{shape_err, Error, Result};
use crate::flowgraph::{make_transitions, SparseFlowMatrix, TransitionPair};
use crate::ingest::{VolumeTensor, Window};

/// Reinterprets an `n x c` graph signal as an `m x k x c` grid tensor.
pub fn reshape_to_grid(x: &GraphSignal, m: usize, k: usize) -> Result<GridTensor> {
    if x.n != m * k {
        return shape_err(format!("{} nodes cannot fill a {m}x{k} grid", x.n));
    }
    Ok(GridTensor {
        m,
        k,
        c: x.c,
        values: x.values.clone(),
    })
}

/// Flattens an `m x k x c` tensor into an `m·k x c` graph signal.
pub fn reshape_to_graph(x: &GridTensor) -> GraphSignal {
    GraphSignal {
        n: x.m * x.k,
        c: x.c,
        values: x.values.clone(),
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct ForwardCache {
    pub steps: Vec<Vec<StepCache>>,
    pub prediction: Vec<f64>,
}

fn check_window(inputs: &[&[f64]], transitions: &[TransitionPair], spec: &ModelSpec) -> Result<()> {
    let n = spec.regions();
    if inputs.len() != spec.history || transitions.len() != spec.history {
        return shape_err(format!(
            "window has {} volumes and {} flow graphs, model history is {}",
            inputs.len(),
            transitions.len(),
            spec.history
        ));
    }
    if inputs.iter().any(|v| v.len() != n * 2) {
        return shape_err(format!("volume tensors must be {}x{}x2", spec.m, spec.k));
    }
    if transitions.iter().any(|t| t.n() != n) {
        return shape_err(format!("flow graphs must cover {n} regions"));
    }
    Ok(())
}

pub(crate) fn forward_cached(
    inputs: &[&[f64]],
    transitions: &[TransitionPair],
    spec: &ModelSpec,
    params: &ModelParams,
) -> Result<ForwardCache> {
    check_window(inputs, transitions, spec)?;
    let n = spec.regions();
    let d = spec.hidden;
    let mut steps: Vec<Vec<StepCache>> = Vec::with_capacity(spec.layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let mut h = vec![0.0; n * d];
        let mut caches = Vec::with_capacity(spec.history);
        for t in 0..spec.history {
            let x: &[f64] = if l == 0 { inputs[t] } else { &steps[l - 1][t].h };
            let cache = step_forward(x, &h, Some(&transitions[t]), layer, spec);
            if cache.h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    stage: format!("layer {l} step {t}"),
                });
            }
            h.clone_from(&cache.h);
            caches.push(cache);
        }
        steps.push(caches);
    }

    let top = steps.last().expect("at least one layer");
    let w = &params.head_weight.data;
    let mut prediction = vec![0.0; n * 2];
    for i in 0..n {
        for o in 0..2 {
            let mut acc = params.head_bias.data[o];
            for (t, cache) in top.iter().enumerate() {
                for c in 0..d {
                    acc += cache.h[i * d + c] * w[(t * d + c) * 2 + o];
                }
            }
            prediction[i * 2 + o] = acc;
        }
    }
    if prediction.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { stage: "output head".into() });
    }
    Ok(ForwardCache { steps, prediction })
}

/// Accumulates `∂L/∂params` into `grad` given `∂L/∂prediction`.
pub(crate) fn backward(
    cache: &ForwardCache,
    dpred: &[f64],
    transitions: &[TransitionPair],
    spec: &ModelSpec,
    params: &ModelParams,
    grad: &mut ModelParams,
) {
    let n = spec.regions();
    let d = spec.hidden;
    let top = cache.steps.last().expect("at least one layer");
    let w = &params.head_weight.data;

    for i in 0..n {
        for o in 0..2 {
            grad.head_bias.data[o] += dpred[i * 2 + o];
        }
    }
    let mut dh_ext: Vec<Vec<f64>> = Vec::with_capacity(spec.history);
    for (t, step) in top.iter().enumerate() {
        let mut dh = vec![0.0; n * d];
        for i in 0..n {
            let g = &dpred[i * 2..i * 2 + 2];
            for c in 0..d {
                let wi = (t * d + c) * 2;
                grad.head_weight.data[wi] += step.h[i * d + c] * g[0];
                grad.head_weight.data[wi + 1] += step.h[i * d + c] * g[1];
                dh[i * d + c] = w[wi] * g[0] + w[wi + 1] * g[1];
            }
        }
        dh_ext.push(dh);
    }

    for l in (0..spec.layers).rev() {
        let layer = &params.layers[l];
        let layer_grad = &mut grad.layers[l];
        let mut carry = vec![0.0; n * d];
        let mut dx_seq: Vec<Vec<f64>> = vec![Vec::new(); spec.history];
        for t in (0..spec.history).rev() {
            let dh: Vec<f64> = dh_ext[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
            let (dx, dh_prev) = step_backward(&cache.steps[l][t], &dh, Some(&transitions[t]), layer, layer_grad, spec);
            dx_seq[t] = dx;
            carry = dh_prev;
        }
        dh_ext = dx_seq;
    }
}

pub(crate) fn window_transitions(flows: &[SparseFlowMatrix]) -> Vec<TransitionPair> {
    flows.iter().map(make_transitions).collect()
}

/// Predicts the next `m x k x 2` volume from `history` volumes and flows.
pub fn forward(
    volumes: &[VolumeTensor],
    flows: &[SparseFlowMatrix],
    spec: &ModelSpec,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let inputs: Vec<&[f64]> = volumes.iter().map(|v| v.values.as_slice()).collect();
    let transitions = window_transitions(flows);
    Ok(forward_cached(&inputs, &transitions, spec, params)?.prediction)
}

pub fn predict(window: &Window<'_>, spec: &ModelSpec, params: &ModelParams) -> Result<VolumeTensor> {
    let values = forward(window.inputs, window.flows, spec, params)?;
    Ok(VolumeTensor {
        m: spec.m,
        k: spec.k,
        t: window.t,
        values,
    })
}

/// Sum of squared errors over all entries.
pub fn loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return shape_err(format!("prediction has {} entries, target {}", pred.len(), target.len()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum())
}

/// Loss of one window and its gradient with respect to every parameter.
pub fn loss_and_grad(
    volumes: &[VolumeTensor],
    flows: &[SparseFlowMatrix],
    target: &VolumeTensor,
    spec: &ModelSpec,
    params: &ModelParams,
) -> Result<(f64, ModelParams)> {
    let mut grad = ModelParams::zeros(spec);
    let l = accumulate_grad(volumes, flows, target, spec, params, 1.0, &mut grad)?;
    Ok((l, grad))
}

/// Adds `weight · ∂L/∂params` into `grad` and returns the window loss.
pub(crate) fn accumulate_grad(
    volumes: &[VolumeTensor],
    flows: &[SparseFlowMatrix],
    target: &VolumeTensor,
    spec: &ModelSpec,
    params: &ModelParams,
    weight: f64,
    grad: &mut ModelParams,
) -> Result<f64> {
    let inputs: Vec<&[f64]> = volumes.iter().map(|v| v.values.as_slice()).collect();
    let transitions = window_transitions(flows);
    let cache = forward_cached(&inputs, &transitions, spec, params)?;
    let l = loss(&cache.prediction, &target.values)?;
    let dpred: Vec<f64> = cache
        .prediction
        .iter()
        .zip(&target.values)
        .map(|(p, t)| weight * 2.0 * (p - t))
        .collect();
    backward(&cache, &dpred, &transitions, spec, params, grad);
    Ok(l)
}
