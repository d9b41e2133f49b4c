//! One FlowConvGRU layer: gate pre-activations, the recurrent update, and
//! their adjoints.

use super::params::{CellParams, GateParams};
use super::spec::ModelSpec;
use crate::convops::{
    conv2d_acc, conv2d_backward, diffusion_stack, gconv_acc, gconv_backward, vecmat_acc,
    vecmat_backward, ConvShape, DiffusionStack, GridTensor, ThetaDims,
};
use crate::error::{shape_err, Error, Result};
use crate::flowgraph::{make_transitions, SparseFlowMatrix, TransitionPair};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `[a, b]` along the channel axis.
pub(crate) fn concat(a: &[f64], ca: usize, b: &[f64], cb: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * (ca + cb));
    for i in 0..n {
        out.extend_from_slice(&a[i * ca..(i + 1) * ca]);
        out.extend_from_slice(&b[i * cb..(i + 1) * cb]);
    }
    out
}

/// Pre-activation of one gate over the concatenated input `x` (`n x p`).
fn gate_forward(
    g: &GateParams,
    spec: &ModelSpec,
    x: &[f64],
    p: usize,
    q: usize,
    trans: Option<&TransitionPair>,
    stack: Option<&DiffusionStack>,
) -> Vec<f64> {
    let n = spec.regions();
    let mut pre = vec![0.0; n * q];
    if let (Some(theta), Some(stack)) = (&g.theta, stack) {
        let dims = ThetaDims {
            p,
            q,
            steps: spec.diffusion_steps,
        };
        debug_assert!(trans.is_some());
        gconv_acc(x, stack, &theta.data, dims, n, &mut pre);
    }
    if let Some(w) = &g.conv {
        conv2d_acc(x, &w.data, conv_shape(spec, p, q), &mut pre);
    }
    if let Some(d) = &g.dense {
        vecmat_acc(x, &d.data, &mut pre);
    }
    if g.bias.len() == q {
        for cell in pre.chunks_exact_mut(q) {
            for (o, b) in cell.iter_mut().zip(&g.bias.data) {
                *o += b;
            }
        }
    } else {
        for (o, b) in pre.iter_mut().zip(&g.bias.data) {
            *o += b;
        }
    }
    pre
}

#[allow(clippy::too_many_arguments)]
fn gate_backward(
    g: &GateParams,
    grad: &mut GateParams,
    spec: &ModelSpec,
    x: &[f64],
    p: usize,
    q: usize,
    trans: Option<&TransitionPair>,
    stack: Option<&DiffusionStack>,
    dpre: &[f64],
    dx: &mut [f64],
) {
    if g.bias.len() == q {
        for cell in dpre.chunks_exact(q) {
            for (b, d) in grad.bias.data.iter_mut().zip(cell) {
                *b += d;
            }
        }
    } else {
        for (b, d) in grad.bias.data.iter_mut().zip(dpre) {
            *b += d;
        }
    }
    if let (Some(theta), Some(dtheta), Some(trans), Some(stack)) =
        (&g.theta, grad.theta.as_mut(), trans, stack)
    {
        let dims = ThetaDims {
            p,
            q,
            steps: spec.diffusion_steps,
        };
        gconv_backward(x, stack, trans, &theta.data, dims, dpre, &mut dtheta.data, dx);
    }
    if let (Some(w), Some(dw)) = (&g.conv, grad.conv.as_mut()) {
        conv2d_backward(x, &w.data, conv_shape(spec, p, q), dpre, &mut dw.data, dx);
    }
    if let (Some(d), Some(dd)) = (&g.dense, grad.dense.as_mut()) {
        vecmat_backward(x, &d.data, dpre, &mut dd.data, dx);
    }
}

fn conv_shape(spec: &ModelSpec, p: usize, q: usize) -> ConvShape {
    ConvShape {
        m: spec.m,
        k: spec.k,
        kh: spec.kernel_size,
        kw: spec.kernel_size,
        c_in: p,
        c_out: q,
    }
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub xr: Vec<f64>,
    pub stack_r: Option<DiffusionStack>,
    pub xh: Vec<f64>,
    pub stack_h: Option<DiffusionStack>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub cand: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn step_forward(
    x: &[f64],
    h_prev: &[f64],
    trans: Option<&TransitionPair>,
    p: &CellParams,
    spec: &ModelSpec,
) -> StepCache {
    let n = spec.regions();
    let d = p.hidden;
    let pin = p.c_in + d;
    let stack_for = |input: &[f64]| {
        trans
            .filter(|_| spec.variant.uses_graph())
            .map(|t| diffusion_stack(input, pin, t, spec.diffusion_steps))
    };

    let xr = concat(x, p.c_in, h_prev, d, n);
    let stack_r = stack_for(&xr);
    let r: Vec<f64> = gate_forward(&p.gates[0], spec, &xr, pin, d, trans, stack_r.as_ref())
        .into_iter()
        .map(sigmoid)
        .collect();
    let u: Vec<f64> = gate_forward(&p.gates[1], spec, &xr, pin, d, trans, stack_r.as_ref())
        .into_iter()
        .map(sigmoid)
        .collect();

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let xh = concat(x, p.c_in, &rh, d, n);
    let stack_h = stack_for(&xh);
    let cand: Vec<f64> = gate_forward(&p.gates[2], spec, &xh, pin, d, trans, stack_h.as_ref())
        .into_iter()
        .map(f64::tanh)
        .collect();

    let h = u
        .iter()
        .zip(h_prev)
        .zip(&cand)
        .map(|((&u, &hp), &c)| u * hp + (1.0 - u) * c)
        .collect();

    StepCache {
        xr,
        stack_r,
        xh,
        stack_h,
        r,
        u,
        cand,
        h_prev: h_prev.to_vec(),
        h,
    }
}

/// Given `dL/dh` for this step, accumulates parameter gradients and returns
/// `(dL/dx, dL/dh_prev)`.
pub(crate) fn step_backward(
    cache: &StepCache,
    dh: &[f64],
    trans: Option<&TransitionPair>,
    p: &CellParams,
    grad: &mut CellParams,
    spec: &ModelSpec,
) -> (Vec<f64>, Vec<f64>) {
    let n = spec.regions();
    let d = p.hidden;
    let c_in = p.c_in;
    let pin = c_in + d;

    let mut dh_prev: Vec<f64> = dh.iter().zip(&cache.u).map(|(g, u)| g * u).collect();
    let a_u: Vec<f64> = dh
        .iter()
        .zip(&cache.u)
        .zip(cache.h_prev.iter().zip(&cache.cand))
        .map(|((g, u), (hp, c))| g * (hp - c) * u * (1.0 - u))
        .collect();
    let a_h: Vec<f64> = dh
        .iter()
        .zip(&cache.u)
        .zip(&cache.cand)
        .map(|((g, u), c)| g * (1.0 - u) * (1.0 - c * c))
        .collect();

    let mut dx = vec![0.0; n * c_in];

    let mut dxh = vec![0.0; n * pin];
    gate_backward(
        &p.gates[2],
        &mut grad.gates[2],
        spec,
        &cache.xh,
        pin,
        d,
        trans,
        cache.stack_h.as_ref(),
        &a_h,
        &mut dxh,
    );
    let mut a_r = vec![0.0; n * d];
    for i in 0..n {
        for c in 0..c_in {
            dx[i * c_in + c] += dxh[i * pin + c];
        }
        for c in 0..d {
            let drh = dxh[i * pin + c_in + c];
            let idx = i * d + c;
            let r = cache.r[idx];
            dh_prev[idx] += drh * r;
            a_r[idx] = drh * cache.h_prev[idx] * r * (1.0 - r);
        }
    }

    let mut dxr = vec![0.0; n * pin];
    for (gi, a) in [(0usize, &a_r), (1, &a_u)] {
        gate_backward(
            &p.gates[gi],
            &mut grad.gates[gi],
            spec,
            &cache.xr,
            pin,
            d,
            trans,
            cache.stack_r.as_ref(),
            a,
            &mut dxr,
        );
    }
    for i in 0..n {
        for c in 0..c_in {
            dx[i * c_in + c] += dxr[i * pin + c];
        }
        for c in 0..d {
            dh_prev[i * d + c] += dxr[i * pin + c_in + c];
        }
    }
    (dx, dh_prev)
}

/// Gate activations and new state of one step.
#[derive(Debug, Clone)]
pub struct CellTrace {
    pub reset: GridTensor,
    pub update: GridTensor,
    pub candidate: GridTensor,
    pub hidden: GridTensor,
}

fn check_cell_inputs(x: &GridTensor, f: &SparseFlowMatrix, h_prev: &GridTensor, p: &CellParams, spec: &ModelSpec) -> Result<()> {
    if (x.m, x.k, x.c) != (spec.m, spec.k, p.c_in) {
        return shape_err(format!(
            "cell input {}x{}x{}, expected {}x{}x{}",
            x.m, x.k, x.c, spec.m, spec.k, p.c_in
        ));
    }
    if (h_prev.m, h_prev.k, h_prev.c) != (spec.m, spec.k, p.hidden) {
        return shape_err("hidden state shape does not match the cell");
    }
    if f.n() != spec.regions() {
        return shape_err(format!("flow over {} regions, grid has {}", f.n(), spec.regions()));
    }
    Ok(())
}

pub fn cell_step_traced(
    x: &GridTensor,
    f: &SparseFlowMatrix,
    h_prev: &GridTensor,
    p: &CellParams,
    spec: &ModelSpec,
) -> Result<CellTrace> {
    check_cell_inputs(x, f, h_prev, p, spec)?;
    let trans = make_transitions(f);
    let c = step_forward(&x.values, &h_prev.values, Some(&trans), p, spec);
    let grid = |v: Vec<f64>| GridTensor {
        m: spec.m,
        k: spec.k,
        c: p.hidden,
        values: v,
    };
    Ok(CellTrace {
        reset: grid(c.r),
        update: grid(c.u),
        candidate: grid(c.cand),
        hidden: grid(c.h),
    })
}

/// One recurrent update `h = u ⊙ h_prev + (1 − u) ⊙ h̃`.
pub fn cell_step(
    x: &GridTensor,
    f: &SparseFlowMatrix,
    h_prev: &GridTensor,
    p: &CellParams,
    spec: &ModelSpec,
) -> Result<GridTensor> {
    Ok(cell_step_traced(x, f, h_prev, p, spec)?.hidden)
}

/// Runs one layer over a sequence from a zero initial state.
pub fn unroll(
    inputs: &[GridTensor],
    flows: &[SparseFlowMatrix],
    p: &CellParams,
    spec: &ModelSpec,
) -> Result<Vec<GridTensor>> {
    if inputs.len() != flows.len() {
        return shape_err(format!("{} inputs but {} flow graphs", inputs.len(), flows.len()));
    }
    let mut h = GridTensor::zeros(spec.m, spec.k, p.hidden);
    let mut out = Vec::with_capacity(inputs.len());
    for (t, (x, f)) in inputs.iter().zip(flows).enumerate() {
        h = cell_step(x, f, &h, p, spec)?;
        if h.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: format!("unroll step {t}"),
            });
        }
        out.push(h.clone());
    }
    Ok(out)
}
