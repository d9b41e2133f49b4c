//! Diffusion graph convolution over flow graphs and same-padding 2D
//! convolution over grid tensors, with the adjoints used for training.
//!
//! Graph signals and grid tensors share one memory layout: node `r` of a
//! signal is grid cell `(r / k, r % k)`, channels innermost.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::flowgraph::{make_transitions, SparseFlowMatrix, TransitionPair};

/// `n x c` node features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal {
    pub n: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

impl GraphSignal {
    pub fn new(n: usize, c: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * c {
            return shape_err(format!("graph signal {n}x{c} given {} values", values.len()));
        }
        Ok(GraphSignal { n, c, values })
    }

    pub fn zeros(n: usize, c: usize) -> Self {
        GraphSignal {
            n,
            c,
            values: vec![0.0; n * c],
        }
    }

    pub fn column(&self, p: usize) -> Vec<f64> {
        self.values.iter().skip(p).step_by(self.c).copied().collect()
    }
}

/// `m x k x c` grid tensor, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    pub m: usize,
    pub k: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

impl GridTensor {
    pub fn new(m: usize, k: usize, c: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * k * c {
            return shape_err(format!("grid tensor {m}x{k}x{c} given {} values", values.len()));
        }
        Ok(GridTensor { m, k, c, values })
    }

    pub fn zeros(m: usize, k: usize, c: usize) -> Self {
        GridTensor {
            m,
            k,
            c,
            values: vec![0.0; m * k * c],
        }
    }

    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.values[(row * self.k + col) * self.c + ch]
    }
}

/// Diffusion filter `theta[p][q][step][direction]`; direction 0 walks the
/// out-transition, 1 the in-transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFilter {
    pub p: usize,
    pub q: usize,
    pub steps: usize,
    pub theta: Vec<f64>,
}

impl DiffusionFilter {
    pub fn new(p: usize, q: usize, steps: usize, theta: Vec<f64>) -> Result<Self> {
        if steps == 0 {
            return shape_err("diffusion filter needs at least one step");
        }
        if theta.len() != p * q * steps * 2 {
            return shape_err(format!(
                "diffusion filter {p}x{q}x{steps}x2 given {} values",
                theta.len()
            ));
        }
        Ok(DiffusionFilter { p, q, steps, theta })
    }

    pub fn zeros(p: usize, q: usize, steps: usize) -> Self {
        DiffusionFilter {
            p,
            q,
            steps,
            theta: vec![0.0; p * q * steps * 2],
        }
    }

    pub fn index(&self, p: usize, q: usize, step: usize, dir: usize) -> usize {
        self.dims().index(p, q, step, dir)
    }

    pub(crate) fn dims(&self) -> ThetaDims {
        ThetaDims {
            p: self.p,
            q: self.q,
            steps: self.steps,
        }
    }

    /// The `steps x 2` slice for one `(p, q)` channel pair.
    pub fn slice(&self, p: usize, q: usize) -> &[f64] {
        let start = self.index(p, q, 0, 0);
        &self.theta[start..start + self.steps * 2]
    }
}

/// Shape of a `p x q x steps x 2` diffusion parameter block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ThetaDims {
    pub p: usize,
    pub q: usize,
    pub steps: usize,
}

impl ThetaDims {
    pub fn index(&self, p: usize, q: usize, step: usize, dir: usize) -> usize {
        ((p * self.q + q) * self.steps + step) * 2 + dir
    }
}

/// 2D filter `weights[row][col][c_in][c_out]` plus a per-output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvFilter {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvFilter {
    pub fn new(kh: usize, kw: usize, c_in: usize, c_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return shape_err(format!("kernel {kh}x{kw} must have odd sides"));
        }
        if weights.len() != kh * kw * c_in * c_out || bias.len() != c_out {
            return shape_err(format!(
                "conv filter {kh}x{kw}x{c_in}x{c_out} given {} weights, {} biases",
                weights.len(),
                bias.len()
            ));
        }
        Ok(ConvFilter {
            kh,
            kw,
            c_in,
            c_out,
            weights,
            bias,
        })
    }
}

/// `Σ_{k<K} (θ[k,0]·Outᵏ + θ[k,1]·Inᵏ) s` for one graph-signal column,
/// evaluated by repeated sparse products.
pub fn diffusion_conv(s: &[f64], trans: &TransitionPair, theta_slice: &[f64]) -> Result<Vec<f64>> {
    let n = trans.n();
    if s.len() != n {
        return shape_err(format!("signal of {} nodes on a {n}-node graph", s.len()));
    }
    if theta_slice.is_empty() || !theta_slice.len().is_multiple_of(2) {
        return shape_err(format!("theta slice of length {}", theta_slice.len()));
    }
    let steps = theta_slice.len() / 2;
    let mut out: Vec<f64> = s.iter().map(|v| (theta_slice[0] + theta_slice[1]) * v).collect();
    for (dir, mat) in [&trans.out_transition, &trans.in_transition].into_iter().enumerate() {
        let mut cur = s.to_vec();
        let mut next = vec![0.0; n];
        for step in 1..steps {
            mat.spmm_into(&cur, 1, &mut next);
            std::mem::swap(&mut cur, &mut next);
            let w = theta_slice[step * 2 + dir];
            for (o, v) in out.iter_mut().zip(&cur) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Random-walk powers `Outᵏ X` and `Inᵏ X` for `k = 1..steps`, kept for
/// the backward pass. Index `[dir][k - 1]`.
#[derive(Debug, Clone)]
pub(crate) struct DiffusionStack {
    pub powers: [Vec<Vec<f64>>; 2],
}

pub(crate) fn diffusion_stack(x: &[f64], c: usize, trans: &TransitionPair, steps: usize) -> DiffusionStack {
    let n = trans.n();
    let mut powers: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for (dir, mat) in [&trans.out_transition, &trans.in_transition].into_iter().enumerate() {
        let mut prev: &[f64] = x;
        for _ in 1..steps {
            let mut y = vec![0.0; n * c];
            mat.spmm_into(prev, c, &mut y);
            powers[dir].push(y);
            prev = powers[dir].last().unwrap();
        }
    }
    DiffusionStack { powers }
}

/// `out += v · mat` where `mat` is `v.len() x out.len()`, row-major.
#[inline]
pub(crate) fn vecmat_acc(v: &[f64], mat: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&x, row) in v.iter().zip(mat.chunks_exact(cols)) {
        if x == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += x * w;
        }
    }
}

/// `mat += v ⊗ g` and `dv += mat · g` (the two halves of the
/// [`vecmat_acc`] adjoint), sharing one pass over `mat`.
#[inline]
pub(crate) fn vecmat_backward(v: &[f64], mat: &[f64], g: &[f64], dmat: &mut [f64], dv: &mut [f64]) {
    let cols = g.len();
    for (((&x, row), drow), d) in v
        .iter()
        .zip(mat.chunks_exact(cols))
        .zip(dmat.chunks_exact_mut(cols))
        .zip(dv.iter_mut())
    {
        let mut acc = 0.0;
        for ((dw, w), gv) in drow.iter_mut().zip(row).zip(g) {
            *dw += x * gv;
            acc += w * gv;
        }
        *d += acc;
    }
}

/// Rearranges `θ[p,q,k,dir]` into a `(1 + 2(K−1))·P x Q` mixing matrix whose
/// row blocks line up with [`node_features`]: first `θ[·,·,0,0] + θ[·,·,0,1]`
/// (both directions see `X` at step 0), then `(k, dir)` blocks for `k ≥ 1`.
fn mixing_matrix(theta: &[f64], dims: ThetaDims) -> Vec<f64> {
    let ThetaDims { p: pd, q: qd, steps } = dims;
    let blocks = 1 + 2 * (steps - 1);
    let mut m = vec![0.0; blocks * pd * qd];
    for p in 0..pd {
        for q in 0..qd {
            m[p * qd + q] = theta[dims.index(p, q, 0, 0)] + theta[dims.index(p, q, 0, 1)];
            for step in 1..steps {
                for dir in 0..2 {
                    let block = 1 + 2 * (step - 1) + dir;
                    m[(block * pd + p) * qd + q] = theta[dims.index(p, q, step, dir)];
                }
            }
        }
    }
    m
}

/// Node `i`'s stacked features `[X_i, (Out¹X)_i, (In¹X)_i, (Out²X)_i, …]`.
fn node_features(x: &[f64], stack: &DiffusionStack, pd: usize, i: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(&x[i * pd..(i + 1) * pd]);
    for k in 0..stack.powers[0].len() {
        for dir in 0..2 {
            buf.extend_from_slice(&stack.powers[dir][k][i * pd..(i + 1) * pd]);
        }
    }
}

/// `out += Σ_p Σ_k Σ_dir θ[p,q,k,dir] · (A_dirᵏ X)[:, p]`.
pub(crate) fn gconv_acc(x: &[f64], stack: &DiffusionStack, theta: &[f64], filt: ThetaDims, n: usize, out: &mut [f64]) {
    let mix = mixing_matrix(theta, filt);
    let mut feat = Vec::new();
    for (i, o) in out.chunks_exact_mut(filt.q).enumerate().take(n) {
        node_features(x, stack, filt.p, i, &mut feat);
        vecmat_acc(&feat, &mix, o);
    }
}

/// Adjoint of [`gconv_acc`]: accumulates `dθ` and `dX` from `dZ`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gconv_backward(
    x: &[f64],
    stack: &DiffusionStack,
    trans: &TransitionPair,
    theta: &[f64],
    filt: ThetaDims,
    dz: &[f64],
    dtheta: &mut [f64],
    dx: &mut [f64],
) {
    let n = trans.n();
    let ThetaDims { p: pd, q: qd, steps } = filt;
    let blocks = 1 + 2 * (steps - 1);
    let mix = mixing_matrix(theta, filt);
    let mut dmix = vec![0.0; mix.len()];
    // dS laid out like the features: per node, `blocks` slices of P
    let mut dfeat = vec![0.0; n * blocks * pd];
    let mut feat = Vec::new();
    for i in 0..n {
        node_features(x, stack, pd, i, &mut feat);
        vecmat_backward(
            &feat,
            &mix,
            &dz[i * qd..(i + 1) * qd],
            &mut dmix,
            &mut dfeat[i * blocks * pd..(i + 1) * blocks * pd],
        );
    }
    for p in 0..pd {
        for q in 0..qd {
            let g0 = dmix[p * qd + q];
            dtheta[filt.index(p, q, 0, 0)] += g0;
            dtheta[filt.index(p, q, 0, 1)] += g0;
            for step in 1..steps {
                for dir in 0..2 {
                    let block = 1 + 2 * (step - 1) + dir;
                    dtheta[filt.index(p, q, step, dir)] += dmix[(block * pd + p) * qd + q];
                }
            }
        }
    }

    let block_of = |block: usize| -> Vec<f64> {
        let mut d = Vec::with_capacity(n * pd);
        for i in 0..n {
            let base = (i * blocks + block) * pd;
            d.extend_from_slice(&dfeat[base..base + pd]);
        }
        d
    };
    for (o, d) in dx.iter_mut().zip(block_of(0)) {
        *o += d;
    }
    if steps < 2 {
        return;
    }
    for (dir, mat) in [&trans.out_transition, &trans.in_transition].into_iter().enumerate() {
        // Horner: G = dS_{K-1}; G = dS_k + Aᵀ G; dX += Aᵀ G
        let mut g = block_of(1 + 2 * (steps - 2) + dir);
        for step in (1..steps - 1).rev() {
            let mut next = block_of(1 + 2 * (step - 1) + dir);
            mat.spmm_transpose_acc(&g, pd, &mut next);
            g = next;
        }
        mat.spmm_transpose_acc(&g, pd, dx);
    }
}

/// Flow-aware graph convolution with precomputed transitions.
pub fn flow_aware_gconv_with(x: &GraphSignal, trans: &TransitionPair, filt: &DiffusionFilter) -> Result<GraphSignal> {
    if x.n != trans.n() {
        return shape_err(format!("signal has {} nodes, graph has {}", x.n, trans.n()));
    }
    if x.c != filt.p {
        return shape_err(format!("signal has {} channels, filter expects {}", x.c, filt.p));
    }
    let stack = diffusion_stack(&x.values, x.c, trans, filt.steps);
    let mut out = GraphSignal::zeros(x.n, filt.q);
    gconv_acc(&x.values, &stack, &filt.theta, filt.dims(), x.n, &mut out.values);
    Ok(out)
}

/// Output column `q` is `Σ_p diffusion_conv(x[:, p], transitions(f), θ[p, q])`.
pub fn flow_aware_gconv(x: &GraphSignal, f: &SparseFlowMatrix, filt: &DiffusionFilter) -> Result<GraphSignal> {
    flow_aware_gconv_with(x, &make_transitions(f), filt)
}

/// Raw kernel description used by the accumulate/adjoint helpers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub m: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
}

/// Zero-padded `kh x kw x c_in` patch centred on `(r, c)`, flattened in
/// weight-row order.
fn patch(x: &[f64], s: ConvShape, r: usize, c: usize, buf: &mut [f64]) {
    let (ph, pw) = ((s.kh / 2) as isize, (s.kw / 2) as isize);
    for a in 0..s.kh {
        let rr = r as isize + a as isize - ph;
        for b in 0..s.kw {
            let cc = c as isize + b as isize - pw;
            let dst = &mut buf[(a * s.kw + b) * s.c_in..(a * s.kw + b + 1) * s.c_in];
            if rr < 0 || rr >= s.m as isize || cc < 0 || cc >= s.k as isize {
                dst.iter_mut().for_each(|v| *v = 0.0);
            } else {
                let xi = (rr as usize * s.k + cc as usize) * s.c_in;
                dst.copy_from_slice(&x[xi..xi + s.c_in]);
            }
        }
    }
}

/// Adds a patch gradient back onto the input positions it was read from.
fn scatter_patch(dpatch: &[f64], s: ConvShape, r: usize, c: usize, dx: &mut [f64]) {
    let (ph, pw) = ((s.kh / 2) as isize, (s.kw / 2) as isize);
    for a in 0..s.kh {
        let rr = r as isize + a as isize - ph;
        if rr < 0 || rr >= s.m as isize {
            continue;
        }
        for b in 0..s.kw {
            let cc = c as isize + b as isize - pw;
            if cc < 0 || cc >= s.k as isize {
                continue;
            }
            let xi = (rr as usize * s.k + cc as usize) * s.c_in;
            let src = &dpatch[(a * s.kw + b) * s.c_in..(a * s.kw + b + 1) * s.c_in];
            for (d, g) in dx[xi..xi + s.c_in].iter_mut().zip(src) {
                *d += g;
            }
        }
    }
}

/// `out += W ⋆ x` (cross-correlation, zero padding, stride 1).
pub(crate) fn conv2d_acc(x: &[f64], w: &[f64], s: ConvShape, out: &mut [f64]) {
    let mut buf = vec![0.0; s.kh * s.kw * s.c_in];
    for r in 0..s.m {
        for c in 0..s.k {
            patch(x, s, r, c, &mut buf);
            let cell = r * s.k + c;
            vecmat_acc(&buf, w, &mut out[cell * s.c_out..(cell + 1) * s.c_out]);
        }
    }
}

/// Adjoint of [`conv2d_acc`]: accumulates `dW` and `dx` from `dy`.
pub(crate) fn conv2d_backward(x: &[f64], w: &[f64], s: ConvShape, dy: &[f64], dw: &mut [f64], dx: &mut [f64]) {
    let len = s.kh * s.kw * s.c_in;
    let mut buf = vec![0.0; len];
    let mut dbuf = vec![0.0; len];
    for r in 0..s.m {
        for c in 0..s.k {
            patch(x, s, r, c, &mut buf);
            dbuf.iter_mut().for_each(|v| *v = 0.0);
            let cell = r * s.k + c;
            vecmat_backward(&buf, w, &dy[cell * s.c_out..(cell + 1) * s.c_out], dw, &mut dbuf);
            scatter_patch(&dbuf, s, r, c, dx);
        }
    }
}

/// Same-shape 2D convolution with zero padding and per-channel bias.
pub fn conv2d_same(x: &GridTensor, filt: &ConvFilter) -> Result<GridTensor> {
    if x.c != filt.c_in {
        return shape_err(format!("input has {} channels, filter expects {}", x.c, filt.c_in));
    }
    if filt.kh.is_multiple_of(2) || filt.kw.is_multiple_of(2) || filt.bias.len() != filt.c_out {
        return shape_err("malformed conv filter");
    }
    let shape = ConvShape {
        m: x.m,
        k: x.k,
        kh: filt.kh,
        kw: filt.kw,
        c_in: filt.c_in,
        c_out: filt.c_out,
    };
    let mut out = GridTensor::zeros(x.m, x.k, filt.c_out);
    for cell in out.values.chunks_exact_mut(filt.c_out) {
        cell.copy_from_slice(&filt.bias);
    }
    conv2d_acc(&x.values, &filt.weights, shape, &mut out.values);
    Ok(out)
}
