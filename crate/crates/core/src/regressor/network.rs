//! Forward and backward passes of the reference network, one sample at a
//! time, on a flat parameter vector.

use super::spec::{ConvLayer, Plan};

/// Activations kept for the backward pass.
pub(crate) struct ForwardCache {
    input: Vec<f64>,
    trunk: Vec<(Vec<f64>, Vec<f64>)>,
    branches: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    concat: Vec<f64>,
    reduce: (Vec<f64>, Vec<f64>),
    pub output: Vec<f64>,
}

impl ForwardCache {
    /// Sign pattern of every pre-activation; changes when a perturbation
    /// crosses an activation kink.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let mut push = |z: &[f64]| out.extend(z.iter().map(|&v| v > 0.0));
        for (z, _) in &self.trunk {
            push(z);
        }
        for b in &self.branches {
            for (z, _) in b {
                push(z);
            }
        }
        push(&self.reduce.0);
        out
    }
}

/// Valid output-column range `[lo, hi)` for kernel column `kx`.
#[inline]
fn col_range(l: &ConvLayer, kx: usize) -> (usize, usize) {
    // ix = ox * s + kx - p must lie in [0, in_w).
    let lo = if kx >= l.p { 0 } else { (l.p - kx).div_ceil(l.s) };
    let last = l.in_w as isize - 1 + l.p as isize - kx as isize;
    let hi = if last < 0 { 0 } else { (last as usize / l.s + 1).min(l.out_w) };
    (lo, hi.max(lo))
}

/// Unfold `input` into a `(in_c k k) x (out_h out_w)` row-major matrix whose
/// row order matches the weight layout.
fn im2col(l: &ConvLayer, input: &[f64]) -> Vec<f64> {
    let (k, s, p) = (l.k, l.s, l.p);
    let n = l.out_h * l.out_w;
    let plane_in = l.in_h * l.in_w;
    let mut cols = vec![0.0; l.in_c * k * k * n];
    let ranges: Vec<(usize, usize)> = (0..k).map(|kx| col_range(l, kx)).collect();
    for ic in 0..l.in_c {
        let inp = &input[ic * plane_in..(ic + 1) * plane_in];
        for ky in 0..k {
            for (kx, &(lo, hi)) in ranges.iter().enumerate() {
                let row = &mut cols[((ic * k + ky) * k + kx) * n..][..n];
                for oy in 0..l.out_h {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= l.in_h as isize {
                        continue;
                    }
                    let src = &inp[iy as usize * l.in_w..];
                    let dst = &mut row[oy * l.out_w..];
                    for ox in lo..hi {
                        dst[ox] = src[ox * s + kx - p];
                    }
                }
            }
        }
    }
    cols
}

/// Fold a column matrix back onto the input grid, summing overlaps.
fn col2im(l: &ConvLayer, cols: &[f64], grad_in: &mut [f64]) {
    let (k, s, p) = (l.k, l.s, l.p);
    let n = l.out_h * l.out_w;
    let plane_in = l.in_h * l.in_w;
    let ranges: Vec<(usize, usize)> = (0..k).map(|kx| col_range(l, kx)).collect();
    for ic in 0..l.in_c {
        let gi = &mut grad_in[ic * plane_in..(ic + 1) * plane_in];
        for ky in 0..k {
            for (kx, &(lo, hi)) in ranges.iter().enumerate() {
                let row = &cols[((ic * k + ky) * k + kx) * n..][..n];
                for oy in 0..l.out_h {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= l.in_h as isize {
                        continue;
                    }
                    let dst = &mut gi[iy as usize * l.in_w..];
                    let src = &row[oy * l.out_w..];
                    for ox in lo..hi {
                        dst[ox * s + kx - p] += src[ox];
                    }
                }
            }
        }
    }
}

/// `c = a b + beta c` for row-major `a: m x k` and `c: m x n`; `b` is
/// `k x n` with the given strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    // SAFETY: the callers size every operand for the strides given, and `c`
    // is checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(l: &ConvLayer, params: &[f64], input: &[f64], out: &mut [f64]) {
    let n = l.out_h * l.out_w;
    let kk = l.in_c * l.k * l.k;
    for oc in 0..l.out_c {
        out[oc * n..(oc + 1) * n].fill(params[l.bias + oc]);
    }
    let w = &params[l.weight..l.weight + l.out_c * kk];
    if l.k == 1 && l.s == 1 && l.p == 0 {
        gemm(l.out_c, kk, n, (w, kk as isize, 1), (input, n as isize, 1), 1.0, out);
    } else {
        let cols = im2col(l, input);
        gemm(l.out_c, kk, n, (w, kk as isize, 1), (&cols, n as isize, 1), 1.0, out);
    }
}

/// Accumulates weight and bias gradients into `grad` and, when asked,
/// overwrites `grad_in` with the input gradient.
fn conv_backward(
    l: &ConvLayer,
    params: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad: &mut [f64],
    grad_in: Option<&mut [f64]>,
) {
    let n = l.out_h * l.out_w;
    let kk = l.in_c * l.k * l.k;
    for oc in 0..l.out_c {
        grad[l.bias + oc] += grad_out[oc * n..(oc + 1) * n].iter().sum::<f64>();
    }
    let direct = l.k == 1 && l.s == 1 && l.p == 0;
    let owned;
    let cols: &[f64] = if direct {
        input
    } else {
        owned = im2col(l, input);
        &owned
    };
    // dW = dY cols^T
    gemm(
        l.out_c,
        n,
        kk,
        (grad_out, n as isize, 1),
        (cols, 1, n as isize),
        1.0,
        &mut grad[l.weight..l.weight + l.out_c * kk],
    );
    if let Some(gi) = grad_in {
        let w = &params[l.weight..l.weight + l.out_c * kk];
        // dcols = W^T dY
        if direct {
            gemm(kk, l.out_c, n, (w, 1, kk as isize), (grad_out, n as isize, 1), 0.0, gi);
        } else {
            let mut gcols = vec![0.0; kk * n];
            gemm(kk, l.out_c, n, (w, 1, kk as isize), (grad_out, n as isize, 1), 0.0, &mut gcols);
            gi.fill(0.0);
            col2im(l, &gcols, gi);
        }
    }
}

fn activate(l: &ConvLayer, params: &[f64], linear: bool, z: &[f64]) -> Vec<f64> {
    if linear {
        return z.to_vec();
    }
    let plane = l.out_h * l.out_w;
    let mut a = z.to_vec();
    for c in 0..l.out_c {
        let slope = params[l.slope + c];
        for v in &mut a[c * plane..(c + 1) * plane] {
            if *v <= 0.0 {
                *v *= slope;
            }
        }
    }
    a
}

/// Turns an activation gradient into a pre-activation gradient in place,
/// accumulating slope gradients.
fn activate_backward(
    l: &ConvLayer,
    params: &[f64],
    linear: bool,
    z: &[f64],
    grad_act: &mut [f64],
    grad: &mut [f64],
) {
    if linear {
        return;
    }
    let plane = l.out_h * l.out_w;
    for c in 0..l.out_c {
        let slope = params[l.slope + c];
        let mut gs = 0.0;
        for (g, &zv) in grad_act[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(&z[c * plane..(c + 1) * plane])
        {
            if zv <= 0.0 {
                gs += *g * zv;
                *g *= slope;
            }
        }
        grad[l.slope + c] += gs;
    }
}

fn conv_act(l: &ConvLayer, params: &[f64], linear: bool, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut z = vec![0.0; l.out_len()];
    conv_forward(l, params, input, &mut z);
    let a = activate(l, params, linear, &z);
    (z, a)
}

pub(crate) fn forward(plan: &Plan, params: &[f64], linear: bool, raw: &[f32]) -> ForwardCache {
    let first = &plan.trunk[0];
    let plane = first.in_h * first.in_w;
    let mut input = vec![0.0; first.in_len()];
    for c in 0..first.in_c {
        let shift = params[plan.input_shift + c];
        let scale = params[plan.input_scale + c];
        for (dst, &src) in input[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(&raw[c * plane..(c + 1) * plane])
        {
            *dst = (src as f64 - shift) * scale;
        }
    }

    let mut trunk: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(plan.trunk.len());
    for (i, l) in plan.trunk.iter().enumerate() {
        let src = if i == 0 { &input } else { &trunk[i - 1].1 };
        let za = conv_act(l, params, linear, src);
        trunk.push(za);
    }

    let mut branches = Vec::with_capacity(plan.branches.len());
    for (from, layers) in &plan.branches {
        let mut acts: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(layers.len());
        for (j, l) in layers.iter().enumerate() {
            let src = if j == 0 { &trunk[*from].1 } else { &acts[j - 1].1 };
            let za = conv_act(l, params, linear, src);
            acts.push(za);
        }
        branches.push(acts);
    }

    let mut concat = trunk.last().unwrap().1.clone();
    for acts in &branches {
        concat.extend_from_slice(&acts.last().unwrap().1);
    }
    let reduce = conv_act(&plan.reduce, params, linear, &concat);

    let feat = &reduce.1;
    let mut output = vec![0.0; plan.head_out];
    for (o, out) in output.iter_mut().enumerate() {
        let row = &params[plan.head_weight + o * plan.head_in..plan.head_weight + (o + 1) * plan.head_in];
        *out = params[plan.head_bias + o] + row.iter().zip(feat).map(|(w, x)| w * x).sum::<f64>();
    }

    ForwardCache {
        input,
        trunk,
        branches,
        concat,
        reduce,
        output,
    }
}

/// Accumulate `d loss / d params` into `grad` given `d loss / d output`.
pub(crate) fn backward(
    plan: &Plan,
    params: &[f64],
    linear: bool,
    cache: &ForwardCache,
    grad_output: &[f64],
    grad: &mut [f64],
) {
    let feat = &cache.reduce.1;
    let mut g_feat = vec![0.0; plan.head_in];
    for (o, &go) in grad_output.iter().enumerate() {
        grad[plan.head_bias + o] += go;
        if go == 0.0 {
            continue;
        }
        let wrow = plan.head_weight + o * plan.head_in;
        for j in 0..plan.head_in {
            grad[wrow + j] += go * feat[j];
            g_feat[j] += go * params[wrow + j];
        }
    }

    activate_backward(&plan.reduce, params, linear, &cache.reduce.0, &mut g_feat, grad);
    let mut g_concat = vec![0.0; cache.concat.len()];
    conv_backward(&plan.reduce, params, &cache.concat, &g_feat, grad, Some(&mut g_concat));

    // Gradients flowing into each trunk activation.
    let mut g_trunk: Vec<Vec<f64>> = plan.trunk.iter().map(|l| vec![0.0; l.out_len()]).collect();
    let last = plan.trunk.len() - 1;
    let mut offset = plan.trunk[last].out_len();
    g_trunk[last].copy_from_slice(&g_concat[..offset]);

    for ((from, layers), acts) in plan.branches.iter().zip(&cache.branches) {
        let out_len = layers.last().unwrap().out_len();
        let mut g = g_concat[offset..offset + out_len].to_vec();
        offset += out_len;
        for j in (0..layers.len()).rev() {
            let l = &layers[j];
            activate_backward(l, params, linear, &acts[j].0, &mut g, grad);
            let src = if j == 0 { &cache.trunk[*from].1 } else { &acts[j - 1].1 };
            let mut gi = vec![0.0; l.in_len()];
            conv_backward(l, params, src, &g, grad, Some(&mut gi));
            g = gi;
        }
        for (dst, v) in g_trunk[*from].iter_mut().zip(&g) {
            *dst += v;
        }
    }

    for i in (0..plan.trunk.len()).rev() {
        let l = &plan.trunk[i];
        let mut g = std::mem::take(&mut g_trunk[i]);
        activate_backward(l, params, linear, &cache.trunk[i].0, &mut g, grad);
        if i == 0 {
            conv_backward(l, params, &cache.input, &g, grad, None);
        } else {
            let mut gi = vec![0.0; l.in_len()];
            conv_backward(l, params, &cache.trunk[i - 1].1, &g, grad, Some(&mut gi));
            for (dst, v) in g_trunk[i - 1].iter_mut().zip(&gi) {
                *dst += v;
            }
        }
    }
}
