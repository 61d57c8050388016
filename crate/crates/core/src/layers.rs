//! Per-layer forward and backward arithmetic.
//!
//! Every operation is row-independent over the leading (batch) axes, with
//! fixed accumulation order. That property is what makes per-sample cached
//! activations bitwise-identical to rows of a batched forward pass, and it
//! keeps all runs reproducible.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::model::LayerSpec;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Gradients for one layer, in the same order as `LayerSpec::param_shapes`.
pub type ParamGrads = Vec<Tensor>;

fn shape_err(context: &str, expected: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        context: context.into(),
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

impl LayerSpec {
    /// Applies the layer to a batched input.
    pub fn apply(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        match self {
            LayerSpec::Linear { input, output, bias } => {
                linear_forward(params, x, *input, *output, *bias)
            }
            LayerSpec::Relu => Ok(map_elems(x, |v| if v > 0.0 { v } else { 0.0 })),
            LayerSpec::Gelu => Ok(map_elems(x, gelu)),
            LayerSpec::LayerNorm { dim } => layer_norm_forward(params, x, *dim),
            LayerSpec::Residual { layers } => residual_forward(layers, params, x),
            LayerSpec::Embedding { vocab, dim } => embedding_forward(params, x, *vocab, *dim),
            LayerSpec::Attention { dim } => attention_forward(params, x, *dim),
            LayerSpec::SquaredError | LayerSpec::SoftmaxCrossEntropy => Err(Error::InvalidModel(
                "loss heads are applied via loss()/loss_grad(), not apply()".into(),
            )),
        }
    }

    /// Backward pass for one layer given its stored input `x` and the
    /// gradient `dy` of the loss with respect to its output.
    ///
    /// Internal intermediates (layer-norm statistics, residual inner
    /// activations, attention matrices) are recomputed from `x`, so the
    /// tape only ever stores one tensor per layer.
    pub fn apply_backward(
        &self,
        params: &[Tensor],
        x: &Tensor,
        dy: &Tensor,
        want_dx: bool,
        want_dparams: bool,
    ) -> Result<(Option<ParamGrads>, Option<Tensor>)> {
        match self {
            LayerSpec::Linear { input, output, bias } => {
                linear_backward(params, x, dy, *input, *output, *bias, want_dx, want_dparams)
            }
            LayerSpec::Relu => {
                let dx = want_dx.then(|| zip_elems(x, dy, |xi, di| if xi > 0.0 { di } else { 0.0 }));
                Ok((want_dparams.then(Vec::new), dx))
            }
            LayerSpec::Gelu => {
                let dx = want_dx.then(|| zip_elems(x, dy, |xi, di| di * gelu_grad(xi)));
                Ok((want_dparams.then(Vec::new), dx))
            }
            LayerSpec::LayerNorm { dim } => {
                layer_norm_backward(params, x, dy, *dim, want_dx, want_dparams)
            }
            LayerSpec::Residual { layers } => {
                residual_backward(layers, params, x, dy, want_dx, want_dparams)
            }
            LayerSpec::Embedding { vocab, dim } => {
                if want_dx {
                    return Err(Error::InvalidModel(
                        "embedding input is not differentiable (token ids)".into(),
                    ));
                }
                let grads = want_dparams
                    .then(|| embedding_backward(x, dy, *vocab, *dim))
                    .transpose()?;
                Ok((grads, None))
            }
            LayerSpec::Attention { dim } => {
                attention_backward(params, x, dy, *dim, want_dx, want_dparams)
            }
            LayerSpec::SquaredError | LayerSpec::SoftmaxCrossEntropy => Err(Error::InvalidModel(
                "loss heads are applied via loss()/loss_grad(), not apply_backward()".into(),
            )),
        }
    }

    /// Loss value of a head layer: mean over rows of the per-row loss.
    pub fn loss(&self, logits: &Tensor, targets: &Tensor) -> Result<f64> {
        match self {
            LayerSpec::SquaredError => {
                if logits.shape() != targets.shape() {
                    return Err(shape_err("squared error targets", logits.shape(), targets.shape()));
                }
                let rows = logits.rows() as f64;
                let sum: f64 = logits
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum();
                Ok(sum / rows)
            }
            LayerSpec::SoftmaxCrossEntropy => {
                let classes = logits.last_dim();
                let rows = logits.rows();
                if targets.numel() != rows {
                    return Err(shape_err("cross entropy targets", &[rows], targets.shape()));
                }
                let mut total = 0.0;
                for r in 0..rows {
                    let row = logits.row(r);
                    let t = class_index(targets.data()[r], classes)?;
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    total += lse - row[t];
                }
                Ok(total / rows as f64)
            }
            _ => Err(Error::InvalidModel("loss() called on a non-head layer".into())),
        }
    }

    /// Gradient of the mean loss with respect to the logits.
    pub fn loss_grad(&self, logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
        match self {
            LayerSpec::SquaredError => {
                if logits.shape() != targets.shape() {
                    return Err(shape_err("squared error targets", logits.shape(), targets.shape()));
                }
                let rows = logits.rows() as f64;
                Ok(zip_elems(logits, targets, |p, t| 2.0 * (p - t) / rows))
            }
            LayerSpec::SoftmaxCrossEntropy => {
                let classes = logits.last_dim();
                let rows = logits.rows();
                if targets.numel() != rows {
                    return Err(shape_err("cross entropy targets", &[rows], targets.shape()));
                }
                let mut grad = Tensor::zeros(logits.shape().to_vec());
                for r in 0..rows {
                    let row = logits.row(r);
                    let t = class_index(targets.data()[r], classes)?;
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let out = grad.row_mut(r);
                    for (c, v) in row.iter().enumerate() {
                        out[c] = (v - max).exp() / denom;
                    }
                    out[t] -= 1.0;
                    for v in out.iter_mut() {
                        *v /= rows as f64;
                    }
                }
                Ok(grad)
            }
            _ => Err(Error::InvalidModel("loss_grad() called on a non-head layer".into())),
        }
    }

    /// Forward float-op count for an input of the given shape. A fixed cost
    /// model: the absolute constants are conventions, but they are applied
    /// identically on every code path, so differences between cached and
    /// uncached runs are exact.
    pub fn forward_flops(&self, x_shape: &[usize]) -> u64 {
        let elems: u64 = x_shape.iter().product::<usize>() as u64;
        let width = *x_shape.last().unwrap_or(&1) as u64;
        let rows = elems.checked_div(width).unwrap_or(0);
        match self {
            LayerSpec::Linear { input, output, bias } => {
                rows * (*output as u64) * (2 * *input as u64 + u64::from(*bias))
            }
            LayerSpec::Relu => elems,
            LayerSpec::Gelu => 12 * elems,
            LayerSpec::LayerNorm { .. } => 8 * elems,
            LayerSpec::Residual { layers } => {
                let mut total = 0;
                let mut shape = x_shape.to_vec();
                for l in layers {
                    total += l.forward_flops(&shape);
                    if let LayerSpec::Linear { output, .. } = l {
                        *shape.last_mut().unwrap() = *output;
                    }
                }
                total + elems
            }
            LayerSpec::Embedding { dim, .. } => elems * (*dim as u64),
            LayerSpec::Attention { dim } => {
                let d = *dim as u64;
                // x_shape = [batch, seq, dim]
                let batch = x_shape[0] as u64;
                let seq = x_shape[1] as u64;
                batch * (8 * seq * d * d + 4 * seq * seq * d + 6 * seq * seq)
            }
            LayerSpec::SquaredError => 3 * elems,
            LayerSpec::SoftmaxCrossEntropy => 6 * elems,
        }
    }
}

fn class_index(v: f64, classes: usize) -> Result<usize> {
    let idx = v.round();
    if (v - idx).abs() > 1e-9 || idx < 0.0 || idx >= classes as f64 {
        return Err(Error::InvalidModel(format!(
            "target {v} is not a class index in [0, {classes})"
        )));
    }
    Ok(idx as usize)
}

fn map_elems(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn zip_elems(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

// tanh approximation of GeLU.
const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn linear_forward(
    params: &[Tensor],
    x: &Tensor,
    input: usize,
    output: usize,
    bias: bool,
) -> Result<Tensor> {
    if x.last_dim() != input {
        return Err(shape_err("linear input", &[input], x.shape()));
    }
    let w = &params[0];
    let rows = x.rows();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = output;
    let mut y = Tensor::zeros(shape);
    for r in 0..rows {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for o in 0..output {
            let wrow = w.row(o);
            let mut acc = 0.0;
            for i in 0..input {
                acc += wrow[i] * xr[i];
            }
            if bias {
                acc += params[1].data()[o];
            }
            yr[o] = acc;
        }
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
fn linear_backward(
    params: &[Tensor],
    x: &Tensor,
    dy: &Tensor,
    input: usize,
    output: usize,
    bias: bool,
    want_dx: bool,
    want_dparams: bool,
) -> Result<(Option<ParamGrads>, Option<Tensor>)> {
    let w = &params[0];
    let rows = x.rows();
    let grads = if want_dparams {
        let mut dw = Tensor::zeros(vec![output, input]);
        let mut db = bias.then(|| Tensor::zeros(vec![output]));
        for r in 0..rows {
            let xr = x.row(r);
            let dyr = dy.row(r);
            for o in 0..output {
                let g = dyr[o];
                let dwrow = dw.row_mut(o);
                for i in 0..input {
                    dwrow[i] += g * xr[i];
                }
                if let Some(db) = db.as_mut() {
                    db.data_mut()[o] += g;
                }
            }
        }
        let mut v = vec![dw];
        if let Some(db) = db {
            v.push(db);
        }
        Some(v)
    } else {
        None
    };
    let dx = if want_dx {
        let mut dx = Tensor::zeros(x.shape().to_vec());
        for r in 0..rows {
            let dyr = dy.row(r);
            let dxr = dx.row_mut(r);
            for i in 0..input {
                let mut acc = 0.0;
                for o in 0..output {
                    acc += dyr[o] * w.row(o)[i];
                }
                dxr[i] = acc;
            }
        }
        Some(dx)
    } else {
        None
    };
    Ok((grads, dx))
}

fn layer_norm_forward(params: &[Tensor], x: &Tensor, dim: usize) -> Result<Tensor> {
    if x.last_dim() != dim {
        return Err(shape_err("layer norm input", &[dim], x.shape()));
    }
    let gamma = params[0].data();
    let beta = params[1].data();
    let mut y = Tensor::zeros(x.shape().to_vec());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let (mean, inv_std) = layer_norm_stats(xr);
        let yr = y.row_mut(r);
        for i in 0..dim {
            yr[i] = gamma[i] * (xr[i] - mean) * inv_std + beta[i];
        }
    }
    Ok(y)
}

fn layer_norm_stats(xr: &[f64]) -> (f64, f64) {
    let dim = xr.len() as f64;
    let mean = xr.iter().sum::<f64>() / dim;
    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn layer_norm_backward(
    params: &[Tensor],
    x: &Tensor,
    dy: &Tensor,
    dim: usize,
    want_dx: bool,
    want_dparams: bool,
) -> Result<(Option<ParamGrads>, Option<Tensor>)> {
    let gamma = params[0].data();
    let mut dgamma = Tensor::zeros(vec![dim]);
    let mut dbeta = Tensor::zeros(vec![dim]);
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape().to_vec()));
    for r in 0..x.rows() {
        let xr = x.row(r);
        let dyr = dy.row(r);
        let (mean, inv_std) = layer_norm_stats(xr);
        let norm: Vec<f64> = xr.iter().map(|v| (v - mean) * inv_std).collect();
        if want_dparams {
            let dg = dgamma.data_mut();
            let db = dbeta.data_mut();
            for i in 0..dim {
                dg[i] += dyr[i] * norm[i];
                db[i] += dyr[i];
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dx = inv_std * (dn - mean(dn) - norm * mean(dn .* norm))
            let dn: Vec<f64> = (0..dim).map(|i| dyr[i] * gamma[i]).collect();
            let mean_dn = dn.iter().sum::<f64>() / dim as f64;
            let mean_dn_norm = dn.iter().zip(&norm).map(|(a, b)| a * b).sum::<f64>() / dim as f64;
            let dxr = dx.row_mut(r);
            for i in 0..dim {
                dxr[i] = inv_std * (dn[i] - mean_dn - norm[i] * mean_dn_norm);
            }
        }
    }
    Ok((want_dparams.then_some(vec![dgamma, dbeta]), dx))
}

/// Number of parameter tensors owned by each inner layer of a residual.
fn residual_param_splits(layers: &[LayerSpec]) -> Vec<usize> {
    layers.iter().map(|l| l.param_shapes().len()).collect()
}

fn residual_forward(layers: &[LayerSpec], params: &[Tensor], x: &Tensor) -> Result<Tensor> {
    let mut h = x.clone();
    let mut offset = 0;
    for (l, n) in layers.iter().zip(residual_param_splits(layers)) {
        h = l.apply(&params[offset..offset + n], &h)?;
        offset += n;
    }
    if h.shape() != x.shape() {
        return Err(shape_err("residual inner output", x.shape(), h.shape()));
    }
    Ok(zip_elems(x, &h, |a, b| a + b))
}

fn residual_backward(
    layers: &[LayerSpec],
    params: &[Tensor],
    x: &Tensor,
    dy: &Tensor,
    want_dx: bool,
    want_dparams: bool,
) -> Result<(Option<ParamGrads>, Option<Tensor>)> {
    // Recompute the inner activations from the stored block input.
    let splits = residual_param_splits(layers);
    let mut inputs = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    let mut offset = 0;
    for (l, n) in layers.iter().zip(&splits) {
        inputs.push(h.clone());
        h = l.apply(&params[offset..offset + *n], &h)?;
        offset += n;
    }
    // Backprop through the inner stack; the skip connection always needs
    // the inner input gradient, independent of `want_dx`.
    let mut grads_rev: Vec<ParamGrads> = Vec::with_capacity(layers.len());
    let mut d = dy.clone();
    for (idx, l) in layers.iter().enumerate().rev() {
        let start: usize = splits[..idx].iter().sum();
        let n = splits[idx];
        let (dp, dx_inner) = l.apply_backward(
            &params[start..start + n],
            &inputs[idx],
            &d,
            true,
            want_dparams,
        )?;
        if let Some(dp) = dp {
            grads_rev.push(dp);
        }
        d = dx_inner.expect("inner layers always propagate input gradients");
    }
    let grads = want_dparams.then(|| {
        grads_rev
            .into_iter()
            .rev()
            .flatten()
            .collect::<ParamGrads>()
    });
    let dx = want_dx.then(|| zip_elems(dy, &d, |a, b| a + b));
    Ok((grads, dx))
}

fn embedding_forward(params: &[Tensor], x: &Tensor, vocab: usize, dim: usize) -> Result<Tensor> {
    let table = &params[0];
    let mut shape = x.shape().to_vec();
    shape.push(dim);
    let mut y = Tensor::zeros(shape);
    for (r, &id) in x.data().iter().enumerate() {
        let idx = class_index(id, vocab)?;
        y.row_mut(r).copy_from_slice(table.row(idx));
    }
    Ok(y)
}

fn embedding_backward(x: &Tensor, dy: &Tensor, vocab: usize, dim: usize) -> Result<ParamGrads> {
    let mut dtable = Tensor::zeros(vec![vocab, dim]);
    for (r, &id) in x.data().iter().enumerate() {
        let idx = class_index(id, vocab)?;
        let drow = dy.row(r);
        let trow = dtable.row_mut(idx);
        for i in 0..dim {
            trow[i] += drow[i];
        }
    }
    Ok(vec![dtable])
}

// Dense [m,k] x [k,n] helpers over flat slices.
fn mat_mul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

// a^T [k,m] view of a [m,k] times b [m,n] -> [k,n]
fn mat_mul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..k {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..m {
                acc += a[p * k + i] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

// a [m,k] times b^T for b [n,k] -> [m,n]
fn mat_mul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[j * k + p];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn softmax_rows(s: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut s[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct AttentionIntermediates {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>, // softmax'd scores [T,T]
    ctx: Vec<f64>,  // attn * v [T,d]
}

fn attention_sample(xs: &[f64], params: &[Tensor], seq: usize, d: usize) -> AttentionIntermediates {
    let scale = 1.0 / (d as f64).sqrt();
    let q = mat_mul(xs, params[0].data(), seq, d, d);
    let k = mat_mul(xs, params[1].data(), seq, d, d);
    let v = mat_mul(xs, params[2].data(), seq, d, d);
    let mut attn = mat_mul_nt(&q, &k, seq, d, seq);
    for s in attn.iter_mut() {
        *s *= scale;
    }
    softmax_rows(&mut attn, seq, seq);
    let ctx = mat_mul(&attn, &v, seq, seq, d);
    AttentionIntermediates { q, k, v, attn, ctx }
}

fn attention_forward(params: &[Tensor], x: &Tensor, dim: usize) -> Result<Tensor> {
    if x.rank() != 3 || x.last_dim() != dim {
        return Err(shape_err("attention input [batch, seq, dim]", &[dim], x.shape()));
    }
    let (batch, seq) = (x.shape()[0], x.shape()[1]);
    let mut y = Tensor::zeros(x.shape().to_vec());
    let sample = seq * dim;
    for b in 0..batch {
        let xs = &x.data()[b * sample..(b + 1) * sample];
        let inter = attention_sample(xs, params, seq, dim);
        let out = mat_mul(&inter.ctx, params[3].data(), seq, dim, dim);
        y.data_mut()[b * sample..(b + 1) * sample].copy_from_slice(&out);
    }
    Ok(y)
}

fn attention_backward(
    params: &[Tensor],
    x: &Tensor,
    dy: &Tensor,
    dim: usize,
    want_dx: bool,
    want_dparams: bool,
) -> Result<(Option<ParamGrads>, Option<Tensor>)> {
    let (batch, seq, d) = (x.shape()[0], x.shape()[1], dim);
    let scale = 1.0 / (d as f64).sqrt();
    let sample = seq * d;
    let mut dwq = vec![0.0; d * d];
    let mut dwk = vec![0.0; d * d];
    let mut dwv = vec![0.0; d * d];
    let mut dwo = vec![0.0; d * d];
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape().to_vec()));
    for b in 0..batch {
        let xs = &x.data()[b * sample..(b + 1) * sample];
        let dys = &dy.data()[b * sample..(b + 1) * sample];
        let inter = attention_sample(xs, params, seq, d);
        // y = ctx * Wo
        let dctx = mat_mul_nt(dys, params[3].data(), seq, d, d);
        for (acc, v) in dwo.iter_mut().zip(mat_mul_tn(&inter.ctx, dys, seq, d, d)) {
            *acc += v;
        }
        // ctx = attn * V
        let mut dattn = mat_mul_nt(&dctx, &inter.v, seq, d, seq);
        let dv = mat_mul_tn(&inter.attn, &dctx, seq, seq, d);
        // softmax backward per row: ds = a .* (da - sum(da .* a))
        for r in 0..seq {
            let a = &inter.attn[r * seq..(r + 1) * seq];
            let da = &mut dattn[r * seq..(r + 1) * seq];
            let dot: f64 = da.iter().zip(a).map(|(x, y)| x * y).sum();
            for (dv, av) in da.iter_mut().zip(a) {
                *dv = av * (*dv - dot) * scale;
            }
        }
        // scores = Q K^T (scale folded into dattn above)
        let dq = mat_mul(&dattn, &inter.k, seq, seq, d);
        let dk = mat_mul_tn(&dattn, &inter.q, seq, seq, d);
        for (acc, v) in dwq.iter_mut().zip(mat_mul_tn(xs, &dq, seq, d, d)) {
            *acc += v;
        }
        for (acc, v) in dwk.iter_mut().zip(mat_mul_tn(xs, &dk, seq, d, d)) {
            *acc += v;
        }
        for (acc, v) in dwv.iter_mut().zip(mat_mul_tn(xs, &dv, seq, d, d)) {
            *acc += v;
        }
        if let Some(dx) = dx.as_mut() {
            let mut dxs = mat_mul_nt(&dq, params[0].data(), seq, d, d);
            for (acc, v) in dxs.iter_mut().zip(mat_mul_nt(&dk, params[1].data(), seq, d, d)) {
                *acc += v;
            }
            for (acc, v) in dxs.iter_mut().zip(mat_mul_nt(&dv, params[2].data(), seq, d, d)) {
                *acc += v;
            }
            dx.data_mut()[b * sample..(b + 1) * sample].copy_from_slice(&dxs);
        }
    }
    let grads = want_dparams.then(|| {
        vec![
            Tensor::new(vec![d, d], dwq).expect("dwq"),
            Tensor::new(vec![d, d], dwk).expect("dwk"),
            Tensor::new(vec![d, d], dwv).expect("dwv"),
            Tensor::new(vec![d, d], dwo).expect("dwo"),
        ]
    });
    Ok((grads, dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_gelu_shapes() {
        let x = Tensor::new(vec![2, 2], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let y = LayerSpec::Relu.apply(&[], &x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = LayerSpec::Gelu.apply(&[], &x).unwrap();
        assert!(g.data()[1].abs() < 1e-12); // gelu(0) = 0
        assert!(g.data()[3] > 1.9); // gelu(2) close to 2
    }

    #[test]
    fn linear_matches_hand_computation() {
        let layer = LayerSpec::Linear { input: 2, output: 2, bias: true };
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let y = layer.apply(&[w, b], &x).unwrap();
        assert_eq!(y.data(), &[3.5, 6.5]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        for classes in [2usize, 5, 10] {
            let logits = Tensor::zeros(vec![3, classes]);
            let targets = Tensor::new(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
            let loss = LayerSpec::SoftmaxCrossEntropy.loss(&logits, &targets).unwrap();
            assert!((loss - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn squared_error_grad_matches_closed_form() {
        let logits = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let targets = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let g = LayerSpec::SquaredError.loss_grad(&logits, &targets).unwrap();
        // 2 * (p - t) / rows with rows = 2
        assert_eq!(g.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let layer = LayerSpec::LayerNorm { dim: 4 };
        let params = vec![Tensor::filled(vec![4], 1.0), Tensor::zeros(vec![4])];
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = layer.apply(&params, &x).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn residual_identity_inner_doubles() {
        // inner = identity linear, so residual output = 2x
        let inner = LayerSpec::Linear { input: 2, output: 2, bias: false };
        let layer = LayerSpec::Residual { layers: vec![inner] };
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap();
        let y = layer.apply(&[eye], &x).unwrap();
        assert_eq!(y.data(), &[6.0, -2.0]);
    }

    #[test]
    fn embedding_looks_up_rows() {
        let layer = LayerSpec::Embedding { vocab: 3, dim: 2 };
        let table = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let ids = Tensor::new(vec![2, 2], vec![2.0, 0.0, 1.0, 1.0]).unwrap();
        let y = layer.apply(&[table], &ids).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert_eq!(y.row(0), &[4.0, 5.0]);
        assert_eq!(y.row(1), &[0.0, 1.0]);
        // out-of-range id is an error
        let bad = Tensor::new(vec![1], vec![3.0]).unwrap();
        assert!(layer.apply(&[Tensor::zeros(vec![3, 2])], &bad).is_err());
    }
}
