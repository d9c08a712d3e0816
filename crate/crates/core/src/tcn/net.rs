//! Forward and reverse passes over a batch laid out as `(batch * n) x features`,
//! row `b * n + t` holding timestep `t` of sample `b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use super::loss::softmax_row;
use super::{swish, swish_grad, TcnError, TcnParameters};

#[derive(Debug, Clone)]
pub struct Cache {
    pub batch: usize,
    pub n: usize,
    block_inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    hidden: Array2<f64>,
    embed_pre: Array2<f64>,
    embed: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(batch * n) x classes`
    pub logits: Array2<f64>,
    /// `batch x embed_dim`, taken at each sample's final timestep.
    pub embedding: Array2<f64>,
    pub cache: Cache,
}

/// Final-timestep outputs only, without a backward cache.
#[derive(Debug, Clone)]
pub struct Inference {
    /// `batch x classes` softmax probabilities.
    pub probs: Array2<f64>,
    /// `batch x embed_dim`
    pub embedding: Array2<f64>,
}

/// Rows of `x` delayed by `lag` steps within each length-`n` sequence, zero-filled.
fn shifted(x: &Array2<f64>, lag: usize, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    let batch = x.nrows() / n;
    for b in 0..batch {
        let base = b * n;
        out.slice_mut(s![base + lag..base + n, ..]).assign(&x.slice(s![base..base + n - lag, ..]));
    }
    out
}

/// Adjoint of [`shifted`]: accumulates `src` moved `lag` steps earlier into `dst`.
fn unshift_add(dst: &mut Array2<f64>, src: &Array2<f64>, lag: usize, n: usize) {
    let batch = src.nrows() / n;
    for b in 0..batch {
        let base = b * n;
        let mut d = dst.slice_mut(s![base..base + n - lag, ..]);
        d += &src.slice(s![base + lag..base + n, ..]);
    }
}

fn conv(x: &Array2<f64>, weight: &Array3<f64>, bias: &Array1<f64>, dilation: usize, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), weight.shape()[0]));
    out += bias;
    for k in 0..weight.shape()[2] {
        let lag = k * dilation;
        if lag >= n {
            continue;
        }
        let w = weight.index_axis(Axis(2), k);
        if lag == 0 {
            general_mat_mul(1.0, x, &w.t(), 1.0, &mut out);
        } else {
            general_mat_mul(1.0, &shifted(x, lag, n), &w.t(), 1.0, &mut out);
        }
    }
    out
}

/// One causal dilated convolution over a single `n x C` sequence.
pub fn causal_dilated_conv(
    input: &Array2<f64>,
    weight: &Array3<f64>,
    bias: &Array1<f64>,
    dilation: usize,
) -> Result<Array2<f64>, TcnError> {
    if input.ncols() != weight.shape()[1] || bias.len() != weight.shape()[0] || dilation == 0 {
        return Err(TcnError::ShapeMismatch(format!(
            "input {:?}, weight {:?}, bias {}, dilation {dilation}",
            input.shape(),
            weight.shape(),
            bias.len()
        )));
    }
    if input.nrows() == 0 {
        return Ok(Array2::zeros((0, weight.shape()[0])));
    }
    Ok(conv(input, weight, bias, dilation, input.nrows()))
}

fn check_input(params: &TcnParameters, x: &Array2<f64>, n: usize) -> Result<usize, TcnError> {
    let cfg = &params.config;
    if n == 0 || x.nrows() == 0 || x.nrows() % n != 0 || x.ncols() != cfg.in_features {
        return Err(TcnError::ShapeMismatch(format!(
            "input {:?} is not a batch of n={n} frames with {} features",
            x.shape(),
            cfg.in_features
        )));
    }
    Ok(x.nrows() / n)
}

fn block_forward(params: &TcnParameters, x: &Array2<f64>, n: usize, mut keep: impl FnMut(&Array2<f64>, Array2<f64>)) -> Array2<f64> {
    let mut h = x.clone();
    for block in &params.blocks {
        let z = conv(&h, &block.weight, &block.bias, block.dilation, n);
        let mut next = z.mapv(swish);
        match &block.proj {
            Some(p) => general_mat_mul(1.0, &h, &p.t(), 1.0, &mut next),
            None => next += &h,
        }
        keep(&h, z);
        h = next;
    }
    h
}

fn final_rows(x: &Array2<f64>, n: usize) -> Array2<f64> {
    let rows: Vec<usize> = (0..x.nrows() / n).map(|b| b * n + n - 1).collect();
    x.select(Axis(0), &rows)
}

fn embed(params: &TcnParameters, h: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let mut u = h.dot(&params.w_embed.t());
    u += &params.b_embed;
    let e = u.mapv(swish);
    (u, e)
}

fn classify(params: &TcnParameters, e: &Array2<f64>) -> Array2<f64> {
    let mut logits = e.dot(&params.w_class.t());
    logits += &params.b_class;
    logits
}

fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Full forward pass with a cache for [`backward`].
pub fn forward_batch(params: &TcnParameters, x: &Array2<f64>, n: usize) -> Result<ForwardOutput, TcnError> {
    let batch = check_input(params, x, n)?;
    let mut block_inputs = Vec::with_capacity(params.blocks.len());
    let mut pre = Vec::with_capacity(params.blocks.len());
    let hidden = block_forward(params, x, n, |input, z| {
        block_inputs.push(input.clone());
        pre.push(z);
    });
    if !all_finite(&hidden) {
        return Err(TcnError::NonFiniteActivation("residual blocks"));
    }
    let (embed_pre, embed) = embed(params, hidden.view());
    let logits = classify(params, &embed);
    if !all_finite(&logits) || !all_finite(&embed) {
        return Err(TcnError::NonFiniteActivation("heads"));
    }
    let embedding = final_rows(&embed, n);
    Ok(ForwardOutput { logits, embedding, cache: Cache { batch, n, block_inputs, pre, hidden, embed_pre, embed } })
}

/// Forward pass over one normalised `n x features` window.
pub fn forward(params: &TcnParameters, window: &Array2<f64>) -> Result<ForwardOutput, TcnError> {
    forward_batch(params, window, window.nrows())
}

/// Final-timestep probabilities and embeddings, skipping the cache and
/// evaluating the heads only where they are needed.
pub fn infer_batch(params: &TcnParameters, x: &Array2<f64>, n: usize) -> Result<Inference, TcnError> {
    check_input(params, x, n)?;
    let hidden = block_forward(params, x, n, |_, _| {});
    let last = final_rows(&hidden, n);
    let (_, embedding) = embed(params, last.view());
    let logits = classify(params, &embedding);
    if !all_finite(&logits) || !all_finite(&embedding) {
        return Err(TcnError::NonFiniteActivation("heads"));
    }
    let mut probs = logits;
    for mut row in probs.rows_mut() {
        let p = softmax_row(row.view());
        row.assign(&p);
    }
    Ok(Inference { probs, embedding })
}

/// Exact gradients of the loss with respect to every parameter, given the
/// loss gradient with respect to the logits.
pub fn backward(params: &TcnParameters, cache: &Cache, dlogits: &Array2<f64>) -> Result<TcnParameters, TcnError> {
    let cfg = &params.config;
    let rows = cache.batch * cache.n;
    if dlogits.dim() != (rows, cfg.classes) {
        return Err(TcnError::CacheMismatch(format!("logit gradient {:?} for {rows} rows", dlogits.shape())));
    }
    if cache.block_inputs.len() != params.blocks.len()
        || cache.embed.dim() != (rows, cfg.embed_dim)
        || cache.hidden.dim() != (rows, cfg.filters)
    {
        return Err(TcnError::CacheMismatch("layer shapes differ from parameters".into()));
    }
    let n = cache.n;
    let mut g = params.zeros_like();

    g.w_class = dlogits.t().dot(&cache.embed);
    g.b_class = dlogits.sum_axis(Axis(0));
    let de = dlogits.dot(&params.w_class);
    let du = de * &cache.embed_pre.mapv(swish_grad);
    g.w_embed = du.t().dot(&cache.hidden);
    g.b_embed = du.sum_axis(Axis(0));
    let mut dh = du.dot(&params.w_embed);

    for (i, block) in params.blocks.iter().enumerate().rev() {
        let x = &cache.block_inputs[i];
        let z = &cache.pre[i];
        if z.nrows() != rows || x.ncols() != block.weight.shape()[1] {
            return Err(TcnError::CacheMismatch(format!("block {i}")));
        }
        let dz = &dh * &z.mapv(swish_grad);
        let gb = &mut g.blocks[i];
        gb.bias = dz.sum_axis(Axis(0));
        let mut dx = match &block.proj {
            Some(p) => {
                gb.proj = Some(dh.t().dot(x));
                dh.dot(p)
            }
            None => dh,
        };
        for k in 0..block.weight.shape()[2] {
            let lag = k * block.dilation;
            if lag >= n {
                continue;
            }
            let w = block.weight.index_axis(Axis(2), k);
            let dxs = dz.dot(&w);
            if lag == 0 {
                gb.weight.index_axis_mut(Axis(2), k).assign(&dz.t().dot(x));
                dx += &dxs;
            } else {
                gb.weight.index_axis_mut(Axis(2), k).assign(&dz.t().dot(&shifted(x, lag, n)));
                unshift_add(&mut dx, &dxs, lag, n);
            }
        }
        dh = dx;
    }
    Ok(g)
}
