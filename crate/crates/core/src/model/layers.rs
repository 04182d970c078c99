//! Parameter-path helpers and the pre-norm transformer block.

use masa_autograd::params::uniform_fan_in;
use masa_autograd::{Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

pub(crate) fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<()> {
    store.insert(format!("{prefix}.weight"), uniform_fan_in(rng, fan_in, fan_out))?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![fan_out]))?;
    Ok(())
}

pub(crate) fn init_norm(store: &mut ParamStore, prefix: &str, width: usize) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), Tensor::filled(vec![width], 1.0))?;
    store.insert(format!("{prefix}.beta"), Tensor::zeros(vec![width]))?;
    Ok(())
}

pub(crate) fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    Ok(g.linear(x, w, b)?)
}

pub(crate) fn norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let beta = g.param(store, &format!("{prefix}.beta"))?;
    Ok(g.layer_norm(x, gamma, beta)?)
}

pub(crate) fn init_block<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    width: usize,
    mlp_ratio: usize,
) -> Result<()> {
    init_norm(store, &format!("{prefix}.ln1"), width)?;
    for name in ["q", "k", "v", "o"] {
        init_linear(store, rng, &format!("{prefix}.attn.{name}"), width, width)?;
    }
    init_norm(store, &format!("{prefix}.ln2"), width)?;
    init_linear(store, rng, &format!("{prefix}.mlp.fc1"), width, width * mlp_ratio)?;
    init_linear(store, rng, &format!("{prefix}.mlp.fc2"), width * mlp_ratio, width)?;
    Ok(())
}

/// Multi-head self-attention over the rows of `x`. Attention probabilities
/// are pushed to `trace` when given, one `[T, T]` matrix per head.
pub(crate) fn attention(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    heads: usize,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let width = g.shape(x)[1];
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::Shape(format!("width {width} not divisible into {heads} heads")));
    }
    let dh = width / heads;
    let q = linear(g, store, &format!("{prefix}.q"), x)?;
    let k = linear(g, store, &format!("{prefix}.k"), x)?;
    let v = linear(g, store, &format!("{prefix}.v"), x)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let p = g.softmax(scores);
        if let Some(t) = trace.as_deref_mut() {
            t.push(p);
        }
        outs.push(g.matmul(p, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, store, &format!("{prefix}.o"), joined)
}

/// `x + attn(ln1(x))`, then `x + mlp(ln2(x))` with a GELU MLP.
pub(crate) fn block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    heads: usize,
    trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let h = norm(g, store, &format!("{prefix}.ln1"), x)?;
    let a = attention(g, store, &format!("{prefix}.attn"), h, heads, trace)?;
    let x = g.add(x, a)?;
    let h = norm(g, store, &format!("{prefix}.ln2"), x)?;
    let h = linear(g, store, &format!("{prefix}.mlp.fc1"), h)?;
    let h = g.gelu(h);
    let h = linear(g, store, &format!("{prefix}.mlp.fc2"), h)?;
    Ok(g.add(x, h)?)
}
