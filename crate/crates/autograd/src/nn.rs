//! Composite layers built from graph primitives.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;

/// Projection weights of one multi-head attention layer (`[e, e]` / `[e]`).
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

fn split_heads<T: Real>(g: &mut Graph<T>, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let x = g.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    g.permute(x, &[0, 2, 1, 3])
}

/// Per-head `softmax(QKᵀ/√d_h)·V` over already-projected `q: [b, t_q, e]`,
/// `k, v: [b, t_k, e]`, heads concatenated back to `[b, t_q, e]`.
pub fn scaled_dot_product_attention<T: Real>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<Var> {
    let (sq, sk, sv) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 || sq[0] != sk[0] || sk != sv || sq[2] != sk[2] {
        return Err(TensorError::dim(
            "multi_head_attention",
            format!("q {sq:?}, k {sk:?}, v {sv:?}"),
        ));
    }
    let e = sq[2];
    if heads == 0 || e % heads != 0 {
        return Err(TensorError::Config(format!(
            "embedding width {e} is not divisible by {heads} heads"
        )));
    }
    let dh = e / heads;
    let qh = split_heads(g, q, heads)?;
    let kh = split_heads(g, k, heads)?;
    let vh = split_heads(g, v, heads)?;
    let kt = g.transpose(kh, 2, 3)?;
    let scores = g.matmul(qh, kt)?;
    let scores = g.scale(scores, T::c(1.0 / (dh as f64).sqrt()))?;
    let att = g.softmax(scores)?;
    let ctx = g.matmul(att, vh)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    g.reshape(ctx, &[sq[0], sq[1], e])
}

/// Query/key/value projections, attention, then the output projection.
pub fn multi_head_attention<T: Real>(
    g: &mut Graph<T>,
    query_src: Var,
    key_src: Var,
    value_src: Var,
    w: &AttentionVars,
    heads: usize,
) -> Result<Var> {
    let q = g.linear(query_src, w.wq, Some(w.bq))?;
    let k = g.linear(key_src, w.wk, Some(w.bk))?;
    let v = g.linear(value_src, w.wv, Some(w.bv))?;
    let ctx = scaled_dot_product_attention(g, q, k, v, heads)?;
    g.linear(ctx, w.wo, Some(w.bo))
}
