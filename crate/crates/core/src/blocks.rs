//! Parameterized layers shared by the encoders and fusion heads.

use rand_chacha::ChaCha8Rng;
use tnf_autograd::nn::{multi_head_attention, AttentionVars};
use tnf_autograd::{init, Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

/// Registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng, prefix: &str) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: prefix.to_string(),
        }
    }

    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_, T> {
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix: format!("{}.{name}", self.prefix),
        }
    }

    fn full(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let t = init::fan_in_uniform(self.rng, shape.to_vec(), fan_in)?;
        Ok(self.store.add(self.full(name), t)?)
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let t = Tensor::full(shape.to_vec(), T::c(value))?;
        Ok(self.store.add(self.full(name), t)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(Linear {
            w: pb.uniform("w", &[d_in, d_out], d_in)?,
            b: pb.uniform("b", &[d_out], d_in)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        Ok(g.linear(x, w, Some(b))?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, e: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(LayerNorm {
            gamma: pb.filled("gamma", &[e], 1.0)?,
            beta: pb.filled("beta", &[e], 0.0)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        Ok(g.layer_norm(x, gamma, beta, LN_EPS)?)
    }
}

/// Two linear layers with a GELU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(Mlp {
            fc1: Linear::new(&mut pb, "fc1", d_in, hidden)?,
            fc2: Linear::new(&mut pb, "fc2", hidden, d_out)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, store, h)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, e: usize, heads: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(Attention {
            q: Linear::new(&mut pb, "q", e, e)?,
            k: Linear::new(&mut pb, "k", e, e)?,
            v: Linear::new(&mut pb, "v", e, e)?,
            o: Linear::new(&mut pb, "o", e, e)?,
            heads,
        })
    }

    pub fn vars<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> AttentionVars {
        let mut p = |id| g.param(store, id);
        AttentionVars {
            wq: p(self.q.w),
            bq: p(self.q.b),
            wk: p(self.k.w),
            bk: p(self.k.b),
            wv: p(self.v.w),
            bv: p(self.v.b),
            wo: p(self.o.w),
            bo: p(self.o.b),
        }
    }

    /// Queries from `query`, keys and values from `context`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, query: Var, context: Var) -> Result<Var> {
        let w = self.vars(g, store);
        Ok(multi_head_attention(g, query, context, context, &w, self.heads)?)
    }
}

/// Pre-norm transformer block: `x + SA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, e: usize, heads: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(TransformerBlock {
            ln1: LayerNorm::new(&mut pb, "ln1", e)?,
            attn: Attention::new(&mut pb, "attn", e, heads)?,
            ln2: LayerNorm::new(&mut pb, "ln2", e)?,
            mlp: Mlp::new(&mut pb, "mlp", e, 2 * e, e)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, store, x)?;
        let h = self.attn.forward(g, store, h, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, store, x)?;
        let h = self.mlp.forward(g, store, h)?;
        Ok(g.add(x, h)?)
    }
}

/// Prepend a learned class token to `[b, t, e]` tokens.
pub fn prepend_token<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, cls: ParamId, tokens: Var) -> Result<Var> {
    let s = g.shape(tokens).to_vec();
    let c = g.param(store, cls);
    let c = g.broadcast_to(c, &[s[0], 1, s[2]])?;
    Ok(g.concat(&[c, tokens], 1)?)
}

/// Token `i` of `[b, t, e]` as `[b, e]`.
pub fn token_at<T: Real>(g: &mut Graph<T>, x: Var, i: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let t = g.slice(x, 1, i, 1)?;
    Ok(g.reshape(t, &[s[0], s[2]])?)
}

/// Class token, transformer stack, final norm and a linear head on the class
/// token. Used by every token-based fusion.
#[derive(Clone, Debug)]
pub struct ClassTokenHead {
    pub cls: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln: LayerNorm,
    pub head: Linear,
}

impl ClassTokenHead {
    pub fn new<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        e: usize,
        depth: usize,
        heads: usize,
        classes: usize,
    ) -> Result<Self> {
        let mut pb = pb.scope(name);
        let cls = pb.uniform("cls", &[1, 1, e], e)?;
        let blocks = (0..depth)
            .map(|i| TransformerBlock::new(&mut pb, &format!("block{i}"), e, heads))
            .collect::<Result<_>>()?;
        Ok(ClassTokenHead {
            cls,
            blocks,
            ln: LayerNorm::new(&mut pb, "ln", e)?,
            head: Linear::new(&mut pb, "head", e, classes)?,
        })
    }

    /// Logits `[b, C]` for `[b, t, e]` tokens (class token not included).
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, tokens: Var) -> Result<Var> {
        let mut x = prepend_token(g, store, self.cls, tokens)?;
        for b in &self.blocks {
            x = b.forward(g, store, x)?;
        }
        let x = self.ln.forward(g, store, x)?;
        let c = token_at(g, x, 0)?;
        self.head.forward(g, store, c)
    }
}
