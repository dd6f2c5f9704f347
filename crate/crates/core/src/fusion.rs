//! Fusion blocks producing gated or attended features and the fusion-branch
//! logits.

use tnf_autograd::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::blocks::{Attention, ClassTokenHead, Linear, Mlp, ParamBuilder};
use crate::config::{FusionKind, FusionParams, ImageEncoderConfig, TabularConfig};
use crate::encoders::global_avg_pool;
use crate::error::{Error, Result};

/// Features handed from the encoders to a fusion block.
#[derive(Clone, Copy, Debug)]
pub struct FusionInputs {
    /// Image feature map `[b, c, h, w, d]`.
    pub v_i: Var,
    /// Tabular token features `[b, t, e]`.
    pub tab_tokens: Var,
    /// Tabular summary vector `[b, e]`.
    pub tab_vec: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub v_i_prime: Var,
    pub v_t_prime: Var,
    pub logits: Var,
}

// ----- MMTM ------------------------------------------------------------

/// Squeeze-and-gate fusion of an image map with a tabular vector.
#[derive(Clone, Debug)]
pub struct Mmtm {
    pub squeeze: Linear,
    pub gate_i: Linear,
    pub gate_t: Linear,
    pub head: Linear,
}

impl Mmtm {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, c: usize, l: usize, hidden: usize, classes: usize) -> Result<Self> {
        Ok(Mmtm {
            squeeze: Linear::new(pb, "squeeze", c + l, hidden)?,
            gate_i: Linear::new(pb, "gate_i", hidden, c)?,
            gate_t: Linear::new(pb, "gate_t", hidden, l)?,
            head: Linear::new(pb, "head", c + l, classes)?,
        })
    }

    /// Sigmoid gates `([b, c], [b, l])`.
    pub fn gates<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, v_t: Var) -> Result<(Var, Var)> {
        let pooled = global_avg_pool(g, v_i)?;
        let joint = g.concat(&[pooled, v_t], 1)?;
        let z = self.squeeze.forward(g, store, joint)?;
        let ei = self.gate_i.forward(g, store, z)?;
        let et = self.gate_t.forward(g, store, z)?;
        Ok((g.sigmoid(ei)?, g.sigmoid(et)?))
    }

    /// Channel-wise `v_i ⊙ gate_i` and `v_t ⊙ gate_t`.
    pub fn apply<T: Real>(g: &mut Graph<T>, v_i: Var, v_t: Var, gate_i: Var, gate_t: Var) -> Result<(Var, Var)> {
        let (si, st) = (g.shape(v_i).to_vec(), g.shape(v_t).to_vec());
        let (gi, gt) = (g.shape(gate_i).to_vec(), g.shape(gate_t).to_vec());
        if si.len() < 2 || gi != si[..2] || gt != st {
            return Err(Error::Tensor(tnf_autograd::TensorError::Dimension {
                op: "mmtm",
                detail: format!("gates {gi:?}/{gt:?} for features {si:?}/{st:?}"),
            }));
        }
        let mut bshape = si[..2].to_vec();
        bshape.resize(si.len(), 1);
        let gate = g.reshape(gate_i, &bshape)?;
        Ok((g.mul(v_i, gate)?, g.mul(v_t, gate_t)?))
    }

    pub fn head_logits<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, v_t: Var) -> Result<Var> {
        let pooled = global_avg_pool(g, v_i)?;
        let joint = g.concat(&[pooled, v_t], 1)?;
        self.head.forward(g, store, joint)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, v_t: Var) -> Result<FusionOutput> {
        let (gi, gt) = self.gates(g, store, v_i, v_t)?;
        let (vi, vt) = Self::apply(g, v_i, v_t, gi, gt)?;
        Ok(FusionOutput {
            v_i_prime: vi,
            v_t_prime: vt,
            logits: self.head_logits(g, store, vi, vt)?,
        })
    }
}

// ----- concatenation + linear -------------------------------------------

#[derive(Clone, Debug)]
pub struct ConcatLinear {
    pub n_img: usize,
    pub n_tab: usize,
    pub mlp: Mlp,
}

impl ConcatLinear {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, n_img: usize, n_tab: usize, hidden: usize, classes: usize) -> Result<Self> {
        Ok(ConcatLinear {
            n_img,
            n_tab,
            mlp: Mlp::new(pb, "mlp", n_img + n_tab, hidden, classes)?,
        })
    }

    pub fn width(&self) -> usize {
        self.n_img + self.n_tab
    }

    /// `img: [b, n_img]`; `tab: [b, n_tab]`, or `None` when `n_tab == 0`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, img: Var, tab: Option<Var>) -> Result<FusionOutput> {
        let joint = match tab {
            Some(t) if self.n_tab > 0 => g.concat(&[img, t], 1)?,
            None if self.n_tab == 0 => img,
            _ => {
                return Err(Error::Config(format!(
                    "concat-linear fusion built for {} tabular features",
                    self.n_tab
                )))
            }
        };
        if g.shape(joint)[1] != self.width() {
            return Err(Error::Tensor(tnf_autograd::TensorError::Dimension {
                op: "concat_linear",
                detail: format!("joint width {} for a layer of width {}", g.shape(joint)[1], self.width()),
            }));
        }
        Ok(FusionOutput {
            v_i_prime: img,
            v_t_prime: tab.unwrap_or(img),
            logits: self.mlp.forward(g, store, joint)?,
        })
    }
}

/// Flatten `[b, ...]` to `[b, n]`.
pub fn flatten<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    Ok(g.reshape(x, &[s[0], s[1..].iter().product()])?)
}

// ----- image tokens ---------------------------------------------------------

/// 1×1×1 convolution to width `e`, then one token per voxel: `[b, h·w·d, e]`.
#[derive(Clone, Debug)]
pub struct ImageTokenizer {
    pub w: ParamId,
    pub b: ParamId,
}

impl ImageTokenizer {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, c: usize, e: usize) -> Result<Self> {
        let mut pb = pb.scope("tokenizer");
        Ok(ImageTokenizer {
            w: pb.uniform("w", &[e, c, 1, 1, 1], c)?,
            b: pb.uniform("b", &[e], c)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let p = g.conv3d(v_i, w, Some(b), 1, 0)?;
        let s = g.shape(p).to_vec();
        let p = g.reshape(p, &[s[0], s[1], s[2] * s[3] * s[4]])?;
        Ok(g.permute(p, &[0, 2, 1])?)
    }
}

fn check_width<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
        return Err(Error::Tensor(tnf_autograd::TensorError::Dimension {
            op,
            detail: format!("token sets {sa:?} and {sb:?} differ in batch or width"),
        }));
    }
    Ok(())
}

// ----- concatenation + transformer --------------------------------------------

#[derive(Clone, Debug)]
pub struct ConcatTransformer {
    pub tokenizer: ImageTokenizer,
    pub head: ClassTokenHead,
    pub embed: usize,
}

impl ConcatTransformer {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, c: usize, e: usize, depth: usize, heads: usize, classes: usize) -> Result<Self> {
        Ok(ConcatTransformer {
            tokenizer: ImageTokenizer::new(pb, c, e)?,
            head: ClassTokenHead::new(pb, "head", e, depth, heads, classes)?,
            embed: e,
        })
    }

    /// Image and tabular tokens joined along the token axis, `[b, t_img + t_tab, e]`.
    pub fn fused_tokens<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, tab_tokens: Var) -> Result<(Var, Var)> {
        let img = self.tokenizer.forward(g, store, v_i)?;
        let st = g.shape(tab_tokens).to_vec();
        if st.len() != 3 || st[2] != self.embed {
            return Err(Error::Config(format!(
                "tabular tokens {st:?} do not match projected width {}",
                self.embed
            )));
        }
        check_width(g, "concat_transformer", img, tab_tokens)?;
        Ok((img, g.concat(&[img, tab_tokens], 1)?))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, tab_tokens: Var) -> Result<FusionOutput> {
        let (img, joint) = self.fused_tokens(g, store, v_i, tab_tokens)?;
        Ok(FusionOutput {
            v_i_prime: img,
            v_t_prime: tab_tokens,
            logits: self.head.forward(g, store, joint)?,
        })
    }
}

// ----- TokenFusion --------------------------------------------------------------

/// Per-modality token reweighting `v + MLP((SA(v) ⊙ σ(f(v))) + v)`.
#[derive(Clone, Debug)]
pub struct TokenBranch {
    pub attn: Attention,
    pub score: Linear,
    pub mlp: Mlp,
}

impl TokenBranch {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, e: usize, heads: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(TokenBranch {
            attn: Attention::new(&mut pb, "attn", e, heads)?,
            score: Linear::new(&mut pb, "score", e, 1)?,
            mlp: Mlp::new(&mut pb, "mlp", e, 2 * e, e)?,
        })
    }

    /// Per-token scores `σ(f(v))`, `[b, t, 1]`.
    pub fn scores<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v: Var) -> Result<Var> {
        let s = self.score.forward(g, store, v)?;
        Ok(g.sigmoid(s)?)
    }

    /// `gate` overrides the learned scores with a constant.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v: Var, gate: Option<f64>) -> Result<Var> {
        let sa = self.attn.forward(g, store, v, v)?;
        let s = match gate {
            Some(c) => {
                let sh = g.shape(v).to_vec();
                g.constant(Tensor::full(vec![sh[0], sh[1], 1], T::c(c))?)
            }
            None => self.scores(g, store, v)?,
        };
        let weighted = g.mul(sa, s)?;
        let inner = g.add(weighted, v)?;
        let m = self.mlp.forward(g, store, inner)?;
        Ok(g.add(v, m)?)
    }
}

#[derive(Clone, Debug)]
pub struct TokenFusion {
    pub tokenizer: ImageTokenizer,
    pub img: TokenBranch,
    pub tab: TokenBranch,
    pub head: ClassTokenHead,
}

impl TokenFusion {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, c: usize, e: usize, depth: usize, heads: usize, classes: usize) -> Result<Self> {
        Ok(TokenFusion {
            tokenizer: ImageTokenizer::new(pb, c, e)?,
            img: TokenBranch::new(pb, "img", e, heads)?,
            tab: TokenBranch::new(pb, "tab", e, heads)?,
            head: ClassTokenHead::new(pb, "head", e, depth, heads, classes)?,
        })
    }

    pub fn fuse_tokens<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        v_i: Var,
        v_t: Var,
        gate: Option<f64>,
    ) -> Result<FusionOutput> {
        check_width(g, "token_fusion", v_i, v_t)?;
        let vi = self.img.forward(g, store, v_i, gate)?;
        let vt = self.tab.forward(g, store, v_t, gate)?;
        let joint = g.concat(&[vi, vt], 1)?;
        Ok(FusionOutput {
            v_i_prime: vi,
            v_t_prime: vt,
            logits: self.head.forward(g, store, joint)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, tab_tokens: Var) -> Result<FusionOutput> {
        let img = self.tokenizer.forward(g, store, v_i)?;
        self.fuse_tokens(g, store, img, tab_tokens, None)
    }
}

// ----- cross-modal attention ------------------------------------------------------

/// `v_i' = MA(Q_t(v_t), K_i(v_i), V_i(v_i))` and the mirror image for `v_t'`.
#[derive(Clone, Debug)]
pub struct CrossModalAttention {
    pub tokenizer: ImageTokenizer,
    /// Queries from tabular tokens, keys/values from image tokens.
    pub to_img: Attention,
    /// Queries from image tokens, keys/values from tabular tokens.
    pub to_tab: Attention,
    pub head: ClassTokenHead,
}

impl CrossModalAttention {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, c: usize, e: usize, depth: usize, heads: usize, classes: usize) -> Result<Self> {
        Ok(CrossModalAttention {
            tokenizer: ImageTokenizer::new(pb, c, e)?,
            to_img: Attention::new(pb, "to_img", e, heads)?,
            to_tab: Attention::new(pb, "to_tab", e, heads)?,
            head: ClassTokenHead::new(pb, "head", e, depth, heads, classes)?,
        })
    }

    pub fn attend<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, v_t: Var) -> Result<(Var, Var)> {
        check_width(g, "cross_modal_attention", v_i, v_t)?;
        let vi = self.to_img.forward(g, store, v_t, v_i)?;
        let vt = self.to_tab.forward(g, store, v_i, v_t)?;
        Ok((vi, vt))
    }

    pub fn fuse_tokens<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, v_t: Var) -> Result<FusionOutput> {
        let (vi, vt) = self.attend(g, store, v_i, v_t)?;
        let joint = g.concat(&[vi, vt], 1)?;
        Ok(FusionOutput {
            v_i_prime: vi,
            v_t_prime: vt,
            logits: self.head.forward(g, store, joint)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v_i: Var, tab_tokens: Var) -> Result<FusionOutput> {
        let img = self.tokenizer.forward(g, store, v_i)?;
        self.fuse_tokens(g, store, img, tab_tokens)
    }
}

// ----- dispatch ------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Fusion {
    Mmtm(Mmtm),
    ConcatLinear(ConcatLinear),
    ConcatTransformer(ConcatTransformer),
    TokenFusion(TokenFusion),
    CrossModalAttention(CrossModalAttention),
}

impl Fusion {
    pub fn new<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        kind: FusionKind,
        cfg: &FusionParams,
        image: &ImageEncoderConfig,
        tabular: &TabularConfig,
        classes: usize,
    ) -> Result<Self> {
        let feat = image.feature_shape()?;
        let (c, e) = (feat[0], tabular.embed);
        Ok(match kind {
            FusionKind::Mmtm => Fusion::Mmtm(Mmtm::new(pb, c, e, cfg.hidden, classes)?),
            FusionKind::ConcatLinear => {
                let n_img = feat.iter().product();
                Fusion::ConcatLinear(ConcatLinear::new(pb, n_img, e, cfg.hidden, classes)?)
            }
            FusionKind::ConcatTransformer => {
                Fusion::ConcatTransformer(ConcatTransformer::new(pb, c, e, cfg.depth, cfg.heads, classes)?)
            }
            FusionKind::TokenFusion => Fusion::TokenFusion(TokenFusion::new(pb, c, e, cfg.depth, cfg.heads, classes)?),
            FusionKind::CrossModalAttention => {
                Fusion::CrossModalAttention(CrossModalAttention::new(pb, c, e, cfg.depth, cfg.heads, classes)?)
            }
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            Fusion::Mmtm(_) => FusionKind::Mmtm,
            Fusion::ConcatLinear(_) => FusionKind::ConcatLinear,
            Fusion::ConcatTransformer(_) => FusionKind::ConcatTransformer,
            Fusion::TokenFusion(_) => FusionKind::TokenFusion,
            Fusion::CrossModalAttention(_) => FusionKind::CrossModalAttention,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, inp: &FusionInputs) -> Result<FusionOutput> {
        match self {
            Fusion::Mmtm(m) => m.forward(g, store, inp.v_i, inp.tab_vec),
            Fusion::ConcatLinear(m) => {
                let flat = flatten(g, inp.v_i)?;
                m.forward(g, store, flat, Some(inp.tab_vec))
            }
            Fusion::ConcatTransformer(m) => m.forward(g, store, inp.v_i, inp.tab_tokens),
            Fusion::TokenFusion(m) => m.forward(g, store, inp.v_i, inp.tab_tokens),
            Fusion::CrossModalAttention(m) => m.forward(g, store, inp.v_i, inp.tab_tokens),
        }
    }
}
