//! Image (3D CNN) and tabular (transformer) encoders, each with its own
//! classification head.

use tnf_autograd::{Graph, ParamId, ParamStore, Real, Var};

use crate::blocks::{prepend_token, token_at, LayerNorm, Linear, ParamBuilder, TransformerBlock};
use crate::config::{ConvStage, ImageEncoderConfig, TabularConfig};
use crate::error::{Error, Result};

/// Likelihood head output.
#[derive(Clone, Copy, Debug)]
pub struct Head {
    pub logits: Var,
    pub probs: Var,
}

impl Head {
    pub fn from_logits<T: Real>(g: &mut Graph<T>, logits: Var) -> Result<Self> {
        let probs = g.softmax(logits)?;
        Ok(Head { logits, probs })
    }
}

#[derive(Clone, Debug)]
pub struct ImageOutput {
    /// Output of every conv stage (after activation and pooling).
    pub stages: Vec<Var>,
    /// Final feature map `v_i: [b, c, h', w', d']`.
    pub features: Var,
    /// Globally pooled features `[b, c]`.
    pub pooled: Var,
    pub head: Head,
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    stage: ConvStage,
}

#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub config: ImageEncoderConfig,
    convs: Vec<ConvLayer>,
    pub head: Linear,
}

/// Global average pool of `[b, c, ...]` down to `[b, c]`.
pub fn global_avg_pool<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    Ok(g.mean_trailing(x, 2)?)
}

impl ImageEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, config: &ImageEncoderConfig) -> Result<Self> {
        let shapes = config.stage_shapes()?;
        let mut c_in = config.input[0];
        let mut convs = Vec::with_capacity(config.stages.len());
        for (i, s) in config.stages.iter().enumerate() {
            let mut pb = pb.scope(&format!("conv{i}"));
            let fan_in = c_in * s.kernel.pow(3);
            convs.push(ConvLayer {
                kernel: pb.uniform("w", &[s.channels, c_in, s.kernel, s.kernel, s.kernel], fan_in)?,
                bias: pb.uniform("b", &[s.channels], fan_in)?,
                stage: s.clone(),
            });
            c_in = s.channels;
        }
        let c_feat = shapes.last().expect("non-empty")[0];
        Ok(ImageEncoder {
            config: config.clone(),
            convs,
            head: Linear::new(pb, "head", c_feat, config.classes)?,
        })
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 || shape[1..] != self.config.input {
            return Err(Error::Config(format!(
                "image input {shape:?} does not match configured [b, {:?}]",
                self.config.input
            )));
        }
        Ok(())
    }

    fn stage<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, i: usize, h: Var) -> Result<Var> {
        let c = &self.convs[i];
        let k = g.param(store, c.kernel);
        let b = g.param(store, c.bias);
        let mut h = g.conv3d(h, k, Some(b), c.stage.stride, c.stage.pad)?;
        h = g.relu(h)?;
        if c.stage.pool > 1 {
            h = g.avg_pool3d(h, [c.stage.pool; 3])?;
        }
        Ok(h)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<ImageOutput> {
        self.check_input(g.shape(x))?;
        let mut h = x;
        let mut stages = Vec::with_capacity(self.convs.len());
        for i in 0..self.convs.len() {
            h = self.stage(g, store, i, h)?;
            stages.push(h);
        }
        self.finish(g, store, stages)
    }

    /// Continue a forward pass from the output `a` of stage `layer`.
    pub fn forward_from<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, layer: usize, a: Var) -> Result<ImageOutput> {
        let mut h = a;
        let mut stages = vec![a];
        for i in layer + 1..self.convs.len() {
            h = self.stage(g, store, i, h)?;
            stages.push(h);
        }
        self.finish(g, store, stages)
    }

    fn finish<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, stages: Vec<Var>) -> Result<ImageOutput> {
        let h = *stages.last().expect("at least one stage");
        let pooled = global_avg_pool(g, h)?;
        let logits = self.head.forward(g, store, pooled)?;
        Ok(ImageOutput {
            stages,
            features: h,
            pooled,
            head: Head::from_logits(g, logits)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TabularOutput {
    /// Token features after `fusion_layer` blocks, `[b, t, e]` (class token
    /// first when present).
    pub tokens: Var,
    /// Summary vector of `tokens`, `[b, e]`: the class token, or the token
    /// mean without one.
    pub summary: Var,
    /// Final-layer summary vector feeding the head, `[b, e]`.
    pub final_summary: Var,
    pub head: Head,
}

#[derive(Clone, Debug)]
pub struct TabularEncoder {
    pub config: TabularConfig,
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub cls: Option<ParamId>,
    pub blocks: Vec<TransformerBlock>,
    pub ln: LayerNorm,
    pub head: Linear,
}

fn token_mean<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let p = g.permute(x, &[0, 2, 1])?;
    Ok(g.mean_trailing(p, 2)?)
}

impl TabularEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, config: &TabularConfig) -> Result<Self> {
        config.validate()?;
        let (n, e) = (config.n_attr, config.embed);
        let cls = if config.class_token {
            Some(pb.uniform("cls", &[1, 1, e], e)?)
        } else {
            None
        };
        Ok(TabularEncoder {
            config: config.clone(),
            embed_w: pb.uniform("embed.w", &[n, e], 1)?,
            embed_b: pb.filled("embed.b", &[n, e], 0.0)?,
            cls,
            blocks: (0..config.depth)
                .map(|i| TransformerBlock::new(pb, &format!("block{i}"), e, config.heads))
                .collect::<Result<_>>()?,
            ln: LayerNorm::new(pb, "ln", e)?,
            head: Linear::new(pb, "head", e, config.classes)?,
        })
    }

    fn summary<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        if self.cls.is_some() {
            token_at(g, x, 0)
        } else {
            token_mean(g, x)
        }
    }

    /// Attribute tokens `x_j · W_j + B_j`, `[b, n_attr, e]`.
    pub fn embed<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 2 || s[1] != self.config.n_attr {
            return Err(Error::Config(format!(
                "tabular input {s:?} does not match {} attributes",
                self.config.n_attr
            )));
        }
        let x3 = g.reshape(x, &[s[0], s[1], 1])?;
        let w = g.param(store, self.embed_w);
        let b = g.param(store, self.embed_b);
        let t = g.mul(x3, w)?;
        Ok(g.add(t, b)?)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<TabularOutput> {
        let mut h = self.embed(g, store, x)?;
        if let Some(cls) = self.cls {
            h = prepend_token(g, store, cls, h)?;
        }
        let mut tokens = h;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(g, store, h)?;
            if i + 1 == self.config.fusion_layer {
                tokens = h;
            }
        }
        let summary = self.summary(g, tokens)?;
        let normed = self.ln.forward(g, store, h)?;
        let final_summary = self.summary(g, normed)?;
        let logits = self.head.forward(g, store, final_summary)?;
        Ok(TabularOutput {
            tokens,
            summary,
            final_summary,
            head: Head::from_logits(g, logits)?,
        })
    }
}
