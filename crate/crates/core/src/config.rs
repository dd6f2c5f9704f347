//! Architecture configuration for the encoders, fusion block and heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub channels: usize,
    #[serde(default = "three")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub pad: usize,
    /// Average-pool window after the activation; 1 disables pooling.
    #[serde(default = "one")]
    pub pool: usize,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageEncoderConfig {
    /// `(c, h, w, d)`; the last axis runs across slices.
    pub input: [usize; 4],
    pub stages: Vec<ConvStage>,
    pub classes: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        ImageEncoderConfig {
            input: [1, 8, 8, 8],
            stages: vec![
                ConvStage {
                    channels: 8,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    pool: 2,
                },
                ConvStage {
                    channels: 16,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    pool: 1,
                },
            ],
            classes: 2,
        }
    }
}

impl ImageEncoderConfig {
    /// Output `(c, h, w, d)` of every stage, in order.
    pub fn stage_shapes(&self) -> Result<Vec<[usize; 4]>> {
        if self.stages.is_empty() {
            return Err(Error::Config("image encoder needs at least one conv stage".into()));
        }
        if self.input.contains(&0) {
            return Err(Error::Config(format!("image input shape {:?} has a zero extent", self.input)));
        }
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.kernel == 0 || s.stride == 0 || s.pool == 0 {
                return Err(Error::Config(format!("image stage {i}: zero channels, kernel, stride or pool")));
            }
            let mut next = [s.channels, 0, 0, 0];
            for a in 1..4 {
                let padded = cur[a] + 2 * s.pad;
                if padded < s.kernel {
                    return Err(Error::Config(format!(
                        "image stage {i}: kernel {} exceeds padded extent {padded}",
                        s.kernel
                    )));
                }
                let conv = (padded - s.kernel) / s.stride + 1;
                if conv < s.pool {
                    return Err(Error::Config(format!(
                        "image stage {i}: pool {} exceeds extent {conv}",
                        s.pool
                    )));
                }
                next[a] = conv / s.pool;
            }
            out.push(next);
            cur = next;
        }
        Ok(out)
    }

    /// `(c_feat, h', w', d')` of the final feature map.
    pub fn feature_shape(&self) -> Result<[usize; 4]> {
        Ok(*self.stage_shapes()?.last().expect("non-empty"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularConfig {
    pub n_attr: usize,
    pub embed: usize,
    pub depth: usize,
    pub heads: usize,
    pub classes: usize,
    pub class_token: bool,
    /// Number of blocks whose output forms the token features handed to
    /// the fusion block.
    pub fusion_layer: usize,
}

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig {
            n_attr: 12,
            embed: 16,
            depth: 2,
            heads: 2,
            classes: 2,
            class_token: true,
            fusion_layer: 1,
        }
    }
}

impl TabularConfig {
    pub fn tokens(&self) -> usize {
        self.n_attr + usize::from(self.class_token)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_attr == 0 {
            return Err(Error::Config("tabular encoder needs at least one attribute".into()));
        }
        if self.heads == 0 || self.embed == 0 || !self.embed.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "tabular embed width {} is not divisible by {} heads",
                self.embed, self.heads
            )));
        }
        if self.depth == 0 || self.fusion_layer == 0 || self.fusion_layer > self.depth {
            return Err(Error::Config(format!(
                "tabular fusion_layer {} must lie in 1..={}",
                self.fusion_layer, self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Mmtm,
    ConcatLinear,
    ConcatTransformer,
    TokenFusion,
    CrossModalAttention,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Mmtm,
        FusionKind::ConcatLinear,
        FusionKind::ConcatTransformer,
        FusionKind::TokenFusion,
        FusionKind::CrossModalAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Mmtm => "mmtm",
            FusionKind::ConcatLinear => "concat_linear",
            FusionKind::ConcatTransformer => "concat_transformer",
            FusionKind::TokenFusion => "token_fusion",
            FusionKind::CrossModalAttention => "cross_modal_attention",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionParams {
    /// Width of the shared squeeze layer (MMTM) or hidden layer (concat-linear).
    pub hidden: usize,
    /// Transformer blocks in the token-based fusion heads.
    pub depth: usize,
    pub heads: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            hidden: 16,
            depth: 2,
            heads: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub fusion: FusionKind,
    pub image: ImageEncoderConfig,
    pub tabular: TabularConfig,
    pub fusion_params: FusionParams,
    /// Width of the image/tabular projections used by the contrastive loss.
    #[serde(default = "sixteen")]
    pub clip_width: usize,
    #[serde(default = "two")]
    pub classes: usize,
}

fn sixteen() -> usize {
    16
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fusion: FusionKind::Mmtm,
            image: ImageEncoderConfig::default(),
            tabular: TabularConfig::default(),
            fusion_params: FusionParams::default(),
            clip_width: 16,
            classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.stage_shapes()?;
        self.tabular.validate()?;
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.image.classes != self.classes || self.tabular.classes != self.classes {
            return Err(Error::Config(format!(
                "class counts disagree: model {}, image {}, tabular {}",
                self.classes, self.image.classes, self.tabular.classes
            )));
        }
        let f = &self.fusion_params;
        if f.hidden == 0 || self.clip_width == 0 {
            return Err(Error::Config("fusion hidden and clip widths must be positive".into()));
        }
        if matches!(
            self.fusion,
            FusionKind::ConcatTransformer | FusionKind::TokenFusion | FusionKind::CrossModalAttention
        ) && (f.depth == 0 || f.heads == 0 || !self.tabular.embed.is_multiple_of(f.heads))
        {
            return Err(Error::Config(format!(
                "fusion transformer needs depth ≥ 1 and heads dividing width {}",
                self.tabular.embed
            )));
        }
        Ok(())
    }

    /// Copy with every class count set to `classes`.
    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self.image.classes = classes;
        self.tabular.classes = classes;
        self
    }

    pub fn with_fusion(mut self, kind: FusionKind) -> Self {
        self.fusion = kind;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
