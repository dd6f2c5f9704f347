//! The three-output model: image branch, tabular branch and fusion branch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnf_autograd::{Graph, ParamStore, Real, Tensor, Var};

use crate::blocks::{Linear, ParamBuilder};
use crate::config::ModelConfig;
use crate::encoders::{Head, ImageEncoder, ImageOutput, TabularEncoder, TabularOutput};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionInputs, FusionOutput};

pub const IMAGE_PREFIX: &str = "image.";
pub const TABULAR_PREFIX: &str = "tabular.";
pub const FUSION_PREFIX: &str = "fusion.";
pub const CLIP_PREFIX: &str = "clip.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Image,
    Tabular,
    Fusion,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Image, Branch::Tabular, Branch::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Image => "image",
            Branch::Tabular => "tabular",
            Branch::Fusion => "fusion",
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Branch::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown branch {s:?}")))
    }
}

/// Everything one forward pass produced. Branches whose inputs were absent
/// are `None`; the fusion branch needs both inputs.
#[derive(Clone, Debug)]
pub struct Forward {
    pub image: Option<ImageOutput>,
    pub tabular: Option<TabularOutput>,
    pub fusion: Option<(FusionOutput, Head)>,
}

impl Forward {
    pub fn head(&self, branch: Branch) -> Option<Head> {
        match branch {
            Branch::Image => self.image.as_ref().map(|o| o.head),
            Branch::Tabular => self.tabular.as_ref().map(|o| o.head),
            Branch::Fusion => self.fusion.as_ref().map(|o| o.1),
        }
    }

    fn require(&self, branch: Branch) -> Result<Head> {
        self.head(branch)
            .ok_or_else(|| Error::Contract(format!("{} branch was not computed", branch.name())))
    }

    pub fn logits(&self, branch: Branch) -> Result<Var> {
        Ok(self.require(branch)?.logits)
    }

    pub fn probs(&self, branch: Branch) -> Result<Var> {
        Ok(self.require(branch)?.probs)
    }
}

/// Per-sample branch probabilities, row-major `[b, C]` each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BranchProbs {
    pub image: Option<Vec<f64>>,
    pub tabular: Option<Vec<f64>>,
    pub fusion: Option<Vec<f64>>,
}

impl BranchProbs {
    pub fn get(&self, branch: Branch) -> Option<&[f64]> {
        match branch {
            Branch::Image => self.image.as_deref(),
            Branch::Tabular => self.tabular.as_deref(),
            Branch::Fusion => self.fusion.as_deref(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TnfModel<T: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub image: ImageEncoder,
    pub tabular: TabularEncoder,
    pub fusion: Fusion,
    pub clip_image: Linear,
    pub clip_tabular: Linear,
}

impl<T: Real> TnfModel<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (image, tabular, fusion) = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng, "image");
            let image = ImageEncoder::new(&mut pb, &config.image)?;
            let mut pb = ParamBuilder::new(&mut store, &mut rng, "tabular");
            let tabular = TabularEncoder::new(&mut pb, &config.tabular)?;
            let mut pb = ParamBuilder::new(&mut store, &mut rng, "fusion");
            let fusion = Fusion::new(&mut pb, config.fusion, &config.fusion_params, &config.image, &config.tabular, config.classes)?;
            (image, tabular, fusion)
        };
        let c_feat = config.image.feature_shape()?[0];
        let mut pb = ParamBuilder::new(&mut store, &mut rng, "clip");
        let clip_image = Linear::new(&mut pb, "image", c_feat, config.clip_width)?;
        let clip_tabular = Linear::new(&mut pb, "tabular", config.tabular.embed, config.clip_width)?;
        Ok(TnfModel {
            config: config.clone(),
            store,
            image,
            tabular,
            fusion,
            clip_image,
            clip_tabular,
        })
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// Forward pass on graph leaves already inserted into `g`.
    pub fn forward_vars(&self, g: &mut Graph<T>, image: Option<Var>, tabular: Option<Var>) -> Result<Forward> {
        if image.is_none() && tabular.is_none() {
            return Err(Error::Contract("forward needs at least one modality".into()));
        }
        let img = image.map(|x| self.image.forward(g, &self.store, x)).transpose()?;
        let tab = tabular.map(|x| self.tabular.forward(g, &self.store, x)).transpose()?;
        if let (Some(i), Some(t)) = (&img, &tab) {
            if g.shape(i.features)[0] != g.shape(t.tokens)[0] {
                return Err(Error::Validation(format!(
                    "batch sizes differ: image {}, tabular {}",
                    g.shape(i.features)[0],
                    g.shape(t.tokens)[0]
                )));
            }
        }
        let fusion = match (&img, &tab) {
            (Some(i), Some(t)) => {
                let inputs = FusionInputs {
                    v_i: i.features,
                    tab_tokens: t.tokens,
                    tab_vec: t.summary,
                };
                let out = self.fusion.forward(g, &self.store, &inputs)?;
                let head = Head::from_logits(g, out.logits)?;
                Some((out, head))
            }
            _ => None,
        };
        Ok(Forward {
            image: img,
            tabular: tab,
            fusion,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        image: Option<&Tensor<T>>,
        tabular: Option<&Tensor<T>>,
    ) -> Result<Forward> {
        let i = image.map(|t| g.constant(t.clone()));
        let t = tabular.map(|t| g.constant(t.clone()));
        self.forward_vars(g, i, t)
    }

    /// Branch probabilities without keeping the graph.
    pub fn predict(&self, image: Option<&Tensor<T>>, tabular: Option<&Tensor<T>>) -> Result<BranchProbs> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, image, tabular)?;
        let get = |b| out.head(b).map(|h| g.value(h.probs).to_f64_vec());
        Ok(BranchProbs {
            image: get(Branch::Image),
            tabular: get(Branch::Tabular),
            fusion: get(Branch::Fusion),
        })
    }

    /// Contrastive projections `(f_i, f_t)`, each `[b, clip_width]`.
    pub fn clip_features(&self, g: &mut Graph<T>, out: &Forward) -> Result<(Var, Var)> {
        let (Some(i), Some(t)) = (&out.image, &out.tabular) else {
            return Err(Error::Contract("contrastive features need both modalities".into()));
        };
        let fi = self.clip_image.forward(g, &self.store, i.pooled)?;
        let ft = self.clip_tabular.forward(g, &self.store, t.final_summary)?;
        Ok((fi, ft))
    }

    pub fn param_names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.store.iter().map(|(_, n, _)| n).filter(move |n| n.starts_with(prefix))
    }

    /// Copy every parameter of `other` whose name starts with `prefix`.
    pub fn copy_params_from(&mut self, other: &TnfModel<T>, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (_, name, t) in other.store.iter() {
            if !name.starts_with(prefix) {
                continue;
            }
            let mine = self
                .store
                .id(name)
                .ok_or_else(|| Error::Config(format!("parameter {name} missing from target model")))?;
            self.store.assign(mine, t)?;
            n += 1;
        }
        Ok(n)
    }
}
