//! Tri-branch, label-masked and contrastive objectives. Every classification
//! term takes branch logits; the likelihoods are their softmax.

use serde::{Deserialize, Serialize};
use tnf_autograd::{Graph, Real, Reduction, Tensor, Var};

use crate::error::{Error, Result};

/// Default contrastive temperature.
pub const CLIP_TAU: f64 = 0.9995;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 0.8,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = LossWeights { lambda1, lambda2, lambda3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {all:?}")));
        }
        if all.iter().all(|&l| l == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Sum of `λ·term` over terms whose weight is non-zero. Zero-weight terms are
/// left out of the graph entirely.
fn weighted_sum<T: Real>(g: &mut Graph<T>, terms: &[(f64, Option<Var>)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, term) in terms {
        let Some(term) = term else { continue };
        if w == 0.0 {
            continue;
        }
        let t = g.scale(term, T::c(w))?;
        acc = Some(match acc {
            Some(a) => g.add(a, t)?,
            None => t,
        });
    }
    acc.ok_or_else(|| Error::Contract("loss has no active term".into()))
}

fn ce<T: Real>(g: &mut Graph<T>, w: f64, logits: Var, labels: &[usize]) -> Result<Option<Var>> {
    if w == 0.0 {
        return Ok(None);
    }
    Ok(Some(g.cross_entropy(logits, labels, Reduction::Mean)?))
}

/// `λ1·CE(z_i, y_i) + λ2·CE(z_t, y_t) + λ3·CE(z_f, y_f)`, batch means.
#[allow(clippy::too_many_arguments)]
pub fn tnf_loss<T: Real>(
    g: &mut Graph<T>,
    z_i: Var,
    z_t: Var,
    z_f: Var,
    y_i: &[usize],
    y_t: &[usize],
    y_f: &[usize],
    w: &LossWeights,
) -> Result<Var> {
    let terms = [
        (w.lambda1, ce(g, w.lambda1, z_i, y_i)?),
        (w.lambda2, ce(g, w.lambda2, z_t, y_t)?),
        (w.lambda3, ce(g, w.lambda3, z_f, y_f)?),
    ];
    weighted_sum(g, &terms)
}

/// Per-sample loss with the fusion term kept only where `y_i == y_t`
/// (fusion label `y_i`), averaged over the full batch.
pub fn label_masked_loss<T: Real>(
    g: &mut Graph<T>,
    z_i: Var,
    z_t: Var,
    z_f: Var,
    y_i: &[usize],
    y_t: &[usize],
    w: &LossWeights,
) -> Result<Var> {
    let n = g.shape(z_f)[0];
    if y_i.len() != n || y_t.len() != n {
        return Err(Error::Validation(format!(
            "label counts {} / {} for a batch of {n}",
            y_i.len(),
            y_t.len()
        )));
    }
    let keep: Vec<usize> = (0..n).filter(|&k| y_i[k] == y_t[k]).collect();
    let fusion = if keep.is_empty() || w.lambda3 == 0.0 {
        None
    } else {
        let rows = g.select_rows(z_f, &keep)?;
        let labels: Vec<usize> = keep.iter().map(|&k| y_i[k]).collect();
        let s = g.cross_entropy(rows, &labels, Reduction::Sum)?;
        Some(g.scale(s, T::c(1.0 / n as f64))?)
    };
    let terms = [
        (w.lambda1, ce(g, w.lambda1, z_i, y_i)?),
        (w.lambda2, ce(g, w.lambda2, z_t, y_t)?),
        (w.lambda3, fusion),
    ];
    if terms.iter().all(|(wt, t)| *wt == 0.0 || t.is_none()) {
        // Only the masked fusion term was active and every sample was masked.
        let zero = g.constant(Tensor::scalar(T::zero()));
        return Ok(zero);
    }
    weighted_sum(g, &terms)
}

/// `−Σ_j log[exp(cos(a_j, b_j)/τ) / Σ_{k≠j} exp(cos(a_j, b_k)/τ)]`.
/// The positive pair is excluded from the denominator.
pub fn clip_contrastive<T: Real>(g: &mut Graph<T>, a: Var, b: Var, tau: f64) -> Result<Var> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa.len() != 2 || sa != sb {
        return Err(Error::Validation(format!("contrastive features {sa:?} and {sb:?} differ")));
    }
    let n = sa[0];
    if n < 2 {
        return Err(Error::Contract(format!("contrastive loss needs a batch of at least 2, got {n}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let na = g.l2_normalize(a)?;
    let nb = g.l2_normalize(b)?;
    let nbt = g.transpose(nb, 0, 1)?;
    let cos = g.matmul(na, nbt)?;
    let s = g.scale(cos, T::c(1.0 / tau))?;
    let eye = g.constant(Tensor::eye(n)?);
    let diag = g.mul(s, eye)?;
    let pos = g.sum(diag)?;
    let off: Vec<bool> = (0..n * n).map(|k| k / n != k % n).collect();
    let lse = g.logsumexp_masked(s, &off)?;
    let neg = g.sum(lse)?;
    Ok(g.sub(neg, pos)?)
}

/// `λ1·CE(z_i, y_i) + λ2·CE(z_t, y_t) + λ3·(½L_p(f_i, f_t) + ½L_p(f_t, f_i))`.
#[allow(clippy::too_many_arguments)]
pub fn clip_finetune_loss<T: Real>(
    g: &mut Graph<T>,
    z_i: Var,
    z_t: Var,
    f_i: Var,
    f_t: Var,
    y_i: &[usize],
    y_t: &[usize],
    w: &LossWeights,
    tau: f64,
) -> Result<Var> {
    let contrast = if w.lambda3 == 0.0 {
        None
    } else {
        let a = clip_contrastive(g, f_i, f_t, tau)?;
        let b = clip_contrastive(g, f_t, f_i, tau)?;
        let s = g.add(a, b)?;
        Some(g.scale(s, T::c(0.5))?)
    };
    let terms = [
        (w.lambda1, ce(g, w.lambda1, z_i, y_i)?),
        (w.lambda2, ce(g, w.lambda2, z_t, y_t)?),
        (w.lambda3, contrast),
    ];
    weighted_sum(g, &terms)
}
