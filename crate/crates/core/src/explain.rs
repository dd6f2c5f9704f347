//! Gradient-weighted activation maps and exact Shapley attribution.

use tnf_autograd::{Graph, Real, Tensor};

use crate::error::{Error, Result};
use crate::metrics::decide;
use crate::model::{Branch, TnfModel};

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Non-negative map over the target layer's grid `[h', w', d']`.
    pub values: Tensor<f64>,
    /// `values` resampled to the input grid `[h, w, d]`.
    pub upsampled: Tensor<f64>,
    /// Pooled gradient per channel of the target layer.
    pub weights: Vec<f64>,
    pub branch: Branch,
    pub class: usize,
    pub layer: usize,
}

/// `ReLU(Σ_k w_k·A_k)` for `activation: [c, h, w, d]` (flattened) and
/// per-channel weights.
pub fn weighted_map(activation: &[f64], weights: &[f64], spatial: usize) -> Vec<f64> {
    let mut out = vec![0.0; spatial];
    for (k, &w) in weights.iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(&activation[k * spatial..(k + 1) * spatial]) {
            *o += w * a;
        }
    }
    out.iter().map(|&v| v.max(0.0)).collect()
}

/// Channel means of `grad: [c, spatial]`.
pub fn pooled_weights(grad: &[f64], channels: usize) -> Vec<f64> {
    let spatial = grad.len() / channels;
    grad.chunks(spatial).map(|c| c.iter().sum::<f64>() / spatial as f64).collect()
}

/// Linear interpolation taps with half-pixel centers: for each output index,
/// `(lo, hi, weight of hi)`.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Trilinear resampling of a `[h, w, d]` grid.
pub fn trilinear_upsample(values: &[f64], from: [usize; 3], to: [usize; 3]) -> Result<Vec<f64>> {
    if from.contains(&0) || to.contains(&0) || values.len() != from.iter().product::<usize>() {
        return Err(Error::Validation(format!("cannot resample {from:?} to {to:?}")));
    }
    let (ty, tx, tz) = (taps(from[0], to[0]), taps(from[1], to[1]), taps(from[2], to[2]));
    let at = |y: usize, x: usize, z: usize| values[(y * from[1] + x) * from[2] + z];
    let mut out = Vec::with_capacity(to.iter().product());
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            for &(z0, z1, fz) in &tz {
                let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                let c00 = lerp(at(y0, x0, z0), at(y0, x0, z1), fz);
                let c01 = lerp(at(y0, x1, z0), at(y0, x1, z1), fz);
                let c10 = lerp(at(y1, x0, z0), at(y1, x0, z1), fz);
                let c11 = lerp(at(y1, x1, z0), at(y1, x1, z1), fz);
                out.push(lerp(lerp(c00, c01, fx), lerp(c10, c11, fx), fy));
            }
        }
    }
    Ok(out)
}

/// Grad-CAM of the logit `class` of `branch` with respect to image conv
/// stage `layer` (default: the last). `image` is `[1, c, h, w, d]`;
/// `tabular` (`[1, n_attr]`) is required for the fusion branch.
pub fn grad_cam_3d<T: Real>(
    model: &TnfModel<T>,
    image: &Tensor<T>,
    tabular: Option<&Tensor<T>>,
    branch: Branch,
    class: usize,
    layer: Option<usize>,
) -> Result<Heatmap> {
    if image.shape().first() != Some(&1) {
        return Err(Error::Validation(format!("grad-cam takes one sample, got {:?}", image.shape())));
    }
    if class >= model.classes() {
        return Err(Error::Validation(format!("class {class} out of {} classes", model.classes())));
    }
    let n_stages = model.config.image.stages.len();
    let layer = layer.unwrap_or(n_stages - 1);
    if layer >= n_stages {
        return Err(Error::Config(format!("layer {layer} does not exist ({n_stages} conv stages)")));
    }
    let mut g = Graph::new();
    let out = model.forward(&mut g, Some(image), tabular)?;
    let logits = out
        .head(branch)
        .ok_or_else(|| Error::Graph(format!("{} branch was not computed for these inputs", branch.name())))?
        .logits;
    let target = g.slice(logits, 1, class, 1)?;
    let target = g.sum(target)?;
    g.backward(target)?;
    let act = out.image.as_ref().expect("image input given").stages[layer];
    if !g.is_reached(act) {
        return Err(Error::Graph(format!(
            "conv stage {layer} is not on the path to the {} output",
            branch.name()
        )));
    }
    let shape = g.shape(act).to_vec();
    let grad: Vec<f64> = g.grad(act).expect("reached").iter().map(|v| v.f64()).collect();
    let a = g.value(act).to_f64_vec();
    let weights = pooled_weights(&grad, shape[1]);
    let grid = [shape[2], shape[3], shape[4]];
    let values = weighted_map(&a, &weights, grid.iter().product());
    let inp = &model.config.image.input;
    let to = [inp[1], inp[2], inp[3]];
    let up = trilinear_upsample(&values, grid, to)?;
    Ok(Heatmap {
        values: Tensor::new(grid.to_vec(), values)?,
        upsampled: Tensor::new(to.to_vec(), up)?,
        weights,
        branch,
        class,
        layer,
    })
}

pub const SHAPLEY_MAX_ATTRS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionReport {
    pub phi: Vec<f64>,
    /// All attribute ids by decreasing |φ| (ties by lower id).
    pub ranking: Vec<usize>,
    pub value_empty: f64,
    pub value_full: f64,
    pub value_fn: String,
}

impl AttributionReport {
    pub fn csv(&self) -> String {
        let mut rank = vec![0; self.phi.len()];
        for (r, &id) in self.ranking.iter().enumerate() {
            rank[id] = r + 1;
        }
        let mut s = String::from("id,phi,rank\n");
        for (i, p) in self.phi.iter().enumerate() {
            s.push_str(&format!("{i},{p:.12},{}\n", rank[i]));
        }
        s
    }
}

fn rank_by_magnitude(phi: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..phi.len()).collect();
    ids.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
    ids
}

/// Exact Shapley values of a set function over `n ≤ 16` attributes. The
/// function receives a membership mask (bit `i` set means attribute `i` is
/// in the coalition) and is called once per subset.
pub fn shapley_importance(
    n: usize,
    mut value_fn: impl FnMut(u32) -> Result<f64>,
    description: &str,
) -> Result<AttributionReport> {
    if n == 0 {
        return Err(Error::Validation("no attributes to attribute".into()));
    }
    if n > SHAPLEY_MAX_ATTRS {
        return Err(Error::Validation(format!(
            "exact Shapley enumeration is capped at {SHAPLEY_MAX_ATTRS} attributes, got {n}; \
             select a subset of attributes first"
        )));
    }
    let full = (1u32 << n) - 1;
    let values = (0..=full).map(&mut value_fn).collect::<Result<Vec<f64>>>()?;
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for s in 0..=full {
            if s & bit == 0 {
                *p += weight[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]);
            }
        }
    }
    Ok(AttributionReport {
        ranking: rank_by_magnitude(&phi),
        phi,
        value_empty: values[0],
        value_full: values[full as usize],
        value_fn: description.to_string(),
    })
}

/// Ids of the `k` largest |φ|.
pub fn select_top_k(report: &AttributionReport, k: usize) -> Result<Vec<usize>> {
    if k > report.phi.len() {
        return Err(Error::Validation(format!(
            "k = {k} exceeds the {} attributes",
            report.phi.len()
        )));
    }
    Ok(report.ranking[..k].to_vec())
}

/// Tabular-branch accuracy on `rows` when attributes outside the coalition
/// are replaced by `means`.
pub fn masked_tabular_accuracy<T: Real>(
    model: &TnfModel<T>,
    rows: &[Vec<f32>],
    labels: &[usize],
    means: &[f64],
    mask: u32,
    theta: f64,
) -> Result<f64> {
    let n = means.len();
    if rows.is_empty() || rows.len() != labels.len() || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("tabular rows, labels and means disagree".into()));
    }
    let data: Vec<T> = rows
        .iter()
        .flat_map(|r| {
            r.iter()
                .enumerate()
                .map(move |(j, &v)| T::c(if mask & (1 << j) != 0 { v as f64 } else { means[j] }))
        })
        .collect();
    let x = Tensor::new(vec![rows.len(), n], data)?;
    let p = model.predict(None, Some(&x))?;
    let probs = p.tabular.expect("tabular branch");
    let c = model.classes();
    let mut correct = 0usize;
    for (row, &y) in probs.chunks(c).zip(labels) {
        if decide(row, theta)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}
