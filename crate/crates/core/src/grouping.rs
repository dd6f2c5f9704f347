//! Slice grouping of volumes and maximum-likelihood group selection.

use tnf_autograd::{Real, Tensor};

use crate::error::{Error, Result};
use crate::model::TnfModel;

/// Radiodensity of air, the default padding for a short final group.
pub const AIR: f64 = -1000.0;
pub const DEFAULT_GROUP_SIZE: usize = 24;
/// A group is labeled positive when at least this many slices are.
pub const MIN_POSITIVE_SLICES: usize = 4;

#[derive(Clone, Debug)]
pub struct VolumeGrouping<T: Real> {
    pub group_size: usize,
    pub pad_value: f64,
    /// Real slice count `K` of the source volume.
    pub slices: usize,
    /// `N = ceil(K / G)` slabs of shape `[c, h, w, G]`.
    pub groups: Vec<Tensor<T>>,
}

impl<T: Real> VolumeGrouping<T> {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Number of real (unpadded) slices in group `j`.
    pub fn real_slices(&self, j: usize) -> usize {
        self.slices.saturating_sub(j * self.group_size).min(self.group_size)
    }
}

pub fn group_count(slices: usize, group_size: usize) -> usize {
    slices.div_ceil(group_size)
}

/// Split `[c, h, w, K]` along the slice axis into groups of `G`, padding the
/// last one with `pad_value`.
pub fn group_volume<T: Real>(volume: &Tensor<T>, group_size: usize, pad_value: f64) -> Result<VolumeGrouping<T>> {
    let s = volume.shape();
    if s.len() != 4 {
        return Err(Error::Validation(format!("volume must be [c, h, w, K], got {s:?}")));
    }
    if group_size == 0 {
        return Err(Error::Config("group size must be positive".into()));
    }
    let k = s[3];
    if k == 0 {
        return Err(Error::Validation("volume has no slices".into()));
    }
    let lines = s[0] * s[1] * s[2];
    let n = group_count(k, group_size);
    let src = volume.data();
    let pad = T::c(pad_value);
    let groups = (0..n)
        .map(|j| {
            let mut data = Vec::with_capacity(lines * group_size);
            for line in src.chunks(k) {
                data.extend((j * group_size..(j + 1) * group_size).map(|z| line.get(z).copied().unwrap_or(pad)));
            }
            Tensor::new(vec![s[0], s[1], s[2], group_size], data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VolumeGrouping {
        group_size,
        pad_value,
        slices: k,
        groups,
    })
}

/// Group labels from per-slice labels: positive iff at least `min_positive`
/// real slices in the group are positive.
pub fn group_labels(slice_labels: &[u8], group_size: usize, min_positive: usize) -> Vec<u8> {
    slice_labels
        .chunks(group_size)
        .map(|c| u8::from(c.iter().filter(|&&l| l > 0).count() >= min_positive))
        .collect()
}

/// Index of the largest likelihood; ties go to the lowest index.
pub fn select_max_likelihood(likelihoods: &[f64]) -> Result<usize> {
    if likelihoods.is_empty() {
        return Err(Error::Contract("cannot select from an empty group list".into()));
    }
    let mut best = 0;
    for (j, &l) in likelihoods.iter().enumerate().skip(1) {
        if l > likelihoods[best] {
            best = j;
        }
    }
    Ok(best)
}

/// Positive-class likelihood of each row of `[b, C]` probabilities: the
/// mass on every class other than 0.
pub fn positive_likelihood(probs: &[f64], classes: usize) -> Vec<f64> {
    probs.chunks(classes).map(|r| 1.0 - r[0]).collect()
}

/// Stack `[c, h, w, d]` tensors into `[b, c, h, w, d]`.
pub fn stack<T: Real>(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::Contract("cannot stack an empty list".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != shape.as_slice() {
            return Err(Error::Validation(format!("cannot stack {:?} with {shape:?}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    let mut out = vec![items.len()];
    out.extend(shape);
    Ok(Tensor::new(out, data)?)
}

/// Positive-class likelihood of every group under the model's image branch.
pub fn score_groups<T: Real>(model: &TnfModel<T>, groups: &[Tensor<T>]) -> Result<Vec<f64>> {
    let refs: Vec<&Tensor<T>> = groups.iter().collect();
    let batch = stack(&refs)?;
    let p = model.predict(Some(&batch), None)?;
    Ok(positive_likelihood(p.image.as_deref().expect("image branch"), model.classes()))
}

/// Score every group with the (frozen) image branch and return the most
/// positive one.
pub fn max_likelihood_select<T: Real>(model: &TnfModel<T>, grouping: &VolumeGrouping<T>) -> Result<(usize, Tensor<T>)> {
    if grouping.is_empty() {
        return Err(Error::Contract("cannot select from an empty group list".into()));
    }
    let scores = score_groups(model, &grouping.groups)?;
    let j = select_max_likelihood(&scores)?;
    Ok((j, grouping.groups[j].clone()))
}
