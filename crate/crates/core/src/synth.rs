//! Synthetic multimodal cases with slice-level labels that can disagree
//! with the volume label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use tnf_autograd::Tensor;

use crate::data::{Case, Splits};
use crate::error::{Error, Result};
use crate::grouping::group_labels;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_cases: usize,
    /// `(c, h, w, K)`.
    pub volume: [usize; 4],
    pub n_attr: usize,
    pub n_informative: usize,
    /// Strength of the link between informative attributes and the label.
    pub rho: f64,
    /// Fraction of slices carrying the lesion in a positive volume.
    pub slice_positive_rate: f64,
    pub classes: usize,
    pub seed: u64,
    /// `(train, val, test)` fractions.
    pub split: [f64; 3],
    pub blob_amplitude: f64,
    pub blob_sigma: f64,
    pub noise_std: f64,
    /// Share of the attribute noise that is common to all informative
    /// attributes of a case.
    pub shared_noise: f64,
    pub group_size: usize,
    pub min_positive: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cases: 600,
            volume: [1, 8, 8, 32],
            n_attr: 12,
            n_informative: 4,
            rho: 0.7,
            slice_positive_rate: 0.1527,
            classes: 2,
            seed: 0,
            split: [0.6, 0.2, 0.2],
            blob_amplitude: 2.0,
            blob_sigma: 1.2,
            noise_std: 1.0,
            shared_noise: 0.8,
            group_size: 8,
            min_positive: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("rho", self.rho)?;
        unit("slice_positive_rate", self.slice_positive_rate)?;
        unit("shared_noise", self.shared_noise)?;
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {:?} must sum to 1", self.split)));
        }
        if self.n_cases == 0 || self.volume.contains(&0) || self.n_attr == 0 {
            return Err(Error::Config("cases, volume extents and attributes must be positive".into()));
        }
        if self.n_informative > self.n_attr {
            return Err(Error::Config(format!(
                "{} informative attributes exceed {}",
                self.n_informative, self.n_attr
            )));
        }
        if !(2..=3).contains(&self.classes) {
            return Err(Error::Config(format!("classes must be 2 or 3, got {}", self.classes)));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group size must be positive".into()));
        }
        if !(self.blob_sigma > 0.0 && self.noise_std >= 0.0 && self.blob_amplitude.is_finite()) {
            return Err(Error::Config("blob sigma must be positive and noise non-negative".into()));
        }
        Ok(())
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let train = (self.n_cases as f64 * self.split[0]).round() as usize;
        let val = ((self.n_cases as f64 * self.split[1]).round() as usize).min(self.n_cases - train);
        [train, val, self.n_cases - train - val]
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Signal of class `c` on the informative attributes, spread over [-1, 1].
fn class_signal(c: usize, classes: usize) -> f64 {
    2.0 * c as f64 / (classes - 1) as f64 - 1.0
}

fn make_case(cfg: &SynthConfig, id: u64, label: usize, rng: &mut ChaCha8Rng) -> Result<Case> {
    let [ch, h, w, k] = cfg.volume;
    let mut data: Vec<f32> = (0..ch * h * w * k).map(|_| (normal(rng) * cfg.noise_std) as f32).collect();
    let mut slice_labels = vec![0u8; k];
    if label > 0 {
        let len = (Binomial::new(k as u64, cfg.slice_positive_rate)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng) as usize)
            .clamp(1, k);
        let start = rng.random_range(0..=k - len);
        let margin = |n: usize| if n > 4 { (1.5, n as f64 - 2.5) } else { (0.0, n as f64 - 1.0) };
        let (ylo, yhi) = margin(h);
        let (xlo, xhi) = margin(w);
        let cy = rng.random_range(ylo..=yhi);
        let cx = rng.random_range(xlo..=xhi);
        let amp = cfg.blob_amplitude * label as f64 / (cfg.classes - 1) as f64;
        let s2 = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
        for z in start..start + len {
            slice_labels[z] = 1;
            for c in 0..ch {
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        data[((c * h + y) * w + x) * k + z] += (amp * (-d2 / s2).exp()) as f32;
                    }
                }
            }
        }
    }
    let s = class_signal(label, cfg.classes);
    let eta = normal(rng);
    let noise_w = (1.0 - cfg.rho * cfg.rho).sqrt();
    let tabular = (0..cfg.n_attr)
        .map(|j| {
            let e = normal(rng);
            let v = if j < cfg.n_informative {
                cfg.rho * s + noise_w * (cfg.shared_noise.sqrt() * eta + (1.0 - cfg.shared_noise).sqrt() * e)
            } else {
                e
            };
            v as f32
        })
        .collect();
    let case = Case {
        id,
        volume: Tensor::new(vec![ch, h, w, k], data)?,
        tabular,
        slice_labels,
        label: label as u8,
    };
    case.validate()?;
    Ok(case)
}

/// Generate and split a dataset. Labels are balanced across classes and the
/// split assignment is a seeded shuffle.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Splits> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<usize> = (0..cfg.n_cases).map(|i| i % cfg.classes).collect();
    labels.shuffle(&mut rng);
    let mut cases = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| make_case(cfg, i as u64, y, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    cases.shuffle(&mut rng);
    let [n_train, n_val, _] = cfg.split_counts();
    let test = cases.split_off(n_train + n_val);
    let val = cases.split_off(n_train);
    Ok(Splits { train: cases, val, test })
}

/// Octant-signal fixture: `[1, n, n, n]` volumes whose label is carried only
/// by a 3D bump inside the octant with all coordinates below `n / 2`.
pub fn gen_octant_fixture(n_cases: usize, n: usize, amplitude: f64, seed: u64) -> Result<Vec<Case>> {
    if n < 4 || n_cases == 0 {
        return Err(Error::Config("octant fixture needs n ≥ 4 and at least one case".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n as f64 / 2.0;
    let margin = n as f64 / 8.0;
    (0..n_cases)
        .map(|i| {
            let label = (i % 2) as u8;
            let mut data: Vec<f32> = (0..n * n * n).map(|_| normal(&mut rng) as f32).collect();
            if label == 1 {
                let c: Vec<f64> = (0..3).map(|_| rng.random_range(margin..=half - 1.0 - margin)).collect();
                for y in 0..n {
                    for x in 0..n {
                        for z in 0..n {
                            let d2 = (y as f64 - c[0]).powi(2) + (x as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                            data[(y * n + x) * n + z] += (amplitude * (-d2 / 2.0).exp()) as f32;
                        }
                    }
                }
            }
            Ok(Case {
                id: i as u64,
                volume: Tensor::new(vec![1, n, n, n], data)?,
                tabular: vec![0.0],
                slice_labels: vec![label; n],
                label,
            })
        })
        .collect()
}

/// 2×2 counts `[tab][img]` for single slices and for slice groups.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InconsistencyStats {
    pub single_slice: [[u64; 2]; 2],
    pub grouped: [[u64; 2]; 2],
    pub group_size: usize,
}

impl InconsistencyStats {
    /// Tabular-positive cells paired with a negative image unit.
    pub fn inconsistent_slices(&self) -> u64 {
        self.single_slice[1][0]
    }

    pub fn inconsistent_groups(&self) -> u64 {
        self.grouped[1][0]
    }

    pub fn to_text(&self) -> String {
        let row = |m: &[[u64; 2]; 2], t: usize| format!("Tab={t} | {:>8} {:>8}", m[t][0], m[t][1]);
        format!(
            "single slice   |    Img=0    Img=1\n{}\n{}\n{}-slice groups |    Img=0    Img=1\n{}\n{}\n",
            row(&self.single_slice, 0),
            row(&self.single_slice, 1),
            self.group_size,
            row(&self.grouped, 0),
            row(&self.grouped, 1)
        )
    }
}

pub fn inconsistency_stats<'a>(
    cases: impl IntoIterator<Item = &'a Case>,
    group_size: usize,
    min_positive: usize,
) -> InconsistencyStats {
    let mut st = InconsistencyStats {
        group_size,
        ..Default::default()
    };
    for c in cases {
        let tab = usize::from(c.label > 0);
        for &l in &c.slice_labels {
            st.single_slice[tab][usize::from(l > 0)] += 1;
        }
        for l in group_labels(&c.slice_labels, group_size, min_positive) {
            st.grouped[tab][usize::from(l > 0)] += 1;
        }
    }
    st
}
