//! In-memory multimodal cases and splits.

use tnf_autograd::Tensor;

use crate::error::{Error, Result};

/// One paired volume + tabular record.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: u64,
    /// `[c, h, w, K]`, slices along the last axis.
    pub volume: Tensor<f32>,
    pub tabular: Vec<f32>,
    /// Per-slice image labels (0/1).
    pub slice_labels: Vec<u8>,
    /// Volume-level ground truth, shared by the tabular record.
    pub label: u8,
}

impl Case {
    pub fn validate(&self) -> Result<()> {
        let s = self.volume.shape();
        if s.len() != 4 {
            return Err(Error::Data(format!("case {}: volume must be [c, h, w, K], got {s:?}", self.id)));
        }
        if self.slice_labels.len() != s[3] {
            return Err(Error::Data(format!(
                "case {}: {} slice labels for {} slices",
                self.id,
                self.slice_labels.len(),
                s[3]
            )));
        }
        if self.label == 0 && self.slice_labels.iter().any(|&l| l > 0) {
            return Err(Error::Data(format!("case {}: positive slice in a negative volume", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Case>,
    pub val: Vec<Case>,
    pub test: Vec<Case>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[Case] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Vec<Case> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Case> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Column means of the tabular vectors.
pub fn tabular_means(cases: &[Case]) -> Vec<f64> {
    let Some(first) = cases.first() else { return Vec::new() };
    let mut m = vec![0.0; first.tabular.len()];
    for c in cases {
        for (a, &v) in m.iter_mut().zip(&c.tabular) {
            *a += v as f64;
        }
    }
    m.iter().map(|v| v / cases.len() as f64).collect()
}
