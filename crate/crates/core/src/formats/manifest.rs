//! Dataset directory: `manifest.toml` plus one binary file per split.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{decode_split, encode_split, HEADER_LEN, VERSION};
use super::parse_toml;
use crate::data::{Case, Split, Splits};
use crate::error::{Error, Result};
use crate::synth::SynthConfig;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const FORMAT: &str = "tnf-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub file: String,
    pub count: u64,
    pub offsets: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub image_dtype: String,
    pub tabular_dtype: String,
    /// `(c, h, w, K)`.
    pub volume: [usize; 4],
    pub n_attr: usize,
    pub splits: BTreeMap<String, SplitEntry>,
    pub generator: Option<SynthConfig>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("manifest: {m}")));
        if self.format != FORMAT {
            return bad(format!("format {:?} is not {FORMAT:?}", self.format));
        }
        if self.version != VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.image_dtype != "f32" || self.tabular_dtype != "f32" {
            return bad("only f32 payloads are supported".into());
        }
        for (name, s) in &self.splits {
            name.parse::<Split>().map_err(|_| Error::Data(format!("manifest: unknown split {name:?}")))?;
            if s.count != s.offsets.len() as u64 {
                return bad(format!("split {name}: count {} with {} offsets", s.count, s.offsets.len()));
            }
            if s.offsets.first().is_some_and(|&o| o != HEADER_LEN) {
                return bad(format!("split {name}: first record must start at byte {HEADER_LEN}"));
            }
            if s.offsets.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("split {name}: offsets are not strictly increasing"));
            }
            if s.file.is_empty() || s.file.contains(['/', '\\']) || s.file.starts_with('.') {
                return bad(format!("split {name}: file {:?} must be a plain file name", s.file));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: DatasetManifest = parse_toml(text, "manifest").map_err(|e| Error::Data(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

fn shape_of(splits: &Splits) -> ([usize; 4], usize) {
    splits.all().next().map_or(([0; 4], 0), |c| {
        let s = c.volume.shape();
        ([s[0], s[1], s[2], s[3]], c.tabular.len())
    })
}

fn check_uniform(splits: &Splits, volume: [usize; 4], n_attr: usize) -> Result<()> {
    let mut ids = std::collections::HashSet::new();
    for c in splits.all() {
        c.validate()?;
        if c.volume.shape() != volume || c.tabular.len() != n_attr {
            return Err(Error::Data(format!("case {} differs in shape from the first case", c.id)));
        }
        if !ids.insert(c.id) {
            return Err(Error::Data(format!("case id {} appears more than once", c.id)));
        }
    }
    Ok(())
}

/// Write every split plus the manifest into `dir`.
pub fn write_dataset(dir: &Path, splits: &Splits, generator: Option<&SynthConfig>) -> Result<DatasetManifest> {
    let (volume, n_attr) = shape_of(splits);
    check_uniform(splits, volume, n_attr)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = BTreeMap::new();
    for split in Split::ALL {
        let file = format!("{}.tnf", split.name());
        let (bytes, offsets) = encode_split(splits.get(split));
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.insert(
            split.name().to_string(),
            SplitEntry {
                file,
                count: offsets.len() as u64,
                offsets,
            },
        );
    }
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: VERSION,
        image_dtype: "f32".into(),
        tabular_dtype: "f32".into(),
        volume,
        n_attr,
        splits: entries,
        generator: generator.cloned(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Read a dataset directory, checking every record against the manifest.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Splits)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = DatasetManifest::from_toml(&text)?;
    let mut splits = Splits::default();
    for (name, entry) in &manifest.splits {
        let split: Split = name.parse()?;
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (cases, offsets) = decode_split(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if offsets != entry.offsets {
            return Err(Error::Data(format!(
                "{}: record offsets disagree with the manifest",
                path.display()
            )));
        }
        check_shapes(&cases, &manifest, &path)?;
        *splits.get_mut(split) = cases;
    }
    check_uniform(&splits, manifest.volume, manifest.n_attr)?;
    Ok((manifest, splits))
}

fn check_shapes(cases: &[Case], m: &DatasetManifest, path: &Path) -> Result<()> {
    for c in cases {
        if c.volume.shape() != m.volume || c.tabular.len() != m.n_attr {
            return Err(Error::Data(format!(
                "{}: case {} has shape {:?}/{} but the manifest says {:?}/{}",
                path.display(),
                c.id,
                c.volume.shape(),
                c.tabular.len(),
                m.volume,
                m.n_attr
            )));
        }
    }
    Ok(())
}
