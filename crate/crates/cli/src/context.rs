//! Path resolution, config loading and run-directory access.

use std::path::{Path, PathBuf};

use tnf_core::data::{Case, Split, Splits};
use tnf_core::formats::checkpoint::Checkpoint;
use tnf_core::formats::manifest::read_dataset;
use tnf_core::formats::runconfig::{DataSource, RunConfig};
use tnf_core::synth::gen_synthetic;
use tnf_core::{Error, Result, TnfModel};

/// Default root for relative output and dataset paths.
pub const OUTPUT_ROOT_ENV: &str = "TNF_OUTPUT_ROOT";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.tnfc";

/// Relative paths resolve against `$TNF_OUTPUT_ROOT` when it is set.
pub fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else { return RunConfig::from_toml("") };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    RunConfig::from_toml(&text)
}

/// Point the config at a dataset directory instead of its own source.
pub fn set_data_path(cfg: &mut RunConfig, dir: &Path) -> Result<()> {
    cfg.data.path = Some(dir.to_string_lossy().into_owned());
    cfg.data.synth = None;
    cfg.validate()
}

pub fn load_data(cfg: &RunConfig) -> Result<Splits> {
    match cfg.data_source() {
        DataSource::Path(p) => Ok(read_dataset(&resolve(Path::new(&p)))?.1),
        DataSource::Synth(s) => gen_synthetic(&s),
    }
}

/// Output directory: the flag, then `output.dir`, then `fallback`.
pub fn out_dir(flag: Option<&Path>, cfg: &RunConfig, fallback: &str) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

/// A trained run: its config, weights and data.
pub struct Run {
    pub config: RunConfig,
    pub checkpoint: Checkpoint,
    pub model: TnfModel<f32>,
    pub splits: Splits,
    pub out: PathBuf,
}

impl Run {
    pub fn open(dir: &Path, checkpoint: Option<&Path>, data: Option<&Path>, out: Option<&Path>) -> Result<Self> {
        let dir = resolve(dir);
        let mut config = load_config(Some(&dir.join(CONFIG_FILE)))?;
        if let Some(d) = data {
            set_data_path(&mut config, d)?;
        }
        let ck_path = checkpoint.map_or_else(|| dir.join(CHECKPOINT_FILE), resolve);
        let bytes = std::fs::read(&ck_path).map_err(|e| Error::io(&ck_path, e))?;
        let checkpoint = Checkpoint::decode(&bytes)?;
        if checkpoint.model_config()? != config.model {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with a different model config than {}",
                ck_path.display(),
                dir.join(CONFIG_FILE).display()
            )));
        }
        let model = checkpoint.to_model()?;
        let splits = load_data(&config)?;
        let out = out.map_or(dir, resolve);
        Ok(Run {
            config,
            checkpoint,
            model,
            splits,
            out,
        })
    }

    pub fn cases(&self, split: Split) -> Result<&[Case]> {
        let c = self.splits.get(split);
        if c.is_empty() {
            return Err(Error::Data(format!("split {} has no cases", split.name())));
        }
        Ok(c)
    }
}
