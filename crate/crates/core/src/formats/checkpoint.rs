//! Binary checkpoints: architecture echo, named parameters and optional
//! optimizer state.
//!
//! ```text
//! b"TNFC" | u32 version | u32 len | arch TOML (UTF-8) | f64 best_val | u32 n_params
//! param:  u16 len | name | u8 dtype | u8 ndim | u32 × ndim dims | values (dtype, LE)
//! u8 has_optimizer
//! [u64 step | per param: u64 step | m values | v values]
//! ```

use tnf_autograd::optim::{AdamW, AdamWConfig, AdamWState, CosineSchedule};
use tnf_autograd::{DType, Real, Tensor};

use super::{checked_numel, Reader};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::TnfModel;

pub const MAGIC: &[u8; 4] = b"TNFC";
pub const VERSION: u32 = 1;
const MAX_NDIM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Widened to f64; exact for f32 payloads.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub param_steps: Vec<u64>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub best_val: f64,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerState>,
}

fn write_values(out: &mut Vec<u8>, dtype: DType, values: &[f64]) {
    for &v in values {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

fn read_values(r: &mut Reader<'_>, dtype: DType, n: usize) -> Result<Vec<f64>> {
    let raw = r.items(n, dtype.size())?;
    let v: Vec<f64> = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
    };
    if v.iter().any(|x| !x.is_finite()) {
        return Err(r.err("non-finite value"));
    }
    Ok(v)
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arch.len() as u32).to_le_bytes());
        out.extend_from_slice(self.arch.as_bytes());
        out.extend_from_slice(&self.best_val.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.dtype.tag());
            out.push(p.shape.len() as u8);
            for &d in &p.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            write_values(&mut out, p.dtype, &p.values);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                for (k, p) in self.params.iter().enumerate() {
                    out.extend_from_slice(&o.param_steps[k].to_le_bytes());
                    write_values(&mut out, p.dtype, &o.m[k]);
                    write_values(&mut out, p.dtype, &o.v[k]);
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.bytes(4)? != MAGIC {
            return Err(r.err("bad magic (expected TNFC)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let arch = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| r.err("architecture echo is not UTF-8"))?
            .to_string();
        let best_val = r.f64()?;
        let n = r.u32()? as usize;
        if n > r.remaining() / 4 {
            return Err(r.err(format!("{n} parameters cannot fit in {} bytes", r.remaining())));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.bytes(len)?)
                .map_err(|_| r.err("parameter name is not UTF-8"))?
                .to_string();
            let tag = r.u8()?;
            let dtype = DType::from_tag(tag).ok_or_else(|| r.err(format!("unknown dtype tag {tag}")))?;
            let ndim = r.u8()? as usize;
            if ndim > MAX_NDIM {
                return Err(r.err(format!("rank {ndim} exceeds {MAX_NDIM}")));
            }
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = checked_numel(&shape).ok_or_else(|| r.err(format!("invalid shape {shape:?}")))?;
            let values = read_values(&mut r, dtype, numel)?;
            params.push(NamedTensor {
                name,
                dtype,
                shape,
                values,
            });
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut o = OptimizerState {
                    step,
                    param_steps: Vec::with_capacity(n),
                    m: Vec::with_capacity(n),
                    v: Vec::with_capacity(n),
                };
                for p in &params {
                    o.param_steps.push(r.u64()?);
                    o.m.push(read_values(&mut r, p.dtype, p.values.len())?);
                    o.v.push(read_values(&mut r, p.dtype, p.values.len())?);
                }
                Some(o)
            }
            t => return Err(r.err(format!("optimizer flag {t} is neither 0 nor 1"))),
        };
        r.finish()?;
        let names: std::collections::HashSet<&str> = params.iter().map(|p| p.name.as_str()).collect();
        if names.len() != params.len() {
            return Err(Error::Data("checkpoint: duplicate parameter name".into()));
        }
        Ok(Checkpoint {
            arch,
            best_val,
            params,
            optimizer,
        })
    }

    pub fn from_model<T: Real>(model: &TnfModel<T>, best_val: f64, optimizer: Option<&AdamW<T>>) -> Self {
        let params = model
            .store
            .iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                dtype: T::DTYPE,
                shape: t.shape().to_vec(),
                values: t.to_f64_vec(),
            })
            .collect();
        let optimizer = optimizer.map(|o| {
            let s = o.state();
            let widen = |v: &Vec<Vec<T>>| v.iter().map(|x| x.iter().map(|y| y.f64()).collect()).collect();
            OptimizerState {
                step: s.step,
                param_steps: s.param_steps.clone(),
                m: widen(&s.m),
                v: widen(&s.v),
            }
        });
        Checkpoint {
            arch: model.config.to_toml(),
            best_val,
            params,
            optimizer,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::from_toml(&self.arch)
    }

    /// Overwrite the parameters of `model`. The architecture echo and every
    /// parameter name and shape must match; float32 tensors may widen into a
    /// float64 model but not the other way round.
    pub fn apply_to<T: Real>(&self, model: &mut TnfModel<T>) -> Result<()> {
        if self.model_config()? != model.config {
            return Err(Error::Config("checkpoint architecture does not match the model configuration".into()));
        }
        if self.params.len() != model.store.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for p in &self.params {
            if p.dtype != T::DTYPE && !(p.dtype == DType::F32 && T::DTYPE == DType::F64) {
                return Err(Error::Data(format!("{}: stored as {}, model uses {}", p.name, p.dtype.name(), T::DTYPE.name())));
            }
            let id = model
                .store
                .id(&p.name)
                .ok_or_else(|| Error::Data(format!("checkpoint parameter {} is not in the model", p.name)))?;
            let t = Tensor::from_f64(p.shape.clone(), &p.values)?;
            model.store.assign(id, &t).map_err(|e| Error::Data(format!("{}: {e}", p.name)))?;
        }
        Ok(())
    }

    pub fn to_model<T: Real>(&self) -> Result<TnfModel<T>> {
        let mut model = TnfModel::new(&self.model_config()?, 0)?;
        self.apply_to(&mut model)?;
        Ok(model)
    }

    /// Rebuild the optimizer for `model` from the stored state.
    pub fn optimizer_for<T: Real>(&self, model: &TnfModel<T>, config: AdamWConfig, schedule: CosineSchedule) -> Result<Option<AdamW<T>>> {
        let Some(o) = &self.optimizer else { return Ok(None) };
        let narrow = |v: &Vec<Vec<f64>>| v.iter().map(|x| x.iter().map(|&y| T::c(y)).collect()).collect();
        let state = AdamWState {
            step: o.step,
            param_steps: o.param_steps.clone(),
            m: narrow(&o.m),
            v: narrow(&o.v),
        };
        Ok(Some(AdamW::with_state(&model.store, config, schedule, state)?))
    }
}
