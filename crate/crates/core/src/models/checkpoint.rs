//! Component checkpoints: JSON header plus named little-endian tensors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComponentKind, ComponentParams, Dims, ModelConfig};
use crate::autodiff::{AdamState, ParamStore, Tensor};
use crate::codec::{self, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MMCCKPT1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    kind: ComponentKind,
    dims: Dims,
    model: ModelConfig,
    config_hash: String,
    stage: String,
    adam: Option<AdamHeader>,
    tensors: Vec<(String, Vec<usize>)>,
}

/// A component's parameters and optimizer state at the end of a stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub component: ComponentParams,
    pub adam: Option<AdamState>,
    pub config_hash: String,
    pub stage: String,
}

impl Checkpoint {
    /// Optimizer step count, zero without optimizer state.
    pub fn step(&self) -> u64 {
        self.adam.as_ref().map_or(0, |a| a.t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let c = &self.component;
        let header = Header {
            version: VERSION,
            kind: c.kind,
            dims: c.dims.clone(),
            model: c.cfg.clone(),
            config_hash: self.config_hash.clone(),
            stage: self.stage.clone(),
            adam: self.adam.as_ref().map(|a| AdamHeader {
                t: a.t,
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
            }),
            tensors: c.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect(),
        };
        let mut out = Vec::new();
        codec::put_header(&mut out, MAGIC, &header)?;
        for (_, t) in c.params.iter() {
            codec::put_tensor(&mut out, t.shape(), t.data());
        }
        if let Some(a) = &self.adam {
            for (name, t) in c.params.iter() {
                let (m, v) = match (a.m.get(name), a.v.get(name)) {
                    (Some(m), Some(v)) => (m, v),
                    _ => return Err(Error::data(format!("optimizer state lacks `{name}`"))),
                };
                codec::put_tensor(&mut out, t.shape(), m);
                codec::put_tensor(&mut out, t.shape(), v);
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let h: Header = r.header(MAGIC)?;
        if h.version != VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {}", h.version)));
        }
        let mut params = ParamStore::new();
        for (name, shape) in &h.tensors {
            let (s, data) = r.tensor()?;
            if &s != shape {
                return Err(Error::data(format!("tensor `{name}` has shape {s:?}, header says {shape:?}")));
            }
            params.insert(name.clone(), Tensor::new(s, data)?)?;
        }
        let expected = ComponentParams::init(h.kind, &h.dims, &h.model, 0)?;
        let layout: Vec<_> = expected.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        if layout != h.tensors {
            return Err(Error::data(format!("tensor layout does not match a {} component", h.kind)));
        }
        let adam = match &h.adam {
            None => None,
            Some(a) => {
                let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
                for (name, shape) in &h.tensors {
                    for store in [&mut m, &mut v] {
                        let (s, data) = r.tensor()?;
                        if &s != shape {
                            return Err(Error::data(format!("moment of `{name}` has shape {s:?}")));
                        }
                        store.insert(name.clone(), data);
                    }
                }
                if v.values().flatten().any(|x| *x < 0.0) {
                    return Err(Error::data("negative second moment"));
                }
                Some(AdamState {
                    m,
                    v,
                    t: a.t,
                    lr: a.lr,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                })
            }
        };
        r.finish()?;
        Ok(Self {
            component: ComponentParams {
                kind: h.kind,
                dims: h.dims,
                cfg: h.model,
                params,
            },
            adam,
            config_hash: h.config_hash,
            stage: h.stage,
        })
    }

    pub fn save(&self, path: &Path, overwrite: bool) -> Result<()> {
        codec::write_file(path, &self.encode()?, overwrite)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&codec::read_file(path)?)
    }
}
