//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SPKSHARE"
//! version u32
//! header  u32 length + UTF-8 TOML (network spec, BN settings, optional train config)
//! count   u32
//! tensors count x { u32 name length, name, u32 ndim, ndim x u32 dims, f32 data }
//! ```
//!
//! Thresholds and running statistics are stored as tensors alongside the
//! trainable parameters, so a round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bn::{BnConfig, BnState};
use crate::error::{Error, Result};
use crate::network::{Classifier, Network, NetworkSpec, SharedLayer};
use crate::tensor::{GradPair, Tensor};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"SPKSHARE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    network: NetworkSpec,
    bn: BnConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub train: Option<TrainConfig>,
}

fn named_tensors(net: &Network) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (i, l) in net.layers.iter().enumerate() {
        out.push((format!("layer{i}.weight"), l.weight.value.clone()));
        out.push((format!("layer{i}.bias"), l.bias.value.clone()));
        out.push((format!("layer{i}.gamma"), l.bn.gamma.value.clone()));
        out.push((format!("layer{i}.beta"), l.bn.beta.value.clone()));
        let c = l.bn.channels();
        out.push((
            format!("layer{i}.mu_ema"),
            Tensor::new(vec![c], l.bn.mu_ema.clone()).expect("channel count"),
        ));
        out.push((
            format!("layer{i}.sigma_ema"),
            Tensor::new(vec![c], l.bn.sigma_ema.clone()).expect("channel count"),
        ));
        out.push((format!("layer{i}.threshold"), Tensor::scalar(l.threshold)));
    }
    out.push(("classifier.weight".into(), net.classifier.weight.value.clone()));
    out.push(("classifier.bias".into(), net.classifier.bias.value.clone()));
    out
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit a u32 field")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes a network. BN momentum and epsilon are taken from the first
/// layer; all layers are built from one [`BnConfig`].
pub fn to_bytes(net: &Network, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let bn = match net.layers.first() {
        Some(l) => BnConfig {
            momentum: l.bn.momentum,
            eps: l.bn.eps,
        },
        None => train.map(|t| t.bn).unwrap_or_default(),
    };
    let header = Header {
        network: net.spec().clone(),
        bn,
        train: train.cloned(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut buf, text.len())?;
    buf.extend_from_slice(text.as_bytes());
    let tensors = named_tensors(net);
    put_u32(&mut buf, tensors.len())?;
    for (name, t) in &tensors {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.ndim())?;
        for &d in t.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let hlen = cur.u32("header length")? as usize;
    let text = std::str::from_utf8(cur.take(hlen, "header")?)
        .map_err(|_| Error::CorruptCheckpoint("header is not UTF-8".into()))?;
    let header: Header = toml::from_str(text).map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;

    let count = cur.u32("tensor count")? as usize;
    let mut tensors = std::collections::BTreeMap::new();
    for _ in 0..count {
        let nlen = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(nlen, "tensor name")?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.u32("ndim")? as usize;
        let dims: Vec<usize> = (0..ndim)
            .map(|_| cur.u32("dims").map(|d| d as usize))
            .collect::<Result<_>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: dimensions overflow")))?;
        let raw = cur.take(len, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::CorruptCheckpoint(format!("duplicate tensor {name}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }

    let mut plans = header
        .network
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let classifier_plan = plans.pop().expect("validated spec has a classifier");
    let mut take = |name: String, shape: &[usize]| -> Result<Tensor> {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::CorruptCheckpoint(format!(
                "{name}: shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    let mut layers = Vec::with_capacity(plans.len());
    for (i, plan) in plans.into_iter().enumerate() {
        let c = plan.out_channels();
        let mut bn = BnState::new(c, &header.bn);
        bn.gamma = GradPair::new(take(format!("layer{i}.gamma"), &[c])?);
        bn.beta = GradPair::new(take(format!("layer{i}.beta"), &[c])?);
        bn.mu_ema = take(format!("layer{i}.mu_ema"), &[c])?.into_data();
        bn.sigma_ema = take(format!("layer{i}.sigma_ema"), &[c])?.into_data();
        let threshold = take(format!("layer{i}.threshold"), &[1])?.data()[0];
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::CorruptCheckpoint(format!("layer{i}: threshold {threshold}")));
        }
        layers.push(SharedLayer {
            weight: GradPair::new(take(format!("layer{i}.weight"), &plan.weight_shape())?),
            bias: GradPair::new(take(format!("layer{i}.bias"), &[c])?),
            bn,
            threshold,
            plan,
        });
    }
    let classifier = Classifier {
        weight: GradPair::new(take("classifier.weight".into(), &classifier_plan.weight_shape())?),
        bias: GradPair::new(take("classifier.bias".into(), &[classifier_plan.out_channels()])?),
        plan: classifier_plan,
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::CorruptCheckpoint(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint {
        network: Network::from_parts(header.network, layers, classifier),
        train: header.train,
    })
}

pub fn checkpoint_save(net: &Network, train: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(net, train)?)?;
    Ok(())
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?)
}
