//! The trainable model bundle and its checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic "RMCK" | version u16
//! config   u32 length + UTF-8 `key = value` text
//! dim u32 | num_languages u32
//! label vocab: u32 count, then u32 length + UTF-8 per entry
//! params:  u32 count, then per parameter
//!          name (u32 length + UTF-8) | group u8 | rows u32 | cols u32 | rows*cols f64
//! ```

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::autodiff::{ParamGroup, Parameter, Tensor};
use crate::config::TrainConfig;
use crate::dat::DomainClassifier;
use crate::error::{Error, Result};
use crate::mil::{EncoderNet, PoolingHead};
use crate::nn::{stream_rng, Stream};
use crate::policy::PolicyNet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Encoder, pooling head, and the optional policy and domain branches.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub dim: usize,
    pub num_languages: usize,
    pub label_vocab: Vec<String>,
    pub encoder: EncoderNet,
    pub head: PoolingHead,
    pub policy: Option<PolicyNet>,
    pub domain: Option<DomainClassifier>,
}

impl ModelBundle {
    /// Each component draws its initial weights from its own stream, so the
    /// shared components start identical across frameworks.
    pub fn new(cfg: &TrainConfig, dim: usize, num_languages: usize, label_vocab: Vec<String>) -> Result<Self> {
        if label_vocab.is_empty() {
            return Err(Error::Config("label vocabulary is empty".into()));
        }
        let encoder = EncoderNet::new(&[dim, cfg.encoder_hidden, dim], &mut stream_rng(cfg.seed, Stream::EncoderInit))?;
        let head = PoolingHead::new(
            cfg.pooling,
            dim,
            cfg.hdim,
            label_vocab.len(),
            cfg.attention_dim,
            &mut stream_rng(cfg.seed, Stream::HeadInit),
        );
        let policy = cfg
            .framework
            .uses_policy()
            .then(|| PolicyNet::new(dim, cfg.hp, &mut stream_rng(cfg.seed, Stream::PolicyInit)));
        let domain = if cfg.framework.uses_domain() {
            if num_languages == 0 {
                return Err(Error::Config("domain branch needs at least one language".into()));
            }
            Some(DomainClassifier::new(
                dim,
                cfg.domain_hidden(),
                num_languages,
                &mut stream_rng(cfg.seed, Stream::DomainInit),
            ))
        } else {
            None
        };
        Ok(ModelBundle {
            dim,
            num_languages,
            label_vocab,
            encoder,
            head,
            policy,
            domain,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.label_vocab.len()
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        let mut params = self.encoder.parameters();
        params.extend(self.head.parameters());
        if let Some(p) = &self.policy {
            params.extend(p.parameters());
        }
        if let Some(d) = &self.domain {
            params.extend(d.parameters());
        }
        params
    }

    /// Copies of every parameter value, keyed by name.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.parameters()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.data().clone()))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        let params = self.parameters();
        if params.len() != snapshot.len() {
            return Err(Error::Format(format!(
                "parameter count mismatch: model has {}, snapshot has {}",
                params.len(),
                snapshot.len()
            )));
        }
        for p in &params {
            let data = snapshot
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{}`", p.name)))?;
            p.value.set_data(data.clone())?;
        }
        Ok(())
    }
}

/// A model plus the configuration it was built from.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelBundle,
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LE>(s.len() as u32).unwrap();
    out.write_all(s.as_bytes()).unwrap();
}

fn read_str(r: &mut Cursor<&[u8]>) -> Result<String> {
    let len = r.read_u32::<LE>()? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(Error::Format(format!("string length {len} exceeds remaining {remaining} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
}

pub fn serialize_checkpoint(config: &TrainConfig, model: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.write_u16::<LE>(CHECKPOINT_VERSION).unwrap();
    write_str(&mut out, &config.to_text());
    out.write_u32::<LE>(model.dim as u32).unwrap();
    out.write_u32::<LE>(model.num_languages as u32).unwrap();
    out.write_u32::<LE>(model.label_vocab.len() as u32).unwrap();
    for v in &model.label_vocab {
        write_str(&mut out, v);
    }
    let params = model.parameters();
    out.write_u32::<LE>(params.len() as u32).unwrap();
    for p in &params {
        write_str(&mut out, &p.name);
        out.write_u8(p.group.tag()).unwrap();
        let data = p.value.data();
        out.write_u32::<LE>(data.nrows() as u32).unwrap();
        out.write_u32::<LE>(data.ncols() as u32).unwrap();
        for &v in data.iter() {
            out.write_f64::<LE>(v).unwrap();
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u16::<LE>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = TrainConfig::from_text(&read_str(&mut r)?)?;
    let dim = r.read_u32::<LE>()? as usize;
    let num_languages = r.read_u32::<LE>()? as usize;
    let n_vocab = r.read_u32::<LE>()? as usize;
    let label_vocab = (0..n_vocab).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let model = ModelBundle::new(&config, dim, num_languages, label_vocab)?;
    let expected: BTreeMap<String, Parameter> =
        model.parameters().into_iter().map(|p| (p.name.clone(), p)).collect();

    let count = r.read_u32::<LE>()? as usize;
    let mut snapshot = BTreeMap::new();
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let tag = r.read_u8()?;
        let group = ParamGroup::from_tag(tag).ok_or_else(|| Error::Format(format!("bad group tag {tag}")))?;
        let rows = r.read_u32::<LE>()? as usize;
        let cols = r.read_u32::<LE>()? as usize;
        let p = expected
            .get(&name)
            .ok_or_else(|| Error::Format(format!("unexpected parameter `{name}`")))?;
        if p.group != group || p.value.shape() != (rows, cols) {
            return Err(Error::Format(format!(
                "parameter `{name}`: stored {group} {rows}x{cols}, model expects {} {:?}",
                p.group,
                p.value.shape()
            )));
        }
        let mut data = vec![0.0; rows * cols];
        r.read_f64_into::<LE>(&mut data)?;
        snapshot.insert(name, Array2::from_shape_vec((rows, cols), data).expect("shape checked"));
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.position() as usize
        )));
    }
    model.restore(&snapshot)?;
    Ok(Checkpoint { config, model })
}

pub fn write_checkpoint(path: &Path, config: &TrainConfig, model: &ModelBundle) -> Result<()> {
    std::fs::write(path, serialize_checkpoint(config, model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&std::fs::read(path)?)
}
