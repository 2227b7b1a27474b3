//! Versioned binary container for model parameters.
//!
//! Layout (little endian): magic `BIQECKPT`, `u32` format version, `u8`
//! model kind, `u8` element type, `u32` length plus `key=value` lines of
//! configuration, `u32` array count, then per array a `u16` name length,
//! the name, `u32` rows, `u32` cols and the raw elements. A SHA-256 digest
//! of everything before it closes the file.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::encoder::{Encoder, LayerParams, ModelConfig, TransformerParams};
use crate::error::{Error, Result};
use crate::gqe::{Gqe, GqeConfig, GqeParams};
use crate::real::Real;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"BIQECKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Encoder,
    Gqe,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Encoder => 1,
            ModelKind::Gqe => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            1 => Ok(ModelKind::Encoder),
            2 => Ok(ModelKind::Gqe),
            _ => Err(Error::Checkpoint(format!("unknown model kind {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub kind: ModelKind,
    pub config: Vec<(String, String)>,
    pub arrays: Vec<(String, Tensor<F>)>,
}

pub fn encode<F: Real>(ckpt: &Checkpoint<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ckpt.kind.tag());
    out.push(F::DTYPE);
    let config: String = ckpt.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(ckpt.arrays.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.arrays {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        core::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

/// Verifies the digest first, so truncation and bit flips anywhere
/// surface as [`Error::ChecksumMismatch`].
fn verified(bytes: &[u8]) -> Result<Reader<'_>> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::ChecksumMismatch);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    Ok(r)
}

pub fn peek_kind(bytes: &[u8]) -> Result<ModelKind> {
    ModelKind::from_tag(verified(bytes)?.u8()?)
}

pub fn decode<F: Real>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    let mut r = verified(bytes)?;
    let kind = ModelKind::from_tag(r.u8()?)?;
    let dtype = r.u8()?;
    if dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!("element type {dtype} does not match {}", F::DTYPE)));
    }
    let len = r.u32()? as usize;
    let config = r
        .text(len)?
        .lines()
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Checkpoint(format!("bad config line {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = r.u32()?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.text(n)?.to_string();
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let elems = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint("array too large".into()))?;
        let raw = r.take(elems.checked_mul(F::BYTES).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        let data = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
        arrays.push((name, Tensor { rows, cols, data }));
    }
    if r.at != r.buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { kind, config, arrays })
}

fn get<'a>(config: &'a [(String, String)], key: &str) -> Result<&'a str> {
    config
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("missing config key {key}")))
}

fn parse<T: core::str::FromStr>(config: &[(String, String)], key: &str) -> Result<T> {
    get(config, key)?.parse().map_err(|_| Error::Checkpoint(format!("bad value for {key}")))
}

fn collect_arrays<F: Real, P: ParamSet<F>>(p: &P) -> Vec<(String, Tensor<F>)> {
    p.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect()
}

/// Moves named arrays into a parameter set of the expected layout.
fn fill<F: Real, P: ParamSet<F>>(mut template: P, arrays: Vec<(String, Tensor<F>)>) -> Result<P> {
    let names: Vec<String> = template.tensors().into_iter().map(|(n, _)| n).collect();
    if names.len() != arrays.len() {
        return Err(Error::Checkpoint(format!("expected {} arrays, found {}", names.len(), arrays.len())));
    }
    for ((slot, name), (found, t)) in template.tensors_mut().into_iter().zip(&names).zip(arrays) {
        if *name != found {
            return Err(Error::Checkpoint(format!("expected array {name}, found {found}")));
        }
        if (slot.rows, slot.cols) != (t.rows, t.cols) {
            return Err(Error::ShapeMismatch);
        }
        *slot = t;
    }
    Ok(template)
}

impl<F: Real> Encoder<F> {
    pub fn to_checkpoint(&self) -> Checkpoint<F> {
        let c = &self.config;
        let config = [
            ("layers", c.num_layers.to_string()),
            ("heads", c.num_heads.to_string()),
            ("hidden", c.hidden.to_string()),
            ("ff_hidden", c.ff_hidden.to_string()),
            ("max_positions", c.max_positions.to_string()),
            ("vocab_size", c.vocab_size.to_string()),
            ("num_entities", c.num_entities.to_string()),
            ("dropout", c.dropout.to_string()),
            ("seed", c.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Checkpoint { kind: ModelKind::Encoder, config, arrays: collect_arrays(&self.params) }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<F>) -> Result<Self> {
        if ckpt.kind != ModelKind::Encoder {
            return Err(Error::Checkpoint("not an encoder checkpoint".into()));
        }
        let c = &ckpt.config;
        let config = ModelConfig {
            num_layers: parse(c, "layers")?,
            num_heads: parse(c, "heads")?,
            hidden: parse(c, "hidden")?,
            ff_hidden: parse(c, "ff_hidden")?,
            max_positions: parse(c, "max_positions")?,
            vocab_size: parse(c, "vocab_size")?,
            num_entities: parse(c, "num_entities")?,
            dropout: parse(c, "dropout")?,
            seed: parse(c, "seed")?,
        };
        config.validate()?;
        let (d, ff) = (config.hidden, config.ff_hidden);
        let layer = || LayerParams {
            query: Tensor::zeros(d, d),
            key: Tensor::zeros(d, d),
            value: Tensor::zeros(d, d),
            output: Tensor::zeros(d, d),
            ln1_gain: Tensor::zeros(1, d),
            ln1_bias: Tensor::zeros(1, d),
            ff_in: Tensor::zeros(d, ff),
            ff_in_bias: Tensor::zeros(1, ff),
            ff_out: Tensor::zeros(ff, d),
            ff_out_bias: Tensor::zeros(1, d),
            ln2_gain: Tensor::zeros(1, d),
            ln2_bias: Tensor::zeros(1, d),
        };
        let template = TransformerParams {
            token_embedding: Tensor::zeros(config.vocab_size, d),
            position_embedding: Tensor::zeros(config.max_positions, d),
            layers: (0..config.num_layers).map(|_| layer()).collect(),
            output_weight: Tensor::zeros(d, config.num_entities),
            output_bias: Tensor::zeros(1, config.num_entities),
        };
        let params = fill(template, ckpt.arrays)?;
        Encoder::from_parts(config, params)
    }
}

impl<F: Real> Gqe<F> {
    pub fn to_checkpoint(&self) -> Checkpoint<F> {
        let c = &self.config;
        let config = [
            ("num_entities", c.num_entities.to_string()),
            ("num_relations", c.num_relations.to_string()),
            ("dim", c.dim.to_string()),
            ("seed", c.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Checkpoint { kind: ModelKind::Gqe, config, arrays: collect_arrays(&self.params) }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<F>) -> Result<Self> {
        if ckpt.kind != ModelKind::Gqe {
            return Err(Error::Checkpoint("not a gqe-mp checkpoint".into()));
        }
        let c = &ckpt.config;
        let config = GqeConfig {
            num_entities: parse(c, "num_entities")?,
            num_relations: parse(c, "num_relations")?,
            dim: parse(c, "dim")?,
            seed: parse(c, "seed")?,
        };
        config.validate()?;
        let template = GqeParams {
            entity: Tensor::zeros(config.num_entities, config.dim),
            relation: Tensor::zeros(config.num_relations, config.dim),
        };
        let params = fill(template, ckpt.arrays)?;
        Gqe::from_parts(config, params)
    }
}
