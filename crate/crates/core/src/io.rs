//! On-disk formats.
//!
//! NTSR (tensor): magic `4E 54 53 52`, version u32 LE (= 1), dtype u8
//! (0 = f32 LE, 1 = f64 LE), rank u8, rank x u32 LE extents, then the raw
//! row-major payload.
//!
//! NATW (weight store): magic `4E 41 54 57`, version u32 LE (= 1), tensor
//! count u32 LE, then per tensor: name length u16 LE, UTF-8 name, dtype
//! u8, rank u8, rank x u32 LE extents, raw little-endian data.
//!
//! Model configs are JSON with the keys of [`NatConfig`], or a single
//! `preset` key naming a registered variant, which overrides the rest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NatConfig, NatWeights};
use crate::tensor::{Dtype, Scalar, Tensor};

const NTSR_MAGIC: [u8; 4] = *b"NTSR";
const NATW_MAGIC: [u8; 4] = *b"NATW";
const FORMAT_VERSION: u32 = 1;

/// A tensor of either supported precision, as read from disk.
#[derive(Debug, Clone)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            Self::F32(_) => Dtype::F32,
            Self::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Self::F32(t) => t.shape(),
            Self::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested precision (identity when it matches).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            Self::F32(t) => t.cast::<T>(),
            Self::F64(t) => t.cast::<T>(),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated payload (needed {n} bytes at offset {})",
                self.what, self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_header(cursor: &mut Cursor, magic: [u8; 4], name: &str) -> Result<()> {
    let got = cursor.take(4)?;
    if got != magic {
        return Err(Error::Format(format!(
            "{name}: bad magic {got:02X?}, expected {magic:02X?}"
        )));
    }
    let version = cursor.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{name}: unsupported version {version}"
        )));
    }
    Ok(())
}

fn read_tensor_body(cursor: &mut Cursor, name: &str) -> Result<AnyTensor> {
    let dtype = Dtype::from_code(cursor.u8()?)
        .ok_or_else(|| Error::Format(format!("{name}: unknown dtype code")))?;
    let rank = cursor.u8()? as usize;
    if rank == 0 {
        return Err(Error::Format(format!("{name}: rank must be at least 1")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for _ in 0..rank {
        let extent = cursor.u32()? as usize;
        if extent == 0 {
            return Err(Error::Format(format!("{name}: zero extent")));
        }
        numel = numel
            .checked_mul(extent)
            .ok_or_else(|| Error::Format(format!("{name}: extent overflow")))?;
        shape.push(extent);
    }
    let raw = cursor.take(numel * dtype.size_bytes())?;
    Ok(match dtype {
        Dtype::F32 => AnyTensor::F32(Tensor::new(
            shape,
            raw.chunks_exact(4).map(f32::read_le).collect(),
        )?),
        Dtype::F64 => AnyTensor::F64(Tensor::new(
            shape,
            raw.chunks_exact(8).map(f64::read_le).collect(),
        )?),
    })
}

fn write_tensor_body<T: Scalar>(tensor: &Tensor<T>, out: &mut Vec<u8>) {
    out.push(T::DTYPE as u8);
    out.push(tensor.rank() as u8);
    for &extent in tensor.shape() {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for &value in tensor.data() {
        value.write_le(out);
    }
}

pub fn ntsr_to_bytes<T: Scalar>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * tensor.rank() + tensor.numel() * 8);
    out.extend_from_slice(&NTSR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    write_tensor_body(tensor, &mut out);
    out
}

pub fn ntsr_from_bytes(bytes: &[u8]) -> Result<AnyTensor> {
    let mut cursor = Cursor {
        bytes,
        pos: 0,
        what: "NTSR",
    };
    read_header(&mut cursor, NTSR_MAGIC, "NTSR")?;
    let tensor = read_tensor_body(&mut cursor, "NTSR")?;
    if !cursor.finished() {
        return Err(Error::Format("NTSR: trailing bytes after payload".into()));
    }
    Ok(tensor)
}

pub fn write_ntsr<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    fs::write(path, ntsr_to_bytes(tensor)).map_err(Error::Io)
}

pub fn read_ntsr(path: &Path) -> Result<AnyTensor> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Format(format!("NTSR: cannot read {}: {e}", path.display())))?;
    ntsr_from_bytes(&bytes)
}

pub fn natw_to_bytes<T: Scalar>(tensors: &BTreeMap<String, Tensor<T>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&NATW_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_tensor_body(tensor, &mut out);
    }
    out
}

pub fn natw_from_bytes(bytes: &[u8]) -> Result<BTreeMap<String, AnyTensor>> {
    let mut cursor = Cursor {
        bytes,
        pos: 0,
        what: "NATW",
    };
    read_header(&mut cursor, NATW_MAGIC, "NATW")?;
    let count = cursor.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = cursor.u16()? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|_| Error::Format("NATW: tensor name is not UTF-8".into()))?
            .to_string();
        let tensor = read_tensor_body(&mut cursor, "NATW")?;
        if out.insert(name.clone(), tensor).is_some() {
            return Err(Error::Format(format!("NATW: duplicate tensor '{name}'")));
        }
    }
    if !cursor.finished() {
        return Err(Error::Format("NATW: trailing bytes after payload".into()));
    }
    Ok(out)
}

pub fn write_natw<T: Scalar>(path: &Path, weights: &NatWeights<T>) -> Result<()> {
    fs::write(path, natw_to_bytes(weights.tensors())).map_err(Error::Io)
}

/// Loads a NATW file and validates it against the config, converting to
/// the requested precision.
pub fn read_natw<T: Scalar>(path: &Path, config: &NatConfig) -> Result<NatWeights<T>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Format(format!("NATW: cannot read {}: {e}", path.display())))?;
    let raw = natw_from_bytes(&bytes)?;
    let tensors = raw
        .into_iter()
        .map(|(name, any)| (name, any.to_tensor::<T>()))
        .collect();
    NatWeights::from_map(config, tensors)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    depths: Option<[usize; 4]>,
    head_dim: Option<usize>,
    base_heads: Option<usize>,
    mlp_ratio: Option<f64>,
    kernel: Option<usize>,
    num_classes: Option<usize>,
    layer_scale: Option<f64>,
}

/// Parses a model config from JSON. A `preset` key selects a registered
/// variant and overrides everything else; otherwise all keys except the
/// nullable `layer_scale` are required.
pub fn config_from_json(text: &str) -> Result<NatConfig> {
    let raw: RawConfig =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("config JSON: {e}")))?;
    let config = if let Some(name) = raw.preset {
        NatConfig::preset(&name)?
    } else {
        let require = |field: &str| Error::Format(format!("config JSON: missing key '{field}'"));
        NatConfig {
            depths: raw.depths.ok_or_else(|| require("depths"))?,
            head_dim: raw.head_dim.ok_or_else(|| require("head_dim"))?,
            base_heads: raw.base_heads.ok_or_else(|| require("base_heads"))?,
            mlp_ratio: raw.mlp_ratio.ok_or_else(|| require("mlp_ratio"))?,
            kernel: raw.kernel.ok_or_else(|| require("kernel"))?,
            num_classes: raw.num_classes.ok_or_else(|| require("num_classes"))?,
            layer_scale: raw.layer_scale,
        }
    };
    config.validate()?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<NatConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("config: cannot read {}: {e}", path.display())))?;
    config_from_json(&text)
}

#[derive(Serialize)]
struct ConfigOut<'a> {
    depths: &'a [usize; 4],
    head_dim: usize,
    base_heads: usize,
    mlp_ratio: f64,
    kernel: usize,
    num_classes: usize,
    layer_scale: Option<f64>,
}

pub fn config_to_json(config: &NatConfig) -> String {
    serde_json::to_string_pretty(&ConfigOut {
        depths: &config.depths,
        head_dim: config.head_dim,
        base_heads: config.base_heads,
        mlp_ratio: config.mlp_ratio,
        kernel: config.kernel,
        num_classes: config.num_classes,
        layer_scale: config.layer_scale,
    })
    .expect("config serializes")
}
