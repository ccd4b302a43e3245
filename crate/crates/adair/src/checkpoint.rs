//! Binary checkpoint files.
//!
//! Layout, little-endian throughout:
//! `"ADAIRCKP"`, `u32` version, `u32` length + UTF-8 model config text,
//! `u32` weight count, then per weight `u32` length + name, `u32` rank,
//! `u64` per dimension, `u8` precision (4 or 8 bytes per value) and the raw
//! values. A `u8` flag announces optional Adam state (`u64` step, then the
//! first and second moments of every weight in the same precision). A CRC-64
//! of every preceding byte closes the file.

use std::fs;
use std::path::Path;

use adair_core::network::{AdaIr, ModelConfig};
use adair_core::params::ParamStore;
use adair_core::train::AdamState;
use adair_core::{Precision, Scalar, Tensor};
use crc::{Crc, CRC_64_ECMA_182};

use crate::config::{model_from_text, model_to_text};
use crate::error::{io, Error, Result};

pub const MAGIC: &[u8; 8] = b"ADAIRCKP";
pub const VERSION: u32 = 1;
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_ECMA_182);

/// A decoded checkpoint with weights converted to `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: ModelConfig,
    /// Precision the weights were stored in.
    pub precision: Precision,
    pub params: ParamStore<T>,
    pub adam: Option<AdamState<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn network(&self) -> Result<AdaIr> {
        Ok(AdaIr::new(self.config.clone())?.0)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend(v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend(s.as_bytes());
}

fn put_values<T: Scalar>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &v in t.data() {
        match T::PRECISION {
            Precision::F32 => out.extend((v.as_f64() as f32).to_le_bytes()),
            Precision::F64 => out.extend(v.as_f64().to_le_bytes()),
        }
    }
}

fn precision_code(p: Precision) -> u8 {
    p.bytes() as u8
}

/// Serialise weights (and optionally optimiser state) of a model built from `config`.
pub fn encode<T: Scalar>(config: &ModelConfig, params: &ParamStore<T>, adam: Option<&AdamState<T>>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION);
    put_str(&mut out, &model_to_text(config));
    put_u32(&mut out, params.len() as u32);
    for id in params.ids() {
        let value = params.get(id);
        put_str(&mut out, params.name(id));
        put_u32(&mut out, value.rank() as u32);
        for &d in value.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        out.push(precision_code(T::PRECISION));
        put_values(&mut out, value);
    }
    match adam {
        Some(state) => {
            out.push(1);
            out.extend(state.t.to_le_bytes());
            for t in state.m.iter().chain(&state.v) {
                put_values(&mut out, t);
            }
        }
        None => out.push(0),
    }
    let sum = CHECKSUM.checksum(&out);
    out.extend(sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("invalid UTF-8".into()))
    }

    fn values<T: Scalar>(&mut self, precision: Precision, n: usize) -> Result<Vec<T>> {
        let width = precision.bytes();
        let raw = self.take(n.checked_mul(width).ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| match precision {
                Precision::F32 => T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
                Precision::F64 => T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect())
    }
}

/// Check framing and checksum, then rebuild the weights against the layout
/// implied by the stored configuration.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if CHECKSUM.checksum(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let config = model_from_text(&r.string()?)?;
    let (_, layout) = AdaIr::new(config.clone())?;
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(Error::ConfigMismatch(format!(
            "{count} stored weights, configuration declares {}",
            layout.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    let mut precision = None;
    for spec in layout.specs() {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != spec.name || shape != spec.shape {
            return Err(Error::ConfigMismatch(format!(
                "stored {name} {shape:?}, expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        let p = match r.u8()? {
            4 => Precision::F32,
            8 => Precision::F64,
            other => return Err(Error::CorruptCheckpoint(format!("precision code {other}"))),
        };
        if precision.is_some_and(|q| q != p) {
            return Err(Error::CorruptCheckpoint("mixed precisions".into()));
        }
        precision = Some(p);
        values.push(Tensor::new(&shape, r.values(p, spec.numel())?)?);
    }
    let precision = precision.unwrap_or(Precision::F64);
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let mut moments = Vec::with_capacity(2 * count);
            for i in 0..2 * count {
                let spec = &layout.specs()[i % count];
                moments.push(Tensor::new(&spec.shape, r.values(precision, spec.numel())?)?);
            }
            let v = moments.split_off(count);
            Some(AdamState { m: moments, v, t })
        }
        other => return Err(Error::CorruptCheckpoint(format!("optimiser flag {other}"))),
    };
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        config,
        precision,
        params: ParamStore::from_values(layout, values)?,
        adam,
    })
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    config: &ModelConfig,
    params: &ParamStore<T>,
    adam: Option<&AdamState<T>>,
) -> Result<()> {
    fs::write(path, encode(config, params, adam)).map_err(io(path))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode(&fs::read(path).map_err(io(path))?)
}

/// Load and require the stored model to equal `expected`.
pub fn load_matching<T: Scalar>(path: &Path, expected: &ModelConfig) -> Result<Checkpoint<T>> {
    let ck = load_checkpoint(path)?;
    if &ck.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds\n{}\nrequested\n{}",
            model_to_text(&ck.config),
            model_to_text(expected)
        )));
    }
    Ok(ck)
}
