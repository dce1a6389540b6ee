//! Parameter container.
//!
//! ```text
//! magic      8 bytes  "EVCK0001"
//! kind       u8
//! config     u32 length + UTF-8 `key = value` lines
//! count      u32
//! records    count x (u32 name length, name, u32 rank, rank x u32 extent,
//!            extent product x f32)
//! checksum   u64 FNV-1a of every byte between magic and checksum
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::model::{ArchKind, Model, ModelConfig};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EVCK0001";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn encode_checkpoint<T: Element>(model: &Model<T>) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.push(model.kind.code());
    let cfg = model.config.to_kv();
    out.extend((cfg.len() as u32).to_le_bytes());
    out.extend(cfg.as_bytes());
    out.extend((model.params.len() as u32).to_le_bytes());
    for p in model.params.iter() {
        out.extend((p.name.len() as u32).to_le_bytes());
        out.extend(p.name.as_bytes());
        out.extend((p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend((v.as_f64() as f32).to_le_bytes());
        }
    }
    let sum = fnv1a(&out[CHECKPOINT_MAGIC.len()..]);
    out.extend(sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(what));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Decodes a checkpoint, verifying magic and checksum before anything else.
pub fn decode_checkpoint<T: Element>(bytes: &[u8]) -> Result<Model<T>> {
    let magic_len = CHECKPOINT_MAGIC.len();
    if bytes.len() < magic_len {
        return Err(Error::Truncated("magic"));
    }
    if &bytes[..magic_len] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..magic_len]).into_owned(),
        });
    }
    if bytes.len() < magic_len + 8 {
        return Err(Error::Truncated("checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = fnv1a(&body[magic_len..]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader {
        bytes: body,
        pos: magic_len,
    };
    let code = r.take(1, "architecture kind")?[0];
    let kind = ArchKind::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown architecture code {code}")))?;
    let cfg_len = r.u32("config length")?;
    let cfg_text = std::str::from_utf8(r.take(cfg_len, "config")?)
        .map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let config = ModelConfig::from_kv(cfg_text).map_err(|e| Error::ConfigMismatch(e.to_string()))?;
    let count = r.u32("parameter count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32("parameter name length")?;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("parameter rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter extent")?);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(bytes_needed) = n.and_then(|n| n.checked_mul(4)) else {
            return Err(Error::Format(format!("parameter '{name}' is implausibly large")));
        };
        let raw = r.take(bytes_needed, "parameter values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        params
            .insert(name, Tensor::new(shape, data)?)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Model::from_params(kind, config, params)
}

/// Writes through a temporary file and renames, so an interrupted save
/// never clobbers the previous checkpoint.
pub fn save_checkpoint<T: Element>(path: &Path, model: &Model<T>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(model))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Model<T>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint that must match `kind` and `config`. On mismatch the
/// first differing parameter is named.
pub fn load_checkpoint_for<T: Element>(path: &Path, kind: ArchKind, config: &ModelConfig) -> Result<Model<T>> {
    let loaded: Model<T> = load_checkpoint(path)?;
    if loaded.kind == kind && &loaded.config == config {
        return Ok(loaded);
    }
    let stored_kind = loaded.kind;
    let stored_cfg = loaded.config.to_kv();
    Model::from_params(kind, config.clone(), loaded.params)?;
    if stored_kind != kind {
        return Err(Error::ConfigMismatch(format!("checkpoint is {stored_kind}, expected {kind}")));
    }
    let wanted = config.to_kv();
    let diff: Vec<&str> = stored_cfg
        .lines()
        .zip(wanted.lines())
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a)
        .collect();
    Err(Error::ConfigMismatch(format!("checkpoint has {}", diff.join(", "))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model<f32> {
        Model::new(ArchKind::Bimodal, ModelConfig::reduced(), 3).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = model();
        let back: Model<f32> = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&model());
        for cut in [0, 4, 8, 20, bytes.len() - 1] {
            let err = decode_checkpoint::<f32>(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::Truncated(_) | Error::Checksum { .. }),
                "cut at {cut}: {err}"
            );
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x40;
        assert!(matches!(decode_checkpoint::<f32>(&flipped), Err(Error::Checksum { .. })));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&magic), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn mismatch_names_first_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.evck");
        save_checkpoint(&path, &model()).unwrap();
        let cfg = ModelConfig::reduced();
        assert!(load_checkpoint_for::<f32>(&path, ArchKind::Bimodal, &cfg).is_ok());
        let mut wider = cfg.clone();
        wider.widths[2] = 6;
        match load_checkpoint_for::<f32>(&path, ArchKind::Bimodal, &wider) {
            Err(Error::ParamMismatch { name, .. }) => assert_eq!(name, "rgb.enc2.conv1.weight"),
            other => panic!("unexpected {other:?}"),
        }
        let mut drop = cfg;
        drop.dropout = 0.5;
        assert!(matches!(
            load_checkpoint_for::<f32>(&path, ArchKind::Bimodal, &drop),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
