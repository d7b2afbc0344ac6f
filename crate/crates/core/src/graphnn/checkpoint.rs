//! Versioned binary checkpoint.
//!
//! Layout (little endian): magic `STARSECK`, `u32` version, `u32` header
//! length, JSON-encoded [`ModelConfig`], `u32` tensor count, then per tensor
//! `u64` rows, `u64` cols and `rows·cols` `f64` values in row-major order.

use std::fs;
use std::path::Path;

use super::model::{GnnModel, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"STARSECK";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &GnnModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&model.config)?;
    let mut out = Vec::with_capacity(32 + header.len() + 8 * model.params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let tensors = model.params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let (r, c) = t.dims()?;
        out.extend_from_slice(&(r as u64).to_le_bytes());
        out.extend_from_slice(&(c as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<GnnModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a starsec checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let hlen = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let count = r.u32()? as usize;
    if count != ModelParams::NAMES.len() {
        return Err(Error::Format(format!("expected 6 tensors, found {count}")));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let raw = r.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::matrix(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let params = ModelParams::from_tensors(tensors.try_into().expect("six tensors"));
    GnnModel::from_parts(config, params).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(model: &GnnModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<GnnModel> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphnn::graph::FeatureScaling;
    use crate::graphnn::model::PhaseHead;
    use crate::secrecy::Strategy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> GnnModel {
        let mut cfg = ModelConfig::new(
            3,
            5,
            Strategy::Conv,
            FeatureScaling {
                direct: 123.4,
                cascaded: 5.6e7,
            },
        );
        cfg.hidden = 7;
        cfg.phase_head = PhaseHead::Paired;
        GnnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        for (a, b) in back.params.flatten().iter().zip(m.params.flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&m, &p).unwrap();
        assert_eq!(load(&p).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = to_bytes(&model()).unwrap();
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[8] = 99;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
    }
}
