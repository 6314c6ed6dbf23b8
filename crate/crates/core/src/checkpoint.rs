//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `CHRR`, version `u32`, 32-byte config
//! digest, then parameter blocks until end of input. A block is a `u16` name
//! length, the UTF-8 name, a `u8` rank, `rank` `u32` dims and the `f64`
//! values. The model spec itself lives in a JSON sidecar next to the binary
//! (`<path>.json`) and must hash to the stored digest.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::layers::Tensor;
use crate::model::{Model, ModelSpec};
use crate::{io, rng};

pub const MAGIC: [u8; 4] = *b"CHRR";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(spec: &ModelSpec, model: &Model) -> Self {
        Self {
            digest: spec.digest(),
            blocks: model.params().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        for (name, t) in &self.blocks {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("parameter name too long: {} bytes", name.len())))?;
            if t.shape().len() > MAX_RANK {
                return Err(Error::Format(format!("parameter {name} has rank {}", t.shape().len())));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let mut blocks = Vec::new();
        while r.pos < bytes.len() {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            if rank > MAX_RANK {
                return Err(Error::Format(format!("parameter {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut count = 1usize;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                count = count
                    .checked_mul(d)
                    .ok_or_else(|| Error::Format(format!("parameter {name} is too large")))?;
                shape.push(d);
            }
            let nbytes = count
                .checked_mul(8)
                .ok_or_else(|| Error::Format(format!("parameter {name} is too large")))?;
            let data = r
                .take(nbytes)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if blocks.iter().any(|(n, _): &(String, Tensor)| *n == name) {
                return Err(Error::Format(format!("duplicate parameter block {name}")));
            }
            blocks.push((name, Tensor::from_vec(&shape, data)?));
        }
        Ok(Self { digest, blocks })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Rebuilds a model from a spec and a decoded checkpoint.
pub fn restore(spec: &ModelSpec, ckpt: &Checkpoint) -> Result<Model> {
    if ckpt.digest != spec.digest() {
        return Err(Error::Format("checkpoint digest does not match its model config".into()));
    }
    // Initial values are overwritten; the stream only fixes the layout.
    let mut model = Model::new(spec, &mut rng::from_seed(0))?;
    model.load_params(&ckpt.blocks)?;
    Ok(model)
}

/// Writes the checkpoint and its JSON sidecar atomically.
pub fn save(path: &Path, spec: &ModelSpec, model: &Model) -> Result<()> {
    let bytes = Checkpoint::from_model(spec, model).encode()?;
    let json = serde_json::to_vec_pretty(spec).map_err(|e| Error::Format(e.to_string()))?;
    io::write_atomic(&sidecar_path(path), &json)?;
    io::write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<(ModelSpec, Model)> {
    let side = sidecar_path(path);
    let json = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let spec: ModelSpec =
        serde_json::from_slice(&json).map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = restore(&spec, &Checkpoint::decode(&bytes)?)?;
    Ok((spec, model))
}
