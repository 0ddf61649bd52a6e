//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   8 bytes  "TWRLCKPT"
//! version u32
//! hash    u64      Architecture::hash
//! archlen u32, arch JSON bytes
//! step    u64
//! n       u64, n × f64 parameters
//! adam    u8 flag; if 1: t u64, n × f64 first moments, n × f64 second moments
//! ```

use std::io::Write;
use std::path::Path;

use super::{Architecture, PolicyParams};
use crate::train::AdamState;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"TWRLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: PolicyParams,
    pub adam: Option<AdamState>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arch_json = serde_json::to_vec(&self.params.arch)?;
        let n = self.params.values.len();
        let mut out = Vec::with_capacity(64 + arch_json.len() + n * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.params.arch.hash().to_le_bytes());
        out.extend_from_slice(&(arch_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&arch_json);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        put_f64s(&mut out, &self.params.values);
        match &self.adam {
            Some(st) => {
                if st.m.len() != n || st.v.len() != n {
                    return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
                }
                out.push(1);
                out.extend_from_slice(&st.t.to_le_bytes());
                put_f64s(&mut out, &st.m);
                put_f64s(&mut out, &st.v);
            }
            None => out.push(0),
        }
        Ok(out)
    }

    /// Decode, refusing any architecture whose hash differs from `expected`.
    pub fn from_bytes(bytes: &[u8], expected: Option<&Architecture>) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hash = r.u64()?;
        if let Some(exp) = expected {
            if exp.hash() != hash {
                return Err(Error::Checkpoint(format!(
                    "architecture hash mismatch: checkpoint {hash:016x}, expected {:016x}",
                    exp.hash()
                )));
            }
        }
        let arch_len = r.u32()? as usize;
        let arch: Architecture = serde_json::from_slice(r.take(arch_len)?)?;
        if arch.hash() != hash {
            return Err(Error::Checkpoint("stored architecture does not match its hash".into()));
        }
        let step = r.u64()?;
        let n = r.u64()? as usize;
        let values = r.f64s(n)?;
        let params = PolicyParams::from_values(arch, values)?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let m = r.f64s(n)?;
                let v = r.f64s(n)?;
                Some(AdamState { t, m, v })
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { step, params, adam })
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<&Architecture>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected)
    }
}
