//! Versioned binary weight files.
//!
//! Layout: magic `RPCK`, `u32` version, `u64` length + JSON descriptor,
//! `u64` tensor count, then per tensor `u32` rank, `u64` dims and
//! little-endian `f64` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::nets::{GeneratorArch, GeneratorNet, PoseArch, PoseNet};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RPCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Generator(GeneratorArch),
    Pose(PoseArch),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub params: Vec<Tensor>,
}

impl From<&PoseNet> for Checkpoint {
    fn from(net: &PoseNet) -> Self {
        Self {
            arch: Architecture::Pose(*net.arch()),
            params: net.params().to_vec(),
        }
    }
}

impl From<&GeneratorNet> for Checkpoint {
    fn from(net: &GeneratorNet) -> Self {
        Self {
            arch: Architecture::Generator(*net.arch()),
            params: net.params().to_vec(),
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = serde_json::to_vec(&self.arch).expect("descriptor serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u64).to_le_bytes());
        out.extend_from_slice(&desc);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for t in &self.params {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(4)? == MAGIC, Parse, "not a checkpoint file (bad magic)");
        let version = r.u32()?;
        ensure!(version == FORMAT_VERSION, Parse, "unsupported checkpoint version {version}");
        let desc_len = r.u64()? as usize;
        let arch: Architecture = serde_json::from_slice(r.take(desc_len)?)
            .map_err(|e| Error::Parse(format!("checkpoint descriptor: {e}")))?;
        let count = r.u64()? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let rank = r.u32()? as usize;
            ensure!(rank <= 8, Parse, "tensor rank {rank} too large");
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            ensure!(n <= (bytes.len() - r.pos) / 8, Parse, "truncated tensor data");
            let data = (0..n)
                .map(|_| r.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect::<Result<Vec<f64>>>()?;
            params.push(Tensor::new(&shape, data)?);
        }
        ensure!(r.pos == bytes.len(), Parse, "trailing bytes after checkpoint");
        let ckpt = Self { arch, params };
        match ckpt.arch {
            Architecture::Pose(a) => {
                PoseNet::from_params(a, ckpt.params.clone())?;
            }
            Architecture::Generator(a) => {
                GeneratorNet::from_params(a, ckpt.params.clone())?;
            }
        }
        Ok(ckpt)
    }

    /// Write atomically through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn into_pose(self) -> Result<PoseNet> {
        match self.arch {
            Architecture::Pose(a) => PoseNet::from_params(a, self.params),
            Architecture::Generator(_) => Err(Error::Validation("checkpoint holds a generator, not a pose network".into())),
        }
    }

    pub fn into_generator(self) -> Result<GeneratorNet> {
        match self.arch {
            Architecture::Generator(a) => GeneratorNet::from_params(a, self.params),
            Architecture::Pose(_) => Err(Error::Validation("checkpoint holds a pose network, not a generator".into())),
        }
    }
}

/// SHA-256 over the exact bit patterns of the weights, as hex.
pub fn weights_hash(params: &[Tensor]) -> String {
    let mut h = Sha256::new();
    for t in params {
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.bytes.len() - self.pos >= n, Parse, "truncated checkpoint");
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
