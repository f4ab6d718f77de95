//! Checkpoint directories: `manifest.json` plus `params.bin`.
//!
//! `params.bin` layout (all integers u32 little-endian):
//!
//! ```text
//! b"KDGP" | version | record count
//! per record: name length | name (UTF-8) | rank | dims... | f32 LE values
//! ```
//!
//! Records cover every generator and discriminator tensor, including batch-norm
//! running statistics, named `generator.*` / `discriminator.*`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::{GanPair, LossRecord, Role};
use crate::model::{ArchSpec, Discriminator, Generator};
use crate::nn::Parameterized;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"KDGP";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0} already exists (pass overwrite to replace it)")]
    Exists(PathBuf),
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error("tensor {name}: checkpoint shape {found:?} does not match architecture shape {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {0} missing from checkpoint")]
    Missing(String),
    #[error("checkpoint has unexpected tensor {0}")]
    Unexpected(String),
    #[error("checkpoint architecture differs: {0}")]
    ArchMismatch(String),
}

impl CheckpointError {
    /// True when the file is readable but does not fit the requested architecture.
    pub fn is_incompatible(&self) -> bool {
        matches!(self, Self::ShapeMismatch { .. } | Self::Missing(_) | Self::Unexpected(_) | Self::ArchMismatch(_) | Self::Version(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub role: Role,
    pub arch: ArchSpec,
    pub seed: u64,
    pub epoch: usize,
    /// Structure or schedule that produced the weights, if any.
    pub structure: Option<String>,
    /// Mean losses of the last epoch.
    pub losses: Option<LossRecord>,
    pub auc: Option<f64>,
    pub created: String,
    /// Dataset and class the network was trained on.
    pub source: String,
}

impl Manifest {
    pub fn new(role: Role, arch: ArchSpec, seed: u64, epoch: usize, source: impl Into<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            role,
            arch,
            seed,
            epoch,
            structure: None,
            losses: None,
            auc: None,
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            source: source.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub gen: Generator<f32>,
    pub disc: Discriminator<f32>,
}

impl Checkpoint {
    pub fn from_pair(manifest: Manifest, pair: &GanPair<f32>) -> Self {
        Self { manifest, gen: pair.gen.clone(), disc: pair.disc.clone() }
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        let (mut p, mut b) = (Vec::new(), Vec::new());
        self.gen.visit("generator", &mut p, &mut b);
        out.append(&mut p);
        out.append(&mut b);
        self.disc.visit("discriminator", &mut p, &mut b);
        out.append(&mut p);
        out.append(&mut b);
        out
    }

    /// Serializes every tensor in the `params.bin` layout.
    pub fn encode_params(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Rebuilds networks of `arch` from `params.bin` bytes. Every tensor of the
    /// architecture must be present with the same shape.
    pub fn decode_params(manifest: Manifest, bytes: &[u8]) -> Result<Self, CheckpointError> {
        let arch = manifest.arch;
        arch.validate().map_err(|e| CheckpointError::Format(e.to_string()))?;
        let mut ck = Self { gen: Generator::zeroed(&arch), disc: Discriminator::zeroed(&arch), manifest };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = r.u32()? as usize;
        let mut records = std::collections::BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let values: Vec<f32> = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if records.insert(name.clone(), (shape, values)).is_some() {
                return Err(CheckpointError::Format(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }

        let (mut p, mut b) = (Vec::new(), Vec::new());
        ck.gen.visit_mut("generator", &mut p, &mut b);
        ck.disc.visit_mut("discriminator", &mut p, &mut b);
        for (name, t) in p.into_iter().chain(b) {
            let (shape, values) = records.remove(&name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            if shape != t.shape() {
                return Err(CheckpointError::ShapeMismatch { name, expected: t.shape().to_vec(), found: shape });
            }
            t.data_mut().copy_from_slice(&values);
        }
        if let Some(name) = records.into_keys().next() {
            return Err(CheckpointError::Unexpected(name));
        }
        Ok(ck)
    }

    /// Writes `manifest.json` and `params.bin` into `dir`, creating it. Refuses
    /// to replace an existing checkpoint unless `overwrite` is set.
    pub fn save(&self, dir: &Path, overwrite: bool) -> Result<(), CheckpointError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !overwrite && (manifest_path.exists() || dir.join(PARAMS_FILE).exists()) {
            return Err(CheckpointError::Exists(dir.to_path_buf()));
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let params_path = dir.join(PARAMS_FILE);
        fs::write(&params_path, self.encode_params()).map_err(io_err(&params_path))?;
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version(manifest.format_version));
        }
        let params_path = dir.join(PARAMS_FILE);
        let bytes = fs::read(&params_path).map_err(io_err(&params_path))?;
        Self::decode_params(manifest, &bytes)
    }

    /// Loads a checkpoint and requires its tensors to fit `expected`.
    pub fn load_for(dir: &Path, expected: &ArchSpec) -> Result<Self, CheckpointError> {
        let ck = Self::load(dir)?;
        if ck.manifest.arch == *expected {
            return Ok(ck);
        }
        let mut manifest = ck.manifest.clone();
        manifest.arch = *expected;
        Self::decode_params(manifest, &ck.encode_params())?;
        Err(CheckpointError::ArchMismatch(format!("{:?} vs expected {:?}", ck.manifest.arch, expected)))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| CheckpointError::Format("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
