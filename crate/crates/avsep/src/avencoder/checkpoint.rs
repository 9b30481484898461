//! Checkpoint container: named parameters plus config snapshot and
//! provenance in a single binary file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "AVCK"
//! version u32      currently 1
//! prov    u8       0 = pretrained, 1 = scratch, 2 = finetuned
//! seed    u64
//! cfg_len u32      followed by cfg_len bytes of UTF-8 JSON (ModelConfig)
//! n       u32      parameter count, then n records of:
//!   name_len u32, name bytes (UTF-8)
//!   rows u32, cols u32
//!   rows*cols f32 values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::avencoder::{param_group, EncoderConfig, GROUP_FEATURE_EXTRACTION, GROUP_SSL_BLOCK};
use crate::error::AvsepError;
use crate::model::ModelConfig;
use crate::nn::ParamSet;
use crate::Result;

const MAGIC: &[u8; 4] = b"AVCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Pretrained,
    Scratch,
    Finetuned,
}

impl Provenance {
    fn code(self) -> u8 {
        match self {
            Provenance::Pretrained => 0,
            Provenance::Scratch => 1,
            Provenance::Finetuned => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Provenance::Pretrained),
            1 => Ok(Provenance::Scratch),
            2 => Ok(Provenance::Finetuned),
            other => Err(AvsepError::CheckpointFormat(format!(
                "unknown provenance code {other}"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Provenance::Pretrained => "pretrained",
            Provenance::Scratch => "scratch",
            Provenance::Finetuned => "finetuned",
        }
    }
}

/// Named parameter map with its config snapshot, provenance tag, and seed.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(
        params: ParamSet,
        config: ModelConfig,
        provenance: Provenance,
        seed: u64,
    ) -> Result<Self> {
        let ckpt = Checkpoint {
            params,
            config,
            provenance,
            seed,
        };
        ckpt.validate_groups()?;
        Ok(ckpt)
    }

    /// Every parameter must belong to a known group, and the encoder must be
    /// exactly covered by the feature-extraction and ssl-block groups (which
    /// are prefix-disjoint by construction).
    pub fn validate_groups(&self) -> Result<()> {
        let mut has_fe = false;
        let mut has_ssl = false;
        for name in self.params.names() {
            match param_group(name)? {
                GROUP_FEATURE_EXTRACTION => has_fe = true,
                GROUP_SSL_BLOCK => has_ssl = true,
                _ => {}
            }
        }
        if !has_fe || !has_ssl {
            return Err(AvsepError::CheckpointFormat(
                "checkpoint is missing encoder parameter groups".into(),
            ));
        }
        Ok(())
    }

    /// Encoder parameters only (both encoder groups, no heads).
    pub fn encoder_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (name, value) in self.params.iter() {
            if name.starts_with(GROUP_FEATURE_EXTRACTION) || name.starts_with(GROUP_SSL_BLOCK) {
                p.insert(name, value.clone());
            }
        }
        p
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.config.encoder
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.provenance.code());
        buf.extend_from_slice(&self.seed.to_le_bytes());

        let cfg = serde_json::to_vec(&self.config)
            .map_err(|e| AvsepError::CheckpointFormat(format!("config encode: {e}")))?;
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(&cfg);

        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, value) in self.params.iter() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
            buf.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
            for v in value.iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }

        let mut file = std::fs::File::create(path)
            .map_err(|e| AvsepError::io(path.display().to_string(), e))?;
        file.write_all(&buf)
            .map_err(|e| AvsepError::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| AvsepError::io(path.display().to_string(), e))?
            .read_to_end(&mut bytes)
            .map_err(|e| AvsepError::io(path.display().to_string(), e))?;
        let mut r = Reader { bytes: &bytes, at: 0 };

        if r.take(4)? != MAGIC {
            return Err(AvsepError::CheckpointFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(AvsepError::CheckpointFormat(format!(
                "unsupported version {version}"
            )));
        }
        let provenance = Provenance::from_code(r.u8()?)?;
        let seed = r.u64()?;
        let cfg_len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| AvsepError::CheckpointFormat(format!("config decode: {e}")))?;

        let n = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| AvsepError::CheckpointFormat(format!("name decode: {e}")))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut value = Array2::zeros((rows, cols));
            for i in 0..rows {
                for j in 0..cols {
                    value[(i, j)] = r.f32()? as f64;
                }
            }
            params.insert(name, value);
        }
        Checkpoint::new(params, config, provenance, seed)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(AvsepError::CheckpointFormat("truncated file".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
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

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
