//! `VGRD` checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VGRD"  magic
//! u32     format version (1)
//! u32     length of the config JSON, then that many UTF-8 bytes
//! repeated until end of file:
//!   u32   name length, then the name bytes
//!   u32   rank, then rank x u64 dims
//!   f64   values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use viewgrid_core::model::{ModelConfig, Network};
use viewgrid_core::Tensor;

pub const MAGIC: &[u8; 4] = b"VGRD";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a VGRD checkpoint")]
    Magic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// A checkpoint's parameters and the resolved run configuration it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, config: serde_json::Value) -> Self {
        Self { config, params: net.store.iter().map(|p| (p.name.clone(), p.value.clone())).collect() }
    }

    pub fn model_config(&self) -> Result<ModelConfig, CheckpointError> {
        let model = self.config.get("model").cloned().unwrap_or_default();
        serde_json::from_value(model).map_err(|e| CheckpointError::Malformed(format!("model config: {e}")))
    }

    pub fn network(&self) -> Result<Network, CheckpointError> {
        let cfg = self.model_config()?;
        let mut net = Network::new(&cfg, 0).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        net.load_values(&self.params).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok(net)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config).map_err(std::io::Error::from)?;
        w.write_all(&len_u32(cfg.len())?.to_le_bytes())?;
        w.write_all(&cfg)?;
        for (name, t) in &self.params {
            w.write_all(&len_u32(name.len())?.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&len_u32(t.rank())?.to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let cfg_len = read_u32(&mut r)? as usize;
        let cfg = read_bytes(&mut r, cfg_len)?;
        let config = serde_json::from_slice(&cfg).map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
        let mut params = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match r.read(&mut len[..1])? {
                0 => break,
                _ => read_exact(&mut r, &mut len[1..])?,
            }
            let name = read_bytes(&mut r, u32::from_le_bytes(len) as usize)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(
                    usize::try_from(u64::from_le_bytes(b))
                        .map_err(|_| CheckpointError::Malformed("dimension overflow".into()))?,
                );
            }
            let n: usize = shape.iter().product();
            let raw = read_bytes(&mut r, n.checked_mul(8).ok_or(CheckpointError::Malformed("size overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            params.push((name, t));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn len_u32(n: usize) -> Result<u32, CheckpointError> {
    u32::try_from(n).map_err(|_| CheckpointError::Malformed(format!("length {n} exceeds u32")))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated,
        _ => e.into(),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, CheckpointError> {
    let mut v = Vec::new();
    r.take(n as u64).read_to_end(&mut v)?;
    if v.len() != n {
        return Err(CheckpointError::Truncated);
    }
    Ok(v)
}
