//! The `NMWT` binary container and its JSON sidecar.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `NMWT` |
//! | 4 | version, `u32` = 1 |
//! | 1 | kind tag, `u8` |
//! | 4 | row width `dim`, `u32` |
//! | 8 | row count, `u64` |
//! | 8·dim·count | payload, `f64` |
//! | 4 | CRC32 of every preceding byte |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"NMWT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Weights,
    Traj,
    Vae,
    Cfm,
    Mmfm,
    Jko,
}

impl Kind {
    pub fn tag(self) -> u8 {
        match self {
            Kind::Weights => 0,
            Kind::Traj => 1,
            Kind::Vae => 2,
            Kind::Cfm => 3,
            Kind::Mmfm => 4,
            Kind::Jko => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Kind::Weights,
            1 => Kind::Traj,
            2 => Kind::Vae,
            3 => Kind::Cfm,
            4 => Kind::Mmfm,
            5 => Kind::Jko,
            _ => return None,
        })
    }
}

/// A `count × dim` block of `f64` rows with a kind tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub dim: u32,
    pub count: u64,
    pub payload: Vec<f64>,
}

impl Container {
    pub fn new(kind: Kind, dim: usize, payload: Vec<f64>) -> CliResult<Self> {
        let dim32 = u32::try_from(dim).map_err(|_| CliError::Data("row width exceeds u32".into()))?;
        if dim == 0 {
            if !payload.is_empty() {
                return Err(CliError::Data("zero-width rows with a nonempty payload".into()));
            }
        } else if payload.len() % dim != 0 {
            return Err(CliError::Data(format!(
                "payload of {} values is not a multiple of width {dim}",
                payload.len()
            )));
        }
        let count = if dim == 0 { 0 } else { (payload.len() / dim) as u64 };
        Ok(Self { kind, dim: dim32, count, payload })
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.payload.chunks(self.dim.max(1) as usize)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.tag());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |m: &str| CliError::Data(format!("container: {m}"));
        if bytes.len() < HEADER_LEN + 4 {
            return Err(bad("file is shorter than the header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let crc = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != crc {
            return Err(bad("CRC mismatch"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = Kind::from_tag(body[8]).ok_or_else(|| bad(&format!("unknown kind tag {}", body[8])))?;
        let dim = u32::from_le_bytes(body[9..13].try_into().expect("4 bytes"));
        let count = u64::from_le_bytes(body[13..21].try_into().expect("8 bytes"));
        let payload_bytes = &body[HEADER_LEN..];
        let expected = (dim as u128) * (count as u128) * 8;
        if expected != payload_bytes.len() as u128 {
            return Err(bad(&format!("count·dim·8 = {expected} but the payload holds {} bytes", payload_bytes.len())));
        }
        let payload =
            payload_bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { kind, dim, count, payload })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Reads a container and checks its kind.
    pub fn read_kind(path: &Path, kinds: &[Kind]) -> CliResult<Self> {
        let c = Self::read(path)?;
        if !kinds.contains(&c.kind) {
            return Err(CliError::Data(format!(
                "{}: expected a {kinds:?} container, found {:?}",
                path.display(),
                c.kind
            )));
        }
        Ok(c)
    }
}

/// `<file>.meta.json` next to a container.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> CliResult<()> {
    let p = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))
}

pub fn read_sidecar<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let p = sidecar_path(path);
    let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}
