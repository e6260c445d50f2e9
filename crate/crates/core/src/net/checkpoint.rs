//! Binary checkpoint format.
//!
//! ```text
//! "R21D"                  magic
//! u32                     format version (1)
//! u32 + bytes             network config as key=value text
//! u32                     entry count
//! entries, sorted by name:
//!     u32 + bytes         UTF-8 name
//!     .ect tensor         ECT1 header + f32 payload
//! ```
//! All integers are little-endian. Entries cover every parameter plus the
//! running mean and variance of every batch-norm layer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{build_network, Network, NetworkConfig};
use crate::ect::{self, Cursor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"R21D";
pub const VERSION: u32 = 1;

fn named_tensors(net: &Network<f32>) -> BTreeMap<String, &Tensor<f32>> {
    let mut out = BTreeMap::new();
    for p in net.params().iter() {
        out.insert(p.name.clone(), &p.value);
    }
    for n in net.norms() {
        out.insert(format!("{}.running_mean", n.name), &n.stats.mean);
        out.insert(format!("{}.running_var", n.name), &n.stats.var);
    }
    out
}

pub fn to_bytes(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = net.config().to_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let entries = named_tensors(net);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        ect::encode(t, &mut out);
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network<f32>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "checkpoint header")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: "checkpoint",
            expected: MAGIC,
            found: magic.try_into().unwrap(),
        });
    }
    let version = cur.u32("checkpoint header")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            what: "checkpoint",
            version,
        });
    }
    let cfg_len = cur.u32("checkpoint config")? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len, "checkpoint config")?).map_err(|e| Error::Malformed {
        what: "checkpoint",
        detail: format!("config is not UTF-8: {e}"),
    })?;
    let cfg = NetworkConfig::from_text(cfg_text)?;
    let mut net = build_network(&cfg, 0)?;

    let count = cur.u32("checkpoint entries")? as usize;
    let mut loaded = BTreeMap::new();
    for _ in 0..count {
        let len = cur.u32("checkpoint entry name")? as usize;
        let name = std::str::from_utf8(cur.take(len, "checkpoint entry name")?)
            .map_err(|e| Error::Malformed {
                what: "checkpoint",
                detail: format!("entry name is not UTF-8: {e}"),
            })?
            .to_string();
        let (t, used) = ect::decode(&bytes[cur.pos..]).map_err(|e| match e {
            Error::Truncated { detail, .. } => Error::Truncated {
                what: "checkpoint tensor",
                detail: format!("{name}: {detail}"),
            },
            other => other,
        })?;
        cur.pos += used;
        if loaded.insert(name.clone(), t).is_some() {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: format!("duplicate entry {name:?}"),
            });
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Malformed {
            what: "checkpoint",
            detail: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }

    let expected: BTreeMap<String, Vec<usize>> = named_tensors(&net)
        .into_iter()
        .map(|(k, v)| (k, v.shape().to_vec()))
        .collect();
    for (name, shape) in &expected {
        let t = loaded.get(name).ok_or_else(|| Error::Malformed {
            what: "checkpoint",
            detail: format!("missing entry {name:?}"),
        })?;
        if t.shape() != shape.as_slice() {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                expected: shape.clone(),
                found: t.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = loaded.keys().find(|k| !expected.contains_key(*k)) {
        return Err(Error::Malformed {
            what: "checkpoint",
            detail: format!("unknown entry {extra:?}"),
        });
    }

    for p in net.params_mut().iter_mut() {
        p.value = loaded.remove(&p.name).expect("checked above");
    }
    for n in net.norms_mut() {
        n.stats.mean = loaded
            .remove(&format!("{}.running_mean", n.name))
            .expect("checked above");
        n.stats.var = loaded
            .remove(&format!("{}.running_var", n.name))
            .expect("checked above");
    }
    Ok(net)
}

pub fn save(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
