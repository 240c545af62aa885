//! Binary checkpoints: magic, version, config hash, realization digest, named f64 arrays.
//!
//! All integers and floats are little-endian. Strings are a `u32` byte length plus UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use crate::cgraph::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::training::Adam;

const MAGIC: &[u8; 8] = b"PNNDATCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub realization_digest: String,
    pub arrays: Vec<(String, Vec<f64>)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                reason: format!("truncated: need {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let b = self.take(n)?.to_vec();
        String::from_utf8(b).map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            offset: at as u64,
            reason: "string is not UTF-8".into(),
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config_hash);
        put_str(&mut out, &self.realization_digest);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, values) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                reason: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: 8,
                reason: format!("unsupported checkpoint version {version}"),
            });
        }
        let config_hash = r.string()?;
        let realization_digest = r.string()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let n = r.u64()? as usize;
            let raw = r.take(n.checked_mul(8).unwrap_or(usize::MAX))?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            arrays.push((name, values));
        }
        Ok(Self {
            config_hash,
            realization_digest,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Arrays under `prefix/`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        let p = format!("{prefix}/");
        self.arrays
            .iter()
            .filter_map(|(n, v)| n.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }
}

/// Every parameter value under `param/<name>`.
pub fn store_arrays(store: &ParamStore) -> Vec<(String, Vec<f64>)> {
    store.ids().map(|id| (format!("param/{}", store.get(id).name()), store.value(id).to_vec())).collect()
}

/// Adam state under `adam.<tag>/step`, `adam.<tag>.m/<name>` and `adam.<tag>.v/<name>`.
pub fn adam_arrays(tag: &str, adam: &Adam, store: &ParamStore) -> Vec<(String, Vec<f64>)> {
    let mut out = vec![(format!("adam.{tag}/step"), vec![adam.steps() as f64])];
    for (id, (m, v)) in adam.all_moments() {
        let name = store.get(*id).name();
        out.push((format!("adam.{tag}.m/{name}"), m.clone()));
        out.push((format!("adam.{tag}.v/{name}"), v.clone()));
    }
    out
}

/// Writes checkpointed values into a freshly built store; names and sizes must match exactly.
pub fn restore_store(ck: &Checkpoint, store: &mut ParamStore) -> Result<()> {
    let saved = ck.section("param");
    if saved.len() != store.len() {
        return Err(Error::Topology(format!("checkpoint holds {} parameters, model has {}", saved.len(), store.len())));
    }
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name().to_string();
        let v = saved
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Topology(format!("parameter `{name}` missing from checkpoint")))?;
        if v.1.len() != store.value(id).len() {
            return Err(Error::Topology(format!("parameter `{name}`: {} values saved, {} expected", v.1.len(), store.value(id).len())));
        }
        store.value_mut(id).copy_from_slice(&v.1);
    }
    Ok(())
}

/// Rebuilds an optimizer saved with [`adam_arrays`].
pub fn restore_adam(ck: &Checkpoint, tag: &str, store: &ParamStore) -> Result<Adam> {
    let mut adam = Adam::new();
    let step = ck.get(&format!("adam.{tag}/step")).and_then(|v| v.first().copied()).unwrap_or(0.0) as u64;
    let m = ck.section(&format!("adam.{tag}.m"));
    let v = ck.section(&format!("adam.{tag}.v"));
    let mut moments = BTreeMap::new();
    for id in store.ids() {
        let name = store.get(id).name();
        if let (Some(a), Some(b)) = (m.iter().find(|(n, _)| n == name), v.iter().find(|(n, _)| n == name)) {
            moments.insert(id, (a.1.clone(), b.1.clone()));
        }
    }
    adam.restore(step, moments);
    Ok(adam)
}
