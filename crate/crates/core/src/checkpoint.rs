//! Binary tensor checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "KEEPCKPT" | format_version u32 | meta_len u32 | meta (JSON, meta_len bytes)
//! | n_tensors u32 | n_tensors × (name_len u16 | name | rows u32 | cols u32)
//! | tensor data as f32, in manifest order
//! ```
//!
//! `meta` echoes the model config plus any run state (cursor, version tag,
//! optimizer step counts).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde_json::Value;

use crate::error::{KeepError, Result};
use crate::nncore::{AdamState, Matrix, Moments, Parameterized};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KEEPCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub meta: Value,
    pub tensors: Vec<(String, Matrix)>,
}

impl TensorFile {
    pub fn new(meta: Value) -> Self {
        TensorFile {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push_params<P: Parameterized + ?Sized>(&mut self, model: &P) {
        for (name, m) in model.named_params() {
            self.tensors.push((name, m.clone()));
        }
    }

    pub fn push_adam(&mut self, adam: &AdamState) {
        for (name, mo) in adam.moments() {
            self.tensors.push((format!("adam.m.{name}"), mo.m.clone()));
            self.tensors.push((format!("adam.v.{name}"), mo.v.clone()));
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len()).map_err(|_| KeepError::Format(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        }
        for (_, m) in &self.tensors {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        read_exact(&mut cur, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(KeepError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut cur)?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(KeepError::Format(format!(
                "checkpoint format version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let meta_len = read_u32(&mut cur)? as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact(&mut cur, &mut meta)?;
        let meta: Value = serde_json::from_slice(&meta)?;
        let n = read_u32(&mut cur)? as usize;
        let mut manifest = Vec::with_capacity(n);
        for _ in 0..n {
            let mut lb = [0u8; 2];
            read_exact(&mut cur, &mut lb)?;
            let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
            read_exact(&mut cur, &mut name)?;
            let name = String::from_utf8(name).map_err(|e| KeepError::Format(e.to_string()))?;
            let rows = read_u32(&mut cur)? as usize;
            let cols = read_u32(&mut cur)? as usize;
            manifest.push((name, rows, cols));
        }
        let mut tensors = Vec::with_capacity(n);
        for (name, rows, cols) in manifest {
            let mut buf = vec![0u8; rows * cols * 4];
            read_exact(&mut cur, &mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(KeepError::Format("trailing bytes after tensor data".into()));
        }
        Ok(TensorFile { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        TensorFile::from_bytes(&fs::read(path)?)
    }

    pub fn tensor_map(&self) -> BTreeMap<&str, &Matrix> {
        self.tensors.iter().map(|(n, m)| (n.as_str(), m)).collect()
    }

    /// Copy tensors into `model`. Tensors whose names start with one of
    /// `foreign_prefixes` belong to something else and are ignored; any other
    /// unmatched name is reported as extra.
    pub fn restore_params<P: Parameterized + ?Sized>(&self, model: &mut P, foreign_prefixes: &[&str]) -> Result<()> {
        let map = self.tensor_map();
        let wanted: BTreeSet<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let missing: Vec<String> = wanted.iter().filter(|n| !map.contains_key(n.as_str())).cloned().collect();
        let extra: Vec<String> = map
            .keys()
            .filter(|n| !wanted.contains(**n) && !foreign_prefixes.iter().any(|p| n.starts_with(p)))
            .map(|n| n.to_string())
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(KeepError::Manifest { missing, extra });
        }
        for (name, p) in model.named_params_mut() {
            let src = map[name.as_str()];
            if src.shape() != p.shape() {
                return Err(KeepError::Shape {
                    context: "checkpoint tensor",
                    expected: format!("{name} {:?}", p.shape()),
                    actual: format!("{:?}", src.shape()),
                });
            }
            p.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Rebuild optimizer moments saved by [`TensorFile::push_adam`]; `steps`
    /// maps parameter name to its step count.
    pub fn restore_adam(&self, adam: &mut AdamState, steps: &BTreeMap<String, u64>) -> Result<()> {
        let map = self.tensor_map();
        for (name, &step) in steps {
            let m = map
                .get(format!("adam.m.{name}").as_str())
                .ok_or_else(|| KeepError::Manifest {
                    missing: vec![format!("adam.m.{name}")],
                    extra: vec![],
                })?;
            let v = map
                .get(format!("adam.v.{name}").as_str())
                .ok_or_else(|| KeepError::Manifest {
                    missing: vec![format!("adam.v.{name}")],
                    extra: vec![],
                })?;
            adam.insert_moments(
                name.clone(),
                Moments {
                    step,
                    m: (*m).clone(),
                    v: (*v).clone(),
                },
            );
        }
        Ok(())
    }
}

pub fn adam_steps(adam: &AdamState) -> BTreeMap<String, u64> {
    adam.moments().iter().map(|(n, m)| (n.clone(), m.step)).collect()
}

fn read_exact(cur: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| KeepError::Format("truncated checkpoint".into()))
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{seeded_rng, Activation, MlpStack};

    #[test]
    fn roundtrip_and_restore() {
        let mut rng = seeded_rng(5);
        let a = MlpStack::new("net", &[3, 4, 2], Activation::None, &mut rng).unwrap();
        let mut f = TensorFile::new(serde_json::json!({"kind": "test"}));
        f.push_params(&a);
        let bytes = f.to_bytes().unwrap();
        let back = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        let mut b = MlpStack::new("net", &[3, 4, 2], Activation::None, &mut rng).unwrap();
        back.restore_params(&mut b, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_mismatch_lists_names() {
        let mut rng = seeded_rng(5);
        let a = MlpStack::new("net", &[3, 2], Activation::None, &mut rng).unwrap();
        let mut f = TensorFile::new(Value::Null);
        f.push_params(&a);
        let mut other = MlpStack::new("other", &[3, 2], Activation::None, &mut rng).unwrap();
        match f.restore_params(&mut other, &[]).unwrap_err() {
            KeepError::Manifest { missing, extra } => {
                assert_eq!(missing, vec!["other.l0.bias", "other.l0.weight"]);
                assert_eq!(extra, vec!["net.l0.bias", "net.l0.weight"]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(TensorFile::from_bytes(b"NOTACKPTxxxx").is_err());
        let f = TensorFile::new(Value::Null);
        let bytes = f.to_bytes().unwrap();
        assert!(TensorFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
