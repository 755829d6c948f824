//! Immutable, versioned knowledge snapshot and its file format.
//!
//! ```text
//! magic "KSNP" | format u32 | version u32 | dim u32 | uc_dim u32
//! | n_users u64 | n_items u64 | n_uc u64 | published_at u64
//! | n_users × (user u64 | dim × f32)
//! | n_items × (item u64 | dim × f32)
//! | n_uc × (user u64 | category u32 | uc_dim × f32)
//! ```
//!
//! All integers and floats little-endian; each run sorted by key.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{KeepError, Result};
use crate::servingkit::compose_into;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"KSNP";
pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

pub const FOUND_USER: u8 = 1;
pub const FOUND_ITEM: u8 = 2;
pub const FOUND_UC: u8 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeSnapshot {
    version: u32,
    dim: usize,
    uc_dim: usize,
    published_at: u64,
    users: BTreeMap<u64, Vec<f32>>,
    items: BTreeMap<u64, Vec<f32>>,
    user_categories: BTreeMap<(u64, u32), Vec<f32>>,
}

impl KnowledgeSnapshot {
    pub fn new(version: u32, dim: usize, uc_dim: usize, published_at: u64) -> Self {
        KnowledgeSnapshot {
            version,
            dim,
            uc_dim,
            published_at,
            users: BTreeMap::new(),
            items: BTreeMap::new(),
            user_categories: BTreeMap::new(),
        }
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn uc_dim(&self) -> usize {
        self.uc_dim
    }

    pub fn published_at(&self) -> u64 {
        self.published_at
    }

    /// Width of a composed serving vector: `3·dim + uc_dim`.
    pub fn composed_dim(&self) -> usize {
        3 * self.dim + self.uc_dim
    }

    pub fn entry_count(&self) -> usize {
        self.users.len() + self.items.len() + self.user_categories.len()
    }

    pub fn users(&self) -> &BTreeMap<u64, Vec<f32>> {
        &self.users
    }

    pub fn items(&self) -> &BTreeMap<u64, Vec<f32>> {
        &self.items
    }

    pub fn user_categories(&self) -> &BTreeMap<(u64, u32), Vec<f32>> {
        &self.user_categories
    }

    fn check(&self, what: &'static str, want: usize, got: usize) -> Result<()> {
        if want != got {
            return Err(KeepError::shape(what, want, got));
        }
        Ok(())
    }

    pub fn insert_user(&mut self, user: u64, v: Vec<f32>) -> Result<()> {
        self.check("snapshot user vector", self.dim, v.len())?;
        self.users.insert(user, v);
        Ok(())
    }

    pub fn insert_item(&mut self, item: u64, v: Vec<f32>) -> Result<()> {
        self.check("snapshot item vector", self.dim, v.len())?;
        self.items.insert(item, v);
        Ok(())
    }

    pub fn insert_user_category(&mut self, user: u64, category: u32, v: Vec<f32>) -> Result<()> {
        self.check("snapshot user-category vector", self.uc_dim, v.len())?;
        self.user_categories.insert((user, category), v);
        Ok(())
    }

    /// Compose `[K̂_u ; K̂_i ; K̂_u ⊙ K̂_i ; K̂_uc]` into `out`; missing keys
    /// contribute zeros. Returns the found mask.
    pub fn compose(&self, user: u64, item: u64, category: u32, out: &mut [f32]) -> u8 {
        let zeros_d;
        let zeros_uc;
        let mut mask = 0;
        let ku = match self.users.get(&user) {
            Some(v) => {
                mask |= FOUND_USER;
                v.as_slice()
            }
            None => {
                zeros_d = vec![0.0; self.dim];
                &zeros_d
            }
        };
        let zeros_i;
        let ki = match self.items.get(&item) {
            Some(v) => {
                mask |= FOUND_ITEM;
                v.as_slice()
            }
            None => {
                zeros_i = vec![0.0; self.dim];
                &zeros_i
            }
        };
        let kuc = match self.user_categories.get(&(user, category)) {
            Some(v) => {
                mask |= FOUND_UC;
                v.as_slice()
            }
            None => {
                zeros_uc = vec![0.0; self.uc_dim];
                &zeros_uc
            }
        };
        compose_into(ku, ki, kuc, out);
        mask
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            48 + self.users.len() * (8 + 4 * self.dim)
                + self.items.len() * (8 + 4 * self.dim)
                + self.user_categories.len() * (12 + 4 * self.uc_dim),
        );
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.uc_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.users.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.items.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.user_categories.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.published_at.to_le_bytes());
        let put = |out: &mut Vec<u8>, v: &[f32]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for (k, v) in &self.users {
            out.extend_from_slice(&k.to_le_bytes());
            put(&mut out, v);
        }
        for (k, v) in &self.items {
            out.extend_from_slice(&k.to_le_bytes());
            put(&mut out, v);
        }
        for ((u, c), v) in &self.user_categories {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
            put(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(KeepError::Format("not a knowledge snapshot (bad magic)".into()));
        }
        let format = r.u32()?;
        if format != SNAPSHOT_FORMAT_VERSION {
            return Err(KeepError::Format(format!("snapshot format {format} unsupported")));
        }
        let version = r.u32()?;
        let dim = r.u32()? as usize;
        let uc_dim = r.u32()? as usize;
        let n_users = r.u64()? as usize;
        let n_items = r.u64()? as usize;
        let n_uc = r.u64()? as usize;
        let published_at = r.u64()?;
        let mut snap = KnowledgeSnapshot::new(version, dim, uc_dim, published_at);
        for _ in 0..n_users {
            let k = r.u64()?;
            snap.users.insert(k, r.floats(dim)?);
        }
        for _ in 0..n_items {
            let k = r.u64()?;
            snap.items.insert(k, r.floats(dim)?);
        }
        for _ in 0..n_uc {
            let u = r.u64()?;
            let c = r.u32()?;
            snap.user_categories.insert((u, c), r.floats(uc_dim)?);
        }
        if r.pos != bytes.len() {
            return Err(KeepError::Format("trailing bytes in snapshot".into()));
        }
        if snap.users.len() != n_users || snap.items.len() != n_items || snap.user_categories.len() != n_uc {
            return Err(KeepError::Format("duplicate keys in snapshot".into()));
        }
        Ok(snap)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        KnowledgeSnapshot::from_bytes(&fs::read(path)?)
    }

    /// Conventional file name for version `v`.
    pub fn file_name(version: u32) -> String {
        format!("snapshot-{version:010}.ksnp")
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
            .ok_or_else(|| KeepError::Format("truncated snapshot".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> KnowledgeSnapshot {
        let mut s = KnowledgeSnapshot::new(3, 2, 3, 1_700_000_000);
        s.insert_user(7, vec![1.0, -2.0]).unwrap();
        s.insert_item(11, vec![0.5, 4.0]).unwrap();
        s.insert_user_category(7, 2, vec![9.0, 8.0, 7.0]).unwrap();
        s
    }

    #[test]
    fn bytes_roundtrip() {
        let s = sample();
        let back = KnowledgeSnapshot::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), s.to_bytes());
    }

    #[test]
    fn compose_and_missing() {
        let s = sample();
        let mut out = vec![f32::NAN; s.composed_dim()];
        let mask = s.compose(7, 11, 2, &mut out);
        assert_eq!(mask, FOUND_USER | FOUND_ITEM | FOUND_UC);
        assert_eq!(out, vec![1.0, -2.0, 0.5, 4.0, 0.5, -8.0, 9.0, 8.0, 7.0]);
        let mask = s.compose(99, 11, 2, &mut out);
        assert_eq!(mask, FOUND_ITEM);
        assert_eq!(out, vec![0.0, 0.0, 0.5, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dimension_checks() {
        let mut s = sample();
        assert!(s.insert_user(1, vec![1.0]).is_err());
        assert!(s.insert_user_category(1, 1, vec![1.0]).is_err());
    }

    #[test]
    fn truncated_rejected() {
        let b = sample().to_bytes();
        assert!(KnowledgeSnapshot::from_bytes(&b[..b.len() - 2]).is_err());
        assert!(KnowledgeSnapshot::from_bytes(b"XXXX").is_err());
    }
}
