use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use keep_core::servingkit::KnowledgeSnapshot;

use crate::error::{GkcError, Result};
use crate::protocol::{EntryStatus, LookupEntry, LookupResponse, Quadruple};

pub const DEFAULT_MAX_VERSIONS: usize = 5;

/// Version indicator resolving to the newest retained snapshot at the time
/// the batch is answered. Published versions start at 1.
pub const VERSION_LATEST: u32 = 0;

type Retained = Vec<Arc<KnowledgeSnapshot>>;

/// The retained snapshots, oldest first. Readers take one consistent view
/// per batch; publishes swap in a new list without blocking them.
pub struct VersionStore {
    max_versions: usize,
    retained: ArcSwap<Retained>,
    writer: Mutex<()>,
}

impl VersionStore {
    pub fn new(max_versions: usize) -> Self {
        assert!(max_versions > 0, "a store must retain at least one version");
        VersionStore {
            max_versions,
            retained: ArcSwap::from_pointee(Vec::new()),
            writer: Mutex::new(()),
        }
    }

    pub fn max_versions(&self) -> usize {
        self.max_versions
    }

    /// Publish `snapshot`; evicts the oldest version beyond capacity.
    pub fn publish(&self, snapshot: KnowledgeSnapshot) -> Result<u32> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let cur = self.retained.load_full();
        let v = snapshot.version();
        let reject = |reason: String| GkcError::Rejected { version: v, reason };
        if v == VERSION_LATEST {
            return Err(reject("version 0 is reserved for `latest`".into()));
        }
        if let Some(last) = cur.last() {
            if v <= last.version() {
                return Err(reject(format!("not newer than retained version {}", last.version())));
            }
            if (last.dim(), last.uc_dim()) != (snapshot.dim(), snapshot.uc_dim()) {
                return Err(reject(format!(
                    "dims ({}, {}) differ from retained ({}, {})",
                    snapshot.dim(),
                    snapshot.uc_dim(),
                    last.dim(),
                    last.uc_dim()
                )));
            }
        }
        let mut next: Retained = cur.iter().cloned().collect();
        next.push(Arc::new(snapshot));
        let evict = next.len().saturating_sub(self.max_versions);
        next.drain(..evict);
        self.retained.store(Arc::new(next));
        log::info!("published knowledge version {v}");
        Ok(v)
    }

    /// Retained versions, ascending.
    pub fn versions(&self) -> Vec<u32> {
        self.retained.load().iter().map(|s| s.version()).collect()
    }

    pub fn get(&self, version: u32) -> Option<Arc<KnowledgeSnapshot>> {
        resolve(&self.retained.load(), version).cloned()
    }

    pub fn latest(&self) -> Option<Arc<KnowledgeSnapshot>> {
        self.retained.load().last().cloned()
    }

    /// Answer a batch against a single view of the retained versions.
    pub fn lookup_batch(&self, quads: &[Quadruple]) -> LookupResponse {
        let view = self.retained.load();
        let dim = view.last().map_or(0, |s| s.composed_dim());
        let entries = quads
            .iter()
            .map(|q| {
                let mut values = vec![0.0f32; dim];
                match resolve(&view, q.version) {
                    Some(s) => LookupEntry {
                        status: EntryStatus::Ok,
                        found: s.compose(q.user, q.item, q.category, &mut values),
                        values,
                    },
                    None => LookupEntry {
                        status: EntryStatus::VersionGone,
                        found: 0,
                        values,
                    },
                }
            })
            .collect();
        LookupResponse { dim: dim as u32, entries }
    }

    /// Publish every `snapshot-*.ksnp` file in `dir` in version order.
    pub fn load_dir(&self, dir: &Path) -> Result<Vec<u32>> {
        let mut found = Vec::new();
        for e in fs::read_dir(dir)? {
            let path = e?.path();
            if path.extension().and_then(|x| x.to_str()) == Some("ksnp") {
                found.push(KnowledgeSnapshot::read(&path)?);
            }
        }
        found.sort_by_key(|s| s.version());
        let skip = found.len().saturating_sub(self.max_versions);
        found.into_iter().skip(skip).map(|s| self.publish(s)).collect()
    }
}

impl Default for VersionStore {
    fn default() -> Self {
        VersionStore::new(DEFAULT_MAX_VERSIONS)
    }
}

fn resolve(view: &Retained, version: u32) -> Option<&Arc<KnowledgeSnapshot>> {
    if version == VERSION_LATEST {
        return view.last();
    }
    view.iter().find(|s| s.version() == version)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(v: u32) -> KnowledgeSnapshot {
        let mut s = KnowledgeSnapshot::new(v, 2, 1, 0);
        s.insert_user(1, vec![v as f32, 1.0]).unwrap();
        s
    }

    #[test]
    fn eviction_keeps_newest() {
        let st = VersionStore::default();
        for v in 1..=6 {
            st.publish(snap(v)).unwrap();
        }
        assert_eq!(st.versions(), vec![2, 3, 4, 5, 6]);
        assert!(st.get(1).is_none());
        assert_eq!(st.get(VERSION_LATEST).unwrap().version(), 6);
    }

    #[test]
    fn rejects_stale_and_reserved() {
        let st = VersionStore::default();
        st.publish(snap(3)).unwrap();
        assert!(st.publish(snap(3)).is_err());
        assert!(st.publish(snap(2)).is_err());
        assert!(st.publish(snap(0)).is_err());
        assert!(st.publish(KnowledgeSnapshot::new(4, 3, 1, 0)).is_err());
        assert_eq!(st.versions(), vec![3]);
    }

    #[test]
    fn missing_version_entry() {
        let st = VersionStore::default();
        st.publish(snap(1)).unwrap();
        let q = |v| Quadruple {
            user: 1,
            item: 9,
            category: 0,
            version: v,
        };
        let r = st.lookup_batch(&[q(1), q(7)]);
        assert_eq!(r.dim, 7);
        assert_eq!(r.entries[0].status, EntryStatus::Ok);
        assert_eq!(r.entries[0].found, 1);
        assert_eq!(r.entries[0].values[..2], [1.0, 1.0]);
        assert_eq!(r.entries[1].status, EntryStatus::VersionGone);
        assert!(r.entries[1].values.iter().all(|&x| x == 0.0));
    }
}
