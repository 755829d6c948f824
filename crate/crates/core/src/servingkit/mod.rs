//! Cache-friendly knowledge for online serving.
//!
//! The full interaction knowledge depends on `(u, i)` and cannot be cached
//! for every pair. A two-tower (decomposed) extractor gives per-user and
//! per-item vectors whose interaction is recovered by an element-wise
//! product, and a category-only (degenerated) extractor gives per
//! `(u, category)` vectors. Serving knowledge is
//! `[K̂_u ; K̂_i ; K̂_u ⊙ K̂_i ; K̂_uc]`.

mod decomposed;
mod degenerated;
mod snapshot;

use std::collections::BTreeSet;
use std::sync::Arc;

pub use decomposed::{train_decomposed, DecomposedConfig, DecomposedExtractor};
pub use degenerated::DegeneratedExtractor;
pub use snapshot::{KnowledgeSnapshot, FOUND_ITEM, FOUND_UC, FOUND_USER, SNAPSHOT_FORMAT_VERSION, SNAPSHOT_MAGIC};

use crate::datagen::{ImpressionRecord, ItemCatalog};
use crate::error::{KeepError, Result};
use crate::extractor::{extract_batch, ExtractorModel, KnowledgeMask};
use crate::nncore::Matrix;
use crate::plugnet::{KnowledgeBatch, KnowledgeSource};

pub(crate) fn compose_into(ku: &[f32], ki: &[f32], kuc: &[f32], out: &mut [f32]) {
    let d = ku.len();
    out[..d].copy_from_slice(ku);
    out[d..2 * d].copy_from_slice(ki);
    for k in 0..d {
        out[2 * d + k] = ku[k] * ki[k];
    }
    out[3 * d..3 * d + kuc.len()].copy_from_slice(kuc);
}

/// `[K̂_u ; K̂_i ; K̂_u ⊙ K̂_i ; K̂_uc]`.
pub fn compose_serving_knowledge(ku: &[f32], ki: &[f32], kuc: &[f32]) -> Result<Vec<f32>> {
    if ku.len() != ki.len() {
        return Err(KeepError::shape("item knowledge", ku.len(), ki.len()));
    }
    let mut out = vec![0.0; 3 * ku.len() + kuc.len()];
    compose_into(ku, ki, kuc, &mut out);
    Ok(out)
}

/// Cache entries needed for `(full pairwise, decomposed + degenerated)`:
/// `(N_u·N_i, N_u + N_i + N_uc)`.
pub fn count_cache_entries(n_users: u64, n_items: u64, n_user_categories: u64) -> Result<(u64, u64)> {
    const LIMIT: u128 = 1 << 63;
    let pairwise = n_users as u128 * n_items as u128;
    let separate = n_users as u128 + n_items as u128 + n_user_categories as u128;
    for (what, v) in [("pairwise", pairwise), ("decomposed", separate)] {
        if v > LIMIT {
            return Err(KeepError::Overflow(format!("{what} cache entry count {v} exceeds 2^63")));
        }
    }
    Ok((pairwise as u64, separate as u64))
}

/// Distinct `(user, category)` pairs seen in `records`.
pub fn observed_user_categories<'a>(records: impl IntoIterator<Item = &'a ImpressionRecord>) -> BTreeSet<(u64, u32)> {
    records.into_iter().map(|r| (r.user_id, r.category_id)).collect()
}

const BUILD_CHUNK: usize = 1024;

/// Precompute a snapshot for `users`, every catalog item, and `pairs`.
pub fn build_snapshot(
    decomposed: &DecomposedExtractor,
    degenerated: Option<&DegeneratedExtractor>,
    users: &[u64],
    catalog: &ItemCatalog,
    pairs: &BTreeSet<(u64, u32)>,
    version: u32,
    published_at: u64,
) -> Result<KnowledgeSnapshot> {
    let uc_dim = degenerated.map_or(0, |d| d.uc_dim());
    let mut snap = KnowledgeSnapshot::new(version, decomposed.dim(), uc_dim, published_at);
    for chunk in users.chunks(BUILD_CHUNK) {
        let m = decomposed.user_vectors(chunk)?;
        for (r, &u) in chunk.iter().enumerate() {
            snap.insert_user(u, m.row(r).to_vec())?;
        }
    }
    let items: Vec<(u64, u64, u32)> = catalog.iter().collect();
    for chunk in items.chunks(BUILD_CHUNK) {
        let m = decomposed.item_vectors(chunk)?;
        for (r, &(i, _, _)) in chunk.iter().enumerate() {
            snap.insert_item(i, m.row(r).to_vec())?;
        }
    }
    if let Some(deg) = degenerated {
        let pairs: Vec<(u64, u32)> = pairs.iter().copied().collect();
        for chunk in pairs.chunks(BUILD_CHUNK) {
            let m = deg.uc_knowledge(chunk)?;
            for (r, &(u, c)) in chunk.iter().enumerate() {
                snap.insert_user_category(u, c, m.row(r).to_vec())?;
            }
        }
    }
    Ok(snap)
}

/// Serving knowledge read from a published snapshot; unknown keys are zero.
#[derive(Clone, Debug)]
pub struct SnapshotKnowledge {
    snapshot: Arc<KnowledgeSnapshot>,
}

impl SnapshotKnowledge {
    pub fn new(snapshot: Arc<KnowledgeSnapshot>) -> Self {
        SnapshotKnowledge { snapshot }
    }

    pub fn snapshot(&self) -> &KnowledgeSnapshot {
        &self.snapshot
    }
}

impl KnowledgeSource for SnapshotKnowledge {
    fn dim(&self) -> usize {
        self.snapshot.composed_dim()
    }

    fn lookup(&self, records: &[&ImpressionRecord]) -> Result<KnowledgeBatch> {
        let s = &self.snapshot;
        // unseen user-category pairs are legitimately empty
        let full = FOUND_USER | FOUND_ITEM;
        let mut vectors = Matrix::zeros(records.len(), s.composed_dim());
        let mut missing = 0;
        for (n, r) in records.iter().enumerate() {
            if s.compose(r.user_id, r.item_id, r.category_id, vectors.row_mut(n)) & full != full {
                missing += 1;
            }
        }
        Ok(KnowledgeBatch { vectors, missing })
    }

    fn version(&self) -> Option<u32> {
        Some(self.snapshot.version())
    }
}

/// Decomposed and/or degenerated knowledge computed on the fly from frozen
/// models; equal to a snapshot covering every key.
#[derive(Clone, Debug)]
pub struct ComposedKnowledge {
    decomposed: Option<Arc<DecomposedExtractor>>,
    degenerated: Option<Arc<DegeneratedExtractor>>,
}

impl ComposedKnowledge {
    pub fn new(decomposed: Option<Arc<DecomposedExtractor>>, degenerated: Option<Arc<DegeneratedExtractor>>) -> Result<Self> {
        if decomposed.is_none() && degenerated.is_none() {
            return Err(KeepError::Config("composed knowledge needs at least one extractor".into()));
        }
        Ok(ComposedKnowledge { decomposed, degenerated })
    }
}

impl KnowledgeSource for ComposedKnowledge {
    fn dim(&self) -> usize {
        self.decomposed.as_ref().map_or(0, |d| 3 * d.dim()) + self.degenerated.as_ref().map_or(0, |d| d.uc_dim())
    }

    fn lookup(&self, records: &[&ImpressionRecord]) -> Result<KnowledgeBatch> {
        let mut vectors = Matrix::zeros(records.len(), self.dim());
        let mut off = 0;
        if let Some(dec) = &self.decomposed {
            let users: Vec<u64> = records.iter().map(|r| r.user_id).collect();
            let items: Vec<(u64, u64, u32)> = records.iter().map(|r| (r.item_id, r.shop_id, r.category_id)).collect();
            let ku = dec.user_vectors(&users)?;
            let ki = dec.item_vectors(&items)?;
            let d = dec.dim();
            for n in 0..records.len() {
                compose_into(ku.row(n), ki.row(n), &[], &mut vectors.row_mut(n)[..3 * d]);
            }
            off = 3 * d;
        }
        if let Some(deg) = &self.degenerated {
            let pairs: Vec<(u64, u32)> = records.iter().map(|r| (r.user_id, r.category_id)).collect();
            let kuc = deg.uc_knowledge(&pairs)?;
            for n in 0..records.len() {
                vectors.row_mut(n)[off..].copy_from_slice(kuc.row(n));
            }
        }
        Ok(KnowledgeBatch { vectors, missing: 0 })
    }
}

/// `[K_u ; K_i ; K̂_uc]`: full-extractor user and item embeddings with
/// degenerated interaction knowledge in place of the pairwise one.
#[derive(Clone, Debug)]
pub struct DegeneratedKnowledge {
    extractor: Arc<ExtractorModel>,
    degenerated: Arc<DegeneratedExtractor>,
}

impl DegeneratedKnowledge {
    pub fn new(extractor: Arc<ExtractorModel>, degenerated: Arc<DegeneratedExtractor>) -> Self {
        DegeneratedKnowledge { extractor, degenerated }
    }

    fn base_dim(&self) -> usize {
        let c = self.extractor.config();
        c.user_dim + 3 * c.feature_dim
    }
}

impl KnowledgeSource for DegeneratedKnowledge {
    fn dim(&self) -> usize {
        self.base_dim() + self.degenerated.uc_dim()
    }

    fn lookup(&self, records: &[&ImpressionRecord]) -> Result<KnowledgeBatch> {
        let base = extract_batch(&self.extractor, records, &[], KnowledgeMask::USER_ITEM)?;
        let pairs: Vec<(u64, u32)> = records.iter().map(|r| (r.user_id, r.category_id)).collect();
        let kuc = self.degenerated.uc_knowledge(&pairs)?;
        let bd = self.base_dim();
        let mut vectors = Matrix::zeros(records.len(), self.dim());
        for n in 0..records.len() {
            let row = vectors.row_mut(n);
            row[..bd].copy_from_slice(&base.row(n)[..bd]);
            row[bd..].copy_from_slice(kuc.row(n));
        }
        Ok(KnowledgeBatch { vectors, missing: 0 })
    }
}
