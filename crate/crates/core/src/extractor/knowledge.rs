use serde::{Deserialize, Serialize};

use crate::datagen::ImpressionRecord;
use crate::error::{KeepError, Result};
use crate::extractor::{ExtractorModel, FeatureSchema, Task};
use crate::nncore::Matrix;

/// Extracted knowledge for one (user, item) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeVector {
    /// User-id embedding.
    pub user: Vec<f32>,
    /// Item, shop and category embeddings, concatenated.
    pub item: Vec<f32>,
    /// Second-to-last head layer output for click, conversion, cart.
    pub interaction: [Vec<f32>; 3],
}

impl KnowledgeVector {
    /// `[k_u ; k_i ; k_ui^clk ; k_ui^cv ; k_ui^cart]`
    pub fn concatenated(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.user);
        v.extend_from_slice(&self.item);
        for k in &self.interaction {
            v.extend_from_slice(k);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.user.len() + self.item.len() + self.interaction.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which slots of the knowledge vector are kept (the rest are zeroed).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeMask {
    pub user: bool,
    pub item: bool,
    pub interaction: bool,
}

impl Default for KnowledgeMask {
    fn default() -> Self {
        KnowledgeMask {
            user: true,
            item: true,
            interaction: true,
        }
    }
}

impl KnowledgeMask {
    pub const USER_ONLY: KnowledgeMask = KnowledgeMask {
        user: true,
        item: false,
        interaction: false,
    };
    pub const USER_ITEM: KnowledgeMask = KnowledgeMask {
        user: true,
        item: true,
        interaction: false,
    };

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.user {
            parts.push("K_u");
        }
        if self.item {
            parts.push("K_i");
        }
        if self.interaction {
            parts.push("K_ui");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

/// Dimension of the concatenated knowledge for a full-schema extractor.
pub fn knowledge_dim(model: &ExtractorModel) -> usize {
    let c = model.config();
    c.user_dim + 3 * c.feature_dim + 3 * c.interaction_dim()
}

/// Knowledge for a batch of records, one concatenated row per record.
///
/// Heads of tasks not in `trained_tasks` contribute zeros.
pub fn extract_batch(
    model: &ExtractorModel,
    records: &[&ImpressionRecord],
    trained_tasks: &[Task],
    mask: KnowledgeMask,
) -> Result<Matrix> {
    let cfg = model.config();
    if cfg.schema != FeatureSchema::Full {
        return Err(KeepError::Config("knowledge export needs the full feature schema".into()));
    }
    let dim = knowledge_dim(model);
    let mut out = Matrix::zeros(records.len(), dim);
    if records.is_empty() {
        return Ok(out);
    }
    let (x, _) = model.encode(records)?;
    let ud = cfg.user_dim;
    let id = 3 * cfg.feature_dim;
    let kd = cfg.interaction_dim();
    let item_off = ud;
    let item_len = 3 * cfg.feature_dim;
    for r in 0..records.len() {
        let src = x.row(r);
        let dst = out.row_mut(r);
        if mask.user {
            dst[..ud].copy_from_slice(&src[..ud]);
        }
        if mask.item {
            // encoded input order is [user | item | shop | category | pooled]
            dst[ud..ud + id].copy_from_slice(&src[item_off..item_off + item_len]);
        }
    }
    if mask.interaction {
        for task in Task::ALL {
            if !trained_tasks.contains(&task) {
                continue;
            }
            let head = model.head(task);
            let trace = head.forward(&x)?;
            let h = trace.hidden(head.depth() - 1);
            let off = ud + id + task.index() * kd;
            for r in 0..records.len() {
                out.row_mut(r)[off..off + kd].copy_from_slice(h.row(r));
            }
        }
    }
    Ok(out)
}

/// Knowledge for one record, split into its named parts.
pub fn extract_knowledge(model: &ExtractorModel, record: &ImpressionRecord) -> Result<KnowledgeVector> {
    let row = extract_batch(model, &[record], &Task::ALL, KnowledgeMask::default())?;
    let c = model.config();
    let v = row.row(0);
    let (ud, id, kd) = (c.user_dim, 3 * c.feature_dim, c.interaction_dim());
    let base = ud + id;
    Ok(KnowledgeVector {
        user: v[..ud].to_vec(),
        item: v[ud..base].to_vec(),
        interaction: [
            v[base..base + kd].to_vec(),
            v[base + kd..base + 2 * kd].to_vec(),
            v[base + 2 * kd..base + 3 * kd].to_vec(),
        ],
    })
}

/// Second-to-last layer outputs of every head, concatenated in task order;
/// for a category-only extractor this is the cached user-category knowledge.
pub fn interaction_knowledge(model: &ExtractorModel, records: &[&ImpressionRecord]) -> Result<Matrix> {
    let kd = model.config().interaction_dim();
    let mut out = Matrix::zeros(records.len(), 3 * kd);
    if records.is_empty() {
        return Ok(out);
    }
    let (x, _) = model.encode(records)?;
    for task in Task::ALL {
        let head = model.head(task);
        let trace = head.forward(&x)?;
        let h = trace.hidden(head.depth() - 1);
        for r in 0..records.len() {
            out.row_mut(r)[task.index() * kd..(task.index() + 1) * kd].copy_from_slice(h.row(r));
        }
    }
    Ok(out)
}
