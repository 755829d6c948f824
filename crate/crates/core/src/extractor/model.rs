use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::ImpressionRecord;
use crate::error::{KeepError, Result};
use crate::nncore::{
    seeded_rng, Activation, AttentionPooler, AttentionTrace, EmbeddingTable, HashMode, Matrix, MlpStack, MlpTrace,
    Parameterized,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Click,
    Conversion,
    Cart,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Click, Task::Conversion, Task::Cart];

    pub fn index(self) -> usize {
        match self {
            Task::Click => 0,
            Task::Conversion => 1,
            Task::Cart => 2,
        }
    }

    pub fn label(self, r: &ImpressionRecord) -> u8 {
        match self {
            Task::Click => r.click,
            Task::Conversion => r.conversion,
            Task::Cart => r.cart,
        }
    }

    /// Click is trained on impressions, the other tasks on clicks only.
    pub fn in_dataset(self, r: &ImpressionRecord) -> bool {
        self == Task::Click || r.click == 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Click => "click",
            Task::Conversion => "conversion",
            Task::Cart => "cart",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = KeepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "click" | "clk" => Ok(Task::Click),
            "conversion" | "cv" => Ok(Task::Conversion),
            "cart" => Ok(Task::Cart),
            other => Err(KeepError::UnknownTask(other.to_string())),
        }
    }
}

/// Which record fields the model reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSchema {
    /// user id, item id, shop id, category id and attention-pooled behaviors.
    Full,
    /// user id and category id only (degenerated extractor).
    CategoryOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub schema: FeatureSchema,
    pub user_vocab: usize,
    pub item_vocab: usize,
    pub shop_vocab: usize,
    pub category_vocab: usize,
    pub user_dim: usize,
    pub feature_dim: usize,
    pub attention_hidden: usize,
    /// Hidden widths of each task head; a 2-wide output layer is appended.
    pub head_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            schema: FeatureSchema::Full,
            user_vocab: 10_000,
            item_vocab: 2_000,
            shop_vocab: 200,
            category_vocab: 50,
            user_dim: 48,
            feature_dim: 16,
            attention_hidden: 8,
            head_hidden: vec![64, 32, 16, 8],
            seed: 17,
        }
    }
}

impl ExtractorConfig {
    /// Production head widths `[512, 256, 128, 64]` (+2 output).
    pub fn production() -> Self {
        ExtractorConfig {
            head_hidden: vec![512, 256, 128, 64],
            ..ExtractorConfig::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.schema {
            FeatureSchema::Full => self.user_dim + 4 * self.feature_dim,
            FeatureSchema::CategoryOnly => self.user_dim + self.feature_dim,
        }
    }

    /// Width of the interaction knowledge taken from one head.
    pub fn interaction_dim(&self) -> usize {
        *self.head_hidden.last().expect("head has hidden layers")
    }
}

/// Per-record lookups kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct EncodedRecord {
    user_row: usize,
    item_row: usize,
    shop_row: usize,
    category_row: usize,
    behavior_rows: Vec<usize>,
    behaviors: Matrix,
    attention: Option<AttentionTrace>,
}

/// Shared-bottom multi-task extractor: embeddings (and attention pooling)
/// shared by three private task heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorModel {
    config: ExtractorConfig,
    user: EmbeddingTable,
    item: Option<EmbeddingTable>,
    shop: Option<EmbeddingTable>,
    category: EmbeddingTable,
    pooler: Option<AttentionPooler>,
    heads: Vec<MlpStack>,
}

impl ExtractorModel {
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        if config.head_hidden.is_empty() {
            return Err(KeepError::Config("task heads need at least one hidden layer".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let fd = config.feature_dim;
        let user = EmbeddingTable::new("user", config.user_vocab, config.user_dim, HashMode::Modulo, &mut rng)?;
        let (item, shop, pooler) = match config.schema {
            FeatureSchema::Full => (
                Some(EmbeddingTable::new("item", config.item_vocab, fd, HashMode::Modulo, &mut rng)?),
                Some(EmbeddingTable::new("shop", config.shop_vocab, fd, HashMode::Modulo, &mut rng)?),
                Some(AttentionPooler::new("att", fd, config.attention_hidden, &mut rng)?),
            ),
            FeatureSchema::CategoryOnly => (None, None, None),
        };
        let category = EmbeddingTable::new("category", config.category_vocab, fd, HashMode::Modulo, &mut rng)?;
        let mut dims = vec![config.input_dim()];
        dims.extend(&config.head_hidden);
        dims.push(2);
        let heads = Task::ALL
            .iter()
            .map(|t| MlpStack::new(&format!("head.{t}"), &dims, Activation::None, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExtractorModel {
            config,
            user,
            item,
            shop,
            category,
            pooler,
            heads,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn head(&self, task: Task) -> &MlpStack {
        &self.heads[task.index()]
    }

    pub fn head_mut(&mut self, task: Task) -> &mut MlpStack {
        &mut self.heads[task.index()]
    }

    pub fn pooler(&self) -> Option<&AttentionPooler> {
        self.pooler.as_ref()
    }

    pub fn user_table(&self) -> &EmbeddingTable {
        &self.user
    }

    pub fn item_table(&self) -> Option<&EmbeddingTable> {
        self.item.as_ref()
    }

    pub fn shop_table(&self) -> Option<&EmbeddingTable> {
        self.shop.as_ref()
    }

    pub fn category_table(&self) -> &EmbeddingTable {
        &self.category
    }

    /// Set every head parameter to zero.
    pub fn zero_heads(&mut self) {
        for h in &mut self.heads {
            for (_, p) in h.named_params_mut() {
                p.fill(0.0);
            }
        }
    }

    /// Tensor offsets of each component inside the gradient layout.
    fn slots(&self) -> Slots {
        let mut next = 1;
        let mut take = |n: usize| {
            let s = next;
            next += n;
            s
        };
        let item = self.item.as_ref().map(|_| take(1));
        let shop = self.shop.as_ref().map(|_| take(1));
        let category = take(1);
        let pooler = self.pooler.as_ref().map(|p| take(p.tensor_count()));
        let head_len = self.heads[0].tensor_count();
        let heads = [take(head_len), take(head_len), take(head_len)];
        Slots {
            item,
            shop,
            category,
            pooler,
            heads,
            head_len,
        }
    }

    pub(crate) fn head_grad_range(&self, task: Task) -> std::ops::Range<usize> {
        let s = self.slots();
        let start = s.heads[task.index()];
        start..start + s.head_len
    }

    /// Build the shared-bottom input matrix for `records`.
    pub(crate) fn encode(&self, records: &[&ImpressionRecord]) -> Result<(Matrix, Vec<EncodedRecord>)> {
        let cfg = &self.config;
        let fd = cfg.feature_dim;
        let mut x = Matrix::zeros(records.len(), cfg.input_dim());
        let mut enc = Vec::with_capacity(records.len());
        for (n, r) in records.iter().enumerate() {
            let user_row = self.user.row_index(r.user_id)?;
            let category_row = self.category.row_index(r.category_id as u64)?;
            let row = x.row_mut(n);
            row[..cfg.user_dim].copy_from_slice(self.user.table().row(user_row));
            let mut off = cfg.user_dim;
            let mut e = EncodedRecord {
                user_row,
                item_row: 0,
                shop_row: 0,
                category_row,
                behavior_rows: Vec::new(),
                behaviors: Matrix::zeros(0, fd),
                attention: None,
            };
            if let (Some(item), Some(shop), Some(pooler)) = (&self.item, &self.shop, &self.pooler) {
                e.item_row = item.row_index(r.item_id)?;
                e.shop_row = shop.row_index(r.shop_id)?;
                let target = item.table().row(e.item_row);
                row[off..off + fd].copy_from_slice(target);
                row[off + fd..off + 2 * fd].copy_from_slice(shop.table().row(e.shop_row));
                off += 2 * fd;
                e.behavior_rows = r
                    .behavior_seq
                    .iter()
                    .map(|&b| item.row_index(b))
                    .collect::<Result<_>>()?;
                e.behaviors = item.table().select_rows(&e.behavior_rows);
                let att = pooler.forward(&e.behaviors, target)?;
                row[off..off + fd].copy_from_slice(self.category.table().row(category_row));
                row[off + fd..off + 2 * fd].copy_from_slice(&att.pooled);
                e.attention = Some(att);
            } else {
                row[off..off + fd].copy_from_slice(self.category.table().row(category_row));
            }
            enc.push(e);
        }
        Ok((x, enc))
    }

    /// Scatter `d_input` (gradient w.r.t. the encoded input) into embedding
    /// and attention gradients.
    pub(crate) fn backward_encoding(&self, enc: &[EncodedRecord], d_input: &Matrix, grads: &mut [Matrix]) -> Result<()> {
        let cfg = &self.config;
        let fd = cfg.feature_dim;
        let slots = self.slots();
        for (n, e) in enc.iter().enumerate() {
            let d = d_input.row(n);
            EmbeddingTable::scatter_grad(&mut grads[0], e.user_row, &d[..cfg.user_dim]);
            let mut off = cfg.user_dim;
            match (&self.item, &self.pooler, slots.item, slots.shop, slots.pooler) {
                (Some(item), Some(pooler), Some(si), Some(ss), Some(sp)) => {
                    let mut d_target = d[off..off + fd].to_vec();
                    EmbeddingTable::scatter_grad(&mut grads[ss], e.shop_row, &d[off + fd..off + 2 * fd]);
                    off += 2 * fd;
                    EmbeddingTable::scatter_grad(&mut grads[slots.category], e.category_row, &d[off..off + fd]);
                    let d_pooled = &d[off + fd..off + 2 * fd];
                    if let Some(att) = &e.attention {
                        let target = item.table().row(e.item_row);
                        let np = pooler.tensor_count();
                        let (d_beh, d_t) =
                            pooler.backward(att, &e.behaviors, target, d_pooled, &mut grads[sp..sp + np])?;
                        for (a, b) in d_target.iter_mut().zip(&d_t) {
                            *a += b;
                        }
                        for (t, &row) in e.behavior_rows.iter().enumerate() {
                            EmbeddingTable::scatter_grad(&mut grads[si], row, d_beh.row(t));
                        }
                    }
                    EmbeddingTable::scatter_grad(&mut grads[si], e.item_row, &d_target);
                }
                _ => {
                    EmbeddingTable::scatter_grad(&mut grads[slots.category], e.category_row, &d[off..off + fd]);
                }
            }
        }
        Ok(())
    }

    pub fn head_forward(&self, task: Task, x: &Matrix) -> Result<MlpTrace> {
        self.heads[task.index()].forward(x)
    }

    /// Logit per record: second output minus first (two-class log-odds).
    pub fn score_batch(&self, records: &[&ImpressionRecord], task: Task) -> Result<Vec<f32>> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let (x, _) = self.encode(records)?;
        let trace = self.head_forward(task, &x)?;
        Ok(logits_from_pair(trace.logits()))
    }

    pub fn score(&self, record: &ImpressionRecord, task: Task) -> Result<f32> {
        Ok(self.score_batch(&[record], task)?[0])
    }
}

pub(crate) fn logits_from_pair(out: &Matrix) -> Vec<f32> {
    (0..out.rows()).map(|r| out.get(r, 1) - out.get(r, 0)).collect()
}

struct Slots {
    item: Option<usize>,
    shop: Option<usize>,
    category: usize,
    pooler: Option<usize>,
    heads: [usize; 3],
    head_len: usize,
}

impl Parameterized for ExtractorModel {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut v = self.user.named_params();
        if let Some(t) = &self.item {
            v.extend(t.named_params());
        }
        if let Some(t) = &self.shop {
            v.extend(t.named_params());
        }
        v.extend(self.category.named_params());
        if let Some(p) = &self.pooler {
            v.extend(p.named_params());
        }
        for h in &self.heads {
            v.extend(h.named_params());
        }
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = self.user.named_params_mut();
        if let Some(t) = &mut self.item {
            v.extend(t.named_params_mut());
        }
        if let Some(t) = &mut self.shop {
            v.extend(t.named_params_mut());
        }
        v.extend(self.category.named_params_mut());
        if let Some(p) = &mut self.pooler {
            v.extend(p.named_params_mut());
        }
        for h in &mut self.heads {
            v.extend(h.named_params_mut());
        }
        v
    }
}
