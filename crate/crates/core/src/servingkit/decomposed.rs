use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::datagen::{iterate_training_order, ImpressionRecord};
use crate::error::{KeepError, Result};
use crate::extractor::loss::pointwise_term;
use crate::nncore::{
    dot, seeded_rng, sigmoid, Activation, AdamConfig, AdamState, EmbeddingTable, HashMode, Matrix, MlpStack, MlpTrace,
    Parameterized,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposedConfig {
    pub user_vocab: usize,
    pub item_vocab: usize,
    pub shop_vocab: usize,
    pub category_vocab: usize,
    pub user_dim: usize,
    pub feature_dim: usize,
    pub tower_hidden: usize,
    /// Output width `d` of both towers.
    pub tower_dim: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for DecomposedConfig {
    fn default() -> Self {
        DecomposedConfig {
            user_vocab: 10_000,
            item_vocab: 2_000,
            shop_vocab: 200,
            category_vocab: 50,
            user_dim: 48,
            feature_dim: 16,
            tower_hidden: 32,
            tower_dim: 16,
            batch_size: 256,
            lr: 0.001,
            seed: 53,
        }
    }
}

/// Table rows of an item, its shop and its category.
type ItemRows = (usize, usize, usize);

/// Two-tower click model: `logit = ⟨user_tower(u), item_tower(i, shop, cat)⟩`.
/// Tower outputs are the cacheable `K̂_u` and `K̂_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedExtractor {
    config: DecomposedConfig,
    user: EmbeddingTable,
    item: EmbeddingTable,
    shop: EmbeddingTable,
    category: EmbeddingTable,
    user_tower: MlpStack,
    item_tower: MlpStack,
}

struct TowerPass {
    user_rows: Vec<usize>,
    item_rows: Vec<(usize, usize, usize)>,
    user: MlpTrace,
    item: MlpTrace,
}

impl DecomposedExtractor {
    pub fn new(config: DecomposedConfig) -> Result<Self> {
        let mut rng = seeded_rng(config.seed);
        let fd = config.feature_dim;
        let user = EmbeddingTable::new("user", config.user_vocab, config.user_dim, HashMode::Modulo, &mut rng)?;
        let item = EmbeddingTable::new("item", config.item_vocab, fd, HashMode::Modulo, &mut rng)?;
        let shop = EmbeddingTable::new("shop", config.shop_vocab, fd, HashMode::Modulo, &mut rng)?;
        let category = EmbeddingTable::new("category", config.category_vocab, fd, HashMode::Modulo, &mut rng)?;
        let user_tower = MlpStack::new(
            "tower.user",
            &[config.user_dim, config.tower_hidden, config.tower_dim],
            Activation::None,
            &mut rng,
        )?;
        let item_tower = MlpStack::new(
            "tower.item",
            &[3 * fd, config.tower_hidden, config.tower_dim],
            Activation::None,
            &mut rng,
        )?;
        Ok(DecomposedExtractor {
            config,
            user,
            item,
            shop,
            category,
            user_tower,
            item_tower,
        })
    }

    pub fn config(&self) -> &DecomposedConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.tower_dim
    }

    fn user_input(&self, users: &[u64]) -> Result<(Matrix, Vec<usize>)> {
        let mut x = Matrix::zeros(users.len(), self.config.user_dim);
        let mut rows = Vec::with_capacity(users.len());
        for (n, &u) in users.iter().enumerate() {
            let r = self.user.row_index(u)?;
            x.row_mut(n).copy_from_slice(self.user.table().row(r));
            rows.push(r);
        }
        Ok((x, rows))
    }

    fn item_input(&self, items: &[(u64, u64, u32)]) -> Result<(Matrix, Vec<ItemRows>)> {
        let fd = self.config.feature_dim;
        let mut x = Matrix::zeros(items.len(), 3 * fd);
        let mut rows = Vec::with_capacity(items.len());
        for (n, &(i, s, c)) in items.iter().enumerate() {
            let ri = (self.item.row_index(i)?, self.shop.row_index(s)?, self.category.row_index(c as u64)?);
            let row = x.row_mut(n);
            row[..fd].copy_from_slice(self.item.table().row(ri.0));
            row[fd..2 * fd].copy_from_slice(self.shop.table().row(ri.1));
            row[2 * fd..].copy_from_slice(self.category.table().row(ri.2));
            rows.push(ri);
        }
        Ok((x, rows))
    }

    /// `K̂_u` rows for `users`.
    pub fn user_vectors(&self, users: &[u64]) -> Result<Matrix> {
        let (x, _) = self.user_input(users)?;
        Ok(self.user_tower.forward(&x)?.logits().clone())
    }

    /// `K̂_i` rows for `(item, shop, category)` triples.
    pub fn item_vectors(&self, items: &[(u64, u64, u32)]) -> Result<Matrix> {
        let (x, _) = self.item_input(items)?;
        Ok(self.item_tower.forward(&x)?.logits().clone())
    }

    fn pass(&self, records: &[&ImpressionRecord]) -> Result<TowerPass> {
        let users: Vec<u64> = records.iter().map(|r| r.user_id).collect();
        let items: Vec<(u64, u64, u32)> = records.iter().map(|r| (r.item_id, r.shop_id, r.category_id)).collect();
        let (xu, user_rows) = self.user_input(&users)?;
        let (xi, item_rows) = self.item_input(&items)?;
        Ok(TowerPass {
            user_rows,
            item_rows,
            user: self.user_tower.forward(&xu)?,
            item: self.item_tower.forward(&xi)?,
        })
    }

    /// Click logits from the two-tower forward pass.
    pub fn logits(&self, records: &[&ImpressionRecord]) -> Result<Vec<f32>> {
        let p = self.pass(records)?;
        let (a, b) = (p.user.logits(), p.item.logits());
        Ok((0..records.len()).map(|r| dot(a.row(r), b.row(r))).collect())
    }

    /// Summed click cross-entropy and gradients of its mean.
    pub fn compute_gradients(&self, records: &[&ImpressionRecord]) -> Result<(f64, Vec<Matrix>)> {
        let mut grads = self.zero_grads();
        if records.is_empty() {
            return Ok((0.0, grads));
        }
        let p = self.pass(records)?;
        let (a, b) = (p.user.logits(), p.item.logits());
        let n = records.len();
        let d = self.config.tower_dim;
        let mut da = Matrix::zeros(n, d);
        let mut db = Matrix::zeros(n, d);
        let mut loss = 0.0;
        for (r, rec) in records.iter().enumerate() {
            let s = dot(a.row(r), b.row(r));
            let y = rec.click as f32;
            loss += pointwise_term(s, y);
            let ds = ((sigmoid(s) as f64 - y as f64) / n as f64) as f32;
            for k in 0..d {
                da.set(r, k, ds * b.get(r, k));
                db.set(r, k, ds * a.get(r, k));
            }
        }
        // layout: user 0, item 1, shop 2, category 3, user tower, item tower
        let nu = self.user_tower.tensor_count();
        let ni = self.item_tower.tensor_count();
        let bu = self.user_tower.backward(&p.user, &da, &mut grads[4..4 + nu])?;
        let bi = self.item_tower.backward(&p.item, &db, &mut grads[4 + nu..4 + nu + ni])?;
        let fd = self.config.feature_dim;
        for r in 0..n {
            EmbeddingTable::scatter_grad(&mut grads[0], p.user_rows[r], bu.input_grad().row(r));
            let di = bi.input_grad().row(r);
            let (ri, rs, rc) = p.item_rows[r];
            EmbeddingTable::scatter_grad(&mut grads[1], ri, &di[..fd]);
            EmbeddingTable::scatter_grad(&mut grads[2], rs, &di[fd..2 * fd]);
            EmbeddingTable::scatter_grad(&mut grads[3], rc, &di[2 * fd..]);
        }
        Ok((loss, grads))
    }
}

impl Parameterized for DecomposedExtractor {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut v = self.user.named_params();
        v.extend(self.item.named_params());
        v.extend(self.shop.named_params());
        v.extend(self.category.named_params());
        v.extend(self.user_tower.named_params());
        v.extend(self.item_tower.named_params());
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = self.user.named_params_mut();
        v.extend(self.item.named_params_mut());
        v.extend(self.shop.named_params_mut());
        v.extend(self.category.named_params_mut());
        v.extend(self.user_tower.named_params_mut());
        v.extend(self.item_tower.named_params_mut());
        v
    }
}

/// Pointwise click training of the two towers, one pass over `days`.
pub fn train_decomposed(
    model: &mut DecomposedExtractor,
    log: &[ImpressionRecord],
    days: RangeInclusive<u32>,
    seed: u64,
) -> Result<f64> {
    if model.config.batch_size == 0 {
        return Err(KeepError::Config("batch_size must be positive".into()));
    }
    let mut adam = AdamState::new(AdamConfig {
        lr: model.config.lr,
        ..AdamConfig::default()
    });
    let order = iterate_training_order(log, days, seed)?;
    let mut total = 0.0;
    for chunk in order.chunks(model.config.batch_size) {
        let (loss, grads) = model.compute_gradients(chunk)?;
        total += loss;
        adam.step(model.named_params_mut(), &grads)?;
    }
    Ok(total / order.len().max(1) as f64)
}
