use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KeepError, Result};
use crate::nncore::{Matrix, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashMode {
    /// Ids must be `< vocab_size`.
    Identity,
    /// `row = id mod vocab_size`; collisions are accepted.
    Modulo,
}

pub const EMBEDDING_INIT_BOUND: f32 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    name: String,
    hash_mode: HashMode,
    table: Matrix,
}

impl EmbeddingTable {
    pub fn new<R: Rng>(name: &str, vocab_size: usize, dim: usize, hash_mode: HashMode, rng: &mut R) -> Result<Self> {
        if dim == 0 || vocab_size == 0 {
            return Err(KeepError::Config(format!(
                "embedding `{name}` needs vocab > 0 and dim > 0 (got {vocab_size}x{dim})"
            )));
        }
        Ok(EmbeddingTable {
            name: name.to_string(),
            hash_mode,
            table: Matrix::uniform(vocab_size, dim, EMBEDDING_INIT_BOUND, rng),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn hash_mode(&self) -> HashMode {
        self.hash_mode
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut Matrix {
        &mut self.table
    }

    pub fn row_index(&self, id: u64) -> Result<usize> {
        let vocab = self.vocab_size();
        match self.hash_mode {
            HashMode::Modulo => Ok((id % vocab as u64) as usize),
            HashMode::Identity if id < vocab as u64 => Ok(id as usize),
            HashMode::Identity => Err(KeepError::IdOutOfRange {
                table: self.name.clone(),
                id,
                vocab,
            }),
        }
    }

    pub fn lookup(&self, id: u64) -> Result<&[f32]> {
        Ok(self.table.row(self.row_index(id)?))
    }

    /// Scatter-add `grad` into row `row` of the table-shaped gradient buffer.
    pub fn scatter_grad(grad_buf: &mut Matrix, row: usize, grad: &[f32]) {
        for (g, d) in grad_buf.row_mut(row).iter_mut().zip(grad) {
            *g += d;
        }
    }
}

impl Parameterized for EmbeddingTable {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        vec![(format!("emb.{}", self.name), &self.table)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![(format!("emb.{}", self.name), &mut self.table)]
    }
}
