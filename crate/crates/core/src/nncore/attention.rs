use rand::Rng;

use crate::error::{KeepError, Result};
use crate::nncore::{Activation, Matrix, MlpStack, MlpTrace, Parameterized};

/// Target attention over a behavior sequence.
///
/// Each position is scored by a small MLP over `[e_t ; e_target ; e_t ⊙ e_target]`;
/// scores are softmax-normalized and the pooled vector is the weighted sum of
/// the behavior embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPooler {
    mlp: MlpStack,
    dim: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionTrace {
    pub pooled: Vec<f32>,
    pub weights: Vec<f32>,
    mlp_trace: Option<MlpTrace>,
}

impl AttentionPooler {
    pub fn new<R: Rng>(name: &str, dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mlp = MlpStack::new(name, &[3 * dim, hidden, 1], Activation::None, rng)?;
        Ok(AttentionPooler { mlp, dim })
    }

    pub fn from_mlp(mlp: MlpStack) -> Result<Self> {
        if !mlp.in_dim().is_multiple_of(3) || mlp.out_dim() != 1 {
            return Err(KeepError::shape("attention mlp", "3d -> 1", format!("{:?}", mlp.dims())));
        }
        let dim = mlp.in_dim() / 3;
        Ok(AttentionPooler { mlp, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mlp(&self) -> &MlpStack {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut MlpStack {
        &mut self.mlp
    }

    fn attention_input(&self, behaviors: &Matrix, target: &[f32]) -> Matrix {
        let d = self.dim;
        let mut x = Matrix::zeros(behaviors.rows(), 3 * d);
        for t in 0..behaviors.rows() {
            let e = behaviors.row(t);
            let row = x.row_mut(t);
            row[..d].copy_from_slice(e);
            row[d..2 * d].copy_from_slice(target);
            for k in 0..d {
                row[2 * d + k] = e[k] * target[k];
            }
        }
        x
    }

    pub fn forward(&self, behaviors: &Matrix, target: &[f32]) -> Result<AttentionTrace> {
        let d = self.dim;
        if target.len() != d || (behaviors.rows() > 0 && behaviors.cols() != d) {
            return Err(KeepError::shape(
                "attention_pool",
                d,
                format!("target {} / behaviors {}", target.len(), behaviors.cols()),
            ));
        }
        if behaviors.rows() == 0 {
            return Ok(AttentionTrace {
                pooled: vec![0.0; d],
                weights: Vec::new(),
                mlp_trace: None,
            });
        }
        let x = self.attention_input(behaviors, target);
        let trace = self.mlp.forward(&x)?;
        let scores = trace.logits().data();
        let weights = softmax(scores);
        let mut pooled = vec![0.0f32; d];
        for (t, w) in weights.iter().enumerate() {
            for (p, e) in pooled.iter_mut().zip(behaviors.row(t)) {
                *p += w * e;
            }
        }
        Ok(AttentionTrace {
            pooled,
            weights,
            mlp_trace: Some(trace),
        })
    }

    /// Returns `(d behaviors, d target)`; attention-MLP gradients are
    /// accumulated into `grads`.
    pub fn backward(
        &self,
        trace: &AttentionTrace,
        behaviors: &Matrix,
        target: &[f32],
        d_pooled: &[f32],
        grads: &mut [Matrix],
    ) -> Result<(Matrix, Vec<f32>)> {
        let d = self.dim;
        let n = behaviors.rows();
        let mut d_beh = Matrix::zeros(n, d);
        let mut d_target = vec![0.0f32; d];
        let Some(mlp_trace) = &trace.mlp_trace else {
            return Ok((d_beh, d_target));
        };
        let w = &trace.weights;
        let dw: Vec<f32> = (0..n)
            .map(|t| behaviors.row(t).iter().zip(d_pooled).map(|(e, g)| e * g).sum())
            .collect();
        let mean: f32 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        let mut d_scores = Matrix::zeros(n, 1);
        for t in 0..n {
            d_scores.set(t, 0, w[t] * (dw[t] - mean));
            for (de, g) in d_beh.row_mut(t).iter_mut().zip(d_pooled) {
                *de += w[t] * g;
            }
        }
        let back = self.mlp.backward(mlp_trace, &d_scores, grads)?;
        let dx = back.input_grad();
        for t in 0..n {
            let row = dx.row(t);
            let e = behaviors.row(t);
            let de = d_beh.row_mut(t);
            for k in 0..d {
                de[k] += row[k] + row[2 * d + k] * target[k];
                d_target[k] += row[d + k] + row[2 * d + k] * e[k];
            }
        }
        Ok((d_beh, d_target))
    }
}

pub fn softmax(scores: &[f32]) -> Vec<f32> {
    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Parameterized for AttentionPooler {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        self.mlp.named_params()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.mlp.named_params_mut()
    }
}
