use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{KeepError, Result};
use crate::nncore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Skip embedding rows (`emb.*` tensors) whose gradient is exactly zero,
    /// leaving their moments untouched.
    pub lazy_embeddings: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lazy_embeddings: true,
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub step: u64,
    pub m: Matrix,
    pub v: Matrix,
}

/// Adam with bias correction. State is keyed by parameter name, so tensors
/// attached later (e.g. a plug-in network) start with their own step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            moments: BTreeMap::new(),
        }
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.moments
    }

    pub fn insert_moments(&mut self, name: String, moments: Moments) {
        self.moments.insert(name, moments);
    }

    pub fn step_of(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.step)
    }

    /// Apply one update. Gradients are validated before any parameter moves.
    pub fn step(&mut self, params: Vec<(String, &mut Matrix)>, grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(KeepError::shape("adam_step tensors", params.len(), grads.len()));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(KeepError::Shape {
                    context: "adam_step",
                    expected: format!("{name} {:?}", p.shape()),
                    actual: format!("{:?}", g.shape()),
                });
            }
            if !g.is_finite() {
                return Err(KeepError::Numeric { param: name.clone() });
            }
            if let Some(m) = self.moments.get(name) {
                if m.m.shape() != p.shape() {
                    return Err(KeepError::Shape {
                        context: "adam moments",
                        expected: format!("{name} {:?}", m.m.shape()),
                        actual: format!("{:?}", p.shape()),
                    });
                }
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            lazy_embeddings,
        } = self.config;
        for ((name, p), g) in params.into_iter().zip(grads) {
            let lazy = lazy_embeddings && name.starts_with("emb.");
            let st = self.moments.entry(name).or_insert_with(|| Moments {
                step: 0,
                m: Matrix::zeros(p.rows(), p.cols()),
                v: Matrix::zeros(p.rows(), p.cols()),
            });
            st.step += 1;
            let t = st.step as i32;
            let bc1 = 1.0 - (beta1 as f64).powi(t);
            let bc2 = 1.0 - (beta2 as f64).powi(t);
            let step_size = (lr as f64 / bc1) as f32;
            let bc2_sqrt = bc2.sqrt() as f32;
            let width = p.cols().max(1);
            let chunks = p
                .data_mut()
                .chunks_mut(width)
                .zip(g.data().chunks(width))
                .zip(st.m.data_mut().chunks_mut(width))
                .zip(st.v.data_mut().chunks_mut(width));
            for (((pr, gr), mr), vr) in chunks {
                if lazy && gr.iter().all(|&x| x == 0.0) {
                    continue;
                }
                for (((pi, gi), mi), vi) in pr.iter_mut().zip(gr).zip(mr.iter_mut()).zip(vr.iter_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let denom = vi.sqrt() / bc2_sqrt + eps;
                    *pi -= step_size * *mi / denom;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(vec![("p".into(), &mut p)], &[Matrix::zeros(1, 3)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_of("p"), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // t = 1: m̂ = g, v̂ = g², update = lr · g / (|g| + eps)
        let mut p = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(vec![("w".into(), &mut p)], &[Matrix::from_vec(1, 1, vec![1.0]).unwrap()])
            .unwrap();
        let expected = -(0.001f64 / (1.0 + 1e-8));
        assert!((p.get(0, 0) as f64 - expected).abs() < 1e-9);
    }

    #[test]
    fn nan_grad_names_parameter() {
        let mut p = Matrix::zeros(1, 2);
        let mut adam = AdamState::new(AdamConfig::default());
        let g = Matrix::from_vec(1, 2, vec![0.0, f32::NAN]).unwrap();
        let err = adam.step(vec![("head.w".into(), &mut p)], &[g]).unwrap_err();
        match err {
            KeepError::Numeric { param } => assert_eq!(param, "head.w"),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(p, Matrix::zeros(1, 2));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(adam.step(vec![("p".into(), &mut p)], &[Matrix::zeros(1, 4)]).is_err());
    }
}
