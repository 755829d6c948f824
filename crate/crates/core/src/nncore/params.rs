use crate::error::{KeepError, Result};
use crate::nncore::Matrix;

/// A model whose trainable tensors can be enumerated in a fixed order.
///
/// Gradient buffers are plain `Vec<Matrix>` laid out in exactly this order,
/// which is what the optimizer, checkpoint writer and gradient checks rely on.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Matrix)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    fn zero_grads(&self) -> Vec<Matrix> {
        self.named_params()
            .into_iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect()
    }

    fn tensor_count(&self) -> usize {
        self.named_params().len()
    }

    fn scalar_count(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Check that a gradient buffer mirrors the parameter shapes.
pub fn check_grad_shapes<P: Parameterized + ?Sized>(model: &P, grads: &[Matrix]) -> Result<()> {
    let params = model.named_params();
    if params.len() != grads.len() {
        return Err(KeepError::shape("gradient buffer", params.len(), grads.len()));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(KeepError::Shape {
                context: "gradient tensor",
                expected: format!("{name} {:?}", p.shape()),
                actual: format!("{:?}", g.shape()),
            });
        }
    }
    Ok(())
}

/// Flatten every parameter into one vector (test and comparison helper).
pub fn flatten_params<P: Parameterized + ?Sized>(model: &P) -> Vec<f32> {
    model
        .named_params()
        .into_iter()
        .flat_map(|(_, m)| m.data().to_vec())
        .collect()
}
