use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KeepError, Result};
use crate::nncore::{Matrix, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Fully connected layer `y = act(x·W + b)` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f32).sqrt();
        DenseLayer {
            weight: Matrix::uniform(in_dim, out_dim, bound, rng),
            bias: Matrix::zeros(1, out_dim),
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: Matrix::zeros(1, out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        let b = self.bias.row(0);
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
                if self.activation == Activation::Relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(y)
    }
}

/// Forward trace of an [`MlpStack`]: `inputs[k]` fed layer `k`, `outputs[k]`
/// is `h_{k+1}`. With an injection, `inputs[m]` holds `h'_m` while
/// `outputs[m-1]` keeps the untouched `h_m`.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub inputs: Vec<Matrix>,
    pub outputs: Vec<Matrix>,
}

impl MlpTrace {
    pub fn logits(&self) -> &Matrix {
        self.outputs.last().expect("trace of empty stack")
    }

    /// `h_i`, 1-based like the layer numbering.
    pub fn hidden(&self, i: usize) -> &Matrix {
        &self.outputs[i - 1]
    }
}

/// Result of backpropagating through a stack.
#[derive(Clone, Debug)]
pub struct MlpBackward {
    /// `input_grads[k]` is dL/d(inputs[k]); index 0 is the stack input.
    pub input_grads: Vec<Matrix>,
}

impl MlpBackward {
    pub fn input_grad(&self) -> &Matrix {
        &self.input_grads[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpStack {
    name: String,
    layers: Vec<DenseLayer>,
}

impl MlpStack {
    /// `dims = [in, h1, ..., out]`; hidden layers use ReLU, the final layer
    /// `last_activation`.
    pub fn new<R: Rng>(name: &str, dims: &[usize], last_activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(KeepError::Config(format!("bad MLP dims {dims:?} for {name}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { last_activation } else { Activation::Relu };
                DenseLayer::new(dims[k], dims[k + 1], act, rng)
            })
            .collect();
        Ok(MlpStack {
            name: name.to_string(),
            layers,
        })
    }

    pub fn from_layers(name: &str, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(KeepError::Config(format!("MLP {name} has no layers")));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(KeepError::shape("MLP layer chain", w[0].out_dim(), w[1].in_dim()));
            }
        }
        Ok(MlpStack {
            name: name.to_string(),
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    /// `[in, h1, ..., out]`
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(DenseLayer::out_dim));
        d
    }

    pub fn forward(&self, x: &Matrix) -> Result<MlpTrace> {
        self.forward_injected(x, None)
    }

    /// Forward pass that adds `add` to `h_after` before it is fed to the next
    /// layer (`after` is 1-based, `1 ≤ after < depth`).
    pub fn forward_injected(&self, x: &Matrix, inject: Option<(usize, &Matrix)>) -> Result<MlpTrace> {
        if x.cols() != self.in_dim() {
            return Err(KeepError::shape("mlp_forward input", self.in_dim(), x.cols()));
        }
        if let Some((after, add)) = inject {
            if after == 0 || after >= self.depth() {
                return Err(KeepError::Config(format!(
                    "injection point {after} outside 1..{}",
                    self.depth()
                )));
            }
            let want = (x.rows(), self.layers[after - 1].out_dim());
            if add.shape() != want {
                return Err(KeepError::shape(
                    "plug-in output",
                    format!("{want:?}"),
                    format!("{:?}", add.shape()),
                ));
            }
        }
        let mut inputs = Vec::with_capacity(self.depth());
        let mut outputs = Vec::with_capacity(self.depth());
        let mut cur = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(&cur)?;
            inputs.push(cur);
            cur = out.clone();
            if let Some((after, add)) = inject {
                if after == k + 1 {
                    cur.add_assign(add)?;
                }
            }
            outputs.push(out);
        }
        Ok(MlpTrace { inputs, outputs })
    }

    /// Backpropagate `upstream` (dL/d logits) through the trace, accumulating
    /// parameter gradients into `grads` (laid out as [`Parameterized`]).
    pub fn backward(&self, trace: &MlpTrace, upstream: &Matrix, grads: &mut [Matrix]) -> Result<MlpBackward> {
        if trace.inputs.len() != self.depth() || trace.outputs.len() != self.depth() {
            return Err(KeepError::State(format!(
                "no matching forward trace for {} ({} layers, trace has {})",
                self.name,
                self.depth(),
                trace.outputs.len()
            )));
        }
        if grads.len() != 2 * self.depth() {
            return Err(KeepError::shape("mlp gradient slots", 2 * self.depth(), grads.len()));
        }
        if upstream.shape() != trace.logits().shape() {
            return Err(KeepError::shape(
                "mlp upstream grad",
                format!("{:?}", trace.logits().shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut input_grads = vec![Matrix::zeros(0, 0); self.depth()];
        let mut delta = upstream.clone();
        for k in (0..self.depth()).rev() {
            let layer = &self.layers[k];
            if layer.activation == Activation::Relu {
                let out = &trace.outputs[k];
                for (d, o) in delta.data_mut().iter_mut().zip(out.data()) {
                    if *o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (gw, rest) = grads[2 * k..].split_at_mut(1);
            trace.inputs[k].matmul_tn_acc(&delta, &mut gw[0])?;
            let gb = rest[0].row_mut(0);
            for r in 0..delta.rows() {
                for (b, d) in gb.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            let dx = delta.matmul_nt(&layer.weight)?;
            input_grads[k] = dx.clone();
            delta = dx;
        }
        Ok(MlpBackward { input_grads })
    }
}

impl Parameterized for MlpStack {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| {
                [
                    (format!("{}.l{k}.weight", self.name), &l.weight),
                    (format!("{}.l{k}.bias", self.name), &l.bias),
                ]
            })
            .collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let name = &self.name;
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(k, l)| {
                [
                    (format!("{name}.l{k}.weight"), &mut l.weight),
                    (format!("{name}.l{k}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }
}
