use serde::{Deserialize, Serialize};

use crate::datagen::ImpressionRecord;
use crate::error::{KeepError, Result};
use crate::nncore::{
    seeded_rng, sigmoid, Activation, AttentionPooler, AttentionTrace, DenseLayer, EmbeddingTable, HashMode, Matrix,
    MlpStack, MlpTrace, Parameterized,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub item_vocab: usize,
    pub shop_vocab: usize,
    pub category_vocab: usize,
    pub feature_dim: usize,
    pub attention_hidden: usize,
    /// Hidden widths of the main MLP; a 1-wide logit layer is appended.
    pub mlp_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            item_vocab: 2_000,
            shop_vocab: 200,
            category_vocab: 50,
            feature_dim: 16,
            attention_hidden: 8,
            mlp_hidden: vec![64, 32, 16],
            seed: 31,
        }
    }
}

impl DownstreamConfig {
    pub fn input_dim(&self) -> usize {
        4 * self.feature_dim
    }

    pub fn mlp_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(&self.mlp_hidden);
        d.push(1);
        d
    }

    /// Width of `h_m`.
    pub fn hidden_dim(&self, plug_layer: usize) -> Result<usize> {
        if plug_layer == 0 || plug_layer > self.mlp_hidden.len() {
            return Err(KeepError::Config(format!(
                "plug layer {plug_layer} must be in 1..={}",
                self.mlp_hidden.len()
            )));
        }
        Ok(self.mlp_hidden[plug_layer - 1])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct EncodedRecord {
    item_row: usize,
    shop_row: usize,
    category_row: usize,
    behavior_rows: Vec<usize>,
    behaviors: Matrix,
    attention: AttentionTrace,
}

/// Downstream CTR model: item, shop and category embeddings plus
/// attention-pooled behaviors, fed to the main MLP. User id is not a feature.
#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamModel {
    config: DownstreamConfig,
    item: EmbeddingTable,
    shop: EmbeddingTable,
    category: EmbeddingTable,
    pooler: AttentionPooler,
    mlp: MlpStack,
}

impl DownstreamModel {
    pub fn new(config: DownstreamConfig) -> Result<Self> {
        let mut rng = seeded_rng(config.seed);
        let fd = config.feature_dim;
        let item = EmbeddingTable::new("item", config.item_vocab, fd, HashMode::Modulo, &mut rng)?;
        let shop = EmbeddingTable::new("shop", config.shop_vocab, fd, HashMode::Modulo, &mut rng)?;
        let category = EmbeddingTable::new("category", config.category_vocab, fd, HashMode::Modulo, &mut rng)?;
        let pooler = AttentionPooler::new("att", fd, config.attention_hidden, &mut rng)?;
        let mlp = MlpStack::new("main", &config.mlp_dims(), Activation::None, &mut rng)?;
        Ok(DownstreamModel {
            config,
            item,
            shop,
            category,
            pooler,
            mlp,
        })
    }

    pub fn config(&self) -> &DownstreamConfig {
        &self.config
    }

    pub fn mlp(&self) -> &MlpStack {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut MlpStack {
        &mut self.mlp
    }

    /// Rows fed to the main MLP: `[item ; shop ; category ; pooled behaviors]`.
    pub fn encode_inputs(&self, records: &[&ImpressionRecord]) -> Result<Matrix> {
        Ok(self.encode(records)?.0)
    }

    pub(crate) fn encode(&self, records: &[&ImpressionRecord]) -> Result<(Matrix, Vec<EncodedRecord>)> {
        let fd = self.config.feature_dim;
        let mut x = Matrix::zeros(records.len(), self.config.input_dim());
        let mut enc = Vec::with_capacity(records.len());
        for (n, r) in records.iter().enumerate() {
            let item_row = self.item.row_index(r.item_id)?;
            let shop_row = self.shop.row_index(r.shop_id)?;
            let category_row = self.category.row_index(r.category_id as u64)?;
            let behavior_rows = r
                .behavior_seq
                .iter()
                .map(|&b| self.item.row_index(b))
                .collect::<Result<Vec<_>>>()?;
            let behaviors = self.item.table().select_rows(&behavior_rows);
            let target = self.item.table().row(item_row);
            let attention = self.pooler.forward(&behaviors, target)?;
            let row = x.row_mut(n);
            row[..fd].copy_from_slice(target);
            row[fd..2 * fd].copy_from_slice(self.shop.table().row(shop_row));
            row[2 * fd..3 * fd].copy_from_slice(self.category.table().row(category_row));
            row[3 * fd..4 * fd].copy_from_slice(&attention.pooled);
            enc.push(EncodedRecord {
                item_row,
                shop_row,
                category_row,
                behavior_rows,
                behaviors,
                attention,
            });
        }
        Ok((x, enc))
    }

    pub(crate) fn backward_encoding(&self, enc: &[EncodedRecord], d_x: &Matrix, grads: &mut [Matrix]) -> Result<()> {
        let fd = self.config.feature_dim;
        let np = self.pooler.tensor_count();
        // layout: item 0, shop 1, category 2, pooler 3..3+np, mlp after
        for (n, e) in enc.iter().enumerate() {
            let d = d_x.row(n);
            let mut d_target = d[..fd].to_vec();
            EmbeddingTable::scatter_grad(&mut grads[1], e.shop_row, &d[fd..2 * fd]);
            EmbeddingTable::scatter_grad(&mut grads[2], e.category_row, &d[2 * fd..3 * fd]);
            let target = self.item.table().row(e.item_row);
            let (d_beh, d_t) =
                self.pooler
                    .backward(&e.attention, &e.behaviors, target, &d[3 * fd..4 * fd], &mut grads[3..3 + np])?;
            for (a, b) in d_target.iter_mut().zip(&d_t) {
                *a += b;
            }
            for (t, &row) in e.behavior_rows.iter().enumerate() {
                EmbeddingTable::scatter_grad(&mut grads[0], row, d_beh.row(t));
            }
            EmbeddingTable::scatter_grad(&mut grads[0], e.item_row, &d_target);
        }
        Ok(())
    }

    pub(crate) fn mlp_grad_offset(&self) -> usize {
        3 + self.pooler.tensor_count()
    }
}

impl Parameterized for DownstreamModel {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut v = self.item.named_params();
        v.extend(self.shop.named_params());
        v.extend(self.category.named_params());
        v.extend(self.pooler.named_params());
        v.extend(self.mlp.named_params());
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = self.item.named_params_mut();
        v.extend(self.shop.named_params_mut());
        v.extend(self.category.named_params_mut());
        v.extend(self.pooler.named_params_mut());
        v.extend(self.mlp.named_params_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlugConfig {
    pub knowledge_dim: usize,
    /// 1-based index `m` of the main-MLP layer whose output receives `h^k`.
    pub plug_layer: usize,
    pub seed: u64,
}

/// Shallow projection `h^k = W2·relu(W1·K + b1) + b2` added to `h_m`.
///
/// The output layer starts at zero, so attaching a plug does not change the
/// host model's predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct PlugInNetwork {
    config: PlugConfig,
    mlp: MlpStack,
}

impl PlugInNetwork {
    pub fn new(config: PlugConfig, hidden_dim: usize) -> Result<Self> {
        if config.knowledge_dim == 0 {
            return Err(KeepError::Config("plug-in knowledge dim must be positive".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let first = DenseLayer::new(config.knowledge_dim, hidden_dim, Activation::Relu, &mut rng);
        let last = DenseLayer::zeros(hidden_dim, hidden_dim, Activation::None);
        let mlp = MlpStack::from_layers("plug", vec![first, last])?;
        Ok(PlugInNetwork { config, mlp })
    }

    pub fn for_model(model: &DownstreamModel, config: PlugConfig) -> Result<Self> {
        let h = model.config().hidden_dim(config.plug_layer)?;
        PlugInNetwork::new(config, h)
    }

    pub fn config(&self) -> &PlugConfig {
        &self.config
    }

    pub fn plug_layer(&self) -> usize {
        self.config.plug_layer
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn mlp(&self) -> &MlpStack {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut MlpStack {
        &mut self.mlp
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.mlp.layers_mut().last_mut().expect("plug has layers");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }
}

impl Parameterized for PlugInNetwork {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        self.mlp.named_params()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.mlp.named_params_mut()
    }
}

/// Forward pass state needed for backprop.
pub(crate) struct ForwardState {
    pub enc: Vec<EncodedRecord>,
    pub main: MlpTrace,
    pub plug: Option<MlpTrace>,
    pub logits: Vec<f32>,
}

pub(crate) fn forward_state(
    model: &DownstreamModel,
    plug: Option<&PlugInNetwork>,
    records: &[&ImpressionRecord],
    knowledge: Option<&Matrix>,
) -> Result<ForwardState> {
    let (x, enc) = model.encode(records)?;
    let (main, plug_trace) = match plug {
        None => (model.mlp.forward(&x)?, None),
        Some(p) => {
            let k = knowledge.ok_or_else(|| KeepError::State("plugged model needs knowledge input".into()))?;
            if k.rows() != records.len() || k.cols() != p.config.knowledge_dim {
                return Err(KeepError::shape(
                    "knowledge batch",
                    format!("{}x{}", records.len(), p.config.knowledge_dim),
                    format!("{}x{}", k.rows(), k.cols()),
                ));
            }
            let want = model.config.hidden_dim(p.plug_layer())?;
            if p.out_dim() != want {
                return Err(KeepError::shape("plug-in output dim", want, p.out_dim()));
            }
            let pt = p.mlp.forward(k)?;
            let main = model.mlp.forward_injected(&x, Some((p.plug_layer(), pt.logits())))?;
            (main, Some(pt))
        }
    };
    let logits = main.logits().data().to_vec();
    Ok(ForwardState {
        enc,
        main,
        plug: plug_trace,
        logits,
    })
}

/// Click probabilities with the knowledge added at the plug layer.
pub fn forward_with_plug(
    model: &DownstreamModel,
    plug: Option<&PlugInNetwork>,
    records: &[&ImpressionRecord],
    knowledge: Option<&Matrix>,
) -> Result<Vec<f32>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let st = forward_state(model, plug, records, knowledge)?;
    Ok(st.logits.into_iter().map(sigmoid).collect())
}

/// Raw logits (same path as [`forward_with_plug`]).
pub fn forward_logits(
    model: &DownstreamModel,
    plug: Option<&PlugInNetwork>,
    records: &[&ImpressionRecord],
    knowledge: Option<&Matrix>,
) -> Result<Vec<f32>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    Ok(forward_state(model, plug, records, knowledge)?.logits)
}
