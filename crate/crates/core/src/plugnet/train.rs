use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{adam_steps, TensorFile};
use crate::datagen::{iterate_training_order, ImpressionRecord};
use crate::error::{KeepError, Result};
use crate::extractor::{extract_batch, knowledge_dim, ExtractorModel, KnowledgeMask, Task};
use crate::extractor::loss::pointwise_term;
use crate::nncore::{sigmoid, AdamConfig, AdamState, Matrix, Parameterized};
use crate::plugnet::model::{forward_state, DownstreamConfig, DownstreamModel, PlugConfig, PlugInNetwork};

/// Knowledge vectors for a batch; rows for unknown keys are zero.
#[derive(Clone, Debug)]
pub struct KnowledgeBatch {
    pub vectors: Matrix,
    pub missing: usize,
}

/// Anything that can supply frozen knowledge rows for records.
pub trait KnowledgeSource: Send + Sync {
    fn dim(&self) -> usize;
    fn lookup(&self, records: &[&ImpressionRecord]) -> Result<KnowledgeBatch>;
    /// Snapshot version the knowledge comes from, if versioned.
    fn version(&self) -> Option<u32> {
        None
    }
}

/// Full `K(u,i)` computed on the fly from a frozen extractor.
#[derive(Clone, Debug)]
pub struct ExtractorKnowledge {
    model: Arc<ExtractorModel>,
    tasks: Vec<Task>,
    mask: KnowledgeMask,
}

impl ExtractorKnowledge {
    pub fn new(model: Arc<ExtractorModel>, tasks: Vec<Task>, mask: KnowledgeMask) -> Self {
        ExtractorKnowledge { model, tasks, mask }
    }

    pub fn model(&self) -> &ExtractorModel {
        &self.model
    }
}

impl KnowledgeSource for ExtractorKnowledge {
    fn dim(&self) -> usize {
        knowledge_dim(&self.model)
    }

    fn lookup(&self, records: &[&ImpressionRecord]) -> Result<KnowledgeBatch> {
        Ok(KnowledgeBatch {
            vectors: extract_batch(&self.model, records, &self.tasks, self.mask)?,
            missing: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 0.001,
            seed: 41,
        }
    }
}

/// Summed loss and gradients for main model and plug.
pub fn compute_gradients(
    model: &DownstreamModel,
    plug: Option<&PlugInNetwork>,
    records: &[&ImpressionRecord],
    knowledge: Option<&Matrix>,
) -> Result<(f64, Vec<Matrix>, Vec<Matrix>)> {
    let mut g_model = model.zero_grads();
    let mut g_plug = plug.map(|p| p.zero_grads()).unwrap_or_default();
    if records.is_empty() {
        return Ok((0.0, g_model, g_plug));
    }
    let st = forward_state(model, plug, records, knowledge)?;
    let n = records.len() as f64;
    let mut loss = 0.0;
    let mut upstream = Matrix::zeros(records.len(), 1);
    for (k, r) in records.iter().enumerate() {
        let y = r.click as f32;
        loss += pointwise_term(st.logits[k], y);
        upstream.set(k, 0, ((sigmoid(st.logits[k]) as f64 - y as f64) / n) as f32);
    }
    let off = model.mlp_grad_offset();
    let back = model.mlp().backward(&st.main, &upstream, &mut g_model[off..])?;
    if let (Some(p), Some(pt)) = (plug, &st.plug) {
        let d_hk = &back.input_grads[p.plug_layer()];
        p.mlp().backward(pt, d_hk, &mut g_plug)?;
    }
    model.backward_encoding(&st.enc, back.input_grad(), &mut g_model)?;
    Ok((loss, g_model, g_plug))
}

/// Mean cross-entropy (the optimized objective), for gradient checks.
pub fn objective(
    model: &DownstreamModel,
    plug: Option<&PlugInNetwork>,
    records: &[&ImpressionRecord],
    knowledge: Option<&Matrix>,
) -> Result<f64> {
    let (loss, _, _) = compute_gradients(model, plug, records, knowledge)?;
    Ok(loss / records.len().max(1) as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTrainReport {
    pub day: u32,
    pub steps: usize,
    pub records: usize,
    pub mean_loss: f64,
    pub missing_knowledge: usize,
}

pub const DOWNSTREAM_KIND: &str = "downstream";

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    model: DownstreamConfig,
    plug: Option<PlugConfig>,
    train: TrainConfig,
    adam: AdamConfig,
    adam_steps: BTreeMap<String, u64>,
    version_tag: String,
    cursor_day: Option<u32>,
    knowledge_version: Option<u32>,
    missing_knowledge: u64,
}

/// Downstream model, optional plug, optimizer and run cursor.
#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamTrainer {
    pub model: DownstreamModel,
    pub plug: Option<PlugInNetwork>,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub version_tag: String,
    /// Last fully consumed day.
    pub cursor_day: Option<u32>,
    /// Knowledge snapshot version consumed during training.
    pub knowledge_version: Option<u32>,
    pub missing_knowledge: u64,
}

impl DownstreamTrainer {
    pub fn new(model: DownstreamModel, plug: Option<PlugInNetwork>, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(KeepError::Config("batch_size must be positive".into()));
        }
        let adam = AdamState::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        Ok(DownstreamTrainer {
            model,
            plug,
            adam,
            config,
            version_tag: String::new(),
            cursor_day: None,
            knowledge_version: None,
            missing_knowledge: 0,
        })
    }

    /// Attach a freshly initialized plug (zero output layer).
    pub fn attach_plug(&mut self, config: PlugConfig) -> Result<()> {
        if self.plug.is_some() {
            return Err(KeepError::State("a plug-in network is already attached".into()));
        }
        self.plug = Some(PlugInNetwork::for_model(&self.model, config)?);
        Ok(())
    }

    fn knowledge_for(
        &self,
        records: &[&ImpressionRecord],
        knowledge: Option<&dyn KnowledgeSource>,
    ) -> Result<Option<KnowledgeBatch>> {
        match (&self.plug, knowledge) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(KeepError::State("plugged model needs a knowledge source".into())),
            (Some(p), Some(src)) => {
                if src.dim() != p.config().knowledge_dim {
                    return Err(KeepError::shape("knowledge source dim", p.config().knowledge_dim, src.dim()));
                }
                Ok(Some(src.lookup(records)?))
            }
        }
    }

    /// One Adam step on the mean cross-entropy of `records`.
    pub fn train_step(&mut self, records: &[&ImpressionRecord], knowledge: Option<&dyn KnowledgeSource>) -> Result<f64> {
        let kb = self.knowledge_for(records, knowledge)?;
        if let Some(kb) = &kb {
            self.missing_knowledge += kb.missing as u64;
        }
        let (loss, g_model, g_plug) =
            compute_gradients(&self.model, self.plug.as_ref(), records, kb.as_ref().map(|k| &k.vectors))?;
        let mut params = self.model.named_params_mut();
        let mut grads = g_model;
        if let Some(p) = &mut self.plug {
            params.extend(p.named_params_mut());
            grads.extend(g_plug);
        }
        self.adam.step(params, &grads)?;
        Ok(loss / records.len().max(1) as f64)
    }

    /// Consume one day of `log` once, in training order.
    pub fn train_day(
        &mut self,
        log: &[ImpressionRecord],
        day: u32,
        knowledge: Option<&dyn KnowledgeSource>,
    ) -> Result<DayTrainReport> {
        let order = iterate_training_order(log, day..=day, self.config.seed)?;
        let missing_before = self.missing_knowledge;
        let mut report = DayTrainReport {
            day,
            ..DayTrainReport::default()
        };
        for chunk in order.chunks(self.config.batch_size) {
            report.mean_loss += self.train_step(chunk, knowledge)?;
            report.steps += 1;
            report.records += chunk.len();
        }
        if report.steps > 0 {
            report.mean_loss /= report.steps as f64;
        }
        report.missing_knowledge = (self.missing_knowledge - missing_before) as usize;
        if report.missing_knowledge > 0 {
            log::warn!(
                "day {day}: {} records had no cached knowledge; zero vectors substituted",
                report.missing_knowledge
            );
        }
        if let Some(src) = knowledge {
            self.knowledge_version = src.version().or(self.knowledge_version);
        }
        self.cursor_day = Some(day);
        Ok(report)
    }

    /// Click probabilities for `records`.
    pub fn predict(&self, records: &[&ImpressionRecord], knowledge: Option<&dyn KnowledgeSource>) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(1024) {
            let kb = self.knowledge_for(chunk, knowledge)?;
            out.extend(crate::plugnet::forward_with_plug(
                &self.model,
                self.plug.as_ref(),
                chunk,
                kb.as_ref().map(|k| &k.vectors),
            )?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<TensorFile> {
        let meta = Meta {
            kind: DOWNSTREAM_KIND.into(),
            model: self.model.config().clone(),
            plug: self.plug.as_ref().map(|p| p.config().clone()),
            train: self.config.clone(),
            adam: self.adam.config,
            adam_steps: adam_steps(&self.adam),
            version_tag: self.version_tag.clone(),
            cursor_day: self.cursor_day,
            knowledge_version: self.knowledge_version,
            missing_knowledge: self.missing_knowledge,
        };
        let mut f = TensorFile::new(serde_json::to_value(meta)?);
        f.push_params(&self.model);
        if let Some(p) = &self.plug {
            f.push_params(p);
        }
        f.push_adam(&self.adam);
        Ok(f)
    }

    /// Restore a trainer from a checkpoint. With `new_plug`, a fresh plug is
    /// attached when the checkpoint has none; restored parameters are not
    /// touched.
    pub fn warm_start(f: &TensorFile, new_plug: Option<PlugConfig>) -> Result<Self> {
        let meta: Meta = serde_json::from_value(f.meta.clone())?;
        if meta.kind != DOWNSTREAM_KIND {
            return Err(KeepError::Format(format!("expected a downstream checkpoint, found `{}`", meta.kind)));
        }
        let mut model = DownstreamModel::new(meta.model)?;
        f.restore_params(&mut model, &["plug.", "adam."])?;
        let plug = match meta.plug {
            Some(pc) => {
                let mut p = PlugInNetwork::for_model(&model, pc)?;
                f.restore_params(&mut p, &["emb.", "att.", "main.", "adam."])?;
                Some(p)
            }
            None => None,
        };
        let has_plug = plug.is_some();
        if !has_plug {
            let stray: Vec<String> = f
                .tensors
                .iter()
                .filter(|(n, _)| n.starts_with("plug."))
                .map(|(n, _)| n.clone())
                .collect();
            if !stray.is_empty() {
                return Err(KeepError::Manifest {
                    missing: vec![],
                    extra: stray,
                });
            }
        }
        let mut adam = AdamState::new(meta.adam);
        f.restore_adam(&mut adam, &meta.adam_steps)?;
        let mut t = DownstreamTrainer {
            model,
            plug,
            adam,
            config: meta.train,
            version_tag: meta.version_tag,
            cursor_day: meta.cursor_day,
            knowledge_version: meta.knowledge_version,
            missing_knowledge: meta.missing_knowledge,
        };
        if let (false, Some(pc)) = (has_plug, new_plug) {
            t.attach_plug(pc)?;
        }
        Ok(t)
    }
}
