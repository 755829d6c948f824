use std::ops::RangeInclusive;

use crate::datagen::{Domain, ImpressionRecord};
use crate::error::{KeepError, Result};
use crate::extractor::{
    interaction_knowledge, ExtractorConfig, ExtractorModel, FeatureSchema, PretrainConfig, PretrainReport, Pretrainer,
};
use crate::nncore::Matrix;

/// Extractor restricted to user id and category, so its interaction
/// knowledge depends on `(u, c)` only.
#[derive(Clone, Debug, PartialEq)]
pub struct DegeneratedExtractor {
    model: ExtractorModel,
}

impl DegeneratedExtractor {
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        let config = ExtractorConfig {
            schema: FeatureSchema::CategoryOnly,
            ..config
        };
        Ok(DegeneratedExtractor {
            model: ExtractorModel::new(config)?,
        })
    }

    pub fn from_model(model: ExtractorModel) -> Result<Self> {
        if model.config().schema != FeatureSchema::CategoryOnly {
            return Err(KeepError::Config("degenerated extractor needs the category-only schema".into()));
        }
        Ok(DegeneratedExtractor { model })
    }

    pub fn model(&self) -> &ExtractorModel {
        &self.model
    }

    pub fn into_model(self) -> ExtractorModel {
        self.model
    }

    /// Width of `K̂_uc`: three heads' second-to-last outputs.
    pub fn uc_dim(&self) -> usize {
        3 * self.model.config().interaction_dim()
    }

    /// `K̂_uc` rows for `(user, category)` pairs.
    pub fn uc_knowledge(&self, pairs: &[(u64, u32)]) -> Result<Matrix> {
        let records: Vec<ImpressionRecord> = pairs
            .iter()
            .map(|&(u, c)| ImpressionRecord {
                domain: Domain::Super,
                day: 0,
                session_id: 0,
                user_id: u,
                item_id: 0,
                shop_id: 0,
                category_id: c,
                behavior_seq: Vec::new(),
                click: 0,
                conversion: 0,
                cart: 0,
            })
            .collect();
        let refs: Vec<&ImpressionRecord> = records.iter().collect();
        interaction_knowledge(&self.model, &refs)
    }

    /// Pre-train with the same multi-task objective as the full extractor.
    pub fn train(
        &mut self,
        log: &[ImpressionRecord],
        days: RangeInclusive<u32>,
        config: PretrainConfig,
    ) -> Result<PretrainReport> {
        let mut p = Pretrainer::new(self.model.clone(), config)?;
        let report = p.train_days(log, days)?;
        self.model = p.model;
        Ok(report)
    }
}
