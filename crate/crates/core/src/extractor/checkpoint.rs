use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorFile;
use crate::error::{KeepError, Result};
use crate::extractor::{ExtractorConfig, ExtractorModel, Task};

pub const EXTRACTOR_KIND: &str = "extractor";

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorCheckpoint {
    pub model: ExtractorModel,
    pub trained_tasks: Vec<Task>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: ExtractorConfig,
    trained_tasks: Vec<Task>,
}

impl ExtractorCheckpoint {
    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let meta = Meta {
            kind: EXTRACTOR_KIND.into(),
            config: self.model.config().clone(),
            trained_tasks: self.trained_tasks.clone(),
        };
        let mut f = TensorFile::new(serde_json::to_value(meta)?);
        f.push_params(&self.model);
        Ok(f)
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        let meta: Meta = serde_json::from_value(f.meta.clone())?;
        if meta.kind != EXTRACTOR_KIND {
            return Err(KeepError::Format(format!("expected an extractor checkpoint, found `{}`", meta.kind)));
        }
        let mut model = ExtractorModel::new(meta.config)?;
        f.restore_params(&mut model, &[])?;
        Ok(ExtractorCheckpoint {
            model,
            trained_tasks: meta.trained_tasks,
        })
    }
}

pub fn save_extractor(path: &Path, model: &ExtractorModel, trained_tasks: &[Task]) -> Result<()> {
    ExtractorCheckpoint {
        model: model.clone(),
        trained_tasks: trained_tasks.to_vec(),
    }
    .to_tensor_file()?
    .write(path)
}

pub fn load_extractor(path: &Path) -> Result<ExtractorCheckpoint> {
    ExtractorCheckpoint::from_tensor_file(&TensorFile::read(path)?)
}
