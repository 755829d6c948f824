use std::collections::{BTreeMap, HashMap};
use std::ops::RangeInclusive;
use std::sync::Arc;

use crate::checkpoint::TensorFile;
use crate::datagen::ImpressionRecord;
use crate::error::{KeepError, Result};
use crate::harness::gauc::{gauc_grouped, GaucReport};
use crate::plugnet::{DayTrainReport, DownstreamConfig, DownstreamModel, DownstreamTrainer, KnowledgeSource, PlugConfig, TrainConfig};

/// Knowledge handed to the downstream model for one training day.
pub type DayKnowledge = Option<Arc<dyn KnowledgeSource>>;

#[derive(Clone, Debug)]
pub struct OnlineSpec {
    pub days: RangeInclusive<u32>,
    pub downstream: DownstreamConfig,
    pub train: TrainConfig,
    /// Attach a plug-in network (fresh, zero output) if the model has none.
    pub plug: Option<PlugConfig>,
}

#[derive(Debug)]
pub struct OnlineRun {
    /// Serialized trainer state after each day.
    pub checkpoints: BTreeMap<u32, Vec<u8>>,
    pub reports: Vec<DayTrainReport>,
    pub trainer: DownstreamTrainer,
}

fn restore(bytes: &[u8], expect_day: u32, plug: Option<PlugConfig>) -> Result<DownstreamTrainer> {
    let t = DownstreamTrainer::warm_start(&TensorFile::from_bytes(bytes)?, plug)?;
    if t.cursor_day != Some(expect_day) {
        return Err(KeepError::State(format!(
            "checkpoint gap at day {}: expected state after day {expect_day}, found {:?}",
            expect_day + 1,
            t.cursor_day
        )));
    }
    Ok(t)
}

/// Day-by-day online learning: each day warm-starts from the previous day's
/// checkpoint, consumes that day once, and writes a new checkpoint.
///
/// `resume` is the checkpoint of the day before `spec.days`; without it the
/// first day starts from a freshly initialized model.
pub fn run_online_loop(
    spec: &OnlineSpec,
    log: &[ImpressionRecord],
    resume: Option<(u32, &[u8])>,
    knowledge: &mut dyn FnMut(u32) -> Result<DayKnowledge>,
) -> Result<OnlineRun> {
    let first = *spec.days.start();
    if spec.days.is_empty() {
        return Err(KeepError::Config("online loop needs a non-empty day window".into()));
    }
    let mut checkpoints: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
    let mut reports = Vec::new();
    let mut trainer = match resume {
        Some((day, bytes)) => {
            if day.checked_add(1) != Some(first) {
                return Err(KeepError::State(format!(
                    "checkpoint gap at day {first}: resume checkpoint is from day {day}"
                )));
            }
            restore(bytes, day, spec.plug.clone())?
        }
        None => {
            let mut t = DownstreamTrainer::new(DownstreamModel::new(spec.downstream.clone())?, None, spec.train.clone())?;
            if let Some(pc) = &spec.plug {
                t.attach_plug(pc.clone())?;
            }
            t
        }
    };
    for day in spec.days.clone() {
        if day > first {
            let prev = checkpoints
                .get(&(day - 1))
                .ok_or_else(|| KeepError::State(format!("checkpoint gap at day {day}")))?;
            trainer = restore(prev, day - 1, spec.plug.clone())?;
        }
        let k = knowledge(day)?;
        reports.push(trainer.train_day(log, day, k.as_deref())?);
        checkpoints.insert(day, trainer.to_checkpoint()?.to_bytes()?);
    }
    Ok(OnlineRun {
        checkpoints,
        reports,
        trainer,
    })
}

/// GAUC of `trainer` on `test`.
pub fn evaluate(
    trainer: &DownstreamTrainer,
    test: &[&ImpressionRecord],
    knowledge: Option<&dyn KnowledgeSource>,
    user_clicks: &HashMap<u64, u64>,
) -> Result<GaucReport> {
    let scores = trainer.predict(test, knowledge)?;
    let imp: Vec<(u64, f32, u8)> = test.iter().zip(&scores).map(|(r, &s)| (r.user_id, s, r.click)).collect();
    gauc_grouped(&imp, user_clicks)
}
