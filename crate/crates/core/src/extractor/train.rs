use std::collections::{BTreeMap, HashMap};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::datagen::{iterate_training_order, ImpressionRecord};
use crate::error::{KeepError, Result};
use crate::extractor::loss::{pairwise_term, pointwise_term};
use crate::extractor::model::logits_from_pair;
use crate::extractor::triplets::build_triplets;
use crate::extractor::{ExtractorModel, Task};
use crate::nncore::{seeded_rng, sigmoid, AdamConfig, AdamState, Matrix, Parameterized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Weight of the pairwise term.
    pub alpha: f64,
    /// Weight of the pointwise term (1 for the hybrid loss).
    pub point_weight: f64,
    pub batch_size: usize,
    pub lr: f32,
    /// Negatives sampled per positive when building same-session triplets.
    pub triplet_cap: usize,
    pub tasks: Vec<Task>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            alpha: 0.25,
            point_weight: 1.0,
            batch_size: 256,
            lr: 0.001,
            triplet_cap: 3,
            tasks: Task::ALL.to_vec(),
            seed: 23,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(KeepError::Config(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(KeepError::Config("batch_size must be positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(KeepError::Config("at least one pre-training task is required".into()));
        }
        Ok(())
    }

    pub fn has_task(&self, t: Task) -> bool {
        self.tasks.contains(&t)
    }
}

/// One optimization batch. The first `n_point` records are the batch proper;
/// records after that are same-session negatives pulled in for triplets.
#[derive(Clone, Debug)]
pub struct PretrainBatch<'a> {
    pub records: Vec<&'a ImpressionRecord>,
    pub n_point: usize,
    /// Per task (indexed by [`Task::index`]): `(pos, neg)` into `records`.
    pub triplets: [Vec<(usize, usize)>; 3],
}

impl<'a> PretrainBatch<'a> {
    /// Batch without pairwise terms.
    pub fn pointwise(records: Vec<&'a ImpressionRecord>) -> Self {
        let n_point = records.len();
        PretrainBatch {
            records,
            n_point,
            triplets: Default::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLoss {
    pub point: f64,
    pub pair: f64,
    pub n_point: usize,
    pub n_pairs: usize,
}

impl TaskLoss {
    pub fn hybrid(&self, alpha: f64) -> f64 {
        self.point + alpha * self.pair
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub tasks: BTreeMap<Task, TaskLoss>,
    /// Σ over tasks of `point_weight·L^point + α·L^pair`.
    pub joint: f64,
    /// `joint / n_point`, the quantity whose gradient is applied.
    pub objective: f64,
}

/// Loss and gradient of the joint multi-task objective on one batch.
pub fn compute_gradients(
    model: &ExtractorModel,
    batch: &PretrainBatch<'_>,
    cfg: &PretrainConfig,
) -> Result<(StepLosses, Vec<Matrix>)> {
    let mut grads = model.zero_grads();
    let mut losses = StepLosses::default();
    if batch.records.is_empty() {
        return Ok((losses, grads));
    }
    let norm = batch.n_point.max(1) as f64;
    let (x, enc) = model.encode(&batch.records)?;
    let mut d_x = Matrix::zeros(x.rows(), x.cols());
    for &task in &cfg.tasks {
        let mut needed = vec![false; batch.records.len()];
        let point_rows: Vec<usize> = (0..batch.n_point)
            .filter(|&k| task.in_dataset(batch.records[k]))
            .collect();
        for &k in &point_rows {
            needed[k] = true;
        }
        let pairs = &batch.triplets[task.index()];
        for &(i, j) in pairs {
            needed[i] = true;
            needed[j] = true;
        }
        let rows: Vec<usize> = (0..needed.len()).filter(|&k| needed[k]).collect();
        let mut tl = TaskLoss {
            n_point: point_rows.len(),
            n_pairs: pairs.len(),
            ..TaskLoss::default()
        };
        if rows.is_empty() {
            losses.tasks.insert(task, tl);
            continue;
        }
        let mut local = vec![usize::MAX; batch.records.len()];
        for (l, &k) in rows.iter().enumerate() {
            local[k] = l;
        }
        let xs = x.select_rows(&rows);
        let trace = model.head_forward(task, &xs)?;
        let s = logits_from_pair(trace.logits());
        let mut ds = vec![0.0f64; rows.len()];
        for &k in &point_rows {
            let l = local[k];
            let y = task.label(batch.records[k]) as f32;
            tl.point += pointwise_term(s[l], y);
            ds[l] += cfg.point_weight * (sigmoid(s[l]) as f64 - y as f64);
        }
        for &(i, j) in pairs {
            let (li, lj) = (local[i], local[j]);
            tl.pair += pairwise_term(s[li], s[lj]);
            // d/ds_i log(1+exp(-(s_i - s_j))) = -σ(-(s_i - s_j))
            let g = -(crate::nncore::sigmoid64(-(s[li] as f64 - s[lj] as f64)));
            ds[li] += cfg.alpha * g;
            ds[lj] -= cfg.alpha * g;
        }
        losses.joint += cfg.point_weight * tl.point + cfg.alpha * tl.pair;
        losses.tasks.insert(task, tl);

        let mut upstream = Matrix::zeros(rows.len(), 2);
        for (l, d) in ds.iter().enumerate() {
            let d = (*d / norm) as f32;
            upstream.set(l, 0, -d);
            upstream.set(l, 1, d);
        }
        let range = model.head_grad_range(task);
        let back = model.head(task).backward(&trace, &upstream, &mut grads[range])?;
        let dxs = back.input_grad();
        for (l, &k) in rows.iter().enumerate() {
            for (a, b) in d_x.row_mut(k).iter_mut().zip(dxs.row(l)) {
                *a += b;
            }
        }
    }
    losses.objective = losses.joint / norm;
    model.backward_encoding(&enc, &d_x, &mut grads)?;
    Ok((losses, grads))
}

/// Objective value only (used by finite-difference checks).
pub fn objective(model: &ExtractorModel, batch: &PretrainBatch<'_>, cfg: &PretrainConfig) -> Result<f64> {
    Ok(compute_gradients(model, batch, cfg)?.0.objective)
}

/// One Adam step on the joint loss.
pub fn pretrain_step(
    model: &mut ExtractorModel,
    adam: &mut AdamState,
    batch: &PretrainBatch<'_>,
    cfg: &PretrainConfig,
) -> Result<StepLosses> {
    let (losses, grads) = compute_gradients(model, batch, cfg)?;
    adam.step(model.named_params_mut(), &grads)?;
    Ok(losses)
}

/// Same-session triplets for one day's records, keyed by record position.
fn day_triplets(day: &[&ImpressionRecord], cfg: &PretrainConfig, day_index: u32) -> Result<[HashMap<usize, Vec<usize>>; 3]> {
    let mut sessions: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for (k, r) in day.iter().enumerate() {
        sessions.entry((r.user_id, r.session_id)).or_default().push(k);
    }
    let mut out: [HashMap<usize, Vec<usize>>; 3] = Default::default();
    if cfg.alpha == 0.0 {
        return Ok(out);
    }
    for &task in &cfg.tasks {
        let mut rng = seeded_rng(cfg.seed ^ ((day_index as u64) << 8) ^ ((task.index() as u64 + 1) * 0x51_7CC1));
        for members in sessions.values() {
            let idx: Vec<usize> = members.iter().copied().filter(|&k| task.in_dataset(day[k])).collect();
            if idx.len() < 2 {
                continue;
            }
            let recs: Vec<&ImpressionRecord> = idx.iter().map(|&k| day[k]).collect();
            let tb = build_triplets(&recs, task, cfg.triplet_cap, &mut rng)?;
            for t in tb.triplets {
                out[task.index()].entry(idx[t.pos]).or_default().push(idx[t.neg]);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub records: usize,
    pub mean_objective: f64,
}

/// Extractor plus optimizer state, trained day by day.
#[derive(Clone, Debug)]
pub struct Pretrainer {
    pub model: ExtractorModel,
    pub adam: AdamState,
    pub config: PretrainConfig,
}

impl Pretrainer {
    pub fn new(model: ExtractorModel, config: PretrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        Ok(Pretrainer { model, adam, config })
    }

    /// Consume `log` over `days` once, in training order.
    pub fn train_days(&mut self, log: &[ImpressionRecord], days: RangeInclusive<u32>) -> Result<PretrainReport> {
        let order = iterate_training_order(log, days.clone(), self.config.seed)?;
        let mut report = PretrainReport::default();
        let mut start = 0;
        for day in days {
            let end = start + order[start..].iter().take_while(|r| r.day == day).count();
            let seg = &order[start..end];
            start = end;
            if seg.is_empty() {
                continue;
            }
            let trip = day_triplets(seg, &self.config, day)?;
            for chunk_start in (0..seg.len()).step_by(self.config.batch_size) {
                let chunk_end = (chunk_start + self.config.batch_size).min(seg.len());
                let batch = assemble_batch(seg, chunk_start..chunk_end, &trip);
                let l = pretrain_step(&mut self.model, &mut self.adam, &batch, &self.config)?;
                report.steps += 1;
                report.records += batch.n_point;
                report.mean_objective += l.objective;
            }
        }
        if report.steps > 0 {
            report.mean_objective /= report.steps as f64;
        }
        Ok(report)
    }
}

fn assemble_batch<'a>(
    seg: &[&'a ImpressionRecord],
    range: std::ops::Range<usize>,
    trip: &[HashMap<usize, Vec<usize>>; 3],
) -> PretrainBatch<'a> {
    let mut records: Vec<&ImpressionRecord> = seg[range.clone()].to_vec();
    let n_point = records.len();
    let mut local: HashMap<usize, usize> = range.clone().enumerate().map(|(l, k)| (k, l)).collect();
    let mut triplets: [Vec<(usize, usize)>; 3] = Default::default();
    for (t, per_task) in trip.iter().enumerate() {
        for k in range.clone() {
            let Some(negs) = per_task.get(&k) else { continue };
            for &j in negs {
                let lj = *local.entry(j).or_insert_with(|| {
                    records.push(seg[j]);
                    records.len() - 1
                });
                triplets[t].push((local[&k], lj));
            }
        }
    }
    PretrainBatch {
        records,
        n_point,
        triplets,
    }
}
