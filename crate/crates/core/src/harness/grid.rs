use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, Domain, GeneratedLogs, GeneratorConfig, ImpressionRecord};
use crate::error::{KeepError, Result};
use crate::extractor::{ExtractorConfig, ExtractorModel, KnowledgeMask, PretrainConfig, Pretrainer, Task};
use crate::harness::config::{ExperimentConfig, KnowledgeSpec, Mode};
use crate::harness::gauc::{GaucReport, GROUP_BOUNDS};
use crate::harness::online::{evaluate, run_online_loop, DayKnowledge, OnlineSpec};
use crate::plugnet::{DownstreamConfig, ExtractorKnowledge, KnowledgeSource, PlugConfig, TrainConfig};
use crate::servingkit::{
    train_decomposed, ComposedKnowledge, DecomposedConfig, DecomposedExtractor, DegeneratedExtractor,
    DegeneratedKnowledge, KnowledgeSnapshot, SnapshotKnowledge,
};

/// Published reference GAUCs, shown for context only.
pub const REFERENCE_BASE_GAUC: f64 = 0.6310;
pub const REFERENCE_KEEP_GAUC: f64 = 0.6380;

/// Builds a knowledge source for a service endpoint (supplied by the caller,
/// which owns the network client).
pub type ServiceResolver = dyn Fn(&str, Option<u32>) -> Result<Arc<dyn KnowledgeSource>> + Sync;

/// One row of the grid: a mode plus its knowledge and pre-training variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub mode: Mode,
    pub mask: KnowledgeMask,
    pub tasks: Vec<Task>,
}

impl RunSpec {
    fn new(mode: Mode, mask: KnowledgeMask, tasks: &[Task]) -> Self {
        let mut label = mode.name().to_string();
        if mode == Mode::Keep || mode == Mode::KeepC {
            if mask != KnowledgeMask::default() {
                let _ = write!(label, "[{}]", mask.label());
            }
            if tasks != Task::ALL {
                let names: Vec<&str> = tasks.iter().map(|t| t.name()).collect();
                let _ = write!(label, "{{{}}}", names.join("+"));
            }
        }
        RunSpec {
            label,
            mode,
            mask,
            tasks: tasks.to_vec(),
        }
    }
}

/// Rows implied by the configured modes and report sections.
pub fn run_specs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut specs: Vec<RunSpec> = cfg
        .modes
        .iter()
        .map(|&m| RunSpec::new(m, cfg.knowledge_mask, &cfg.pretrain_tasks))
        .collect();
    let has_keep = cfg.modes.contains(&Mode::Keep);
    if has_keep && cfg.tables.knowledge_ablation {
        for mask in [KnowledgeMask::USER_ONLY, KnowledgeMask::USER_ITEM, KnowledgeMask::default()] {
            specs.push(RunSpec::new(Mode::Keep, mask, &Task::ALL));
        }
    }
    if has_keep && cfg.tables.task_ablation {
        for tasks in [&[Task::Click][..], &[Task::Click, Task::Conversion][..], &Task::ALL[..]] {
            specs.push(RunSpec::new(Mode::Keep, KnowledgeMask::default(), tasks));
        }
    }
    let mut seen = Vec::new();
    specs.retain(|s| {
        if seen.contains(&s.label) {
            false
        } else {
            seen.push(s.label.clone());
            true
        }
    });
    specs
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub mode: Mode,
    pub seed: u64,
    pub gauc: Option<f64>,
    pub report: Option<GaucReport>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridReport {
    pub specs: Vec<RunSpec>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
    pub seconds: f64,
}

fn mix(base: u64, seed: u64) -> u64 {
    base.wrapping_add(seed.wrapping_mul(1_000_003))
}

/// Per-seed configs derived from the experiment config.
#[derive(Clone, Debug)]
pub struct SeedConfigs {
    pub generator: GeneratorConfig,
    pub extractor: ExtractorConfig,
    pub pretrain: PretrainConfig,
    pub downstream: DownstreamConfig,
    pub train: TrainConfig,
    pub decomposed: DecomposedConfig,
    pub plug_seed: u64,
}

impl SeedConfigs {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Self {
        SeedConfigs {
            generator: GeneratorConfig {
                seed: mix(cfg.generator.seed, seed),
                ..cfg.generator.clone()
            },
            extractor: ExtractorConfig {
                seed: mix(cfg.extractor.seed, seed),
                ..cfg.extractor.clone()
            },
            pretrain: PretrainConfig {
                seed: mix(cfg.pretrain.seed, seed),
                tasks: cfg.pretrain_tasks.clone(),
                ..cfg.pretrain.clone()
            },
            downstream: DownstreamConfig {
                seed: mix(cfg.downstream.seed, seed),
                ..cfg.downstream.clone()
            },
            train: TrainConfig {
                seed: mix(cfg.train.seed, seed),
                ..cfg.train.clone()
            },
            decomposed: DecomposedConfig {
                seed: mix(cfg.decomposed.seed, seed),
                ..cfg.decomposed.clone()
            },
            plug_seed: mix(97, seed),
        }
    }
}

/// Everything a grid cell reads for one seed.
pub struct SeedContext {
    pub seed: u64,
    pub configs: SeedConfigs,
    pub logs: GeneratedLogs,
    /// Super-domain train-window records followed by the sub-domain log.
    pub merged: Vec<ImpressionRecord>,
    pub user_clicks: HashMap<u64, u64>,
    pub extractors: BTreeMap<Vec<Task>, Pretrainer>,
    pub degenerated: Option<Arc<DegeneratedExtractor>>,
    pub decomposed: Option<Arc<DecomposedExtractor>>,
}

impl SeedContext {
    /// Generate data and pre-train every extractor the specs need.
    pub fn build(cfg: &ExperimentConfig, specs: &[RunSpec], seed: u64) -> Result<Self> {
        let configs = SeedConfigs::new(cfg, seed);
        let t = Instant::now();
        let logs = generate(&configs.generator)?;
        log::info!(
            "seed {seed}: generated {} super / {} sub records in {:.1}s",
            logs.super_log.len(),
            logs.sub_log.len(),
            t.elapsed().as_secs_f64()
        );
        let mut user_clicks = HashMap::new();
        for r in logs.super_log.iter().filter(|r| r.day < cfg.test_day && r.click == 1) {
            *user_clicks.entry(r.user_id).or_insert(0) += 1;
        }
        let needs = |m: Mode| specs.iter().any(|s| s.mode == m);
        let merged = if needs(Mode::SampleMerging) {
            let tr = cfg.train_range();
            logs.super_log
                .iter()
                .filter(|r| tr.contains(&r.day))
                .chain(logs.sub_log.iter())
                .cloned()
                .collect()
        } else {
            Vec::new()
        };
        let mut extractors = BTreeMap::new();
        if cfg.knowledge == KnowledgeSpec::Model {
            for s in specs {
                let wants = matches!(s.mode, Mode::Keep | Mode::KeepC | Mode::KeepDegenerated);
                if !wants || extractors.contains_key(&s.tasks) {
                    continue;
                }
                let t = Instant::now();
                let pc = PretrainConfig {
                    tasks: s.tasks.clone(),
                    ..configs.pretrain.clone()
                };
                let mut p = Pretrainer::new(ExtractorModel::new(configs.extractor.clone())?, pc)?;
                let rep = p.train_days(&logs.super_log, cfg.pretrain_range())?;
                log::info!(
                    "seed {seed}: pre-trained extractor {:?} on {} records in {:.1}s (objective {:.4})",
                    s.tasks,
                    rep.records,
                    t.elapsed().as_secs_f64(),
                    rep.mean_objective
                );
                extractors.insert(s.tasks.clone(), p);
            }
        }
        let degenerated = if cfg.knowledge == KnowledgeSpec::Model
            && (needs(Mode::KeepDegenerated) || needs(Mode::KeepDecompDegen))
        {
            let t = Instant::now();
            let mut d = DegeneratedExtractor::new(configs.extractor.clone())?;
            d.train(&logs.super_log, cfg.pretrain_range(), configs.pretrain.clone())?;
            log::info!("seed {seed}: degenerated extractor in {:.1}s", t.elapsed().as_secs_f64());
            Some(Arc::new(d))
        } else {
            None
        };
        let decomposed = if cfg.knowledge == KnowledgeSpec::Model
            && (needs(Mode::KeepDecomposed) || needs(Mode::KeepDecompDegen))
        {
            let t = Instant::now();
            let mut d = DecomposedExtractor::new(configs.decomposed.clone())?;
            train_decomposed(&mut d, &logs.super_log, cfg.pretrain_range(), configs.decomposed.seed)?;
            log::info!("seed {seed}: decomposed extractor in {:.1}s", t.elapsed().as_secs_f64());
            Some(Arc::new(d))
        } else {
            None
        };
        Ok(SeedContext {
            seed,
            configs,
            logs,
            merged,
            user_clicks,
            extractors,
            degenerated,
            decomposed,
        })
    }

    fn extractor(&self, tasks: &[Task]) -> Result<&Pretrainer> {
        self.extractors
            .get(tasks)
            .ok_or_else(|| KeepError::State(format!("no extractor pre-trained for tasks {tasks:?}")))
    }

    fn test_records(&self, day: u32) -> Vec<&ImpressionRecord> {
        self.logs.sub_log.iter().filter(|r| r.day == day && r.domain == Domain::Sub).collect()
    }

    /// Static knowledge for a plugged mode (KEEP-C is handled by the caller).
    fn knowledge(
        &self,
        cfg: &ExperimentConfig,
        spec: &RunSpec,
        service: Option<&ServiceResolver>,
    ) -> Result<Arc<dyn KnowledgeSource>> {
        match &cfg.knowledge {
            KnowledgeSpec::File(path) => {
                return Ok(Arc::new(SnapshotKnowledge::new(Arc::new(KnowledgeSnapshot::read(path)?))));
            }
            KnowledgeSpec::Service { addr, version } => {
                let resolve =
                    service.ok_or_else(|| KeepError::Config("no client available for a knowledge service".into()))?;
                return resolve(addr, *version);
            }
            KnowledgeSpec::Model => {}
        }
        let missing = |what: &str| KeepError::State(format!("{what} extractor not built"));
        Ok(match spec.mode {
            Mode::Keep | Mode::KeepC => {
                let p = self.extractor(&spec.tasks)?;
                Arc::new(ExtractorKnowledge::new(Arc::new(p.model.clone()), spec.tasks.clone(), spec.mask))
            }
            Mode::KeepDecomposed => Arc::new(ComposedKnowledge::new(
                Some(self.decomposed.clone().ok_or_else(|| missing("decomposed"))?),
                None,
            )?),
            Mode::KeepDecompDegen => Arc::new(ComposedKnowledge::new(
                Some(self.decomposed.clone().ok_or_else(|| missing("decomposed"))?),
                Some(self.degenerated.clone().ok_or_else(|| missing("degenerated"))?),
            )?),
            Mode::KeepDegenerated => Arc::new(DegeneratedKnowledge::new(
                Arc::new(self.extractor(&spec.tasks)?.model.clone()),
                self.degenerated.clone().ok_or_else(|| missing("degenerated"))?,
            )),
            Mode::Base | Mode::SampleMerging => unreachable!("unplugged modes take no knowledge"),
        })
    }

    /// Train and evaluate one grid cell.
    pub fn run_cell(
        &self,
        cfg: &ExperimentConfig,
        spec: &RunSpec,
        service: Option<&ServiceResolver>,
    ) -> Result<GaucReport> {
        let log: &[ImpressionRecord] = match spec.mode {
            Mode::SampleMerging => &self.merged,
            _ => &self.logs.sub_log,
        };
        let test = self.test_records(cfg.test_day);
        let mut os = OnlineSpec {
            days: cfg.train_range(),
            downstream: self.configs.downstream.clone(),
            train: self.configs.train.clone(),
            plug: None,
        };
        if !spec.mode.uses_knowledge() {
            let run = run_online_loop(&os, log, None, &mut |_| Ok(None))?;
            return evaluate(&run.trainer, &test, None, &self.user_clicks);
        }
        let static_k = self.knowledge(cfg, spec, service)?;
        os.plug = Some(PlugConfig {
            knowledge_dim: static_k.dim(),
            plug_layer: cfg.plug_layer,
            seed: self.configs.plug_seed,
        });
        if spec.mode == Mode::KeepC && cfg.knowledge == KnowledgeSpec::Model {
            // extractor keeps learning on the super domain alongside the
            // downstream model
            let mut pre = self.extractor(&spec.tasks)?.clone();
            let mut latest: DayKnowledge = None;
            let run = run_online_loop(&os, log, None, &mut |day| {
                pre.train_days(&self.logs.super_log, day..=day)?;
                let k: Arc<dyn KnowledgeSource> =
                    Arc::new(ExtractorKnowledge::new(Arc::new(pre.model.clone()), spec.tasks.clone(), spec.mask));
                latest = Some(k.clone());
                Ok(Some(k))
            })?;
            let k = latest.unwrap_or(static_k);
            return evaluate(&run.trainer, &test, Some(k.as_ref()), &self.user_clicks);
        }
        let k = static_k.clone();
        let run = run_online_loop(&os, log, None, &mut |_| Ok(Some(k.clone())))?;
        evaluate(&run.trainer, &test, Some(static_k.as_ref()), &self.user_clicks)
    }
}

/// Run every (row, seed) cell. Cells of a seed share that seed's data and
/// extractors; a failing cell is recorded and the grid carries on.
pub fn run_experiment_grid(cfg: &ExperimentConfig, service: Option<&ServiceResolver>) -> Result<GridReport> {
    cfg.validate()?;
    let start = Instant::now();
    let specs = run_specs(cfg);
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let ctx = match SeedContext::build(cfg, &specs, seed) {
            Ok(c) => c,
            Err(e) => {
                log::error!("seed {seed}: setup failed: {e}");
                for s in &specs {
                    cells.push(CellResult {
                        label: s.label.clone(),
                        mode: s.mode,
                        seed,
                        gauc: None,
                        report: None,
                        error: Some(format!("setup: {e}")),
                        seconds: 0.0,
                    });
                }
                continue;
            }
        };
        let seed_cells: Vec<CellResult> = specs
            .par_iter()
            .map(|s| {
                let t = Instant::now();
                let res = ctx.run_cell(cfg, s, service);
                let seconds = t.elapsed().as_secs_f64();
                match res {
                    Ok(r) => {
                        log::info!("seed {seed}: {} GAUC {:?} ({seconds:.1}s)", s.label, r.gauc);
                        CellResult {
                            label: s.label.clone(),
                            mode: s.mode,
                            seed,
                            gauc: r.gauc,
                            error: r.gauc.is_none().then(|| "no eligible test users".to_string()),
                            report: Some(r),
                            seconds,
                        }
                    }
                    Err(e) => {
                        log::error!("seed {seed}: {} failed: {e}", s.label);
                        CellResult {
                            label: s.label.clone(),
                            mode: s.mode,
                            seed,
                            gauc: None,
                            report: None,
                            error: Some(e.to_string()),
                            seconds,
                        }
                    }
                }
            })
            .collect();
        cells.extend(seed_cells);
    }
    let report = GridReport {
        specs,
        seeds: cfg.seeds.clone(),
        cells,
        seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &cfg.output_dir {
        report.write_outputs(dir)?;
    }
    Ok(report)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (k, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if k > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            if k == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

impl GridReport {
    pub fn stats(&self, label: &str) -> Option<Stats> {
        let cells: Vec<&CellResult> = self.cells.iter().filter(|c| c.label == label).collect();
        if cells.is_empty() {
            return None;
        }
        let vals: Vec<f64> = cells.iter().filter_map(|c| c.gauc).collect();
        let (mean, std) = mean_std(&vals);
        Some(Stats {
            mean,
            std,
            n: vals.len(),
            failed: cells.len() - vals.len(),
        })
    }

    fn mean(&self, label: &str) -> Option<f64> {
        self.stats(label).filter(|s| s.failed == 0 && s.n > 0).map(|s| s.mean)
    }

    fn gauc_cell(&self, label: &str) -> String {
        match self.stats(label) {
            None => "-".into(),
            Some(s) if s.n == 0 => "FAILED".into(),
            Some(s) => {
                let mut c = format!("{:.4} ± {:.4}", s.mean, s.std);
                if s.failed > 0 {
                    let _ = write!(c, " ({} FAILED)", s.failed);
                }
                c
            }
        }
    }

    fn delta_cell(&self, label: &str, against: &str) -> String {
        match (self.stats(label), self.stats(against)) {
            (Some(a), Some(b)) if a.n > 0 && b.n > 0 => format!("{:+.4}", a.mean - b.mean),
            _ => "-".into(),
        }
    }

    fn has(&self, label: &str) -> bool {
        self.specs.iter().any(|s| s.label == label)
    }

    /// Aligned plain-text report of every section that has rows.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "seeds: {:?}   cells: {}   wall time: {:.1}s\n",
            self.seeds,
            self.cells.len(),
            self.seconds
        );
        let main: Vec<&str> = ["base", "sample_merging", "keep", "keep_c"]
            .into_iter()
            .filter(|l| self.has(l))
            .collect();
        if !main.is_empty() {
            let rows: Vec<Vec<String>> = main
                .iter()
                .map(|&l| {
                    let (rg, rd) = match l {
                        "base" => (format!("{REFERENCE_BASE_GAUC:.4}"), "-".to_string()),
                        "keep" => (
                            format!("{REFERENCE_KEEP_GAUC:.4}"),
                            format!("{:+.4}", REFERENCE_KEEP_GAUC - REFERENCE_BASE_GAUC),
                        ),
                        _ => ("-".into(), "-".into()),
                    };
                    let mode: Mode = l.parse().expect("known mode label");
                    vec![
                        mode.display_name().to_string(),
                        self.gauc_cell(l),
                        if l == "base" { "+0.0000".into() } else { self.delta_cell(l, "base") },
                        rg,
                        rd,
                    ]
                })
                .collect();
            out.push_str("Main comparison (sub-domain test day)\n");
            out.push_str(&render_table(&["Method", "GAUC", "Δ vs Base", "ref GAUC", "ref Δ"], &rows));
            out.push('\n');
        }
        let ablation = ["keep[K_u]", "keep[K_u+K_i]", "keep"];
        if ablation[..2].iter().all(|l| self.has(l)) {
            let mut rows = Vec::new();
            if self.has("base") {
                rows.push(vec!["Base".into(), self.gauc_cell("base"), "+0.0000".into()]);
            }
            for (l, name) in ablation.iter().zip(["K_u", "K_u + K_i", "K_u + K_i + K_ui"]) {
                rows.push(vec![name.into(), self.gauc_cell(l), self.delta_cell(l, "base")]);
            }
            out.push_str("Knowledge ablation\n");
            out.push_str(&render_table(&["Knowledge", "GAUC", "Δ vs Base"], &rows));
            out.push('\n');
        }
        let tasks = ["keep{click}", "keep{click+conversion}", "keep"];
        if tasks[..2].iter().all(|l| self.has(l)) {
            let rows: Vec<Vec<String>> = tasks
                .iter()
                .zip(["click", "click + conversion", "click + conversion + cart"])
                .map(|(l, name)| vec![name.to_string(), self.gauc_cell(l), self.delta_cell(l, "base")])
                .collect();
            out.push_str("Pre-training task ablation\n");
            out.push_str(&render_table(&["Pre-training tasks", "GAUC", "Δ vs Base"], &rows));
            out.push('\n');
        }
        if self.has("base") && self.has("keep") {
            let mut header = vec!["Method".to_string()];
            for (g, lo) in GROUP_BOUNDS.iter().enumerate() {
                header.push(match GROUP_BOUNDS.get(g + 1) {
                    Some(hi) => format!("[{lo}, {hi})"),
                    None => format!("{lo}+"),
                });
            }
            let rows: Vec<Vec<String>> = ["base", "keep"]
                .iter()
                .map(|&l| {
                    let mut row = vec![l.parse::<Mode>().expect("mode").display_name().to_string()];
                    for g in 0..GROUP_BOUNDS.len() {
                        let vals: Vec<f64> = self
                            .cells
                            .iter()
                            .filter(|c| c.label == l)
                            .filter_map(|c| c.report.as_ref()?.groups.get(g)?.gauc)
                            .collect();
                        let users: usize = self
                            .cells
                            .iter()
                            .filter(|c| c.label == l)
                            .filter_map(|c| c.report.as_ref().map(|r| r.groups[g].users))
                            .sum();
                        row.push(if vals.is_empty() {
                            "-".into()
                        } else {
                            format!("{:.4} (n={users})", mean_std(&vals).0)
                        });
                    }
                    row
                })
                .collect();
            let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
            out.push_str("GAUC by user group (super-domain clicks before the test day)\n");
            out.push_str(&render_table(&hdr, &rows));
            out.push('\n');
        }
        let serving = ["keep_degenerated", "keep_decomposed", "keep_decomp_degen"];
        if serving.iter().any(|l| self.has(l)) {
            let mut rows = Vec::new();
            if self.has("keep") {
                rows.push(vec!["KEEP (full K(u,i))".into(), self.gauc_cell("keep"), "+0.0000".into()]);
            }
            for (l, name) in serving.iter().zip(["degenerated", "decomposed", "decomposed + degenerated"]) {
                if self.has(l) {
                    rows.push(vec![name.into(), self.gauc_cell(l), self.delta_cell(l, "keep")]);
                }
            }
            out.push_str("Serving strategies\n");
            out.push_str(&render_table(&["Strategy", "GAUC", "Δ vs KEEP"], &rows));
            out.push('\n');
        }
        let failures: Vec<&CellResult> = self.cells.iter().filter(|c| c.error.is_some()).collect();
        if !failures.is_empty() {
            out.push_str("Failed cells\n");
            for c in failures {
                let _ = writeln!(out, "  {} seed {}: {}", c.label, c.seed, c.error.as_deref().unwrap_or(""));
            }
        }
        out
    }

    /// Directional expectations over seed means; rows that were not run are
    /// skipped.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        let mut push = |name: &str, pair: Option<(bool, String)>| {
            if let Some((passed, detail)) = pair {
                out.push(Check {
                    name: name.into(),
                    passed,
                    detail,
                });
            }
        };
        let m = |l: &str| if self.has(l) { Some(self.mean(l)) } else { None };
        let ge = |a: Option<f64>, b: Option<f64>, margin: f64| match (a, b) {
            (Some(a), Some(b)) => (a - b >= margin, format!("{a:.4} vs {b:.4} (Δ {:+.4})", a - b)),
            _ => (false, "missing or failed runs".into()),
        };
        let both = |a: &str, b: &str| m(a).zip(m(b));
        push("KEEP - Base >= +0.005", both("keep", "base").map(|(a, b)| ge(a, b, 0.005)));
        push(
            "KEEP > Sample-Merging",
            both("keep", "sample_merging").map(|(a, b)| {
                let (p, d) = ge(a, b, 0.0);
                (p && a != b, d)
            }),
        );
        if let (Some(full), Some(ui), Some(u), Some(base)) = (m("keep"), m("keep[K_u+K_i]"), m("keep[K_u]"), m("base")) {
            let chain = [full, ui, u, base];
            let ok = chain.iter().all(Option::is_some) && chain.windows(2).all(|w| w[0] >= w[1]);
            let detail = chain
                .iter()
                .map(|v| v.map_or("?".into(), |x| format!("{x:.4}")))
                .collect::<Vec<_>>()
                .join(" >= ");
            push("ablation K_u+K_i+K_ui >= K_u+K_i >= K_u >= Base", Some((ok, detail)));
        }
        push(
            "decomposed+degenerated >= decomposed",
            both("keep_decomp_degen", "keep_decomposed").map(|(a, b)| ge(a, b, 0.0)),
        );
        out
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        let runs = dir.join("runs");
        fs::create_dir_all(&runs)?;
        for c in &self.cells {
            let name = format!(
                "{}_seed{}.json",
                c.label.replace(|ch: char| !ch.is_ascii_alphanumeric() && ch != '_', "-"),
                c.seed
            );
            fs::write(runs.join(name), serde_json::to_string_pretty(c)?)?;
        }
        let summary: BTreeMap<&str, Option<Stats>> =
            self.specs.iter().map(|s| (s.label.as_str(), self.stats(&s.label))).collect();
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "seeds": self.seeds,
                "seconds": self.seconds,
                "rows": summary,
                "checks": self.checks(),
            }))?,
        )?;
        fs::write(dir.join("report.txt"), self.render())?;
        Ok(())
    }
}
