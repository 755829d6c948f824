use std::fmt;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::GeneratorConfig;
use crate::error::{KeepError, Result};
use crate::extractor::{ExtractorConfig, KnowledgeMask, PretrainConfig, Task};
use crate::plugnet::{DownstreamConfig, TrainConfig};
use crate::servingkit::DecomposedConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Base,
    SampleMerging,
    Keep,
    KeepC,
    KeepDecomposed,
    KeepDegenerated,
    KeepDecompDegen,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Base,
        Mode::SampleMerging,
        Mode::Keep,
        Mode::KeepC,
        Mode::KeepDecomposed,
        Mode::KeepDegenerated,
        Mode::KeepDecompDegen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Base => "base",
            Mode::SampleMerging => "sample_merging",
            Mode::Keep => "keep",
            Mode::KeepC => "keep_c",
            Mode::KeepDecomposed => "keep_decomposed",
            Mode::KeepDegenerated => "keep_degenerated",
            Mode::KeepDecompDegen => "keep_decomp_degen",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Mode::Base => "Base",
            Mode::SampleMerging => "Sample-Merging",
            Mode::Keep => "KEEP",
            Mode::KeepC => "KEEP-C",
            Mode::KeepDecomposed => "KEEP decomposed",
            Mode::KeepDegenerated => "KEEP degenerated",
            Mode::KeepDecompDegen => "KEEP decomposed+degenerated",
        }
    }

    pub fn uses_knowledge(self) -> bool {
        !matches!(self, Mode::Base | Mode::SampleMerging)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = KeepError;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.trim().to_ascii_lowercase().replace('-', "_");
        let m = match k.as_str() {
            "base" => Mode::Base,
            "sample_merging" | "merge" | "sm" => Mode::SampleMerging,
            "keep" => Mode::Keep,
            "keep_c" => Mode::KeepC,
            "keep_decomposed" => Mode::KeepDecomposed,
            "keep_degenerated" => Mode::KeepDegenerated,
            "keep_decomp_degen" => Mode::KeepDecompDegen,
            _ => return Err(KeepError::Config(format!("unknown mode `{s}`"))),
        };
        Ok(m)
    }
}

/// Where plugged runs read their knowledge from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeSpec {
    /// Computed from the extractors trained inside the run.
    Model,
    /// A knowledge snapshot file.
    File(PathBuf),
    /// A knowledge cache service, optionally pinned to a version.
    Service { addr: String, version: Option<u32> },
}

impl FromStr for KnowledgeSpec {
    type Err = KeepError;

    /// `model`, `file:<path>` or `gkc:<host>:<port>[@<version>]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "model" {
            return Ok(KnowledgeSpec::Model);
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(KnowledgeSpec::File(PathBuf::from(p)));
        }
        if let Some(rest) = s.strip_prefix("gkc:") {
            let (addr, version) = match rest.split_once('@') {
                Some((a, v)) => (
                    a,
                    Some(v.parse().map_err(|_| KeepError::Config(format!("bad knowledge version `{v}`")))?),
                ),
                None => (rest, None),
            };
            return Ok(KnowledgeSpec::Service {
                addr: addr.to_string(),
                version,
            });
        }
        Err(KeepError::Config(format!(
            "knowledge source `{s}` must be `model`, `file:<path>` or `gkc:<host>:<port>[@version]`"
        )))
    }
}

/// Optional report sections beyond the main comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tables {
    pub knowledge_ablation: bool,
    pub task_ablation: bool,
    pub user_groups: bool,
    pub serving: bool,
}

impl Default for Tables {
    fn default() -> Self {
        Tables {
            knowledge_ablation: true,
            task_ablation: false,
            user_groups: true,
            serving: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub modes: Vec<Mode>,
    pub pretrain_days: (u32, u32),
    pub train_days: (u32, u32),
    pub test_day: u32,
    pub seeds: Vec<u64>,
    pub knowledge: KnowledgeSpec,
    pub knowledge_mask: KnowledgeMask,
    pub pretrain_tasks: Vec<Task>,
    /// 1-based main-MLP layer receiving the plug-in output.
    pub plug_layer: usize,
    pub tables: Tables,
    pub output_dir: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub extractor: ExtractorConfig,
    pub pretrain: PretrainConfig,
    pub downstream: DownstreamConfig,
    pub train: TrainConfig,
    pub decomposed: DecomposedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            modes: Mode::ALL.to_vec(),
            pretrain_days: (0, 4),
            train_days: (5, 6),
            test_day: 7,
            seeds: vec![1, 2, 3, 4, 5],
            knowledge: KnowledgeSpec::Model,
            knowledge_mask: KnowledgeMask::default(),
            pretrain_tasks: Task::ALL.to_vec(),
            plug_layer: 1,
            tables: Tables::default(),
            output_dir: None,
            generator: GeneratorConfig::default(),
            extractor: ExtractorConfig::default(),
            // one pass over a desk-sized log leaves embeddings near their
            // init at the library default of 0.001
            pretrain: PretrainConfig {
                lr: 0.003,
                ..PretrainConfig::default()
            },
            downstream: DownstreamConfig::default(),
            train: TrainConfig::default(),
            decomposed: DecomposedConfig {
                lr: 0.003,
                ..DecomposedConfig::default()
            },
        }
    }
}

fn parse_range(v: &str) -> Result<(u32, u32)> {
    let bad = || KeepError::Config(format!("bad day window `{v}`, expected `a-b` or `a`"));
    let (a, b) = match v.split_once('-') {
        Some((a, b)) => (a, b),
        None => (v, v),
    };
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    Ok((a, b))
}

fn parse_list<T: FromStr>(v: &str, what: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| KeepError::Config(format!("bad {what} `{s}`"))))
        .collect()
}

fn parse_mask(v: &str) -> Result<KnowledgeMask> {
    let mut m = KnowledgeMask {
        user: false,
        item: false,
        interaction: false,
    };
    for tok in v.split(&[',', '+'][..]).map(|t| t.trim().to_ascii_lowercase()) {
        match tok.as_str() {
            "u" | "k_u" | "user" => m.user = true,
            "i" | "k_i" | "item" => m.item = true,
            "ui" | "k_ui" | "interaction" => m.interaction = true,
            "" | "none" => {}
            other => return Err(KeepError::Config(format!("unknown knowledge slot `{other}`"))),
        }
    }
    Ok(m)
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(KeepError::Config(format!("bad boolean `{other}`"))),
    }
}

/// Best-effort scalar or list literal for a nested field.
fn literal(v: &str) -> Value {
    let v = v.trim();
    if let Ok(j) = serde_json::from_str::<Value>(v) {
        return j;
    }
    if v.contains(',') {
        return Value::Array(v.split(',').map(literal).collect());
    }
    Value::String(v.to_string())
}

fn set_nested<T: Serialize + for<'de> Deserialize<'de>>(target: &mut T, field: &str, value: &str, key: &str) -> Result<()> {
    let mut obj = serde_json::to_value(&*target)?;
    let map = obj
        .as_object_mut()
        .ok_or_else(|| KeepError::Config(format!("`{key}` does not name a section")))?;
    if !map.contains_key(field) {
        return Err(KeepError::Config(format!("unknown config key `{key}`")));
    }
    map.insert(field.to_string(), literal(value));
    *target =
        serde_json::from_value(obj).map_err(|e| KeepError::Config(format!("bad value for `{key}`: {e}")))?;
    Ok(())
}

impl ExperimentConfig {
    pub fn pretrain_range(&self) -> RangeInclusive<u32> {
        self.pretrain_days.0..=self.pretrain_days.1
    }

    pub fn train_range(&self) -> RangeInclusive<u32> {
        self.train_days.0..=self.train_days.1
    }

    pub fn validate(&self) -> Result<()> {
        let (p0, p1) = self.pretrain_days;
        let (t0, t1) = self.train_days;
        if p0 > p1 || t0 > t1 {
            return Err(KeepError::Config("day windows must be non-empty".into()));
        }
        if self.test_day <= t1 {
            return Err(KeepError::Config(format!(
                "test day {} must come after the train window ending on day {t1}",
                self.test_day
            )));
        }
        if self.test_day >= self.generator.n_days {
            return Err(KeepError::Config(format!(
                "test day {} is outside the {}-day log",
                self.test_day, self.generator.n_days
            )));
        }
        if self.seeds.is_empty() || self.modes.is_empty() {
            return Err(KeepError::Config("need at least one seed and one mode".into()));
        }
        if self.pretrain_tasks.is_empty() {
            return Err(KeepError::Config("need at least one pre-training task".into()));
        }
        self.downstream.hidden_dim(self.plug_layer)?;
        self.generator.validate()?;
        Ok(())
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "mode" | "modes" => self.modes = parse_list(value, "mode")?,
            "pretrain_days" => self.pretrain_days = parse_range(value)?,
            "train_days" => self.train_days = parse_range(value)?,
            "test_day" => {
                self.test_day = value
                    .parse()
                    .map_err(|_| KeepError::Config(format!("bad test day `{value}`")))?
            }
            "seeds" => self.seeds = parse_list(value, "seed")?,
            "knowledge" => self.knowledge = value.parse()?,
            "knowledge_mask" => self.knowledge_mask = parse_mask(value)?,
            "pretrain_tasks" => {
                self.pretrain_tasks = parse_list(value, "task")?;
                self.pretrain.tasks = self.pretrain_tasks.clone();
            }
            "plug_layer" => {
                self.plug_layer = value
                    .parse()
                    .map_err(|_| KeepError::Config(format!("bad plug layer `{value}`")))?
            }
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "tables.knowledge_ablation" => self.tables.knowledge_ablation = parse_bool(value)?,
            "tables.task_ablation" => self.tables.task_ablation = parse_bool(value)?,
            "tables.user_groups" => self.tables.user_groups = parse_bool(value)?,
            "tables.serving" => self.tables.serving = parse_bool(value)?,
            _ => {
                let (section, field) = key
                    .split_once('.')
                    .ok_or_else(|| KeepError::Config(format!("unknown config key `{key}`")))?;
                match section {
                    "gen" | "generator" => set_nested(&mut self.generator, field, value, key)?,
                    "extractor" => set_nested(&mut self.extractor, field, value, key)?,
                    "pretrain" => set_nested(&mut self.pretrain, field, value, key)?,
                    "downstream" => set_nested(&mut self.downstream, field, value, key)?,
                    "train" => set_nested(&mut self.train, field, value, key)?,
                    "decomposed" => set_nested(&mut self.decomposed, field, value, key)?,
                    _ => return Err(KeepError::Config(format!("unknown config section in `{key}`"))),
                }
            }
        }
        Ok(())
    }

    /// Parse a flat `key = value` document; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| KeepError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| KeepError::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_flat_document() {
        let cfg = ExperimentConfig::parse(
            "# grid\nmodes = base, keep\nseeds = 3,4\ntrain_days = 5-6\nknowledge_mask = u+i\n\
             gen.n_users = 500\npretrain.alpha = 0.5\ndownstream.mlp_hidden = 32,16\nknowledge = gkc:127.0.0.1:7000@4\n",
        )
        .unwrap();
        assert_eq!(cfg.modes, vec![Mode::Base, Mode::Keep]);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.knowledge_mask, KnowledgeMask::USER_ITEM);
        assert_eq!(cfg.generator.n_users, 500);
        assert_eq!(cfg.pretrain.alpha, 0.5);
        assert_eq!(cfg.downstream.mlp_hidden, vec![32, 16]);
        assert_eq!(
            cfg.knowledge,
            KnowledgeSpec::Service {
                addr: "127.0.0.1:7000".into(),
                version: Some(4)
            }
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("modes = nope").is_err());
        assert!(ExperimentConfig::parse("gen.bogus = 1").is_err());
        assert!(ExperimentConfig::parse("test_day = 6").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
        assert!(ExperimentConfig::parse("plug_layer = 9").is_err());
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }
}
