use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use keep_core::checkpoint::TensorFile;
use keep_core::datagen::{generate_to_dir, read_log, Domain, ImpressionRecord, ItemCatalog};
use keep_core::extractor::{load_extractor, save_extractor, ExtractorConfig, ExtractorModel, FeatureSchema, Pretrainer};
use keep_core::harness::{
    evaluate, run_experiment_grid, run_online_loop, DayKnowledge, ExperimentConfig, KnowledgeSpec, Mode, OnlineSpec,
};
use keep_core::plugnet::{ExtractorKnowledge, KnowledgeSource, PlugConfig};
use keep_core::servingkit::{
    build_snapshot, observed_user_categories, train_decomposed, DecomposedExtractor, DegeneratedExtractor,
    KnowledgeSnapshot, SnapshotKnowledge,
};
use keep_core::KeepError;
use keep_gkc::{Server, ServiceKnowledge, VersionStore};

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "keep", version, about = "Cross-domain knowledge extraction and plugging for CTR models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the training commands: a flat `key = value` file and
/// individual overrides, both using experiment config keys.
#[derive(Args, Clone, Default)]
struct Settings {
    /// Experiment config file (`key = value` per line).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set gen.n_users=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Settings {
    fn load(&self) -> AnyResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| KeepError::Config(format!("override `{kv}` is not KEY=VALUE")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic super- and sub-domain logs.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        categories: Option<usize>,
        #[arg(long)]
        shops: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
        /// Mean super-domain impressions per user-day.
        #[arg(long)]
        super_rate: Option<f64>,
        /// Mean sub-domain impressions per user-day.
        #[arg(long)]
        sub_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Pre-train the knowledge extractor on the super-domain log.
    Pretrain {
        /// Directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Day window, `a-b`; defaults to the config's pretrain window.
        #[arg(long)]
        days: Option<String>,
        /// Continue from an extractor checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train the cacheable extractors and write a knowledge snapshot.
    Snapshot {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        days: Option<String>,
        #[arg(long)]
        version: u32,
        /// Directory receiving `snapshot-<version>.ksnp`.
        #[arg(long)]
        out_dir: PathBuf,
        /// Leave out user-category knowledge.
        #[arg(long)]
        no_degenerated: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Online-train a downstream model day by day on the sub-domain log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// base, merge, keep or keep-c.
        #[arg(long, default_value = "base")]
        mode: String,
        #[arg(long)]
        days: Option<String>,
        /// 1-based main-MLP layer receiving the plug-in output.
        #[arg(long)]
        plug_layer: Option<usize>,
        /// Extractor checkpoint for keep and keep-c.
        #[arg(long)]
        extractor: Option<PathBuf>,
        /// `file:<snapshot>` or `gkc:<host>:<port>`, instead of an extractor.
        #[arg(long)]
        knowledge: Option<String>,
        /// Knowledge version to request from a service.
        #[arg(long)]
        version: Option<u32>,
        /// Downstream checkpoint of the day before the window.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Directory receiving `day-<d>.ckpt` files.
        #[arg(long)]
        out_dir: PathBuf,
        /// Report GAUC on this day after training.
        #[arg(long)]
        test_day: Option<u32>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Serve knowledge snapshots over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7070)]
        port: u16,
        #[arg(long)]
        snapshot_dir: PathBuf,
        #[arg(long, default_value_t = keep_gkc::DEFAULT_MAX_VERSIONS)]
        max_versions: usize,
    },
    /// Run the experiment grid; exits nonzero if an acceptance check fails.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory for per-run JSON, summary and report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn day_window(v: Option<&str>, default: (u32, u32)) -> AnyResult<(u32, u32)> {
    let Some(v) = v else { return Ok(default) };
    let mut c = ExperimentConfig::default();
    c.set("train_days", v)?;
    Ok(c.train_days)
}

fn load_logs(dir: &Path) -> AnyResult<(Vec<ImpressionRecord>, Vec<ImpressionRecord>)> {
    Ok((read_log(&dir.join("super.jsonl"))?, read_log(&dir.join("sub.jsonl"))?))
}

fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> AnyResult<()> {
    let logs = generate_to_dir(&cfg.generator, out)?;
    std::fs::write(out.join("generator.json"), serde_json::to_string_pretty(&cfg.generator)?)?;
    println!(
        "{} super-domain and {} sub-domain impressions over {} days in {}",
        logs.super_log.len(),
        logs.sub_log.len(),
        cfg.generator.n_days,
        out.display()
    );
    Ok(())
}

fn cmd_pretrain(cfg: &ExperimentConfig, data: &Path, days: (u32, u32), resume: Option<&Path>, out: &Path) -> AnyResult<()> {
    let (super_log, _) = load_logs(data)?;
    let model = match resume {
        Some(p) => load_extractor(p)?.model,
        None => ExtractorModel::new(cfg.extractor.clone())?,
    };
    let mut pcfg = cfg.pretrain.clone();
    pcfg.tasks = cfg.pretrain_tasks.clone();
    let mut p = Pretrainer::new(model, pcfg)?;
    for day in days.0..=days.1 {
        let r = p.train_days(&super_log, day..=day)?;
        println!("day {day}: {} steps, {} records, objective {:.5}", r.steps, r.records, r.mean_objective);
    }
    save_extractor(out, &p.model, &cfg.pretrain_tasks)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_snapshot(
    cfg: &ExperimentConfig,
    data: &Path,
    days: (u32, u32),
    version: u32,
    out_dir: &Path,
    degenerated: bool,
) -> AnyResult<()> {
    let (super_log, sub_log) = load_logs(data)?;
    let mut dec = DecomposedExtractor::new(cfg.decomposed.clone())?;
    train_decomposed(&mut dec, &super_log, days.0..=days.1, cfg.pretrain.seed)?;
    let deg = if degenerated {
        let mut d = DegeneratedExtractor::new(ExtractorConfig {
            schema: FeatureSchema::CategoryOnly,
            ..cfg.extractor.clone()
        })?;
        d.train(&super_log, days.0..=days.1, cfg.pretrain.clone())?;
        Some(d)
    } else {
        None
    };
    let users: Vec<u64> = super_log.iter().chain(&sub_log).map(|r| r.user_id).collect::<BTreeSet<_>>().into_iter().collect();
    let catalog = ItemCatalog::from_records(super_log.iter().chain(&sub_log));
    let pairs = observed_user_categories(super_log.iter().filter(|r| r.day <= days.1));
    let published_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let snap = build_snapshot(&dec, deg.as_ref(), &users, &catalog, &pairs, version, published_at)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(KnowledgeSnapshot::file_name(version));
    snap.write(&path)?;
    println!("wrote {} ({} entries, dim {})", path.display(), snap.entry_count(), snap.composed_dim());
    Ok(())
}

fn service_knowledge(addr: &str, version: Option<u32>) -> keep_core::Result<Arc<dyn KnowledgeSource>> {
    ServiceKnowledge::connect(addr, version)
        .map(|k| Arc::new(k) as Arc<dyn KnowledgeSource>)
        .map_err(|e| KeepError::State(format!("knowledge service {addr}: {e}")))
}

struct TrainArgs<'a> {
    data: &'a Path,
    mode: Mode,
    days: (u32, u32),
    extractor: Option<&'a Path>,
    knowledge: Option<KnowledgeSpec>,
    resume: Option<&'a Path>,
    out_dir: &'a Path,
    test_day: Option<u32>,
}

fn cmd_train(cfg: &ExperimentConfig, a: TrainArgs<'_>) -> AnyResult<()> {
    let (super_log, sub_log) = load_logs(a.data)?;
    let log: Vec<ImpressionRecord> = match a.mode {
        Mode::SampleMerging => super_log
            .iter()
            .filter(|r| (a.days.0..=a.days.1).contains(&r.day))
            .cloned()
            .chain(sub_log.iter().cloned())
            .collect(),
        Mode::Base | Mode::Keep | Mode::KeepC => sub_log.clone(),
        m => return Err(KeepError::Config(format!("`train` supports base, merge, keep and keep-c, not {m}")).into()),
    };
    let mut pre = None;
    let static_k: DayKnowledge = if a.mode.uses_knowledge() {
        Some(match (&a.knowledge, a.extractor) {
            (Some(KnowledgeSpec::File(p)), _) => Arc::new(SnapshotKnowledge::new(Arc::new(KnowledgeSnapshot::read(p)?))),
            (Some(KnowledgeSpec::Service { addr, version }), _) => service_knowledge(addr, *version)?,
            (_, Some(p)) => {
                let ck = load_extractor(p)?;
                let k = Arc::new(ExtractorKnowledge::new(
                    Arc::new(ck.model.clone()),
                    ck.trained_tasks.clone(),
                    cfg.knowledge_mask,
                ));
                if a.mode == Mode::KeepC {
                    let mut pcfg = cfg.pretrain.clone();
                    pcfg.tasks = ck.trained_tasks.clone();
                    pre = Some((Pretrainer::new(ck.model, pcfg)?, ck.trained_tasks));
                }
                k
            }
            _ => return Err(KeepError::Config(format!("mode {} needs --extractor or --knowledge", a.mode)).into()),
        })
    } else {
        None
    };
    let spec = OnlineSpec {
        days: a.days.0..=a.days.1,
        downstream: cfg.downstream.clone(),
        train: cfg.train.clone(),
        plug: static_k.as_ref().map(|k| PlugConfig {
            knowledge_dim: k.dim(),
            plug_layer: cfg.plug_layer,
            seed: cfg.downstream.seed ^ 0x5eed,
        }),
    };
    let resume_bytes = a.resume.map(std::fs::read).transpose()?;
    let resume = match (&resume_bytes, a.resume) {
        (Some(b), Some(p)) => {
            let t = keep_core::plugnet::DownstreamTrainer::warm_start(&TensorFile::from_bytes(b)?, None)?;
            let day = t
                .cursor_day
                .ok_or_else(|| KeepError::State(format!("{} has not consumed any day", p.display())))?;
            Some((day, b.as_slice()))
        }
        _ => None,
    };
    let mut latest = static_k.clone();
    let run = run_online_loop(&spec, &log, resume, &mut |day| {
        if let Some((p, tasks)) = pre.as_mut() {
            p.train_days(&super_log, day..=day)?;
            latest = Some(Arc::new(ExtractorKnowledge::new(Arc::new(p.model.clone()), tasks.clone(), cfg.knowledge_mask)));
            return Ok(latest.clone());
        }
        Ok(static_k.clone())
    })?;
    std::fs::create_dir_all(a.out_dir)?;
    for (day, bytes) in &run.checkpoints {
        std::fs::write(a.out_dir.join(format!("day-{day}.ckpt")), bytes)?;
    }
    for r in &run.reports {
        println!(
            "day {}: {} steps, loss {:.5}, missing knowledge {}",
            r.day, r.steps, r.mean_loss, r.missing_knowledge
        );
    }
    if let Some(test_day) = a.test_day {
        let test: Vec<&ImpressionRecord> = sub_log.iter().filter(|r| r.day == test_day && r.domain == Domain::Sub).collect();
        let mut clicks: HashMap<u64, u64> = HashMap::new();
        for r in super_log.iter().filter(|r| r.day < test_day) {
            *clicks.entry(r.user_id).or_default() += r.click as u64;
        }
        let rep = evaluate(&run.trainer, &test, latest.as_deref(), &clicks)?;
        match rep.gauc {
            Some(g) => println!("test day {test_day}: GAUC {g:.4} over {} users", rep.users),
            None => println!("test day {test_day}: GAUC undefined, no user has both labels"),
        }
    }
    Ok(())
}

fn cmd_serve(host: &str, port: u16, dir: &Path, max_versions: usize) -> AnyResult<()> {
    if max_versions == 0 {
        return Err(KeepError::Config("--max-versions must be positive".into()).into());
    }
    let store = Arc::new(VersionStore::new(max_versions));
    let loaded = store.load_dir(dir)?;
    let server = Server::bind((host, port), store, Some(dir.to_path_buf()))?;
    log::info!("serving versions {loaded:?} on {}", server.local_addr()?);
    println!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}

fn cmd_experiment(settings: &Settings, out: Option<&Path>) -> AnyResult<bool> {
    let mut cfg = settings.load()?;
    if let Some(o) = out {
        cfg.output_dir = Some(o.to_path_buf());
    }
    let report = run_experiment_grid(&cfg, Some(&service_knowledge))?;
    println!("{}", report.render());
    if let Some(dir) = &cfg.output_dir {
        report.write_outputs(dir)?;
    }
    let mut ok = true;
    for c in report.checks() {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn run(cli: Cli) -> AnyResult<bool> {
    match cli.command {
        Command::Gen {
            out,
            users,
            items,
            categories,
            shops,
            days,
            super_rate,
            sub_rate,
            seed,
            settings,
        } => {
            let mut cfg = settings.load()?;
            let g = &mut cfg.generator;
            g.n_users = users.unwrap_or(g.n_users);
            g.n_items = items.unwrap_or(g.n_items);
            g.n_categories = categories.unwrap_or(g.n_categories);
            g.n_shops = shops.unwrap_or(g.n_shops);
            g.n_days = days.unwrap_or(g.n_days);
            g.super_impressions_per_user_day = super_rate.unwrap_or(g.super_impressions_per_user_day);
            g.sub_impressions_per_user_day = sub_rate.unwrap_or(g.sub_impressions_per_user_day);
            g.seed = seed.unwrap_or(g.seed);
            g.validate()?;
            cmd_gen(&cfg, &out)?;
        }
        Command::Pretrain {
            data,
            days,
            resume,
            out,
            settings,
        } => {
            let cfg = settings.load()?;
            let days = day_window(days.as_deref(), cfg.pretrain_days)?;
            cmd_pretrain(&cfg, &data, days, resume.as_deref(), &out)?;
        }
        Command::Snapshot {
            data,
            days,
            version,
            out_dir,
            no_degenerated,
            settings,
        } => {
            let cfg = settings.load()?;
            let days = day_window(days.as_deref(), cfg.pretrain_days)?;
            cmd_snapshot(&cfg, &data, days, version, &out_dir, !no_degenerated)?;
        }
        Command::Train {
            data,
            mode,
            days,
            plug_layer,
            extractor,
            knowledge,
            version,
            resume,
            out_dir,
            test_day,
            settings,
        } => {
            let mut cfg = settings.load()?;
            if let Some(l) = plug_layer {
                cfg.plug_layer = l;
            }
            let mut knowledge: Option<KnowledgeSpec> = knowledge.as_deref().map(str::parse).transpose()?;
            if let (Some(KnowledgeSpec::Service { version: v, .. }), Some(pin)) = (knowledge.as_mut(), version) {
                *v = Some(pin);
            }
            let days = day_window(days.as_deref(), cfg.train_days)?;
            cmd_train(
                &cfg,
                TrainArgs {
                    data: &data,
                    mode: mode.parse()?,
                    days,
                    extractor: extractor.as_deref(),
                    knowledge,
                    resume: resume.as_deref(),
                    out_dir: &out_dir,
                    test_day,
                },
            )?;
        }
        Command::Serve {
            host,
            port,
            snapshot_dir,
            max_versions,
        } => cmd_serve(&host, port, &snapshot_dir, max_versions)?,
        Command::Experiment { config, overrides, out } => {
            return cmd_experiment(&Settings { config, overrides }, out.as_deref());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
