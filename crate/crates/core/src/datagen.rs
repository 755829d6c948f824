//! Synthetic super-domain / sub-domain impression logs.
//!
//! Labels come from a latent-factor model shared by both domains:
//! `P(click) = σ(logit(base) + b_c + b_i + scale·⟨z_u, q_i⟩/√k)`. User factors
//! take a Gaussian random-walk step every day. The sub-domain sees a subset
//! of the items, is `super:sub` times sparser, and can be shifted away from
//! the super-domain (`sub_domain_shift`) so that naively merged training data
//! is mismatched.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{KeepError, Result};
use crate::nncore::{seeded_rng, sigmoid64, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Super,
    Sub,
}

/// One logged impression. Field order is the on-disk order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub domain: Domain,
    pub day: u32,
    pub session_id: u64,
    pub user_id: u64,
    pub item_id: u64,
    pub shop_id: u64,
    pub category_id: u32,
    pub behavior_seq: Vec<u64>,
    pub click: u8,
    pub conversion: u8,
    pub cart: u8,
}

impl ImpressionRecord {
    pub fn clicked(&self) -> bool {
        self.click == 1
    }

    pub fn labels_consistent(&self) -> bool {
        self.click <= 1
            && self.conversion <= 1
            && self.cart <= 1
            && (self.conversion == 0 || self.click == 1)
            && (self.cart == 0 || self.click == 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub n_shops: usize,
    pub n_days: u32,
    pub super_impressions_per_user_day: f64,
    pub sub_impressions_per_user_day: f64,
    pub latent_dim: usize,
    pub drift_rate: f64,
    pub base_click_rate: f64,
    pub conversion_given_click: f64,
    pub cart_given_click: f64,
    /// Fraction of the catalog that the sub-domain serves.
    pub sub_item_fraction: f64,
    /// 0 = sub-domain preferences equal super-domain ones, 1 = independent.
    pub sub_domain_shift: f64,
    /// Standard deviation of the user-item affinity term in logit space.
    pub affinity_scale: f64,
    /// Share of an item's latent vector inherited from its category centroid.
    pub category_cohesion: f64,
    /// Log-normal spread of per-user activity (0 = every user equally active).
    pub activity_sigma: f64,
    pub behavior_len: usize,
    pub max_session_len: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 10_000,
            n_items: 2_000,
            n_categories: 50,
            n_shops: 200,
            n_days: 8,
            super_impressions_per_user_day: 20.0,
            sub_impressions_per_user_day: 0.8,
            latent_dim: 4,
            drift_rate: 0.05,
            base_click_rate: 0.2,
            conversion_given_click: 0.1,
            cart_given_click: 0.15,
            sub_item_fraction: 0.25,
            sub_domain_shift: 0.5,
            affinity_scale: 1.5,
            category_cohesion: 0.7,
            activity_sigma: 0.8,
            behavior_len: 20,
            max_session_len: 10,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(KeepError::Config(m.to_string()));
        if self.n_users == 0 || self.n_items == 0 {
            return err("n_users and n_items must be positive");
        }
        if self.n_categories == 0 || self.n_shops == 0 || self.n_days == 0 {
            return err("n_categories, n_shops and n_days must be positive");
        }
        if self.latent_dim == 0 || self.max_session_len == 0 {
            return err("latent_dim and max_session_len must be positive");
        }
        if self.sub_impressions_per_user_day.partial_cmp(&self.super_impressions_per_user_day) != Some(std::cmp::Ordering::Less) {
            return err("sub-domain rate must be below the super-domain rate");
        }
        if self.sub_impressions_per_user_day < 0.0 {
            return err("impression rates must be nonnegative");
        }
        if !(self.base_click_rate > 0.0 && self.base_click_rate < 1.0) {
            return err("base_click_rate must lie in (0, 1)");
        }
        for (name, p) in [
            ("conversion_given_click", self.conversion_given_click),
            ("cart_given_click", self.cart_given_click),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(KeepError::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.sub_item_fraction > 0.0 && self.sub_item_fraction <= 1.0) {
            return err("sub_item_fraction must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.sub_domain_shift) {
            return err("sub_domain_shift must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.category_cohesion) {
            return err("category_cohesion must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn n_sub_items(&self) -> usize {
        ((self.n_items as f64 * self.sub_item_fraction).ceil() as usize).clamp(1, self.n_items)
    }
}

/// Static item attributes (shop and category per item id).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemCatalog {
    items: BTreeMap<u64, (u64, u32)>,
}

impl ItemCatalog {
    pub fn insert(&mut self, item: u64, shop: u64, category: u32) {
        self.items.insert(item, (shop, category));
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ImpressionRecord>) -> Self {
        let mut c = ItemCatalog::default();
        for r in records {
            c.insert(r.item_id, r.shop_id, r.category_id);
        }
        c
    }

    pub fn get(&self, item: u64) -> Option<(u64, u32)> {
        self.items.get(&item).copied()
    }

    pub fn category(&self, item: u64) -> Option<u32> {
        self.items.get(&item).map(|&(_, c)| c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64, u32)> + '_ {
        self.items.iter().map(|(&i, &(s, c))| (i, s, c))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    /// Σ P(click) over super-domain impressions.
    pub expected_super_clicks: f64,
    pub expected_sub_clicks: f64,
}

#[derive(Clone, Debug)]
pub struct GeneratedLogs {
    pub super_log: Vec<ImpressionRecord>,
    pub sub_log: Vec<ImpressionRecord>,
    pub catalog: ItemCatalog,
    pub stats: GenerationStats,
    /// True click probability of each sub-domain record, aligned with `sub_log`.
    pub sub_click_prob: Vec<f32>,
}

struct LatentWorld {
    user_pref: Vec<Vec<f64>>,
    user_sub_noise: Vec<Vec<f64>>,
    activity: Vec<f64>,
    item_vec: Vec<Vec<f64>>,
    item_buy: Vec<Vec<f64>>,
    item_bias: Vec<f64>,
    item_sub_bias: Vec<f64>,
    category_bias: Vec<f64>,
    item_category: Vec<u32>,
    item_shop: Vec<u64>,
}

fn gaussian_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| std.sample(rng)).collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LatentWorld {
    fn new(cfg: &GeneratorConfig, rng: &mut SeededRng) -> Self {
        let k = cfg.latent_dim;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let user_pref = (0..cfg.n_users).map(|_| gaussian_vec(rng, k)).collect();
        let user_sub_noise = (0..cfg.n_users).map(|_| gaussian_vec(rng, k)).collect();
        let s = cfg.activity_sigma;
        let activity = (0..cfg.n_users)
            .map(|_| (s * normal.sample(rng) - 0.5 * s * s).exp())
            .collect();
        let centroids: Vec<Vec<f64>> = (0..cfg.n_categories).map(|_| gaussian_vec(rng, k)).collect();
        let item_category: Vec<u32> = (0..cfg.n_items)
            .map(|_| rng.gen_range(0..cfg.n_categories) as u32)
            .collect();
        let (a, b) = (cfg.category_cohesion.sqrt(), (1.0 - cfg.category_cohesion).sqrt());
        let item_vec: Vec<Vec<f64>> = item_category
            .iter()
            .map(|&c| {
                let own = gaussian_vec(rng, k);
                own.iter().zip(&centroids[c as usize]).map(|(e, m)| a * m + b * e).collect()
            })
            .collect();
        let item_buy = item_vec
            .iter()
            .map(|q| {
                let noise = gaussian_vec(rng, k);
                q.iter().zip(noise).map(|(a, b)| 0.6 * a + 0.8 * b).collect()
            })
            .collect();
        let item_bias = (0..cfg.n_items).map(|_| 0.3 * normal.sample(rng)).collect();
        let item_sub_bias = (0..cfg.n_items)
            .map(|_| 0.5 * cfg.sub_domain_shift * normal.sample(rng))
            .collect();
        let category_bias = (0..cfg.n_categories).map(|_| 0.5 * normal.sample(rng)).collect();
        let item_shop = (0..cfg.n_items).map(|_| rng.gen_range(0..cfg.n_shops) as u64).collect();
        LatentWorld {
            user_pref,
            user_sub_noise,
            activity,
            item_vec,
            item_buy,
            item_bias,
            item_sub_bias,
            category_bias,
            item_category,
            item_shop,
        }
    }

    fn drift(&mut self, rate: f64, rng: &mut SeededRng) {
        if rate == 0.0 {
            return;
        }
        let normal = Normal::new(0.0, rate).expect("drift normal");
        for z in &mut self.user_pref {
            for v in z.iter_mut() {
                *v += normal.sample(rng);
            }
        }
    }

    fn click_logit(&self, cfg: &GeneratorConfig, domain: Domain, u: usize, i: usize) -> f64 {
        let scale = cfg.affinity_scale / (cfg.latent_dim as f64).sqrt();
        let c = self.item_category[i] as usize;
        let mut l = logit(cfg.base_click_rate) + self.category_bias[c] + self.item_bias[i];
        let z = &self.user_pref[u];
        match domain {
            Domain::Super => l += scale * dot(z, &self.item_vec[i]),
            Domain::Sub => {
                let s = cfg.sub_domain_shift;
                let keep = (1.0 - s * s).sqrt();
                let aff: f64 = z
                    .iter()
                    .zip(&self.user_sub_noise[u])
                    .zip(&self.item_vec[i])
                    .map(|((a, b), q)| (keep * a + s * b) * q)
                    .sum();
                l += scale * aff + self.item_sub_bias[i];
            }
        }
        l
    }

    fn follow_up(&self, cfg: &GeneratorConfig, base_rate: f64, u: usize, i: usize, rng: &mut SeededRng) -> u8 {
        if base_rate == 0.0 {
            return 0;
        }
        let scale = cfg.affinity_scale / (cfg.latent_dim as f64).sqrt();
        let p = sigmoid64(logit(base_rate) + 0.8 * scale * dot(&self.user_pref[u], &self.item_buy[i]));
        u8::from(rng.gen_bool(p))
    }
}

fn poisson(rng: &mut SeededRng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as usize
}

/// Generate both logs in memory. Deterministic for a fixed config.
pub fn generate(cfg: &GeneratorConfig) -> Result<GeneratedLogs> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let mut world = LatentWorld::new(cfg, &mut rng);
    let n_sub_items = cfg.n_sub_items();
    let mut history: Vec<VecDeque<u64>> = vec![VecDeque::new(); cfg.n_users];
    let mut super_log = Vec::new();
    let mut sub_log = Vec::new();
    let mut stats = GenerationStats::default();
    let mut next_session = 0u64;
    let mut sub_click_prob = Vec::new();

    for day in 0..cfg.n_days {
        if day > 0 {
            world.drift(cfg.drift_rate, &mut rng);
        }
        for (u, &activity) in world.activity.iter().enumerate() {
            for domain in [Domain::Super, Domain::Sub] {
                let (rate, n_items, out) = match domain {
                    Domain::Super => (cfg.super_impressions_per_user_day, cfg.n_items, &mut super_log),
                    Domain::Sub => (cfg.sub_impressions_per_user_day, n_sub_items, &mut sub_log),
                };
                let mut remaining = poisson(&mut rng, rate * activity);
                while remaining > 0 {
                    let len = remaining.min(cfg.max_session_len);
                    remaining -= len;
                    let session_id = next_session;
                    next_session += 1;
                    let behavior_seq: Vec<u64> = history[u].iter().copied().collect();
                    let mut clicked = Vec::new();
                    for _ in 0..len {
                        let i = rng.gen_range(0..n_items);
                        let p = sigmoid64(world.click_logit(cfg, domain, u, i));
                        match domain {
                            Domain::Super => stats.expected_super_clicks += p,
                            Domain::Sub => {
                                stats.expected_sub_clicks += p;
                                sub_click_prob.push(p as f32);
                            }
                        }
                        let click = u8::from(rng.gen_bool(p));
                        let (conversion, cart) = if click == 1 {
                            clicked.push(i as u64);
                            (
                                world.follow_up(cfg, cfg.conversion_given_click, u, i, &mut rng),
                                world.follow_up(cfg, cfg.cart_given_click, u, i, &mut rng),
                            )
                        } else {
                            (0, 0)
                        };
                        out.push(ImpressionRecord {
                            domain,
                            day,
                            session_id,
                            user_id: u as u64,
                            item_id: i as u64,
                            shop_id: world.item_shop[i],
                            category_id: world.item_category[i],
                            behavior_seq: behavior_seq.clone(),
                            click,
                            conversion,
                            cart,
                        });
                    }
                    let h = &mut history[u];
                    for i in clicked {
                        h.push_back(i);
                        if h.len() > cfg.behavior_len {
                            h.pop_front();
                        }
                    }
                }
            }
        }
    }

    let mut catalog = ItemCatalog::default();
    for i in 0..cfg.n_items {
        catalog.insert(i as u64, world.item_shop[i], world.item_category[i]);
    }
    Ok(GeneratedLogs {
        super_log,
        sub_log,
        catalog,
        stats,
        sub_click_prob,
    })
}

pub fn write_log(path: &Path, records: &[ImpressionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<ImpressionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImpressionRecord = serde_json::from_str(&line)
            .map_err(|e| KeepError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Write `super.jsonl` and `sub.jsonl` under `dir`.
pub fn generate_to_dir(cfg: &GeneratorConfig, dir: &Path) -> Result<GeneratedLogs> {
    let logs = generate(cfg)?;
    std::fs::create_dir_all(dir)?;
    write_log(&dir.join("super.jsonl"), &logs.super_log)?;
    write_log(&dir.join("sub.jsonl"), &logs.sub_log)?;
    Ok(logs)
}

fn day_seed(seed: u64, day: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (day as u64).wrapping_add(0x632B_E59B_D9B4_E019)
}

/// Single-epoch training order: days ascending, records shuffled within each
/// day by a per-day seeded permutation. Every record in range appears once.
pub fn iterate_training_order(
    log: &[ImpressionRecord],
    days: RangeInclusive<u32>,
    seed: u64,
) -> Result<Vec<&ImpressionRecord>> {
    if days.is_empty() {
        return Err(KeepError::Config(format!("empty day range {days:?}")));
    }
    let mut by_day: HashMap<u32, Vec<&ImpressionRecord>> = HashMap::new();
    for r in log.iter().filter(|r| days.contains(&r.day)) {
        by_day.entry(r.day).or_default().push(r);
    }
    let mut out = Vec::new();
    for day in days {
        let Some(mut seg) = by_day.remove(&day) else {
            log::warn!("no records for day {day}; emitting empty segment");
            continue;
        };
        let mut rng = seeded_rng(day_seed(seed, day));
        seg.shuffle(&mut rng);
        out.extend(seg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            n_users: 200,
            n_items: 100,
            n_categories: 5,
            n_shops: 10,
            n_days: 3,
            super_impressions_per_user_day: 5.0,
            sub_impressions_per_user_day: 0.5,
            seed: 3,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn zero_conversion_rate_means_no_conversions() {
        let cfg = GeneratorConfig {
            conversion_given_click: 0.0,
            ..tiny()
        };
        let logs = generate(&cfg).unwrap();
        assert!(logs.super_log.iter().chain(&logs.sub_log).all(|r| r.conversion == 0));
        assert!(logs.super_log.iter().any(|r| r.cart == 1));
    }

    #[test]
    fn labels_and_categories_consistent() {
        let logs = generate(&tiny()).unwrap();
        let mut cat = HashMap::new();
        for r in logs.super_log.iter().chain(&logs.sub_log) {
            assert!(r.labels_consistent());
            assert!(r.behavior_seq.len() <= 20);
            let c = *cat.entry(r.item_id).or_insert(r.category_id);
            assert_eq!(c, r.category_id);
        }
        let n_sub = tiny().n_sub_items() as u64;
        assert!(logs.sub_log.iter().all(|r| r.item_id < n_sub));
    }

    #[test]
    fn sessions_are_bounded_and_single_user() {
        let logs = generate(&tiny()).unwrap();
        let mut sessions: HashMap<u64, (u64, u32, usize)> = HashMap::new();
        for r in &logs.super_log {
            let e = sessions.entry(r.session_id).or_insert((r.user_id, r.day, 0));
            assert_eq!((e.0, e.1), (r.user_id, r.day));
            e.2 += 1;
        }
        assert!(sessions.values().all(|s| s.2 <= 10));
    }

    #[test]
    fn config_errors() {
        assert!(generate(&GeneratorConfig { n_users: 0, ..tiny() }).is_err());
        assert!(generate(&GeneratorConfig { n_items: 0, ..tiny() }).is_err());
        let inverted = GeneratorConfig {
            sub_impressions_per_user_day: 9.0,
            ..tiny()
        };
        assert!(generate(&inverted).is_err());
    }

    #[test]
    fn training_order_contract() {
        let logs = generate(&tiny()).unwrap();
        let order = iterate_training_order(&logs.super_log, 0..=2, 7).unwrap();
        assert_eq!(order.len(), logs.super_log.len());
        assert!(order.windows(2).all(|w| w[0].day <= w[1].day));
        let again = iterate_training_order(&logs.super_log, 0..=2, 7).unwrap();
        assert!(order.iter().zip(&again).all(|(a, b)| std::ptr::eq(*a, *b)));
        let other = iterate_training_order(&logs.super_log, 0..=2, 8).unwrap();
        assert!(order.iter().zip(&other).any(|(a, b)| !std::ptr::eq(*a, *b)));
    }

    #[test]
    fn single_record_and_missing_day() {
        let logs = generate(&tiny()).unwrap();
        let one = &logs.super_log[..1];
        let order = iterate_training_order(one, 0..=5, 1).unwrap();
        assert_eq!(order.len(), 1);
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(iterate_training_order(one, empty, 1).is_err());
    }
}
