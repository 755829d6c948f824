use std::sync::Arc;

use keep_core::datagen::{generate, Domain, GeneratorConfig, ImpressionRecord};
use keep_core::extractor::ExtractorConfig;
use keep_core::nncore::seeded_rng;
use keep_core::plugnet::KnowledgeSource;
use keep_core::servingkit::{
    build_snapshot, compose_serving_knowledge, count_cache_entries, observed_user_categories, ComposedKnowledge,
    DecomposedConfig, DecomposedExtractor, DegeneratedExtractor, KnowledgeSnapshot, SnapshotKnowledge,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn cache_entry_counts() {
    assert_eq!(count_cache_entries(1000, 500, 3000).unwrap(), (500_000, 4500));
    assert_eq!(count_cache_entries(0, 17, 0).unwrap(), (0, 17));
    // production-sized user base against a million ads, never materialized
    let (pairs, separate) = count_cache_entries(230_000_000, 1_000_000, 5_000_000_000).unwrap();
    assert_eq!(pairs, 230_000_000_000_000);
    assert_eq!(separate, 5_231_000_000);
    assert!(count_cache_entries(1 << 40, 1 << 40, 0).is_err());
}

#[test]
fn compose_matches_concatenate_and_multiply() {
    let mut rng = seeded_rng(8);
    for _ in 0..50 {
        let ku: Vec<f32> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ki: Vec<f32> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let kuc: Vec<f32> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut want = ku.clone();
        want.extend(&ki);
        want.extend(ku.iter().zip(&ki).map(|(a, b)| a * b));
        want.extend(&kuc);
        assert_eq!(compose_serving_knowledge(&ku, &ki, &kuc).unwrap(), want);
    }
    assert_eq!(compose_serving_knowledge(&[0.0; 2], &[3.0, 4.0], &[]).unwrap()[4..], [0.0, 0.0]);
}

fn small_world() -> keep_core::datagen::GeneratedLogs {
    generate(&GeneratorConfig {
        n_users: 150,
        n_items: 60,
        n_shops: 10,
        n_categories: 6,
        n_days: 2,
        seed: 4,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

#[test]
fn snapshot_serves_what_the_models_compute() {
    let logs = small_world();
    let dec = DecomposedExtractor::new(DecomposedConfig {
        user_vocab: 150,
        item_vocab: 60,
        shop_vocab: 10,
        category_vocab: 6,
        ..DecomposedConfig::default()
    })
    .unwrap();
    let deg = DegeneratedExtractor::new(ExtractorConfig {
        user_vocab: 150,
        item_vocab: 60,
        shop_vocab: 10,
        category_vocab: 6,
        ..ExtractorConfig::default()
    })
    .unwrap();
    let users: Vec<u64> = (0..150).collect();
    let pairs = observed_user_categories(&logs.super_log);
    let snap = build_snapshot(&dec, Some(&deg), &users, &logs.catalog, &pairs, 3, 0).unwrap();
    assert_eq!(snap.user_categories().len(), pairs.len());
    assert_eq!(snap.entry_count(), 150 + logs.catalog.len() + pairs.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(KnowledgeSnapshot::file_name(3));
    snap.write(&path).unwrap();
    let back = KnowledgeSnapshot::read(&path).unwrap();
    assert_eq!(back, snap);

    let served = SnapshotKnowledge::new(Arc::new(back));
    let live = ComposedKnowledge::new(Some(Arc::new(dec)), Some(Arc::new(deg))).unwrap();
    let covered: Vec<&ImpressionRecord> =
        logs.sub_log.iter().filter(|r| pairs.contains(&(r.user_id, r.category_id))).take(200).collect();
    assert!(!covered.is_empty());
    let a = served.lookup(&covered).unwrap();
    let b = live.lookup(&covered).unwrap();
    assert_eq!(a.missing, 0);
    assert_eq!(a.vectors.data(), b.vectors.data());
    assert_eq!(served.version(), Some(3));
}

#[test]
fn unseen_user_category_is_zero_but_not_missing() {
    let mut s = KnowledgeSnapshot::new(1, 2, 2, 0);
    s.insert_user(1, vec![1.0, 2.0]).unwrap();
    s.insert_item(5, vec![3.0, 4.0]).unwrap();
    let mut out = vec![9.0; 8];
    let mask = s.compose(1, 5, 7, &mut out);
    assert_eq!(mask, 3);
    assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 3.0, 8.0, 0.0, 0.0]);
    assert!(s.insert_user(2, vec![1.0]).is_err());
    let rec = |user_id, item_id| ImpressionRecord {
        domain: Domain::Sub,
        day: 0,
        session_id: 0,
        user_id,
        item_id,
        shop_id: 0,
        category_id: 7,
        behavior_seq: vec![],
        click: 0,
        conversion: 0,
        cart: 0,
    };
    let recs = [rec(1, 5), rec(2, 5), rec(1, 6)];
    let k = SnapshotKnowledge::new(Arc::new(s));
    let batch = k.lookup(&recs.iter().collect::<Vec<_>>()).unwrap();
    // only the unknown user and the unknown item count
    assert_eq!(batch.missing, 2);
}

proptest! {
    #[test]
    fn snapshot_bytes_round_trip(
        users in prop::collection::btree_map(any::<u64>(), prop::collection::vec(any::<u32>(), 3), 0..8),
        ucs in prop::collection::btree_set((any::<u64>(), any::<u32>()), 0..8),
        version in 1u32..100,
    ) {
        let mut s = KnowledgeSnapshot::new(version, 3, 1, 77);
        for (u, raw) in &users {
            s.insert_user(*u, raw.iter().map(|&b| f32::from_bits(b)).collect()).unwrap();
            s.insert_item(u.wrapping_add(1), vec![1.0, 2.0, 3.0]).unwrap();
        }
        for &(u, c) in &ucs {
            s.insert_user_category(u, c, vec![u as f32]).unwrap();
        }
        let bytes = s.to_bytes();
        let back = KnowledgeSnapshot::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        prop_assert!(KnowledgeSnapshot::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
