use std::sync::Arc;

use keep_core::datagen::{generate, GeneratorConfig};
use keep_core::extractor::{ExtractorConfig, ExtractorModel, KnowledgeMask, Task};
use keep_core::harness::{run_online_loop, DayKnowledge, OnlineSpec};
use keep_core::plugnet::{DownstreamConfig, ExtractorKnowledge, KnowledgeSource, PlugConfig, TrainConfig};

fn small_world() -> GeneratorConfig {
    GeneratorConfig {
        n_users: 300,
        n_items: 120,
        n_shops: 20,
        n_categories: 8,
        n_days: 4,
        sub_impressions_per_user_day: 3.0,
        seed: 11,
        ..GeneratorConfig::default()
    }
}

fn spec(days: std::ops::RangeInclusive<u32>, plug: Option<PlugConfig>) -> OnlineSpec {
    OnlineSpec {
        days,
        downstream: DownstreamConfig {
            item_vocab: 120,
            shop_vocab: 20,
            category_vocab: 8,
            ..DownstreamConfig::default()
        },
        train: TrainConfig::default(),
        plug,
    }
}

fn knowledge() -> Arc<dyn KnowledgeSource> {
    let model = ExtractorModel::new(ExtractorConfig {
        user_vocab: 300,
        item_vocab: 120,
        shop_vocab: 20,
        category_vocab: 8,
        ..ExtractorConfig::default()
    })
    .unwrap();
    Arc::new(ExtractorKnowledge::new(Arc::new(model), Task::ALL.to_vec(), KnowledgeMask::default()))
}

#[test]
fn split_run_matches_continuous_run_bit_for_bit() {
    let logs = generate(&small_world()).unwrap();
    for plugged in [false, true] {
        let k = knowledge();
        let plug = plugged.then(|| PlugConfig {
            knowledge_dim: k.dim(),
            plug_layer: 1,
            seed: 5,
        });
        let k_day = |_: u32| -> keep_core::Result<DayKnowledge> { Ok(plugged.then(|| k.clone())) };
        let full = run_online_loop(&spec(0..=3, plug.clone()), &logs.sub_log, None, &mut k_day.clone()).unwrap();
        let first = run_online_loop(&spec(0..=1, plug.clone()), &logs.sub_log, None, &mut k_day.clone()).unwrap();
        let resume = first.checkpoints[&1].as_slice();
        let second = run_online_loop(&spec(2..=3, plug.clone()), &logs.sub_log, Some((1, resume)), &mut k_day.clone()).unwrap();
        assert_eq!(full.checkpoints[&1], first.checkpoints[&1]);
        assert_eq!(full.checkpoints[&3], second.checkpoints[&3], "plugged {plugged}");
        assert_eq!(full.trainer, second.trainer);
    }
}

#[test]
fn resuming_across_a_gap_names_the_missing_day() {
    let logs = generate(&small_world()).unwrap();
    let first = run_online_loop(&spec(0..=0, None), &logs.sub_log, None, &mut |_| Ok(None)).unwrap();
    let err = run_online_loop(&spec(2..=3, None), &logs.sub_log, Some((0, &first.checkpoints[&0])), &mut |_| Ok(None))
        .unwrap_err();
    assert!(err.to_string().contains("day 2"), "{err}");
}
