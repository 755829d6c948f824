//! Random small models for gradient checks.

use keep_core::datagen::ImpressionRecord;
use keep_core::extractor::{self, ExtractorConfig, ExtractorModel, FeatureSchema, PretrainBatch, PretrainConfig};
use keep_core::nncore::{dot, seeded_rng, AttentionPooler, Matrix, Parameterized};
use keep_core::plugnet::{self, DownstreamConfig, DownstreamModel, PlugConfig, PlugInNetwork};
use keep_core::servingkit::{DecomposedConfig, DecomposedExtractor};
use rand::Rng;

use super::{fd_check, random_record, scramble, FdStats};

pub const USERS: u64 = 12;
pub const ITEMS: u64 = 15;
pub const SHOPS: u64 = 4;
pub const CATS: u32 = 3;

pub fn records(seed: u64, n: usize) -> Vec<ImpressionRecord> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| random_record(&mut rng, USERS, ITEMS, SHOPS, CATS, 4)).collect()
}

pub fn tiny_extractor(seed: u64, schema: FeatureSchema) -> ExtractorModel {
    ExtractorModel::new(ExtractorConfig {
        schema,
        user_vocab: USERS as usize,
        item_vocab: ITEMS as usize,
        shop_vocab: SHOPS as usize,
        category_vocab: CATS as usize,
        user_dim: 4,
        feature_dim: 3,
        attention_hidden: 3,
        head_hidden: vec![6, 4],
        seed,
    })
    .unwrap()
}

/// Joint multi-task objective with pointwise and pairwise terms.
pub fn extractor_case(seed: u64, schema: FeatureSchema) -> FdStats {
    let mut model = tiny_extractor(seed, schema);
    scramble(&mut model, 0.5, &mut seeded_rng(seed + 50));
    assert!(model.scalar_count() <= 10_000);
    let recs = records(seed + 100, 8);
    let refs: Vec<&ImpressionRecord> = recs.iter().collect();
    let mut batch = PretrainBatch::pointwise(refs);
    batch.n_point = 6;
    batch.triplets = [vec![(0, 6), (1, 7)], vec![(2, 7)], vec![(3, 6), (0, 7)]];
    let cfg = PretrainConfig {
        alpha: 0.25,
        ..PretrainConfig::default()
    };
    let (_, grads) = extractor::compute_gradients(&model, &batch, &cfg).unwrap();
    fd_check(&mut model, &grads, |m| extractor::objective(m, &batch, &cfg).unwrap())
}

/// `L = Σ c ⊙ pool(behaviors, target)` for a random direction `c`.
pub fn pooler_case(seed: u64) -> FdStats {
    let mut rng = seeded_rng(seed);
    let d = 4;
    let mut pooler = AttentionPooler::new("att", d, 5, &mut rng).unwrap();
    scramble(&mut pooler, 0.5, &mut rng);
    let behaviors = Matrix::uniform(6, d, 1.0, &mut rng);
    let target: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |p: &AttentionPooler, beh: &Matrix, t: &[f32]| dot(&p.forward(beh, t).unwrap().pooled, &c) as f64;
    let trace = pooler.forward(&behaviors, &target).unwrap();
    let mut grads = pooler.zero_grads();
    let (d_beh, d_t) = pooler.backward(&trace, &behaviors, &target, &c, &mut grads).unwrap();
    let mut st = fd_check(&mut pooler, &grads, |p| loss(p, &behaviors, &target));
    // input gradients through the same checker, with the inputs as parameters
    struct Inputs(Matrix, Matrix);
    impl Parameterized for Inputs {
        fn named_params(&self) -> Vec<(String, &Matrix)> {
            vec![("behaviors".into(), &self.0), ("target".into(), &self.1)]
        }
        fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
            vec![("behaviors".into(), &mut self.0), ("target".into(), &mut self.1)]
        }
    }
    let mut inputs = Inputs(behaviors.clone(), Matrix::row_vector(&target));
    st.merge(fd_check(&mut inputs, &[d_beh, Matrix::row_vector(&d_t)], |i| {
        loss(&pooler, &i.0, i.1.row(0))
    }));
    st
}

pub fn tiny_downstream(seed: u64) -> DownstreamModel {
    DownstreamModel::new(DownstreamConfig {
        item_vocab: ITEMS as usize,
        shop_vocab: SHOPS as usize,
        category_vocab: CATS as usize,
        feature_dim: 3,
        attention_hidden: 3,
        mlp_hidden: vec![8, 6, 4],
        seed,
    })
    .unwrap()
}

/// Downstream cross-entropy with a plug whose output layer is randomized so
/// every plug parameter carries gradient.
pub fn plug_case(seed: u64, plug_layer: usize) -> FdStats {
    let mut rng = seeded_rng(seed);
    let mut model = tiny_downstream(seed);
    scramble(&mut model, 0.5, &mut rng);
    let kd = 5;
    let mut plug = PlugInNetwork::for_model(
        &model,
        PlugConfig {
            knowledge_dim: kd,
            plug_layer,
            seed,
        },
    )
    .unwrap();
    scramble(&mut plug, 0.5, &mut rng);
    let recs = records(seed + 200, 6);
    let refs: Vec<&ImpressionRecord> = recs.iter().collect();
    let k = Matrix::uniform(refs.len(), kd, 1.0, &mut rng);
    let (_, g_model, g_plug) = plugnet::compute_gradients(&model, Some(&plug), &refs, Some(&k)).unwrap();
    let mut st = fd_check(&mut plug, &g_plug, |p| plugnet::objective(&model, Some(p), &refs, Some(&k)).unwrap());
    st.merge(fd_check(&mut model, &g_model, |m| {
        plugnet::objective(m, Some(&plug), &refs, Some(&k)).unwrap()
    }));
    st
}

pub fn decomposed_case(seed: u64) -> FdStats {
    let mut model = DecomposedExtractor::new(DecomposedConfig {
        user_vocab: USERS as usize,
        item_vocab: ITEMS as usize,
        shop_vocab: SHOPS as usize,
        category_vocab: CATS as usize,
        user_dim: 4,
        feature_dim: 3,
        tower_hidden: 5,
        tower_dim: 3,
        seed,
        ..DecomposedConfig::default()
    })
    .unwrap();
    scramble(&mut model, 0.5, &mut seeded_rng(seed + 50));
    let recs = records(seed + 300, 8);
    let refs: Vec<&ImpressionRecord> = recs.iter().collect();
    let (_, grads) = model.compute_gradients(&refs).unwrap();
    fd_check(&mut model, &grads, |m| {
        let (loss, _) = m.compute_gradients(&refs).unwrap();
        loss / refs.len() as f64
    })
}

/// Ten models: extractor heads (full and category-only schema), attention
/// poolers with their input gradients, plugged downstream models at every
/// plug layer, and the two-tower extractor.
pub fn all_cases() -> Vec<(String, FdStats)> {
    let mut cases: Vec<(String, FdStats)> = Vec::new();
    for seed in 1..=3 {
        cases.push((format!("extractor full #{seed}"), extractor_case(seed, FeatureSchema::Full)));
    }
    cases.push(("extractor category-only".into(), extractor_case(9, FeatureSchema::CategoryOnly)));
    for seed in 1..=2 {
        cases.push((format!("attention pooler #{seed}"), pooler_case(seed)));
    }
    for (seed, layer) in [(1, 1), (2, 2), (3, 3)] {
        cases.push((format!("plug at layer {layer}"), plug_case(seed, layer)));
    }
    cases.push(("decomposed towers".into(), decomposed_case(4)));
    cases
}
