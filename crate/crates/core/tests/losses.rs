use std::f64::consts::LN_2;

use keep_core::extractor::loss::{pairwise_term, pointwise_term};
use keep_core::extractor::{hybrid_loss, pairwise_loss, pointwise_loss};
use keep_core::nncore::seeded_rng;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn pairwise_closed_forms() {
    for s in [-3.0f32, 0.0, 0.7, 12.5] {
        assert!((pairwise_loss(&[(s, s)]) - LN_2).abs() <= 1e-6);
    }
    assert!((pairwise_loss(&[(10.0, 0.0)]) - 4.5399e-5).abs() <= 1e-8);
    assert!((pairwise_loss(&[(0.0, 10.0)]) - 10.000045).abs() <= 1e-6);
    assert!((pairwise_loss(&[(1.0, 1.0), (2.0, 2.0)]) - 2.0 * LN_2).abs() <= 1e-12);
}

#[test]
fn pointwise_closed_forms() {
    assert!((pointwise_loss(&[0.0], &[1.0]).unwrap() - LN_2).abs() <= 1e-6);
    assert!((pointwise_loss(&[0.0], &[0.0]).unwrap() - LN_2).abs() <= 1e-6);
    assert!(pointwise_loss(&[0.0], &[0.5]).is_err());
    assert!(pointwise_loss(&[0.0, 1.0], &[1.0]).is_err());
    // clamping keeps extreme logits finite
    let l = pointwise_loss(&[-200.0], &[1.0]).unwrap();
    assert!((l - -(1e-7f64).ln()).abs() < 1e-9);
}

#[test]
fn hybrid_arithmetic() {
    assert_eq!(hybrid_loss(1.0, 0.4, 0.25), 1.1);
    assert_eq!(hybrid_loss(0.75, 123.0, 0.0), 0.75);
    let (p, q, a) = (0.3125, 2.5, 0.25);
    assert_eq!(hybrid_loss(p, q, a), p + a * q);
}

#[test]
fn pointwise_matches_wide_oracle() {
    let mut rng = seeded_rng(5);
    let logits: Vec<f32> = (0..100).map(|_| rng.gen_range(-8.0..8.0)).collect();
    let labels: Vec<f32> = (0..100).map(|_| rng.gen_range(0..2) as f32).collect();
    let oracle: f64 = logits
        .iter()
        .zip(&labels)
        .map(|(&s, &c)| {
            let p = (1.0 / (1.0 + (-(s as f64)).exp())).clamp(1e-7, 1.0 - 1e-7);
            -(c as f64) * p.ln() - (1.0 - c as f64) * (1.0 - p).ln()
        })
        .sum();
    let got = pointwise_loss(&logits, &labels).unwrap();
    assert!((got - oracle).abs() <= 1e-5 * oracle.abs());
}

proptest! {
    #[test]
    fn pairwise_depends_only_on_the_margin(a in -120i32..120, b in -120i32..120, shift in -80i32..80) {
        // quarter steps keep every sum exact in f32
        let (a, b, s) = (a as f32 / 4.0, b as f32 / 4.0, shift as f32 / 4.0);
        let base = pairwise_term(a, b);
        prop_assert!((pairwise_term(a + s, b + s) - base).abs() <= 1e-12);
        prop_assert!(base >= 0.0 && base.is_finite());
    }

    #[test]
    fn pairwise_decreases_with_margin(a in -20.0f32..20.0, b in -20.0f32..20.0, gap in 0.01f32..5.0) {
        prop_assert!(pairwise_term(a + gap, b) < pairwise_term(a, b));
    }

    #[test]
    fn pointwise_is_symmetric_in_label(s in -15.0f32..15.0) {
        prop_assert!((pointwise_term(s, 1.0) - pointwise_term(-s, 0.0)).abs() <= 1e-9);
    }
}
