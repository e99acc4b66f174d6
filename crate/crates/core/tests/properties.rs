//! Cross-module invariants as properties over random inputs.

use std::collections::BTreeSet;

use hml_core::diffcore::{Graph, Tensor};
use hml_core::encoder::{focal_loss, FocalLossConfig};
use hml_core::forgetting::ConstantProp;
use hml_core::pointproc::{
    event_adjacency, intensity, log_likelihood, AdjacencyNormalization, CascadeView, HawkesParams,
};
use hml_core::simgen::{generate_world, score_event_adjacencies, simulate_cascade, WorldConfig};
use hml_core::ssl::{loss_crs, loss_uni, mask_features, MaskSpec, UniReduction};
use hml_core::{corpus::validate, rng};
use proptest::prelude::*;

fn sorted_times(mut raw: Vec<f64>) -> Vec<f64> {
    raw.sort_by(f64::total_cmp);
    raw.dedup();
    raw
}

fn rows(values: &[f64], n: usize, d: usize) -> Tensor {
    Tensor::new(vec![n, d], values[..n * d].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn poisson_likelihood_closed_form(
        lambda0 in 0.01f64..5.0,
        times in proptest::collection::vec(0.0f64..20.0, 0..30),
        extra in 0.0f64..5.0,
    ) {
        let times = sorted_times(times);
        let horizon = times.last().copied().unwrap_or(0.0) + extra + 1e-3;
        let view = CascadeView::new(times.clone(), vec![], horizon).unwrap();
        let p = HawkesParams { lambda0, alpha: 0.0, beta: 1.0, gamma: 0.0 };
        let ll = log_likelihood(&p, &[view], 64).unwrap();
        let expected = times.len() as f64 * lambda0.ln() - lambda0 * horizon;
        prop_assert!((ll - expected).abs() <= 1e-9 * (1.0 + expected.abs()), "{ll} vs {expected}");
    }

    #[test]
    fn intensity_is_at_least_baseline_without_cross_terms(
        lambda0 in 0.01f64..2.0,
        alpha in 0.0f64..2.0,
        beta in 0.1f64..4.0,
        times in proptest::collection::vec(0.0f64..10.0, 1..20),
        t in 0.0f64..12.0,
    ) {
        let times = sorted_times(times);
        let view = CascadeView::new(times, vec![], 12.0).unwrap();
        let p = HawkesParams { lambda0, alpha, beta, gamma: 0.0 };
        prop_assert!(intensity(&p, &view, t).unwrap() >= lambda0 - 1e-15);
    }

    #[test]
    fn adjacency_is_normalized_and_causal(seed in 0u64..1000) {
        let cfg = WorldConfig { seed, n_news: 24, n_events: 3, ..WorldConfig::default() };
        let world = generate_world(&cfg).unwrap();
        let corpus = &world.corpus;
        let p = HawkesParams { lambda0: 0.2, alpha: 0.8, beta: 1.2, gamma: 0.3 };
        for event in &corpus.events {
            let adj = event_adjacency(&p, event, corpus, &ConstantProp(0.4), AdjacencyNormalization::MinMax).unwrap();
            let r = adj.size();
            for i in 0..r {
                prop_assert_eq!(adj.get(i, i), 0.0);
                for j in 0..r {
                    let v = adj.get(i, j);
                    prop_assert!((0.0..=1.0).contains(&v));
                    let ti = corpus.item(&adj.member_ids[i]).unwrap().timestamp;
                    let tj = corpus.item(&adj.member_ids[j]).unwrap().timestamp;
                    if tj <= ti {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn generated_worlds_validate(seed in 0u64..10_000, events in 1usize..6, per in 1usize..8) {
        let cfg = WorldConfig { seed, n_events: events, n_news: events * per, ..WorldConfig::default() };
        let world = generate_world(&cfg).unwrap();
        prop_assert!(validate(&world.corpus).is_empty());
        prop_assert_eq!(world.corpus.len(), events * per);
        prop_assert_eq!(world.truth.labels.len(), events * per);
    }

    #[test]
    fn simulated_cascades_are_increasing_and_bounded(seed in 0u64..10_000, horizon in 0.5f64..30.0) {
        let p = HawkesParams { lambda0: 0.5, alpha: 0.6, beta: 1.0, gamma: 0.0 };
        let ts = simulate_cascade(&p, horizon, &mut rng::stream(seed, "prop")).unwrap();
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ts.iter().all(|t| *t > 0.0 && *t <= horizon));
    }

    #[test]
    fn contrastive_losses_are_non_negative(
        values in proptest::collection::vec(-2.0f64..2.0, 48),
        tau in 0.1f64..2.0,
    ) {
        let mut g = Graph::new();
        let z = g.constant(rows(&values, 4, 4));
        let za = g.constant(rows(&values[16..], 4, 4));
        let zc = g.constant(rows(&values[32..], 4, 4));
        let uni = loss_uni(&mut g, z, za, tau, UniReduction::MeanOfLogs).unwrap();
        let crs = loss_crs(&mut g, &[z, zc], tau).unwrap();
        prop_assert!(g.value(uni).item() >= 0.0);
        prop_assert!(g.value(crs).item() >= 0.0);
    }

    #[test]
    fn masking_is_idempotent(
        values in proptest::collection::vec(-1.0f64..1.0, 15),
        mask in proptest::collection::vec(any::<bool>(), 5),
    ) {
        let ids: Vec<String> = (0..5).map(|i| format!("n{i}")).collect();
        let x = rows(&values, 5, 3);
        let spec = MaskSpec {
            masked_ids: ids.iter().zip(&mask).filter(|(_, m)| **m).map(|(id, _)| id.clone()).collect::<BTreeSet<_>>(),
        };
        let once = mask_features(&ids, &x, &spec, &[0.1, 0.2, 0.3]).unwrap();
        let twice = mask_features(&ids, &once, &spec, &[0.1, 0.2, 0.3]).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn focal_loss_is_bounded_by_cross_entropy(
        logits in proptest::collection::vec(-4.0f64..4.0, 16),
        labels in proptest::collection::vec(0usize..2, 8),
        psi in 0.0f64..2.0,
    ) {
        let value = |psi: f64| {
            let mut g = Graph::new();
            let l = g.constant(rows(&logits, 8, 2));
            let p = g.softmax(l, 1).unwrap();
            let cfg = FocalLossConfig { class_weights: vec![1.0, 1.0], psi };
            let rows: Vec<usize> = (0..8).collect();
            let loss = focal_loss(&mut g, p, &rows, &labels, &cfg).unwrap();
            g.value(loss).item()
        };
        let ce = value(0.0);
        prop_assert!(value(psi) <= ce + 1e-12);
        prop_assert!(value(psi) >= 0.0);
    }
}

#[test]
fn recovery_scores_stay_in_unit_interval() {
    let cfg = WorldConfig {
        n_news: 40,
        n_events: 4,
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg).unwrap();
    let p = world.truth.params;
    let adjacencies: Vec<_> = world
        .corpus
        .events
        .iter()
        .filter(|e| e.size() >= 2)
        .map(|e| {
            event_adjacency(
                &p,
                e,
                &world.corpus,
                &ConstantProp(0.0),
                AdjacencyNormalization::MinMax,
            )
            .unwrap()
        })
        .collect();
    for threshold in [0.0, 0.1, 0.5, 0.9, 1.0] {
        let r = score_event_adjacencies(&adjacencies, &world.truth, threshold).unwrap();
        for v in [r.precision, r.recall, r.f1] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
