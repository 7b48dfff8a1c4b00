use proptest::prelude::*;

use lookahead::baselines::{
    kmeans_fit, oracle_route, reward_select, softmax_with_temperature, KmeansRouter, KnnRouter, NoisyJudge,
    OracleRouter, RandomEncoder, RandomRouter, RewardSelect,
};
use lookahead::corpus::{generate_synthetic, RoutingExample, SpecializationPlan};
use lookahead::eval::{
    decide_all, evaluate, normalized_score, oracle_reference, original_score, random_reference,
    routing_proportions, win_tie_loss_of,
};
use lookahead::router::{argmax_lowest, BackboneShape, RoutingDecision};
use lookahead::Error;

fn small_corpus(n: usize) -> Vec<RoutingExample> {
    let plan = SpecializationPlan::planted(3, 3, 0.9, 0.2, 5).unwrap();
    generate_synthetic(&plan, n, 0, 0).unwrap().train
}

fn encoder() -> RandomEncoder {
    RandomEncoder::new(
        BackboneShape {
            layers: 1,
            d_model: 16,
            heads: 2,
            ffn: 32,
            max_len: 64,
        },
        3,
    )
    .unwrap()
}

#[test]
fn oracle_is_perfect_and_random_matches_reference() {
    let data = small_corpus(300);
    let oracle = evaluate(&OracleRouter { models: 3 }, &data).unwrap();
    assert_eq!(oracle.overall.mu_n, Some(100.0));
    assert!((oracle.overall.mu_o - oracle_reference(&data).unwrap()).abs() < 1e-12);

    let random = RandomRouter { models: 3, seed: 9 };
    let a = decide_all(&random, &data).unwrap();
    let b = decide_all(&random, &data).unwrap();
    assert_eq!(a, b);
    let props = routing_proportions(&random, &data).unwrap();
    assert!((props.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    assert!(props.iter().all(|&p| p > 20.0), "{props:?}");
}

#[test]
fn reward_select_with_exact_judge_is_oracle() {
    let data = small_corpus(200);
    let exact = RewardSelect {
        models: 3,
        judge: NoisyJudge { sigma: 0.0, seed: 0 },
    };
    let a = original_score(&exact, &data).unwrap();
    let b = original_score(&OracleRouter { models: 3 }, &data).unwrap();
    assert!((a - b).abs() < 1e-12);
    assert_eq!(reward_select(&[0.1, 0.9, 0.9]).unwrap().selected, 2);
    assert!(reward_select(&[]).is_err());
    assert_eq!(oracle_route(&[0.0, 0.0, 1.0]).unwrap().selected, 3);
}

#[test]
fn knn_and_kmeans_fit_and_route() {
    let data = small_corpus(200);
    let knn = KnnRouter::fit(encoder(), &data[..150], 5).unwrap();
    let report = evaluate(&knn, &data[150..]).unwrap();
    assert_eq!(report.proportions.len(), 3);

    let km = KmeansRouter::fit(encoder(), &data[..150], 4, 1).unwrap();
    assert_eq!(km.model.centroids.len(), 4);
    let d = decide_all(&km, &data[150..]).unwrap();
    assert!(d.iter().all(|d| (1..=3).contains(&d.selected)));
}

#[test]
fn kmeans_recovers_separated_clusters() {
    let mut emb = Vec::new();
    let mut scores = Vec::new();
    for i in 0..60 {
        let c = i % 3;
        let mut v = vec![0.01 * (i as f64).sin(); 3];
        v[c] += 1.0;
        emb.push(v);
        let mut s = vec![0.0; 3];
        s[c] = 1.0;
        scores.push(s);
    }
    let model = kmeans_fit(&emb, &scores, 3, 0).unwrap();
    for c in 0..3 {
        let mut q = vec![0.0; 3];
        q[c] = 1.0;
        assert_eq!(model.route(&q, 3).selected, c + 1);
    }
    assert!(kmeans_fit(&emb, &scores, 0, 0).is_err());
}

#[test]
fn win_tie_loss_groups_by_correct_count() {
    let mut data = small_corpus(50);
    for (i, e) in data.iter_mut().enumerate() {
        e.labels = match i % 3 {
            0 => vec![1.0, 0.0, 0.0],
            1 => vec![1.0, 1.0, 0.0],
            _ => vec![0.0, 0.0, 0.0],
        };
    }
    let pick = |t: usize| RoutingDecision::from_scores((0..3).map(|m| if m == t { 1.0 } else { 0.0 }).collect(), 0.0);
    let a: Vec<_> = data.iter().map(|_| pick(0)).collect();
    let b: Vec<_> = data.iter().map(|_| pick(2)).collect();
    let groups = win_tie_loss_of(&data, &a, &b).unwrap();
    let by = |k: usize| groups.iter().find(|g| g.correct_candidates == k).unwrap();
    assert_eq!(by(0).tie, 100.0);
    assert_eq!(by(1).win, 100.0);
    assert_eq!(by(2).win, 100.0);
    assert!(win_tie_loss_of(&data, &a[1..], &b).is_err());
}

#[test]
fn normalized_score_is_undefined_without_headroom() {
    assert!(matches!(normalized_score(0.5, 0.5, 0.5), Err(Error::UndefinedMetric(_))));
    assert!(random_reference(&[]).is_err());
}

proptest! {
    #[test]
    fn normalized_score_is_affine(r in 0.0f64..50.0, gap in 1.0f64..50.0, f in -1.0f64..2.0) {
        let o = r + gap;
        let mu = r + f * gap;
        let got = normalized_score(mu, r, o).unwrap();
        prop_assert!((got - 100.0 * f).abs() < 1e-9);
        prop_assert!((normalized_score(o, r, o).unwrap() - 100.0).abs() < 1e-9);
        prop_assert!(normalized_score(r, r, o).unwrap().abs() < 1e-9);
    }

    #[test]
    fn argmax_picks_first_maximum(v in prop::collection::vec(0u8..4, 1..10)) {
        let s: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let i = argmax_lowest(&s);
        let max = s.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(s[i], max);
        prop_assert!(s[..i].iter().all(|&x| x < max));
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-20.0f64..20.0, 1..8), tau in 0.05f64..5.0) {
        let p = softmax_with_temperature(&v, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let i = argmax_lowest(&v);
        prop_assert!(p.iter().all(|&x| x <= p[i] + 1e-12));
    }

    #[test]
    fn oracle_mu_o_bounds_every_policy(seed in 0u64..50) {
        let data = small_corpus(40);
        let random = original_score(&RandomRouter { models: 3, seed }, &data).unwrap();
        prop_assert!(random <= oracle_reference(&data).unwrap() + 1e-12);
    }
}
