use biosynth::matcher::{
    eer, eer_of, intercorr_summary, score_database, score_pair, FeatureSubset, ImpostorPolicy, Metric,
    SessionPolicy,
};
use biosynth::rng::RngStream;
use biosynth::synthgen::{assemble_banded_db, generate_feature_pair, BandSpec, SyntheticDatabase};

#[test]
fn pythagoras() {
    assert_eq!(score_pair(&[0.0, 0.0], &[3.0, 4.0], Metric::Euclidean).unwrap(), -5.0);
    assert_eq!(score_pair(&[0.0, 0.0], &[3.0, 4.0], Metric::Manhattan).unwrap(), -7.0);
}

#[test]
fn independent_columns_have_null_intercorrelation() {
    let mut rng = RngStream::new(10, 0).rng();
    let features = (0..100).map(|_| generate_feature_pair(500, 1.0, &mut rng).unwrap()).collect();
    let db = SyntheticDatabase::from_features(500, features).unwrap();
    let s = intercorr_summary(&db, SessionPolicy::Session1).unwrap();
    let null = 0.6745 / 500f64.sqrt();
    assert!((s.median_abs_r - null).abs() <= 0.005, "median |r| {}", s.median_abs_r);
    assert_eq!(s.n_pairs, 4950);
    assert_eq!(s.histogram.iter().map(|b| b.count).sum::<u64>(), 4950);
}

#[test]
fn eer_on_real_scores_ignores_monotone_maps() {
    let db = assemble_banded_db(120, &BandSpec::defaults([0, 4, 4, 0]), 3, 50).unwrap();
    let subset = FeatureSubset::random(8, 5, RngStream::new(1, 0)).unwrap();
    let s = score_database(&db, &subset, Metric::Euclidean, &ImpostorPolicy::Exhaustive).unwrap();
    let base = eer(&s).unwrap().eer;
    assert!(base > 0.0 && base < 0.5);
    for map in [|x: f64| 3.0 * x + 1.0, |x: f64| x.exp(), |x: f64| x.powi(3)] {
        let g: Vec<f64> = s.genuine.iter().map(|&x| map(x)).collect();
        let i: Vec<f64> = s.impostor.iter().map(|&x| map(x)).collect();
        assert!((eer_of(&g, &i).unwrap().0 - base).abs() <= 1e-9);
    }
}

#[test]
fn metrics_agree_on_perfectly_separable_data() {
    let db = assemble_banded_db(60, &BandSpec::defaults([0, 0, 0, 60]), 9, 50).unwrap();
    let subset = FeatureSubset::all(60).unwrap();
    for metric in [Metric::Euclidean, Metric::Manhattan, Metric::Cosine] {
        let s = score_database(&db, &subset, metric, &ImpostorPolicy::Exhaustive).unwrap();
        let r = eer(&s).unwrap();
        assert!(r.eer < 0.01, "{metric}: {}", r.eer);
        assert!(r.genuine_median > r.impostor_median);
    }
}

#[test]
fn sampled_policy_draws_distinct_off_diagonal_pairs() {
    let db = assemble_banded_db(50, &BandSpec::defaults([0, 0, 3, 0]), 4, 50).unwrap();
    let subset = FeatureSubset::all(3).unwrap();
    let policy = ImpostorPolicy::Sampled { count: 500, seed: 2 };
    let a = score_database(&db, &subset, Metric::Euclidean, &policy).unwrap();
    let b = score_database(&db, &subset, Metric::Euclidean, &policy).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.impostor.len(), 500);
    let full = score_database(&db, &subset, Metric::Euclidean, &ImpostorPolicy::Exhaustive).unwrap();
    assert!(a.impostor.iter().all(|x| full.impostor.contains(x)));
}
