use biosynth::matcher::pearson_r;
use biosynth::reliability::{anova_two_sessions, icc_two_sessions, variance_components};
use biosynth::rng::RngStream;
use biosynth::stats;
use biosynth::synthgen::{assemble_banded_db, generate_feature_pair, sample_mult, Band, BandSpec};

#[test]
fn band1_multipliers_are_uniform_on_the_grid() {
    let spec = BandSpec::default_for(Band::Band1, 1);
    let mut rng = RngStream::new(99, 0).rng();
    let draws = 100_000;
    let mut counts = [0u32; 141];
    for _ in 0..draws {
        let m = sample_mult(&spec, &mut rng).unwrap();
        let k = (m * 100.0).round() as usize - 140;
        assert!((m * 100.0 - (k + 140) as f64).abs() < 1e-9, "{m} off grid");
        counts[k] += 1;
    }
    let p = 1.0 / 141.0;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (k, &c) in counts.iter().enumerate() {
        assert!(
            (c as f64 - expected).abs() <= 3.0 * sigma,
            "grid point {:.2}: {c} draws, expected {expected:.1} +- {:.1}",
            1.4 + k as f64 / 100.0,
            3.0 * sigma
        );
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 140 degrees of freedom.
    assert!(chi2 < 198.0, "chi-square {chi2:.1}");
}

#[test]
fn session_correlation_follows_the_model() {
    let mut rng = RngStream::new(3, 0).rng();
    let p = generate_feature_pair(2000, 1.0, &mut rng).unwrap();
    let r = pearson_r(&p.session1, &p.session2).unwrap();
    assert!((r - 0.5).abs() <= 0.04, "r = {r}");
    let p = generate_feature_pair(2000, 2.0, &mut rng).unwrap();
    let r = pearson_r(&p.session1, &p.session2).unwrap();
    assert!((r - 0.2).abs() <= 0.05, "r = {r}");
}

#[test]
fn mean_correlation_law_over_many_features() {
    for (i, mult) in [0.3, 0.7, 1.0, 1.7, 2.8].into_iter().enumerate() {
        let mut rng = RngStream::new(4, i as u64).rng();
        let rs: Vec<f64> = (0..200)
            .map(|_| {
                let p = generate_feature_pair(2000, mult, &mut rng).unwrap();
                pearson_r(&p.session1, &p.session2).unwrap()
            })
            .collect();
        let model = 1.0 / (1.0 + mult * mult);
        let mean = stats::mean(&rs);
        assert!((mean - model).abs() <= 0.03, "mult {mult}: mean r {mean}, model {model}");
    }
}

fn jarque_bera(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = stats::mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0)
}

#[test]
fn generated_columns_look_normal() {
    // Chi-square(2) 99.9th percentile.
    const CRITICAL: f64 = 13.8155;
    let mut rng = RngStream::new(5, 0).rng();
    let trials = 1000;
    let rejected = (0..trials)
        .filter(|_| {
            let p = generate_feature_pair(2000, 0.8, &mut rng).unwrap();
            jarque_bera(&p.session1) > CRITICAL
        })
        .count();
    assert!(rejected <= trials / 100, "{rejected} of {trials} columns rejected");
}

#[test]
fn icc_of_generated_pair_near_model() {
    let mut rng = RngStream::new(6, 0).rng();
    let p = generate_feature_pair(500, 0.6, &mut rng).unwrap();
    let icc = icc_two_sessions(&p.session1, &p.session2).unwrap().icc;
    assert!((icc - 1.0 / 1.36).abs() <= 0.06, "icc {icc}");
}

#[test]
fn variance_components_split_shared_and_noise() {
    let mut rng = RngStream::new(7, 0).rng();
    let p = generate_feature_pair(2000, 1.0, &mut rng).unwrap();
    let v = variance_components(&anova_two_sessions(&p.session1, &p.session2).unwrap()).unwrap();
    let ratio = v.sigma2_subject / v.total();
    assert!((ratio - 0.5).abs() <= 0.05, "ratio {ratio}");
}

#[test]
fn assembly_is_reproducible_and_seed_sensitive() {
    let specs = BandSpec::defaults([5, 5, 5, 5]);
    let a = assemble_banded_db(80, &specs, 11, 50).unwrap();
    let b = assemble_banded_db(80, &specs, 11, 50).unwrap();
    let c = assemble_banded_db(80, &specs, 12, 50).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.features, c.features);
    assert!(a.zscore_deviation() < 1e-12);
}
