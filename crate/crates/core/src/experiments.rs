//! Declarative Monte Carlo protocols over synthetic databases.
//!
//! Every protocol is a pure function of its [`ExperimentConfig`]. Pools are
//! generated per `(band, n_subjects)` from seeds derived from the config seed,
//! and replicate `r` of a cell always uses the same random feature order, so
//! any row can be recomputed in isolation.
//!
//! Subsets are nested: replicate `r` draws one random ordering of the pool
//! and its `c`-feature subset is the first `c` features of that ordering.
//! Each subset is still a uniform draw of `c` distinct features; nesting lets
//! a whole feature-count curve be scored incrementally.

use std::collections::BTreeMap;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matcher::{
    self, eer, intercorr_summary, score_database, unit_histogram, FeatureSubset, HistogramBin,
    ImpostorPolicy, IncrementalScorer, Metric, SessionPolicy,
};
use crate::rng::{derive_seed, RngStream};
use crate::stats;
use crate::synthgen::{assemble_banded_db, Band, BandSpec, SyntheticDatabase};

pub const FORMAT_VERSION: u32 = 1;

/// Largest subject count run without `allow_large`.
pub const DESK_MAX_SUBJECTS: usize = 2000;

const TAG_POOL: u64 = 1;
const TAG_ORDER: u64 = 2;
const TAG_IMPOSTORS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    IccHistogram,
    IntercorrHistogram,
    FeatureSweep,
    BandComparison,
    SubjectScaling,
}

/// One subject count or several.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubjectCounts {
    One(usize),
    Many(Vec<usize>),
}

impl SubjectCounts {
    pub fn as_vec(&self) -> Vec<usize> {
        match self {
            SubjectCounts::One(n) => vec![*n],
            SubjectCounts::Many(v) => v.clone(),
        }
    }
}

impl Default for SubjectCounts {
    fn default() -> Self {
        SubjectCounts::One(500)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub protocol: Protocol,
    pub seed: u64,
    #[serde(default)]
    pub n_subjects: SubjectCounts,
    #[serde(default = "default_bands")]
    pub bands: Vec<Band>,
    /// Features generated per band pool (also the quota per band for the
    /// histogram protocols).
    #[serde(default = "default_pool_features")]
    pub pool_features: usize,
    #[serde(default = "default_feature_counts")]
    pub feature_counts: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub metric: Metric,
    /// `None` picks exhaustive pairs below 4000 subjects, sampled above.
    #[serde(default)]
    pub impostor_policy: Option<ImpostorPolicy>,
    /// Median-EER targets; `0` means perfect separation.
    #[serde(default = "default_eer_targets")]
    pub eer_targets: Vec<f64>,
    #[serde(default)]
    pub session_policy: SessionPolicy,
    #[serde(default = "default_max_attempts")]
    pub max_attempts_per_feature: u32,
    /// Required for any subject count above [`DESK_MAX_SUBJECTS`].
    #[serde(default)]
    pub allow_large: bool,
}

fn default_format_version() -> u32 {
    FORMAT_VERSION
}
fn default_bands() -> Vec<Band> {
    Band::ALL.to_vec()
}
fn default_pool_features() -> usize {
    3000
}
fn default_feature_counts() -> Vec<usize> {
    (2..=100).collect()
}
fn default_replicates() -> usize {
    25
}
fn default_eer_targets() -> Vec<f64> {
    vec![0.02, 0.003, 0.0015, 0.0]
}
fn default_max_attempts() -> u32 {
    crate::synthgen::DEFAULT_MAX_ATTEMPTS_PER_FEATURE
}

impl ExperimentConfig {
    /// Defaults for `protocol` with an explicit seed.
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            protocol,
            seed,
            n_subjects: SubjectCounts::default(),
            bands: default_bands(),
            pool_features: default_pool_features(),
            feature_counts: default_feature_counts(),
            replicates: default_replicates(),
            metric: Metric::default(),
            impostor_policy: None,
            eer_targets: default_eer_targets(),
            session_policy: SessionPolicy::default(),
            max_attempts_per_feature: default_max_attempts(),
            allow_large: false,
        }
    }

    /// Named preset experiments.
    ///
    /// `fig1` ICC histogram, `fig2` Band-3 intercorrelations, `fig4` Band-3
    /// sweep over 2..19 features (10 replicates), `fig5` sweep over 2..100
    /// features for all bands, `fig6_7` band comparison at 25 features,
    /// `fig8` subject scaling at desk scale, `fig8_full` up to 10,000 subjects.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let mut c = match name {
            "fig1" => Self::new(Protocol::IccHistogram, seed),
            "fig2" => Self {
                bands: vec![Band::Band3],
                ..Self::new(Protocol::IntercorrHistogram, seed)
            },
            "fig4" => Self {
                bands: vec![Band::Band3],
                feature_counts: (2..=19).collect(),
                replicates: 10,
                ..Self::new(Protocol::FeatureSweep, seed)
            },
            "fig5" => Self::new(Protocol::FeatureSweep, seed),
            "fig6_7" => Self {
                feature_counts: vec![25],
                ..Self::new(Protocol::BandComparison, seed)
            },
            "fig8" | "fig8_full" => Self {
                bands: vec![Band::Band4],
                replicates: 100,
                n_subjects: SubjectCounts::Many(vec![100, 500, 1000, 2000]),
                ..Self::new(Protocol::SubjectScaling, seed)
            },
            _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
        };
        if name == "fig8_full" {
            c.n_subjects = SubjectCounts::Many(vec![100, 500, 1000, 2000, 4000, 6000, 8000, 10_000]);
            c.allow_large = true;
        }
        Ok(c)
    }

    pub const PRESETS: [&'static str; 7] = ["fig1", "fig2", "fig4", "fig5", "fig6_7", "fig8", "fig8_full"];

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let subjects = self.n_subjects.as_vec();
        if subjects.is_empty() || subjects.iter().any(|&n| n < 2) {
            return Err(Error::Config("n_subjects must be non-empty and each >= 2".into()));
        }
        if let Some(&n) = subjects.iter().find(|&&n| n > DESK_MAX_SUBJECTS) {
            if !self.allow_large {
                return Err(Error::Config(format!(
                    "{n} subjects exceeds the desk-scale cap of {DESK_MAX_SUBJECTS}; set allow_large = true"
                )));
            }
        }
        if self.bands.is_empty() {
            return Err(Error::Config("no bands selected".into()));
        }
        for (i, b) in self.bands.iter().enumerate() {
            if self.bands[..i].contains(b) {
                return Err(Error::Config(format!("{b} listed twice")));
            }
        }
        if self.pool_features == 0 {
            return Err(Error::Config("pool_features must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if matches!(
            self.protocol,
            Protocol::FeatureSweep | Protocol::BandComparison | Protocol::SubjectScaling
        ) {
            validate_counts(&self.feature_counts, self.pool_features)?;
        }
        if self.eer_targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("eer_targets must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    fn impostor_policy_for(&self, n: usize) -> ImpostorPolicy {
        self.impostor_policy.unwrap_or_else(|| {
            ImpostorPolicy::default_for(n, derive_seed(self.seed, &[TAG_IMPOSTORS, n as u64]))
        })
    }

    fn pool(&self, band: Band, n: usize) -> Result<SyntheticDatabase> {
        band_pool(band, n, self.pool_features, self.pool_seed(band, n), self.max_attempts_per_feature)
    }

    fn pool_seed(&self, band: Band, n: usize) -> u64 {
        derive_seed(self.seed, &[TAG_POOL, u64::from(band.number()), n as u64])
    }

    fn order_seed(&self, band: Band, n: usize) -> u64 {
        derive_seed(self.seed, &[TAG_ORDER, u64::from(band.number()), n as u64])
    }
}

fn validate_counts(counts: &[usize], pool: usize) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::Config("feature_counts is empty".into()));
    }
    if counts[0] == 0 || counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("feature_counts must be positive and strictly ascending".into()));
    }
    let max = *counts.last().unwrap();
    if max > pool {
        return Err(Error::Config(format!(
            "feature count {max} exceeds the pool of {pool} features"
        )));
    }
    Ok(())
}

/// Single-band pool of `features` features.
pub fn band_pool(band: Band, n: usize, features: usize, seed: u64, max_attempts: u32) -> Result<SyntheticDatabase> {
    assemble_banded_db(n, &[BandSpec::default_for(band, features)], seed, max_attempts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreClass {
    Genuine,
    Impostor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: u64,
}

impl From<HistogramBin> for HistogramRow {
    fn from(b: HistogramBin) -> Self {
        Self {
            bin_low: b.bin_low,
            bin_high: b.bin_high,
            count: b.count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub band: Band,
    pub n_subjects: usize,
    pub feature_count: usize,
    pub median_eer: f64,
    /// Replicates with EER exactly 0.
    pub zero_eer_replicates: usize,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: Band,
    pub class: ScoreClass,
    pub n_subjects: usize,
    pub feature_count: usize,
    /// Median over replicates of the per-replicate median score.
    pub median: f64,
    /// Median over replicates of the per-replicate IQR.
    pub iqr: f64,
    pub median_eer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_subjects: usize,
    pub target: f64,
    /// `None` when no candidate count met the target.
    pub min_features: Option<usize>,
    pub median_eer_at_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rows", rename_all = "snake_case")]
pub enum Rows {
    IccHistogram(Vec<HistogramRow>),
    IntercorrHistogram(Vec<HistogramRow>),
    FeatureSweep(Vec<SweepRow>),
    BandComparison(Vec<BandRow>),
    SubjectScaling(Vec<ScalingRow>),
}

impl Rows {
    pub fn len(&self) -> usize {
        match self {
            Rows::IccHistogram(r) | Rows::IntercorrHistogram(r) => r.len(),
            Rows::FeatureSweep(r) => r.len(),
            Rows::BandComparison(r) => r.len(),
            Rows::SubjectScaling(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the rows as a headed CSV table.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        fn all<W: std::io::Write, T: Serialize>(w: &mut csv::Writer<W>, rows: &[T]) -> csv::Result<()> {
            rows.iter().try_for_each(|r| w.serialize(r))
        }
        match self {
            Rows::IccHistogram(r) | Rows::IntercorrHistogram(r) => all(w, r),
            Rows::FeatureSweep(r) => all(w, r),
            Rows::BandComparison(r) => all(w, r),
            Rows::SubjectScaling(r) => all(w, r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
}

impl Provenance {
    pub fn for_config(config: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: FORMAT_VERSION,
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub protocol: Protocol,
    pub rows: Rows,
    /// Scalar statistics, e.g. per-band counts or median |r|.
    pub summary: BTreeMap<String, f64>,
    pub provenance: Provenance,
}

impl ExperimentResult {
    fn new(config: &ExperimentConfig, rows: Rows, summary: BTreeMap<String, f64>) -> Self {
        Self {
            protocol: config.protocol,
            rows,
            summary,
            provenance: Provenance::for_config(config),
        }
    }
}

/// Dispatches on `config.protocol`.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentResult> {
    match config.protocol {
        Protocol::IccHistogram => run_icc_histogram(config),
        Protocol::IntercorrHistogram => run_intercorr_histogram(config),
        Protocol::FeatureSweep => run_feature_sweep(config),
        Protocol::BandComparison => run_band_comparison(config),
        Protocol::SubjectScaling => run_subject_scaling(config),
    }
}

/// Per-replicate EERs for nested subsets of a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct EerCurve {
    pub counts: Vec<usize>,
    /// `eers[i][r]`: replicate `r` at `counts[i]` features.
    pub eers: Vec<Vec<f64>>,
}

impl EerCurve {
    pub fn medians(&self) -> Vec<f64> {
        self.eers.iter().map(|e| stats::median(e)).collect()
    }

    /// First count whose replicate-median EER is at most `target`.
    pub fn first_meeting(&self, target: f64) -> Option<(usize, f64)> {
        self.counts
            .iter()
            .zip(self.medians())
            .find(|&(_, m)| m <= target)
            .map(|(&c, m)| (c, m))
    }
}

/// Random feature ordering of replicate `replicate`, truncated to `len`.
pub fn replicate_order(n_features: usize, len: usize, order_seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = RngStream::new(order_seed, replicate as u64).rng();
    let mut all: Vec<usize> = (0..n_features).collect();
    // Front-to-back Fisher-Yates: shorter orders are prefixes of longer ones.
    for i in 0..len {
        let j = rng.random_range(i..n_features);
        all.swap(i, j);
    }
    all.truncate(len);
    all
}

/// Median-EER curve over ascending feature counts.
pub fn eer_curve(
    db: &SyntheticDatabase,
    counts: &[usize],
    replicates: usize,
    order_seed: u64,
    metric: Metric,
    impostor_policy: &ImpostorPolicy,
) -> Result<EerCurve> {
    validate_counts(counts, db.n_features())?;
    if replicates == 0 {
        return Err(Error::Config("replicates must be >= 1".into()));
    }
    let max = *counts.last().unwrap();
    let per_replicate: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let order = replicate_order(db.n_features(), max, order_seed, r);
            let mut scorer = IncrementalScorer::new(db, metric, impostor_policy)?;
            let mut out = Vec::with_capacity(counts.len());
            let mut next = counts.iter().peekable();
            for (i, &f) in order.iter().enumerate() {
                scorer.add_feature(f)?;
                if next.peek() == Some(&&(i + 1)) {
                    next.next();
                    out.push(scorer.eer()?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let eers = (0..counts.len())
        .map(|i| per_replicate.iter().map(|r| r[i]).collect())
        .collect();
    Ok(EerCurve {
        counts: counts.to_vec(),
        eers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinFeatures {
    /// `None`: no candidate met the target.
    pub count: Option<usize>,
    pub median_eer: Option<f64>,
    /// `(count, median EER)` for every candidate evaluated.
    pub medians: Vec<(usize, f64)>,
}

/// Smallest candidate count whose median EER over `replicates` random
/// subsets meets `target` (`0` demands perfect separation).
pub fn min_features_for_eer(
    db: &SyntheticDatabase,
    target: f64,
    replicates: usize,
    candidate_counts: &[usize],
    seed: u64,
    metric: Metric,
    impostor_policy: &ImpostorPolicy,
) -> Result<MinFeatures> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Config(format!("EER target {target} outside [0, 1]")));
    }
    let curve = eer_curve(db, candidate_counts, replicates, seed, metric, impostor_policy)?;
    Ok(min_features_from_curve(&curve, target))
}

fn min_features_from_curve(curve: &EerCurve, target: f64) -> MinFeatures {
    let hit = curve.first_meeting(target);
    MinFeatures {
        count: hit.map(|h| h.0),
        median_eer: hit.map(|h| h.1),
        medians: curve.counts.iter().copied().zip(curve.medians()).collect(),
    }
}

pub fn run_feature_sweep(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mut rows = Vec::new();
    for n in config.n_subjects.as_vec() {
        let policy = config.impostor_policy_for(n);
        for &band in &config.bands {
            let db = config.pool(band, n)?;
            let curve = eer_curve(
                &db,
                &config.feature_counts,
                config.replicates,
                config.order_seed(band, n),
                config.metric,
                &policy,
            )?;
            for ((&c, eers), median) in curve.counts.iter().zip(&curve.eers).zip(curve.medians()) {
                rows.push(SweepRow {
                    band,
                    n_subjects: n,
                    feature_count: c,
                    median_eer: median,
                    zero_eer_replicates: eers.iter().filter(|&&e| e == 0.0).count(),
                    replicates: config.replicates,
                });
            }
        }
    }
    Ok(ExperimentResult::new(config, Rows::FeatureSweep(rows), BTreeMap::new()))
}

pub fn run_band_comparison(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mut rows = Vec::new();
    for n in config.n_subjects.as_vec() {
        let policy = config.impostor_policy_for(n);
        for &band in &config.bands {
            let db = config.pool(band, n)?;
            let order_seed = config.order_seed(band, n);
            for &c in &config.feature_counts {
                let evals = (0..config.replicates)
                    .into_par_iter()
                    .map(|r| {
                        let subset = FeatureSubset::new(
                            replicate_order(db.n_features(), c, order_seed, r),
                            db.n_features(),
                        )?;
                        eer(&score_database(&db, &subset, config.metric, &policy)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let med = |f: fn(&matcher::EvalResult) -> f64| {
                    stats::median(&evals.iter().map(f).collect::<Vec<_>>())
                };
                let median_eer = med(|e| e.eer);
                rows.push(BandRow {
                    band,
                    class: ScoreClass::Genuine,
                    n_subjects: n,
                    feature_count: c,
                    median: med(|e| e.genuine_median),
                    iqr: med(|e| e.genuine_iqr),
                    median_eer,
                });
                rows.push(BandRow {
                    band,
                    class: ScoreClass::Impostor,
                    n_subjects: n,
                    feature_count: c,
                    median: med(|e| e.impostor_median),
                    iqr: med(|e| e.impostor_iqr),
                    median_eer,
                });
            }
        }
    }
    Ok(ExperimentResult::new(config, Rows::BandComparison(rows), BTreeMap::new()))
}

/// Minimal feature counts per subject count and EER target (first band only).
pub fn run_subject_scaling(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let band = config.bands[0];
    let mut rows = Vec::new();
    for n in config.n_subjects.as_vec() {
        let db = config.pool(band, n)?;
        let curve = eer_curve(
            &db,
            &config.feature_counts,
            config.replicates,
            config.order_seed(band, n),
            config.metric,
            &config.impostor_policy_for(n),
        )?;
        log::info!("subject scaling: n = {n} done");
        for &target in &config.eer_targets {
            let min = min_features_from_curve(&curve, target);
            rows.push(ScalingRow {
                n_subjects: n,
                target,
                min_features: min.count,
                median_eer_at_min: min.median_eer,
            });
        }
    }
    Ok(ExperimentResult::new(config, Rows::SubjectScaling(rows), BTreeMap::new()))
}

/// Achieved-ICC histogram of a database with `pool_features` per selected band
/// (first subject count only).
pub fn run_icc_histogram(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let n = config.n_subjects.as_vec()[0];
    let specs: Vec<BandSpec> = config
        .bands
        .iter()
        .map(|&b| BandSpec::default_for(b, config.pool_features))
        .collect();
    let db = assemble_banded_db(
        n,
        &specs,
        derive_seed(config.seed, &[TAG_POOL, 0, n as u64]),
        config.max_attempts_per_feature,
    )?;
    let rows = unit_histogram(db.meta.iter().map(|m| m.achieved_icc))
        .into_iter()
        .map(HistogramRow::from)
        .collect();
    let mut summary = BTreeMap::new();
    for band in Band::ALL {
        let count = db.meta.iter().filter(|m| m.band == Some(band)).count();
        summary.insert(format!("{band}_count"), count as f64);
    }
    summary.insert("total".into(), db.n_features() as f64);
    if let Some(g) = &db.generation {
        summary.insert("attempts".into(), g.attempts as f64);
    }
    Ok(ExperimentResult::new(config, Rows::IccHistogram(rows), summary))
}

/// |r| histogram of one band pool (first band, first subject count).
pub fn run_intercorr_histogram(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let n = config.n_subjects.as_vec()[0];
    let db = config.pool(config.bands[0], n)?;
    let corr = intercorr_summary(&db, config.session_policy)?;
    let mut summary = BTreeMap::new();
    summary.insert("median_abs_r".into(), corr.median_abs_r);
    summary.insert("p95_abs_r".into(), corr.p95_abs_r);
    summary.insert("n_pairs".into(), corr.n_pairs as f64);
    let rows = corr.histogram.into_iter().map(HistogramRow::from).collect();
    Ok(ExperimentResult::new(config, Rows::IntercorrHistogram(rows), summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(protocol: Protocol) -> ExperimentConfig {
        ExperimentConfig {
            n_subjects: SubjectCounts::One(40),
            pool_features: 12,
            feature_counts: vec![2, 4, 8],
            replicates: 5,
            ..ExperimentConfig::new(protocol, 7)
        }
    }

    #[test]
    fn validation_catches_bad_configs() {
        let ok = small(Protocol::FeatureSweep);
        ok.validate().unwrap();
        let bad = [
            ExperimentConfig { replicates: 0, ..ok.clone() },
            ExperimentConfig { feature_counts: vec![4, 2], ..ok.clone() },
            ExperimentConfig { feature_counts: vec![13], ..ok.clone() },
            ExperimentConfig { bands: vec![], ..ok.clone() },
            ExperimentConfig { bands: vec![Band::Band1, Band::Band1], ..ok.clone() },
            ExperimentConfig { n_subjects: SubjectCounts::One(4000), ..ok.clone() },
            ExperimentConfig { eer_targets: vec![1.5], ..ok.clone() },
            ExperimentConfig { format_version: 99, ..ok.clone() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
        ExperimentConfig { n_subjects: SubjectCounts::One(4000), allow_large: true, ..ok }
            .validate()
            .unwrap();
    }

    #[test]
    fn presets_validate() {
        for name in ExperimentConfig::PRESETS {
            ExperimentConfig::preset(name, 1).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("fig3", 1).is_err());
        let fig4 = ExperimentConfig::preset("fig4", 1).unwrap();
        assert_eq!(fig4.feature_counts, (2..=19).collect::<Vec<_>>());
        assert_eq!(fig4.replicates, 10);
    }

    #[test]
    fn feature_sweep_is_deterministic_and_keyed() {
        let c = small(Protocol::FeatureSweep);
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a, b);
        let Rows::FeatureSweep(rows) = &a.rows else { panic!() };
        assert_eq!(rows.len(), 4 * 3);
        assert!(rows.iter().all(|r| (0.0..=0.5).contains(&r.median_eer)));
        assert_eq!(a.provenance.config_hash, c.hash());
    }

    #[test]
    fn forced_subset_replicates_agree() {
        let c = ExperimentConfig {
            feature_counts: vec![12],
            bands: vec![Band::Band2],
            ..small(Protocol::FeatureSweep)
        };
        let db = c.pool(Band::Band2, 40).unwrap();
        let curve = eer_curve(&db, &[12], 25, c.order_seed(Band::Band2, 40), Metric::Euclidean, &ImpostorPolicy::Exhaustive).unwrap();
        assert!(curve.eers[0].windows(2).all(|w| w[0] == w[1]), "{:?}", curve.eers[0]);
    }

    #[test]
    fn curve_rows_match_direct_scoring() {
        let c = small(Protocol::FeatureSweep);
        let db = c.pool(Band::Band3, 40).unwrap();
        let seed = c.order_seed(Band::Band3, 40);
        let curve = eer_curve(&db, &[3, 6], 4, seed, Metric::Euclidean, &ImpostorPolicy::Exhaustive).unwrap();
        for r in 0..4 {
            let order = replicate_order(db.n_features(), 6, seed, r);
            for (i, &count) in [3usize, 6].iter().enumerate() {
                let subset = FeatureSubset::new(order[..count].to_vec(), db.n_features()).unwrap();
                let direct = eer(&score_database(&db, &subset, Metric::Euclidean, &ImpostorPolicy::Exhaustive).unwrap()).unwrap();
                assert_eq!(curve.eers[i][r], direct.eer);
            }
        }
    }

    #[test]
    fn replicate_order_is_a_prefix_family() {
        let long = replicate_order(50, 20, 3, 4);
        let short = replicate_order(50, 5, 3, 4);
        assert_eq!(&long[..5], &short[..]);
        let mut sorted = long.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
    }

    #[test]
    fn trivial_target_returns_smallest_candidate() {
        let c = small(Protocol::SubjectScaling);
        let db = c.pool(Band::Band4, 40).unwrap();
        let m = min_features_for_eer(&db, 1.0, 5, &[2, 4, 8], 1, Metric::Euclidean, &ImpostorPolicy::Exhaustive).unwrap();
        assert_eq!(m.count, Some(2));
        assert!(min_features_for_eer(&db, -0.1, 5, &[2], 1, Metric::Euclidean, &ImpostorPolicy::Exhaustive).is_err());
    }

    #[test]
    fn stricter_targets_need_at_least_as_many_features() {
        let c = small(Protocol::SubjectScaling);
        let db = c.pool(Band::Band4, 40).unwrap();
        let counts: Vec<usize> = (1..=12).collect();
        let policy = ImpostorPolicy::Exhaustive;
        let mut last = 0;
        for target in [0.2, 0.1, 0.05, 0.0] {
            let m = min_features_for_eer(&db, target, 7, &counts, 3, Metric::Euclidean, &policy).unwrap();
            if let Some(count) = m.count {
                assert!(count >= last, "target {target}: {count} < {last}");
                last = count;
            }
        }
    }

    #[test]
    fn scaling_single_cell_matches_min_features() {
        let c = ExperimentConfig {
            bands: vec![Band::Band4],
            eer_targets: vec![0.05],
            ..small(Protocol::SubjectScaling)
        };
        let res = run(&c).unwrap();
        let Rows::SubjectScaling(rows) = &res.rows else { panic!() };
        assert_eq!(rows.len(), 1);
        let db = c.pool(Band::Band4, 40).unwrap();
        let direct = min_features_for_eer(
            &db, 0.05, c.replicates, &c.feature_counts, c.order_seed(Band::Band4, 40),
            c.metric, &ImpostorPolicy::Exhaustive,
        )
        .unwrap();
        assert_eq!(rows[0].min_features, direct.count);
    }

    #[test]
    fn icc_histogram_conserves_counts() {
        let c = ExperimentConfig { pool_features: 10, ..small(Protocol::IccHistogram) };
        let res = run(&c).unwrap();
        let Rows::IccHistogram(rows) = &res.rows else { panic!() };
        assert_eq!(rows.iter().map(|r| r.count).sum::<u64>(), 40);
        assert_eq!(res.summary["band3_count"], 10.0);

        let only4 = ExperimentConfig { bands: vec![Band::Band4], ..c };
        let res = run(&only4).unwrap();
        let Rows::IccHistogram(rows) = &res.rows else { panic!() };
        assert!(rows.iter().filter(|r| r.bin_high <= 0.7 + 1e-12).all(|r| r.count == 0));
        assert_eq!(rows.iter().map(|r| r.count).sum::<u64>(), 10);
    }

    #[test]
    fn band_comparison_rows() {
        let c = ExperimentConfig { feature_counts: vec![4], ..small(Protocol::BandComparison) };
        let res = run(&c).unwrap();
        let Rows::BandComparison(rows) = &res.rows else { panic!() };
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.iqr >= 0.0));
    }

    #[test]
    fn intercorr_protocol_summary() {
        let c = ExperimentConfig { bands: vec![Band::Band3], ..small(Protocol::IntercorrHistogram) };
        let res = run(&c).unwrap();
        assert_eq!(res.summary["n_pairs"], 66.0);
        assert!(res.summary["p95_abs_r"] >= res.summary["median_abs_r"]);
    }

    #[test]
    fn config_toml_rejects_unknown_keys() {
        let text = "protocol = \"feature_sweep\"\nseed = 1\nbogus = 3\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
        let text = "protocol = \"feature_sweep\"\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err(), "seed must be explicit");
        let text = "protocol = \"subject_scaling\"\nseed = 1\nn_subjects = [100, 500]\nimpostor_policy = { policy = \"sampled\", count = 1000, seed = 2 }\n";
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(c.n_subjects.as_vec(), vec![100, 500]);
        assert_eq!(c.impostor_policy, Some(ImpostorPolicy::Sampled { count: 1000, seed: 2 }));
    }
}
