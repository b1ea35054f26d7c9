//! Session-paired synthetic features and ICC-banded database assembly.
//!
//! One feature for `n` subjects is generated as
//!
//! ```text
//! base_i     ~ N(0, 1)
//! session1_i = base_i + mult * N(0, 1)
//! session2_i = base_i + mult * N(0, 1)
//! ```
//!
//! and the pooled `2n` values are then z-scored. The model ICC is
//! `1 / (1 + mult^2)`. Deviates are drawn in that order (all bases, then all
//! session-1 noise, then all session-2 noise) from the feature's own stream.

use rand::{Rng, RngExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reliability::icc_two_sessions;
use crate::rng::{standard_normal, RngStream};
use crate::stats::{self, CompensatedSum};

pub const N_SESSIONS: usize = 2;

/// Grid spacing of the noise multiplier, in hundredths.
const MULT_GRID_PER_UNIT: f64 = 100.0;

pub const DEFAULT_MAX_ATTEMPTS_PER_FEATURE: u32 = 50;

/// Upper bound on attempts generated per parallel batch. Part of the
/// reproducibility contract: changing it changes which attempts are drawn.
const MAX_BATCH: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Band1,
    Band2,
    Band3,
    Band4,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Band1, Band::Band2, Band::Band3, Band::Band4];

    /// 1-based band number.
    pub fn number(self) -> u8 {
        match self {
            Band::Band1 => 1,
            Band::Band2 => 2,
            Band::Band3 => 3,
            Band::Band4 => 4,
        }
    }

    pub fn from_number(number: u8) -> Option<Band> {
        Band::ALL.get(usize::from(number).checked_sub(1)?).copied()
    }

    /// Target ICC interval `[low, high)` (closed at 0.9 for band 4).
    pub fn icc_interval(self) -> (f64, f64) {
        match self {
            Band::Band1 => (0.1, 0.3),
            Band::Band2 => (0.3, 0.5),
            Band::Band3 => (0.5, 0.7),
            Band::Band4 => (0.7, 0.9),
        }
    }

    /// Multiplier range that lands features in this band.
    pub fn mult_range(self) -> (f64, f64) {
        match self {
            Band::Band1 => (1.4, 2.8),
            Band::Band2 => (0.9, 1.7),
            Band::Band3 => (0.6, 1.0),
            Band::Band4 => (0.3, 0.7),
        }
    }

    /// The default band whose ICC interval contains `icc`, if any.
    pub fn for_icc(icc: f64) -> Option<Band> {
        Band::ALL
            .into_iter()
            .find(|&b| BandSpec::default_for(b, 0).contains(icc))
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "band{}", self.number())
    }
}

impl std::str::FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("band");
        digits
            .parse::<u8>()
            .ok()
            .and_then(Band::from_number)
            .ok_or_else(|| Error::Config(format!("unknown band {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub band: Band,
    pub icc_low: f64,
    pub icc_high: f64,
    pub mult_low: f64,
    pub mult_high: f64,
    pub quota: usize,
}

impl BandSpec {
    pub fn default_for(band: Band, quota: usize) -> Self {
        let (icc_low, icc_high) = band.icc_interval();
        let (mult_low, mult_high) = band.mult_range();
        Self {
            band,
            icc_low,
            icc_high,
            mult_low,
            mult_high,
            quota,
        }
    }

    /// The four default bands with the given quotas.
    pub fn defaults(quotas: [usize; 4]) -> Vec<BandSpec> {
        Band::ALL
            .into_iter()
            .zip(quotas)
            .map(|(band, quota)| BandSpec::default_for(band, quota))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.icc_low.is_nan() || self.icc_high.is_nan() || self.icc_low >= self.icc_high {
            return Err(Error::Config(format!(
                "{}: icc_low {} must be below icc_high {}",
                self.band, self.icc_low, self.icc_high
            )));
        }
        if !(self.mult_low >= 0.0 && self.mult_low <= self.mult_high) {
            return Err(Error::Config(format!(
                "{}: invalid mult range [{}, {}]",
                self.band, self.mult_low, self.mult_high
            )));
        }
        self.mult_grid().map(|_| ())
    }

    /// Interval membership; half-open except band 4, which includes its upper end.
    pub fn contains(&self, icc: f64) -> bool {
        icc >= self.icc_low
            && (icc < self.icc_high || (self.band == Band::Band4 && icc <= self.icc_high))
    }

    /// Inclusive range of grid points, in hundredths.
    fn mult_grid(&self) -> Result<(i64, i64)> {
        let first = (self.mult_low * MULT_GRID_PER_UNIT - 1e-9).ceil() as i64;
        let last = (self.mult_high * MULT_GRID_PER_UNIT + 1e-9).floor() as i64;
        if last < first {
            return Err(Error::Config(format!(
                "{}: mult range [{}, {}] contains no 0.01 grid point",
                self.band, self.mult_low, self.mult_high
            )));
        }
        Ok((first, last))
    }

    /// Whether `mult` is one of this spec's grid points.
    pub fn on_mult_grid(&self, mult: f64) -> bool {
        let Ok((first, last)) = self.mult_grid() else {
            return false;
        };
        let hundredths = (mult * MULT_GRID_PER_UNIT).round();
        (hundredths / MULT_GRID_PER_UNIT - mult).abs() < 1e-12
            && (first..=last).contains(&(hundredths as i64))
    }
}

/// Draws a multiplier uniformly from the band's inclusive 0.01 grid.
pub fn sample_mult<R: Rng + ?Sized>(spec: &BandSpec, rng: &mut R) -> Result<f64> {
    let (first, last) = spec.mult_grid()?;
    let k = rng.random_range(first..=last);
    Ok(k as f64 / MULT_GRID_PER_UNIT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePair {
    pub session1: Vec<f64>,
    pub session2: Vec<f64>,
    pub mult: f64,
}

impl FeaturePair {
    pub fn new(session1: Vec<f64>, session2: Vec<f64>, mult: f64) -> Result<Self> {
        if session1.len() != session2.len() {
            return Err(Error::InvalidInput(format!(
                "session lengths differ: {} vs {}",
                session1.len(),
                session2.len()
            )));
        }
        if session1.len() < 2 {
            return Err(Error::InvalidInput("a feature needs at least 2 subjects".into()));
        }
        stats::ensure_finite(&session1, "session 1")?;
        stats::ensure_finite(&session2, "session 2")?;
        Ok(Self {
            session1,
            session2,
            mult,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.session1.len()
    }

    pub fn session(&self, session: usize) -> &[f64] {
        match session {
            0 => &self.session1,
            1 => &self.session2,
            _ => panic!("session index {session} out of range"),
        }
    }

    /// Z-scores the pooled `2n` values in place.
    pub fn standardize(&mut self) -> Result<()> {
        let n = self.session1.len();
        let mut pooled = Vec::with_capacity(2 * n);
        pooled.extend_from_slice(&self.session1);
        pooled.extend_from_slice(&self.session2);
        let z = zscore(&pooled)?;
        self.session1.copy_from_slice(&z[..n]);
        self.session2.copy_from_slice(&z[n..]);
        Ok(())
    }

    /// Pooled mean and sample SD over both sessions.
    pub fn pooled_moments(&self) -> (f64, f64) {
        let pooled: Vec<f64> = self.session1.iter().chain(&self.session2).copied().collect();
        (stats::mean(&pooled), stats::sample_sd(&pooled))
    }
}

/// Generates one session-paired feature for `n` subjects and z-scores it.
pub fn generate_feature_pair<R: Rng + ?Sized>(n: usize, mult: f64, rng: &mut R) -> Result<FeaturePair> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need n >= 2 subjects, got {n}")));
    }
    if !(mult >= 0.0 && mult.is_finite()) {
        return Err(Error::InvalidInput(format!("mult must be finite and >= 0, got {mult}")));
    }
    let base: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
    let mut session1 = base.clone();
    let mut session2 = base;
    for x in session1.iter_mut() {
        *x += standard_normal(rng) * mult;
    }
    for x in session2.iter_mut() {
        *x += standard_normal(rng) * mult;
    }
    let mut pair = FeaturePair {
        session1,
        session2,
        mult,
    };
    pair.standardize()?;
    Ok(pair)
}

/// Standardises to mean 0 and sample SD 1.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::InvalidInput("z-score needs at least 2 values".into()));
    }
    stats::ensure_finite(values, "z-score input")?;
    let mean = stats::mean(values);
    let mut ss = CompensatedSum::new();
    for &v in values {
        ss.add((v - mean) * (v - mean));
    }
    let sd = (ss.value() / (values.len() - 1) as f64).sqrt();
    if sd.is_nan() || sd <= 1e-12 {
        return Err(Error::Degenerate(format!("standard deviation {sd:e} is numerically zero")));
    }
    Ok(values.iter().map(|&v| (v - mean) / sd).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub mult: f64,
    pub achieved_icc: f64,
    /// Band whose interval contains `achieved_icc`; `None` only for
    /// databases built from external columns.
    pub band: Option<Band>,
    pub feature_index: usize,
}

/// How a database was generated; echoed into its sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub bands: Vec<BandSpec>,
    pub max_attempts_per_feature: u32,
    /// Attempts consumed, including discarded ones.
    pub attempts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatabase {
    pub n_subjects: usize,
    /// Feature-major storage: `features[f].session(s)[subject]`.
    pub features: Vec<FeaturePair>,
    pub meta: Vec<FeatureMeta>,
    pub master_seed: u64,
    pub generation: Option<GenerationConfig>,
}

impl SyntheticDatabase {
    /// Wraps externally supplied columns, computing ICC metadata for each.
    pub fn from_features(n_subjects: usize, features: Vec<FeaturePair>) -> Result<Self> {
        let mut meta = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if f.n_subjects() != n_subjects {
                return Err(Error::InvalidInput(format!(
                    "feature {i} has {} subjects, expected {n_subjects}",
                    f.n_subjects()
                )));
            }
            let est = icc_two_sessions(&f.session1, &f.session2)?;
            meta.push(FeatureMeta {
                mult: f.mult,
                achieved_icc: est.icc,
                band: Band::for_icc(est.icc),
                feature_index: i,
            });
        }
        Ok(Self {
            n_subjects,
            features,
            meta,
            master_seed: 0,
            generation: None,
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_sessions(&self) -> usize {
        N_SESSIONS
    }

    /// Value for 0-based `subject`, `session` and `feature`.
    pub fn value(&self, subject: usize, session: usize, feature: usize) -> f64 {
        self.features[feature].session(session)[subject]
    }

    /// Feature vector of one subject in one session over `indices`.
    pub fn subject_vector(&self, subject: usize, session: usize, indices: &[usize]) -> Vec<f64> {
        indices
            .iter()
            .map(|&f| self.value(subject, session, f))
            .collect()
    }

    /// Checks the pooled z-score contract on every feature; returns the worst
    /// deviation of (mean, SD - 1) seen.
    pub fn zscore_deviation(&self) -> f64 {
        self.features
            .iter()
            .map(|f| {
                let (m, sd) = f.pooled_moments();
                m.abs().max((sd - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Assembles a database whose features fill per-band quotas, binning each
/// candidate by its achieved ICC.
///
/// Attempt `a` draws from stream `(seed, a)`. Attempts are generated in
/// batches whose size depends only on the remaining quota, and accepted in
/// attempt order, so the output does not depend on the worker count.
pub fn assemble_banded_db(
    n: usize,
    specs: &[BandSpec],
    seed: u64,
    max_attempts_per_feature: u32,
) -> Result<SyntheticDatabase> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need n >= 2 subjects, got {n}")));
    }
    if max_attempts_per_feature == 0 {
        return Err(Error::Config("max_attempts_per_feature must be positive".into()));
    }
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        if specs[..i].iter().any(|s| s.band == spec.band) {
            return Err(Error::Config(format!("{} specified twice", spec.band)));
        }
    }

    let total: usize = specs.iter().map(|s| s.quota).sum();
    let limit = total as u64 * u64::from(max_attempts_per_feature);
    let mut accepted = vec![0usize; specs.len()];
    let mut features = Vec::with_capacity(total);
    let mut meta = Vec::with_capacity(total);
    let mut attempt: u64 = 0;

    while features.len() < total {
        let unmet: Vec<usize> = (0..specs.len())
            .filter(|&i| accepted[i] < specs[i].quota)
            .collect();
        let remaining = (total - features.len()) as u64;
        let batch = (2 * remaining).clamp(8, MAX_BATCH).min(limit - attempt);
        if batch == 0 {
            return Err(quota_error(attempt, specs, &accepted));
        }

        let candidates: Vec<Result<(FeaturePair, f64)>> = (attempt..attempt + batch)
            .into_par_iter()
            .map(|a| {
                let spec = &specs[unmet[(a % unmet.len() as u64) as usize]];
                let mut rng = RngStream::new(seed, a).rng();
                let mult = sample_mult(spec, &mut rng)?;
                let pair = generate_feature_pair(n, mult, &mut rng)?;
                let est = icc_two_sessions(&pair.session1, &pair.session2)?;
                Ok((pair, est.icc))
            })
            .collect();

        for candidate in candidates {
            attempt += 1;
            let (pair, icc) = candidate?;
            let Some(slot) = specs.iter().position(|s| s.contains(icc)) else {
                continue;
            };
            if accepted[slot] >= specs[slot].quota {
                continue;
            }
            accepted[slot] += 1;
            meta.push(FeatureMeta {
                mult: pair.mult,
                achieved_icc: icc,
                band: Some(specs[slot].band),
                feature_index: features.len(),
            });
            features.push(pair);
            if features.len() == total {
                break;
            }
        }
    }

    log::debug!(
        "assembled {} features for {n} subjects in {attempt} attempts",
        features.len()
    );
    Ok(SyntheticDatabase {
        n_subjects: n,
        features,
        meta,
        master_seed: seed,
        generation: Some(GenerationConfig {
            bands: specs.to_vec(),
            max_attempts_per_feature,
            attempts: attempt,
        }),
    })
}

fn quota_error(attempts: u64, specs: &[BandSpec], accepted: &[usize]) -> Error {
    let shortfall = specs
        .iter()
        .zip(accepted)
        .filter(|(s, &a)| a < s.quota)
        .map(|(s, &a)| format!("{} {}/{} (short {})", s.band, a, s.quota, s.quota - a))
        .collect::<Vec<_>>()
        .join(", ");
    Error::QuotaUnreachable {
        attempts,
        shortfall,
    }
}
