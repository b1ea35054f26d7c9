//! Genuine/impostor scoring, the equal error rate, and feature intercorrelation.
//!
//! Similarities are "higher is more alike" for every metric: Euclidean and
//! Manhattan return the negated distance, cosine returns the cosine itself.
//!
//! The EER sweep uses `FRR(t) = #{genuine < t} / G` and
//! `FAR(t) = #{impostor >= t} / I` over the sorted union of scores (with
//! `-inf`/`+inf` sentinels). The EER is the first threshold where
//! `FAR <= FRR`, linearly interpolated against the previous threshold when
//! the two rates do not meet exactly. Under this rule `EER = 0` exactly when
//! every genuine score is strictly greater than every impostor score. The
//! EER stays within `[0, 0.5]` whenever genuine scores are not worse than
//! chance; fully inverted classes give values up to 1.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stats::{self, CompensatedSum};
use crate::synthgen::SyntheticDatabase;

/// Number of subjects from which impostor pairs are sampled by default.
pub const SAMPLED_IMPOSTOR_MIN_SUBJECTS: usize = 4000;
pub const DEFAULT_IMPOSTOR_CAP: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
    Cosine,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "manhattan" => Ok(Metric::Manhattan),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

/// Similarity of two feature vectors.
pub fn score_pair(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "vectors must have equal non-zero length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let pairs = a.iter().zip(b);
    Ok(match metric {
        Metric::Euclidean => {
            let mut acc = 0.0;
            for (&x, &y) in pairs {
                let d = x - y;
                acc += d * d;
            }
            -acc.sqrt()
        }
        Metric::Manhattan => {
            let mut acc = 0.0;
            for (&x, &y) in pairs {
                acc += (x - y).abs();
            }
            -acc
        }
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (&x, &y) in pairs {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            cosine(dot, na, nb)?
        }
    })
}

#[inline]
fn cosine(dot: f64, norm2_a: f64, norm2_b: f64) -> Result<f64> {
    if norm2_a == 0.0 || norm2_b == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok(dot / (norm2_a.sqrt() * norm2_b.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubset {
    indices: Vec<usize>,
}

impl FeatureSubset {
    pub fn new(indices: Vec<usize>, n_features: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("feature subset is empty".into()));
        }
        let mut seen = vec![false; n_features];
        for &i in &indices {
            match seen.get_mut(i) {
                None => {
                    return Err(Error::InvalidInput(format!(
                        "feature index {i} out of range (database has {n_features})"
                    )))
                }
                Some(true) => {
                    return Err(Error::InvalidInput(format!("feature index {i} repeated")))
                }
                Some(flag) => *flag = true,
            }
        }
        Ok(Self { indices })
    }

    /// All features of a database, in order.
    pub fn all(n_features: usize) -> Result<Self> {
        Self::new((0..n_features).collect(), n_features)
    }

    /// `count` distinct features drawn uniformly from `stream`.
    pub fn random(n_features: usize, count: usize, stream: RngStream) -> Result<Self> {
        if count > n_features {
            return Err(Error::Config(format!(
                "cannot draw {count} features from a pool of {n_features}"
            )));
        }
        let mut rng = stream.rng();
        Self::new(index::sample(&mut rng, n_features, count).into_vec(), n_features)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase", deny_unknown_fields)]
pub enum ImpostorPolicy {
    /// All `n (n - 1)` ordered pairs.
    #[default]
    Exhaustive,
    /// A uniform sample of ordered pairs, without replacement.
    Sampled { count: usize, seed: u64 },
}


impl ImpostorPolicy {
    /// Exhaustive below 4000 subjects, otherwise a capped sample.
    pub fn default_for(n_subjects: usize, seed: u64) -> Self {
        if n_subjects < SAMPLED_IMPOSTOR_MIN_SUBJECTS {
            ImpostorPolicy::Exhaustive
        } else {
            ImpostorPolicy::Sampled {
                count: DEFAULT_IMPOSTOR_CAP.min(n_subjects * (n_subjects - 1)),
                seed,
            }
        }
    }
}

/// Concrete impostor pairs `(session-1 subject, session-2 subject)`.
#[derive(Debug, Clone)]
enum PairPlan {
    Exhaustive { n: usize },
    Listed(Vec<(u32, u32)>),
}

impl PairPlan {
    fn new(n: usize, policy: &ImpostorPolicy) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 subjects, got {n}")));
        }
        match *policy {
            ImpostorPolicy::Exhaustive => Ok(PairPlan::Exhaustive { n }),
            ImpostorPolicy::Sampled { count, seed } => {
                let total = n * (n - 1);
                if count == 0 || count > total {
                    return Err(Error::Config(format!(
                        "impostor sample of {count} not in 1..={total} ordered pairs"
                    )));
                }
                let mut rng = RngStream::new(seed, n as u64).rng();
                let mut picks = index::sample(&mut rng, total, count).into_vec();
                picks.sort_unstable();
                let pairs = picks
                    .into_iter()
                    .map(|p| {
                        let i = p / (n - 1);
                        let r = p % (n - 1);
                        let j = if r >= i { r + 1 } else { r };
                        (i as u32, j as u32)
                    })
                    .collect();
                Ok(PairPlan::Listed(pairs))
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            PairPlan::Exhaustive { n } => n * (n - 1),
            PairPlan::Listed(p) => p.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub metric: Metric,
}

/// Scores session 1 against session 2 over a feature subset.
///
/// Genuine scores are in subject order; impostor scores are in
/// `(i, j)` row-major order, skipping `i == j`.
pub fn score_database(
    db: &SyntheticDatabase,
    subset: &FeatureSubset,
    metric: Metric,
    impostor_policy: &ImpostorPolicy,
) -> Result<ScoreSet> {
    FeatureSubset::new(subset.indices.clone(), db.n_features())?;
    let n = db.n_subjects;
    let plan = PairPlan::new(n, impostor_policy)?;
    let probes: Vec<Vec<f64>> = (0..n).map(|i| db.subject_vector(i, 0, subset.indices())).collect();
    let gallery: Vec<Vec<f64>> = (0..n).map(|i| db.subject_vector(i, 1, subset.indices())).collect();

    let genuine = (0..n)
        .map(|i| score_pair(&probes[i], &gallery[i], metric))
        .collect::<Result<Vec<_>>>()?;
    let impostor = match &plan {
        PairPlan::Exhaustive { n } => (0..*n)
            .into_par_iter()
            .map(|i| {
                (0..*n)
                    .filter(|&j| j != i)
                    .map(|j| score_pair(&probes[i], &gallery[j], metric))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .concat(),
        PairPlan::Listed(pairs) => pairs
            .par_iter()
            .map(|&(i, j)| score_pair(&probes[i as usize], &gallery[j as usize], metric))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ScoreSet {
        genuine,
        impostor,
        metric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub eer: f64,
    pub threshold_at_eer: f64,
    pub genuine_median: f64,
    pub genuine_iqr: f64,
    pub impostor_median: f64,
    pub impostor_iqr: f64,
}

/// Equal error rate plus median/IQR of both score classes.
pub fn eer(scores: &ScoreSet) -> Result<EvalResult> {
    let crossing = eer_crossing_checked(&scores.genuine, &scores.impostor)?;
    let (genuine_median, genuine_iqr) = stats::median_iqr(&scores.genuine);
    let (impostor_median, impostor_iqr) = stats::median_iqr(&scores.impostor);
    Ok(EvalResult {
        eer: crossing.eer,
        threshold_at_eer: crossing.threshold,
        genuine_median,
        genuine_iqr,
        impostor_median,
        impostor_iqr,
    })
}

/// EER and threshold of raw genuine/impostor samples.
pub fn eer_of(genuine: &[f64], impostor: &[f64]) -> Result<(f64, f64)> {
    let c = eer_crossing_checked(genuine, impostor)?;
    Ok((c.eer, c.threshold))
}

fn eer_crossing_checked(genuine: &[f64], impostor: &[f64]) -> Result<Crossing> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InvalidInput(format!(
            "EER needs both classes, got {} genuine and {} impostor scores",
            genuine.len(),
            impostor.len()
        )));
    }
    stats::ensure_finite(genuine, "genuine scores")?;
    stats::ensure_finite(impostor, "impostor scores")?;
    let mut sorted = genuine.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(eer_crossing(&sorted, impostor.iter().copied(), &mut Vec::new()))
}

#[derive(Debug, Clone, Copy)]
struct Crossing {
    eer: f64,
    threshold: f64,
}

/// Below this many bracketed impostors the sweep finishes by sorting.
const SWEEP_CUTOFF: usize = 32;

/// Exact FAR/FRR crossing in expected linear time.
///
/// `genuine` must be sorted ascending and non-empty, impostors non-empty and
/// finite. One streaming pass keeps only impostors above the weakest genuine
/// score; a quickselect-style bisection then narrows the bracket
/// `(lo, hi)` around the crossing, and the few thresholds left inside it are
/// swept directly.
fn eer_crossing(
    genuine: &[f64],
    impostors: impl IntoIterator<Item = f64>,
    scratch: &mut Vec<f64>,
) -> Crossing {
    let g_min = genuine[0];
    scratch.clear();
    let mut i_count: u64 = 0;
    let mut ge_min: u64 = 0;
    for s in impostors {
        i_count += 1;
        if s >= g_min {
            ge_min += 1;
            if s > g_min {
                scratch.push(s);
            }
        }
    }
    crossing_from_anchor(genuine, i_count, ge_min, scratch)
}

/// Second stage of [`eer_crossing`]: `i_count` impostors in total, `ge_min`
/// of them at or above `genuine[0]`, and `scratch` holding exactly those
/// strictly above it.
fn crossing_from_anchor(genuine: &[f64], i_count: u64, ge_min: u64, scratch: &mut [f64]) -> Crossing {
    let g_total = genuine.len() as u128;
    let g_min = genuine[0];
    assert!(i_count > 0, "no impostor scores");
    if ge_min == 0 {
        return Crossing {
            eer: 0.0,
            threshold: g_min,
        };
    }
    let i_total = i_count as u128;
    let frr_count = |t: f64| genuine.partition_point(|&g| g < t) as u128;
    // FAR(t) <= FRR(t), compared exactly on integer counts.
    let at_or_past = |ge: u128, t: f64| ge * g_total <= frr_count(t) * i_total;

    // Invariant: scratch[start..end] holds exactly the impostors in (lo, hi),
    // FAR(lo) > FRR(lo), FAR(hi) <= FRR(hi), `above` = #impostors >= hi.
    let mut lo = g_min;
    let mut lo_ge = u128::from(ge_min);
    let mut hi = f64::INFINITY;
    let mut above: u128 = 0;
    let (mut start, mut end) = (0, scratch.len());
    while end - start > SWEEP_CUTOFF {
        let cand = &mut scratch[start..end];
        let len = cand.len();
        let pivot = median_of_three(cand[0], cand[len / 2], cand[len - 1]);
        let (lt, gt) = partition3(cand, pivot);
        let ge = above + (len - lt) as u128;
        if at_or_past(ge, pivot) {
            hi = pivot;
            above = ge;
            end = start + lt;
        } else {
            lo = pivot;
            lo_ge = ge;
            start += gt;
        }
    }

    let cand = &mut scratch[start..end];
    cand.sort_unstable_by(f64::total_cmp);
    let cand: &[f64] = cand;
    let gen_inside = &genuine[genuine.partition_point(|&g| g <= lo)..genuine.partition_point(|&g| g < hi)];

    let far = |ge: u128| ge as f64 / i_total as f64;
    let frr = |t: f64| frr_count(t) as f64 / g_total as f64;
    let (mut prev_t, mut prev_far, mut prev_frr) = (lo, far(lo_ge), frr(lo));
    let (mut ci, mut gi) = (0, 0);
    loop {
        let t = match (cand.get(ci), gen_inside.get(gi)) {
            (Some(&c), Some(&g)) => c.min(g),
            (Some(&c), None) => c,
            (None, Some(&g)) => g,
            (None, None) => hi,
        };
        while cand.get(ci) == Some(&t) {
            ci += 1;
        }
        while gen_inside.get(gi) == Some(&t) {
            gi += 1;
        }
        let ge = above + (cand.len() - cand.partition_point(|&c| c < t)) as u128;
        if at_or_past(ge, t) {
            let (cur_far, cur_frr) = (far(ge), frr(t));
            if ge * g_total == frr_count(t) * i_total {
                return Crossing {
                    eer: cur_far,
                    threshold: t,
                };
            }
            let d0 = prev_far - prev_frr;
            let d1 = cur_far - cur_frr;
            let w = d0 / (d0 - d1);
            let threshold = if t.is_finite() {
                prev_t + w * (t - prev_t)
            } else {
                prev_t
            };
            return Crossing {
                eer: prev_far + w * (cur_far - prev_far),
                threshold,
            };
        }
        prev_t = t;
        prev_far = far(ge);
        prev_frr = frr(t);
    }
}

fn median_of_three(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Three-way partition around `pivot`: returns `(lt, gt)` with `[..lt] < pivot`,
/// `[lt..gt] == pivot` and `[gt..] > pivot`.
fn partition3(v: &mut [f64], pivot: f64) -> (usize, usize) {
    let (mut lt, mut i, mut gt) = (0, 0, v.len());
    while i < gt {
        let x = v[i];
        if x < pivot {
            v.swap(lt, i);
            lt += 1;
            i += 1;
        } else if x > pivot {
            gt -= 1;
            v.swap(i, gt);
        } else {
            i += 1;
        }
    }
    (lt, gt)
}

/// Scores nested feature subsets one feature at a time.
///
/// Holds per-pair accumulators, so adding the `c`-th feature costs one pass
/// over the pairs rather than `c`. Accumulation happens in the same order as
/// [`score_pair`], so after adding features `f1..fc` the scores are
/// bit-identical to [`score_database`] over the subset `[f1, .., fc]`.
pub struct IncrementalScorer<'a> {
    db: &'a SyntheticDatabase,
    metric: Metric,
    plan: PairPlan,
    /// Exhaustive: `n x n`, row = session-1 subject, column = session-2
    /// subject. Listed: `n` genuine entries followed by the listed pairs.
    acc: Vec<f64>,
    norm1: Vec<f64>,
    norm2: Vec<f64>,
    added: Vec<usize>,
    genuine: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> IncrementalScorer<'a> {
    pub fn new(db: &'a SyntheticDatabase, metric: Metric, impostor_policy: &ImpostorPolicy) -> Result<Self> {
        let n = db.n_subjects;
        let plan = PairPlan::new(n, impostor_policy)?;
        let acc_len = match &plan {
            PairPlan::Exhaustive { n } => n * n,
            PairPlan::Listed(p) => n + p.len(),
        };
        let norms = if metric == Metric::Cosine { n } else { 0 };
        Ok(Self {
            db,
            metric,
            plan,
            acc: vec![0.0; acc_len],
            norm1: vec![0.0; norms],
            norm2: vec![0.0; norms],
            added: Vec::new(),
            genuine: Vec::with_capacity(n),
            scratch: Vec::new(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.added.len()
    }

    pub fn n_impostors(&self) -> usize {
        self.plan.len()
    }

    pub fn add_feature(&mut self, feature: usize) -> Result<()> {
        if feature >= self.db.n_features() || self.added.contains(&feature) {
            return Err(Error::InvalidInput(format!(
                "feature {feature} out of range or already added"
            )));
        }
        let pair = &self.db.features[feature];
        let (s1, s2) = (&pair.session1[..], &pair.session2[..]);
        let metric = self.metric;
        match metric {
            Metric::Euclidean => self.accumulate(s1, s2, |a, b| (a - b) * (a - b)),
            Metric::Manhattan => self.accumulate(s1, s2, |a, b| (a - b).abs()),
            Metric::Cosine => self.accumulate(s1, s2, |a, b| a * b),
        }
        if metric == Metric::Cosine {
            for (acc, &a) in self.norm1.iter_mut().zip(s1) {
                *acc += a * a;
            }
            for (acc, &b) in self.norm2.iter_mut().zip(s2) {
                *acc += b * b;
            }
        }
        self.added.push(feature);
        Ok(())
    }

    fn accumulate(&mut self, s1: &[f64], s2: &[f64], term: impl Fn(f64, f64) -> f64 + Sync) {
        let n = s1.len();
        match &self.plan {
            PairPlan::Exhaustive { .. } => {
                self.acc
                    .par_chunks_mut(n)
                    .zip(s1.par_iter())
                    .for_each(|(row, &a)| {
                        for (cell, &b) in row.iter_mut().zip(s2) {
                            *cell += term(a, b);
                        }
                    });
            }
            PairPlan::Listed(pairs) => {
                let (gen, imp) = self.acc.split_at_mut(n);
                for (i, cell) in gen.iter_mut().enumerate() {
                    *cell += term(s1[i], s2[i]);
                }
                for (cell, &(i, j)) in imp.iter_mut().zip(pairs) {
                    *cell += term(s1[i as usize], s2[j as usize]);
                }
            }
        }
    }

    #[inline]
    fn similarity(&self, acc: f64, i: usize, j: usize) -> f64 {
        match self.metric {
            Metric::Euclidean => -acc.sqrt(),
            Metric::Manhattan => -acc,
            Metric::Cosine => acc / (self.norm1[i].sqrt() * self.norm2[j].sqrt()),
        }
    }

    fn check_ready(&self) -> Result<()> {
        if self.added.is_empty() {
            return Err(Error::InvalidInput("no features added".into()));
        }
        if self.metric == Metric::Cosine
            && self.norm1.iter().chain(&self.norm2).any(|&v| v == 0.0)
        {
            return Err(Error::UndefinedSimilarity);
        }
        Ok(())
    }

    fn genuine_entry(&self, i: usize) -> f64 {
        match &self.plan {
            PairPlan::Exhaustive { n } => self.acc[i * n + i],
            PairPlan::Listed(_) => self.acc[i],
        }
    }

    fn impostor_iter(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match &self.plan {
            PairPlan::Exhaustive { n } => {
                let n = *n;
                Box::new(self.acc.chunks_exact(n).enumerate().flat_map(move |(i, row)| {
                    row.iter()
                        .enumerate()
                        .filter(move |&(j, _)| j != i)
                        .map(move |(j, &a)| self.similarity(a, i, j))
                }))
            }
            PairPlan::Listed(pairs) => {
                let n = self.db.n_subjects;
                Box::new(
                    self.acc[n..]
                        .iter()
                        .zip(pairs)
                        .map(move |(&a, &(i, j))| self.similarity(a, i as usize, j as usize)),
                )
            }
        }
    }

    /// Anchor pass for the distance metrics straight off the accumulator.
    ///
    /// Scores are monotone in the accumulated distance, so only entries
    /// within a hair of the weakest genuine distance need a score at all.
    fn anchor_pass_distance(&self, n: usize, g_min: f64, scratch: &mut Vec<f64>) -> (u64, u64) {
        // -g_min is the largest genuine distance; the slack absorbs sqrt
        // rounding so no candidate is missed.
        let bound = match self.metric {
            Metric::Euclidean => g_min * g_min * (1.0 + 1e-12),
            _ => -g_min * (1.0 + 1e-12),
        };
        scratch.clear();
        let mut ge_min = 0;
        for (i, row) in self.acc.chunks_exact(n).enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if a <= bound && j != i {
                    let s = self.similarity(a, i, j);
                    if s >= g_min {
                        ge_min += 1;
                        if s > g_min {
                            scratch.push(s);
                        }
                    }
                }
            }
        }
        ((n * (n - 1)) as u64, ge_min)
    }

    /// Materialises the current scores.
    pub fn score_set(&self) -> Result<ScoreSet> {
        self.check_ready()?;
        let genuine = (0..self.db.n_subjects)
            .map(|i| self.similarity(self.genuine_entry(i), i, i))
            .collect();
        Ok(ScoreSet {
            genuine,
            impostor: self.impostor_iter().collect(),
            metric: self.metric,
        })
    }

    /// EER of the current subset without materialising the impostor scores.
    pub fn eer(&mut self) -> Result<f64> {
        self.check_ready()?;
        let mut genuine = std::mem::take(&mut self.genuine);
        genuine.clear();
        genuine.extend((0..self.db.n_subjects).map(|i| self.similarity(self.genuine_entry(i), i, i)));
        genuine.sort_unstable_by(f64::total_cmp);
        let mut scratch = std::mem::take(&mut self.scratch);
        let crossing = match (&self.plan, self.metric) {
            (PairPlan::Exhaustive { n }, Metric::Euclidean | Metric::Manhattan) => {
                let (i_count, ge_min) = self.anchor_pass_distance(*n, genuine[0], &mut scratch);
                crossing_from_anchor(&genuine, i_count, ge_min, &mut scratch)
            }
            _ => eer_crossing(&genuine, self.impostor_iter(), &mut scratch),
        };
        self.genuine = genuine;
        self.scratch = scratch;
        Ok(crossing.eer)
    }
}

/// Pearson product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "pearson_r needs equal lengths >= 3, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    stats::ensure_finite(x, "x")?;
    stats::ensure_finite(y, "y")?;
    let (mx, my) = (stats::mean(x), stats::mean(y));
    let (mut sxx, mut syy, mut sxy) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx.add(dx * dx);
        syy.add(dy * dy);
        sxy.add(dx * dy);
    }
    let dof = (x.len() - 1) as f64;
    if (sxx.value() / dof).sqrt() <= 1e-12 || (syy.value() / dof).sqrt() <= 1e-12 {
        return Err(Error::Degenerate("pearson_r input has zero variance".into()));
    }
    Ok((sxy.value() / (sxx.value().sqrt() * syy.value().sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionPolicy {
    /// Session-1 values only (`n` observations per feature).
    #[default]
    Session1,
    /// Both sessions stacked (`2n` observations per feature).
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrSummary {
    pub median_abs_r: f64,
    pub p95_abs_r: f64,
    pub n_pairs: u64,
    pub histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BINS: usize = 100;

/// Fixed-width histogram over `[0, 1]`; values of exactly 1 land in the last bin.
pub fn unit_histogram(values: impl IntoIterator<Item = f64>) -> Vec<HistogramBin> {
    let mut counts = [0u64; HISTOGRAM_BINS];
    for v in values {
        let bin = ((v * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            bin_low: i as f64 / HISTOGRAM_BINS as f64,
            bin_high: (i + 1) as f64 / HISTOGRAM_BINS as f64,
            count,
        })
        .collect()
}

/// |r| over all unordered feature pairs.
pub fn intercorr_summary(db: &SyntheticDatabase, session_policy: SessionPolicy) -> Result<CorrSummary> {
    let m = db.n_features();
    if m < 2 {
        return Err(Error::InvalidInput(format!("intercorrelation needs >= 2 features, got {m}")));
    }
    let samples: Vec<Vec<f64>> = db
        .features
        .iter()
        .map(|f| match session_policy {
            SessionPolicy::Session1 => f.session1.clone(),
            SessionPolicy::Pooled => [&f.session1[..], &f.session2[..]].concat(),
        })
        .collect();
    if samples[0].len() < 3 {
        return Err(Error::InvalidInput("intercorrelation needs >= 3 observations".into()));
    }
    // Centre and scale each column to unit length; r is then a dot product.
    let units = samples
        .iter()
        .enumerate()
        .map(|(f, x)| {
            let mean = stats::mean(x);
            let ss = stats::sum(x.iter().map(|&v| (v - mean) * (v - mean)));
            if (ss / (x.len() - 1) as f64).sqrt() <= 1e-12 {
                return Err(Error::Degenerate(format!("feature {f} has zero variance")));
            }
            let norm = ss.sqrt();
            Ok(x.iter().map(|&v| (v - mean) / norm).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut abs_r: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let units = &units;
            (i + 1..m).map(move |j| {
                let dot: f64 = units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum();
                dot.clamp(-1.0, 1.0).abs()
            })
        })
        .collect();
    let histogram = unit_histogram(abs_r.iter().copied());
    let n_pairs = abs_r.len() as u64;
    let median_abs_r = stats::quantile_in_place(&mut abs_r, 0.5);
    let p95_abs_r = stats::quantile_in_place(&mut abs_r, 0.95);
    Ok(CorrSummary {
        median_abs_r,
        p95_abs_r,
        n_pairs,
        histogram,
    })
}
