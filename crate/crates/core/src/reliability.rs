//! Two-way ANOVA mean squares and the intraclass correlation coefficient.
//!
//! For an `n x k` table (subjects by sessions) the ICC is
//!
//! ```text
//!            n (MS_subjects - MS_error)
//! ICC = ---------------------------------------------------------
//!       n MS_subjects + k MS_occasions + (n k - n - k) MS_error
//! ```
//!
//! which is the two-way random-effects, single-measure, absolute-agreement
//! form. Variance components are the usual method-of-moments estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub ms_subjects: f64,
    pub ms_occasions: f64,
    pub ms_error: f64,
    pub n: usize,
    pub k: usize,
    pub grand_mean: f64,
}

impl AnovaTable {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.k < 2 {
            return Err(Error::InvalidInput(format!(
                "ANOVA needs at least 2 subjects and 2 sessions, got {}x{}",
                self.n, self.k
            )));
        }
        for (name, ms) in [
            ("ms_subjects", self.ms_subjects),
            ("ms_occasions", self.ms_occasions),
            ("ms_error", self.ms_error),
        ] {
            if !ms.is_finite() || ms < 0.0 {
                return Err(Error::InvalidInput(format!("{name} = {ms} is not a finite non-negative mean square")));
            }
        }
        Ok(())
    }

    /// Sums of squares `(subjects, occasions, error)` implied by the mean squares.
    pub fn sums_of_squares(&self) -> (f64, f64, f64) {
        let (n, k) = (self.n as f64, self.k as f64);
        (
            self.ms_subjects * (n - 1.0),
            self.ms_occasions * (k - 1.0),
            self.ms_error * (n - 1.0) * (k - 1.0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_subject: f64,
    pub sigma2_occasion: f64,
    pub sigma2_error: f64,
}

impl VarianceComponents {
    /// Components with negative moment estimates replaced by zero.
    pub fn clipped(&self) -> Self {
        Self {
            sigma2_subject: self.sigma2_subject.max(0.0),
            sigma2_occasion: self.sigma2_occasion.max(0.0),
            sigma2_error: self.sigma2_error.max(0.0),
        }
    }

    pub fn total(&self) -> f64 {
        self.sigma2_subject + self.sigma2_occasion + self.sigma2_error
    }
}

/// Cicchetti's rule-of-thumb reliability classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReliabilityLabel {
    Excellent,
    Good,
    Fair,
    Poor,
}

impl std::fmt::Display for ReliabilityLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReliabilityLabel::Excellent => "excellent",
            ReliabilityLabel::Good => "good",
            ReliabilityLabel::Fair => "fair",
            ReliabilityLabel::Poor => "poor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccEstimate {
    /// ICC clamped to `[0, 1]`.
    pub icc: f64,
    /// ICC before clamping; negative when `MS_subjects < MS_error`.
    pub raw_icc: f64,
    pub anova: AnovaTable,
    pub label: ReliabilityLabel,
}

/// Mean squares of a complete `[subject][session]` table.
pub fn anova_mean_squares<R: AsRef<[f64]>>(data: &[R]) -> Result<AnovaTable> {
    let n = data.len();
    let k = data.first().map_or(0, |row| row.as_ref().len());
    if let Some((i, row)) = data
        .iter()
        .enumerate()
        .find(|(_, row)| row.as_ref().len() != k)
    {
        return Err(Error::InvalidInput(format!(
            "subject {i} has {} sessions, expected {k}",
            row.as_ref().len()
        )));
    }
    anova_from_fn(n, k, |i, j| data[i].as_ref()[j])
}

/// Mean squares for the two-session case, one slice per session.
pub fn anova_two_sessions(session1: &[f64], session2: &[f64]) -> Result<AnovaTable> {
    if session1.len() != session2.len() {
        return Err(Error::InvalidInput(format!(
            "session lengths differ: {} vs {}",
            session1.len(),
            session2.len()
        )));
    }
    anova_from_fn(session1.len(), 2, |i, j| {
        if j == 0 {
            session1[i]
        } else {
            session2[i]
        }
    })
}

fn anova_from_fn(n: usize, k: usize, cell: impl Fn(usize, usize) -> f64) -> Result<AnovaTable> {
    if n < 2 || k < 2 {
        return Err(Error::InvalidInput(format!(
            "ANOVA needs at least 2 subjects and 2 sessions, got {n}x{k}"
        )));
    }
    let mut grand = CompensatedSum::new();
    let mut col_sums = vec![CompensatedSum::new(); k];
    let mut row_means = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = CompensatedSum::new();
        for (j, col) in col_sums.iter_mut().enumerate() {
            let x = cell(i, j);
            if !x.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite value at subject {i}, session {j}"
                )));
            }
            row.add(x);
            col.add(x);
            grand.add(x);
        }
        row_means.push(row.value() / k as f64);
    }
    let grand_mean = grand.value() / (n * k) as f64;
    let col_means: Vec<f64> = col_sums.iter().map(|s| s.value() / n as f64).collect();

    let mut ss_subjects = CompensatedSum::new();
    for &m in &row_means {
        ss_subjects.add((m - grand_mean) * (m - grand_mean));
    }
    let mut ss_occasions = CompensatedSum::new();
    for &m in &col_means {
        ss_occasions.add((m - grand_mean) * (m - grand_mean));
    }
    let mut ss_error = CompensatedSum::new();
    for (i, &rm) in row_means.iter().enumerate() {
        for (j, &cm) in col_means.iter().enumerate() {
            let r = cell(i, j) - rm - cm + grand_mean;
            ss_error.add(r * r);
        }
    }

    let (nf, kf) = (n as f64, k as f64);
    Ok(AnovaTable {
        ms_subjects: kf * ss_subjects.value() / (nf - 1.0),
        ms_occasions: nf * ss_occasions.value() / (kf - 1.0),
        ms_error: ss_error.value() / ((nf - 1.0) * (kf - 1.0)),
        n,
        k,
        grand_mean,
    })
}

pub fn icc(anova: &AnovaTable) -> Result<IccEstimate> {
    anova.validate()?;
    let (n, k) = (anova.n as f64, anova.k as f64);
    let denominator =
        n * anova.ms_subjects + k * anova.ms_occasions + (n * k - n - k) * anova.ms_error;
    if denominator <= 0.0 {
        return Err(Error::Degenerate(
            "ICC denominator is zero (constant data)".into(),
        ));
    }
    let raw_icc = n * (anova.ms_subjects - anova.ms_error) / denominator;
    let icc = raw_icc.clamp(0.0, 1.0);
    Ok(IccEstimate {
        icc,
        raw_icc,
        anova: *anova,
        label: classify_reliability(icc)?,
    })
}

/// ICC of a two-session feature.
pub fn icc_two_sessions(session1: &[f64], session2: &[f64]) -> Result<IccEstimate> {
    icc(&anova_two_sessions(session1, session2)?)
}

pub fn variance_components(anova: &AnovaTable) -> Result<VarianceComponents> {
    anova.validate()?;
    let (n, k) = (anova.n as f64, anova.k as f64);
    Ok(VarianceComponents {
        sigma2_subject: (anova.ms_subjects - anova.ms_error) / k,
        sigma2_occasion: (anova.ms_occasions - anova.ms_error) / n,
        sigma2_error: anova.ms_error,
    })
}

pub fn classify_reliability(icc_value: f64) -> Result<ReliabilityLabel> {
    if !(0.0..=1.0).contains(&icc_value) {
        return Err(Error::InvalidInput(format!(
            "ICC {icc_value} outside [0, 1]"
        )));
    }
    Ok(if icc_value >= 0.75 {
        ReliabilityLabel::Excellent
    } else if icc_value >= 0.60 {
        ReliabilityLabel::Good
    } else if icc_value >= 0.40 {
        ReliabilityLabel::Fair
    } else {
        ReliabilityLabel::Poor
    })
}
