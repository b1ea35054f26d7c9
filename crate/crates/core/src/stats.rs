//! Small numeric helpers shared by the analysis modules.
//!
//! Quantiles follow the inclusive linear-interpolation convention
//! (Hyndman-Fan type 7, the default of R and NumPy): for sorted `x` of
//! length `N`, `q(p) = x[h] + (h - floor h) * (x[floor h + 1] - x[floor h])`
//! with `h = (N - 1) p`.

use crate::error::{Error, Result};

/// Neumaier-compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn mean(values: &[f64]) -> f64 {
    sum(values.iter().copied()) / values.len() as f64
}

/// Sample standard deviation (divisor `len - 1`), two-pass.
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss = sum(values.iter().map(|&v| (v - m) * (v - m)));
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile computed by partial selection; reorders `values`.
pub fn quantile_in_place(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let h = (values.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let (_, &mut lower, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let frac = h - lo as f64;
    if frac == 0.0 || upper.is_empty() {
        return lower;
    }
    let next = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lower + frac * (next - lower)
}

pub fn median(values: &[f64]) -> f64 {
    quantile_in_place(&mut values.to_vec(), 0.5)
}

/// Median and interquartile range of a sample.
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut scratch = values.to_vec();
    let q1 = quantile_in_place(&mut scratch, 0.25);
    let q2 = quantile_in_place(&mut scratch, 0.5);
    let q3 = quantile_in_place(&mut scratch, 0.75);
    (q2, q3 - q1)
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "{what}: non-finite value at index {i}"
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1e16, 1.0, -1e16];
        values.extend(std::iter::repeat_n(1.0, 10));
        assert_eq!(sum(values), 11.0);
    }

    #[test]
    fn type7_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.5), 2.5);
        assert_eq!(quantile_sorted(&x, 0.25), 1.75);
        assert_eq!(quantile_sorted(&x, 0.75), 3.25);
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
        let (m, iqr) = median_iqr(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(m, 2.5);
        assert_eq!(iqr, 1.5);
    }

    #[test]
    fn sample_sd_uses_n_minus_one() {
        assert!((sample_sd(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn selection_quantile_matches_sorted(
            mut xs in prop::collection::vec(-1e6f64..1e6, 1..200),
            p in 0.0f64..=1.0,
        ) {
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let expected = quantile_sorted(&sorted, p);
            prop_assert_eq!(quantile_in_place(&mut xs, p), expected);
        }

        #[test]
        fn quantiles_are_monotone(xs in prop::collection::vec(-1e3f64..1e3, 1..100)) {
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let qs: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&p| quantile_sorted(&sorted, p)).collect();
            for w in qs.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert_eq!(qs[0], sorted[0]);
            prop_assert_eq!(qs[4], *sorted.last().unwrap());
        }
    }
}
