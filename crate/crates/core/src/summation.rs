//! Reproducible compensated summation.
//!
//! Grid reductions are done row by row (possibly in parallel), each row with a
//! Neumaier accumulator, and the row partials are then folded in row order.
//! The result is independent of the worker count.

use rayon::prelude::*;

/// Neumaier variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    /// Fold another partial into this one.
    #[inline]
    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of a slice.
pub fn sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<NeumaierSum>().value()
}

/// Sum `row_fn(i)` over `rows`, evaluating rows in parallel but folding the
/// partials in ascending row order.
pub fn sum_rows<F>(rows: std::ops::Range<usize>, row_fn: F) -> f64
where
    F: Fn(usize) -> NeumaierSum + Sync + Send,
{
    let partials: Vec<NeumaierSum> = rows.into_par_iter().map(row_fn).collect();
    let mut total = NeumaierSum::new();
    for p in &partials {
        total.merge(p);
    }
    total.value()
}

/// Like [`sum_rows`] for several simultaneous integrands.
pub fn sum_rows_n<const N: usize, F>(rows: std::ops::Range<usize>, row_fn: F) -> [f64; N]
where
    F: Fn(usize) -> [NeumaierSum; N] + Sync + Send,
{
    let partials: Vec<[NeumaierSum; N]> = rows.into_par_iter().map(row_fn).collect();
    let mut total = [NeumaierSum::new(); N];
    for p in &partials {
        for (t, q) in total.iter_mut().zip(p.iter()) {
            t.merge(q);
        }
    }
    total.map(|t| t.value())
}

/// Grid maximum over rows, deterministic since `max` is order independent.
pub fn max_rows<F>(rows: std::ops::Range<usize>, row_fn: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    rows.into_par_iter()
        .map(row_fn)
        .reduce(|| 0.0_f64, f64::max)
}
