//! Monte Carlo plumbing: estimate records, compensated and pairwise sums,
//! and an ordered parallel map whose output never depends on the number of
//! workers.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static WORKERS: AtomicUsize = AtomicUsize::new(0);

/// Sets the worker count used by [`par_map`]; 0 means one per available core.
pub fn set_workers(n: usize) {
    WORKERS.store(n, Ordering::Relaxed);
}

pub fn workers() -> usize {
    match WORKERS.load(Ordering::Relaxed) {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
}

/// `(0..n).map(f)` evaluated on the worker pool; results come back in index
/// order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let w = workers();
    if w <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

/// Fallible variant of [`par_map`]; the first error in index order wins.
pub fn try_par_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    par_map(n, f).into_iter().collect()
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }

    /// Multiplies the accumulated value by `k`.
    pub fn scale(&mut self, k: f64) {
        self.sum *= k;
        self.comp *= k;
    }
}

/// Sum by a fixed binary tree over the index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Unbiased sample variance and an approximate standard error for it.
pub fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n < 2 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = pairwise_sum(xs) / nf;
    let d2: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let d4: Vec<f64> = d2.iter().map(|v| v * v).collect();
    let var = pairwise_sum(&d2) / (nf - 1.0);
    let m2 = pairwise_sum(&d2) / nf;
    let m4 = pairwise_sum(&d4) / nf;
    let se = ((m4 - (nf - 3.0) / (nf - 1.0) * m2 * m2) / nf).max(0.0).sqrt();
    (var, se)
}

/// A Monte Carlo estimate with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
    pub seed: u64,
    pub params: serde_json::Value,
}

impl EstimateRecord {
    pub fn from_samples(xs: &[f64], seed: u64, params: serde_json::Value) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let (mean, se) = mean_se(xs);
        Ok(EstimateRecord {
            mean,
            se: if se.is_nan() { 0.0 } else { se },
            samples: xs.len(),
            seed,
            params,
        })
    }

    /// A value known exactly (SE 0), e.g. a degenerate parameter point.
    pub fn exact(value: f64, samples: usize, seed: u64, params: serde_json::Value) -> Self {
        EstimateRecord {
            mean: value,
            se: 0.0,
            samples,
            seed,
            params,
        }
    }

    /// |mean − target| ≤ k·SE (exact records compare with a 1e-12 slack).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + 1e-12
    }

    /// Whether the k-SE intervals of two estimates overlap.
    pub fn overlaps(&self, other: &EstimateRecord, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * (self.se + other.se)
    }
}

/// Ordinary least squares y ≈ a + b·x, optionally weighted. Returns
/// (intercept, slope, residuals).
pub fn least_squares(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Result<(f64, f64, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: x.len(),
        });
    }
    let ones = vec![1.0; x.len()];
    let w = w.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (a - mx) * (c - my))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid = x
        .iter()
        .zip(y)
        .map(|(a, c)| c - (intercept + slope * a))
        .collect();
    Ok((intercept, slope, resid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_cancellation() {
        let mut k = KahanSum::new();
        let mut naive = 0.0;
        for x in [1e16, 1.0, -1e16, 1.0] {
            k.add(x);
            naive += x;
        }
        assert_eq!(k.value(), 2.0);
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn par_map_is_ordered_and_worker_independent() {
        let f = |i: usize| (i as f64).sqrt().sin();
        set_workers(1);
        let a = par_map(1000, f);
        set_workers(3);
        let b = par_map(1000, f);
        set_workers(0);
        assert_eq!(a, b);
        assert_eq!(a[10], f(10));
    }

    #[test]
    fn mean_se_and_variance() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = mean_se(&xs);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let (v, _) = variance_se(&xs);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn least_squares_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let (a, b, r) = least_squares(&x, &y, None).unwrap();
        assert!((a - 1.5).abs() < 1e-14 && (b + 2.0).abs() < 1e-14);
        assert!(r.iter().all(|e| e.abs() < 1e-14));
        assert!(least_squares(&[1.0, 1.0], &[0.0, 1.0], None).is_err());
    }
}
