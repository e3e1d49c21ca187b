//! Small statistical helpers shared by the estimators.

use crate::rng::{Rng, Seed};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(value: f64, se: f64) -> Self {
        Estimate { value, se }
    }

    /// |a − b| ≤ k·√(se_a² + se_b²)
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.se.hypot(other.se)
    }
}

/// Streaming mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() };
        Estimate::new(self.mean, se)
    }
}

pub fn mean_se(xs: &[f64]) -> Estimate {
    let mut w = Welford::default();
    for &x in xs {
        w.push(x);
    }
    w.estimate()
}

/// Mean of `n` i.i.d. draws computed in parallel; draw i uses its own stream
/// `seed.index(i)` and the reduction runs in index order, so the result does
/// not depend on the thread count.
pub fn parallel_mean<F>(n: usize, seed: Seed, f: F) -> Estimate
where
    F: Fn(&mut Rng) -> f64 + Sync,
{
    let xs: Vec<f64> = (0..n as u64).into_par_iter().map(|i| f(&mut seed.index(i).rng())).collect();
    mean_se(&xs)
}

/// Parallel draws of several values per replicate, returned in index order.
pub fn parallel_draws<T, F>(n: usize, seed: Seed, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut Rng) -> T + Sync,
{
    (0..n as u64).into_par_iter().map(|i| f(&mut seed.index(i).rng())).collect()
}

/// Wilson score interval for k successes in n trials at `z` standard deviations.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    // The endpoints are exact at k = 0 and k = n; the formula only rounds to them.
    let low = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if k >= n { 1.0 } else { (centre + half).min(1.0) };
    (low, high)
}

/// Two-sided z for a central coverage level, e.g. 0.95 → 1.96.
pub fn z_for_coverage(coverage: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * coverage)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares y ≈ slope·x + intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    LinearFit { slope, intercept: my - slope * mx, r2 }
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let e = mean_se(&xs);
        assert!((e.value - 3.5).abs() < 1e-15);
        // variance 7, se √(7/4)
        assert!((e.se - (7.0f64 / 4.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn wilson_contains_point() {
        let (lo, hi) = wilson(5, 100, 1.96);
        assert!(lo < 0.05 && 0.05 < hi);
        assert_eq!(wilson(0, 10, 1.96).0, 0.0);
    }
}
