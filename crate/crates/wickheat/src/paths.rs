//! Heat kernel, initial data, and Brownian path samplers.

use crate::error::{invalid, Error, Result};
use crate::quadrature::tanh_sinh;
use crate::rng::{Rng, Seed};
use rand::Rng as _;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// p_t(x) on ℝ, without argument checks.
#[inline]
pub fn heat_kernel_1d(t: f64, x: f64) -> f64 {
    (-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// p_t(x) = (2πt)^{−d/2} e^{−|x|²/(2t)}.
pub fn heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("heat kernel needs t > 0, got {t}")));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((2.0 * PI * t).powf(-(x.len() as f64) / 2.0) * (-r2 / (2.0 * t)).exp())
}

type DatumFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum InitialDatum {
    Constant(f64),
    /// amplitude·exp(−|y|²/(2·width²))
    Gaussian { amplitude: f64, width: f64 },
    /// A bounded function with declared bounds lower ≤ u₀ ≤ upper.
    Function { f: DatumFn, lower: f64, upper: f64 },
}

impl fmt::Debug for InitialDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialDatum::Constant(c) => write!(f, "Constant({c})"),
            InitialDatum::Gaussian { amplitude, width } => {
                write!(f, "Gaussian {{ amplitude: {amplitude}, width: {width} }}")
            }
            InitialDatum::Function { lower, upper, .. } => write!(f, "Function {{ lower: {lower}, upper: {upper} }}"),
        }
    }
}

impl InitialDatum {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(invalid("constant initial datum must be positive"));
        }
        Ok(InitialDatum::Constant(c))
    }

    pub fn gaussian(amplitude: f64, width: f64) -> Result<Self> {
        if !(amplitude > 0.0 && width > 0.0) {
            return Err(invalid("Gaussian initial datum needs positive amplitude and width"));
        }
        Ok(InitialDatum::Gaussian { amplitude, width })
    }

    /// Wraps `f` after checking the declared bounds on a probe grid of [−10, 10]^d.
    pub fn function(f: DatumFn, lower: f64, upper: f64, d: usize) -> Result<Self> {
        if !(lower >= 0.0 && upper >= lower && upper.is_finite()) {
            return Err(invalid("declared bounds must satisfy 0 ≤ lower ≤ upper < ∞"));
        }
        let probes: Vec<f64> = (0..=40).map(|i| -10.0 + 0.5 * i as f64).collect();
        let mut point = vec![0.0; d];
        let total = probes.len().pow(d as u32);
        for idx in 0..total {
            let mut rest = idx;
            for p in point.iter_mut() {
                *p = probes[rest % probes.len()];
                rest /= probes.len();
            }
            let v = f(&point);
            if !(v >= lower && v <= upper) {
                return Err(invalid(format!("initial datum value {v} at {point:?} violates declared bounds")));
            }
        }
        Ok(InitialDatum::Function { f, lower, upper })
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            InitialDatum::Constant(c) => *c,
            InitialDatum::Gaussian { amplitude, width } => {
                let r2: f64 = y.iter().map(|v| v * v).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            InitialDatum::Function { f, .. } => f(y),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            InitialDatum::Constant(c) => (*c, *c),
            InitialDatum::Gaussian { amplitude, .. } => (0.0, *amplitude),
            InitialDatum::Function { lower, upper, .. } => (*lower, *upper),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, InitialDatum::Constant(_))
    }
}

/// (p_t ∗ u₀)(x).
pub fn heat_convolve(u0: &InitialDatum, t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("heat convolution needs t > 0, got {t}")));
    }
    match u0 {
        InitialDatum::Constant(c) => Ok(*c),
        InitialDatum::Gaussian { amplitude, width } => {
            let s2 = width * width;
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let d = x.len() as f64;
            Ok(amplitude * (s2 / (s2 + t)).powf(d / 2.0) * (-r2 / (2.0 * (s2 + t))).exp())
        }
        InitialDatum::Function { f, .. } => {
            if x.len() != 1 {
                return Err(Error::Unsupported("quadrature heat convolution is implemented for d = 1".into()));
            }
            let reach = 12.0 * t.sqrt();
            let x0 = x[0];
            let q = tanh_sinh(|y| heat_kernel_1d(t, x0 - y) * f(&[y]), x0 - reach, x0 + reach, 1e-10)?;
            Ok(q.value)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Brownian,
    /// Standard bridge on [0,1] from 0 to 0.
    Bridge,
}

/// n paths in ℝ^d on a uniform grid of `steps` intervals over [0,t], stored
/// path-major: node i of path p, axis a at `data[(p·(steps+1) + i)·d + a]`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub n: usize,
    pub d: usize,
    pub t: f64,
    pub steps: usize,
    pub start: Vec<f64>,
    pub kind: PathKind,
    pub seed: Option<u64>,
    pub data: Vec<f64>,
}

impl PathBundle {
    /// Paths frozen at `x` (deterministic test input).
    pub fn constant(n: usize, d: usize, t: f64, steps: usize, x: &[f64], kind: PathKind) -> Self {
        let mut data = Vec::with_capacity(n * (steps + 1) * d);
        for _ in 0..n * (steps + 1) {
            data.extend_from_slice(x);
        }
        PathBundle { n, d, t, steps, start: x.to_vec(), kind, seed: None, data }
    }

    pub fn h(&self) -> f64 {
        self.t / self.steps as f64
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let len = (self.steps + 1) * self.d;
        &self.data[p * len..(p + 1) * len]
    }

    pub fn node(&self, p: usize, i: usize) -> &[f64] {
        let base = (p * (self.steps + 1) + i) * self.d;
        &self.data[base..base + self.d]
    }

    /// Piecewise-linear evaluation at time s ∈ [0, t].
    pub fn eval(&self, p: usize, s: f64) -> Vec<f64> {
        let pos = (s / self.h()).clamp(0.0, self.steps as f64);
        let i = (pos.floor() as usize).min(self.steps - 1);
        let w = pos - i as f64;
        let a = self.node(p, i);
        let b = self.node(p, i + 1);
        a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect()
    }

    /// Sample variance of all increments against h = t/steps, as a z-score.
    pub fn increment_variance_z(&self) -> f64 {
        let h = self.h();
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in 0..self.n {
            for i in 0..self.steps {
                let a = self.node(p, i);
                let b = self.node(p, i + 1);
                for k in 0..self.d {
                    let inc = b[k] - a[k];
                    sum += inc * inc;
                    count += 1;
                }
            }
        }
        let var = sum / count as f64;
        let target = match self.kind {
            PathKind::Brownian => h,
            // bridge increments have variance h(1 − h)
            PathKind::Bridge => h * (1.0 - h),
        };
        let se = target * (2.0 / count as f64).sqrt();
        (var - target) / se
    }
}

/// Writes one Brownian path started at `x` into `out` (length (steps+1)·d).
#[inline]
pub fn fill_bm(rng: &mut Rng, d: usize, steps: usize, h: f64, x: &[f64], out: &mut [f64]) {
    let sd = h.sqrt();
    out[..d].copy_from_slice(x);
    for i in 1..=steps {
        for a in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            out[i * d + a] = out[(i - 1) * d + a] + sd * z;
        }
    }
}

/// Writes one standard bridge on [0,1] (B_s − s·B₁) into `out`.
#[inline]
pub fn fill_bridge(rng: &mut Rng, d: usize, steps: usize, out: &mut [f64]) {
    let h = 1.0 / steps as f64;
    fill_bm(rng, d, steps, h, &vec![0.0; d], out);
    for a in 0..d {
        let end = out[steps * d + a];
        for i in 0..=steps {
            out[i * d + a] -= (i as f64 * h) * end;
        }
        out[steps * d + a] = 0.0;
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps < 2 {
        return Err(invalid("paths need at least 2 steps"));
    }
    Ok(())
}

fn sanity(bundle: PathBundle) -> Result<PathBundle> {
    let z = bundle.increment_variance_z();
    if z.abs() > 5.0 {
        return Err(Error::InvalidParameter(format!("increment variance check failed (z = {z:.2})")));
    }
    Ok(bundle)
}

pub fn sample_bm(n: usize, d: usize, t: f64, steps: usize, x: &[f64], seed: Seed) -> Result<PathBundle> {
    check_steps(steps)?;
    if !(t > 0.0) || x.len() != d {
        return Err(invalid("Brownian bundle needs t > 0 and a start point of dimension d"));
    }
    let len = (steps + 1) * d;
    let mut data = vec![0.0; n * len];
    let mut rng = seed.rng();
    let h = t / steps as f64;
    for p in 0..n {
        fill_bm(&mut rng, d, steps, h, x, &mut data[p * len..(p + 1) * len]);
    }
    sanity(PathBundle { n, d, t, steps, start: x.to_vec(), kind: PathKind::Brownian, seed: Some(seed.0), data })
}

pub fn sample_bridge(n: usize, d: usize, steps: usize, seed: Seed) -> Result<PathBundle> {
    check_steps(steps)?;
    let len = (steps + 1) * d;
    let mut data = vec![0.0; n * len];
    let mut rng = seed.rng();
    for p in 0..n {
        fill_bridge(&mut rng, d, steps, &mut data[p * len..(p + 1) * len]);
    }
    sanity(PathBundle { n, d, t: 1.0, steps, start: vec![0.0; d], kind: PathKind::Bridge, seed: Some(seed.0), data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_kernel_normalization() {
        assert!((heat_kernel(1.0 / (2.0 * PI), &[0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(heat_kernel(0.0, &[0.0]).is_err());
        let q = tanh_sinh(|x| heat_kernel_1d(0.7, x), -20.0, 20.0, 1e-12).unwrap();
        assert!((q.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn semigroup() {
        for &x in &[0.0, 1.0] {
            let q = tanh_sinh(|y| heat_kernel_1d(1.0, x - y) * heat_kernel_1d(1.0, y), -20.0, 20.0, 1e-12).unwrap();
            assert!((q.value - heat_kernel_1d(2.0, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn convolve_constant_and_gaussian() {
        let one = InitialDatum::constant(1.0).unwrap();
        assert_eq!(heat_convolve(&one, 0.3, &[1.5]).unwrap(), 1.0);
        let g = InitialDatum::gaussian(1.0, 1.0).unwrap();
        assert!((heat_convolve(&g, 1.0, &[0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let f = InitialDatum::function(Arc::new(|y: &[f64]| (-y[0] * y[0] / 2.0).exp()), 0.0, 1.0, 1).unwrap();
        for &(t, x) in &[(1.0, 0.0), (0.3, 0.8)] {
            let a = heat_convolve(&f, t, &[x]).unwrap();
            let b = heat_convolve(&g, t, &[x]).unwrap();
            assert!((a - b).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn declared_bounds_are_checked() {
        assert!(InitialDatum::function(Arc::new(|_: &[f64]| 2.0), 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn bm_endpoint_variance() {
        let t = 0.7;
        let b = sample_bm(10_000, 2, t, 8, &[0.5, -1.0], Seed(3)).unwrap();
        for a in 0..2 {
            let xs: Vec<f64> = (0..b.n).map(|p| b.node(p, b.steps)[a] - b.start[a]).collect();
            let v = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
            let se = t * (2.0 / xs.len() as f64).sqrt();
            assert!((v - t).abs() < 3.0 * se, "axis {a}: {v}");
        }
        assert_eq!(b.node(17, 0), &[0.5, -1.0]);
    }

    #[test]
    fn bridge_pins_and_variance() {
        let b = sample_bridge(10_000, 1, 8, Seed(4)).unwrap();
        for p in 0..b.n {
            assert_eq!(b.node(p, 8)[0], 0.0);
            assert_eq!(b.node(p, 0)[0], 0.0);
        }
        for &(i, s) in &[(2usize, 0.25), (4, 0.5)] {
            let v = (0..b.n).map(|p| b.node(p, i)[0].powi(2)).sum::<f64>() / b.n as f64;
            let target: f64 = s * (1.0 - s);
            let se = target * (2.0 / b.n as f64).sqrt();
            assert!((v - target).abs() < 3.0 * se);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = sample_bm(3, 1, 1.0, 4, &[0.0], Seed(9)).unwrap();
        let b = sample_bm(3, 1, 1.0, 4, &[0.0], Seed(9)).unwrap();
        assert_eq!(a.data, b.data);
    }
}
