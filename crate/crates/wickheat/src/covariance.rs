//! Noise covariance γ₀(t−s)γ(x−y), its square-root factorization, the
//! mollified covariance Q_{ε,δ}, and pairwise path functionals Q⁽ⁿ⁾.

use crate::error::{invalid, Error, Result};
use crate::paths::{heat_kernel_1d, PathBundle};
use crate::quadrature::{tanh_sinh, tanh_sinh_split, tanh_sinh_to_infinity};
use statrs::function::gamma::gamma as gamma_fn;
use std::f64::consts::PI;

/// Relative tolerance of inner (mollifier) quadratures.
const INNER_TOL: f64 = 1e-10;
/// Relative tolerance of outer (product) quadratures.
const OUTER_TOL: f64 = 1e-8;
/// Gaussian mollifiers are truncated where they fall below this fraction of their peak.
const MOLLIFIER_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum TemporalKernel {
    Dirac,
    /// γ₀(t) = c₀|t|^{−α₀}; `c0_upper` is the declared upper constant C₀ ≥ c₀.
    PowerLaw { alpha0: f64, c0: f64, c0_upper: f64 },
    /// R_H(t) = H(2H−1)|t|^{2H−2}.
    Fractional { hurst: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpatialKernel {
    /// White in space, d = 1.
    Dirac,
    /// coeff·|x|^{−α} on ℝ^dim. A zero coefficient gives the zero-noise test kernel.
    Riesz { alpha: f64, coeff: f64, dim: usize },
    /// ∏ R_{H_i}(x_i).
    FractionalProduct { hurst: Vec<f64> },
}

impl TemporalKernel {
    pub fn power_law(alpha0: f64) -> Self {
        TemporalKernel::PowerLaw { alpha0, c0: 1.0, c0_upper: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TemporalKernel::Dirac => Ok(()),
            TemporalKernel::PowerLaw { alpha0, c0, c0_upper } => {
                if !(0.0..1.0).contains(&alpha0) {
                    return Err(invalid(format!("power-law α₀ = {alpha0} outside [0,1)")));
                }
                if !(c0 > 0.0) || !(c0_upper >= c0) {
                    return Err(invalid(format!("power-law constants need 0 < c₀ ≤ C₀, got {c0}, {c0_upper}")));
                }
                Ok(())
            }
            TemporalKernel::Fractional { hurst } => check_hurst(hurst),
        }
    }

    /// Effective exponent α₀ (1 for Dirac).
    pub fn alpha0(&self) -> f64 {
        match *self {
            TemporalKernel::Dirac => 1.0,
            TemporalKernel::PowerLaw { alpha0, .. } => alpha0,
            TemporalKernel::Fractional { hurst } => 2.0 - 2.0 * hurst,
        }
    }

    /// (coefficient, exponent) of the pure power form c|t|^{−a}, None for Dirac.
    fn power_form(&self) -> Option<(f64, f64)> {
        match *self {
            TemporalKernel::Dirac => None,
            TemporalKernel::PowerLaw { alpha0, c0, .. } => Some((c0, alpha0)),
            TemporalKernel::Fractional { hurst } => Some((hurst * (2.0 * hurst - 1.0), 2.0 - 2.0 * hurst)),
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let (c, a) = self.power_form().ok_or(Error::DiracRequiresLatticeWeight)?;
        if t == 0.0 {
            if a == 0.0 {
                return Ok(c);
            }
            return Err(Error::SingularAtZero);
        }
        Ok(c * t.abs().powf(-a))
    }
}

fn check_hurst(h: f64) -> Result<()> {
    if h > 0.5 && h < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("Hurst parameter {h} outside (1/2, 1)")))
    }
}

impl SpatialKernel {
    pub fn riesz(alpha: f64) -> Self {
        SpatialKernel::Riesz { alpha, coeff: 1.0, dim: 1 }
    }

    /// Zero covariance; every noise functional vanishes.
    pub fn zero() -> Self {
        SpatialKernel::Riesz { alpha: 0.5, coeff: 0.0, dim: 1 }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpatialKernel::Dirac => 1,
            SpatialKernel::Riesz { dim, .. } => *dim,
            SpatialKernel::FractionalProduct { hurst } => hurst.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SpatialKernel::Dirac => Ok(()),
            SpatialKernel::Riesz { alpha, coeff, dim } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return Err(invalid(format!("Riesz α = {alpha} outside (0,2)")));
                }
                if *dim == 0 {
                    return Err(invalid("dimension must be at least 1"));
                }
                if !(*coeff >= 0.0) {
                    return Err(invalid("Riesz coefficient must be nonnegative"));
                }
                Ok(())
            }
            SpatialKernel::FractionalProduct { hurst } => {
                if hurst.is_empty() {
                    return Err(invalid("fractional product needs at least one Hurst parameter"));
                }
                for &h in hurst {
                    check_hurst(h)?;
                }
                let d = hurst.len() as f64;
                if hurst.iter().sum::<f64>() <= d - 1.0 {
                    return Err(invalid("fractional product needs ΣH_i > d − 1"));
                }
                Ok(())
            }
        }
    }

    /// Effective exponent α (1 for Dirac).
    pub fn alpha(&self) -> f64 {
        match self {
            SpatialKernel::Dirac => 1.0,
            SpatialKernel::Riesz { alpha, .. } => *alpha,
            SpatialKernel::FractionalProduct { hurst } => 2.0 * hurst.len() as f64 - 2.0 * hurst.iter().sum::<f64>(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SpatialKernel::Riesz { coeff, .. } if *coeff == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(invalid(format!("lag has dimension {}, kernel has {}", x.len(), self.dim())));
        }
        match self {
            SpatialKernel::Dirac => Err(Error::DiracRequiresLatticeWeight),
            SpatialKernel::Riesz { alpha, coeff, .. } => {
                let r = norm(x);
                if r == 0.0 {
                    return Err(Error::SingularAtZero);
                }
                Ok(coeff * r.powf(-alpha))
            }
            SpatialKernel::FractionalProduct { hurst } => {
                let mut v = 1.0;
                for (&h, &xi) in hurst.iter().zip(x) {
                    if xi == 0.0 {
                        return Err(Error::SingularAtZero);
                    }
                    v *= h * (2.0 * h - 1.0) * xi.abs().powf(2.0 * h - 2.0);
                }
                Ok(v)
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub temporal: TemporalKernel,
    pub spatial: SpatialKernel,
}

impl CovarianceSpec {
    pub fn new(temporal: TemporalKernel, spatial: SpatialKernel) -> Result<Self> {
        temporal.validate()?;
        spatial.validate()?;
        let spec = CovarianceSpec { temporal, spatial };
        let b = spec.beta();
        if !(b.is_finite() && b > 0.0) {
            return Err(invalid(format!("β = {b} must be finite and positive")));
        }
        Ok(spec)
    }

    /// Space-time white noise on ℝ₊ × ℝ.
    pub fn white() -> Self {
        CovarianceSpec { temporal: TemporalKernel::Dirac, spatial: SpatialKernel::Dirac }
    }

    pub fn dim(&self) -> usize {
        self.spatial.dim()
    }

    pub fn alpha0(&self) -> f64 {
        self.temporal.alpha0()
    }

    pub fn alpha(&self) -> f64 {
        self.spatial.alpha()
    }

    /// β = (4 − 2α₀ − α)/(2 − α).
    pub fn beta(&self) -> f64 {
        beta_exponent(self.alpha0(), self.alpha())
    }

    pub fn is_zero(&self) -> bool {
        self.spatial.is_zero()
    }

    pub fn gamma0(&self, t: f64) -> Result<f64> {
        self.temporal.eval(t)
    }

    pub fn gamma(&self, x: &[f64]) -> Result<f64> {
        self.spatial.eval(x)
    }

    pub fn factorization(&self) -> Result<FactorizedKernel> {
        let temporal = match self.temporal.power_form() {
            None => HalfKernel::Dirac,
            Some((c, a)) => HalfKernel::from_power(c, a, 1)?,
        };
        let spatial = match &self.spatial {
            SpatialKernel::Dirac => SpatialHalf::Axes(vec![HalfKernel::Dirac]),
            SpatialKernel::Riesz { alpha, coeff, dim } => {
                let h = HalfKernel::from_power(*coeff, *alpha, *dim)?;
                if *dim == 1 {
                    SpatialHalf::Axes(vec![h])
                } else {
                    SpatialHalf::Radial { half: h, dim: *dim }
                }
            }
            SpatialKernel::FractionalProduct { hurst } => SpatialHalf::Axes(
                hurst
                    .iter()
                    .map(|&h| HalfKernel::from_power(h * (2.0 * h - 1.0), 2.0 - 2.0 * h, 1))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(FactorizedKernel { temporal, spatial })
    }
}

pub fn beta_exponent(alpha0: f64, alpha: f64) -> f64 {
    (4.0 - 2.0 * alpha0 - alpha) / (2.0 - alpha)
}

/// γ_d(s) = π^{d/2} 2^s Γ(s/2)/Γ((d−s)/2), the constant in |·|^{s−d} ∗ ... Riesz composition.
fn riesz_constant(d: usize, s: f64) -> f64 {
    let d = d as f64;
    PI.powf(d / 2.0) * 2f64.powf(s) * gamma_fn(s / 2.0) / gamma_fn((d - s) / 2.0)
}

/// Square root (for convolution) of a one-factor kernel: η(u) = coeff·|u|^{−exponent}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalfKernel {
    Dirac,
    Power { coeff: f64, exponent: f64 },
    Zero,
}

impl HalfKernel {
    /// Half-kernel of c|x|^{−a} on ℝ^d: η = √c·√(γ_d(d−a))/γ_d((d−a)/2)·|x|^{−(d+a)/2}.
    pub fn from_power(c: f64, a: f64, d: usize) -> Result<Self> {
        if c == 0.0 {
            return Ok(HalfKernel::Zero);
        }
        let df = d as f64;
        if !(a > 0.0 && a < df) {
            return Err(Error::MissingFactorization(format!(
                "|x|^(-{a}) on R^{d} has no power-law square root (needs 0 < α < d)"
            )));
        }
        let k = riesz_constant(d, df - a).sqrt() / riesz_constant(d, (df - a) / 2.0);
        Ok(HalfKernel::Power { coeff: c.sqrt() * k, exponent: (df + a) / 2.0 })
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        self.eval_radial(u.abs())
    }

    fn eval_radial(&self, r: f64) -> Result<f64> {
        match *self {
            HalfKernel::Dirac => Err(Error::DiracRequiresLatticeWeight),
            HalfKernel::Zero => Ok(0.0),
            HalfKernel::Power { coeff, exponent } => {
                if r == 0.0 {
                    Err(Error::SingularAtZero)
                } else {
                    Ok(coeff * r.powf(-exponent))
                }
            }
        }
    }

    /// (η ∗ η)(lag) on ℝ by quadrature; used to check the factorization.
    pub fn self_convolution(&self, lag: f64) -> Result<f64> {
        match *self {
            HalfKernel::Dirac => Err(Error::DiracRequiresLatticeWeight),
            HalfKernel::Zero => Ok(0.0),
            HalfKernel::Power { coeff, exponent } => {
                if lag == 0.0 {
                    return Err(Error::SingularAtZero);
                }
                // The integrand is symmetric about lag/2; write both halves as
                // offsets from a singular point so the singularity sits at 0.
                let l = lag.abs();
                let c2 = coeff * coeff;
                let near = tanh_sinh(|u| c2 * u.powf(-exponent) * (l - u).powf(-exponent), 0.0, 0.5 * l, INNER_TOL)?;
                let far = tanh_sinh_to_infinity(|u| c2 * u.powf(-exponent) * (l + u).powf(-exponent), 0.0, INNER_TOL)?;
                Ok(2.0 * (near.value + far.value))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpatialHalf {
    /// Product of one-dimensional half-kernels, one per axis.
    Axes(Vec<HalfKernel>),
    /// Isotropic half-kernel on ℝ^dim, dim ≥ 2.
    Radial { half: HalfKernel, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedKernel {
    pub temporal: HalfKernel,
    pub spatial: SpatialHalf,
}

impl FactorizedKernel {
    pub fn eta0(&self, t: f64) -> Result<f64> {
        self.temporal.eval(t)
    }

    pub fn eta(&self, x: &[f64]) -> Result<f64> {
        match &self.spatial {
            SpatialHalf::Axes(axes) => {
                let mut v = 1.0;
                for (h, &xi) in axes.iter().zip(x) {
                    v *= h.eval(xi)?;
                }
                Ok(v)
            }
            SpatialHalf::Radial { half, .. } => half.eval_radial(norm(x)),
        }
    }

    pub fn spatial_axes(&self) -> Result<&[HalfKernel]> {
        match &self.spatial {
            SpatialHalf::Axes(a) => Ok(a),
            SpatialHalf::Radial { dim, .. } => Err(Error::Unsupported(format!(
                "mollified Riesz half-kernel is implemented on separable axes only (d = {dim})"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl SmoothingParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && delta > 0.0) {
            return Err(invalid("smoothing parameters must be strictly positive"));
        }
        Ok(SmoothingParams { epsilon, delta })
    }
}

/// ∫ g(y − s) φ_v(y − mean) dy with the Gaussian truncated at the mollifier
/// cutoff. `g` receives the offset from `s`, so an integrable singularity of g
/// at 0 is resolved exactly.
pub fn gaussian_average_around<G: Fn(f64) -> f64>(g: G, s: f64, mean: f64, var: f64) -> Result<f64> {
    let sd = var.sqrt();
    let half_width = sd * (-2.0 * MOLLIFIER_CUTOFF.ln()).sqrt();
    let (lo, hi) = (mean - half_width - s, mean + half_width - s);
    let mut pts = vec![lo, mean - s, hi];
    if lo < 0.0 && hi > 0.0 {
        pts.push(0.0);
    }
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    let f = |u: f64| g(u) * heat_kernel_1d(var, u + s - mean);
    Ok(tanh_sinh_split(f, &pts, INNER_TOL)?.value)
}

/// One mollified axis: η_s(t,r) = ∫ η(t−y) p_s(y−r) e^{−s y²/2} dy.
///
/// The same form serves the temporal factor (s = δ) and each spatial axis (s = ε).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedAxis {
    pub half: HalfKernel,
    pub scale: f64,
}

impl SmoothedAxis {
    pub fn new(half: HalfKernel, scale: f64) -> Self {
        SmoothedAxis { half, scale }
    }

    /// p_s(y−r)e^{−s y²/2} = A(r)·φ_v(y − m(r)) with v = s/(1+s²), m = r/(1+s²),
    /// A(r) = (1+s²)^{−1/2} e^{−s r²/(2(1+s²))}.
    fn mollifier_parts(&self, r: f64) -> (f64, f64, f64) {
        let s = self.scale;
        let q = 1.0 + s * s;
        let amp = q.powf(-0.5) * (-s * r * r / (2.0 * q)).exp();
        (amp, r / q, s / q)
    }

    pub fn eta(&self, t: f64, r: f64) -> Result<f64> {
        let s = self.scale;
        match self.half {
            HalfKernel::Zero => Ok(0.0),
            HalfKernel::Dirac => Ok(heat_kernel_1d(s, t - r) * (-s * t * t / 2.0).exp()),
            HalfKernel::Power { coeff, exponent } => {
                let (amp, m, v) = self.mollifier_parts(r);
                if amp == 0.0 {
                    return Ok(0.0);
                }
                let avg = gaussian_average_around(|u| u.abs().powf(-exponent), t, m, v)?;
                Ok(amp * coeff * avg)
            }
        }
    }

    /// ∫ η_s(t₁,r) η_s(t₂,r) dr.
    pub fn factor(&self, t1: f64, t2: f64) -> Result<f64> {
        let s = self.scale;
        match self.half {
            HalfKernel::Zero => Ok(0.0),
            HalfKernel::Dirac => Ok((-s * (t1 * t1 + t2 * t2) / 2.0).exp() * heat_kernel_1d(2.0 * s, t1 - t2)),
            HalfKernel::Power { .. } => {
                let q = 1.0 + s * s;
                let reach = (-(MOLLIFIER_CUTOFF.ln()) * q / s).sqrt();
                let sd = (s / q).sqrt();
                let mut pts = vec![-reach, reach];
                for c in [t1 * q, t2 * q] {
                    for k in [-10.0, 0.0, 10.0] {
                        let p = c + k * sd;
                        if p > -reach && p < reach {
                            pts.push(p);
                        }
                    }
                }
                pts.sort_by(|a, b| a.total_cmp(b));
                pts.dedup();
                let err = std::cell::Cell::new(None);
                let f = |r: f64| match (self.eta(t1, r), self.eta(t2, r)) {
                    (Ok(a), Ok(b)) => a * b,
                    (Err(e), _) | (_, Err(e)) => {
                        err.set(Some(e));
                        0.0
                    }
                };
                let v = tanh_sinh_split(f, &pts, OUTER_TOL)?.value;
                match err.into_inner() {
                    Some(e) => Err(e),
                    None => Ok(v),
                }
            }
        }
    }
}

/// η_{0,δ}(t, r).
pub fn smoothed_eta_time(fk: &FactorizedKernel, sp: &SmoothingParams, t: f64, r: f64) -> Result<f64> {
    SmoothedAxis::new(fk.temporal, sp.delta).eta(t, r)
}

/// η_ε(x, z) for separable spatial half-kernels.
pub fn smoothed_eta_space(fk: &FactorizedKernel, sp: &SmoothingParams, x: &[f64], z: &[f64]) -> Result<f64> {
    let axes = fk.spatial_axes()?;
    let mut v = 1.0;
    for ((h, &xi), &zi) in axes.iter().zip(x).zip(z) {
        v *= SmoothedAxis::new(*h, sp.epsilon).eta(xi, zi)?;
    }
    Ok(v)
}

/// Q_{ε,δ}(t₁,t₂,x₁,x₂) = ∫η_{0,δ}(t₁,r)η_{0,δ}(t₂,r)dr · ∫η_ε(x₁,z)η_ε(x₂,z)dz.
pub fn q_smoothed(spec: &CovarianceSpec, sp: &SmoothingParams, t1: f64, t2: f64, x1: &[f64], x2: &[f64]) -> Result<f64> {
    let fk = spec.factorization()?;
    let axes = fk.spatial_axes()?;
    if x1.len() != axes.len() || x2.len() != axes.len() {
        return Err(invalid("spatial arguments do not match the kernel dimension"));
    }
    let mut v = SmoothedAxis::new(fk.temporal, sp.delta).factor(t1, t2)?;
    for ((h, &a), &b) in axes.iter().zip(x1).zip(x2) {
        if v == 0.0 {
            break;
        }
        v *= SmoothedAxis::new(*h, sp.epsilon).factor(a, b)?;
    }
    Ok(v)
}

/// Resolution used to evaluate the unsmoothed covariance along discretized paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub steps_per_unit: f64,
    /// Spatial cell width: Dirac weight 1/dx on |x| < dx/2, power laws clamped at dx/2.
    pub dx: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization { steps_per_unit: 256.0, dx: 0.05 }
    }
}

impl Regularization {
    pub fn steps(&self, t: f64) -> usize {
        ((self.steps_per_unit * t).ceil() as usize).max(2)
    }
}

#[derive(Debug, Clone)]
enum TimeWeights {
    /// Dirac: weight h on the diagonal cell.
    Diagonal(f64),
    /// Exact cell double integrals of c|s−r|^{−a}, indexed by |i−j|.
    Toeplitz(Vec<f64>),
}

#[derive(Debug, Clone)]
enum SpaceEval {
    Box { dx: f64 },
    Riesz { alpha: f64, coeff: f64, floor: f64 },
    Product { hurst: Vec<f64>, floor: f64 },
    Zero,
}

impl SpaceEval {
    #[inline]
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            SpaceEval::Box { dx } => {
                if (a[0] - b[0]).abs() < 0.5 * dx {
                    1.0 / dx
                } else {
                    0.0
                }
            }
            SpaceEval::Riesz { alpha, coeff, floor } => {
                let mut r2 = 0.0;
                for (x, y) in a.iter().zip(b) {
                    r2 += (x - y) * (x - y);
                }
                coeff * r2.sqrt().max(*floor).powf(-alpha)
            }
            SpaceEval::Product { hurst, floor } => {
                let mut v = 1.0;
                for ((x, y), &h) in a.iter().zip(b).zip(hurst) {
                    v *= h * (2.0 * h - 1.0) * (x - y).abs().max(*floor).powf(2.0 * h - 2.0);
                }
                v
            }
            SpaceEval::Zero => 0.0,
        }
    }
}

/// Unsmoothed Q⁽²⁾ along two paths sampled on a common uniform grid of `steps`
/// cells over [0,t]. Each cell is represented by the average of its endpoints.
#[derive(Debug, Clone)]
pub struct PairFunctional {
    t: f64,
    steps: usize,
    dim: usize,
    time: TimeWeights,
    space: SpaceEval,
}

impl PairFunctional {
    pub fn new(spec: &CovarianceSpec, t: f64, steps: usize, reg: &Regularization) -> Result<Self> {
        if !(t > 0.0) || steps < 2 {
            return Err(invalid("pair functional needs t > 0 and at least 2 steps"));
        }
        let h = t / steps as f64;
        let time = match spec.temporal.power_form() {
            None => TimeWeights::Diagonal(h),
            Some((c, a)) => {
                let g = |u: f64| u.powf(2.0 - a) / ((1.0 - a) * (2.0 - a));
                let scale = c * h.powf(2.0 - a);
                let mut w = Vec::with_capacity(steps);
                w.push(scale * 2.0 * g(1.0));
                for k in 1..steps {
                    let k = k as f64;
                    w.push(scale * (g(k + 1.0) - 2.0 * g(k) + g(k - 1.0)));
                }
                TimeWeights::Toeplitz(w)
            }
        };
        let floor = 0.5 * reg.dx;
        let space = match &spec.spatial {
            SpatialKernel::Dirac => SpaceEval::Box { dx: reg.dx },
            SpatialKernel::Riesz { coeff, .. } if *coeff == 0.0 => SpaceEval::Zero,
            SpatialKernel::Riesz { alpha, coeff, .. } => SpaceEval::Riesz { alpha: *alpha, coeff: *coeff, floor },
            SpatialKernel::FractionalProduct { hurst } => SpaceEval::Product { hurst: hurst.clone(), floor },
        };
        Ok(PairFunctional { t, steps, dim: spec.dim(), time, space })
    }

    pub fn for_bundle(spec: &CovarianceSpec, bundle: &PathBundle, reg: &Regularization) -> Result<Self> {
        PairFunctional::new(spec, bundle.t, bundle.steps, reg)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.t
    }

    /// Regularized spatial kernel γ(a − b) as used inside the double sums.
    pub fn space_kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.space.eval(a, b)
    }

    /// Cell representatives of a path with steps+1 nodes.
    pub fn midpoints(&self, path: &[f64], out: &mut Vec<f64>) {
        let d = self.dim;
        out.clear();
        for i in 0..self.steps {
            for a in 0..d {
                out.push(0.5 * (path[i * d + a] + path[(i + 1) * d + a]));
            }
        }
    }

    /// Q⁽²⁾ between two paths given by their cell representatives.
    pub fn pair_mid(&self, ma: &[f64], mb: &[f64]) -> f64 {
        let d = self.dim;
        match &self.time {
            TimeWeights::Diagonal(h) => {
                let mut s = 0.0;
                for i in 0..self.steps {
                    s += self.space.eval(&ma[i * d..(i + 1) * d], &mb[i * d..(i + 1) * d]);
                }
                h * s
            }
            TimeWeights::Toeplitz(w) => {
                let mut s = 0.0;
                for i in 0..self.steps {
                    let a = &ma[i * d..(i + 1) * d];
                    for j in 0..self.steps {
                        s += w[i.abs_diff(j)] * self.space.eval(a, &mb[j * d..(j + 1) * d]);
                    }
                }
                s
            }
        }
    }

    pub fn pair(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut ma = Vec::new();
        let mut mb = Vec::new();
        self.midpoints(a, &mut ma);
        self.midpoints(b, &mut mb);
        self.pair_mid(&ma, &mb)
    }

    /// Q⁽ⁿ⁾ = Σ over unordered pairs of Q⁽²⁾.
    pub fn total(&self, paths: &[&[f64]]) -> f64 {
        let mids: Vec<Vec<f64>> = paths
            .iter()
            .map(|p| {
                let mut m = Vec::new();
                self.midpoints(p, &mut m);
                m
            })
            .collect();
        let mut s = 0.0;
        for j in 0..mids.len() {
            for k in j + 1..mids.len() {
                s += self.pair_mid(&mids[j], &mids[k]);
            }
        }
        s
    }
}

/// Q⁽ⁿ⁾(t, B¹..Bⁿ) for a bundle, with the unsmoothed kernel at the given regularization.
pub fn q_pairwise_functional(spec: &CovarianceSpec, paths: &PathBundle, reg: &Regularization) -> Result<f64> {
    if paths.d != spec.dim() {
        return Err(Error::GridMismatch(format!("paths have d = {}, kernel has d = {}", paths.d, spec.dim())));
    }
    let pf = PairFunctional::for_bundle(spec, paths, reg)?;
    let views: Vec<&[f64]> = (0..paths.n).map(|p| paths.path(p)).collect();
    Ok(pf.total(&views))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::PathKind;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn kernel_values() {
        let spec = CovarianceSpec::new(TemporalKernel::power_law(0.5), SpatialKernel::riesz(0.5)).unwrap();
        assert!((spec.gamma0(4.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(spec.gamma0(1.0).unwrap(), 1.0);
        assert!((spec.gamma(&[4.0]).unwrap() - 0.5).abs() < 1e-15);
        let f = TemporalKernel::Fractional { hurst: 0.75 };
        assert!((f.eval(1.0).unwrap() - 0.375).abs() < 1e-15);
        let fp = SpatialKernel::FractionalProduct { hurst: vec![0.75] };
        assert!((fp.eval(&[1.0]).unwrap() - 0.375).abs() < 1e-15);
        let r1 = SpatialKernel::Riesz { alpha: 1.0, coeff: 2.5, dim: 1 };
        assert_eq!(r1.eval(&[1.0]).unwrap(), 2.5);
    }

    #[test]
    fn kernel_errors() {
        assert_eq!(TemporalKernel::Dirac.eval(0.3), Err(Error::DiracRequiresLatticeWeight));
        assert_eq!(TemporalKernel::power_law(0.5).eval(0.0), Err(Error::SingularAtZero));
        assert_eq!(SpatialKernel::riesz(0.5).eval(&[0.0]), Err(Error::SingularAtZero));
        assert_eq!(SpatialKernel::Dirac.eval(&[0.1]), Err(Error::DiracRequiresLatticeWeight));
        assert!(CovarianceSpec::new(TemporalKernel::power_law(1.0), SpatialKernel::Dirac).is_err());
        assert!(CovarianceSpec::new(TemporalKernel::Dirac, SpatialKernel::riesz(2.0)).is_err());
        assert!(SmoothingParams::new(0.0, 0.1).is_err());
    }

    #[test]
    fn beta_values() {
        assert_eq!(CovarianceSpec::white().beta(), 1.0);
        assert!((beta_exponent(0.5, 0.5) - 5.0 / 3.0).abs() < 1e-15);
        let a = beta_exponent(1.0, 1.0);
        let b = beta_exponent(1.0, 1.0 + 1e-7);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn half_kernel_convolves_back() {
        for &(c, a) in &[(1.0, 0.5), (0.375, 0.5), (2.0, 0.3), (1.0, 0.8)] {
            let h = HalfKernel::from_power(c, a, 1).unwrap();
            for &lag in &[0.01, 0.1, 1.0, 3.0, 30.0] {
                let conv = h.self_convolution(lag).unwrap();
                let target = c * f64::powf(lag, -a);
                assert!(rel(conv, target) < 1e-4, "c={c} a={a} lag={lag}: {conv} vs {target}");
            }
        }
        assert!(HalfKernel::from_power(1.0, 1.2, 1).is_err());
        assert!(HalfKernel::from_power(1.0, 1.2, 2).is_ok());
    }

    #[test]
    fn dirac_mollified_eta() {
        let ax = SmoothedAxis::new(HalfKernel::Dirac, 1.0);
        let p0 = (2.0 * PI).powf(-0.5);
        assert!((ax.eta(0.0, 0.0).unwrap() - p0).abs() < 1e-15);
        assert!((ax.eta(1.0, 1.0).unwrap() - p0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn white_q_smoothed_diagonal_below_gaussian_product() {
        let spec = CovarianceSpec::white();
        for &e in &[0.1, 0.01] {
            let sp = SmoothingParams::new(e, e).unwrap();
            let q = q_smoothed(&spec, &sp, 0.3, 0.3, &[0.2], &[0.2]).unwrap();
            let cap = heat_kernel_1d(2.0 * e, 0.0) * heat_kernel_1d(2.0 * e, 0.0);
            assert!(q <= cap && q > 0.9 * cap);
        }
    }

    #[test]
    fn q_smoothed_symmetry() {
        let spec = CovarianceSpec::new(TemporalKernel::power_law(0.5), SpatialKernel::riesz(0.5)).unwrap();
        let sp = SmoothingParams::new(0.1, 0.1).unwrap();
        let a = q_smoothed(&spec, &sp, 0.2, 0.7, &[0.1], &[-0.4]).unwrap();
        let b = q_smoothed(&spec, &sp, 0.7, 0.2, &[-0.4], &[0.1]).unwrap();
        assert!(rel(a, b) < 1e-9);
    }

    #[test]
    fn frozen_paths_closed_form() {
        let spec = CovarianceSpec::new(TemporalKernel::power_law(0.5), SpatialKernel::riesz(0.5)).unwrap();
        let reg = Regularization { steps_per_unit: 64.0, dx: 0.1 };
        let t = 0.8;
        let steps = reg.steps(t);
        let bundle = PathBundle::constant(2, 1, t, steps, &[0.3], PathKind::Brownian);
        let q = q_pairwise_functional(&spec, &bundle, &reg).unwrap();
        let a0 = 0.5;
        let time = 2.0 * t.powf(2.0 - a0) / ((1.0 - a0) * (2.0 - a0));
        let space = (0.05f64).powf(-0.5);
        assert!(rel(q, time * space) < 1e-12, "{q} vs {}", time * space);
    }

    #[test]
    fn zero_kernel_pair_is_zero() {
        let spec = CovarianceSpec::new(TemporalKernel::power_law(0.5), SpatialKernel::zero()).unwrap();
        let bundle = PathBundle::constant(3, 1, 0.5, 16, &[0.0], PathKind::Brownian);
        assert_eq!(q_pairwise_functional(&spec, &bundle, &Regularization::default()).unwrap(), 0.0);
    }
}
