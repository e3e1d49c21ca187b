//! Wiener chaos expansion u(t,x) = Σ_n I_n(f_n(·,t,x)).
//!
//! The variance of the n-th term is estimated from the path identity
//!
//! ```text
//! n!‖f_n‖² = E[ u₀(B¹_t) u₀(B²_t) (Q⁽²⁾(B¹, B²))ⁿ ] / n!
//! ```
//!
//! with B¹, B² independent Brownian motions from x, each sampled as
//! B_s = x + (s/t)Y + √t·β(s/t), Y ~ N(0, tI) and β a standard bridge.

use crate::covariance::{CovarianceSpec, PairFunctional, Regularization, SpatialKernel};
use crate::error::{invalid, Error, Result};
use crate::paths::{fill_bridge, heat_convolve, heat_kernel_1d, InitialDatum};
use crate::rng::{Rng, Seed};
use crate::stats::{mean_se, parallel_draws, parallel_mean, Estimate};
use rand::Rng as _;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma as gamma_fn, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChaosMethod {
    BridgeRep,
    SimplexQuadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaosTerm {
    pub order: usize,
    /// n!‖f_n‖².
    pub variance: f64,
    pub se: f64,
    pub method: ChaosMethod,
}

fn factorial(n: usize) -> f64 {
    gamma_fn(n as f64 + 1.0)
}

/// f_n(s₁,x₁,…,s_n,x_n; t,x) for distinct times in (0,t).
pub fn fn_kernel(u0: &InitialDatum, t: f64, x: &[f64], times: &[f64], points: &[Vec<f64>]) -> Result<f64> {
    let n = times.len();
    if n == 0 || points.len() != n {
        return Err(invalid("f_n needs n ≥ 1 times and as many points"));
    }
    if times.iter().any(|&s| !(s > 0.0 && s < t)) {
        return Err(invalid("times must lie in (0, t)"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    if order.windows(2).any(|w| times[w[0]] == times[w[1]]) {
        return Err(Error::CoincidentTimes);
    }
    let dist = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p - q).collect() };
    let mut v = heat_convolve(u0, times[order[0]], &points[order[0]])?;
    for w in order.windows(2) {
        v *= crate::paths::heat_kernel(times[w[1]] - times[w[0]], &dist(&points[w[1]], &points[w[0]]))?;
    }
    let last = order[n - 1];
    v *= crate::paths::heat_kernel(t - times[last], &dist(x, &points[last]))?;
    Ok(v / factorial(n))
}

/// Samples a Brownian path on [0,t] from x as an affine bridge decomposition.
fn fill_bm_via_bridge(rng: &mut Rng, d: usize, steps: usize, t: f64, x: &[f64], out: &mut [f64]) {
    fill_bridge(rng, d, steps, out);
    let st = t.sqrt();
    for a in 0..d {
        let z: f64 = rng.sample(StandardNormal);
        let y = st * z;
        for i in 0..=steps {
            let u = i as f64 / steps as f64;
            out[i * d + a] = x[a] + u * y + st * out[i * d + a];
        }
    }
}

/// One replicate: (u₀(B¹_t)u₀(B²_t), Q⁽²⁾(B¹,B²)).
fn bridge_pair_draw(pf: &PairFunctional, u0: &InitialDatum, t: f64, x: &[f64], rng: &mut Rng) -> (f64, f64) {
    let d = x.len();
    let steps = pf.steps();
    let mut a = vec![0.0; (steps + 1) * d];
    let mut b = vec![0.0; (steps + 1) * d];
    fill_bm_via_bridge(rng, d, steps, t, x, &mut a);
    fill_bm_via_bridge(rng, d, steps, t, x, &mut b);
    let w = u0.eval(&a[steps * d..]) * u0.eval(&b[steps * d..]);
    (w, pf.pair(&a, &b))
}

fn check_point(spec: &CovarianceSpec, t: f64, x: &[f64]) -> Result<()> {
    if !(t > 0.0) || x.len() != spec.dim() {
        return Err(invalid("t must be positive and x of the kernel dimension"));
    }
    Ok(())
}

/// n!‖f_n‖² by the bridge path representation.
#[allow(clippy::too_many_arguments)]
pub fn chaos_variance_bridge(
    n: usize,
    spec: &CovarianceSpec,
    t: f64,
    x: &[f64],
    u0: &InitialDatum,
    n_mc: usize,
    seed: Seed,
    reg: &Regularization,
) -> Result<ChaosTerm> {
    if n == 0 {
        let m = heat_convolve(u0, t, x)?;
        return Ok(ChaosTerm { order: 0, variance: m * m, se: 0.0, method: ChaosMethod::BridgeRep });
    }
    check_point(spec, t, x)?;
    if n_mc < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let pf = PairFunctional::new(spec, t, reg.steps(t), reg)?;
    let nf = factorial(n);
    let e = parallel_mean(n_mc, seed, |rng| {
        let (w, q) = bridge_pair_draw(&pf, u0, t, x, rng);
        w * q.powi(n as i32) / nf
    });
    Ok(ChaosTerm { order: n, variance: e.value, se: e.se, method: ChaosMethod::BridgeRep })
}

/// Closed form of n!‖f_n‖² for space-time white noise in d = 1 and constant
/// u₀ ≡ c: c²·t^{n/2}/(2ⁿΓ(n/2 + 1)), from integrating the heat-kernel
/// products over the time simplex.
pub fn chaos_variance_simplex(n: usize, spec: &CovarianceSpec, t: f64, u0: &InitialDatum) -> Result<ChaosTerm> {
    if *spec != CovarianceSpec::white() {
        return Err(Error::Unsupported("simplex closed form exists for space-time white noise only".into()));
    }
    let c = match u0 {
        InitialDatum::Constant(c) => *c,
        _ => return Err(Error::Unsupported("simplex closed form needs a constant initial datum".into())),
    };
    let n_f = n as f64;
    let v = c * c * (n_f / 2.0 * t.ln() - n_f * 2f64.ln() - ln_gamma(n_f / 2.0 + 1.0)).exp();
    Ok(ChaosTerm { order: n, variance: v, se: 0.0, method: ChaosMethod::SimplexQuadrature })
}

/// κ = E ∫₀¹ γ(√2·β(s)) ds over standard bridges β.
///
/// For a Dirac spatial kernel each step contributes its exact expected
/// occupation density at 0 given the endpoints; function kernels use the
/// step midpoint with the regularization floor.
pub fn bridge_kappa(spec: &CovarianceSpec, n_mc: usize, steps: usize, seed: Seed, reg: &Regularization) -> Result<Estimate> {
    if n_mc < 2 || steps < 2 {
        return Err(invalid("need at least 2 samples and 2 steps"));
    }
    let d = spec.dim();
    let h = 1.0 / steps as f64;
    let sq2 = std::f64::consts::SQRT_2;
    let pf = PairFunctional::new(spec, 1.0, steps, reg)?;
    let dirac = matches!(spec.spatial, SpatialKernel::Dirac);
    let origin = vec![0.0; d];
    Ok(parallel_mean(n_mc, seed, |rng| {
        let mut b = vec![0.0; (steps + 1) * d];
        fill_bridge(rng, d, steps, &mut b);
        let mut s = 0.0;
        if dirac {
            // Z = √2β has diffusion coefficient σ² = 2.
            let var = 2.0 * h;
            for i in 0..steps {
                let (za, zb) = (sq2 * b[i], sq2 * b[i + 1]);
                let dens = heat_kernel_1d(var, zb - za);
                if dens > 0.0 {
                    s += 0.5 * erfc((za.abs() + zb.abs()) / (2.0 * var).sqrt()) / (2.0 * dens);
                }
            }
        } else {
            let mut mid = vec![0.0; d];
            for i in 0..steps {
                for a in 0..d {
                    mid[a] = sq2 * 0.5 * (b[i * d + a] + b[(i + 1) * d + a]);
                }
                s += h * pf.space_kernel(&mid, &origin);
            }
        }
        s
    }))
}

/// K_n = κⁿ/n!.
pub fn k_n(n: usize, kappa: f64) -> f64 {
    kappa.powi(n as i32) / factorial(n)
}

/// C·(p_t∗|u₀|(x))²·t^{(2−α₀−α/2)n}·(n!)^{α/2−1}.
pub fn chaos_variance_bound(n: usize, spec: &CovarianceSpec, t: f64, x: &[f64], u0: &InitialDatum, c: f64) -> Result<f64> {
    let m = heat_convolve(u0, t, x)?;
    let (a0, a) = (spec.alpha0(), spec.alpha());
    let n_f = n as f64;
    Ok(c * m * m * ((2.0 - a0 - a / 2.0) * n_f * t.ln() + (a / 2.0 - 1.0) * ln_gamma(n_f + 1.0)).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosSecondMoment {
    pub estimate: Estimate,
    pub terms: Vec<ChaosTerm>,
    /// C fitted at n = 1 so that the bound matches the first term.
    pub fitted_c: f64,
    /// Bound on Σ_{n > N} of the neglected terms.
    pub tail_bound: f64,
    pub warning: Option<String>,
}

/// Number of neglected terms summed into the truncation bound.
const TAIL_TERMS: usize = 40;

/// E[u(t,x)²] ≈ Σ_{n ≤ N} n!‖f_n‖², all orders evaluated on common paths.
#[allow(clippy::too_many_arguments)]
pub fn chaos_second_moment(
    spec: &CovarianceSpec,
    t: f64,
    x: &[f64],
    u0: &InitialDatum,
    n_trunc: usize,
    n_mc: usize,
    seed: Seed,
    reg: &Regularization,
    tail_tol: f64,
) -> Result<ChaosSecondMoment> {
    let zero = chaos_variance_bridge(0, spec, t, x, u0, n_mc, seed, reg)?;
    if n_trunc == 0 {
        return Ok(ChaosSecondMoment {
            estimate: Estimate::new(zero.variance, 0.0),
            terms: vec![zero],
            fitted_c: f64::NAN,
            tail_bound: f64::NAN,
            warning: None,
        });
    }
    check_point(spec, t, x)?;
    if n_mc < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let pf = PairFunctional::new(spec, t, reg.steps(t), reg)?;
    let draws: Vec<Vec<f64>> = parallel_draws(n_mc, seed, |rng| {
        let (w, q) = bridge_pair_draw(&pf, u0, t, x, rng);
        let mut out = Vec::with_capacity(n_trunc);
        let mut term = w;
        for n in 1..=n_trunc {
            term *= q / n as f64;
            out.push(term);
        }
        out
    });
    let mut terms = vec![zero];
    for n in 1..=n_trunc {
        let col: Vec<f64> = draws.iter().map(|r| r[n - 1]).collect();
        let e = mean_se(&col);
        terms.push(ChaosTerm { order: n, variance: e.value, se: e.se, method: ChaosMethod::BridgeRep });
    }
    let sums: Vec<f64> = draws.iter().map(|r| r.iter().sum::<f64>()).collect();
    let random = mean_se(&sums);
    let estimate = Estimate::new(zero.variance + random.value, random.se);
    let b1 = chaos_variance_bound(1, spec, t, x, u0, 1.0)?;
    let fitted_c = terms[1].variance / b1;
    let mut tail_bound = 0.0;
    for n in n_trunc + 1..=n_trunc + TAIL_TERMS {
        tail_bound += chaos_variance_bound(n, spec, t, x, u0, fitted_c)?;
    }
    let warning = (tail_bound > tail_tol * estimate.value.abs())
        .then(|| format!("truncation tail bound {tail_bound:.3e} exceeds tolerance {:.1e} of the estimate", tail_tol));
    Ok(ChaosSecondMoment { estimate, terms, fitted_c, tail_bound, warning })
}

/// Exponents (of p, of t) in the moment bounds: ((4−α)/(2−α), β).
pub fn moment_exponents(spec: &CovarianceSpec) -> (f64, f64) {
    let a = spec.alpha();
    ((4.0 - a) / (2.0 - a), spec.beta())
}

#[allow(clippy::too_many_arguments)]
fn moment_bound(p: f64, intensity: f64, spec: &CovarianceSpec, t: f64, x: &[f64], u0: &InitialDatum, c1: f64, c2: f64) -> Result<f64> {
    let m = heat_convolve(u0, t, x)?;
    let (pe, te) = moment_exponents(spec);
    let lam = intensity.powf(4.0 / (2.0 - spec.alpha()));
    Ok((c1 * m).powf(p) * (c2 * lam * t.powf(te) * p.powf(pe)).exp())
}

/// (C₁·p_t∗|u₀|(x))^p·exp(C₂·λ^{4/(2−α)}·t^β·p^{(4−α)/(2−α)}), p ≥ 1.
#[allow(clippy::too_many_arguments)]
pub fn moment_bound_upper(p: f64, intensity: f64, spec: &CovarianceSpec, t: f64, x: &[f64], u0: &InitialDatum, c1: f64, c2: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid("upper moment bound needs p ≥ 1"));
    }
    moment_bound(p, intensity, spec, t, x, u0, c1, c2)
}

/// Lower form of the moment bound, p > 1.
#[allow(clippy::too_many_arguments)]
pub fn moment_bound_lower(p: f64, intensity: f64, spec: &CovarianceSpec, t: f64, x: &[f64], u0: &InitialDatum, c1: f64, c2: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(invalid("lower moment bound needs p > 1"));
    }
    moment_bound(p, intensity, spec, t, x, u0, c1, c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::heat_kernel;

    fn one() -> InitialDatum {
        InitialDatum::constant(1.0).unwrap()
    }

    #[test]
    fn fn_kernel_examples() {
        let u0 = one();
        let v = fn_kernel(&u0, 1.0, &[0.2], &[0.4], &[vec![-0.3]]).unwrap();
        assert!((v - heat_kernel(0.6, &[0.5]).unwrap()).abs() < 1e-15);
        let v = fn_kernel(&u0, 1.0, &[0.0], &[0.25, 0.75], &[vec![0.0], vec![0.0]]).unwrap();
        let want = 0.5 * heat_kernel(0.25, &[0.0]).unwrap() * heat_kernel(0.5, &[0.0]).unwrap();
        assert!((v - want).abs() < 1e-15);
        let a = fn_kernel(&u0, 1.0, &[0.1], &[0.3, 0.6, 0.2], &[vec![0.1], vec![-0.4], vec![0.7]]).unwrap();
        let b = fn_kernel(&u0, 1.0, &[0.1], &[0.2, 0.3, 0.6], &[vec![0.7], vec![0.1], vec![-0.4]]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(fn_kernel(&u0, 1.0, &[0.0], &[0.3, 0.3], &[vec![0.0], vec![1.0]]), Err(Error::CoincidentTimes)));
    }

    #[test]
    fn zeroth_term_and_zero_kernel() {
        let reg = Regularization::default();
        let g = InitialDatum::gaussian(1.0, 1.0).unwrap();
        let z = chaos_variance_bridge(0, &CovarianceSpec::white(), 1.0, &[0.0], &g, 10, Seed(1), &reg).unwrap();
        assert!((z.variance - 0.5).abs() < 1e-14);
        let spec = CovarianceSpec::new(crate::covariance::TemporalKernel::Dirac, SpatialKernel::zero()).unwrap();
        let t = chaos_variance_bridge(1, &spec, 1.0, &[0.0], &one(), 50, Seed(1), &reg).unwrap();
        assert_eq!(t.variance, 0.0);
    }

    #[test]
    fn simplex_closed_form_sums_to_second_moment() {
        let t: f64 = 0.5;
        let s: f64 = (0..60).map(|n| chaos_variance_simplex(n, &CovarianceSpec::white(), t, &one()).unwrap().variance).sum();
        let exact = (t / 4.0).exp() * (1.0 + statrs::function::erf::erf(t.sqrt() / 2.0));
        assert!((s - exact).abs() < 1e-13);
    }

    #[test]
    fn bound_exponents() {
        let spec = CovarianceSpec::white();
        let u0 = one();
        let r = chaos_variance_bound(1, &spec, 4.0, &[0.0], &u0, 1.0).unwrap() / chaos_variance_bound(1, &spec, 1.0, &[0.0], &u0, 1.0).unwrap();
        assert!((r - 2.0).abs() < 1e-14);
        assert!((chaos_variance_bound(0, &spec, 1.0, &[0.0], &u0, 3.0).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(moment_exponents(&spec), (3.0, 1.0));
        assert!((moment_bound_upper(1.0, 1.0, &spec, 1.0, &[0.0], &u0, 1.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let r = moment_bound_upper(2.0, 1.0, &spec, 1.0, &[0.0], &u0, 1.0, 1.0).unwrap()
            / moment_bound_upper(1.0, 1.0, &spec, 1.0, &[0.0], &u0, 1.0, 1.0).unwrap();
        assert!((r / 7f64.exp() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn truncation_is_monotone() {
        let reg = Regularization::default();
        let spec = CovarianceSpec::white();
        let mut prev = 0.0;
        for n in 0..4 {
            let m = chaos_second_moment(&spec, 0.25, &[0.0], &one(), n, 200, Seed(3), &reg, 1e-3).unwrap();
            assert!(m.estimate.value >= prev);
            prev = m.estimate.value;
        }
    }
}
