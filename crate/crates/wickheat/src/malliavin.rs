//! Malliavin derivative norm Z(t,x) = ‖Du(t,x)‖²_H and the quantities built
//! from its moments.
//!
//! Path formulas, with Q_{ij} = Q⁽²⁾(B^i, B^j) and Q⁽ᵏ⁾ = Σ_{i<j} Q_{ij}:
//!
//! ```text
//! E Z   = E[ u₀(B¹_t)u₀(B²_t) Q₁₂ e^{Q⁽²⁾} ]
//! E Z²  = E[ ∏u₀(B^j_t) Q₁₂ Q₃₄ e^{Q⁽⁴⁾} ]
//! Ĩ     = 4 E[ ∏u₀(B^j_t) Q₁₂ Q₃₄ Q₁₃ e^{Q⁽⁴⁾} ]
//! ```

use crate::covariance::CovarianceSpec;
use crate::error::{invalid, Error, Result};
use crate::feynman_kac::{
    conditioned_gradient, lattice_pair, lattice_quadratic_form, FkContext, MomentEstimate, MomentMode, PathPairs, PathStencil,
};
use crate::gaussian_field::FieldSample;
use crate::paths::{fill_bm, heat_convolve, InitialDatum};
use crate::rng::Seed;
use crate::stats::{parallel_mean, Estimate};
use crate::tails_density::negative_moment_form;

fn check_budget(n_mc: usize) -> Result<()> {
    if n_mc < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    Ok(())
}

pub fn z_first_moment(t: f64, x: &[f64], spec: &CovarianceSpec, u0: &InitialDatum, n_mc: usize, seed: Seed, mode: &MomentMode) -> Result<MomentEstimate> {
    check_budget(n_mc)?;
    let pp = PathPairs::new(spec, t, x, mode)?;
    let e = parallel_mean(n_mc, seed, |rng| {
        let p = pp.sample(rng, 2);
        let q = pp.pair(&p, 0, 1);
        p.u0_product(u0) * q * q.exp()
    });
    Ok(MomentEstimate::from_estimate(e))
}

pub fn z_second_moment(t: f64, x: &[f64], spec: &CovarianceSpec, u0: &InitialDatum, n_mc: usize, seed: Seed, mode: &MomentMode) -> Result<MomentEstimate> {
    check_budget(n_mc)?;
    let pp = PathPairs::new(spec, t, x, mode)?;
    let e = parallel_mean(n_mc, seed, |rng| {
        let p = pp.sample(rng, 4);
        p.u0_product(u0) * pp.pair(&p, 0, 1) * pp.pair(&p, 2, 3) * pp.total(&p).exp()
    });
    Ok(MomentEstimate::from_estimate(e))
}

/// Ĩ(t,x) with the path roles given by `order` (a permutation of 0..4); the
/// identity order evaluates Q₁₂Q₃₄Q₁₃.
#[allow(clippy::too_many_arguments)]
pub fn tilde_i_ordered(
    t: f64,
    x: &[f64],
    spec: &CovarianceSpec,
    u0: &InitialDatum,
    n_mc: usize,
    seed: Seed,
    mode: &MomentMode,
    order: [usize; 4],
) -> Result<MomentEstimate> {
    check_budget(n_mc)?;
    let mut seen = [false; 4];
    for &o in &order {
        if o > 3 || seen[o] {
            return Err(invalid("order must be a permutation of 0..4"));
        }
        seen[o] = true;
    }
    let pp = PathPairs::new(spec, t, x, mode)?;
    let [a, b, c, d] = order;
    let e = parallel_mean(n_mc, seed, |rng| {
        let p = pp.sample(rng, 4);
        4.0 * p.u0_product(u0) * pp.pair(&p, a, b) * pp.pair(&p, c, d) * pp.pair(&p, a, c) * pp.total(&p).exp()
    });
    Ok(MomentEstimate::from_estimate(e))
}

pub fn tilde_i(t: f64, x: &[f64], spec: &CovarianceSpec, u0: &InitialDatum, n_mc: usize, seed: Seed, mode: &MomentMode) -> Result<MomentEstimate> {
    tilde_i_ordered(t, x, spec, u0, n_mc, seed, mode, [0, 1, 2, 3])
}

/// Z_{ε,δ}(t,x) for one field: λ²·E[u₀(B¹_t)u₀(B²_t) Q_{ε,δ}(B¹,B²) e^{V(B¹)+V(B²)}]
/// over `n_pairs` independent pairs.
pub fn z_conditioned(ctx: &FkContext, t: f64, x: &[f64], field: &FieldSample, n_pairs: usize, seed: Seed) -> Result<Estimate> {
    check_budget(n_pairs)?;
    let m = ctx.lattice().time_index(t)?;
    let d = ctx.lattice().dim;
    let dt = ctx.lattice().dt;
    if x.len() != d {
        return Err(invalid("start point dimension"));
    }
    let lam2 = ctx.intensity * ctx.intensity;
    let mut rng = seed.rng();
    let mut buf = vec![0.0; (m + 1) * d];
    let mut w = crate::stats::Welford::default();
    for _ in 0..n_pairs {
        let mut sts = Vec::with_capacity(2);
        let mut theta = 1.0;
        for _ in 0..2 {
            fill_bm(&mut rng, d, m, dt, x, &mut buf);
            let st = PathStencil::new(ctx.lattice(), &buf, m);
            let v = crate::feynman_kac::v_functional(&buf, field, ctx, t)?;
            if v > ctx.overflow_limit {
                return Err(Error::Overflow { max_v: v });
            }
            theta *= ctx.u0.eval(st.endpoint()) * v.exp();
            sts.push(st);
        }
        w.push(lam2 * theta * lattice_pair(&sts[0], &sts[1], ctx.covariance()));
    }
    Ok(w.estimate())
}

/// The two sides of the chain-rule norm identity for one conditioned
/// estimate: (‖D^W u‖² over the base white field cells, gᵀ Cov g over the
/// lattice nodes), where g is the gradient with respect to the mollified field.
pub fn derivative_norms(ctx: &FkContext, t: f64, x: &[f64], field: &FieldSample, n_paths: usize, seed: Seed) -> Result<(f64, f64)> {
    let (_, g) = conditioned_gradient(ctx, t, x, field, n_paths, seed)?;
    let h = ctx.operator().adjoint(&g)?;
    let cells = ctx.operator().base_grid().measures();
    let white: f64 = h.iter().zip(&cells).map(|(v, m)| v * v * m).sum();
    Ok((white, lattice_quadratic_form(ctx.covariance(), &g)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaB {
    pub lambda: f64,
    pub b: f64,
    /// b was above 1/8 from Monte Carlo noise and has been clamped.
    pub clamped: bool,
}

/// λ = 32·Ĩ·E[Z²]/(E Z)⁴ and b = (E Z)²/(8·E Z²).
pub fn lambda_b_point(ez: Estimate, ez2: Estimate, tilde: Estimate) -> Result<LambdaB> {
    if !(ez.value > 3.0 * ez.se) || !(ez2.value > 0.0) {
        return Err(Error::InsufficientPrecision { value: ez.value, se: ez.se });
    }
    let lambda = 32.0 * tilde.value * ez2.value / ez.value.powi(4);
    let raw = ez.value * ez.value / (8.0 * ez2.value);
    let clamped = raw > 0.125;
    Ok(LambdaB { lambda, b: raw.min(0.125), clamped })
}

/// 2^p·e^{2p√(λ log(2/b))}·(1 + 4√(πp²λ)·e^{p²λ})·(E Z)^{−p}.
pub fn du_negative_moment_bound(p: f64, lambda: f64, b: f64, ez: f64) -> Result<f64> {
    negative_moment_form(p, lambda, b, ez)
}

/// C_{k,p}(p_t∗|u₀|(x))^p·t^{((4−2α₀−α)/4)pk}·exp(c·p^{(4−α)/(2−α)}·t^β).
#[allow(clippy::too_many_arguments)]
pub fn du_kth_moment_bound(k: usize, p: f64, t: f64, x: &[f64], spec: &CovarianceSpec, u0: &InitialDatum, c_kp: f64, c: f64) -> Result<f64> {
    let m = heat_convolve(u0, t, x)?;
    let (a0, a) = (spec.alpha0(), spec.alpha());
    let t_exp = (4.0 - 2.0 * a0 - a) / 4.0 * p * k as f64;
    Ok(c_kp * m.powf(p) * t.powf(t_exp) * (c * p.powf((4.0 - a) / (2.0 - a)) * t.powf(spec.beta())).exp())
}

/// Power of t in the first factor of the k-th derivative moment bound.
pub fn du_kth_time_exponent(k: usize, p: f64, spec: &CovarianceSpec) -> f64 {
    (4.0 - 2.0 * spec.alpha0() - spec.alpha()) / 4.0 * p * k as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConstants {
    pub c1_upper: f64,
    pub c1: f64,
    pub c2_upper: f64,
    pub c2: f64,
}

/// (C₁t^{2−α₀−α/2}e^{c₁t^β}, C₂e^{−c₂t^β}).
pub fn du_lambda_b_envelope(t: f64, spec: &CovarianceSpec, k: &EnvelopeConstants) -> (f64, f64) {
    let tb = t.powf(spec.beta());
    let e = 2.0 - spec.alpha0() - spec.alpha() / 2.0;
    (k.c1_upper * t.powf(e) * (k.c1 * tb).exp(), k.c2_upper * (-k.c2 * tb).exp())
}

/// Fits C₁ (with c₁ fixed) so the λ envelope passes through `lambda` at `t`.
pub fn fit_lambda_envelope(t: f64, lambda: f64, spec: &CovarianceSpec, c1: f64) -> f64 {
    let e = 2.0 - spec.alpha0() - spec.alpha() / 2.0;
    lambda / (t.powf(e) * (c1 * t.powf(spec.beta())).exp())
}
