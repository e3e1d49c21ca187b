//! `validate`: deterministic checks, no Monte Carlo.
//!
//! - validate_examples: check, value, expected, abs_error, pass for closed-form
//!   evaluator examples.
//! - validate_kl: family, epsilon, delta, nodes, max_eigenvalue, limit, pass.
//!   Largest KL eigenvalue of the smoothed lattice covariance on a lattice fine
//!   enough to resolve both mollifiers.
//! - validate_uniform_bound: family, epsilon, delta, axis, max_ratio, argmax_lag,
//!   limit, pass. The mollified covariance is a product of one-dimensional
//!   factors, so on a lag grid (time lag u, space lag v) the largest value of
//!   Q_{ε,δ}/(γ₀γ) is the product of the per-axis maxima. Time factors are taken
//!   at (0, u), space factors at (−v/2, v/2). Dirac axes have no pointwise value;
//!   for them the total mass ∫F(0, r)dr is compared with 1.

use crate::error::CliResult;
use crate::record::{flag, num, Run, Table};
use std::f64::consts::PI;
use wickheat::chaos::{chaos_variance_bound, fn_kernel, moment_bound_upper, moment_exponents};
use wickheat::covariance::{beta_exponent, CovarianceSpec, HalfKernel, SmoothedAxis, SmoothingParams, SpatialKernel, TemporalKernel};
use wickheat::gaussian_field::{kl_decompose, LatticeSpec};
use wickheat::malliavin::{du_kth_time_exponent, du_negative_moment_bound, lambda_b_point};
use wickheat::paths::{heat_convolve, heat_kernel, heat_kernel_1d, InitialDatum};
use wickheat::quadrature::tanh_sinh_to_infinity;
use wickheat::stats::Estimate;
use wickheat::tails_density::{
    density_exponents, empirical_survival, kde, lambda_b_global, paley_zygmund_margin, right_tail_exponents, small_ball_bound, tail_lower,
    tail_upper, u_negative_moment_bound, MomentEnvelope, SmallBallParams,
};

/// Relative tolerance of the closed-form examples.
const EXAMPLE_TOL: f64 = 1e-12;
/// Largest lattice axis used in the KL check (intervals per axis).
const KL_MAX_INTERVALS: usize = 32;
const KL_LIMIT: f64 = 1.0 + 1e-8;

/// The three kernel families checked by the deterministic suite.
pub fn families() -> Vec<(&'static str, CovarianceSpec)> {
    let build = |t, s| CovarianceSpec::new(t, s).expect("family parameters are valid");
    vec![
        ("white", CovarianceSpec::white()),
        ("power_law", build(TemporalKernel::power_law(0.5), SpatialKernel::riesz(0.5))),
        ("fractional", build(TemporalKernel::Fractional { hurst: 0.7 }, SpatialKernel::FractionalProduct { hurst: vec![0.7] })),
    ]
}

pub(super) fn run(run: &mut Run) -> CliResult<()> {
    let vc = run.config.validate.clone();
    let mut ex = Table::new("validate_examples", &["check", "value", "expected", "abs_error", "pass"]);
    for (name, value, expected) in examples()? {
        let err = (value - expected).abs();
        let ok = err <= EXAMPLE_TOL * expected.abs().max(1.0);
        ex.push(vec![name.to_string(), num(value), num(expected), num(err), flag(ok)]);
        run.check(format!("example {name}"), ok, format!("{value} vs {expected}"));
    }
    run.emit(&ex)?;

    let mut kl = Table::new("validate_kl", &["family", "epsilon", "delta", "nodes", "max_eigenvalue", "limit", "pass"]);
    let mut ub = Table::new("validate_uniform_bound", &["family", "epsilon", "delta", "axis", "max_ratio", "argmax_lag", "limit", "pass"]);
    let lags = log_lags(vc.lag_min, vc.lag_max, vc.lag_points);
    for (fam, spec) in families() {
        for &eps in &vc.kl_smoothing {
            for &delta in &vc.kl_smoothing {
                let sp = SmoothingParams::new(eps, delta)?;
                let (nodes, top) = kl_max_eigenvalue(&spec, &sp)?;
                let ok = top <= KL_LIMIT;
                kl.push(vec![fam.into(), num(eps), num(delta), nodes.to_string(), num(top), num(KL_LIMIT), flag(ok)]);
                run.check(format!("kl eigenvalue {fam} eps={eps} delta={delta}"), ok, format!("max eigenvalue {top}"));

                let limit = 1.0 + vc.bound_rel_tol;
                let rows = uniform_bound_ratios(&spec, &sp, &lags)?;
                let product: f64 = rows.iter().map(|r| r.max_ratio).product();
                for r in &rows {
                    ub.push(vec![fam.into(), num(eps), num(delta), r.axis.into(), num(r.max_ratio), num(r.argmax), num(limit), flag(r.max_ratio <= limit)]);
                }
                let ok = product <= limit;
                ub.push(vec![fam.into(), num(eps), num(delta), "product".into(), num(product), String::new(), num(limit), flag(ok)]);
                run.check(format!("uniform bound {fam} eps={eps} delta={delta}"), ok, format!("max ratio {product}"));
            }
        }
    }
    run.emit(&kl)?;
    run.emit(&ub)
}

fn log_lags(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Lattice of spacing 2^{−k} ≤ half the smallest mollifier standard deviation,
/// at most `KL_MAX_INTERVALS` intervals per axis; returns (nodes, λ_max).
pub fn kl_max_eigenvalue(spec: &CovarianceSpec, sp: &SmoothingParams) -> CliResult<(usize, f64)> {
    let sd = (2.0 * sp.epsilon.min(sp.delta)).sqrt();
    let mut h = 1.0;
    while h > 0.5 * sd {
        h *= 0.5;
    }
    let n = ((2.0 / h).round() as usize).min(KL_MAX_INTERVALS);
    let lattice = LatticeSpec::new(h, n as f64 * h, h, 0.5 * n as f64 * h, spec.dim())?;
    let kl = kl_decompose(spec, sp, &lattice)?;
    Ok((lattice.node_count(), kl.eigenvalues.first().copied().unwrap_or(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRatio {
    pub axis: &'static str,
    pub max_ratio: f64,
    /// Lag of the maximum; NaN for mass comparisons.
    pub argmax: f64,
}

/// Per-axis maxima of the mollified factor over the unsmoothed kernel on `lags`.
pub fn uniform_bound_ratios(spec: &CovarianceSpec, sp: &SmoothingParams, lags: &[f64]) -> CliResult<Vec<AxisRatio>> {
    let fk = spec.factorization()?;
    let mut out = Vec::new();
    let temporal = SmoothedAxis::new(fk.temporal, sp.delta);
    out.push(axis_ratio("time", &temporal, lags, |u| spec.temporal.eval(u), true)?);
    for (i, h) in fk.spatial_axes()?.iter().enumerate() {
        let axis = SmoothedAxis::new(*h, sp.epsilon);
        let name = if i == 0 { "space" } else { "space_extra" };
        let one_axis = |v: f64| -> wickheat::Result<f64> {
            match &spec.spatial {
                SpatialKernel::FractionalProduct { hurst } => Ok(fractional(hurst[i], v)),
                _ => spec.spatial.eval(&[v]),
            }
        };
        out.push(axis_ratio(name, &axis, lags, one_axis, false)?);
    }
    Ok(out)
}

fn fractional(h: f64, v: f64) -> f64 {
    h * (2.0 * h - 1.0) * v.abs().powf(2.0 * h - 2.0)
}

fn axis_ratio<G>(axis: &'static str, sm: &SmoothedAxis, lags: &[f64], gamma: G, anchored: bool) -> CliResult<AxisRatio>
where
    G: Fn(f64) -> wickheat::Result<f64>,
{
    match sm.half {
        HalfKernel::Zero => Ok(AxisRatio { axis, max_ratio: 0.0, argmax: f64::NAN }),
        HalfKernel::Dirac => {
            let f = |r: f64| sm.factor(0.0, r).unwrap_or(f64::NAN);
            let right = tanh_sinh_to_infinity(f, 0.0, 1e-12)?.value;
            let left = tanh_sinh_to_infinity(|r| f(-r), 0.0, 1e-12)?.value;
            Ok(AxisRatio { axis, max_ratio: left + right, argmax: f64::NAN })
        }
        HalfKernel::Power { .. } => {
            let mut best = AxisRatio { axis, max_ratio: f64::NEG_INFINITY, argmax: f64::NAN };
            for &lag in lags {
                let (a, b) = if anchored { (0.0, lag) } else { (-0.5 * lag, 0.5 * lag) };
                let r = sm.factor(a, b)? / gamma(lag)?;
                if r > best.max_ratio {
                    best.max_ratio = r;
                    best.argmax = lag;
                }
            }
            Ok(best)
        }
    }
}

/// (name, computed, expected) for closed-form evaluator examples.
fn examples() -> CliResult<Vec<(&'static str, f64, f64)>> {
    let white = CovarianceSpec::white();
    let one = InitialDatum::constant(1.0)?;
    let unit = |v: f64| MomentEnvelope::new(1.0, 1.0, 1.0, 1.0, v);
    let neg = 2.0 * (2.0 * 16f64.ln().sqrt()).exp() * (1.0 + 4.0 * PI.sqrt() * 1f64.exp());
    let lb = lambda_b_point(Estimate::new(1.0, 0.0), Estimate::new(1.0, 0.0), Estimate::new(1.0, 0.0))?;
    let g = lambda_b_global(&[1.0], &[Estimate::new(1.0, 0.0)], &[Estimate::new(1.0, 0.0)])?;
    let dirac_eta = SmoothedAxis::new(HalfKernel::Dirac, 1.0);
    let (mp, mt) = moment_exponents(&white);
    let (ry, rt) = right_tail_exponents(&white);
    let (dy, dt, dp) = density_exponents(&white);
    let h = 0.3;
    Ok(vec![
        ("power_law gamma0(4)", TemporalKernel::power_law(0.5).eval(4.0)?, 0.5),
        ("fractional gamma0(1) H=0.75", TemporalKernel::Fractional { hurst: 0.75 }.eval(1.0)?, 0.375),
        ("power_law gamma0(1)", TemporalKernel::power_law(0.5).eval(1.0)?, 1.0),
        ("riesz gamma(4)", SpatialKernel::riesz(0.5).eval(&[4.0])?, 0.5),
        ("fractional_product gamma(1)", SpatialKernel::FractionalProduct { hurst: vec![0.75] }.eval(&[1.0])?, 0.375),
        ("beta white", beta_exponent(1.0, 1.0), 1.0),
        ("beta 0.5 0.5", beta_exponent(0.5, 0.5), 5.0 / 3.0),
        ("smoothed dirac eta(0,0)", dirac_eta.eta(0.0, 0.0)?, 1.0 / (2.0 * PI).sqrt()),
        ("smoothed dirac eta(1,1)", dirac_eta.eta(1.0, 1.0)?, (-0.5f64).exp() / (2.0 * PI).sqrt()),
        ("heat kernel normalization", heat_kernel(1.0 / (2.0 * PI), &[0.0])?, 1.0),
        ("gaussian heat convolution", heat_convolve(&InitialDatum::gaussian(1.0, 1.0)?, 1.0, &[0.0])?, 0.5f64.sqrt()),
        (
            "chaos kernel n=2",
            fn_kernel(&one, 1.0, &[0.0], &[0.25, 0.75], &[vec![0.0], vec![0.0]])?,
            0.5 * heat_kernel_1d(0.25, 0.0) * heat_kernel_1d(0.5, 0.0),
        ),
        (
            "chaos bound ratio 4t/t",
            chaos_variance_bound(1, &white, 4.0, &[0.0], &one, 1.0)? / chaos_variance_bound(1, &white, 1.0, &[0.0], &one, 1.0)?,
            2.0,
        ),
        ("moment exponent of p", mp, 3.0),
        ("moment exponent of t", mt, 1.0),
        ("moment bound p=1 C2=0", moment_bound_upper(1.0, 1.0, &white, 1.0, &[0.0], &one, 1.0, 0.0)?, 1.0),
        (
            "moment bound ratio p=2/p=1",
            moment_bound_upper(2.0, 1.0, &white, 1.0, &[0.0], &one, 1.0, 1.0)? / moment_bound_upper(1.0, 1.0, &white, 1.0, &[0.0], &one, 1.0, 1.0)?,
            7f64.exp(),
        ),
        ("lambda unit plug-in", lb.lambda, 32.0),
        ("b unit plug-in", lb.b, 0.125),
        ("du negative moment p=0", du_negative_moment_bound(0.0, 1.0, 0.125, 1.0)?, 1.0),
        ("du negative moment p=1", du_negative_moment_bound(1.0, 1.0, 0.125, 1.0)?, neg),
        ("du time exponent k=1 p=2", du_kth_time_exponent(1, 2.0, &white), 0.5),
        ("paley-zygmund constant", paley_zygmund_margin(&[1.0; 8], 0.5)?.margin, 0.75),
        ("paley-zygmund two-point", paley_zygmund_margin(&[0.0, 2.0, 0.0, 2.0], 0.5)?.margin, 0.375),
        ("tail_upper rho=2 a=e^4", tail_upper(4f64.exp(), &unit(2.0)?)?, (-4f64).exp()),
        ("tail_lower rho=2 a=e/2", tail_lower(0.5 * 1f64.exp(), &unit(2.0)?)?, 0.25 * (-2f64).exp()),
        ("right-tail exponent of log a", ry, 1.5),
        ("right-tail exponent of t", rt, -0.5),
        ("global lambda toy", g.params.lambda, 32.0),
        ("global b toy", g.params.b, 0.125),
        (
            "small ball r=e^-8/2",
            small_ball_bound(0.5 * (-8f64).exp(), &SmallBallParams::new(1.0, 2.0 * (-4f64).exp())?)?,
            2.0 * (-4f64).exp(),
        ),
        ("u negative moment p=0", u_negative_moment_bound(0.0, &SmallBallParams::new(1.0, 0.125)?, 1.0)?, 1.0),
        ("u negative moment p=1", u_negative_moment_bound(1.0, &SmallBallParams::new(1.0, 0.125)?, 1.0)?, neg),
        ("survival {1,2,3,4} at 2.5", empirical_survival(&[1.0, 2.0, 3.0, 4.0], 2.5)?.value, 0.5),
        ("kde single sample", kde(&[0.0], h, 0.0)?, 1.0 / (2.0 * PI * h * h).sqrt()),
        ("density exponent of log y", dy, 1.5),
        ("density exponent of t", dt, -0.5),
        ("density prefactor exponent", dp, -0.25),
    ])
}
