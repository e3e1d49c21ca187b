//! `malliavin`: moments of Z = ‖Du‖²_H, λ(t,x) and b(t,x), scaling,
//! small-ball and negative-moment checks.
//!
//! Tables:
//! - malliavin_scaling: t, ez, se (common seed across t, fine path resolution)
//! - malliavin_lambda_b: t, x, ez, ez_se, ez2, ez2_se, tilde_i, tilde_i_se,
//!   lambda, b, b_clamped, lambda_envelope, b_envelope, dominated_flag.
//!   Envelope constants (C₁, c₁) and (C₂, c₂) are fitted at the two smallest
//!   times, domination is checked at the rest.
//! - malliavin_z_ensemble: t, x, index, value, se, field_seed (conditioned Z_{ε,δ})
//! - malliavin_small_ball: t, x, abscissa, empirical, CI, bound, dominated_flag;
//!   P(Z < r·E Z) against the small-ball bound with plug-in λ, b of Z_{ε,δ}
//! - malliavin_negative_moments: t, x, p, empirical, se, bound, dominated_flag
//! - malliavin_summary: check, value, target, pass

use super::{log_grid_below, point_label};
use crate::error::CliResult;
use crate::record::{flag, num, point, Run, Table};
use rayon::prelude::*;
use wickheat::covariance::Regularization;
use wickheat::feynman_kac::{FkContext, MomentMode};
use wickheat::malliavin::{
    du_lambda_b_envelope, du_negative_moment_bound, lambda_b_point, tilde_i, z_conditioned, z_first_moment,
    z_second_moment, EnvelopeConstants, LambdaB,
};
use wickheat::stats::{linear_fit, mean_se, Estimate};
use wickheat::tails_density::{empirical_small_ball, small_ball_bound, SmallBallParams};

const SMALL_BALL_DECADES: f64 = 3.0;

pub(super) fn run(run: &mut Run) -> CliResult<()> {
    let cfg = run.config.clone();
    let mc = cfg.malliavin.clone();
    let spec = cfg.spec()?;
    let sp = cfg.smoothing_params()?;
    let u0 = cfg.initial_datum()?;
    let n_mc = run.scaled(cfg.budget.n_mc);
    let mut summary = Table::new("malliavin_summary", &["check", "value", "target", "pass"]);

    // Scaling of E Z in t.
    let x0 = cfg.grid.x[0].clone();
    let fine = MomentMode::Unsmoothed(Regularization { steps_per_unit: mc.scaling_steps_per_unit, dx: mc.scaling_dx });
    let seed = run.seed("scaling");
    let n_scaling = run.scaled(mc.scaling_n_mc);
    let mut scaling = Table::new("malliavin_scaling", &["t", "x", "ez", "se"]);
    let mut ez_t = Vec::new();
    for &t in &mc.scaling_t {
        let e = z_first_moment(t, &x0, &spec, &u0, n_scaling, seed, &fine)?.estimate;
        scaling.push(vec![num(t), point(&x0), num(e.value), num(e.se)]);
        ez_t.push(e.value);
    }
    let target = 2.0 - spec.alpha0() - spec.alpha() / 2.0;
    let (slope, ok) = if spec.is_zero() {
        (f64::NAN, ez_t.iter().all(|&v| v == 0.0))
    } else {
        let lt: Vec<f64> = mc.scaling_t.iter().map(|t| t.ln()).collect();
        let lz: Vec<f64> = ez_t.iter().map(|v| v.ln()).collect();
        let s = linear_fit(&lt, &lz).slope;
        (s, (s - target).abs() <= mc.scaling_tolerance)
    };
    summary.push(vec!["scaling_slope".into(), num(slope), num(target), flag(ok)]);
    run.check("malliavin scaling slope", ok, format!("slope {slope} target {target} ± {}", mc.scaling_tolerance));
    run.emit(&scaling)?;

    // λ(t,x), b(t,x) and their envelopes.
    let reg_mode = MomentMode::Unsmoothed(cfg.regularization.to_regularization());
    let mut lb_t = Table::new(
        "malliavin_lambda_b",
        &[
            "t", "x", "ez", "ez_se", "ez2", "ez2_se", "tilde_i", "tilde_i_se", "lambda", "b", "b_clamped", "lambda_envelope", "b_envelope",
            "dominated_flag",
        ],
    );
    let mut env_ok = true;
    if !spec.is_zero() {
        let mut ts = mc.envelope_t.clone();
        ts.sort_by(|a, b| a.total_cmp(b));
        for (xi, x) in cfg.grid.x.iter().enumerate() {
            let mut rows = Vec::new();
            for (ti, &t) in ts.iter().enumerate() {
                let label = format!("lambda_b/{}", point_label(ti, xi));
                let seed = run.seed(&label);
                let m = moments(t, x, &spec, &u0, n_mc, seed, &reg_mode)?;
                rows.push((t, m));
            }
            let k = fit_envelope(&rows, &spec);
            run.note(format!(
                "envelope at x={}: C1={} c1={} C2={} c2={}",
                point(x),
                num(k.c1_upper),
                num(k.c1),
                num(k.c2_upper),
                num(k.c2)
            ));
            for (t, m) in &rows {
                let (le, be) = du_lambda_b_envelope(*t, &spec, &k);
                let ok = m.lb.lambda <= le * (1.0 + 1e-9) && m.lb.b >= be * (1.0 - 1e-9);
                env_ok &= ok;
                lb_t.push(vec![
                    num(*t),
                    point(x),
                    num(m.ez.value),
                    num(m.ez.se),
                    num(m.ez2.value),
                    num(m.ez2.se),
                    num(m.tilde.value),
                    num(m.tilde.se),
                    num(m.lb.lambda),
                    num(m.lb.b),
                    flag(m.lb.clamped),
                    num(le),
                    num(be),
                    flag(ok),
                ]);
                run.check(format!("malliavin envelope t={t} x={}", point(x)), ok, format!("lambda {} <= {le}, b {} >= {be}", m.lb.lambda, m.lb.b));
            }
        }
    }
    summary.push(vec!["envelope_domination".into(), num(if env_ok { 1.0 } else { 0.0 }), num(1.0), flag(env_ok)]);
    run.emit(&lb_t)?;

    // Conditioned Z ensemble for small-ball and negative moments.
    let t = mc.small_ball_t;
    let mut z_t = Table::new("malliavin_z_ensemble", &["t", "x", "index", "value", "se", "field_seed"]);
    let mut sb_t = Table::new(
        "malliavin_small_ball",
        &["t", "x", "abscissa", "empirical", "empirical_ci_low", "empirical_ci_high", "bound", "dominated_flag"],
    );
    let mut neg_t = Table::new("malliavin_negative_moments", &["t", "x", "p", "empirical", "se", "bound", "dominated_flag"]);
    let (mut sb_ok, mut neg_ok) = (true, true);
    for (xi, x) in cfg.grid.x.iter().enumerate() {
        if spec.is_zero() {
            continue;
        }
        let ctx = FkContext::new(&spec, &sp, &cfg.lattice_for(t, x, spec.dim())?, u0.clone())?;
        let label = point_label(0, xi);
        let smoothed = MomentMode::Smoothed(Box::new(ctx.clone()));
        let mseed = run.seed(&format!("smoothed_moments/{label}"));
        let m = moments(t, x, &spec, &u0, n_mc, mseed, &smoothed)?;
        let n_fields = run.scaled(cfg.budget.n_fields);
        let n_pairs = run.scaled(mc.n_pairs);
        let (fs, ps) = (run.seed(&format!("z_field/{label}")), run.seed(&format!("z_pairs/{label}")));
        let zs = (0..n_fields as u64)
            .into_par_iter()
            .map(|i| {
                let field = ctx.sample_field(fs.index(i))?;
                Ok((z_conditioned(&ctx, t, x, &field, n_pairs, ps.index(i))?, field.seed))
            })
            .collect::<wickheat::Result<Vec<(Estimate, Option<u64>)>>>()?;
        for (i, (z, s)) in zs.iter().enumerate() {
            z_t.push(vec![num(t), point(x), i.to_string(), num(z.value), num(z.se), s.map(|v| v.to_string()).unwrap_or_default()]);
        }
        let vals: Vec<f64> = zs.iter().map(|(z, _)| z.value).collect();
        let params = SmallBallParams::new(m.lb.lambda, m.lb.b)?;
        for r in log_grid_below(params.threshold(), mc.small_ball_points.max(1), SMALL_BALL_DECADES) {
            let f = empirical_small_ball(&vals, r, m.ez.value)?;
            let bound = small_ball_bound(r, &params)?;
            let ok = f.low <= bound;
            sb_ok &= ok;
            sb_t.push(vec![num(t), point(x), num(r), num(f.value), num(f.low), num(f.high), num(bound), flag(ok)]);
            run.check(format!("malliavin small ball t={t} x={} r={r}", point(x)), ok, format!("empirical {:e} bound {bound:e}", f.value));
        }
        for &p in &mc.negative_p {
            let e = mean_se(&vals.iter().map(|v| v.powf(-p)).collect::<Vec<_>>());
            let bound = du_negative_moment_bound(p, m.lb.lambda, m.lb.b, m.ez.value)?;
            let ok = e.value - 3.0 * e.se <= bound;
            neg_ok &= ok;
            neg_t.push(vec![num(t), point(x), num(p), num(e.value), num(e.se), num(bound), flag(ok)]);
            run.check(format!("malliavin negative moment t={t} x={} p={p}", point(x)), ok, format!("empirical {:e} bound {bound:e}", e.value));
        }
    }
    summary.push(vec!["small_ball_domination".into(), num(if sb_ok { 1.0 } else { 0.0 }), num(1.0), flag(sb_ok)]);
    summary.push(vec!["negative_moment_domination".into(), num(if neg_ok { 1.0 } else { 0.0 }), num(1.0), flag(neg_ok)]);
    for t in [&z_t, &sb_t, &neg_t] {
        run.emit(t)?;
    }
    run.emit(&summary)
}

struct ZMoments {
    ez: Estimate,
    ez2: Estimate,
    tilde: Estimate,
    lb: LambdaB,
}

fn moments(
    t: f64,
    x: &[f64],
    spec: &wickheat::covariance::CovarianceSpec,
    u0: &wickheat::paths::InitialDatum,
    n_mc: usize,
    seed: wickheat::Seed,
    mode: &MomentMode,
) -> CliResult<ZMoments> {
    let ez = z_first_moment(t, x, spec, u0, n_mc, seed.child("ez"), mode)?.estimate;
    let ez2 = z_second_moment(t, x, spec, u0, n_mc, seed.child("ez2"), mode)?.estimate;
    let tilde = tilde_i(t, x, spec, u0, n_mc, seed.child("tilde"), mode)?.estimate;
    let lb = lambda_b_point(ez, ez2, tilde)?;
    Ok(ZMoments { ez, ez2, tilde, lb })
}

/// Two-point fit of log λ − e·log t = log C₁ + c₁t^β and log b = log C₂ − c₂t^β
/// at the two smallest times, with c₁, c₂ ≥ 0 and C₁ (C₂) raised (lowered) to
/// cover both points.
fn fit_envelope(rows: &[(f64, ZMoments)], spec: &wickheat::covariance::CovarianceSpec) -> EnvelopeConstants {
    let e = 2.0 - spec.alpha0() - spec.alpha() / 2.0;
    let tb = |t: f64| t.powf(spec.beta());
    let y = |t: f64, m: &ZMoments| m.lb.lambda.ln() - e * t.ln();
    let z = |m: &ZMoments| m.lb.b.ln();
    let fit = &rows[..rows.len().min(2)];
    let (c1, c2) = match fit {
        [(t0, m0), (t1, m1)] => {
            let dt = tb(*t1) - tb(*t0);
            (((y(*t1, m1) - y(*t0, m0)) / dt).max(0.0), ((z(m0) - z(m1)) / dt).max(0.0))
        }
        _ => (0.0, 0.0),
    };
    let c1_upper = fit.iter().map(|(t, m)| (y(*t, m) - c1 * tb(*t)).exp()).fold(0.0, f64::max);
    let c2_upper = fit.iter().map(|(t, m)| (z(m) + c2 * tb(*t)).exp()).fold(f64::INFINITY, f64::min);
    EnvelopeConstants { c1_upper, c1, c2_upper, c2 }
}
