//! `tails`: outer ensembles, Paley–Zygmund margins, right-tail and small-ball
//! domination tables, negative moments of u.
//!
//! Tables (all prefixed by t, x):
//! - tails_ensemble: index, value, inner_se, field_seed
//! - tails_pz: theta, margin, band, dominated_flag (margin ≥ −3·band)
//! - tails_right / tails_small_ball: abscissa, empirical, empirical_ci_low,
//!   empirical_ci_high, bound, dominated_flag (ci_low ≤ bound)
//! - tails_negative_moments: p, empirical, se, bound, dominated_flag
//! - tails_params: fitted κ's, λ(t), b(t), thresholds
//!
//! Abscissae outside the validity region of a bound get `out-of-domain` in the
//! bound column and count as dominated.

use super::{ensemble_at, ensemble_table, log_grid_below, point_label};
use crate::error::CliResult;
use crate::record::{flag, num, point, Run, Table, OUT_OF_DOMAIN};
use wickheat::feynman_kac::{first_moment, moment_k, FkContext, MomentMode};
use wickheat::stats::{mean_se, quantile_sorted, sorted, Estimate};
use wickheat::tails_density::{
    empirical_moments, empirical_small_ball, empirical_survival, fit_lower_envelope, fit_upper_envelope, lambda_b_global,
    paley_zygmund_margin, small_ball_bound, tail_upper, u_negative_moment_bound, MomentEnvelope,
};
use wickheat::Error;

const BAND_HEADER: [&str; 8] = ["t", "x", "abscissa", "empirical", "empirical_ci_low", "empirical_ci_high", "bound", "dominated_flag"];

/// Decades spanned by the small-ball abscissae below r*.
const SMALL_BALL_DECADES: f64 = 3.0;

const KAPPA2_FLOOR: f64 = 1e-12;

pub(super) fn run(run: &mut Run) -> CliResult<()> {
    let cfg = run.config.clone();
    let spec = cfg.spec()?;
    let sp = cfg.smoothing_params()?;
    let u0 = cfg.initial_datum()?;
    let tc = cfg.tails.clone();
    let n_mc = run.scaled(cfg.budget.n_mc);

    let mut ens_t = ensemble_table("tails_ensemble");
    let mut pz_t = Table::new("tails_pz", &["t", "x", "theta", "margin", "band", "dominated_flag"]);
    let mut right_t = Table::new("tails_right", &BAND_HEADER);
    let mut sb_t = Table::new("tails_small_ball", &BAND_HEADER);
    let mut neg_t = Table::new("tails_negative_moments", &["t", "x", "p", "empirical", "se", "bound", "dominated_flag"]);
    let mut par_t = Table::new(
        "tails_params",
        &["t", "x", "kappa1", "kappa2", "kappa1_lower", "kappa2_lower", "rho", "upper_threshold", "lambda", "b", "b_clamped", "r_star"],
    );

    for (ti, &t) in cfg.grid.t.iter().enumerate() {
        // λ(t), b(t) take a supremum over the x-grid, so all points of this t come first.
        let mut contexts = Vec::new();
        let (mut pt, mut m2, mut m2s) = (Vec::new(), Vec::new(), Vec::new());
        for (xi, x) in cfg.grid.x.iter().enumerate() {
            let ctx = FkContext::new(&spec, &sp, &cfg.lattice_for(t, x, spec.dim())?, u0.clone())?;
            let mode = MomentMode::Smoothed(Box::new(ctx.clone()));
            let seed = run.seed(&format!("second_moment/{}", point_label(ti, xi)));
            pt.push(first_moment(&u0, t, x)?);
            m2.push(moment_k(2, t, x, &spec, &u0, n_mc, seed, 1.0, &mode)?.estimate);
            m2s.push(moment_k(2, t, x, &spec, &u0, n_mc, seed, std::f64::consts::SQRT_2, &mode)?.estimate);
            contexts.push(ctx);
        }
        let global = lambda_b_global(&pt, &m2, &m2s);
        if let Err(e) = &global {
            run.check(format!("tails t={t} small-ball parameters"), false, e.to_string());
        }

        for (xi, x) in cfg.grid.x.iter().enumerate() {
            let label = point_label(ti, xi);
            let name = |what: &str| format!("tails t={t} x={} {what}", point(x));
            let ens = ensemble_at(run, &contexts[xi], t, x, &label, &mut ens_t)?;
            let vals = ens.values();
            let s = sorted(&vals);
            let m = pt[xi];

            for &theta in &tc.thetas {
                match paley_zygmund_margin(&vals, theta) {
                    Ok(pz) => {
                        let ok = pz.margin >= -3.0 * pz.band;
                        pz_t.push(vec![num(t), point(x), num(theta), num(pz.margin), num(pz.band), flag(ok)]);
                        run.check(name(&format!("paley-zygmund theta={theta}")), ok, format!("margin {:e} band {:e}", pz.margin, pz.band));
                    }
                    Err(e) => run.check(name(&format!("paley-zygmund theta={theta}")), false, e.to_string()),
                }
            }

            let moments = empirical_moments(&vals, &tc.moment_orders);
            let up = fit_upper_envelope(&moments, tc.rho)?;
            let lo = fit_lower_envelope(&moments, tc.rho).unwrap_or(up);
                    // Degenerate ensembles fit κ₂ = 0; raising κ₂ only loosens the upper bound.
            let k2 = up.kappa2.max(KAPPA2_FLOOR);
            let env = MomentEnvelope::new(up.kappa1, lo.kappa1.min(up.kappa1), k2, lo.kappa2.clamp(KAPPA2_FLOOR, k2), tc.rho)?;
            let q99 = quantile_sorted(&s, 0.99);
            let top = s[s.len() - 1];
            let n_right = if top > q99 { tc.right_points.max(1) } else { 1 };
            for j in 0..n_right {
                let a = if n_right == 1 { q99 } else { q99 + (top - q99) * j as f64 / (n_right - 1) as f64 };
                let f = empirical_survival(&vals, a)?;
                let (bound, ok) = match tail_upper(a, &env) {
                    Ok(b) => (num(b), f.low <= b),
                    Err(Error::BelowValidityThreshold { .. }) => (OUT_OF_DOMAIN.to_string(), true),
                    Err(e) => return Err(e.into()),
                };
                right_t.push(vec![num(t), point(x), num(a), num(f.value), num(f.low), num(f.high), bound.clone(), flag(ok)]);
                run.check(name(&format!("right tail a={a}")), ok, format!("empirical {:e} bound {bound}", f.value));
            }

            let (lambda, b, clamped, r_star) = match &global {
                Ok(g) => (g.params.lambda, g.params.b, g.clamped, g.params.threshold()),
                Err(_) => (f64::NAN, f64::NAN, false, f64::NAN),
            };
            par_t.push(vec![
                num(t),
                point(x),
                num(env.kappa1),
                num(env.kappa2),
                num(env.kappa1_lower),
                num(env.kappa2_lower),
                num(env.rho),
                num(env.upper_threshold()),
                num(lambda),
                num(b),
                flag(clamped),
                num(r_star),
            ]);

            let Ok(g) = &global else { continue };
            for r in log_grid_below(r_star, tc.small_ball_points.max(1), SMALL_BALL_DECADES) {
                let f = empirical_small_ball(&vals, r, m)?;
                let bound = small_ball_bound(r, &g.params)?;
                let ok = f.low <= bound;
                sb_t.push(vec![num(t), point(x), num(r), num(f.value), num(f.low), num(f.high), num(bound), flag(ok)]);
                run.check(name(&format!("small ball r={r}")), ok, format!("empirical {:e} bound {bound:e}", f.value));
            }
            for &p in &tc.negative_p {
                let e: Estimate = mean_se(&vals.iter().map(|v| v.powf(-p)).collect::<Vec<_>>());
                let bound = u_negative_moment_bound(p, &g.params, m)?;
                let ok = e.value - 3.0 * e.se <= bound;
                neg_t.push(vec![num(t), point(x), num(p), num(e.value), num(e.se), num(bound), flag(ok)]);
                run.check(name(&format!("negative moment p={p}")), ok, format!("empirical {:e} bound {bound:e}", e.value));
            }
        }
    }
    for t in [&ens_t, &pz_t, &right_t, &sb_t, &neg_t, &par_t] {
        run.emit(t)?;
    }
    Ok(())
}
