//! `density`: log-scale KDE of u(t,x) against the right- and left-tail envelopes.
//!
//! Right regime: y at evenly spaced quantiles of the top decile (y > 1 only),
//! regression of log KDE on (log y)^{(4−α)/2}. Envelope constants are fitted at
//! the first evaluation point: the upper envelope decays at half the fitted rate,
//! the lower one at twice it, and domination is then checked at the other points.
//! Left regime: y = q₀.₀₁·k/3, k = 1, 2, 3, with the KDE required to decrease
//! toward 0; the left bound (c₁ = 1, c₂ = 0) has C fitted at the largest point.
//!
//! Tables: density (t, x, regime, y, kde, bound_upper, bound_lower, dominated_flag),
//! density_shape (t, x, statistic, value, threshold, pass), density_ensemble.
//! With `injected_normal` the ensemble is replaced by standard-normal samples and
//! only density_injected (y, kde, analytic, relative_error, pass) is written.

use super::{ensemble_at, ensemble_table, point_label};
use crate::error::CliResult;
use crate::record::{flag, num, point, Run, Table};
use rand_distr::StandardNormal;
use wickheat::feynman_kac::{first_moment, FkContext};
use wickheat::stats::{linear_fit, quantile_sorted, sorted};
use wickheat::tails_density::{
    density_envelopes, density_exponents, kde, left_tail_density_bound, silverman_bandwidth, DensityEnvelope, LeftTailConstants, LogKde,
};

/// Relative tolerance of the injected-normal KDE check at 0.
const INJECTED_TOL: f64 = 0.02;

pub(super) fn run(run: &mut Run) -> CliResult<()> {
    if run.config.density.injected_normal {
        return injected(run);
    }
    let cfg = run.config.clone();
    let dc = cfg.density.clone();
    let spec = cfg.spec()?;
    let sp = cfg.smoothing_params()?;
    let u0 = cfg.initial_datum()?;
    let (ey, et, ep) = density_exponents(&spec);

    let mut ens_t = ensemble_table("density_ensemble");
    let mut dens_t = Table::new("density", &["t", "x", "regime", "y", "kde", "bound_upper", "bound_lower", "dominated_flag"]);
    let mut shape_t = Table::new("density_shape", &["t", "x", "statistic", "value", "threshold", "pass"]);

    for (ti, &t) in cfg.grid.t.iter().enumerate() {
        for (xi, x) in cfg.grid.x.iter().enumerate() {
            let name = |what: &str| format!("density t={t} x={} {what}", point(x));
            let ctx = FkContext::new(&spec, &sp, &cfg.lattice_for(t, x, spec.dim())?, u0.clone())?;
            let ens = ensemble_at(run, &ctx, t, x, &point_label(ti, xi), &mut ens_t)?;
            let vals = ens.values();
            let s = sorted(&vals);
            let lk = LogKde::new(&vals)?;
            let m = first_moment(&u0, t, x)?;

            // Right regime.
            let mut ys: Vec<f64> = (0..dc.right_points)
                .map(|j| {
                    let f = if dc.right_points == 1 { 0.0 } else { j as f64 / (dc.right_points - 1) as f64 };
                    quantile_sorted(&s, dc.right_quantile_low + (dc.right_quantile_high - dc.right_quantile_low) * f)
                })
                .filter(|&y| y > 1.0)
                .collect();
            ys.dedup();
            let dens: Vec<f64> = ys.iter().map(|&y| lk.density(y)).collect::<Result<_, _>>()?;
            let usable: Vec<(f64, f64)> = ys.iter().zip(&dens).filter(|(_, &d)| d > 0.0).map(|(&y, &d)| (y, d)).collect();
            let (slope, r2) = if usable.len() >= 3 {
                let xs: Vec<f64> = usable.iter().map(|(y, _)| y.ln().powf(ey)).collect();
                let ls: Vec<f64> = usable.iter().map(|(_, d)| d.ln()).collect();
                let fit = linear_fit(&xs, &ls);
                (fit.slope, fit.r2)
            } else {
                (f64::NAN, f64::NAN)
            };
            let slope_ok = slope < 0.0;
            let r2_ok = r2 >= dc.min_r2;
            shape_t.push(vec![num(t), point(x), "right_slope".into(), num(slope), num(0.0), flag(slope_ok)]);
            shape_t.push(vec![num(t), point(x), "right_r2".into(), num(r2), num(dc.min_r2), flag(r2_ok)]);
            run.check(name("right-tail slope"), slope_ok, format!("slope {slope:e}"));
            run.check(name("right-tail R2"), r2_ok, format!("R2 {r2:e} over {} points", usable.len()));

            if slope_ok && !usable.is_empty() {
                let rate = -slope * t.powf(-et);
                let y0 = usable[0].0;
                let core = |c2: f64, y: f64| (-c2 * t.powf(et) * y.ln().powf(ey)).exp();
                let (c2u, c2l) = (0.5 * rate, 2.0 * rate);
                let c1u = usable[0].1 / (t.powf(ep) * core(c2u, y0));
                let c1l = usable
                    .iter()
                    .find(|(y, _)| *y > m + 1.0)
                    .map(|&(y, d)| d / (t.powf(et) * core(c2l, y)))
                    .unwrap_or(1.0);
                let de = DensityEnvelope::new([c1u, c2u, 1.0], [c1l, c2l, 1.0], y0, 0.0)?;
                for &(y, d) in &usable {
                    let (lower, upper) = density_envelopes(y, t, &spec, &de, m)?;
                    let ok = d <= upper * (1.0 + 1e-9) && lower.is_none_or(|l| d >= l * (1.0 - 1e-9));
                    let lo = lower.map(num).unwrap_or_default();
                    dens_t.push(vec![num(t), point(x), "right".into(), num(y), num(d), num(upper), lo, flag(ok)]);
                    run.check(name(&format!("right envelope y={y}")), ok, format!("kde {d:e} upper {upper:e}"));
                }
            }

            // Left regime.
            let q01 = quantile_sorted(&s, 0.01);
            let left: Vec<(f64, f64)> = (1..=3).map(|k| q01 * k as f64 / 3.0).map(|y| lk.density(y).map(|d| (y, d))).collect::<Result<_, _>>()?;
            let monotone = left.windows(2).all(|w| w[0].1 < w[1].1);
            shape_t.push(vec![num(t), point(x), "left_monotone".into(), num(if monotone { 1.0 } else { 0.0 }), num(1.0), flag(monotone)]);
            run.check(name("left-tail monotone"), monotone, format!("{left:?}"));
            let (y3, d3) = left[2];
            let sq = |y: f64| (-(y.ln()).powi(2)).exp();
            let lc = LeftTailConstants { c: d3 / (t.powf(ep) * sq(y3)), c1: 1.0, c2: 0.0, a0: 2.0 * q01, b0: 0.0 };
            for &(y, d) in &left {
                let bound = left_tail_density_bound(y, t, &spec, &lc)?;
                let ok = d <= bound * (1.0 + 1e-9);
                dens_t.push(vec![num(t), point(x), "left".into(), num(y), num(d), num(bound), String::new(), flag(ok)]);
                run.check(name(&format!("left envelope y={y}")), ok, format!("kde {d:e} bound {bound:e}"));
            }
        }
    }
    for t in [&ens_t, &dens_t, &shape_t] {
        run.emit(t)?;
    }
    Ok(())
}

fn injected(run: &mut Run) -> CliResult<()> {
    let n = run.scaled(run.config.density.n_injected);
    let mut rng = run.seed("injected").rng();
    let samples: Vec<f64> = (0..n).map(|_| rand::Rng::sample(&mut rng, StandardNormal)).collect();
    let h = silverman_bandwidth(&samples)?;
    let value = kde(&samples, h, 0.0)?;
    let analytic = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let rel = (value - analytic).abs() / analytic;
    let ok = rel <= INJECTED_TOL;
    let mut table = Table::new("density_injected", &["y", "kde", "analytic", "relative_error", "pass"]);
    table.push(vec![num(0.0), num(value), num(analytic), num(rel), flag(ok)]);
    run.check("density injected normal at 0", ok, format!("relative error {rel:e} with {n} samples"));
    run.emit(&table)
}
