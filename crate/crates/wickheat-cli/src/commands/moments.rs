//! `moments`: chaos and Feynman–Kac moment estimates against the moment bounds.
//!
//! Columns: t, x, k, estimator, estimate, se, bound_upper, bound_lower, dominated_flag, note.
//! Upper constants: C₁ = 1 and C₂ the smallest value dominating every row at the
//! smallest t. Lower constants: C̃₁ = 1 and C̃₂ the largest value below every row
//! with k ≥ 2. The two k = 2 rows must also agree within 3 combined SE.

use super::point_label;
use crate::error::CliResult;
use crate::record::{flag, num, point, Run, Table};
use wickheat::chaos::{chaos_second_moment, moment_bound_lower, moment_bound_upper, moment_exponents};
use wickheat::feynman_kac::{first_moment, moment_k, FkContext, MomentMode, MAX_MOMENT_ORDER};
use wickheat::stats::Estimate;

struct Row {
    t: f64,
    x: Vec<f64>,
    k: usize,
    estimator: &'static str,
    estimate: Option<Estimate>,
    note: String,
}

pub(super) fn run(run: &mut Run) -> CliResult<()> {
    let cfg = run.config.clone();
    let spec = cfg.spec()?;
    let sp = cfg.smoothing_params()?;
    let u0 = cfg.initial_datum()?;
    let reg = cfg.regularization.to_regularization();
    let n_mc = run.scaled(cfg.budget.n_mc);
    let k_max = cfg.moments.k_max.clamp(1, MAX_MOMENT_ORDER);

    let mut rows = Vec::new();
    for (ti, &t) in cfg.grid.t.iter().enumerate() {
        for (xi, x) in cfg.grid.x.iter().enumerate() {
            let label = point_label(ti, xi);
            let mode = if cfg.moments.smoothed {
                let ctx = FkContext::new(&spec, &sp, &cfg.lattice_for(t, x, spec.dim())?, u0.clone())?;
                MomentMode::Smoothed(Box::new(ctx))
            } else {
                MomentMode::Unsmoothed(reg)
            };
            for k in 1..=k_max {
                let seed = run.seed(&format!("moment_k{k}/{label}"));
                let (estimate, note) = match moment_k(k, t, x, &spec, &u0, n_mc, seed, 1.0, &mode) {
                    Ok(m) => (Some(m.estimate), m.warning.unwrap_or_default()),
                    Err(e) => (None, e.to_string()),
                };
                rows.push(Row { t, x: x.clone(), k, estimator: "moment_k", estimate, note });
            }
            if k_max >= 2 {
                let seed = run.seed(&format!("chaos/{label}"));
                let n_trunc = cfg.moments.n_trunc;
                let row = match chaos_second_moment(&spec, t, x, &u0, n_trunc, n_mc, seed, &reg, cfg.moments.tail_tol) {
                    Ok(c) => {
                        let mut note = format!("fitted_c={} tail_bound={}", num(c.fitted_c), num(c.tail_bound));
                        if let Some(w) = c.warning {
                            note.push_str("; ");
                            note.push_str(&w);
                        }
                        (Some(c.estimate), note)
                    }
                    Err(e) => (None, e.to_string()),
                };
                rows.push(Row { t, x: x.clone(), k: 2, estimator: "chaos", estimate: row.0, note: row.1 });
            }
        }
    }

    let (pe, te) = moment_exponents(&spec);
    let t_min = cfg.grid.t.iter().copied().fold(f64::INFINITY, f64::min);
    // log(estimate/m^k) / (t^β k^ρ): the C₂ that makes the bound exact for the row.
    let exact_c2 = |r: &Row| -> CliResult<Option<f64>> {
        let Some(e) = r.estimate else { return Ok(None) };
        let m = first_moment(&u0, r.t, &r.x)?;
        let ratio = e.value / m.powi(r.k as i32);
        if !(ratio > 0.0) {
            return Ok(None);
        }
        Ok(Some(ratio.ln() / (r.t.powf(te) * (r.k as f64).powf(pe))))
    };
    let mut c2_upper = 0.0f64;
    let mut c2_lower = f64::INFINITY;
    for r in &rows {
        if let Some(c) = exact_c2(r)? {
            if r.t == t_min {
                c2_upper = c2_upper.max(c);
            }
            if r.k >= 2 {
                c2_lower = c2_lower.min(c);
            }
        }
    }
    if !c2_lower.is_finite() {
        c2_lower = 0.0;
    }
    run.note(format!("upper constants C1=1 C2={}; lower constants C1=1 C2={}", num(c2_upper), num(c2_lower)));

    let mut table = Table::new(
        "moments",
        &["t", "x", "k", "estimator", "estimate", "se", "bound_upper", "bound_lower", "dominated_flag", "note"],
    );
    for r in &rows {
        let p = r.k as f64;
        let upper = moment_bound_upper(p, 1.0, &spec, r.t, &r.x, &u0, 1.0, c2_upper)?;
        let lower = if r.k >= 2 { Some(moment_bound_lower(p, 1.0, &spec, r.t, &r.x, &u0, 1.0, c2_lower)?) } else { None };
        let mut ok = false;
        let mut detail = r.note.clone();
        if let Some(e) = r.estimate {
            let upper_ok = e.value - 3.0 * e.se <= upper * (1.0 + 1e-9);
            let lower_ok = lower.is_none_or(|l| e.value + 3.0 * e.se >= l * (1.0 - 1e-9));
            ok = upper_ok && lower_ok;
            if r.k == 2 {
                let partner = rows.iter().find(|o| o.k == 2 && o.t == r.t && o.x == r.x && o.estimator != r.estimator);
                if let Some(o) = partner {
                    let agree = o.estimate.is_some_and(|oe| e.agrees_with(&oe, 3.0));
                    ok &= agree;
                    if !agree {
                        detail = format!("{detail} k=2 estimators disagree").trim().to_string();
                    }
                }
            }
        }
        let (est, se) = r.estimate.map_or((f64::NAN, f64::NAN), |e| (e.value, e.se));
        table.push(vec![
            num(r.t),
            point(&r.x),
            r.k.to_string(),
            r.estimator.to_string(),
            num(est),
            num(se),
            num(upper),
            lower.map(num).unwrap_or_default(),
            flag(ok),
            r.note.clone(),
        ]);
        run.check(format!("moments t={} x={} k={} {}", r.t, point(&r.x), r.k, r.estimator), ok, detail);
    }
    run.emit(&table)
}
