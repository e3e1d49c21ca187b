//! Tail, small-ball and density bounds, their empirical counterparts, and the
//! fit of moment envelopes E Xᵖ ≤ κ₁ᵖ e^{κ₂ p^ρ} to sample moments.

use crate::covariance::CovarianceSpec;
use crate::error::{invalid, Error, Result};
use crate::stats::{quantile_sorted, sorted, wilson, Estimate};
use std::f64::consts::PI;

/// Constants of the two-sided moment condition
/// κ̃₁ᵖe^{κ̃₂p^ρ} ≤ E Xᵖ ≤ κ₁ᵖe^{κ₂p^ρ}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEnvelope {
    pub kappa1: f64,
    pub kappa1_lower: f64,
    pub kappa2: f64,
    pub kappa2_lower: f64,
    pub rho: f64,
}

impl MomentEnvelope {
    pub fn new(kappa1: f64, kappa1_lower: f64, kappa2: f64, kappa2_lower: f64, rho: f64) -> Result<Self> {
        if !(kappa1_lower > 0.0 && kappa1 >= kappa1_lower && kappa2_lower > 0.0 && kappa2 >= kappa2_lower && rho > 1.0) {
            return Err(invalid("moment envelope needs κ₁ ≥ κ̃₁ > 0, κ₂ ≥ κ̃₂ > 0 and ρ > 1"));
        }
        Ok(MomentEnvelope { kappa1, kappa1_lower, kappa2, kappa2_lower, rho })
    }

    /// Default ρ = (4−α)/(2−α).
    pub fn default_rho(spec: &CovarianceSpec) -> f64 {
        let a = spec.alpha();
        (4.0 - a) / (2.0 - a)
    }

    pub fn upper_threshold(&self) -> f64 {
        self.kappa1 * (self.rho * self.kappa2).exp()
    }

    pub fn lower_threshold(&self) -> f64 {
        0.5 * self.kappa1_lower * self.kappa2_lower.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PzMargin {
    pub margin: f64,
    /// One standard error of the margin from the plug-in moments and frequency.
    pub band: f64,
}

/// P̂(X ≥ θ·mean) − (1−θ)²·mean²/E X² on the empirical measure.
pub fn paley_zygmund_margin(samples: &[f64], theta: f64) -> Result<PzMargin> {
    let n = samples.len();
    if n < 2 || !(theta > 0.0 && theta < 1.0) {
        return Err(invalid("need n ≥ 2 and θ ∈ (0,1)"));
    }
    if samples.iter().any(|&x| x < 0.0) {
        return Err(invalid("samples must be nonnegative"));
    }
    let nf = n as f64;
    let m1 = samples.iter().sum::<f64>() / nf;
    let m2 = samples.iter().map(|x| x * x).sum::<f64>() / nf;
    if m2 == 0.0 {
        return Err(Error::AllZero);
    }
    let p = samples.iter().filter(|&&x| x >= theta * m1).count() as f64 / nf;
    let k = (1.0 - theta).powi(2);
    let margin = p - k * m1 * m1 / m2;
    // Delta method on (X, X²) for the ratio, binomial SE for the frequency.
    let (mut v11, mut v12, mut v22) = (0.0, 0.0, 0.0);
    for &x in samples {
        let (a, b) = (x - m1, x * x - m2);
        v11 += a * a;
        v12 += a * b;
        v22 += b * b;
    }
    let den = nf * (nf - 1.0);
    let (v11, v12, v22) = (v11 / den, v12 / den, v22 / den);
    let (g1, g2) = (2.0 * m1 / m2, -m1 * m1 / (m2 * m2));
    let var_ratio = k * k * (g1 * g1 * v11 + 2.0 * g1 * g2 * v12 + g2 * g2 * v22);
    let var_p = p * (1.0 - p) / nf;
    Ok(PzMargin { margin, band: (var_ratio.max(0.0) + var_p).sqrt() })
}

/// exp{−ρ^{ρ/(1−ρ)}(ρ−1)κ₂^{1/(1−ρ)}(log(a/κ₁))^{ρ/(ρ−1)}} for a ≥ κ₁e^{ρκ₂}.
pub fn tail_upper(a: f64, env: &MomentEnvelope) -> Result<f64> {
    let threshold = env.upper_threshold();
    if !(a >= threshold) {
        return Err(Error::BelowValidityThreshold { value: a, threshold });
    }
    let r = env.rho;
    let expo = r.powf(r / (1.0 - r)) * (r - 1.0) * env.kappa2.powf(1.0 / (1.0 - r)) * (a / env.kappa1).ln().powf(r / (r - 1.0));
    Ok((-expo).exp())
}

/// ¼exp{−(2log(κ₁/κ̃₁) + 2^ρκ₂ − 2κ̃₂)((1/κ̃₂)log(2a/κ̃₁))^{ρ/(ρ−1)}} for a ≥ ½κ̃₁e^{κ̃₂}.
pub fn tail_lower(a: f64, env: &MomentEnvelope) -> Result<f64> {
    let threshold = env.lower_threshold();
    if !(a >= threshold) {
        return Err(Error::BelowValidityThreshold { value: a, threshold });
    }
    let r = env.rho;
    let pre = 2.0 * (env.kappa1 / env.kappa1_lower).ln() + 2f64.powf(r) * env.kappa2 - 2.0 * env.kappa2_lower;
    if !(pre > 0.0) {
        return Err(invalid(format!("lower-tail prefactor {pre} must be positive")));
    }
    let base = (2.0 * a / env.kappa1_lower).ln() / env.kappa2_lower;
    Ok(0.25 * (-pre * base.max(0.0).powf(r / (r - 1.0))).exp())
}

/// Constants of the two-sided right-tail envelope and its validity threshold a₀e^{b₀t^β}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RightTailConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c1_lower: f64,
    pub c2_lower: f64,
    pub c3_lower: f64,
    pub a0: f64,
    pub b0: f64,
}

/// Exponents (of log a, of t) in the right-tail envelopes: ((4−α)/2, −(4−2α₀−α)/2).
pub fn right_tail_exponents(spec: &CovarianceSpec) -> (f64, f64) {
    let (a0, a) = (spec.alpha0(), spec.alpha());
    ((4.0 - a) / 2.0, -(4.0 - 2.0 * a0 - a) / 2.0)
}

/// (lower, upper) = (c̃₁exp(−c̃₂t^{e_t}(log c̃₃a)^{e_a}), c₁exp(−c₂t^{e_t}(log c₃a)^{e_a})).
pub fn right_tail_envelopes(a: f64, t: f64, spec: &CovarianceSpec, k: &RightTailConstants) -> Result<(f64, f64)> {
    let threshold = k.a0 * (k.b0 * t.powf(spec.beta())).exp();
    if !(a >= threshold) || !(t > 0.0) {
        return Err(Error::BelowValidityThreshold { value: a, threshold });
    }
    let (ea, et) = right_tail_exponents(spec);
    let f = |c1: f64, c2: f64, c3: f64| c1 * (-c2 * t.powf(et) * (c3 * a).ln().max(0.0).powf(ea)).exp();
    Ok((f(k.c1_lower, k.c2_lower, k.c3_lower), f(k.c1, k.c2, k.c3)))
}

/// λ(t) > 0 and b(t) ∈ (0, 1] of the small-ball estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBallParams {
    pub lambda: f64,
    pub b: f64,
}

impl SmallBallParams {
    pub fn new(lambda: f64, b: f64) -> Result<Self> {
        if !(lambda > 0.0 && b > 0.0 && b <= 1.0) {
            return Err(invalid("small-ball parameters need λ > 0 and b ∈ (0,1]"));
        }
        Ok(SmallBallParams { lambda, b })
    }

    /// r* = ½e^{−2√(λ log(2/b))}.
    pub fn threshold(&self) -> f64 {
        0.5 * (-2.0 * (self.lambda * (2.0 / self.b).ln()).sqrt()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalLambdaB {
    pub params: SmallBallParams,
    pub clamped: bool,
}

/// λ(t) = sup_x 32·E[u²]·E[u²_{(√2)}]/(p_t∗u₀)⁴ and b(t) = (8·sup_x E[u²]/(p_t∗u₀)²)^{−1}
/// over an x-grid, from second moments at intensities 1 and √2.
pub fn lambda_b_global(pt_u0: &[f64], m2: &[Estimate], m2_sqrt2: &[Estimate]) -> Result<GlobalLambdaB> {
    if pt_u0.is_empty() || pt_u0.len() != m2.len() || m2.len() != m2_sqrt2.len() {
        return Err(invalid("x-grid inputs must be nonempty and of equal length"));
    }
    let (mut lam, mut ratio) = (0.0f64, 0.0f64);
    for ((&m, a), b) in pt_u0.iter().zip(m2).zip(m2_sqrt2) {
        for e in [a, b] {
            if !(e.value > 3.0 * e.se) {
                return Err(Error::InsufficientPrecision { value: e.value, se: e.se });
            }
        }
        lam = lam.max(32.0 * a.value * b.value / m.powi(4));
        ratio = ratio.max(a.value / (m * m));
    }
    let raw = 1.0 / (8.0 * ratio);
    Ok(GlobalLambdaB { params: SmallBallParams::new(lam, raw.min(0.125))?, clamped: raw > 0.125 })
}

/// 2·exp{−¼(log(2r)/√λ + 2√(log(2/b)))²} for 0 < r ≤ r*.
pub fn small_ball_bound(r: f64, sb: &SmallBallParams) -> Result<f64> {
    let threshold = sb.threshold();
    if !(r > 0.0) {
        return Err(invalid("r must be positive"));
    }
    if r > threshold {
        return Err(Error::AboveSmallBallThreshold { r, threshold });
    }
    let s = (2.0 * r).ln() / sb.lambda.sqrt() + 2.0 * (2.0 / sb.b).ln().sqrt();
    Ok(2.0 * (-0.25 * s * s).exp())
}

/// 2^p·e^{2p√(λ log(2/b))}·(1 + 4√(πp²λ)e^{p²λ})·m^{−p}.
pub fn negative_moment_form(p: f64, lambda: f64, b: f64, m: f64) -> Result<f64> {
    if !(p >= 0.0 && lambda > 0.0 && b > 0.0 && m > 0.0) {
        return Err(invalid("negative-moment bound needs p ≥ 0 and positive λ, b, normalizer"));
    }
    let l = (lambda * (2.0 / b).ln()).sqrt();
    Ok(2f64.powf(p) * (2.0 * p * l).exp() * (1.0 + 4.0 * (PI * p * p * lambda).sqrt() * (p * p * lambda).exp()) * m.powf(-p))
}

/// E[u^{−p}] bound with normalizer p_t∗u₀(x).
pub fn u_negative_moment_bound(p: f64, sb: &SmallBallParams, pt_u0: f64) -> Result<f64> {
    negative_moment_form(p, sb.lambda, sb.b, pt_u0)
}

/// An empirical frequency with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frequency {
    pub value: f64,
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub n: usize,
}

/// z used for the Wilson intervals of empirical frequencies.
pub const FREQUENCY_Z: f64 = 3.0;

fn frequency(count: usize, n: usize) -> Result<Frequency> {
    if n < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let (low, high) = wilson(count, n, FREQUENCY_Z);
    Ok(Frequency { value: count as f64 / n as f64, low, high, count, n })
}

/// P̂(X ≥ a).
pub fn empirical_survival(samples: &[f64], a: f64) -> Result<Frequency> {
    frequency(samples.iter().filter(|&&x| x >= a).count(), samples.len())
}

/// P̂(X < r·normalizer).
pub fn empirical_small_ball(samples: &[f64], r: f64, normalizer: f64) -> Result<Frequency> {
    frequency(samples.iter().filter(|&&x| x < r * normalizer).count(), samples.len())
}

/// Gaussian kernel density estimate at y.
pub fn kde(samples: &[f64], bandwidth: f64, y: f64) -> Result<f64> {
    if !(bandwidth > 0.0) || samples.is_empty() {
        return Err(invalid("KDE needs samples and a positive bandwidth"));
    }
    let c = 1.0 / ((2.0 * PI).sqrt() * bandwidth * samples.len() as f64);
    Ok(c * samples.iter().map(|&x| (-0.5 * ((y - x) / bandwidth).powi(2)).exp()).sum::<f64>())
}

/// Silverman's rule 0.9·min(sd, IQR/1.34)·n^{−1/5}.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let e = crate::stats::mean_se(samples);
    let sd = e.se * (n as f64).sqrt();
    let s = sorted(samples);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(invalid("samples are degenerate"));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Density of positive X at y from a KDE of log X: f(y) = f_{log X}(log y)/y.
#[derive(Debug, Clone)]
pub struct LogKde {
    logs: Vec<f64>,
    pub bandwidth: f64,
}

impl LogKde {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("log-scale KDE needs positive samples"));
        }
        let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
        let bandwidth = silverman_bandwidth(&logs)?;
        Ok(LogKde { logs, bandwidth })
    }

    pub fn density(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Ok(0.0);
        }
        Ok(kde(&self.logs, self.bandwidth, y.ln())? / y)
    }
}

/// Right-tail density envelope constants (upper c, lower c̃) with validity a₀e^{b₀t^β}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEnvelope {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c1_lower: f64,
    pub c2_lower: f64,
    pub c3_lower: f64,
    pub a0: f64,
    pub b0: f64,
}

impl DensityEnvelope {
    pub fn new(upper: [f64; 3], lower: [f64; 3], a0: f64, b0: f64) -> Result<Self> {
        if upper.iter().chain(&lower).any(|&c| !(c > 0.0)) || !(a0 > 0.0) {
            return Err(invalid("density envelope constants must be positive"));
        }
        Ok(DensityEnvelope {
            c1: upper[0],
            c2: upper[1],
            c3: upper[2],
            c1_lower: lower[0],
            c2_lower: lower[1],
            c3_lower: lower[2],
            a0,
            b0,
        })
    }
}

/// Exponents (of log y, of t in the exponent, of the upper t-prefactor):
/// ((4−α)/2, −(4−2α₀−α)/2, −(4−2α₀−α)/4). The lower prefactor uses the middle one.
pub fn density_exponents(spec: &CovarianceSpec) -> (f64, f64, f64) {
    let (a0, a) = (spec.alpha0(), spec.alpha());
    let g = 4.0 - 2.0 * a0 - a;
    ((4.0 - a) / 2.0, -g / 2.0, -g / 4.0)
}

/// Right-tail density (lower, upper) envelopes at y. The lower one also needs
/// y > p_t∗u₀(x) + 1; outside that it is reported as `None`.
pub fn density_envelopes(y: f64, t: f64, spec: &CovarianceSpec, de: &DensityEnvelope, pt_u0: f64) -> Result<(Option<f64>, f64)> {
    let threshold = de.a0 * (de.b0 * t.powf(spec.beta())).exp();
    if !(y >= threshold) || !(t > 0.0) {
        return Err(Error::BelowValidityThreshold { value: y, threshold });
    }
    let (ey, et, ep) = density_exponents(spec);
    let core = |c2: f64, c3: f64| (-c2 * t.powf(et) * (c3 * y).ln().max(0.0).powf(ey)).exp();
    let upper = de.c1 * t.powf(ep) * core(de.c2, de.c3);
    let lower = (y > pt_u0 + 1.0).then(|| de.c1_lower * t.powf(et) * core(de.c2_lower, de.c3_lower));
    Ok((lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeftTailConstants {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub a0: f64,
    pub b0: f64,
}

/// C·t^{−(4−2α₀−α)/4}·exp{−(−c₁ log y − c₂)²} for 0 < y < a₀e^{−b₀t^β}.
pub fn left_tail_density_bound(y: f64, t: f64, spec: &CovarianceSpec, k: &LeftTailConstants) -> Result<f64> {
    let threshold = k.a0 * (-k.b0 * t.powf(spec.beta())).exp();
    if !(y > 0.0 && y < threshold) {
        return Err(Error::BelowValidityThreshold { value: y, threshold });
    }
    let (_, _, ep) = density_exponents(spec);
    let s = -k.c1 * y.ln() - k.c2;
    Ok(k.c * t.powf(ep) * (-s * s).exp())
}

/// Fitted log-moment envelope p·log κ₁ + κ₂p^ρ against log E Xᵖ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub kappa1: f64,
    pub kappa2: f64,
}

/// Smallest lower bound allowed for κ₂ (the envelope needs κ₂ > 0).
const KAPPA2_FLOOR: f64 = 1e-12;

/// Two-variable LP over (L = log κ₁, κ₂ ≥ floor) solved by vertex enumeration:
/// minimize (sign)·Σ_p (pL + κ₂p^ρ) subject to sign·(pL + κ₂p^ρ − log m_p) ≥ 0.
fn envelope_lp(log_moments: &[(f64, f64)], rho: f64, upper: bool) -> Result<EnvelopeFit> {
    let sign = if upper { 1.0 } else { -1.0 };
    // Constraint rows: a·L + b·κ₂ ≥ c.
    let mut rows: Vec<(f64, f64, f64)> = log_moments.iter().map(|&(p, lm)| (sign * p, sign * p.powf(rho), sign * lm)).collect();
    rows.push((0.0, 1.0, KAPPA2_FLOOR));
    let (ol, ok) = log_moments.iter().fold((0.0, 0.0), |(a, b), &(p, _)| (a + sign * p, b + sign * p.powf(rho)));
    let feasible = |l: f64, k: f64| rows.iter().all(|&(a, b, c)| a * l + b * k >= c - 1e-12 * (1.0 + c.abs()));
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a1, b1, c1) = rows[i];
            let (a2, b2, c2) = rows[j];
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-14 {
                continue;
            }
            let l = (c1 * b2 - c2 * b1) / det;
            let k = (a1 * c2 - a2 * c1) / det;
            if feasible(l, k) {
                let obj = ol * l + ok * k;
                if best.is_none_or(|b| obj < b.0) {
                    best = Some((obj, l, k));
                }
            }
        }
    }
    let (_, l, k) = best.ok_or_else(|| invalid("moment envelope LP is infeasible"))?;
    Ok(EnvelopeFit { kappa1: l.exp(), kappa2: k })
}

/// Tightest (κ₁, κ₂) with E Xᵖ ≤ κ₁ᵖe^{κ₂p^ρ} at every supplied p.
pub fn fit_upper_envelope(moments: &[(f64, f64)], rho: f64) -> Result<EnvelopeFit> {
    envelope_lp(&log_moments(moments)?, rho, true)
}

/// Largest (κ̃₁, κ̃₂) with E Xᵖ ≥ κ̃₁ᵖe^{κ̃₂p^ρ} at every supplied p.
pub fn fit_lower_envelope(moments: &[(f64, f64)], rho: f64) -> Result<EnvelopeFit> {
    envelope_lp(&log_moments(moments)?, rho, false)
}

fn log_moments(moments: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if moments.len() < 2 || moments.iter().any(|&(p, m)| !(p > 0.0 && m > 0.0)) {
        return Err(invalid("need at least two positive moments at positive orders"));
    }
    Ok(moments.iter().map(|&(p, m)| (p, m.ln())).collect())
}

/// Empirical raw moments (p, mean Xᵖ).
pub fn empirical_moments(samples: &[f64], ps: &[f64]) -> Vec<(f64, f64)> {
    let n = samples.len() as f64;
    ps.iter().map(|&p| (p, samples.iter().map(|x| x.powf(p)).sum::<f64>() / n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(rho: f64) -> MomentEnvelope {
        MomentEnvelope::new(1.0, 1.0, 1.0, 1.0, rho).unwrap()
    }

    #[test]
    fn pz_examples() {
        let m = paley_zygmund_margin(&[1.0; 10], 0.5).unwrap();
        assert!((m.margin - 0.75).abs() < 1e-15);
        let two: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        assert!((paley_zygmund_margin(&two, 0.5).unwrap().margin - 0.375).abs() < 1e-15);
        assert!((paley_zygmund_margin(&[1.0; 10], 1.0 - 1e-12).unwrap().margin - 1.0).abs() < 1e-12);
        assert!(matches!(paley_zygmund_margin(&[0.0; 4], 0.5), Err(Error::AllZero)));
    }

    #[test]
    fn tail_examples() {
        assert!((tail_upper(4f64.exp(), &env(2.0)).unwrap() - (-4f64).exp()).abs() < 1e-15);
        let th = env(2.0).upper_threshold();
        assert!(tail_upper(th * (1.0 + 1e-9), &env(2.0)).unwrap().is_finite());
        assert!(matches!(tail_upper(th * 0.99, &env(2.0)), Err(Error::BelowValidityThreshold { .. })));
        let l = tail_lower(1f64.exp() / 2.0, &env(2.0)).unwrap();
        assert!((l - 0.25 * (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn small_ball_example() {
        let sb = SmallBallParams::new(1.0, 2.0 * (-4f64).exp()).unwrap();
        let v = small_ball_bound(0.5 * (-8f64).exp(), &sb).unwrap();
        assert!((v - 2.0 * (-4f64).exp()).abs() < 1e-14);
        assert!((small_ball_bound(sb.threshold(), &sb).unwrap() - 2.0).abs() < 1e-12);
        assert!(small_ball_bound(sb.threshold() * 1.01, &sb).is_err());
    }

    #[test]
    fn negative_moment_examples() {
        let sb = SmallBallParams::new(1.0, 0.125).unwrap();
        assert_eq!(u_negative_moment_bound(0.0, &sb, 1.0).unwrap(), 1.0);
        let want = 2.0 * (2.0 * 16f64.ln().sqrt()).exp() * (1.0 + 4.0 * PI.sqrt() * 1f64.exp());
        assert!((u_negative_moment_bound(1.0, &sb, 1.0).unwrap() / want - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empirical_examples() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_survival(&s, 2.5).unwrap().value, 0.5);
        assert_eq!(empirical_survival(&s, 5.0).unwrap().value, 0.0);
        assert_eq!(empirical_survival(&s, f64::NEG_INFINITY).unwrap().value, 1.0);
        assert_eq!(empirical_small_ball(&s, 0.5, 4.0).unwrap().value, 0.25);
    }

    #[test]
    fn single_sample_kde() {
        let h: f64 = 0.3;
        assert!((kde(&[0.0], h, 0.0).unwrap() - 1.0 / (2.0 * PI * h * h).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn envelope_fit_recovers_exact_moments() {
        // X with E X^p = 2^p e^{0.1 p^3} exactly.
        let ms: Vec<(f64, f64)> = (1..=4).map(|p| (p as f64, 2f64.powi(p) * (0.1 * (p as f64).powi(3)).exp())).collect();
        let f = fit_upper_envelope(&ms, 3.0).unwrap();
        assert!((f.kappa1 - 2.0).abs() < 1e-9 && (f.kappa2 - 0.1).abs() < 1e-9, "{f:?}");
        let g = fit_lower_envelope(&ms, 3.0).unwrap();
        assert!((g.kappa1 - 2.0).abs() < 1e-9 && (g.kappa2 - 0.1).abs() < 1e-9, "{g:?}");
    }

    #[test]
    fn exponents_for_white_noise() {
        let spec = CovarianceSpec::white();
        assert_eq!(right_tail_exponents(&spec), (1.5, -0.5));
        assert_eq!(density_exponents(&spec), (1.5, -0.5, -0.25));
    }
}
