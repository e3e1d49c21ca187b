//! Feynman–Kac sampler for the mollified equation.
//!
//! Given one mollified noise realization F on the lattice nodes,
//!
//! ```text
//! u_{ε,δ}(t,x) = E^B[ u₀(B_t) exp(V_t) ],
//! V_t = λ Σ_i w_i F(t − s_i, B_{s_i}) − ½λ² Σ_i Σ_l w_i w_l Cov(F(t − s_i, B_{s_i}), F(t − s_l, B_{s_l}))
//! ```
//!
//! with B a Brownian motion from x sampled at the lattice times s_i = iΔt,
//! trapezoid weights w_i, and F evaluated by multilinear interpolation in
//! space (zero outside the box). The Wick correction uses the exact
//! covariance of the interpolated lattice field, so E_F[e^{V_t}] = 1 holds
//! for every fixed path.

use crate::covariance::{CovarianceSpec, PairFunctional, Regularization, SmoothingParams};
use crate::error::{invalid, Error, Result};
use crate::gaussian_field::{FieldKind, FieldSample, LatticeCovariance, LatticeSpec, SmoothingOperator};
use crate::paths::{fill_bm, heat_convolve, InitialDatum, PathBundle};
use crate::rng::{Rng, Seed};
use crate::stats::{parallel_mean, Estimate, Welford};
use rayon::prelude::*;

/// Default exponent above which e^V is treated as an overflow.
pub const DEFAULT_OVERFLOW_LIMIT: f64 = 700.0;

/// Everything a conditioned estimate needs besides the field and the paths.
#[derive(Debug, Clone)]
pub struct FkContext {
    pub spec: CovarianceSpec,
    pub sp: SmoothingParams,
    pub u0: InitialDatum,
    pub intensity: f64,
    pub overflow_limit: f64,
    op: SmoothingOperator,
}

impl FkContext {
    pub fn new(spec: &CovarianceSpec, sp: &SmoothingParams, lattice: &LatticeSpec, u0: InitialDatum) -> Result<Self> {
        Ok(FkContext {
            spec: spec.clone(),
            sp: *sp,
            u0,
            intensity: 1.0,
            overflow_limit: DEFAULT_OVERFLOW_LIMIT,
            op: SmoothingOperator::new(spec, sp, lattice)?,
        })
    }

    /// Desk lattice for a single evaluation point: horizon t, box around x.
    pub fn desk(spec: &CovarianceSpec, sp: &SmoothingParams, t: f64, x: &[f64], u0: InitialDatum) -> Result<Self> {
        let reach = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        FkContext::new(spec, sp, &LatticeSpec::desk(t, reach, spec.dim())?, u0)
    }

    pub fn with_intensity(mut self, lambda: f64) -> Self {
        self.intensity = lambda;
        self
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.op.lattice
    }

    pub fn operator(&self) -> &SmoothingOperator {
        &self.op
    }

    pub fn covariance(&self) -> &LatticeCovariance {
        self.op.covariance()
    }

    pub fn sample_field(&self, seed: Seed) -> Result<FieldSample> {
        self.op.sample(seed)
    }

    /// A zero mollified field on the lattice nodes.
    pub fn zero_field(&self) -> FieldSample {
        FieldSample::zeros(self.lattice().node_grid(), FieldKind::Smoothed { epsilon: self.sp.epsilon, delta: self.sp.delta })
    }

    fn check_field(&self, field: &FieldSample) -> Result<()> {
        match field.kind {
            FieldKind::Smoothed { epsilon, delta } if epsilon == self.sp.epsilon && delta == self.sp.delta => {}
            _ => return Err(Error::GridMismatch("field is not mollified with these parameters".into())),
        }
        let l = self.lattice();
        if field.grid.time.len() != l.nt() + 1 || field.grid.space.len() != l.dim || field.values.len() != l.node_count() {
            return Err(Error::GridMismatch("field does not live on the context lattice nodes".into()));
        }
        Ok(())
    }
}

/// Lattice interpolation data of one path: for node i and axis a, the lower
/// corner index and the two linear weights. Nodes outside the box carry none.
#[derive(Debug, Clone)]
pub struct PathStencil {
    m: usize,
    d: usize,
    idx: Vec<usize>,
    w: Vec<[f64; 2]>,
    inside: Vec<bool>,
    end: Vec<f64>,
}

impl PathStencil {
    /// `path` holds m+1 nodes at spacing Δt.
    pub fn new(lattice: &LatticeSpec, path: &[f64], m: usize) -> Self {
        let d = lattice.dim;
        let nx = lattice.nx();
        let mut idx = Vec::with_capacity((m + 1) * d);
        let mut w = Vec::with_capacity((m + 1) * d);
        let mut inside = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let mut ok = true;
            for a in 0..d {
                let y = path[i * d + a];
                let pos = (y + lattice.half_width) / lattice.dx;
                if !(0.0..=nx as f64).contains(&pos) {
                    ok = false;
                    idx.push(0);
                    w.push([0.0, 0.0]);
                    continue;
                }
                let k = (pos.floor() as usize).min(nx - 1);
                let th = pos - k as f64;
                idx.push(k);
                w.push([1.0 - th, th]);
            }
            inside.push(ok);
        }
        PathStencil { m, d, idx, w, inside, end: path[m * d..(m + 1) * d].to_vec() }
    }

    pub fn endpoint(&self) -> &[f64] {
        &self.end
    }

    /// Interpolated field value at (t − s_i, B_{s_i}).
    fn field_at(&self, field: &FieldSample, lattice: &LatticeSpec, i: usize) -> f64 {
        if !self.inside[i] {
            return 0.0;
        }
        let d = self.d;
        let n1 = lattice.nx() + 1;
        let ns = n1.pow(d as u32);
        let base = (self.m - i) * ns;
        let mut v = 0.0;
        for corner in 0..(1usize << d) {
            let mut flat = 0;
            let mut c = 1.0;
            for a in 0..d {
                let bit = (corner >> (d - 1 - a)) & 1;
                flat = flat * n1 + self.idx[i * d + a] + bit;
                c *= self.w[i * d + a][bit];
            }
            v += c * field.values[base + flat];
        }
        v
    }

    /// Adds `weight`·w_i·(interpolation weights) of every node of the path
    /// into a lattice node vector: the gradient of `weight`·Σ_i w_i F(t−s_i, B_i).
    fn scatter(&self, lattice: &LatticeSpec, weight: f64, out: &mut [f64]) {
        let d = self.d;
        let n1 = lattice.nx() + 1;
        let ns = n1.pow(d as u32);
        for i in 0..=self.m {
            if !self.inside[i] {
                continue;
            }
            let wi = weight * trapezoid(self.m, lattice.dt, i);
            let base = (self.m - i) * ns;
            for corner in 0..(1usize << d) {
                let mut flat = 0;
                let mut c = wi;
                for a in 0..d {
                    let bit = (corner >> (d - 1 - a)) & 1;
                    flat = flat * n1 + self.idx[i * d + a] + bit;
                    c *= self.w[i * d + a][bit];
                }
                out[base + flat] += c;
            }
        }
    }

    /// Spatial covariance factor between node i of `self` and node l of `other`.
    fn space_cov(&self, i: usize, other: &PathStencil, l: usize, cov: &LatticeCovariance) -> f64 {
        if !self.inside[i] || !other.inside[l] {
            return 0.0;
        }
        let mut v = 1.0;
        for a in 0..self.d {
            let (k, wk) = (self.idx[i * self.d + a], self.w[i * self.d + a]);
            let (q, wq) = (other.idx[l * self.d + a], other.w[l * self.d + a]);
            let mut s = 0.0;
            for u in 0..2 {
                for v2 in 0..2 {
                    s += wk[u] * wq[v2] * cov.space_cov(a, k + u, q + v2);
                }
            }
            v *= s;
        }
        v
    }
}

fn trapezoid(m: usize, dt: f64, i: usize) -> f64 {
    if i == 0 || i == m {
        0.5 * dt
    } else {
        dt
    }
}

/// Σ_i Σ_l w_i w_l Cov(F(t−s_i, a_i), F(t−s_l, b_l)) for two stencils: the
/// mollified pair functional Q_{ε,δ} on the lattice.
pub fn lattice_pair(a: &PathStencil, b: &PathStencil, cov: &LatticeCovariance) -> f64 {
    let m = a.m;
    let dt = cov.lattice.dt;
    let mut s = 0.0;
    for i in 0..=m {
        if !a.inside[i] {
            continue;
        }
        let wi = trapezoid(m, dt, i);
        let mut row = 0.0;
        for l in 0..=m {
            let tc = cov.time_cov(m - i, m - l);
            if tc == 0.0 {
                continue;
            }
            row += trapezoid(m, dt, l) * tc * a.space_cov(i, b, l, cov);
        }
        s += wi * row;
    }
    s
}

/// Σ_i w_i F(t − s_i, B_{s_i}).
pub fn field_integral(stencil: &PathStencil, field: &FieldSample, lattice: &LatticeSpec) -> f64 {
    let m = stencil.m;
    (0..=m).map(|i| trapezoid(m, lattice.dt, i) * stencil.field_at(field, lattice, i)).sum()
}

fn lattice_steps(ctx: &FkContext, t: f64) -> Result<usize> {
    if !(t > 0.0) {
        return Err(invalid("t must be positive"));
    }
    ctx.lattice().time_index(t)
}

/// V_t(B, F) for one path with m + 1 nodes at the lattice time step (t = mΔt).
pub fn v_functional(path: &[f64], field: &FieldSample, ctx: &FkContext, t: f64) -> Result<f64> {
    ctx.check_field(field)?;
    let m = lattice_steps(ctx, t)?;
    if path.len() != (m + 1) * ctx.lattice().dim {
        return Err(Error::GridMismatch(format!("path must have {} nodes at step Δt", m + 1)));
    }
    let st = PathStencil::new(ctx.lattice(), path, m);
    Ok(v_from_stencil(&st, field, ctx))
}

fn v_from_stencil(st: &PathStencil, field: &FieldSample, ctx: &FkContext) -> f64 {
    let lam = ctx.intensity;
    lam * field_integral(st, field, ctx.lattice()) - 0.5 * lam * lam * lattice_pair(st, st, ctx.covariance())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionedEstimate {
    pub value: f64,
    pub se: f64,
    pub n_paths: usize,
    pub field_seed: Option<u64>,
    pub path_seed: u64,
    pub max_v: f64,
}

/// Samples `n` Brownian paths from x at the lattice step, one stream per seed.
fn lattice_paths(ctx: &FkContext, m: usize, x: &[f64], n: usize, seed: Seed) -> Vec<PathStencil> {
    let d = ctx.lattice().dim;
    let dt = ctx.lattice().dt;
    let mut rng = seed.rng();
    let mut buf = vec![0.0; (m + 1) * d];
    (0..n)
        .map(|_| {
            fill_bm(&mut rng, d, m, dt, x, &mut buf);
            PathStencil::new(ctx.lattice(), &buf, m)
        })
        .collect()
}

fn theta_terms(ctx: &FkContext, field: &FieldSample, stencils: &[PathStencil]) -> Result<(Vec<f64>, f64)> {
    let mut vs = Vec::with_capacity(stencils.len());
    let mut max_v = f64::NEG_INFINITY;
    for st in stencils {
        let v = v_from_stencil(st, field, ctx);
        max_v = max_v.max(v);
        vs.push(v);
    }
    if max_v > ctx.overflow_limit {
        return Err(Error::Overflow { max_v });
    }
    let thetas = stencils.iter().zip(&vs).map(|(st, v)| ctx.u0.eval(st.endpoint()) * v.exp()).collect();
    Ok((thetas, max_v))
}

/// E^B[u₀(B_t) e^{V_t}] with the field held fixed.
pub fn u_conditioned(ctx: &FkContext, t: f64, x: &[f64], field: &FieldSample, n_paths: usize, seed: Seed) -> Result<ConditionedEstimate> {
    ctx.check_field(field)?;
    let m = lattice_steps(ctx, t)?;
    if x.len() != ctx.lattice().dim || n_paths == 0 {
        return Err(invalid("start point dimension or path count"));
    }
    let stencils = lattice_paths(ctx, m, x, n_paths, seed);
    let (thetas, max_v) = theta_terms(ctx, field, &stencils)?;
    let mut w = Welford::default();
    thetas.iter().for_each(|&v| w.push(v));
    let e = w.estimate();
    Ok(ConditionedEstimate { value: e.value, se: e.se, n_paths, field_seed: field.seed, path_seed: seed.0, max_v })
}

/// The conditioned estimate together with its gradient with respect to the
/// lattice field values: ∂/∂F(node) of (1/n)Σ_p u₀(B^p_t)e^{V(B^p)}.
pub fn conditioned_gradient(ctx: &FkContext, t: f64, x: &[f64], field: &FieldSample, n_paths: usize, seed: Seed) -> Result<(f64, Vec<f64>)> {
    ctx.check_field(field)?;
    let m = lattice_steps(ctx, t)?;
    let stencils = lattice_paths(ctx, m, x, n_paths, seed);
    let (thetas, _) = theta_terms(ctx, field, &stencils)?;
    let mut g = vec![0.0; ctx.lattice().node_count()];
    let scale = ctx.intensity / n_paths as f64;
    for (st, th) in stencils.iter().zip(&thetas) {
        st.scatter(ctx.lattice(), scale * th, &mut g);
    }
    Ok((thetas.iter().sum::<f64>() / n_paths as f64, g))
}

/// Node-vector quadratic form gᵀ Cov g under the lattice covariance.
pub fn lattice_quadratic_form(cov: &LatticeCovariance, g: &[f64]) -> f64 {
    let l = &cov.lattice;
    let nt = l.nt() + 1;
    let n1 = l.nx() + 1;
    let ns = n1.pow(l.dim as u32);
    // Apply the space factors axis by axis, then the time factor.
    let mut h = g.to_vec();
    for a in 0..l.dim {
        let inner = n1.pow((l.dim - 1 - a) as u32);
        let outer = nt * ns / (n1 * inner);
        let mut next = vec![0.0; h.len()];
        for o in 0..outer {
            for r in 0..n1 {
                for c in 0..n1 {
                    let s = cov.space_cov(a, r, c);
                    if s == 0.0 {
                        continue;
                    }
                    for k in 0..inner {
                        next[(o * n1 + r) * inner + k] += s * h[(o * n1 + c) * inner + k];
                    }
                }
            }
        }
        h = next;
    }
    let mut total = 0.0;
    for i in 0..nt {
        for j in 0..nt {
            let tc = cov.time_cov(i, j);
            if tc == 0.0 {
                continue;
            }
            let gi = &g[i * ns..(i + 1) * ns];
            let hj = &h[j * ns..(j + 1) * ns];
            total += tc * gi.iter().zip(hj).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    total
}

/// E^B[F·Θ] / E^B[Θ] on a common path set. `f` receives the lattice path
/// (m + 1 nodes, B_0 = x).
pub fn weighted_expectation<F: Fn(&[f64]) -> f64>(
    f: F,
    ctx: &FkContext,
    t: f64,
    x: &[f64],
    field: &FieldSample,
    n_paths: usize,
    seed: Seed,
) -> Result<f64> {
    ctx.check_field(field)?;
    let m = lattice_steps(ctx, t)?;
    let d = ctx.lattice().dim;
    let mut rng = seed.rng();
    let mut buf = vec![0.0; (m + 1) * d];
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..n_paths {
        fill_bm(&mut rng, d, m, ctx.lattice().dt, x, &mut buf);
        let st = PathStencil::new(ctx.lattice(), &buf, m);
        let v = v_from_stencil(&st, field, ctx);
        if v > ctx.overflow_limit {
            return Err(Error::Overflow { max_v: v });
        }
        let theta = ctx.u0.eval(st.endpoint()) * v.exp();
        num += f(&buf) * theta;
        den += theta;
    }
    if !(den > 0.0) {
        return Err(Error::AllZero);
    }
    Ok(num / den)
}

/// Independent noise realizations of u_{ε,δ}(t,x).
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub samples: Vec<ConditionedEstimate>,
    pub t: f64,
    pub x: Vec<f64>,
    pub spec: CovarianceSpec,
    pub sp: SmoothingParams,
    pub n_paths: usize,
    pub seed: u64,
}

impl Ensemble {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn mean(&self) -> Estimate {
        let mut w = Welford::default();
        self.samples.iter().for_each(|s| w.push(s.value));
        w.estimate()
    }

    /// E[u²] from the per-field unbiased squares value² − se².
    pub fn second_moment(&self) -> Estimate {
        let mut w = Welford::default();
        self.samples.iter().for_each(|s| w.push(s.value * s.value - s.se * s.se));
        w.estimate()
    }
}

/// Field i uses `seed.child("field").index(i)`, its paths `seed.child("paths").index(i)`.
pub fn generate_ensemble(ctx: &FkContext, t: f64, x: &[f64], n_fields: usize, n_paths: usize, seed: Seed) -> Result<Ensemble> {
    if n_fields < 2 {
        return Err(invalid("an ensemble needs at least 2 fields"));
    }
    let (fs, ps) = (seed.child("field"), seed.child("paths"));
    let samples = (0..n_fields as u64)
        .into_par_iter()
        .map(|i| {
            let field = ctx.sample_field(fs.index(i))?;
            u_conditioned(ctx, t, x, &field, n_paths, ps.index(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { samples, t, x: x.to_vec(), spec: ctx.spec.clone(), sp: ctx.sp, n_paths, seed: seed.0 })
}

/// Which pair functional enters the moment formula.
#[derive(Debug, Clone)]
pub enum MomentMode {
    /// Unsmoothed covariance with the path regularization.
    Unsmoothed(Regularization),
    /// Mollified covariance of the lattice field, as seen by the ensemble.
    Smoothed(Box<FkContext>),
}

impl Default for MomentMode {
    fn default() -> Self {
        MomentMode::Unsmoothed(Regularization::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub estimate: Estimate,
    /// Set when SE exceeds half the value.
    pub warning: Option<String>,
}

impl MomentEstimate {
    pub(crate) fn from_estimate(e: Estimate) -> Self {
        let warning = (e.se > 0.5 * e.value.abs()).then(|| format!("variance blow-up: SE {:.3e} exceeds half of {:.3e}", e.se, e.value));
        MomentEstimate { estimate: e, warning }
    }
}

/// Default cap on k in `moment_k`.
pub const MAX_MOMENT_ORDER: usize = 4;

/// Samples k paths per replicate and evaluates the pair functional between
/// all of them. Shared by the moment and Malliavin estimators.
pub(crate) struct PathPairs {
    kind: PairKind,
    pub t: f64,
    pub d: usize,
    pub steps: usize,
    x: Vec<f64>,
}

enum PairKind {
    Unsmoothed(PairFunctional),
    Smoothed(Box<FkContext>),
}

impl PathPairs {
    pub fn new(spec: &CovarianceSpec, t: f64, x: &[f64], mode: &MomentMode) -> Result<Self> {
        if !(t > 0.0) || x.len() != spec.dim() {
            return Err(invalid("t must be positive and x of the kernel dimension"));
        }
        match mode {
            MomentMode::Unsmoothed(reg) => {
                let steps = reg.steps(t);
                let pf = PairFunctional::new(spec, t, steps, reg)?;
                Ok(PathPairs { kind: PairKind::Unsmoothed(pf), t, d: spec.dim(), steps, x: x.to_vec() })
            }
            MomentMode::Smoothed(ctx) => {
                if &ctx.spec != spec {
                    return Err(invalid("smoothed context built for a different kernel"));
                }
                let steps = ctx.lattice().time_index(t)?;
                Ok(PathPairs { kind: PairKind::Smoothed(ctx.clone()), t, d: spec.dim(), steps, x: x.to_vec() })
            }
        }
    }

    /// k paths from x; returns endpoints and the prepared per-path data.
    pub fn sample(&self, rng: &mut Rng, k: usize) -> Prepared {
        let d = self.d;
        let h = self.t / self.steps as f64;
        let mut buf = vec![0.0; (self.steps + 1) * d];
        let mut ends = Vec::with_capacity(k * d);
        let mut items = Vec::with_capacity(k);
        for _ in 0..k {
            fill_bm(rng, d, self.steps, h, &self.x, &mut buf);
            ends.extend_from_slice(&buf[self.steps * d..]);
            items.push(match &self.kind {
                PairKind::Unsmoothed(pf) => {
                    let mut mid = Vec::new();
                    pf.midpoints(&buf, &mut mid);
                    PreparedPath::Mid(mid)
                }
                PairKind::Smoothed(ctx) => PreparedPath::Stencil(PathStencil::new(ctx.lattice(), &buf, self.steps)),
            });
        }
        Prepared { ends, items, d }
    }

    pub fn pair(&self, p: &Prepared, a: usize, b: usize) -> f64 {
        match (&self.kind, &p.items[a], &p.items[b]) {
            (PairKind::Unsmoothed(pf), PreparedPath::Mid(x), PreparedPath::Mid(y)) => pf.pair_mid(x, y),
            (PairKind::Smoothed(ctx), PreparedPath::Stencil(x), PreparedPath::Stencil(y)) => lattice_pair(x, y, ctx.covariance()),
            _ => unreachable!("prepared paths match the pair kind"),
        }
    }

    /// Σ_{a<b} Q(B^a, B^b).
    pub fn total(&self, p: &Prepared) -> f64 {
        let k = p.items.len();
        let mut s = 0.0;
        for a in 0..k {
            for b in a + 1..k {
                s += self.pair(p, a, b);
            }
        }
        s
    }
}

pub(crate) struct Prepared {
    ends: Vec<f64>,
    items: Vec<PreparedPath>,
    d: usize,
}

impl Prepared {
    pub fn end(&self, j: usize) -> &[f64] {
        &self.ends[j * self.d..(j + 1) * self.d]
    }

    pub fn u0_product(&self, u0: &InitialDatum) -> f64 {
        (0..self.items.len()).map(|j| u0.eval(self.end(j))).product()
    }
}

enum PreparedPath {
    Mid(Vec<f64>),
    Stencil(PathStencil),
}

/// E[u(t,x)^k] = E[∏_j u₀(B^j_t) exp(λ² Σ_{i<j} Q(B^i, B^j))] over k independent
/// Brownian motions from x. Sample r uses `seed.index(r)`.
#[allow(clippy::too_many_arguments)]
pub fn moment_k(
    k: usize,
    t: f64,
    x: &[f64],
    spec: &CovarianceSpec,
    u0: &InitialDatum,
    n_mc: usize,
    seed: Seed,
    intensity: f64,
    mode: &MomentMode,
) -> Result<MomentEstimate> {
    if k == 0 || k > MAX_MOMENT_ORDER {
        return Err(invalid(format!("moment order {k} outside 1..={MAX_MOMENT_ORDER}")));
    }
    if n_mc < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let pp = PathPairs::new(spec, t, x, mode)?;
    let l2 = intensity * intensity;
    let est = parallel_mean(n_mc, seed, |rng| {
        let p = pp.sample(rng, k);
        let q = if k > 1 { pp.total(&p) } else { 0.0 };
        p.u0_product(u0) * (l2 * q).exp()
    });
    Ok(MomentEstimate::from_estimate(est))
}

/// p_t∗u₀(x), the first moment.
pub fn first_moment(u0: &InitialDatum, t: f64, x: &[f64]) -> Result<f64> {
    heat_convolve(u0, t, x)
}

/// Lattice path bundle helper for tests: Brownian paths at the context's Δt.
pub fn lattice_bundle(ctx: &FkContext, t: f64, x: &[f64], n: usize, seed: Seed) -> Result<PathBundle> {
    let m = lattice_steps(ctx, t)?;
    crate::paths::sample_bm(n, ctx.lattice().dim, t, m, x, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{SpatialKernel, TemporalKernel};

    fn white_ctx(t: f64) -> FkContext {
        let sp = SmoothingParams::new(0.1, 0.1).unwrap();
        let l = LatticeSpec::new(t / 16.0, t, 0.25, 3.0, 1).unwrap();
        FkContext::new(&CovarianceSpec::white(), &sp, &l, InitialDatum::constant(1.0).unwrap()).unwrap()
    }

    #[test]
    fn wick_correction_compensates_frozen_path() {
        let ctx = white_ctx(0.5);
        let path = vec![0.3; 17];
        let mut w = Welford::default();
        for i in 0..4000u64 {
            let f = ctx.sample_field(Seed(11).index(i)).unwrap();
            w.push(v_functional(&path, &f, &ctx, 0.5).unwrap().exp());
        }
        let e = w.estimate();
        assert!((e.value - 1.0).abs() < 3.0 * e.se, "{e:?}");
    }

    #[test]
    fn first_term_is_linear_in_the_field() {
        let ctx = white_ctx(0.5);
        let f = ctx.sample_field(Seed(1)).unwrap();
        let g = ctx.sample_field(Seed(2)).unwrap();
        let mut h = f.clone();
        h.values.iter_mut().zip(&g.values).for_each(|(a, b)| *a += b);
        let b = lattice_bundle(&ctx, 0.5, &[0.1], 1, Seed(3)).unwrap();
        let st = PathStencil::new(ctx.lattice(), b.path(0), 16);
        let l = ctx.lattice();
        let lhs = field_integral(&st, &h, l);
        let rhs = field_integral(&st, &f, l) + field_integral(&st, &g, l);
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn zero_kernel_gives_heat_flow() {
        let spec = CovarianceSpec::new(TemporalKernel::Dirac, SpatialKernel::zero()).unwrap();
        let sp = SmoothingParams::new(0.1, 0.1).unwrap();
        let l = LatticeSpec::new(1.0 / 32.0, 1.0, 0.25, 8.0, 1).unwrap();
        let ctx = FkContext::new(&spec, &sp, &l, InitialDatum::constant(1.0).unwrap()).unwrap();
        let f = ctx.sample_field(Seed(4)).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        let e = u_conditioned(&ctx, 1.0, &[0.0], &f, 64, Seed(5)).unwrap();
        assert_eq!((e.value, e.se), (1.0, 0.0));
        let g = InitialDatum::gaussian(1.0, 1.0).unwrap();
        let ctx = FkContext::new(&spec, &sp, &l, g.clone()).unwrap();
        let e = u_conditioned(&ctx, 1.0, &[0.0], &f, 20000, Seed(6)).unwrap();
        let exact = heat_convolve(&g, 1.0, &[0.0]).unwrap();
        assert!((e.value - exact).abs() < 3.0 * e.se);
    }

    #[test]
    fn weighted_expectation_of_constants() {
        let ctx = white_ctx(0.5);
        let f = ctx.sample_field(Seed(7)).unwrap();
        let one = weighted_expectation(|_| 1.0, &ctx, 0.5, &[0.0], &f, 100, Seed(8)).unwrap();
        assert!((one - 1.0).abs() < 1e-14);
        let c = weighted_expectation(|_| 2.5, &ctx, 0.5, &[0.0], &f, 100, Seed(8)).unwrap();
        assert!((c - 2.5).abs() < 1e-14);
    }

    #[test]
    fn off_lattice_time_is_rejected() {
        let ctx = white_ctx(0.5);
        let f = ctx.sample_field(Seed(7)).unwrap();
        assert!(u_conditioned(&ctx, 0.51, &[0.0], &f, 10, Seed(1)).is_err());
        assert!(v_functional(&[0.0; 5], &f, &ctx, 0.5).is_err());
    }

    #[test]
    fn first_moment_of_constant_datum_is_exact() {
        let u0 = InitialDatum::constant(1.0).unwrap();
        let m = moment_k(1, 0.25, &[0.0], &CovarianceSpec::white(), &u0, 100, Seed(1), 1.0, &MomentMode::default()).unwrap();
        assert_eq!((m.estimate.value, m.estimate.se), (1.0, 0.0));
    }

    #[test]
    fn moments_grow_with_intensity() {
        let u0 = InitialDatum::constant(1.0).unwrap();
        let spec = CovarianceSpec::white();
        let mode = MomentMode::default();
        let a = moment_k(2, 0.25, &[0.0], &spec, &u0, 200, Seed(2), 1.0, &mode).unwrap();
        let b = moment_k(2, 0.25, &[0.0], &spec, &u0, 200, Seed(2), 2f64.sqrt(), &mode).unwrap();
        assert!(b.estimate.value >= a.estimate.value);
    }
}
