//! Lattice noise: the base white field, its mollification Ẇ_{ε,δ}, the exact
//! discrete covariance of the mollified field, Karhunen–Loève decomposition of
//! the mollified base covariance, and the L² distance between samples.

use crate::covariance::{CovarianceSpec, HalfKernel, SmoothedAxis, SmoothingParams};
use crate::error::{invalid, Error, Result};
use crate::paths::heat_kernel_1d;
use crate::rng::Seed;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use std::io::{Read, Write};

/// Default cap on lattice nodes for dense covariance work.
pub const DEFAULT_KL_BUDGET: usize = 2048;
/// Default cap on nodes of a sampled field.
pub const DEFAULT_FIELD_BUDGET: usize = 4_000_000;

const RATIO_TOL: f64 = 1e-9;

/// Uniform space-time lattice: time nodes iΔt on [0,T], spatial nodes
/// −L + kΔx on [−L, L] along each of `dim` axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub dt: f64,
    pub horizon: f64,
    pub dx: f64,
    pub half_width: f64,
    pub dim: usize,
}

fn integer_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let r = num / den;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > RATIO_TOL * n.max(1.0) {
        return Err(invalid(format!("{what} = {r} is not a positive integer")));
    }
    Ok(n as usize)
}

impl LatticeSpec {
    pub fn new(dt: f64, horizon: f64, dx: f64, half_width: f64, dim: usize) -> Result<Self> {
        if !(dt > 0.0 && horizon > 0.0 && dx > 0.0 && half_width > 0.0) || dim == 0 {
            return Err(invalid("lattice steps, horizon and half-width must be positive"));
        }
        integer_ratio(horizon, dt, "T/Δt")?;
        integer_ratio(2.0 * half_width, dx, "2L/Δx")?;
        Ok(LatticeSpec { dt, horizon, dx, half_width, dim })
    }

    /// Desk defaults: L = x_range + 6√T, Δt = T/64, Δx = 2L/128.
    pub fn desk(horizon: f64, x_range: f64, dim: usize) -> Result<Self> {
        let l = x_range.abs() + 6.0 * horizon.sqrt();
        LatticeSpec::new(horizon / 64.0, horizon, 2.0 * l / 128.0, l, dim)
    }

    pub fn nt(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn nx(&self) -> usize {
        (2.0 * self.half_width / self.dx).round() as usize
    }

    pub fn time_node(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn space_node(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.dx
    }

    /// Number of lattice nodes, (nt+1)(nx+1)^d.
    pub fn node_count(&self) -> usize {
        (self.nt() + 1) * (self.nx() + 1).pow(self.dim as u32)
    }

    /// Lattice nodes with uniform weight Δt (time) and Δx (space).
    pub fn node_grid(&self) -> Grid {
        let time = Axis::uniform((0..=self.nt()).map(|i| self.time_node(i)).collect(), self.dt);
        let sp = Axis::uniform((0..=self.nx()).map(|k| self.space_node(k)).collect(), self.dx);
        Grid { time, space: vec![sp; self.dim] }
    }

    /// Lattice cells (centres of [iΔt, (i+1)Δt] × …).
    pub fn cell_grid(&self) -> Grid {
        let time = Axis::uniform((0..self.nt()).map(|i| (i as f64 + 0.5) * self.dt).collect(), self.dt);
        let sp = Axis::uniform((0..self.nx()).map(|k| self.space_node(k) + 0.5 * self.dx).collect(), self.dx);
        Grid { time, space: vec![sp; self.dim] }
    }

    /// Index of the time node at `t`, if `t` lies on the lattice.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let m = integer_ratio(t, self.dt, "t/Δt")?;
        if m > self.nt() {
            return Err(Error::GridMismatch(format!("t = {t} beyond the lattice horizon {}", self.horizon)));
        }
        Ok(m)
    }
}

/// One coordinate axis: point positions and their quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Axis {
    pub fn uniform(points: Vec<f64>, w: f64) -> Self {
        let weights = vec![w; points.len()];
        Axis { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Tensor grid time × space₁ × … × space_d, values stored time-major with the
/// last spatial axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub time: Axis,
    pub space: Vec<Axis>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.time.len() * self.space_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn space_len(&self) -> usize {
        self.space.iter().map(Axis::len).product()
    }

    fn shape(&self) -> Vec<usize> {
        std::iter::once(self.time.len()).chain(self.space.iter().map(Axis::len)).collect()
    }

    /// Product weight of every grid point, in storage order.
    pub fn measures(&self) -> Vec<f64> {
        let mut out = self.time.weights.clone();
        for ax in &self.space {
            let mut next = Vec::with_capacity(out.len() * ax.len());
            for &w in &out {
                for &v in &ax.weights {
                    next.push(w * v);
                }
            }
            out = next;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldKind {
    WhiteBase,
    Smoothed { epsilon: f64, delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub kind: FieldKind,
    pub seed: Option<u64>,
}

impl FieldSample {
    pub fn zeros(grid: Grid, kind: FieldKind) -> Self {
        let n = grid.len();
        FieldSample { grid, values: vec![0.0; n], kind, seed: None }
    }
}

/// i.i.d. centred Gaussian cells with variance 1/(cell measure).
pub fn sample_white_on(grid: Grid, seed: Seed) -> FieldSample {
    let mut rng = seed.rng();
    let values = grid
        .measures()
        .into_iter()
        .map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            z / m.sqrt()
        })
        .collect();
    FieldSample { grid, values, kind: FieldKind::WhiteBase, seed: Some(seed.0) }
}

/// White base field on the lattice cells: variance 1/(Δt·Δx^d).
pub fn sample_white_base(lattice: &LatticeSpec, seed: Seed) -> FieldSample {
    sample_white_on(lattice.cell_grid(), seed)
}

/// Base cells for one mollified axis whose output nodes span [a, b] at spacing h.
///
/// Fine cells of width h cover the output range widened by the mollifier
/// width. Power-law half-kernels decay slowly, so beyond that the cells grow
/// geometrically out to where the Gaussian taper falls below 1e−12.
fn base_axis(half: &HalfKernel, scale: f64, a: f64, b: f64, h: f64, geometric: bool) -> Axis {
    let pad_cells = ((7.5 * scale.sqrt()) / h).ceil() as usize + 1;
    let q = 1.0 + scale * scale;
    let pad = pad_cells as f64 * h;
    let (lo, hi) = (a.min(a * q) - pad, b.max(b * q) + pad);
    let n_fine = ((hi - lo) / h).ceil() as usize;
    let mut points: Vec<f64> = (0..n_fine).map(|j| lo + (j as f64 + 0.5) * h).collect();
    let mut weights = vec![h; n_fine];
    if geometric && matches!(half, HalfKernel::Power { .. }) {
        let reach = (27.7 * q / scale).sqrt();
        let grow = 1.1;
        let mut left = Vec::new();
        let (mut edge, mut w) = (lo, h);
        while edge > -reach {
            w *= grow;
            left.push((edge - 0.5 * w, w));
            edge -= w;
        }
        let (mut edge, mut w) = (lo + n_fine as f64 * h, h);
        let mut right = Vec::new();
        while edge < reach {
            w *= grow;
            right.push((edge + 0.5 * w, w));
            edge += w;
        }
        let mut p2: Vec<f64> = left.iter().rev().map(|c| c.0).collect();
        let mut w2: Vec<f64> = left.iter().rev().map(|c| c.1).collect();
        p2.append(&mut points);
        w2.append(&mut weights);
        p2.extend(right.iter().map(|c| c.0));
        w2.extend(right.iter().map(|c| c.1));
        points = p2;
        weights = w2;
    }
    Axis { points, weights }
}

/// Row-major matrix rows×cols.
#[derive(Debug, Clone, PartialEq)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn transpose(&self) -> Mat {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Mat { rows: self.cols, cols: self.rows, data }
    }

    /// (M W Mᵀ) with W = diag(weights).
    fn gram(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.rows;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            let ri = self.row(i);
            for k in i..n {
                let rk = self.row(k);
                let s: f64 = ri.iter().zip(rk).zip(weights).map(|((a, b), w)| a * b * w).sum();
                g[i * n + k] = s;
                g[k * n + i] = s;
            }
        }
        g
    }
}

fn eta_matrix(ax: &SmoothedAxis, out: &[f64], base: &Axis) -> Result<Mat> {
    let mut data = Vec::with_capacity(out.len() * base.len());
    for &t in out {
        for &r in &base.points {
            data.push(ax.eta(t, r)?);
        }
    }
    Ok(Mat { rows: out.len(), cols: base.len(), data })
}

/// Applies `m` (rows×cols) along `axis` of a tensor with the given shape.
fn mode_product(tensor: &[f64], shape: &[usize], axis: usize, m: &Mat) -> (Vec<f64>, Vec<usize>) {
    debug_assert_eq!(shape[axis], m.cols);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * m.rows * inner];
    if inner == 1 {
        for o in 0..outer {
            let src = &tensor[o * m.cols..(o + 1) * m.cols];
            for r in 0..m.rows {
                out[o * m.rows + r] = m.row(r).iter().zip(src).map(|(a, b)| a * b).sum();
            }
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = m.rows;
        return (out, new_shape);
    }
    for o in 0..outer {
        let src = &tensor[o * m.cols * inner..(o + 1) * m.cols * inner];
        let dst = &mut out[o * m.rows * inner..(o + 1) * m.rows * inner];
        for r in 0..m.rows {
            let row = m.row(r);
            let d = &mut dst[r * inner..(r + 1) * inner];
            for (c, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let s = &src[c * inner..(c + 1) * inner];
                for (x, &y) in d.iter_mut().zip(s) {
                    *x += a * y;
                }
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = m.rows;
    (out, new_shape)
}

/// Lattice mollification operator W ↦ Ẇ_{ε,δ} for a covariance spec.
///
/// Output values live on the lattice nodes; the base white field lives on a
/// separate grid that extends past the lattice so the mollifiers are not cut.
/// The discrete covariance of the output (`covariance`) is exact for the
/// implemented scheme: time factor T = A W Aᵀ and per-axis factors S = B W Bᵀ.
#[derive(Debug, Clone)]
pub struct SmoothingOperator {
    pub lattice: LatticeSpec,
    pub sp: SmoothingParams,
    base: Grid,
    time_eta: Mat,
    space_eta: Vec<Mat>,
    zero: bool,
    cov: LatticeCovariance,
}

impl SmoothingOperator {
    pub fn new(spec: &CovarianceSpec, sp: &SmoothingParams, lattice: &LatticeSpec) -> Result<Self> {
        SmoothingOperator::with_budget(spec, sp, lattice, DEFAULT_FIELD_BUDGET)
    }

    pub fn with_budget(spec: &CovarianceSpec, sp: &SmoothingParams, lattice: &LatticeSpec, budget: usize) -> Result<Self> {
        if spec.dim() != lattice.dim {
            return Err(Error::GridMismatch(format!("spec has d = {}, lattice has d = {}", spec.dim(), lattice.dim)));
        }
        if lattice.node_count() > budget {
            return Err(Error::MemoryBudget { needed: lattice.node_count(), budget });
        }
        let fk = spec.factorization()?;
        let axes = fk.spatial_axes()?.to_vec();
        let tax = SmoothedAxis::new(fk.temporal, sp.delta);
        let out = lattice.node_grid();
        let time_base = base_axis(&fk.temporal, sp.delta, 0.0, lattice.horizon, lattice.dt, true);
        let time_eta = eta_matrix(&tax, &out.time.points, &time_base)?;
        let mut space_base = Vec::new();
        let mut space_eta = Vec::new();
        for (k, h) in axes.iter().enumerate() {
            let ax = SmoothedAxis::new(*h, sp.epsilon);
            let b = base_axis(h, sp.epsilon, -lattice.half_width, lattice.half_width, lattice.dx, true);
            space_eta.push(eta_matrix(&ax, &out.space[k].points, &b)?);
            space_base.push(b);
        }
        let zero = matches!(fk.temporal, HalfKernel::Zero) || axes.iter().any(|h| matches!(h, HalfKernel::Zero));
        let time_cov = time_eta.gram(&time_base.weights);
        let space_cov = space_eta.iter().zip(&space_base).map(|(m, b)| m.gram(&b.weights)).collect();
        let cov = LatticeCovariance { lattice: *lattice, time: time_cov, space: space_cov };
        Ok(SmoothingOperator {
            lattice: *lattice,
            sp: *sp,
            base: Grid { time: time_base, space: space_base },
            time_eta,
            space_eta,
            zero,
            cov,
        })
    }

    pub fn base_grid(&self) -> &Grid {
        &self.base
    }

    pub fn covariance(&self) -> &LatticeCovariance {
        &self.cov
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Ẇ_{ε,δ}(t,x) = Σ_cells η_{0,δ}(t,r) η_ε(x,z) W(cell) |cell|.
    pub fn apply(&self, base: &FieldSample) -> Result<FieldSample> {
        if base.kind != FieldKind::WhiteBase {
            return Err(invalid("smoothing expects a white base field"));
        }
        if base.grid != self.base {
            return Err(Error::LatticeMismatch);
        }
        let out_grid = self.lattice.node_grid();
        let kind = FieldKind::Smoothed { epsilon: self.sp.epsilon, delta: self.sp.delta };
        if self.zero {
            let mut f = FieldSample::zeros(out_grid, kind);
            f.seed = base.seed;
            return Ok(f);
        }
        let measures = base.grid.measures();
        let mut t: Vec<f64> = base.values.iter().zip(&measures).map(|(v, m)| v * m).collect();
        let mut shape = base.grid.shape();
        // The time axis usually has the widest base, so contract it first.
        let r = mode_product(&t, &shape, 0, &self.time_eta);
        t = r.0;
        shape = r.1;
        for (k, m) in self.space_eta.iter().enumerate() {
            let r = mode_product(&t, &shape, k + 1, m);
            t = r.0;
            shape = r.1;
        }
        let values = t;
        Ok(FieldSample { grid: out_grid, values, kind, seed: base.seed })
    }

    /// Transpose of the mollification kernel: for g on the lattice nodes,
    /// h(cell) = Σ_nodes g(node)·η_{0,δ}·η_ε(node, cell). Then
    /// Σ_cells h² |cell| = gᵀ Cov g.
    pub fn adjoint(&self, g: &[f64]) -> Result<Vec<f64>> {
        let out_grid = self.lattice.node_grid();
        if g.len() != out_grid.len() {
            return Err(Error::LatticeMismatch);
        }
        let mut t = g.to_vec();
        let mut shape = out_grid.shape();
        let r = mode_product(&t, &shape, 0, &self.time_eta.transpose());
        t = r.0;
        shape = r.1;
        for (k, m) in self.space_eta.iter().enumerate() {
            let r = mode_product(&t, &shape, k + 1, &m.transpose());
            t = r.0;
            shape = r.1;
        }
        Ok(t)
    }

    /// Samples a base field under `seed` and mollifies it.
    pub fn sample(&self, seed: Seed) -> Result<FieldSample> {
        self.apply(&sample_white_on(self.base.clone(), seed))
    }
}

pub fn smooth_field(base: &FieldSample, op: &SmoothingOperator) -> Result<FieldSample> {
    op.apply(base)
}

/// Exact covariance of a mollified lattice field:
/// Cov(F(t_i, x_k), F(t_j, x_l)) = time[i][j] · ∏_axes space[a][k_a][l_a].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeCovariance {
    pub lattice: LatticeSpec,
    pub time: Vec<f64>,
    pub space: Vec<Vec<f64>>,
}

impl LatticeCovariance {
    pub fn time_cov(&self, i: usize, j: usize) -> f64 {
        self.time[i * (self.lattice.nt() + 1) + j]
    }

    pub fn space_cov(&self, axis: usize, k: usize, l: usize) -> f64 {
        self.space[axis][k * (self.lattice.nx() + 1) + l]
    }

    /// Covariance between two lattice nodes given as (time index, spatial indices).
    pub fn node_cov(&self, i: usize, k: &[usize], j: usize, l: &[usize]) -> f64 {
        let mut v = self.time_cov(i, j);
        for a in 0..self.lattice.dim {
            v *= self.space_cov(a, k[a], l[a]);
        }
        v
    }
}

/// Closed form of the mollified base covariance
/// Q̃((s,x),(t,y)) = e^{−δ(s²+t²)/2} p_{2δ}(t−s) ∏ e^{−ε(x_a²+y_a²)/2} p_{2ε}(x_a−y_a).
pub fn q_tilde(sp: &SmoothingParams, s: f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
    let mut v = (-sp.delta * (s * s + t * t) / 2.0).exp() * heat_kernel_1d(2.0 * sp.delta, t - s);
    for (a, b) in x.iter().zip(y) {
        v *= (-sp.epsilon * (a * a + b * b) / 2.0).exp() * heat_kernel_1d(2.0 * sp.epsilon, a - b);
    }
    v
}

#[derive(Debug, Clone)]
pub struct KLBasis {
    /// Descending, clipped at 0.
    pub eigenvalues: Vec<f64>,
    /// Column k is e_k on the lattice nodes, orthonormal for ⟨f,g⟩ = w Σ f g.
    pub eigenvectors: DMatrix<f64>,
    /// Uniform node weight w = Δt·Δx^d.
    pub weight: f64,
    pub rank: usize,
    /// The assembled covariance matrix (node values).
    pub covariance: DMatrix<f64>,
}

impl KLBasis {
    /// max |Q − Σ_{k<rank} λ_k e_k e_kᵀ| entrywise.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.covariance.nrows();
        let mut max = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..self.rank {
                    s += self.eigenvalues[k] * self.eigenvectors[(i, k)] * self.eigenvectors[(j, k)];
                }
                max = max.max((self.covariance[(i, j)] - s).abs());
            }
        }
        max
    }

    /// Σ_{k<rank} √λ_k e_k G_k at the lattice nodes.
    pub fn sample(&self, seed: Seed, rank: usize) -> Vec<f64> {
        let mut rng = seed.rng();
        let n = self.covariance.nrows();
        let mut out = vec![0.0; n];
        for k in 0..rank.min(self.rank) {
            let g: f64 = rng.sample(StandardNormal);
            let a = self.eigenvalues[k].sqrt() * g;
            for (i, o) in out.iter_mut().enumerate() {
                *o += a * self.eigenvectors[(i, k)];
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Eigendecomposition of a node covariance matrix under the uniform lattice
/// inner product with weight `w`.
pub fn kl_from_matrix(cov: DMatrix<f64>, w: f64) -> Result<KLBasis> {
    let n = cov.nrows();
    let scaled = &cov * w;
    let eig = SymmetricEigen::new(scaled);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues = Vec::with_capacity(n);
    let mut vecs = DMatrix::zeros(n, n);
    let inv = 1.0 / w.sqrt();
    for (c, &k) in order.iter().enumerate() {
        let mut l = eig.eigenvalues[k];
        if l < 0.0 {
            if l < -1e-10 {
                return Err(Error::NotPositiveSemidefinite(l));
            }
            l = 0.0;
        }
        eigenvalues.push(l);
        for i in 0..n {
            vecs[(i, c)] = eig.eigenvectors[(i, k)] * inv;
        }
    }
    Ok(KLBasis { eigenvalues, eigenvectors: vecs, weight: w, rank: n, covariance: cov })
}

/// KL decomposition of Q̃_{ε,δ} on the lattice nodes.
///
/// Q̃ is the covariance of the base white field mollified by the Gaussian
/// kernels alone; the covariance kernel only fixes the dimension.
pub fn kl_decompose(spec: &CovarianceSpec, sp: &SmoothingParams, lattice: &LatticeSpec) -> Result<KLBasis> {
    kl_decompose_with_budget(spec, sp, lattice, DEFAULT_KL_BUDGET)
}

pub fn kl_decompose_with_budget(spec: &CovarianceSpec, sp: &SmoothingParams, lattice: &LatticeSpec, budget: usize) -> Result<KLBasis> {
    if spec.dim() != lattice.dim {
        return Err(Error::GridMismatch("kernel and lattice dimensions differ".into()));
    }
    let n = lattice.node_count();
    if n > budget {
        return Err(Error::MemoryBudget { needed: n, budget });
    }
    let coords = node_coords(lattice);
    let d = lattice.dim;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (&coords[i * (d + 1)..(i + 1) * (d + 1)], &coords[j * (d + 1)..(j + 1) * (d + 1)]);
        q_tilde(sp, a[0], b[0], &a[1..], &b[1..])
    });
    kl_from_matrix(cov, lattice.dt * lattice.dx.powi(d as i32))
}

/// (t, x₁..x_d) of every node in storage order.
pub fn node_coords(lattice: &LatticeSpec) -> Vec<f64> {
    let d = lattice.dim;
    let nx = lattice.nx() + 1;
    let ns = nx.pow(d as u32);
    let mut out = Vec::with_capacity(lattice.node_count() * (d + 1));
    for i in 0..=lattice.nt() {
        for flat in 0..ns {
            out.push(lattice.time_node(i));
            let mut idx = vec![0; d];
            let mut rest = flat;
            for a in (0..d).rev() {
                idx[a] = rest % nx;
                rest /= nx;
            }
            for a in 0..d {
                out.push(lattice.space_node(idx[a]));
            }
        }
    }
    out
}

/// L² distance ‖f − g‖ over the grid measure.
pub fn path_distance(f: &FieldSample, g: &FieldSample) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::LatticeMismatch);
    }
    let m = f.grid.measures();
    Ok(f.values.iter().zip(&g.values).zip(&m).map(|((a, b), w)| (a - b) * (a - b) * w).sum::<f64>().sqrt())
}

pub fn l2_norm(f: &FieldSample) -> f64 {
    let m = f.grid.measures();
    f.values.iter().zip(&m).map(|(a, w)| a * a * w).sum::<f64>().sqrt()
}

const MAGIC: &[u8; 4] = b"WHFS";
const FORMAT_VERSION: u32 = 1;

fn put_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    w.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn get_f64s(r: &mut impl Read, limit: usize) -> Result<Vec<f64>> {
    let n = get_u64(r)? as usize;
    if n > limit {
        return Err(Error::Format(format!("array length {n} exceeds limit {limit}")));
    }
    (0..n).map(|_| get_f64(r)).collect()
}

impl FieldSample {
    /// Binary export; layout documented in the README.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let (tag, e, d) = match self.kind {
            FieldKind::WhiteBase => (0u8, 0.0, 0.0),
            FieldKind::Smoothed { epsilon, delta } => (1u8, epsilon, delta),
        };
        w.write_all(&[tag, self.seed.is_some() as u8])?;
        w.write_all(&e.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        w.write_all(&self.seed.unwrap_or(0).to_le_bytes())?;
        w.write_all(&(self.grid.space.len() as u32).to_le_bytes())?;
        for ax in std::iter::once(&self.grid.time).chain(&self.grid.space) {
            put_f64s(w, &ax.points)?;
            put_f64s(w, &ax.weights)?;
        }
        put_f64s(w, &self.values)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != FORMAT_VERSION {
            return Err(Error::Format("unsupported version".into()));
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let e = get_f64(r)?;
        let d = get_f64(r)?;
        let seed = get_u64(r)?;
        let kind = match flags[0] {
            0 => FieldKind::WhiteBase,
            1 => FieldKind::Smoothed { epsilon: e, delta: d },
            k => return Err(Error::Format(format!("unknown kind tag {k}"))),
        };
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        if dim > 8 {
            return Err(Error::Format(format!("implausible dimension {dim}")));
        }
        let limit = 1 << 28;
        let mut axes = Vec::new();
        for _ in 0..=dim {
            let points = get_f64s(r, limit)?;
            let weights = get_f64s(r, limit)?;
            if points.len() != weights.len() {
                return Err(Error::Format("axis points and weights differ in length".into()));
            }
            axes.push(Axis { points, weights });
        }
        let time = axes.remove(0);
        let grid = Grid { time, space: axes };
        let values = get_f64s(r, limit)?;
        if values.len() != grid.len() {
            return Err(Error::Format("value count does not match the grid".into()));
        }
        Ok(FieldSample { grid, values, kind, seed: (flags[1] == 1).then_some(seed) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_checks() {
        assert!(LatticeSpec::new(0.3, 1.0, 0.1, 1.0, 1).is_err());
        let l = LatticeSpec::desk(0.25, 0.0, 1).unwrap();
        assert_eq!((l.nt(), l.nx()), (64, 128));
        assert_eq!(l.half_width, 3.0);
        assert_eq!(l.time_index(0.125).unwrap(), 32);
        assert!(l.time_index(0.3).is_err());
    }

    #[test]
    fn white_cells_have_lattice_variance() {
        let l = LatticeSpec::new(0.01, 1.0, 0.02, 10.0, 1).unwrap();
        let f = sample_white_base(&l, Seed(1));
        assert_eq!(f.values.len(), 100 * 1000);
        let n = f.values.len() as f64;
        let target = 1.0 / (0.01 * 0.02);
        let mean = f.values.iter().sum::<f64>() / n;
        let var = f.values.iter().map(|v| v * v).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * (target / n).sqrt());
        assert!((var - target).abs() < 3.0 * target * (2.0 / n).sqrt());
        assert_eq!(sample_white_base(&l, Seed(1)), f);
    }

    #[test]
    fn zero_base_gives_zero_field() {
        let l = LatticeSpec::new(0.05, 0.5, 0.1, 1.0, 1).unwrap();
        let sp = SmoothingParams::new(0.1, 0.1).unwrap();
        let op = SmoothingOperator::new(&CovarianceSpec::white(), &sp, &l).unwrap();
        let base = FieldSample::zeros(op.base_grid().clone(), FieldKind::WhiteBase);
        assert!(op.apply(&base).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_covariance_eigenvalues_are_cell_weight() {
        let n = 12;
        let kl = kl_from_matrix(DMatrix::identity(n, n), 0.02).unwrap();
        assert!(kl.eigenvalues.iter().all(|&l| (l - 0.02).abs() < 1e-15));
    }

    #[test]
    fn kl_basics() {
        let l = LatticeSpec::new(0.05, 0.5, 0.05, 0.5, 1).unwrap();
        let sp = SmoothingParams::new(0.1, 0.1).unwrap();
        let kl = kl_decompose(&CovarianceSpec::white(), &sp, &l).unwrap();
        let w = kl.weight;
        let n = kl.covariance.nrows();
        let diag: f64 = (0..n).map(|i| kl.covariance[(i, i)]).sum::<f64>() * w;
        assert!((kl.trace() - diag).abs() < 1e-8);
        assert!(kl.reconstruction_error() < 1e-6);
        for j in 0..5 {
            for k in 0..5 {
                let ip: f64 = (0..n).map(|i| kl.eigenvectors[(i, j)] * kl.eigenvectors[(i, k)]).sum::<f64>() * w;
                let target = if j == k { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-8);
            }
        }
        assert!(kl.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn budget_is_enforced() {
        let l = LatticeSpec::new(0.01, 1.0, 0.01, 1.0, 1).unwrap();
        let sp = SmoothingParams::new(0.1, 0.1).unwrap();
        assert!(matches!(kl_decompose(&CovarianceSpec::white(), &sp, &l), Err(Error::MemoryBudget { .. })));
    }

    #[test]
    fn export_round_trip() {
        let l = LatticeSpec::new(0.1, 0.5, 0.25, 1.0, 1).unwrap();
        let sp = SmoothingParams::new(0.1, 0.1).unwrap();
        let op = SmoothingOperator::new(&CovarianceSpec::white(), &sp, &l).unwrap();
        let f = op.sample(Seed(5)).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let g = FieldSample::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(f, g);
        assert!(FieldSample::read_from(&mut &buf[..10]).is_err());
    }
}
