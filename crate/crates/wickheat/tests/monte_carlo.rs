//! Monte Carlo cross-checks between independent routes to the same quantity.

use wickheat::chaos::{chaos_variance_bridge, chaos_variance_simplex};
use wickheat::covariance::{q_smoothed, CovarianceSpec, Regularization, SmoothingParams, SpatialKernel, TemporalKernel};
use wickheat::feynman_kac::{first_moment, generate_ensemble, moment_k, u_conditioned, FkContext, MomentMode};
use wickheat::gaussian_field::{kl_decompose, LatticeSpec};
use wickheat::malliavin::{z_conditioned, z_first_moment};
use wickheat::paths::{heat_convolve, sample_bm, sample_bridge, InitialDatum};
use wickheat::stats::{mean_se, Estimate};
use wickheat::Seed;

fn white() -> (CovarianceSpec, SmoothingParams, InitialDatum) {
    (CovarianceSpec::white(), SmoothingParams::new(0.1, 0.1).unwrap(), InitialDatum::constant(1.0).unwrap())
}

fn zero_spec() -> CovarianceSpec {
    CovarianceSpec::new(TemporalKernel::Dirac, SpatialKernel::zero()).unwrap()
}

#[test]
fn zero_noise_gives_the_heat_flow() {
    let spec = zero_spec();
    let sp = SmoothingParams::new(0.1, 0.1).unwrap();
    let one = InitialDatum::constant(1.0).unwrap();
    let ctx = FkContext::desk(&spec, &sp, 0.25, &[0.0], one).unwrap();
    let field = ctx.sample_field(Seed(1)).unwrap();
    let u = u_conditioned(&ctx, 0.25, &[0.0], &field, 64, Seed(2)).unwrap();
    assert_eq!((u.value, u.se), (1.0, 0.0));

    let g = InitialDatum::gaussian(1.0, 0.5).unwrap();
    let ctx = FkContext::desk(&spec, &sp, 0.25, &[0.3], g.clone()).unwrap();
    let ens = generate_ensemble(&ctx, 0.25, &[0.3], 64, 256, Seed(3)).unwrap();
    let pooled = mean_se(&ens.values());
    let inner = ens.samples.iter().map(|s| s.se * s.se).sum::<f64>().sqrt() / ens.samples.len() as f64;
    let exact = heat_convolve(&g, 0.25, &[0.3]).unwrap();
    assert!((pooled.value - exact).abs() <= 3.0 * pooled.se.max(inner), "{pooled:?} vs {exact}");
}

#[test]
fn zero_noise_second_moment_is_the_squared_mean() {
    let spec = zero_spec();
    let one = InitialDatum::constant(2.0).unwrap();
    let reg = Regularization { steps_per_unit: 256.0, dx: 0.05 };
    let m = moment_k(2, 0.5, &[0.0], &spec, &one, 100, Seed(5), 1.0, &MomentMode::Unsmoothed(reg)).unwrap();
    assert_eq!(m.estimate.value, 4.0);
}

#[test]
fn ensemble_moments_match_the_moment_formula() {
    let (spec, sp, u0) = white();
    let t = 0.25;
    let ctx = FkContext::desk(&spec, &sp, t, &[0.0], u0.clone()).unwrap();
    let ens = generate_ensemble(&ctx, t, &[0.0], 512, 256, Seed(11)).unwrap();
    let mean = ens.mean();
    assert!((mean.value - 1.0).abs() <= 3.0 * mean.se, "{mean:?}");
    let m2 = ens.second_moment();
    let formula = moment_k(2, t, &[0.0], &spec, &u0, 200_000, Seed(12), 1.0, &MomentMode::Smoothed(Box::new(ctx))).unwrap().estimate;
    assert!(m2.agrees_with(&formula, 3.0), "ensemble {m2:?} vs formula {formula:?}");
}

#[test]
fn conditioned_z_averages_to_the_smoothed_moment() {
    let (spec, sp, u0) = white();
    let t = 0.25;
    let ctx = FkContext::desk(&spec, &sp, t, &[0.0], u0.clone()).unwrap();
    let zs: Vec<f64> = (0..256u64)
        .map(|i| {
            let field = ctx.sample_field(Seed(21).index(i)).unwrap();
            z_conditioned(&ctx, t, &[0.0], &field, 32, Seed(22).index(i)).unwrap().value
        })
        .collect();
    let outer = mean_se(&zs);
    let formula = z_first_moment(t, &[0.0], &spec, &u0, 100_000, Seed(23), &MomentMode::Smoothed(Box::new(ctx))).unwrap().estimate;
    assert!(outer.agrees_with(&formula, 3.0), "conditioned {outer:?} vs formula {formula:?}");
}

#[test]
fn bridge_chaos_terms_match_the_white_noise_closed_form() {
    let (spec, _, u0) = white();
    let t = 0.25;
    let fine = Regularization { steps_per_unit: 4096.0, dx: 0.02 };
    for n in 1..=2 {
        let exact = chaos_variance_simplex(n, &spec, t, &u0).unwrap().variance;
        let mc = chaos_variance_bridge(n, &spec, t, &[0.0], &u0, 40_000, Seed(31 + n as u64), &fine).unwrap();
        let est = Estimate::new(mc.variance, mc.se);
        // Box regularization bias O(h/Δx) on top of the MC error.
        let tol = 3.0 * est.se + 0.04 * exact;
        assert!((est.value - exact).abs() <= tol, "n={n}: {est:?} vs {exact}");
    }
    let zero = chaos_variance_bridge(0, &spec, t, &[0.0], &u0, 2, Seed(1), &fine).unwrap();
    assert_eq!(zero.variance, first_moment(&u0, t, &[0.0]).unwrap().powi(2));
}

#[test]
fn brownian_and_bridge_marginal_variances() {
    let n = 20_000;
    let bm = sample_bm(n, 1, 1.0, 16, &[0.5], Seed(41)).unwrap();
    let ends: Vec<f64> = (0..n).map(|p| bm.node(p, 16)[0]).collect();
    let e = mean_se(&ends);
    assert!((e.value - 0.5).abs() <= 4.0 * e.se);
    let var: f64 = ends.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / n as f64;
    assert!((var - 1.0).abs() < 0.05, "terminal variance {var}");

    let br = sample_bridge(n, 1, 16, Seed(42)).unwrap();
    for (i, s) in [(4usize, 0.25), (8, 0.5)] {
        let v: f64 = (0..n).map(|p| br.node(p, i)[0].powi(2)).sum::<f64>() / n as f64;
        assert!((v - s * (1.0 - s)).abs() < 0.05 * s * (1.0 - s) + 0.01, "bridge variance at {s}: {v}");
    }
    assert!((0..n).all(|p| br.node(p, 0)[0] == 0.0 && br.node(p, 16)[0] == 0.0));
}

#[test]
fn lattice_covariance_matches_the_continuum_kernel() {
    let spec = CovarianceSpec::new(TemporalKernel::power_law(0.5), SpatialKernel::riesz(0.5)).unwrap();
    let sp = SmoothingParams::new(0.1, 0.1).unwrap();
    let lattice = LatticeSpec::new(1.0 / 16.0, 0.5, 0.25, 1.5, 1).unwrap();
    let ctx = FkContext::new(&spec, &sp, &lattice, InitialDatum::constant(1.0).unwrap()).unwrap();
    let cov = ctx.covariance();
    for (i, j, k, l) in [(0usize, 0usize, 6usize, 6usize), (2, 5, 4, 8), (8, 3, 0, 12)] {
        let lat = cov.node_cov(i, &[k], j, &[l]);
        let exact = q_smoothed(&spec, &sp, lattice.time_node(i), lattice.time_node(j), &[lattice.space_node(k)], &[lattice.space_node(l)]).unwrap();
        assert!((lat - exact).abs() <= 1e-4 * exact.abs().max(1e-3), "({i},{j},{k},{l}): {lat} vs {exact}");
    }
}

#[test]
fn kl_basis_is_orthonormal_with_bounded_spectrum() {
    let (spec, sp, _) = white();
    let lattice = LatticeSpec::new(0.125, 1.0, 0.25, 1.0, 1).unwrap();
    let kl = kl_decompose(&spec, &sp, &lattice).unwrap();
    let v = &kl.eigenvectors;
    let gram = v.transpose() * v * kl.weight;
    for a in 0..kl.rank {
        for b in 0..kl.rank {
            let target = if a == b { 1.0 } else { 0.0 };
            assert!((gram[(a, b)] - target).abs() < 1e-8);
        }
    }
    assert!(kl.eigenvalues.iter().all(|&l| (0.0..=1.0 + 1e-8).contains(&l)));
    assert!(kl.trace().is_finite());
    assert!(kl.reconstruction_error() < 1e-8 * kl.covariance.amax().max(1.0));
}

#[test]
fn ensembles_do_not_depend_on_the_worker_count() {
    let (spec, sp, u0) = white();
    let ctx = FkContext::desk(&spec, &sp, 0.25, &[0.0], u0).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| generate_ensemble(&ctx, 0.25, &[0.0], 16, 32, Seed(51)).unwrap().values())
    };
    assert_eq!(run(1), run(4));
}
