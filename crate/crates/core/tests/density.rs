use std::f64::consts::PI;

use hypomix_core::density::{
    compact_lowerbound, estimate_density, exp_moment, gaussian_tail_fit, reflection_test, tail_fit_ci, DensityEstimate,
};
use hypomix_core::model::build_triad;
use hypomix_core::poly::rational_from_int;
use hypomix_core::sim::{run_ensemble, Initial, Integrator, SimConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_samples(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn std_gauss(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (-r2 / 2.0).exp() / (2.0 * PI).powf(x.len() as f64 / 2.0)
}

#[test]
fn gaussian_histogram_matches_density() {
    let samples = gaussian_samples(1_000_000, 2, 11);
    let dens = estimate_density(&samples, 2, 3.0, 40).unwrap();
    let h = &dens.histograms[0];
    let worst = h
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (v - std_gauss(&dens.cell_center(2, i))).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.02, "max error {worst}");
    let inside = dens.mass_inside()[0];
    assert!((inside + h.out_of_box - 1.0).abs() < 1e-12);
}

#[test]
fn analytic_gaussian_tail_recovers_half() {
    let dens = DensityEstimate::from_function(2, 4.0, 40, std_gauss).unwrap();
    let fit = gaussian_tail_fit(&dens, 1.0).unwrap();
    assert!((fit.lambda - 0.5).abs() <= 0.05, "{fit:?}");
    assert!(fit.r_squared >= 0.99);
    assert!(fit.gaussian);
}

#[test]
fn sampled_gaussian_tail_recovers_half() {
    let samples = gaussian_samples(1_000_000, 3, 5);
    let dens = estimate_density(&samples, 3, 4.0, 40).unwrap();
    let fit = gaussian_tail_fit(&dens, 1.0).unwrap();
    assert!((fit.lambda - 0.5).abs() <= 0.05, "{fit:?}");
    assert!(fit.r_squared >= 0.95);
    // doubling the sample count stays inside the bootstrap band
    let (lo, hi) = tail_fit_ci(&dens, 1.0, 100, 9).unwrap();
    let more = gaussian_samples(2_000_000, 3, 6);
    let fit2 = gaussian_tail_fit(&estimate_density(&more, 3, 4.0, 40).unwrap(), 1.0).unwrap();
    assert!(
        (fit2.lambda - fit.lambda).abs() <= hi - lo,
        "{} vs {} (band {lo}..{hi})",
        fit2.lambda,
        fit.lambda
    );
}

#[test]
fn uniform_ball_is_not_gaussian() {
    let dens = DensityEstimate::from_function(2, 3.0, 40, |x| {
        if x[0] * x[0] + x[1] * x[1] <= 4.0 {
            1.0 / (4.0 * PI)
        } else {
            0.0
        }
    })
    .unwrap();
    let fit = gaussian_tail_fit(&dens, 0.5).unwrap();
    assert!(!fit.gaussian);
    assert!(fit.r_squared < 0.5, "{fit:?}");
    let tiny = DensityEstimate::from_function(
        2,
        3.0,
        40,
        |x| if x[0].abs() < 0.1 && x[1].abs() < 0.1 { 1.0 } else { 0.0 },
    )
    .unwrap();
    assert!(gaussian_tail_fit(&tiny, 0.0).is_err());
}

#[test]
fn gaussian_lower_bound_on_unit_ball() {
    let samples = gaussian_samples(1_000_000, 2, 17);
    let dens = estimate_density(&samples, 2, 3.0, 40).unwrap();
    let report = compact_lowerbound(&[dens], 1.0).unwrap();
    let exact = (-0.5f64).exp() / (2.0 * PI);
    assert!(
        (report.min_inf - exact).abs() <= 0.1 * exact,
        "{} vs {exact}",
        report.min_inf
    );
    assert_eq!(report.entries[0].empty_cells, 0);
}

#[test]
fn gaussian_exponential_moment() {
    let samples = gaussian_samples(400_000, 1, 23);
    for gamma in [0.1, 0.2] {
        let m = exp_moment(&samples, 1, gamma, 400, 1).unwrap();
        let exact = (1.0 - 2.0 * gamma).powf(-0.5);
        assert!(m.ci.0 <= exact && exact <= m.ci.1, "gamma {gamma}: {m:?} vs {exact}");
        assert!((m.estimate - exact).abs() < 0.01);
    }
}

#[test]
fn triad_density_has_pair_flip_symmetry() {
    let m = build_triad(
        [rational_from_int(1), rational_from_int(1), rational_from_int(-2)],
        1.0,
        1.0,
        0.1,
        1.0,
    )
    .unwrap();
    let cfg = SimConfig {
        dt: 0.02,
        t_final: 400.0,
        burn_in: 100.0,
        n_traj: 1000,
        record_stride: 50,
        snapshot_stride: 2,
        integrator: Integrator::Splitting,
        initial: Initial::Point(vec![0.3, -0.2, 0.4]),
        ..SimConfig::default()
    };
    let run = run_ensemble(&m, &cfg).unwrap();
    let dens = estimate_density(&run.snapshots, 3, 4.0, 12).unwrap();
    // the law is invariant under flipping any two coordinates, not one
    for axes in [[0, 1], [0, 2], [1, 2]] {
        let t = reflection_test(&dens, &axes).unwrap();
        assert!(t.z.abs() < 4.0, "{t:?}");
    }
    let single = reflection_test(&dens, &[2]).unwrap();
    assert!(single.z > 10.0, "{single:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mass_plus_outside_is_one(
        seed in 0u64..1000,
        radius in 0.3f64..3.0,
        bins in 2usize..12,
        d in 1usize..5,
    ) {
        let n = 10 * bins * bins + 17;
        let samples = gaussian_samples(n, d, seed);
        let dens = estimate_density(&samples, d, radius, bins).unwrap();
        for (m, h) in dens.mass_inside().iter().zip(&dens.histograms) {
            prop_assert!((m + h.out_of_box - 1.0).abs() < 1e-12);
            prop_assert!(h.values.iter().all(|v| *v >= 0.0));
        }
    }
}
