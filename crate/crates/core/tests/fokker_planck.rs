use std::f64::consts::PI;

use hypomix_core::fp::{
    collapse_check, delta_limit_check, discretize, parreg_ratios, semigroup_apply, spectral_gap, stationary_solve,
    tv_overlap, AdvectionScheme, CollapseInput, Direction, GapOptions, GridSpec,
};
use hypomix_core::model::{build_linear, build_ou, build_triad};
use hypomix_core::poly::rational_from_int;
use hypomix_core::ModelSpec;
use proptest::prelude::*;

fn gauss1(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

fn ou_sup_error(n: usize, radius: f64, delta: f64, scheme: AdvectionScheme) -> f64 {
    let m = build_ou(1.0, 1.0, 0.1).unwrap();
    let g = GridSpec::new(1, radius, n).unwrap();
    let op = discretize(&m, &g, delta, scheme).unwrap();
    let f = stationary_solve(&op).unwrap().density;
    let var = 1.0 + delta;
    let peak = gauss1(0.0, var);
    (0..n)
        .map(|i| (f[i] - gauss1(g.center(i)[0], var)).abs())
        .fold(0.0, f64::max)
        / peak
}

fn triad(eps: f64) -> ModelSpec {
    build_triad(
        [rational_from_int(1), rational_from_int(1), rational_from_int(-2)],
        1.0,
        1.0,
        eps,
        1.0,
    )
    .unwrap()
}

#[test]
fn ou_stationary_matches_gaussian() {
    // pure upwind carries an O(h) bias of about h x^3 / 6 in the log density,
    // which peaks near 2.4% of the maximum at this resolution
    let upwind = ou_sup_error(128, 6.0, 0.0, AdvectionScheme::Upwind);
    assert!(upwind <= 0.025, "upwind sup error {upwind}");
    let hybrid = ou_sup_error(128, 6.0, 0.0, AdvectionScheme::Hybrid);
    assert!(hybrid <= 0.02, "hybrid sup error {hybrid}");
}

#[test]
fn weighted_scheme_is_exact_for_ou() {
    // only the mass beyond the box is missing
    let err = ou_sup_error(128, 6.0, 0.0, AdvectionScheme::Weighted);
    assert!(err < 1e-8, "{err}");
    let err = ou_sup_error(32, 8.0, 0.7, AdvectionScheme::Weighted);
    assert!(err < 1e-8, "{err}");
}

fn triad_with_noise(eps: f64, z: &str) -> ModelSpec {
    let text = format!(
        "[model]\nlabel = t\ndim = 3\nalpha = 1\nepsilon = {eps}\ndelta = 0\n\n[A]\n1 0 0\n0 1 0\n0 0 1\n\n\
         [B]\n0 0 0\n0 0 0\n0 0 0\n\n[N]\n1 x2*x3 -> 1\n1 x1*x3 -> 2\n-2 x1*x2 -> 3\n\n[Z]\n{z}"
    );
    hypomix_core::model::parse_model_file(&text).unwrap()
}

fn second_moments(g: &GridSpec, f: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; g.dim];
    for (i, v) in f.iter().enumerate() {
        for (a, c) in g.center(i).iter().enumerate() {
            m[a] += v * c * c * g.cell_volume();
        }
    }
    m
}

#[test]
fn weighted_scheme_keeps_nonlinear_gaussian() {
    // isotropic noise makes N(0, I) exactly stationary for every eps,
    // because N is divergence free and tangent to spheres
    let g = GridSpec::new(3, 7.0, 24).unwrap();
    for eps in [0.2, 0.05] {
        let m = triad_with_noise(eps, "1 0 0\n0 1 0\n0 0 1\n");
        let op = discretize(&m, &g, 0.0, AdvectionScheme::Weighted).unwrap();
        assert!(op.m_matrix);
        let mu = stationary_solve(&op).unwrap().density;
        for v in second_moments(&g, &mu) {
            assert!((v - 1.0).abs() < 0.02, "eps {eps}: {v}");
        }
        // plain upwind smears the same law into a nearly flat one
        let op = discretize(&m, &g, 0.0, AdvectionScheme::Upwind).unwrap();
        let mu = stationary_solve(&op).unwrap().density;
        assert!(second_moments(&g, &mu)[0] > 2.0);
    }
    // degenerate noise: energy balance E|x|^2 = sum |Z_j|^2 = 2
    let op = discretize(&triad(0.1), &g, 0.0, AdvectionScheme::Weighted).unwrap();
    let mu = stationary_solve(&op).unwrap().density;
    let e: f64 = second_moments(&g, &mu).iter().sum();
    assert!((e - 2.0).abs() < 0.1, "{e}");
}

#[test]
fn grid_convergence_orders() {
    let coarse = ou_sup_error(64, 6.0, 0.0, AdvectionScheme::Upwind);
    let fine = ou_sup_error(128, 6.0, 0.0, AdvectionScheme::Upwind);
    let ratio = coarse / fine;
    assert!((1.5..=2.5).contains(&ratio), "upwind ratio {ratio}");
    let coarse = ou_sup_error(64, 10.0, 1.0, AdvectionScheme::Hybrid);
    let fine = ou_sup_error(128, 10.0, 1.0, AdvectionScheme::Hybrid);
    let ratio = coarse / fine;
    assert!((3.0..=5.0).contains(&ratio), "hybrid ratio {ratio}");
}

#[test]
fn isotropic_regularization_gives_gaussian() {
    // delta = 1, no noise fields, A = I: variance delta
    let m = build_linear(
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &[vec![0.0; 2], vec![0.0; 2]],
        &[],
        0.3,
        0.0,
    )
    .unwrap();
    let g = GridSpec::new(2, 6.0, 96).unwrap();
    let op = discretize(&m, &g, 1.0, AdvectionScheme::Hybrid).unwrap();
    let sol = stationary_solve(&op).unwrap();
    let peak = 1.0 / (2.0 * PI);
    let worst = (0..g.cells())
        .map(|i| {
            let c = g.center(i);
            (sol.density[i] - gauss1(c[0], 1.0) * gauss1(c[1], 1.0)).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 0.01 * peak, "sup error {worst}");
    assert!(sol.residual <= 1e-8);
    assert!((g.integrate(&sol.density) - 1.0).abs() < 1e-12);
}

#[test]
fn rotation_keeps_uniform_density_in_interior() {
    let m = build_linear(
        &[vec![0.0; 2], vec![0.0; 2]],
        &[vec![0.0, 1.0], vec![-1.0, 0.0]],
        &[],
        0.5,
        0.0,
    )
    .unwrap();
    let g = GridSpec::new(2, 2.0, 24).unwrap();
    for scheme in [AdvectionScheme::Upwind, AdvectionScheme::Central] {
        let op = discretize(&m, &g, 0.5, scheme).unwrap();
        let r = op.matrix.matvec(&vec![1.0; g.cells()]);
        for (i, ri) in r.iter().enumerate() {
            let k = g.multi(i);
            let boundary = k[..2].iter().any(|&v| v == 0 || v == g.n - 1);
            if !boundary {
                assert!(ri.abs() < 1e-12, "cell {i}: {ri}");
            }
        }
    }
}

#[test]
fn triad_stationary_is_positive() {
    let g = GridSpec::new(3, 7.0, 32).unwrap();
    let op = discretize(&triad(0.1), &g, 0.0, AdvectionScheme::Upwind).unwrap();
    assert!(op.m_matrix);
    let sol = stationary_solve(&op).unwrap();
    let interior_min = (0..g.cells())
        .filter(|&i| g.center(i).iter().all(|x| x.abs() < 3.0))
        .map(|i| sol.density[i])
        .fold(f64::INFINITY, f64::min);
    assert!(interior_min > 0.0, "{interior_min}");
    assert!(sol.residual <= 1e-8);
}

#[test]
fn ou_spectral_gap_and_scaling() {
    let (a, eps) = (1.5, 0.1);
    let m = build_ou(a, 1.0, eps).unwrap();
    let g = GridSpec::new(1, 6.0, 128).unwrap();
    let op = discretize(&m, &g, 0.0, AdvectionScheme::Upwind).unwrap();
    let mu = stationary_solve(&op).unwrap().density;
    let rep = spectral_gap(&op, &mu, &GapOptions::default()).unwrap();
    assert!((rep.gap - eps * a).abs() <= 0.05 * eps * a, "{rep:?}");
    // second eigenvalue near -2 eps a
    assert!((rep.eigenvalues[1].0 + 2.0 * eps * a).abs() < 0.1 * eps * a, "{rep:?}");
    let scaled = spectral_gap(&op.scaled(3.0), &mu, &GapOptions::default()).unwrap();
    assert!((scaled.gap - 3.0 * rep.gap).abs() < 1e-6 * rep.gap);
}

#[test]
fn semigroup_basics() {
    let m = build_ou(1.0, 1.0, 0.2).unwrap();
    let g = GridSpec::new(1, 6.0, 128).unwrap();
    let op = discretize(&m, &g, 0.0, AdvectionScheme::Upwind).unwrap();
    let mu = stationary_solve(&op).unwrap().density;
    let f0: Vec<f64> = (0..128).map(|i| (i as f64 * 0.1).cos().abs()).collect();
    assert_eq!(
        semigroup_apply(&op, &f0, 0.0, None, Direction::Forward).unwrap().values,
        f0
    );
    let out = semigroup_apply(&op, &mu, 7.0, Some(50), Direction::Forward).unwrap();
    let diff = out
        .values
        .iter()
        .zip(&mu)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-9 * mu.iter().cloned().fold(0.0, f64::max), "{diff}");
    let out = semigroup_apply(&op, &f0, 3.0, Some(40), Direction::Forward).unwrap();
    assert!(out.mass_drift < 1e-12);
    assert!(!out.undershoot);
}

#[test]
fn ou_variance_from_point_mass() {
    let (a, z, eps) = (1.0, 1.0, 0.1);
    let m = build_ou(a, z, eps).unwrap();
    let g = GridSpec::new(1, 6.0, 128).unwrap();
    let op = discretize(&m, &g, 0.0, AdvectionScheme::Hybrid).unwrap();
    let h = g.h();
    let start = g.nearest_cell(&[0.0]);
    let x0 = g.center(start)[0];
    for t in [2.0, 5.0, 10.0, 20.0] {
        let mut f0 = vec![0.0; 128];
        f0[start] = 1.0 / h;
        let out = semigroup_apply(&op, &f0, t, Some(400), Direction::Forward).unwrap();
        let xs: Vec<f64> = (0..128).map(|i| g.center(i)[0]).collect();
        let mean: f64 = out.values.iter().zip(&xs).map(|(f, x)| f * x).sum::<f64>() * h;
        let var: f64 = out
            .values
            .iter()
            .zip(&xs)
            .map(|(f, x)| f * (x - mean).powi(2))
            .sum::<f64>()
            * h;
        let exact = (1.0 - (-2.0 * eps * a * t).exp()) * z * z / a;
        assert!((var - exact).abs() <= 0.03 * exact, "t {t}: {var} vs {exact}");
        assert!((mean - x0 * (-eps * a * t).exp()).abs() < 0.02);
        assert!(out.mass_drift < 1e-12);
    }
}

#[test]
fn hypoelliptic_spreading_is_anisotropic() {
    // noise on x1 only; the rotation carries it to x2 later
    let m = build_linear(
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &[vec![0.0, 1.0], vec![-1.0, 0.0]],
        &[vec![1.0, 0.0]],
        0.5,
        0.0,
    )
    .unwrap();
    let g = GridSpec::new(2, 3.0, 64).unwrap();
    let op = discretize(&m, &g, 0.0, AdvectionScheme::Upwind).unwrap();
    let mut f0 = vec![0.0; g.cells()];
    let c = g.nearest_cell(&[0.01, 0.01]);
    f0[c] = 1.0 / g.cell_volume();
    let out = semigroup_apply(&op, &f0, 0.05, Some(20), Direction::Forward).unwrap();
    let mut v = [0.0; 2];
    let x0 = g.center(c);
    for i in 0..g.cells() {
        let x = g.center(i);
        for a in 0..2 {
            v[a] += out.values[i] * (x[a] - x0[a]).powi(2) * g.cell_volume();
        }
    }
    assert!(v[0] > 3.0 * v[1], "variances {v:?}");
}

#[test]
fn tv_overlap_limits() {
    let g = GridSpec::new(3, 6.0, 16).unwrap();
    let op = discretize(&triad(0.2), &g, 0.0, AdvectionScheme::Upwind).unwrap();
    let x = [0.5, 0.0, 0.0];
    assert_eq!(tv_overlap(&op, &x, &x, 10.0, 5).unwrap(), 0.0);
    let y = [-0.5, 0.5, 0.5];
    let short = tv_overlap(&op, &x, &y, 1.0, 10).unwrap();
    let long = tv_overlap(&op, &x, &y, 500.0, 200).unwrap();
    assert!(short > 0.5 && short <= 2.0 + 1e-9, "{short}");
    assert!(long < 1e-3, "{long}");
}

#[test]
fn ou_collapse_is_exact() {
    let g = GridSpec::new(1, 6.0, 128).unwrap();
    let ops: Vec<_> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&e| discretize(&build_ou(1.0, 1.0, e).unwrap(), &g, 0.0, AdvectionScheme::Upwind).unwrap())
        .collect();
    let mus: Vec<Vec<f64>> = ops.iter().map(|op| stationary_solve(op).unwrap().density).collect();
    let inputs: Vec<CollapseInput> = ops
        .iter()
        .zip(&mus)
        .map(|(op, mu)| CollapseInput { op, stationary: mu })
        .collect();
    let f: Vec<f64> = (0..128).map(|i| g.center(i)[0]).collect();
    let rep = collapse_check(&inputs, &f, 3.0, 60).unwrap();
    assert!(rep.defect < 1e-10, "defect {}", rep.defect);
    assert!(rep.curves.iter().all(|c| c.monotone));
    // D(s) follows exp(-a s) times the initial ratio
    let c = &rep.curves[0];
    for (s, d) in rep.s_grid.iter().zip(&c.values).step_by(10) {
        let exact = c.values[0] * (-s).exp();
        assert!((d - exact).abs() < 0.02 * c.values[0], "s {s}: {d} vs {exact}");
    }
    let constant = vec![2.0; 128];
    let flat = collapse_check(&inputs, &constant, 1.0, 5).unwrap();
    assert!(flat.curves.iter().all(|c| c.values.iter().all(|v| *v == 0.0)));
}

#[test]
fn parreg_constant_and_ou_kernel() {
    let (a, eps) = (1.0, 0.1);
    let g = GridSpec::new(1, 6.0, 128).unwrap();
    let op = discretize(&build_ou(a, 1.0, eps).unwrap(), &g, 0.0, AdvectionScheme::Upwind).unwrap();
    let mu = stationary_solve(&op).unwrap().density;
    let ones = vec![1.0; 128];
    let r = parreg_ratios(&op, &mu, &[ones], 100).unwrap();
    assert!((r[0] - 1.0).abs() < 1e-9, "{r:?}");
    // Mehler: P_t x = e^{-eps a t} x, so sup over |x| <= 3 is 3 e^{-1} / |x|_{L2(mu)}
    let f: Vec<f64> = (0..128).map(|i| g.center(i)[0]).collect();
    let r = parreg_ratios(&op, &mu, &[f], 200).unwrap();
    let exact = (3.0 - g.h() / 2.0) * (-1.0f64).exp() / 1.0;
    assert!((r[0] - exact).abs() < 0.03 * exact, "{} vs {exact}", r[0]);
}

#[test]
fn ou_delta_limit_matches_closed_form() {
    let m = build_ou(1.0, 1.0, 0.1).unwrap();
    let g = GridSpec::new(1, 8.0, 256).unwrap();
    let deltas = [0.5, 0.1, 0.02, 0.0];
    let rep = delta_limit_check(&m, &g, 0.1, &deltas, AdvectionScheme::Hybrid).unwrap();
    assert!(rep.strictly_decreasing, "{:?}", rep.rows);
    assert_eq!(rep.rows.last().unwrap().1, 0.0);
    // analytic L1 distance between centered Gaussians of variance 1 + delta and 1
    let l1 = |v1: f64, v2: f64| {
        let n = 200_000;
        let lim = 12.0;
        let dx = 2.0 * lim / n as f64;
        (0..n)
            .map(|i| {
                let x = -lim + (i as f64 + 0.5) * dx;
                (gauss1(x, v1) - gauss1(x, v2)).abs() * dx
            })
            .sum::<f64>()
    };
    for &(dl, got) in &rep.rows[..3] {
        let exact = l1(1.0 + dl, 1.0);
        assert!((got - exact).abs() <= 0.02 * exact, "delta {dl}: {got} vs {exact}");
    }
    assert!(delta_limit_check(&m, &g, 0.1, &[0.1, 0.5, 0.0], AdvectionScheme::Hybrid).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mass_and_adjoint_identities(seed in 0u64..1000, eps in 0.02f64..1.0, delta in 0.0f64..1.0, weighted: bool) {
        use rand::{Rng, SeedableRng};
        let g = GridSpec::new(3, 5.0, 16).unwrap();
        let scheme = if weighted { AdvectionScheme::Weighted } else { AdvectionScheme::Upwind };
        let op = discretize(&triad(eps), &g, delta, scheme).unwrap();
        let norm = op.matrix.norm_inf();
        prop_assert!(op.mass_defect() <= 1e-12 * norm);
        prop_assert!(op.m_matrix);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..g.cells()).map(|_| rng.random::<f64>()).collect();
        let gv: Vec<f64> = (0..g.cells()).map(|_| rng.random::<f64>() - 0.5).collect();
        let lhs: f64 = op.backward().matvec(&gv).iter().zip(&f).map(|(a, b)| a * b).sum();
        let rhs: f64 = op.matrix.matvec(&f).iter().zip(&gv).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * norm * g.cells() as f64);
        let out = semigroup_apply(&op, &f, 1.0, None, Direction::Forward).unwrap();
        prop_assert!(out.mass_drift < 1e-12);
        prop_assert!(!out.undershoot);
    }
}
