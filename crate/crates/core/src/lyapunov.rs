//! Uniform Lyapunov certificates for `V(x) = exp(gamma |x|^2)`.
//!
//! For this `V` the regularized generator acts as
//!
//! ```text
//! (L_eps + eps delta Lap) V = eps V [ sum_j (2 gamma |Z_j|^2 + 4 gamma^2 (Z_j.x)^2)
//!                                     + delta (2 gamma d + 4 gamma^2 |x|^2)
//!                                     - 2 gamma (Ax.x) ]
//! ```
//!
//! because `grad V = 2 gamma x V` is annihilated by both `Bx` and `N` (skew
//! symmetry and energy conservation). The bracket does not depend on `eps`,
//! and it is affine in `delta`, so checking `delta in {0, 1}` covers `[0, 1]`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::util::{cube_grid, Halton};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub gamma: f64,
    pub kappa: f64,
    pub b: f64,
    pub grid_radius: f64,
    pub grid_points: usize,
    pub verified_on_grid: bool,
    /// Largest eigenvalue of the quadratic part of the bracket at `delta = 1`;
    /// negative means the inequality holds outside every ball.
    pub leading_coefficient: f64,
    /// `sup (bracket + kappa) V` over the grid nodes, both deltas.
    pub b_grid: f64,
    /// Smallest value of `b - (bracket + kappa) V` seen on the grid.
    pub worst_margin: f64,
    pub nodes_checked: usize,
}

impl LyapunovCertificate {
    /// Moment budget `b / kappa`.
    pub fn budget(&self) -> f64 {
        self.b / self.kappa
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        lyapunov_value(self.gamma, x)
    }
}

pub fn lyapunov_value(gamma: f64, x: &[f64]) -> f64 {
    (gamma * x.iter().map(|v| v * v).sum::<f64>()).exp()
}

/// `(L_eps + eps delta Lap) V / (eps V)` from the closed form.
pub fn generator_bracket(model: &ModelSpec, gamma: f64, delta: f64, x: &[f64]) -> f64 {
    let d = model.dim();
    let mut acc = 0.0;
    for zj in model.noise_f64() {
        let norm2: f64 = zj.iter().map(|c| c * c).sum();
        let zx: f64 = zj.iter().zip(x).map(|(a, b)| a * b).sum();
        acc += 2.0 * gamma * norm2 + 4.0 * gamma * gamma * zx * zx;
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    acc += delta * (2.0 * gamma * d as f64 + 4.0 * gamma * gamma * r2);
    let a = model.a_f64();
    let mut axx = 0.0;
    for i in 0..d {
        for j in 0..d {
            axx += a[(i, j)] * x[j] * x[i];
        }
    }
    acc - 2.0 * gamma * axx
}

/// Signed slack `(-eps kappa V + eps b) - (L_eps + eps delta Lap) V` at `x`,
/// with the model's own `eps`. Nonnegative means the drift inequality holds.
pub fn drift_inequality_slack(model: &ModelSpec, cert: &LyapunovCertificate, delta: f64, x: &[f64]) -> f64 {
    let eps = model.epsilon();
    let v = lyapunov_value(cert.gamma, x);
    let lhs = eps * v * generator_bracket(model, cert.gamma, delta, x);
    let rhs = -eps * cert.kappa * v + eps * cert.b;
    rhs - lhs
}

/// Build and grid-verify a certificate with
/// `gamma = lambda_min(A) / (4 (sum_j |Z_j|^2 + d))` and `kappa = gamma lambda_min(A)`.
///
/// `b` is the closed-form radial envelope
/// `sup_{u >= 0} (c0 - c1 u) exp(gamma u)` with `c0 = 2 gamma (S + d) + kappa`
/// and `c1 = 2 gamma lambda_min - 4 gamma^2 (S + 1)`, which dominates the
/// bracket for every `delta in [0,1]` and every `x`, not only grid nodes.
pub fn lyapunov_certificate(model: &ModelSpec, grid_radius: f64, grid_points: usize) -> Result<LyapunovCertificate> {
    let report = model.check_structure();
    if !report.a_spd {
        return Err(Error::NotPositiveDefinite);
    }
    if !report.all_pass() {
        return Err(Error::StructureViolation(report.witnesses.join("; ")));
    }
    if !(grid_radius > 0.0) || grid_points < 2 {
        return Err(Error::InvalidParameter(
            "grid radius must be positive and grid_points >= 2".into(),
        ));
    }
    let d = model.dim();
    let lam = model.lambda_min_a();
    let s = model.noise_energy();
    let gamma = lam / (4.0 * (s + d as f64));
    let kappa = gamma * lam;

    let c0 = 2.0 * gamma * (s + d as f64) + kappa;
    let c1 = 2.0 * gamma * lam - 4.0 * gamma * gamma * (s + 1.0);
    debug_assert!(c1 > 0.0);
    let u_star = c0 / c1 - 1.0 / gamma;
    let b = if u_star <= 0.0 {
        c0
    } else {
        (c1 / gamma) * (gamma * u_star).exp()
    };

    let leading_coefficient = quadratic_part_max_eig(model, gamma, 1.0);

    let full = (grid_points as f64).powi(d as i32) <= 5.0e6;
    let nodes: Box<dyn Iterator<Item = Vec<f64>>> = if full {
        Box::new(cube_grid(d, grid_radius, grid_points))
    } else {
        let h = Halton::new(d);
        Box::new((1..=200_000u64).map(move |k| h.point(k).into_iter().map(|u| grid_radius * (2.0 * u - 1.0)).collect()))
    };
    let mut b_grid = f64::NEG_INFINITY;
    let mut count = 0usize;
    for x in nodes {
        count += 1;
        let v = lyapunov_value(gamma, &x);
        for delta in [0.0, 1.0] {
            let val = (generator_bracket(model, gamma, delta, &x) + kappa) * v;
            b_grid = b_grid.max(val);
        }
    }
    let worst_margin = b - b_grid;
    let verified_on_grid = worst_margin >= -1e-12 * b.abs().max(1.0) && leading_coefficient < 0.0;
    Ok(LyapunovCertificate {
        gamma,
        kappa,
        b,
        grid_radius,
        grid_points,
        verified_on_grid,
        leading_coefficient,
        b_grid,
        worst_margin,
        nodes_checked: count,
    })
}

/// Largest eigenvalue of `4 gamma^2 (Z Z^T + delta I) - 2 gamma sym(A)`.
fn quadratic_part_max_eig(model: &ModelSpec, gamma: f64, delta: f64) -> f64 {
    let d = model.dim();
    let a = model.a_f64();
    let mut q = DMatrix::<f64>::zeros(d, d);
    for zj in model.noise_f64() {
        for i in 0..d {
            for k in 0..d {
                q[(i, k)] += 4.0 * gamma * gamma * zj[i] * zj[k];
            }
        }
    }
    for i in 0..d {
        q[(i, i)] += 4.0 * gamma * gamma * delta;
        for k in 0..d {
            q[(i, k)] -= gamma * (a[(i, k)] + a[(k, i)]);
        }
    }
    SymmetricEigen::new(q)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_linear, build_ou, build_triad};
    use crate::poly::rational_from_int;

    /// Generator applied to V by central finite differences, independent of
    /// the closed form: drift . grad V + eps sum_j (Z_j.grad)^2 V + eps delta Lap V.
    fn fd_generator(model: &ModelSpec, gamma: f64, delta: f64, x: &[f64]) -> f64 {
        let d = x.len();
        let h = 1e-4;
        let v = |y: &[f64]| lyapunov_value(gamma, y);
        let drift = model.drift_eval(x).unwrap();
        let mut acc = 0.0;
        for i in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            acc += drift[i] * (v(&xp) - v(&xm)) / (2.0 * h);
            acc += model.epsilon() * delta * (v(&xp) - 2.0 * v(x) + v(&xm)) / (h * h);
        }
        for z in model.noise_f64() {
            let xp: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - h * b).collect();
            acc += model.epsilon() * (v(&xp) - 2.0 * v(x) + v(&xm)) / (h * h);
        }
        acc
    }

    #[test]
    fn closed_form_matches_finite_differences() {
        let m = build_triad(
            [rational_from_int(1), rational_from_int(1), rational_from_int(-2)],
            1.0,
            0.5,
            0.3,
            1.0,
        )
        .unwrap();
        let gamma = 0.07;
        for x in [[0.3, -0.7, 1.1], [1.5, 0.2, -0.4], [-1.0, 1.0, 1.0]] {
            for delta in [0.0, 0.6] {
                let closed = m.epsilon() * lyapunov_value(gamma, &x) * generator_bracket(&m, gamma, delta, &x);
                let fd = fd_generator(&m, gamma, delta, &x);
                assert!((closed - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{closed} vs {fd}");
            }
        }
    }

    #[test]
    fn one_dimensional_gamma_and_inequality() {
        let (a, z) = (2.0, 1.5);
        let m = build_ou(a, z, 0.2).unwrap();
        let cert = lyapunov_certificate(&m, 4.0, 41).unwrap();
        assert!((cert.gamma - a / (4.0 * (z * z + 1.0))).abs() < 1e-15);
        assert!(cert.verified_on_grid);
        // scalar closed form: bracket = 2g z^2 + 4g^2 z^2 x^2 - 2 g a x^2
        let g = cert.gamma;
        for k in 0..200 {
            let x = -6.0 + 12.0 * k as f64 / 199.0;
            let scalar = 2.0 * g * z * z + 4.0 * g * g * z * z * x * x - 2.0 * g * a * x * x;
            assert!((generator_bracket(&m, g, 0.0, &[x]) - scalar).abs() < 1e-12);
            assert!((scalar + cert.kappa) * lyapunov_value(g, &[x]) <= cert.b + 1e-12);
        }
    }

    #[test]
    fn triad_certificate_is_uniform_in_eps_and_delta() {
        let base = build_triad(
            [rational_from_int(1), rational_from_int(1), rational_from_int(-2)],
            1.0,
            1.0,
            0.1,
            1.0,
        )
        .unwrap();
        let cert = lyapunov_certificate(&base, 4.0, 21).unwrap();
        assert!(cert.verified_on_grid);
        for eps in [1e-3, 1e-2, 1e-1, 1.0] {
            let m = base.with_epsilon(eps).unwrap();
            for delta in [0.0, 0.1, 1.0] {
                for x in cube_grid(3, 4.0, 11) {
                    let slack = drift_inequality_slack(&m, &cert, delta, &x);
                    assert!(slack >= -1e-12 * eps * cert.b, "eps {eps} delta {delta} x {x:?}");
                }
            }
        }
    }

    #[test]
    fn pure_dissipation_without_noise() {
        let m = build_linear(
            &[vec![1.0, 0.0], vec![0.0, 3.0]],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[],
            0.5,
            0.0,
        )
        .unwrap();
        let cert = lyapunov_certificate(&m, 3.0, 21).unwrap();
        assert!((cert.gamma - 1.0 / 8.0).abs() < 1e-15);
        assert!(cert.verified_on_grid);
    }

    #[test]
    fn rejects_non_spd_dissipation() {
        let m = build_linear(&[vec![-1.0]], &[vec![0.0]], &[vec![1.0]], 0.5, 0.0).unwrap();
        assert!(matches!(
            lyapunov_certificate(&m, 3.0, 11),
            Err(Error::NotPositiveDefinite)
        ));
    }
}
