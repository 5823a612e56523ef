//! Built-in models: Lorenz-96, the real form of the SABRA shell model, an
//! energy-conserving triad, and linear (Ornstein-Uhlenbeck) fixtures.

use num_traits::{One, Zero};

use super::{ModelSpec, RationalMatrix};
use crate::error::{Error, Result};
use crate::poly::{rational_from_f64, rational_from_int, PolyVectorField, Rational};

fn identity(d: usize) -> RationalMatrix {
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| if i == j { Rational::one() } else { Rational::zero() })
                .collect()
        })
        .collect()
}

fn zeros(d: usize) -> RationalMatrix {
    vec![vec![Rational::zero(); d]; d]
}

fn axis_noise(d: usize, amplitudes: &[(usize, f64)]) -> Vec<Vec<Rational>> {
    amplitudes
        .iter()
        .filter(|(_, q)| *q != 0.0)
        .map(|&(i, q)| {
            let mut v = vec![Rational::zero(); d];
            v[i] = rational_from_f64(q);
            v
        })
        .collect()
}

fn exps(d: usize, vars: &[usize]) -> Vec<u32> {
    let mut e = vec![0; d];
    for &v in vars {
        e[v] += 1;
    }
    e
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} must be finite")));
    }
    Ok(())
}

/// Lorenz-96 on `n` periodic oscillators.
///
/// The nonlinearity is stored as `N_m(u) = -(u_{m+1} - u_{m-2}) u_{m-1}` so
/// that `dx = -N(x) dt - eps x dt + ...` reads
/// `du_m = (u_{m+1} - u_{m-2}) u_{m-1} dt - eps u_m dt + sqrt(2 eps) q_m dW_m`.
pub fn build_lorenz96(n: usize, q: &[f64], epsilon: f64, alpha: f64) -> Result<ModelSpec> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!(
            "Lorenz-96 needs n >= 4 oscillators, got {n}"
        )));
    }
    if q.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.len(),
        });
    }
    check_finite("q", q)?;
    let idx = |m: isize| m.rem_euclid(n as isize) as usize;
    let mut field = PolyVectorField::zero(n);
    for m in 0..n as isize {
        let (up1, um1, um2) = (idx(m + 1), idx(m - 1), idx(m - 2));
        field.add_term(m as usize, exps(n, &[up1, um1]), rational_from_int(-1));
        field.add_term(m as usize, exps(n, &[um2, um1]), rational_from_int(1));
    }
    let z = axis_noise(n, &q.iter().copied().enumerate().collect::<Vec<_>>());
    ModelSpec::new(
        format!("lorenz96-n{n}"),
        identity(n),
        zeros(n),
        field,
        z,
        alpha,
        epsilon,
        0.0,
    )
}

/// Index of `a_m` (1-based shell `m`) in the real state vector.
pub(crate) fn sabra_a(m: usize) -> usize {
    2 * (m - 1)
}

/// Index of `b_m` in the real state vector.
pub(crate) fn sabra_b(m: usize) -> usize {
    2 * (m - 1) + 1
}

/// SABRA shell model truncated to `shells` complex shells, written in real
/// variables `u_m = a_m + i b_m` with state ordering `(a_1, b_1, a_2, b_2, ...)`.
///
/// The drift is `Z_0 = i 2^m (conj(u_{m+1}) u_{m+2} - (c/2) conj(u_{m-1}) u_{m+1}
/// - ((c-1)/4) u_{m-2} u_{m-1})`, the unique sign arrangement of the two
/// `c`-dependent couplings for which `Z_0 . x = 0`; the stored nonlinearity is
/// `N = -Z_0`. Dissipation is `diag(4^m)` on both `a_m` and `b_m`, and the
/// noise directions are `q_m e_{a_m}` and `p_m e_{b_m}`.
pub fn build_sabra(shells: usize, coupling: f64, q: &[f64], p: &[f64], epsilon: f64, alpha: f64) -> Result<ModelSpec> {
    if shells < 3 {
        return Err(Error::InvalidParameter(format!(
            "SABRA needs at least 3 shells, got {shells}"
        )));
    }
    if !(coupling > 0.0 && coupling < 2.0) || coupling == 1.0 {
        return Err(Error::InvalidParameter(format!(
            "SABRA coupling must lie in (0,2) \\ {{1}}, got {coupling}"
        )));
    }
    for (name, v) in [("q", q), ("p", p)] {
        if v.len() != shells {
            return Err(Error::DimensionMismatch {
                expected: shells,
                got: v.len(),
            });
        }
        check_finite(name, v)?;
    }
    let d = 2 * shells;
    let c = rational_from_f64(coupling);
    let half_c = &c / rational_from_int(2);
    let quarter_cm1 = (&c - Rational::one()) / rational_from_int(4);
    let valid = |m: isize| m >= 1 && m <= shells as isize;

    // Z_0 accumulated term by term; N = -Z_0 at the end.
    let mut z0 = PolyVectorField::zero(d);
    let mut push = |comp: usize, vars: [(isize, bool); 2], coeff: Rational| {
        // (shell, is_a) pairs; any shell outside 1..J kills the term
        if vars.iter().any(|(m, _)| !valid(*m)) {
            return;
        }
        let v: Vec<usize> = vars
            .iter()
            .map(
                |&(m, is_a)| {
                    if is_a {
                        sabra_a(m as usize)
                    } else {
                        sabra_b(m as usize)
                    }
                },
            )
            .collect();
        z0.add_term(comp, exps(d, &v), coeff);
    };
    for l in 1..=shells as isize {
        let k = rational_from_int(1i64 << l);
        let ia = sabra_a(l as usize);
        let ib = sabra_b(l as usize);
        // d a_l / dt = -2^l [ (a_{l+1} b_{l+2} - b_{l+1} a_{l+2})
        //                    - c/2 (a_{l-1} b_{l+1} - b_{l-1} a_{l+1})
        //                    - (c-1)/4 (b_{l-2} a_{l-1} + a_{l-2} b_{l-1}) ]
        let ka = -k.clone();
        push(ia, [(l + 1, true), (l + 2, false)], ka.clone());
        push(ia, [(l + 1, false), (l + 2, true)], -ka.clone());
        push(ia, [(l - 1, true), (l + 1, false)], -&ka * &half_c);
        push(ia, [(l - 1, false), (l + 1, true)], &ka * &half_c);
        push(ia, [(l - 2, false), (l - 1, true)], -&ka * &quarter_cm1);
        push(ia, [(l - 2, true), (l - 1, false)], -&ka * &quarter_cm1);
        // d b_l / dt = 2^l [ (a_{l+1} a_{l+2} + b_{l+1} b_{l+2})
        //                   - c/2 (a_{l-1} a_{l+1} + b_{l-1} b_{l+1})
        //                   - (c-1)/4 (a_{l-2} a_{l-1} - b_{l-2} b_{l-1}) ]
        push(ib, [(l + 1, true), (l + 2, true)], k.clone());
        push(ib, [(l + 1, false), (l + 2, false)], k.clone());
        push(ib, [(l - 1, true), (l + 1, true)], -&k * &half_c);
        push(ib, [(l - 1, false), (l + 1, false)], -&k * &half_c);
        push(ib, [(l - 2, true), (l - 1, true)], -&k * &quarter_cm1);
        push(ib, [(l - 2, false), (l - 1, false)], &k * &quarter_cm1);
    }
    let n = z0.scale(&rational_from_int(-1));

    let mut a = zeros(d);
    for m in 1..=shells {
        let diss = rational_from_int(1i64 << (2 * m));
        a[sabra_a(m)][sabra_a(m)] = diss.clone();
        a[sabra_b(m)][sabra_b(m)] = diss;
    }
    let mut amps = Vec::new();
    for m in 1..=shells {
        amps.push((sabra_a(m), q[m - 1]));
        amps.push((sabra_b(m), p[m - 1]));
    }
    ModelSpec::new(
        format!("sabra-j{shells}"),
        a,
        zeros(d),
        n,
        axis_noise(d, &amps),
        alpha,
        epsilon,
        0.0,
    )
}

/// Three-mode quadratic model `N(x) = (a1 x2 x3, a2 x1 x3, a3 x1 x2)` with
/// `a1 + a2 + a3 = 0`, identity dissipation and noise on modes 1 and 2.
pub fn build_triad(alphas: [Rational; 3], q1: f64, q2: f64, epsilon: f64, alpha: f64) -> Result<ModelSpec> {
    let sum = &alphas[0] + &alphas[1] + &alphas[2];
    if !sum.is_zero() {
        return Err(Error::InvalidParameter(
            "triad coefficients must satisfy a1 + a2 + a3 = 0".into(),
        ));
    }
    if alphas[2].is_zero() {
        return Err(Error::InvalidParameter(
            "triad coefficient a3 must be nonzero (otherwise x3 is never reached)".into(),
        ));
    }
    if q1 == 0.0 || q2 == 0.0 || !q1.is_finite() || !q2.is_finite() {
        return Err(Error::InvalidParameter(
            "triad forcing amplitudes q1, q2 must be finite and nonzero".into(),
        ));
    }
    let mut n = PolyVectorField::zero(3);
    n.add_term(0, exps(3, &[1, 2]), alphas[0].clone());
    n.add_term(1, exps(3, &[0, 2]), alphas[1].clone());
    n.add_term(2, exps(3, &[0, 1]), alphas[2].clone());
    ModelSpec::new(
        "triad",
        identity(3),
        zeros(3),
        n,
        axis_noise(3, &[(0, q1), (1, q2)]),
        alpha,
        epsilon,
        0.0,
    )
}

/// One-dimensional Ornstein-Uhlenbeck model `dx = -eps a x dt + sqrt(2 eps) z dW`.
pub fn build_ou(a: f64, z: f64, epsilon: f64) -> Result<ModelSpec> {
    build_linear(&[vec![a]], &[vec![0.0]], &[vec![z]], epsilon, 0.0).map(|m| m.with_label("ou"))
}

/// Purely linear model (N = 0). Used for closed-form fixtures; `A` is not
/// required to be positive definite here.
pub fn build_linear(a: &[Vec<f64>], b: &[Vec<f64>], z: &[Vec<f64>], epsilon: f64, delta: f64) -> Result<ModelSpec> {
    let d = a.len();
    let conv = |m: &[Vec<f64>]| -> Result<RationalMatrix> {
        if m.len() != d || m.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidModel(format!("matrix must be {d}x{d}")));
        }
        m.iter()
            .map(|r| {
                check_finite("matrix entry", r)?;
                Ok(r.iter().map(|&v| rational_from_f64(v)).collect())
            })
            .collect()
    };
    let za = z
        .iter()
        .filter(|v| v.iter().any(|c| *c != 0.0))
        .map(|v| v.iter().map(|&c| rational_from_f64(c)).collect())
        .collect();
    ModelSpec::new(
        "linear",
        conv(a)?,
        conv(b)?,
        PolyVectorField::zero(d),
        za,
        1.0,
        epsilon,
        delta,
    )
}
