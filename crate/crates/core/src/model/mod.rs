//! The SDE class `dx = -eps A x dt - eps^alpha B x dt - N(x) dt + sqrt(2 eps) sum_j Z_j dW_j`.
//!
//! A [`ModelSpec`] stores every ingredient exactly (rational matrices and an
//! exact polynomial nonlinearity) together with floating-point caches used by
//! the simulation and PDE layers.

mod builders;
pub mod file;

pub use file::{parse_model_file, read_model_file, to_model_file};

pub use builders::{build_linear, build_lorenz96, build_ou, build_sabra, build_triad};

use crate::util::hex_digest;
use nalgebra::{DMatrix, SymmetricEigen};
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{format_rational, rational_to_f64, CompiledField, PolyVectorField, Rational};

/// Dense square matrix of exact rationals, row-major.
pub type RationalMatrix = Vec<Vec<Rational>>;

#[derive(Clone, Debug)]
pub struct ModelSpec {
    label: String,
    dim: usize,
    a: RationalMatrix,
    b: RationalMatrix,
    n: PolyVectorField,
    z: Vec<Vec<Rational>>,
    alpha: f64,
    epsilon: f64,
    delta: f64,
    cache: FloatCache,
}

#[derive(Clone, Debug)]
struct FloatCache {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    z: Vec<Vec<f64>>,
    n: CompiledField,
}

impl ModelSpec {
    /// Assemble a model. Only shapes are validated here; the structural
    /// assumptions are checked by [`ModelSpec::check_structure`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: impl Into<String>,
        a: RationalMatrix,
        b: RationalMatrix,
        n: PolyVectorField,
        z: Vec<Vec<Rational>>,
        alpha: f64,
        epsilon: f64,
        delta: f64,
    ) -> Result<Self> {
        let dim = n.dim();
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        for (name, m) in [("A", &a), ("B", &b)] {
            if m.len() != dim || m.iter().any(|row| row.len() != dim) {
                return Err(Error::InvalidModel(format!("{name} must be {dim}x{dim}")));
            }
        }
        if let Some(v) = z.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        validate_params(alpha, epsilon, delta)?;
        let cache = FloatCache {
            a: to_dmatrix(&a),
            b: to_dmatrix(&b),
            z: z.iter().map(|v| v.iter().map(rational_to_f64).collect()).collect(),
            n: n.compile(),
        };
        Ok(Self {
            label: label.into(),
            dim,
            a,
            b,
            n,
            z,
            alpha,
            epsilon,
            delta,
            cache,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self) -> &RationalMatrix {
        &self.a
    }

    pub fn b(&self) -> &RationalMatrix {
        &self.b
    }

    pub fn nonlinearity(&self) -> &PolyVectorField {
        &self.n
    }

    pub fn noise(&self) -> &[Vec<Rational>] {
        &self.z
    }

    pub fn noise_f64(&self) -> &[Vec<f64>] {
        &self.cache.z
    }

    pub fn noise_count(&self) -> usize {
        self.z.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn a_f64(&self) -> &DMatrix<f64> {
        &self.cache.a
    }

    pub fn b_f64(&self) -> &DMatrix<f64> {
        &self.cache.b
    }

    pub fn n_compiled(&self) -> &CompiledField {
        &self.cache.n
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        validate_params(self.alpha, epsilon, self.delta)?;
        let mut m = self.clone();
        m.epsilon = epsilon;
        Ok(m)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        validate_params(self.alpha, self.epsilon, delta)?;
        let mut m = self.clone();
        m.delta = delta;
        Ok(m)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        validate_params(alpha, self.epsilon, self.delta)?;
        let mut m = self.clone();
        m.alpha = alpha;
        Ok(m)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `sum_j |Z_j|^2`, the stationary value of `E(Ax.x)`.
    pub fn noise_energy(&self) -> f64 {
        self.cache.z.iter().map(|v| v.iter().map(|c| c * c).sum::<f64>()).sum()
    }

    /// Drift `-eps A x - eps^alpha B x - N(x)`.
    pub fn drift_eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked drift evaluation for inner loops.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        self.cache.n.eval_into(x, out);
        let eb = self.epsilon.powf(self.alpha);
        let a = &self.cache.a;
        let b = &self.cache.b;
        for i in 0..self.dim {
            let mut ax = 0.0;
            let mut bx = 0.0;
            for j in 0..self.dim {
                ax += a[(i, j)] * x[j];
                bx += b[(i, j)] * x[j];
            }
            out[i] = -out[i] - self.epsilon * ax - eb * bx;
        }
    }

    /// Conservative part of the drift, `-eps^alpha B x - N(x)`.
    #[inline]
    pub fn conservative_drift_into(&self, x: &[f64], out: &mut [f64]) {
        self.cache.n.eval_into(x, out);
        let eb = self.epsilon.powf(self.alpha);
        let b = &self.cache.b;
        for i in 0..self.dim {
            let mut bx = 0.0;
            for j in 0..self.dim {
                bx += b[(i, j)] * x[j];
            }
            out[i] = -out[i] - eb * bx;
        }
    }

    /// Exact structural checks of the dissipative/conservative assumptions.
    pub fn check_structure(&self) -> StructureReport {
        let mut witnesses = Vec::new();
        let a_spd = is_spd_exact(&self.a);
        if !a_spd {
            witnesses.push("A: not symmetric positive definite".to_string());
        }
        let mut b_skew = true;
        'outer: for i in 0..self.dim {
            for j in 0..self.dim {
                if self.b[i][j] != -self.b[j][i].clone() {
                    b_skew = false;
                    witnesses.push(format!("B[{},{}] != -B[{},{}]", i + 1, j + 1, j + 1, i + 1));
                    break 'outer;
                }
            }
        }
        let energy = self.n.dot_position();
        let energy_conserving = energy.is_zero();
        if let Some((e, c)) = energy.first_term() {
            witnesses.push(format!("N(x).x has nonzero term {} * x^{:?}", format_rational(c), e));
        }
        let div = self.n.divergence();
        let divergence_free = div.is_zero();
        if let Some((e, c)) = div.first_term() {
            witnesses.push(format!("div N has nonzero term {} * x^{:?}", format_rational(c), e));
        }
        let degree = self.n.homogeneous_degree();
        let homogeneous = degree.is_some_and(|p| p >= 2) || self.n.is_zero();
        if !homogeneous {
            witnesses.push("N is not homogeneous of degree >= 2".to_string());
        }
        StructureReport {
            a_spd,
            b_skew,
            energy_conserving,
            divergence_free,
            homogeneous,
            degree,
            witnesses,
        }
    }

    /// Error unless every structural check passes.
    pub fn require_structure(&self) -> Result<StructureReport> {
        let report = self.check_structure();
        if report.all_pass() {
            Ok(report)
        } else {
            Err(Error::StructureViolation(report.witnesses.join("; ")))
        }
    }

    /// Smallest eigenvalue of the symmetric part of A (exact for diagonal A).
    pub fn lambda_min_a(&self) -> f64 {
        sym_eigen_extreme(&self.a, false)
    }

    pub fn lambda_max_a(&self) -> f64 {
        sym_eigen_extreme(&self.a, true)
    }

    /// Spectral norm of B.
    pub fn b_norm(&self) -> f64 {
        let b = &self.cache.b;
        if b.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        let btb = b.transpose() * b;
        SymmetricEigen::new(btb)
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// `max_{|x|=1} |N(x)|`, estimated on a deterministic quasi-random set of
    /// unit vectors (plus the coordinate axes and pairwise diagonals).
    pub fn n_operator_norm(&self) -> f64 {
        if self.n.is_zero() {
            return 0.0;
        }
        let d = self.dim;
        let mut best: f64 = 0.0;
        let mut out = vec![0.0; d];
        let mut probe = |x: &[f64], best: &mut f64| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r == 0.0 {
                return;
            }
            let u: Vec<f64> = x.iter().map(|v| v / r).collect();
            self.cache.n.eval_into(&u, &mut out);
            *best = best.max(out.iter().map(|v| v * v).sum::<f64>().sqrt());
        };
        for i in 0..d {
            for j in i..d {
                for s in [1.0, -1.0] {
                    let mut x = vec![0.0; d];
                    x[i] += 1.0;
                    x[j] += s;
                    probe(&x, &mut best);
                }
            }
        }
        let halton = crate::util::Halton::new(d);
        for k in 1..=4096 {
            let x: Vec<f64> = halton.point(k).iter().map(|u| 2.0 * u - 1.0).collect();
            probe(&x, &mut best);
        }
        best
    }

    /// SHA-256 of the canonical model file serialization.
    pub fn model_hash(&self) -> String {
        let text = file::to_model_file(self);
        hex_digest(text.as_bytes())
    }
}

fn validate_params(alpha: f64, epsilon: f64, delta: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must be >= 0")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} must lie in (0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!("delta = {delta} must lie in [0, 1]")));
    }
    Ok(())
}

fn to_dmatrix(m: &RationalMatrix) -> DMatrix<f64> {
    let d = m.len();
    DMatrix::from_fn(d, d, |i, j| rational_to_f64(&m[i][j]))
}

fn is_diagonal(m: &RationalMatrix) -> bool {
    m.iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, v)| i == j || v.is_zero()))
}

fn sym_eigen_extreme(m: &RationalMatrix, largest: bool) -> f64 {
    if is_diagonal(m) {
        let diag = (0..m.len()).map(|i| rational_to_f64(&m[i][i]));
        return if largest {
            diag.fold(f64::NEG_INFINITY, f64::max)
        } else {
            diag.fold(f64::INFINITY, f64::min)
        };
    }
    let a = to_dmatrix(m);
    let sym = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let vals = eig.eigenvalues.iter().cloned();
    let lam = if largest {
        vals.fold(f64::NEG_INFINITY, f64::max)
    } else {
        vals.fold(f64::INFINITY, f64::min)
    };
    debug_assert!({
        // residual of the extreme eigenpair
        let idx = eig.eigenvalues.iter().position(|v| *v == lam).unwrap_or(0);
        let v = eig.eigenvectors.column(idx);
        (&sym * v - v * lam).norm() <= 1e-10 * (1.0 + lam.abs())
    });
    lam
}

/// Symmetric positive definiteness decided exactly by rational LDL^T.
pub fn is_spd_exact(m: &RationalMatrix) -> bool {
    let d = m.len();
    for i in 0..d {
        for j in 0..i {
            if m[i][j] != m[j][i] {
                return false;
            }
        }
    }
    let mut w: Vec<Vec<Rational>> = m.to_vec();
    for k in 0..d {
        let pivot = w[k][k].clone();
        if !pivot.is_positive() {
            return false;
        }
        for i in k + 1..d {
            if w[i][k].is_zero() {
                continue;
            }
            let f = &w[i][k] / &pivot;
            for j in k..d {
                let t = &f * &w[k][j];
                w[i][j] -= t;
            }
        }
    }
    true
}

/// Outcome of [`ModelSpec::check_structure`]. Failures are entries, not errors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureReport {
    pub a_spd: bool,
    pub b_skew: bool,
    pub energy_conserving: bool,
    pub divergence_free: bool,
    pub homogeneous: bool,
    pub degree: Option<u32>,
    pub witnesses: Vec<String>,
}

impl StructureReport {
    pub fn all_pass(&self) -> bool {
        self.a_spd && self.b_skew && self.energy_conserving && self.divergence_free && self.homogeneous
    }
}
