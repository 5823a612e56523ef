use faer::Mat;
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sparse::{Factored, SparseMatrix};
use super::DiscreteOperator;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarySolution {
    /// Density with `sum f h^d = 1`.
    pub density: Vec<f64>,
    /// `|M f|_inf / (|M|_inf |f|_inf)`.
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    /// Rounding-level negative entries set to zero.
    pub clamped: usize,
}

const STATIONARY_TOL: f64 = 1e-10;

/// Null vector of the forward generator by inverse iteration with a small shift.
pub fn stationary_solve(op: &DiscreteOperator) -> Result<StationarySolution> {
    let m = &op.matrix;
    let norm = m.norm_inf();
    if norm == 0.0 {
        return Err(Error::InvalidParameter("operator is zero".into()));
    }
    let shift = 1e-8 * norm;
    let lu = m.factor_affine(-shift, 1.0)?;
    let vol = op.grid.cell_volume();
    let mut f = vec![1.0 / (vol * m.n as f64); m.n];
    let mut history = Vec::new();
    for it in 1..=40 {
        let mut x = lu.solve(&f)?;
        let mass: f64 = x.iter().sum::<f64>() * vol;
        if mass == 0.0 || !mass.is_finite() {
            return Err(Error::Stagnation { history });
        }
        x.iter_mut().for_each(|v| *v /= mass);
        let r = m.matvec(&x);
        let fmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let res = r.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (norm * fmax);
        history.push(res);
        f = x;
        if res <= STATIONARY_TOL {
            let mut clamped = 0;
            let floor = -1e-10 * fmax;
            for v in f.iter_mut() {
                if *v < 0.0 {
                    if *v < floor {
                        return Err(Error::InvalidParameter(format!(
                            "stationary density has a negative entry {v:.3e}; operator is not an M-matrix"
                        )));
                    }
                    *v = 0.0;
                    clamped += 1;
                }
            }
            return Ok(StationarySolution {
                density: f,
                residual: res,
                iterations: it,
                history,
                clamped,
            });
        }
        if it >= 6 && res > 0.5 * history[it - 6] {
            return Err(Error::Stagnation { history });
        }
    }
    Err(Error::Stagnation { history })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapOptions {
    /// Shift of the inverted operator; `None` uses `eps`.
    pub shift: Option<f64>,
    pub krylov_dim: usize,
    /// Ritz values reported.
    pub wanted: usize,
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            shift: None,
            krylov_dim: 40,
            wanted: 6,
            tol: 1e-8,
            max_restarts: 15,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap: f64,
    /// Leading eigenvalues `(re, im, relative Ritz residual)`, by decreasing real part.
    pub eigenvalues: Vec<(f64, f64, f64)>,
    pub shift: f64,
    pub restarts: usize,
}

/// Generator eigenvalue, Ritz value, relative residual and Ritz vector.
type Ritz = (Complex<f64>, Complex<f64>, f64, DVector<Complex<f64>>);

/// `-max Re lambda` over the spectrum of the backward generator on functions
/// with zero mean against `stationary`, via shift-invert Arnoldi.
pub fn spectral_gap(op: &DiscreteOperator, stationary: &[f64], opts: &GapOptions) -> Result<GapReport> {
    let back = op.backward();
    let n = back.n;
    let vol = op.grid.cell_volume();
    let shift = opts.shift.unwrap_or(op.epsilon);
    let lu = back.factor_affine(-shift, 1.0)?;
    let project = |v: &mut [f64]| {
        let mean: f64 = v.iter().zip(stationary).map(|(a, b)| a * b).sum::<f64>() * vol;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let mut w = lu.solve(v)?;
        project(&mut w);
        Ok(w)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    project(&mut start);
    let m = opts.krylov_dim.min(n.saturating_sub(1)).max(2);
    let mut last_res = Vec::new();
    for restart in 0..=opts.max_restarts {
        let (basis, h) = arnoldi(&apply, &start, m)?;
        let k = basis.len() - 1;
        let hm = h.view((0, 0), (k, k)).into_owned();
        let beta = h[(k, k - 1)];
        let thetas = hm.complex_eigenvalues();
        let mut ritz: Vec<Ritz> = thetas
            .iter()
            .filter(|t| t.norm() > 1e-300)
            .map(|&t| {
                let y = ritz_vector(&hm, t);
                let res = beta.abs() * y[k - 1].norm() / t.norm();
                (Complex::new(shift, 0.0) + t.inv(), t, res, y)
            })
            .collect();
        ritz.sort_by(|a, b| b.0.re.total_cmp(&a.0.re));
        last_res = ritz.iter().take(opts.wanted).map(|r| r.2).collect();
        let converged = ritz.first().map(|r| r.2 <= opts.tol).unwrap_or(false) || beta.abs() < 1e-14;
        if converged || restart == opts.max_restarts {
            if !converged {
                return Err(Error::EigenNoConvergence { residuals: last_res });
            }
            let eigenvalues: Vec<(f64, f64, f64)> =
                ritz.iter().take(opts.wanted).map(|r| (r.0.re, r.0.im, r.2)).collect();
            return Ok(GapReport {
                gap: -eigenvalues[0].0,
                eigenvalues,
                shift,
                restarts: restart,
            });
        }
        // restart from the wanted Ritz vectors
        let mut next = vec![0.0; n];
        for r in ritz.iter().take(opts.wanted.max(1)) {
            let y = &r.3;
            for (j, v) in basis.iter().take(k).enumerate() {
                let c = y[j].re + y[j].im;
                for (x, vi) in next.iter_mut().zip(v) {
                    *x += c * vi;
                }
            }
        }
        project(&mut next);
        start = next;
    }
    Err(Error::EigenNoConvergence { residuals: last_res })
}

type Basis = Vec<Vec<f64>>;

fn arnoldi(apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>, start: &[f64], m: usize) -> Result<(Basis, DMatrix<f64>)> {
    let norm = dot(start, start).sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidParameter("zero Arnoldi start vector".into()));
    }
    let mut basis = vec![start.iter().map(|v| v / norm).collect::<Vec<f64>>()];
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    for j in 0..m {
        let mut w = apply(&basis[j])?;
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                h[(i, j)] += c;
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nw = dot(&w, &w).sqrt();
        h[(j + 1, j)] = nw;
        if nw < 1e-14 {
            let h = h.view((0, 0), (j + 2, j + 1)).into_owned();
            basis.push(vec![0.0; w.len()]);
            return Ok((basis, h));
        }
        basis.push(w.into_iter().map(|x| x / nw).collect());
    }
    Ok((basis, h))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized eigenvector of a small matrix for a known eigenvalue, by
/// inverse iteration.
fn ritz_vector(hm: &DMatrix<f64>, theta: Complex<f64>) -> DVector<Complex<f64>> {
    let k = hm.nrows();
    let pert = Complex::new(1e-12 * theta.norm().max(1e-300), 0.0);
    let a = DMatrix::<Complex<f64>>::from_fn(k, k, |i, j| {
        let v = Complex::new(hm[(i, j)], 0.0);
        if i == j {
            v - theta - pert
        } else {
            v
        }
    });
    let lu = a.lu();
    let mut y = DVector::<Complex<f64>>::from_fn(k, |i, _| Complex::new(1.0 / (1.0 + i as f64), 0.3));
    for _ in 0..3 {
        if let Some(z) = lu.solve(&y) {
            let nz = z.norm();
            if nz > 0.0 && nz.is_finite() {
                y = z / Complex::new(nz, 0.0);
            }
        }
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Densities: `df/dt = M f`.
    Forward,
    /// Observables: `dg/dt = M^T g`.
    Backward,
}

/// Crank-Nicolson stepper with a fixed step, started with two implicit
/// Euler half steps (Rannacher) to damp rough initial data.
pub struct Propagator {
    matrix: SparseMatrix,
    lu: Factored,
    pub dt: f64,
}

impl Propagator {
    pub fn new(op: &DiscreteOperator, direction: Direction, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("time step must be positive".into()));
        }
        let matrix = match direction {
            Direction::Forward => op.matrix.clone(),
            Direction::Backward => op.backward(),
        };
        let lu = matrix.factor_affine(1.0, -0.5 * dt)?;
        Ok(Self { matrix, lu, dt })
    }

    /// Advance every column by `steps` steps, calling `record(step, columns)`
    /// after each one.
    pub fn evolve(&self, cols: &mut Mat<f64>, steps: usize, mut record: impl FnMut(usize, &Mat<f64>)) -> Result<()> {
        let n = self.matrix.n;
        let mut tmp = vec![0.0; n];
        for s in 0..steps {
            if s == 0 {
                self.lu.solve_mat(cols)?;
                self.lu.solve_mat(cols)?;
            } else {
                for j in 0..cols.ncols() {
                    let c = cols.col_as_slice_mut(j);
                    self.matrix.matvec_into(c, &mut tmp);
                    for (x, t) in c.iter_mut().zip(&tmp) {
                        *x += 0.5 * self.dt * t;
                    }
                }
                self.lu.solve_mat(cols)?;
            }
            record(s + 1, cols);
        }
        Ok(())
    }
}

pub(crate) fn columns(vs: &[Vec<f64>]) -> Mat<f64> {
    let n = vs.first().map(|v| v.len()).unwrap_or(0);
    Mat::from_fn(n, vs.len(), |i, j| vs[j][i])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupResult {
    pub values: Vec<f64>,
    pub steps: usize,
    pub dt: f64,
    /// Relative change of `sum f h^d` (forward direction).
    pub mass_drift: f64,
    pub min_value: f64,
    /// Some entry fell below `-1e-10 max f0`.
    pub undershoot: bool,
}

/// Default step: `min(0.5 h / max|b|, 0.1 / eps)`.
pub fn default_dt(op: &DiscreteOperator) -> f64 {
    let cfl = if op.max_drift > 0.0 {
        0.5 * op.grid.h() / op.max_drift
    } else {
        f64::INFINITY
    };
    cfl.min(0.1 / op.epsilon)
}

/// `exp(t M) f0` (or `exp(t M^T) f0` backward).
pub fn semigroup_apply(
    op: &DiscreteOperator,
    f0: &[f64],
    t: f64,
    steps: Option<usize>,
    direction: Direction,
) -> Result<SemigroupResult> {
    if f0.len() != op.grid.cells() {
        return Err(Error::DimensionMismatch {
            expected: op.grid.cells(),
            got: f0.len(),
        });
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter("time must be nonnegative".into()));
    }
    let fmax = f0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if t == 0.0 {
        return Ok(SemigroupResult {
            values: f0.to_vec(),
            steps: 0,
            dt: 0.0,
            mass_drift: 0.0,
            min_value: f0.iter().copied().fold(f64::INFINITY, f64::min),
            undershoot: false,
        });
    }
    let steps = steps.unwrap_or_else(|| (t / default_dt(op)).ceil() as usize).max(1);
    let dt = t / steps as f64;
    let prop = Propagator::new(op, direction, dt)?;
    let mut cols = columns(&[f0.to_vec()]);
    prop.evolve(&mut cols, steps, |_, _| {})?;
    let values = cols.col_as_slice(0).to_vec();
    let m0: f64 = f0.iter().sum();
    let m1: f64 = values.iter().sum();
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SemigroupResult {
        mass_drift: if m0 != 0.0 {
            (m1 - m0).abs() / m0.abs()
        } else {
            (m1 - m0).abs()
        },
        min_value,
        undershoot: min_value < -1e-10 * fmax,
        values,
        steps,
        dt,
    })
}
