//! Seeded ensemble simulation of the stochastic model.
//!
//! Trajectory `i` draws its Gaussians from a ChaCha stream keyed by
//! `(master_seed, i)`, and trajectories are grouped into fixed-size chunks
//! whose partial sums are merged in index order, so results do not depend on
//! how many worker threads ran the chunks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{lyapunov_value, LyapunovCertificate};
use crate::model::ModelSpec;
use crate::util::{batch_means_stderr, linear_fit, mean};

/// Largest admissible `gamma |x|^2` before the exponential moment saturates.
pub const EXP_CLIP: f64 = 700.0;
const CHUNK: usize = 64;
const EXPLOSION_RADIUS2: f64 = 1e300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Plain Euler-Maruyama.
    EulerMaruyama,
    /// Strang splitting: conservative half step, exact linear stochastic
    /// step, conservative half step. The conservative part is RK4 followed by
    /// projection back onto the sphere `|x| = const`.
    Splitting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    Point(Vec<f64>),
    /// Continue from stored states, row-major `n_traj x d`.
    Restart(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub n_traj: usize,
    pub master_seed: u64,
    pub burn_in: f64,
    pub record_stride: usize,
    /// Exponential-moment parameter; 0 disables the accumulator.
    pub gamma_exp: f64,
    pub initial: Initial,
    pub integrator: Integrator,
    /// A-priori radius entering the step-size bound.
    pub r_bound: f64,
    /// Interpret `dt`, `t_final` and `burn_in` in slow time `s = eps t`.
    pub rescaled_time: bool,
    /// Keep every `snapshot_stride`-th post-burn-in record as a sample; 0 keeps none.
    pub snapshot_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_final: 10.0,
            n_traj: 1000,
            master_seed: 0x5EED,
            burn_in: 0.0,
            record_stride: 10,
            gamma_exp: 0.0,
            initial: Initial::Point(Vec::new()),
            integrator: Integrator::EulerMaruyama,
            r_bound: 2.0,
            rescaled_time: false,
            snapshot_stride: 0,
        }
    }
}

impl SimConfig {
    fn scale(&self, eps: f64) -> f64 {
        if self.rescaled_time {
            1.0 / eps
        } else {
            1.0
        }
    }

    pub fn physical_dt(&self, eps: f64) -> f64 {
        self.dt * self.scale(eps)
    }

    pub fn physical_t_final(&self, eps: f64) -> f64 {
        self.t_final * self.scale(eps)
    }

    pub fn physical_burn_in(&self, eps: f64) -> f64 {
        self.burn_in * self.scale(eps)
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let d = model.dim();
        let eps = model.epsilon();
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if !(self.t_final >= 0.0) || !(self.burn_in >= 0.0) {
            return Err(Error::InvalidParameter("times must be nonnegative".into()));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter("record_stride must be at least 1".into()));
        }
        if !(self.gamma_exp >= 0.0) {
            return Err(Error::InvalidParameter("gamma_exp must be nonnegative".into()));
        }
        let limit = dt_max(model, self.r_bound);
        let dt = self.physical_dt(eps);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "dt = {dt} exceeds the step bound {limit:.4e} for this model"
            )));
        }
        match &self.initial {
            Initial::Point(p) if !p.is_empty() && p.len() != d => Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            }),
            Initial::Restart(s) if s.len() != self.n_traj * d => Err(Error::DimensionMismatch {
                expected: self.n_traj * d,
                got: s.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Continue from the endpoints of a previous run.
    pub fn restart_from(&self, run: &EnsembleRun) -> Self {
        Self {
            n_traj: run.endpoints.len() / run.dim,
            initial: Initial::Restart(run.endpoints.clone()),
            ..self.clone()
        }
    }
}

/// `0.1 / (eps lambda_max(A) + eps^alpha |B| + p |N|_op r^(p-1))`.
pub fn dt_max(model: &ModelSpec, r_bound: f64) -> f64 {
    let eps = model.epsilon();
    let mut rate = eps * model.lambda_max_a() + eps.powf(model.alpha()) * model.b_norm();
    if !model.nonlinearity().is_zero() {
        let p = model.nonlinearity().homogeneous_degree().unwrap_or(2).max(1) as f64;
        rate += p * model.n_operator_norm() * r_bound.powf(p - 1.0);
    }
    if rate == 0.0 {
        f64::INFINITY
    } else {
        0.1 / rate
    }
}

/// One Euler-Maruyama step. `gaussians` holds `r + d` standard normals:
/// the first `r` drive the `Z_j`, the rest the isotropic `delta` noise.
pub fn step_em(model: &ModelSpec, x: &[f64], dt: f64, gaussians: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    let r = model.noise_count();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if gaussians.len() != r + d {
        return Err(Error::DimensionMismatch {
            expected: r + d,
            got: gaussians.len(),
        });
    }
    let mut out = vec![0.0; d];
    let mut drift = vec![0.0; d];
    em_into(model, &FastDrift::new(model), x, dt, gaussians, &mut out, &mut drift);
    Ok(out)
}

fn em_into(model: &ModelSpec, fast: &FastDrift, x: &[f64], dt: f64, g: &[f64], out: &mut [f64], drift: &mut [f64]) {
    let d = x.len();
    let eps = model.epsilon();
    fast.drift_into(x, drift);
    let s = (2.0 * eps * dt).sqrt();
    for i in 0..d {
        out[i] = x[i] + drift[i] * dt;
    }
    for (j, z) in model.noise_f64().iter().enumerate() {
        for i in 0..d {
            out[i] += s * z[i] * g[j];
        }
    }
    let delta = model.delta();
    if delta > 0.0 {
        let sd = s * delta.sqrt();
        let r = model.noise_count();
        for i in 0..d {
            out[i] += sd * g[r + i];
        }
    }
}

/// Drift evaluator for inner loops: `eps^alpha` folded in, zero blocks
/// skipped and quadratic nonlinearities flattened to `(component, i, j, c)`.
#[derive(Clone, Debug)]
pub struct FastDrift {
    dim: usize,
    /// Negated quadratic terms of `N`.
    quad: Vec<(usize, usize, usize, f64)>,
    general: Option<crate::poly::CompiledField>,
    /// `eps^alpha B`, row-major; empty when `B = 0`.
    b: Vec<f64>,
    /// `eps A`, row-major.
    a: Vec<f64>,
}

impl FastDrift {
    pub fn new(model: &ModelSpec) -> Self {
        let d = model.dim();
        let n = model.nonlinearity();
        let mut quad = Vec::new();
        let mut general = None;
        if n.homogeneous_degree().is_some_and(|p| p == 2) || n.is_zero() {
            for (comp, p) in n.components().iter().enumerate() {
                for (e, c) in p.terms() {
                    let vars: Vec<usize> = e
                        .iter()
                        .enumerate()
                        .flat_map(|(v, &k)| std::iter::repeat_n(v, k as usize))
                        .collect();
                    quad.push((comp, vars[0], vars[1], -crate::poly::rational_to_f64(c)));
                }
            }
        } else {
            general = Some(n.compile());
        }
        let eb = model.epsilon().powf(model.alpha());
        let bm = model.b_f64();
        let b = if bm.iter().all(|v| *v == 0.0) {
            Vec::new()
        } else {
            (0..d * d).map(|k| eb * bm[(k / d, k % d)]).collect()
        };
        let am = model.a_f64();
        let a = (0..d * d).map(|k| model.epsilon() * am[(k / d, k % d)]).collect();
        Self {
            dim: d,
            quad,
            general,
            b,
            a,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.quad.is_empty() && self.general.is_none() && self.b.is_empty()
    }

    /// `-(eps^alpha B x + N(x))`.
    #[inline]
    pub fn conservative_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.general {
            Some(f) => {
                f.eval_into(x, out);
                out.iter_mut().for_each(|o| *o = -*o);
            }
            None => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for &(c, i, j, k) in &self.quad {
                    out[c] += k * x[i] * x[j];
                }
            }
        }
        if !self.b.is_empty() {
            for i in 0..d {
                let row = &self.b[i * d..(i + 1) * d];
                let bx: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                out[i] -= bx;
            }
        }
    }

    /// Full drift `-(eps A x + eps^alpha B x + N(x))`.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        self.conservative_into(x, out);
        for i in 0..d {
            let row = &self.a[i * d..(i + 1) * d];
            let ax: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            out[i] -= ax;
        }
    }
}

/// Exact transition of `dx = -eps A x dt + sqrt(2 eps) (Z dW + sqrt(delta) dW~)`
/// over a fixed time `h`.
#[derive(Clone, Debug)]
pub struct LinearTransition {
    dim: usize,
    /// `exp(-eps A h)`, row-major.
    decay: Vec<f64>,
    /// Square root of the exact noise covariance over `h`, row-major.
    noise_root: Vec<f64>,
}

impl LinearTransition {
    pub fn new(model: &ModelSpec, h: f64) -> Result<Self> {
        let d = model.dim();
        let eps = model.epsilon();
        let a = model.a_f64();
        let sym = (a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let lam = eig.eigenvalues.clone();
        if lam.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let q = eig.eigenvectors.clone();
        let mut c = DMatrix::<f64>::identity(d, d) * model.delta();
        for z in model.noise_f64() {
            let v = DVector::from_column_slice(z);
            c += &v * v.transpose();
        }
        let ct = q.transpose() * &c * &q;
        // int_0^h exp(-s (l_i + l_j) eps) ds in the eigenbasis
        let cov_t = DMatrix::from_fn(d, d, |i, j| {
            let s = eps * (lam[i] + lam[j]);
            let w = if s * h < 1e-8 {
                h * (1.0 - 0.5 * s * h)
            } else {
                -(-s * h).exp_m1() / s
            };
            2.0 * eps * ct[(i, j)] * w
        });
        let cov = &q * cov_t * q.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        let ce = SymmetricEigen::new(cov);
        let root = &ce.eigenvectors * DMatrix::from_diagonal(&ce.eigenvalues.map(|v| v.max(0.0).sqrt()));
        let decay = &q * DMatrix::from_diagonal(&lam.map(|l| (-eps * l * h).exp())) * q.transpose();
        let row_major = |m: &DMatrix<f64>| (0..d * d).map(|k| m[(k / d, k % d)]).collect::<Vec<f64>>();
        Ok(Self {
            dim: d,
            decay: row_major(&decay),
            noise_root: row_major(&root),
        })
    }

    /// Advances `x` using `d` standard normals `g`.
    pub fn apply(&self, x: &mut [f64], g: &[f64], tmp: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.decay[i * d..(i + 1) * d];
            let nrow = &self.noise_root[i * d..(i + 1) * d];
            let mut v = 0.0;
            for j in 0..d {
                v += row[j] * x[j] + nrow[j] * g[j];
            }
            tmp[i] = v;
        }
        x.copy_from_slice(&tmp[..d]);
    }
}

/// Strang splitting `L(h/2) C(h) L(h/2)` with `L` the exact linear
/// stochastic transition and `C` the conservative flow. Consecutive half
/// steps of `L` merge into one full step between recorded times.
#[derive(Clone, Debug)]
pub struct SplittingStepper {
    dim: usize,
    dt: f64,
    pub full: LinearTransition,
    pub half: LinearTransition,
}

impl SplittingStepper {
    pub fn new(model: &ModelSpec, dt: f64) -> Result<Self> {
        Ok(Self {
            dim: model.dim(),
            dt,
            full: LinearTransition::new(model, dt)?,
            half: LinearTransition::new(model, 0.5 * dt)?,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Norm-preserving RK4 step of `dx = -(eps^alpha B x + N(x)) dt`.
    pub fn conservative_step(&self, f: &FastDrift, x: &mut [f64], h: f64, work: &mut RkWork) {
        if f.is_trivial() {
            return;
        }
        match self.dim {
            1 => rk4_fixed::<1>(f, x, h),
            2 => rk4_fixed::<2>(f, x, h),
            3 => rk4_fixed::<3>(f, x, h),
            4 => rk4_fixed::<4>(f, x, h),
            5 => rk4_fixed::<5>(f, x, h),
            6 => rk4_fixed::<6>(f, x, h),
            8 => rk4_fixed::<8>(f, x, h),
            _ => rk4_dyn(f, x, h, work),
        }
    }
}

fn project_norm(x: &mut [f64], r0: f64) {
    let r1: f64 = x.iter().map(|v| v * v).sum();
    if r1 > 0.0 && r1.is_finite() {
        let s = (r0 / r1).sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

fn rk4_fixed<const D: usize>(f: &FastDrift, x: &mut [f64], h: f64) {
    let mut x0 = [0.0; D];
    x0.copy_from_slice(x);
    let r0: f64 = x0.iter().map(|v| v * v).sum();
    let (mut k1, mut k2, mut k3, mut k4) = ([0.0; D], [0.0; D], [0.0; D], [0.0; D]);
    let mut y = [0.0; D];
    f.conservative_into(&x0, &mut k1);
    for i in 0..D {
        y[i] = x0[i] + 0.5 * h * k1[i];
    }
    f.conservative_into(&y, &mut k2);
    for i in 0..D {
        y[i] = x0[i] + 0.5 * h * k2[i];
    }
    f.conservative_into(&y, &mut k3);
    for i in 0..D {
        y[i] = x0[i] + h * k3[i];
    }
    f.conservative_into(&y, &mut k4);
    for i in 0..D {
        x[i] = x0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    project_norm(x, r0);
}

fn rk4_dyn(f: &FastDrift, x: &mut [f64], h: f64, work: &mut RkWork) {
    let d = x.len();
    let r0: f64 = x.iter().map(|v| v * v).sum();
    let RkWork { k1, k2, k3, k4, y } = work;
    f.conservative_into(x, k1);
    for i in 0..d {
        y[i] = x[i] + 0.5 * h * k1[i];
    }
    f.conservative_into(y, k2);
    for i in 0..d {
        y[i] = x[i] + 0.5 * h * k2[i];
    }
    f.conservative_into(y, k3);
    for i in 0..d {
        y[i] = x[i] + h * k3[i];
    }
    f.conservative_into(y, k4);
    for i in 0..d {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    project_norm(x, r0);
}

#[derive(Clone, Debug)]
pub struct RkWork {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    y: Vec<f64>,
}

impl RkWork {
    pub fn new(d: usize) -> Self {
        Self {
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            y: vec![0.0; d],
        }
    }
}

/// Output of [`run_ensemble`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRun {
    pub dim: usize,
    pub epsilon: f64,
    pub times: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub se_energy: Vec<f64>,
    pub mean_quad: Vec<f64>,
    pub se_quad: Vec<f64>,
    /// Empty when the exponential moment is disabled.
    pub exp_moment: Vec<f64>,
    pub se_exp_moment: Vec<f64>,
    pub clipped: usize,
    pub exploded: usize,
    /// Final states, row-major `n_traj x d`.
    pub endpoints: Vec<f64>,
    /// Post-burn-in states kept for density estimation, row-major.
    pub snapshots: Vec<f64>,
    /// Per-trajectory time averages of `Ax.x` over the post-burn-in window.
    pub window_quad: Vec<f64>,
    /// Per-trajectory averages of `|x|^2` over the two halves of the window.
    pub window_energy_halves: (Vec<f64>, Vec<f64>),
    pub manifest: RunManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_label: String,
    pub model_hash: String,
    pub config: SimConfig,
    pub master_seed: u64,
}

impl EnsembleRun {
    pub fn n_samples(&self) -> usize {
        self.snapshots.len() / self.dim
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,mean_energy,se_energy,mean_quad,se_quad,exp_moment,se_exp_moment\n");
        for k in 0..self.times.len() {
            let (em, se) = if self.exp_moment.is_empty() {
                (String::new(), String::new())
            } else {
                (self.exp_moment[k].to_string(), self.se_exp_moment[k].to_string())
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.times[k], self.mean_energy[k], self.se_energy[k], self.mean_quad[k], self.se_quad[k], em, se
            ));
        }
        s
    }

    /// JSON manifest with the configuration stripped of bulky restart data.
    pub fn manifest_json(&self) -> String {
        let mut m = self.manifest.clone();
        if let Initial::Restart(_) = &m.config.initial {
            m.config.initial = Initial::Restart(Vec::new());
        }
        let mut value = serde_json::to_value(&m).expect("manifest serializes");
        value["exploded"] = self.exploded.into();
        value["clipped"] = self.clipped.into();
        value["records"] = self.times.len().into();
        value["snapshot_samples"] = self.n_samples().into();
        serde_json::to_string_pretty(&value).expect("manifest serializes")
    }
}

struct ChunkAcc {
    sum: Vec<[f64; 3]>,
    sumsq: Vec<[f64; 3]>,
    count: usize,
    clipped: usize,
    exploded: usize,
    endpoints: Vec<f64>,
    snapshots: Vec<f64>,
    window_quad: Vec<f64>,
    halves: (Vec<f64>, Vec<f64>),
}

/// Runs `n_traj` independent trajectories.
pub fn run_ensemble(model: &ModelSpec, config: &SimConfig) -> Result<EnsembleRun> {
    model.require_structure()?;
    config.validate(model)?;
    let d = model.dim();
    let eps = model.epsilon();
    let dt = config.physical_dt(eps);
    let n_steps = config.n_steps();
    let stride = config.record_stride;
    let n_records = n_steps / stride + 1;
    let burn_in = config.physical_burn_in(eps);
    let times: Vec<f64> = (0..n_records).map(|k| (k * stride) as f64 * dt).collect();
    let first_window = times
        .iter()
        .position(|&t| t >= burn_in - 1e-9 * dt)
        .unwrap_or(n_records);
    let window_len = n_records - first_window;
    let half_split = first_window + window_len / 2;

    let stepper = match config.integrator {
        Integrator::Splitting => Some(SplittingStepper::new(model, dt)?),
        Integrator::EulerMaruyama => None,
    };
    let a = model.a_f64().clone();
    let fast = FastDrift::new(model);
    let r = model.noise_count();
    let n_gauss = match config.integrator {
        Integrator::EulerMaruyama => r + d,
        Integrator::Splitting => d,
    };
    let gamma = config.gamma_exp;

    let n_chunks = config.n_traj.div_ceil(CHUNK);
    let chunks: Vec<ChunkAcc> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(config.n_traj);
            let mut acc = ChunkAcc {
                sum: vec![[0.0; 3]; n_records],
                sumsq: vec![[0.0; 3]; n_records],
                count: 0,
                clipped: 0,
                exploded: 0,
                endpoints: Vec::with_capacity((hi - lo) * d),
                snapshots: Vec::new(),
                window_quad: Vec::with_capacity(hi - lo),
                halves: (Vec::with_capacity(hi - lo), Vec::with_capacity(hi - lo)),
            };
            let mut x = vec![0.0; d];
            let mut next = vec![0.0; d];
            let mut scratch = vec![0.0; d];
            let mut g = vec![0.0; n_gauss];
            let mut work = RkWork::new(d);
            let mut rec = vec![[0.0f64; 3]; n_records];
            for i in lo..hi {
                match &config.initial {
                    Initial::Point(p) if !p.is_empty() => x.copy_from_slice(p),
                    Initial::Point(_) => x.iter_mut().for_each(|v| *v = 0.0),
                    Initial::Restart(s) => x.copy_from_slice(&s[i * d..(i + 1) * d]),
                }
                let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
                rng.set_stream(i as u64);
                let mut blew_up = false;
                let mut clipped = 0usize;
                let mut snaps: Vec<f64> = Vec::new();
                for k in 0..=n_steps {
                    if k % stride == 0 {
                        let kr = k / stride;
                        let e: f64 = x.iter().map(|v| v * v).sum();
                        let mut q = 0.0;
                        for (ii, xi) in x.iter().enumerate() {
                            for (jj, xj) in x.iter().enumerate() {
                                q += a[(ii, jj)] * xi * xj;
                            }
                        }
                        let m = if gamma > 0.0 {
                            let arg = gamma * e;
                            if arg > EXP_CLIP {
                                clipped += 1;
                                EXP_CLIP.exp()
                            } else {
                                arg.exp()
                            }
                        } else {
                            1.0
                        };
                        rec[kr] = [e, q, m];
                        if config.snapshot_stride > 0
                            && kr >= first_window
                            && (kr - first_window).is_multiple_of(config.snapshot_stride)
                        {
                            snaps.extend_from_slice(&x);
                        }
                    }
                    if k == n_steps {
                        break;
                    }
                    for gi in g.iter_mut() {
                        *gi = StandardNormal.sample(&mut rng);
                    }
                    match &stepper {
                        None => {
                            em_into(model, &fast, &x, dt, &g, &mut next, &mut scratch);
                            std::mem::swap(&mut x, &mut next);
                        }
                        Some(st) => {
                            if k % stride == 0 {
                                st.half.apply(&mut x, &g, &mut scratch);
                            } else {
                                st.full.apply(&mut x, &g, &mut scratch);
                            }
                            st.conservative_step(&fast, &mut x, dt, &mut work);
                            if (k + 1) % stride == 0 || k + 1 == n_steps {
                                for gi in g.iter_mut() {
                                    *gi = StandardNormal.sample(&mut rng);
                                }
                                st.half.apply(&mut x, &g, &mut scratch);
                            }
                        }
                    }
                    let e: f64 = x.iter().map(|v| v * v).sum();
                    if !e.is_finite() || e > EXPLOSION_RADIUS2 {
                        blew_up = true;
                        break;
                    }
                }
                if blew_up {
                    acc.exploded += 1;
                    acc.endpoints.extend(std::iter::repeat_n(f64::NAN, d));
                    continue;
                }
                acc.count += 1;
                acc.clipped += clipped;
                for kr in 0..n_records {
                    for o in 0..3 {
                        acc.sum[kr][o] += rec[kr][o];
                        acc.sumsq[kr][o] += rec[kr][o] * rec[kr][o];
                    }
                }
                acc.endpoints.extend_from_slice(&x);
                acc.snapshots.extend_from_slice(&snaps);
                if window_len > 0 {
                    let w = &rec[first_window..];
                    acc.window_quad
                        .push(w.iter().map(|v| v[1]).sum::<f64>() / window_len as f64);
                    let (h1, h2) = rec[first_window..].split_at(half_split - first_window);
                    let avg = |s: &[[f64; 3]]| {
                        if s.is_empty() {
                            f64::NAN
                        } else {
                            s.iter().map(|v| v[0]).sum::<f64>() / s.len() as f64
                        }
                    };
                    acc.halves.0.push(avg(h1));
                    acc.halves.1.push(avg(h2));
                }
            }
            acc
        })
        .collect();

    let mut sum = vec![[0.0; 3]; n_records];
    let mut sumsq = vec![[0.0; 3]; n_records];
    let mut count = 0;
    let mut clipped = 0;
    let mut exploded = 0;
    let mut endpoints = Vec::with_capacity(config.n_traj * d);
    let mut snapshots = Vec::new();
    let mut window_quad = Vec::new();
    let mut halves = (Vec::new(), Vec::new());
    for c in chunks {
        for k in 0..n_records {
            for o in 0..3 {
                sum[k][o] += c.sum[k][o];
                sumsq[k][o] += c.sumsq[k][o];
            }
        }
        count += c.count;
        clipped += c.clipped;
        exploded += c.exploded;
        endpoints.extend(c.endpoints);
        snapshots.extend(c.snapshots);
        window_quad.extend(c.window_quad);
        halves.0.extend(c.halves.0);
        halves.1.extend(c.halves.1);
    }
    if exploded * 1000 > config.n_traj {
        return Err(Error::Explosion {
            exploded,
            total: config.n_traj,
        });
    }
    let n = count as f64;
    let stats = |o: usize| -> (Vec<f64>, Vec<f64>) {
        (0..n_records)
            .map(|k| {
                let m = sum[k][o] / n;
                let var = if count > 1 {
                    ((sumsq[k][o] - n * m * m) / (n - 1.0)).max(0.0)
                } else {
                    0.0
                };
                (m, (var / n).sqrt())
            })
            .unzip()
    };
    let (mean_energy, se_energy) = stats(0);
    let (mean_quad, se_quad) = stats(1);
    let (exp_moment, se_exp_moment) = if gamma > 0.0 {
        stats(2)
    } else {
        (Vec::new(), Vec::new())
    };
    if mean_energy
        .iter()
        .chain(&mean_quad)
        .chain(&exp_moment)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Explosion {
            exploded: config.n_traj - count,
            total: config.n_traj,
        });
    }
    Ok(EnsembleRun {
        dim: d,
        epsilon: eps,
        times,
        mean_energy,
        se_energy,
        mean_quad,
        se_quad,
        exp_moment,
        se_exp_moment,
        clipped,
        exploded,
        endpoints,
        snapshots,
        window_quad,
        window_energy_halves: halves,
        manifest: RunManifest {
            model_label: model.label().to_string(),
            model_hash: model.model_hash(),
            config: config.clone(),
            master_seed: config.master_seed,
        },
    })
}

/// Runs `f` on a dedicated pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub estimate: f64,
    pub target: f64,
    pub residual: f64,
    pub stderr: f64,
}

/// Relative deviation of the time-averaged `E(Ax.x)` from `sum_j |Z_j|^2`.
pub fn energy_balance_residual(run: &EnsembleRun, model: &ModelSpec) -> Result<EnergyBalance> {
    let target = model.noise_energy() + model.delta() * model.dim() as f64;
    if target == 0.0 {
        return Err(Error::InvalidParameter("model has no noise; target is zero".into()));
    }
    if run.window_quad.len() < 2 {
        return Err(Error::InsufficientData("no post-burn-in window".into()));
    }
    let estimate = mean(&run.window_quad);
    let batches = run.window_quad.len().min(100);
    let se = batch_means_stderr(&run.window_quad, batches);
    Ok(EnergyBalance {
        estimate,
        target,
        residual: (estimate - target).abs() / target,
        stderr: se / target,
    })
}

/// First time the curve reaches `(1 - 1/e)` of its plateau (mean over the
/// last 20% of records), by linear interpolation. `None` when censored.
pub fn relaxation_time_from_curve(times: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 5 {
        return None;
    }
    let start = n - (n / 5).max(1);
    let plateau = mean(&values[start..]);
    let level = (1.0 - (-1.0f64).exp()) * plateau;
    for k in 1..n {
        if values[k] >= level {
            if k >= start {
                return None;
            }
            let (t0, t1, v0, v1) = (times[k - 1], times[k], values[k - 1], values[k]);
            let t = if v1 == v0 {
                t1
            } else {
                t0 + (level - v0) * (t1 - t0) / (v1 - v0)
            };
            return Some((t, plateau));
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationEntry {
    pub epsilon: f64,
    pub tau: Option<f64>,
    pub plateau: f64,
    pub censored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationReport {
    pub entries: Vec<RelaxationEntry>,
    /// Least-squares slope of `log tau` against `log eps`.
    pub slope: Option<f64>,
}

/// Slope of `log tau` versus `log eps` over uncensored entries.
pub fn relaxation_slope(entries: &[RelaxationEntry]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = entries
        .iter()
        .filter_map(|e| e.tau.map(|t| (e.epsilon.ln(), t.ln())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&x, &y).map(|f| f.slope)
}

/// Relaxation time of `E|x_t|^2` from the origin for each `eps`.
pub fn relaxation_time(model: &ModelSpec, epsilons: &[f64], template: &SimConfig) -> Result<RelaxationReport> {
    let mut entries = Vec::new();
    for &eps in epsilons {
        let m = model.with_epsilon(eps)?;
        let cfg = SimConfig {
            initial: Initial::Point(vec![0.0; m.dim()]),
            burn_in: 0.0,
            snapshot_stride: 0,
            ..template.clone()
        };
        let run = run_ensemble(&m, &cfg)?;
        let res = relaxation_time_from_curve(&run.times, &run.mean_energy);
        let plateau = res.map(|r| r.1).unwrap_or(f64::NAN);
        entries.push(RelaxationEntry {
            epsilon: eps,
            tau: res.map(|r| r.0),
            plateau,
            censored: res.is_none(),
        });
    }
    let slope = relaxation_slope(&entries);
    Ok(RelaxationReport { entries, slope })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentDecayReport {
    pub passes: bool,
    /// Smallest `bound + 5 se - E V(x_t)` over recorded times.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub clipped: usize,
    pub budget: f64,
}

/// Checks `E V(x_t) <= b/kappa + exp(-eps kappa t) V(x0)` with a 5 sigma allowance.
pub fn moment_decay_check(
    model: &ModelSpec,
    config: &SimConfig,
    cert: &LyapunovCertificate,
) -> Result<MomentDecayReport> {
    let x0 = match &config.initial {
        Initial::Point(p) if p.is_empty() => vec![0.0; model.dim()],
        Initial::Point(p) => p.clone(),
        Initial::Restart(_) => {
            return Err(Error::InvalidParameter(
                "moment decay needs a point initial condition".into(),
            ))
        }
    };
    let cfg = SimConfig {
        gamma_exp: cert.gamma,
        initial: Initial::Point(x0.clone()),
        ..config.clone()
    };
    let run = run_ensemble(model, &cfg)?;
    let v0 = lyapunov_value(cert.gamma, &x0);
    let eps = model.epsilon();
    let budget = cert.budget();
    let mut worst_margin = f64::INFINITY;
    let mut worst_time = 0.0;
    for (k, &t) in run.times.iter().enumerate() {
        let bound = budget + (-eps * cert.kappa * t).exp() * v0;
        let margin = bound + 5.0 * run.se_exp_moment[k] - run.exp_moment[k];
        if margin < worst_margin {
            worst_margin = margin;
            worst_time = t;
        }
    }
    Ok(MomentDecayReport {
        passes: worst_margin >= 0.0 && run.clipped == 0,
        worst_margin,
        worst_time,
        clipped: run.clipped,
        budget,
    })
}
