//! Finite-volume Fokker-Planck solver on a box with zero-flux walls, for
//! models of dimension at most three.
//!
//! The forward operator discretizes
//! `div(eps (Z Z^T + delta I) grad f - b f)` with `b` the model drift, so that
//! `df/dt = M f` conserves `sum f h^d` exactly.

mod diagnostics;
mod io;
mod solve;
mod sparse;

pub use diagnostics::{
    collapse_check, delta_limit_check, parreg_diagnostic, parreg_ratios, tv_overlap, tv_overlap_nodes, CollapseCurve,
    CollapseInput, CollapseReport, DeltaLimitReport, ParRegReport, TvTable,
};
pub use io::{read_container, write_container, Container, GridSnapshot};
pub use solve::{
    semigroup_apply, spectral_gap, stationary_solve, Direction, GapOptions, GapReport, Propagator, SemigroupResult,
    StationarySolution,
};
pub use sparse::{Factored, SparseMatrix};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Largest number of unknowns accepted by [`GridSpec::new`].
pub const MAX_CELLS: usize = 96 * 96 * 96;
/// Cell Peclet numbers above this are flagged.
pub const PECLET_WARN: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub radius: f64,
    /// Cells per axis.
    pub n: usize,
}

impl GridSpec {
    pub fn new(dim: usize, radius: f64, n: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("grid dimension {dim} not in 1..=3")));
        }
        if n < 16 {
            return Err(Error::InvalidParameter(format!(
                "need at least 16 cells per axis, got {n}"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter("box radius must be positive".into()));
        }
        if n.pow(dim as u32) > MAX_CELLS {
            return Err(Error::InvalidParameter(format!("{n}^{dim} cells exceeds {MAX_CELLS}")));
        }
        Ok(Self { dim, radius, n })
    }

    pub fn h(&self) -> f64 {
        2.0 * self.radius / self.n as f64
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Multi-index of a flat cell index (last axis fastest).
    pub fn multi(&self, mut idx: usize) -> [usize; 3] {
        let mut k = [0; 3];
        for a in (0..self.dim).rev() {
            k[a] = idx % self.n;
            idx /= self.n;
        }
        k
    }

    pub fn flat(&self, k: &[usize]) -> usize {
        k[..self.dim].iter().fold(0, |acc, &v| acc * self.n + v)
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        let k = self.multi(idx);
        (0..self.dim)
            .map(|a| -self.radius + (k[a] as f64 + 0.5) * self.h())
            .collect()
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.cells()).map(|i| self.center(i)).collect()
    }

    /// Cell containing `x`, clamped to the box.
    pub fn nearest_cell(&self, x: &[f64]) -> usize {
        let k: Vec<usize> = (0..self.dim)
            .map(|a| {
                let t = ((x[a] + self.radius) / self.h()).floor();
                t.clamp(0.0, (self.n - 1) as f64) as usize
            })
            .collect();
        self.flat(&k)
    }

    /// Sum of `f` times the cell volume.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell_volume()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdvectionScheme {
    /// First-order upwind drift fluxes; always an M-matrix.
    #[default]
    Upwind,
    /// Central fluxes on faces whose Peclet number allows it (`|v| h <= 2 D`),
    /// upwind elsewhere; still an M-matrix, second order where diffusion dominates.
    Hybrid,
    /// Central fluxes everywhere; may lose positivity, which is then flagged.
    Central,
    /// Upwind applied to `u = f / g` for the Gaussian reference
    /// `g = exp(-|x|^2 / 2 s^2)`, `s^2 = (sum |Z_j|^2 + delta d) / tr A`.
    /// Still an M-matrix, but the artificial diffusion acts on `u`, so
    /// near-Gaussian densities are not smeared into power-law tails by
    /// strong nonlinear advection. Reduces to `Upwind` when `tr A <= 0`.
    Weighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteOperator {
    pub grid: GridSpec,
    /// Forward generator: `df/dt = matrix f`.
    pub matrix: SparseMatrix,
    pub epsilon: f64,
    pub delta: f64,
    pub model_hash: String,
    pub scheme: AdvectionScheme,
    /// `h max|b| / (2 eps min_a (Z Z^T)_aa + eps delta)`.
    pub peclet: f64,
    pub peclet_warning: bool,
    /// Largest drift magnitude over cell centers.
    pub max_drift: f64,
    /// The diffusion tensor is not diagonally dominant, so its off-diagonal
    /// part was dropped to keep the M-matrix property.
    pub cross_limited: bool,
    /// Off-diagonal entries are all nonnegative.
    pub m_matrix: bool,
}

impl DiscreteOperator {
    /// Backward generator, the exact transpose.
    pub fn backward(&self) -> SparseMatrix {
        self.matrix.transpose()
    }

    /// Same operator with the matrix multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            matrix: self.matrix.scaled(c),
            ..self.clone()
        }
    }

    /// Largest `|sum_i M_ij|`; zero up to rounding by construction.
    pub fn mass_defect(&self) -> f64 {
        self.matrix.col_sums().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Assemble the forward operator with diffusion `eps (Z Z^T + delta I)`.
/// The structural assumptions are not required here, so linear test
/// fixtures with degenerate `A` can be discretized too.
pub fn discretize(model: &ModelSpec, grid: &GridSpec, delta: f64, scheme: AdvectionScheme) -> Result<DiscreteOperator> {
    let d = model.dim();
    if d != grid.dim {
        return Err(Error::DimensionMismatch {
            expected: grid.dim,
            got: d,
        });
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter("delta must be nonnegative".into()));
    }
    let eps = model.epsilon();
    let mut diff = vec![vec![0.0; d]; d];
    for z in model.noise_f64() {
        for a in 0..d {
            for b in 0..d {
                diff[a][b] += eps * z[a] * z[b];
            }
        }
    }
    for (a, row) in diff.iter_mut().enumerate() {
        row[a] += eps * delta;
    }
    // Split D into axis parts plus |D_ab| along the lattice diagonals
    // e_a + sign(D_ab) e_b; positive whenever D is diagonally dominant.
    let mut axis = vec![0.0; d];
    let mut diagonals = Vec::new();
    let mut cross_limited = false;
    for a in 0..d {
        let off: f64 = (0..d).filter(|&b| b != a).map(|b| diff[a][b].abs()).sum();
        axis[a] = diff[a][a] - off;
        if axis[a] < 0.0 {
            cross_limited = true;
        }
        for b in a + 1..d {
            if diff[a][b] != 0.0 {
                diagonals.push((a, b, diff[a][b].signum(), diff[a][b].abs()));
            }
        }
    }
    if cross_limited {
        axis = (0..d).map(|a| diff[a][a]).collect();
        diagonals.clear();
    }
    let mut effective = vec![vec![0.0; d]; d];
    for a in 0..d {
        effective[a][a] += axis[a];
    }
    for &(a, b, sign, w) in &diagonals {
        effective[a][a] += w;
        effective[b][b] += w;
        effective[a][b] += sign * w;
        effective[b][a] += sign * w;
    }
    let trace: f64 = (0..d).map(|a| model.a_f64()[(a, a)]).sum();
    let reference = if scheme == AdvectionScheme::Weighted && trace > 0.0 {
        let s2 = (model.noise_energy() + delta * d as f64) / trace;
        (s2 > 0.0).then(|| Reference {
            inv_var: 1.0 / s2,
            diffusion: effective,
        })
    } else {
        None
    };
    let matrix = assemble(model, grid, &axis, &diagonals, scheme, reference.as_ref());
    let max_drift = grid
        .centers()
        .par_iter()
        .map(|x| {
            let mut b = vec![0.0; d];
            model.drift_into(x, &mut b);
            b.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .reduce(|| 0.0, f64::max);
    let min_axis = (0..d)
        .map(|a| model.noise_f64().iter().map(|z| z[a] * z[a]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let denom = 2.0 * eps * min_axis + eps * delta;
    let peclet = if denom > 0.0 {
        grid.h() * max_drift / denom
    } else {
        f64::INFINITY
    };
    let m_matrix = matrix.min_offdiag() >= 0.0;
    Ok(DiscreteOperator {
        grid: grid.clone(),
        matrix,
        epsilon: eps,
        delta,
        model_hash: model.model_hash(),
        scheme,
        peclet,
        peclet_warning: peclet > PECLET_WARN,
        max_drift,
        cross_limited,
        m_matrix,
    })
}

/// Gaussian reference for the weighted scheme.
struct Reference {
    inv_var: f64,
    /// The diffusion tensor actually represented by the stencil.
    diffusion: Vec<Vec<f64>>,
}

impl Reference {
    /// `(sqrt(g_j / g_i), sqrt(g_i / g_j))`.
    fn ratios(&self, xi: &[f64], xj: &[f64]) -> (f64, f64) {
        let ni: f64 = xi.iter().map(|v| v * v).sum();
        let nj: f64 = xj.iter().map(|v| v * v).sum();
        let e = (-(nj - ni) * self.inv_var / 4.0).exp();
        (e, 1.0 / e)
    }
}

fn assemble(
    model: &ModelSpec,
    grid: &GridSpec,
    axis: &[f64],
    diagonals: &[(usize, usize, f64, f64)],
    scheme: AdvectionScheme,
    reference: Option<&Reference>,
) -> SparseMatrix {
    let d = grid.dim;
    let n = grid.n;
    let h = grid.h();
    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..grid.cells())
        .into_par_iter()
        .map(|i| {
            let mut t = Vec::with_capacity(8 * d);
            let k = grid.multi(i);
            let center = grid.center(i);
            let mut b = vec![0.0; d];
            for a in 0..d {
                if k[a] + 1 >= n {
                    continue;
                }
                let mut kj = k;
                kj[a] += 1;
                let j = grid.flat(&kj);
                let mut xf = center.clone();
                xf[a] += 0.5 * h;
                model.drift_into(&xf, &mut b);
                let mut v = b[a];
                // with f = g u the flux is g (b + D x / s^2) u - g D grad u
                let (wi, wj) = match reference {
                    Some(r) => {
                        v += (0..d).map(|c| r.diffusion[a][c] * xf[c]).sum::<f64>() * r.inv_var;
                        r.ratios(&center, &grid.center(j))
                    }
                    None => (1.0, 1.0),
                };
                let dc = axis[a] / (h * h);
                let central = match scheme {
                    AdvectionScheme::Upwind | AdvectionScheme::Weighted => false,
                    AdvectionScheme::Central => true,
                    AdvectionScheme::Hybrid => v.abs() * h <= 2.0 * axis[a],
                };
                // net rate from i to j is alpha f_i - beta f_j
                let (alpha, beta) = if central {
                    (v / (2.0 * h) + dc, -v / (2.0 * h) + dc)
                } else {
                    (v.max(0.0) / h + dc, (-v).max(0.0) / h + dc)
                };
                let (alpha, beta) = (alpha * wi, beta * wj);
                t.push((i, i, -alpha));
                t.push((i, j, beta));
                t.push((j, i, alpha));
                t.push((j, j, -beta));
            }
            for &(a, b, sign, w) in diagonals {
                // neighbor at +e_a + sign e_b
                let kb = k[b] as isize + sign as isize;
                if k[a] + 1 >= n || kb < 0 || kb >= n as isize {
                    continue;
                }
                let mut kj = k;
                kj[a] += 1;
                kj[b] = kb as usize;
                let j = grid.flat(&kj);
                let c = w / (h * h);
                let (wi, wj) = reference.map_or((1.0, 1.0), |r| r.ratios(&center, &grid.center(j)));
                t.push((i, i, -c * wi));
                t.push((i, j, c * wj));
                t.push((j, i, c * wi));
                t.push((j, j, -c * wj));
            }
            t
        })
        .collect();
    SparseMatrix::from_triplets(grid.cells(), blocks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_linear, build_ou, build_triad};
    use crate::poly::rational_from_int;

    #[test]
    fn grid_indexing() {
        let g = GridSpec::new(3, 2.0, 16).unwrap();
        let idx = g.flat(&[3, 5, 7]);
        assert_eq!(g.multi(idx)[..3], [3, 5, 7]);
        assert_eq!(g.nearest_cell(&g.center(idx)), idx);
        assert!(GridSpec::new(4, 1.0, 16).is_err());
        assert!(GridSpec::new(2, 1.0, 8).is_err());
    }

    #[test]
    fn operator_invariants_triad() {
        let m = build_triad(
            [rational_from_int(1), rational_from_int(1), rational_from_int(-2)],
            1.0,
            1.0,
            0.1,
            1.0,
        )
        .unwrap();
        let g = GridSpec::new(3, 6.0, 16).unwrap();
        for scheme in [AdvectionScheme::Upwind, AdvectionScheme::Hybrid] {
            let op = discretize(&m, &g, 0.0, scheme).unwrap();
            assert!(op.mass_defect() < 1e-12 * op.matrix.norm_inf());
            assert!(op.m_matrix);
            assert!(op.peclet.is_infinite() && op.peclet_warning);
            let ones = vec![1.0; g.cells()];
            let back = op.backward().matvec(&ones);
            assert!(back.iter().all(|v| v.abs() < 1e-12 * op.matrix.norm_inf()));
        }
    }

    #[test]
    fn ou_peclet_is_small() {
        let m = build_ou(1.0, 1.0, 0.1).unwrap();
        let g = GridSpec::new(1, 6.0, 128).unwrap();
        let op = discretize(&m, &g, 0.0, AdvectionScheme::Upwind).unwrap();
        assert!(op.peclet < 1.0 && !op.peclet_warning);
    }

    #[test]
    fn skewed_noise_keeps_positivity() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m = build_linear(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![0.0; 2], vec![0.0; 2]],
            &[vec![s, s]],
            0.5,
            0.0,
        )
        .unwrap();
        let g = GridSpec::new(2, 4.0, 16).unwrap();
        for delta in [0.0, 1.0] {
            let op = discretize(&m, &g, delta, AdvectionScheme::Upwind).unwrap();
            assert!(op.m_matrix && !op.cross_limited);
            assert!(op.mass_defect() < 1e-13);
        }
        // not diagonally dominant: the cross part is dropped and flagged
        let z = [0.9, 0.3];
        let m = build_linear(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![0.0; 2], vec![0.0; 2]],
            &[z.to_vec()],
            0.5,
            0.0,
        )
        .unwrap();
        let op = discretize(&m, &g, 0.0, AdvectionScheme::Upwind).unwrap();
        assert!(op.m_matrix && op.cross_limited);
    }
}
