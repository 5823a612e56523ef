use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::solve::{columns, stationary_solve, Direction, Propagator};
use super::{discretize, AdvectionScheme, DiscreteOperator, GridSpec};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvTable {
    pub nodes: Vec<Vec<f64>>,
    pub t: f64,
    /// `(i, j, sum |p_i - p_j| h^d)` for `i < j`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub max: f64,
}

/// Total variation between the laws at time `t` started from the cells
/// containing `x` and `y`.
pub fn tv_overlap(op: &DiscreteOperator, x: &[f64], y: &[f64], t: f64, steps: usize) -> Result<f64> {
    let table = tv_overlap_nodes(op, &[x.to_vec(), y.to_vec()], t, steps)?;
    Ok(table.pairs.first().map(|p| p.2).unwrap_or(0.0))
}

/// All pairwise overlaps among `nodes`, evolving one delta per node.
pub fn tv_overlap_nodes(op: &DiscreteOperator, nodes: &[Vec<f64>], t: f64, steps: usize) -> Result<TvTable> {
    let g = &op.grid;
    let vol = g.cell_volume();
    let cells: Vec<usize> = nodes.iter().map(|x| g.nearest_cell(x)).collect();
    let init: Vec<Vec<f64>> = cells
        .iter()
        .map(|&c| {
            let mut f = vec![0.0; g.cells()];
            f[c] = 1.0 / vol;
            f
        })
        .collect();
    let mut cols = columns(&init);
    if t > 0.0 {
        let prop = Propagator::new(op, Direction::Forward, t / steps.max(1) as f64)?;
        prop.evolve(&mut cols, steps.max(1), |_, _| {})?;
    }
    let mut pairs = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let tv = if cells[i] == cells[j] {
                0.0
            } else {
                cols.col_as_slice(i)
                    .iter()
                    .zip(cols.col_as_slice(j))
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>()
                    * vol
            };
            pairs.push((i, j, tv));
        }
    }
    let max = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    Ok(TvTable {
        nodes: nodes.to_vec(),
        t,
        pairs,
        max,
    })
}

pub struct CollapseInput<'a> {
    pub op: &'a DiscreteOperator,
    pub stationary: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseCurve {
    pub epsilon: f64,
    pub values: Vec<f64>,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// Rescaled times `s = eps t`.
    pub s_grid: Vec<f64>,
    pub curves: Vec<CollapseCurve>,
    /// Max over pairs of curves of the sup distance.
    pub defect: f64,
}

fn weighted_mean(f: &[f64], mu: &[f64], vol: f64) -> f64 {
    f.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>() * vol
}

/// `D(t) = |P_t f - mu(f)|_{L2(mu)} / |f - mu(f)|_inf` on `s = eps t` in `[0, s_max]`.
pub fn collapse_check(inputs: &[CollapseInput<'_>], f: &[f64], s_max: f64, steps: usize) -> Result<CollapseReport> {
    if inputs.is_empty() {
        return Err(Error::InsufficientData("no operators".into()));
    }
    let grid = &inputs[0].op.grid;
    if inputs.iter().any(|c| &c.op.grid != grid) || f.len() != grid.cells() {
        return Err(Error::InvalidParameter("collapse check needs a common grid".into()));
    }
    let steps = steps.max(1);
    let vol = grid.cell_volume();
    let s_grid: Vec<f64> = (0..=steps).map(|k| s_max * k as f64 / steps as f64).collect();
    let mut curves = Vec::new();
    for input in inputs {
        let mu = input.stationary;
        let mean = weighted_mean(f, mu, vol);
        let sup = f.iter().fold(0.0f64, |a, v| a.max((v - mean).abs()));
        let scale = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        // constant observables leave only rounding noise in f - mean
        let flat = sup <= 1e-12 * scale;
        let d_of = |g: &[f64]| -> f64 {
            if flat {
                return 0.0;
            }
            let l2: f64 = g.iter().zip(mu).map(|(x, m)| (x - mean).powi(2) * m).sum::<f64>() * vol;
            l2.sqrt() / sup
        };
        let mut values = vec![d_of(f)];
        let eps = input.op.epsilon;
        let prop = Propagator::new(input.op, Direction::Backward, s_max / steps as f64 / eps)?;
        let mut cols = columns(&[f.to_vec()]);
        prop.evolve(&mut cols, steps, |_, c: &Mat<f64>| values.push(d_of(c.col_as_slice(0))))?;
        let monotone = values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-14);
        curves.push(CollapseCurve {
            epsilon: eps,
            values,
            monotone,
        });
    }
    let mut defect: f64 = 0.0;
    for a in 0..curves.len() {
        for b in a + 1..curves.len() {
            for (x, y) in curves[a].values.iter().zip(&curves[b].values) {
                defect = defect.max((x - y).abs());
            }
        }
    }
    Ok(CollapseReport { s_grid, curves, defect })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParRegReport {
    pub epsilon: f64,
    pub ratios: Vec<f64>,
    pub max: f64,
}

/// `|P_{1/eps} f|_{L-inf(B_{R/2})} / |f|_{L2(mu)}` over random sign functions `f`.
pub fn parreg_diagnostic(
    op: &DiscreteOperator,
    stationary: &[f64],
    trials: usize,
    seed: u64,
    steps: usize,
) -> Result<ParRegReport> {
    let cells = op.grid.cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs: Vec<Vec<f64>> = (0..trials)
        .map(|_| {
            (0..cells)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let ratios = parreg_ratios(op, stationary, &fs, steps)?;
    let max = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ParRegReport {
        epsilon: op.epsilon,
        ratios,
        max,
    })
}

/// The regularization ratio for each observable in `fs`.
pub fn parreg_ratios(op: &DiscreteOperator, stationary: &[f64], fs: &[Vec<f64>], steps: usize) -> Result<Vec<f64>> {
    let g = &op.grid;
    let vol = g.cell_volume();
    if fs.is_empty() {
        return Ok(Vec::new());
    }
    if fs.iter().any(|f| f.len() != g.cells()) {
        return Err(Error::DimensionMismatch {
            expected: g.cells(),
            got: fs.iter().map(|f| f.len()).find(|&l| l != g.cells()).unwrap_or(0),
        });
    }
    let norms: Vec<f64> = fs
        .iter()
        .map(|f| (f.iter().zip(stationary).map(|(x, m)| x * x * m).sum::<f64>() * vol).sqrt())
        .collect();
    let inner: Vec<usize> = (0..g.cells())
        .filter(|&i| g.center(i).iter().map(|x| x * x).sum::<f64>().sqrt() <= 0.5 * g.radius)
        .collect();
    let mut cols = columns(fs);
    let t = 1.0 / op.epsilon;
    let prop = Propagator::new(op, Direction::Backward, t / steps.max(1) as f64)?;
    prop.evolve(&mut cols, steps.max(1), |_, _| {})?;
    Ok((0..fs.len())
        .map(|j| {
            let c = cols.col_as_slice(j);
            let sup = inner.iter().fold(0.0f64, |a, &i| a.max(c[i].abs()));
            sup / norms[j]
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaLimitReport {
    pub epsilon: f64,
    /// `(delta, |f_delta - f_0|_{L1})`.
    pub rows: Vec<(f64, f64)>,
    pub strictly_decreasing: bool,
    pub densities: Vec<Vec<f64>>,
}

/// L1 distance of each regularized stationary density to the unregularized one.
pub fn delta_limit_check(
    model: &ModelSpec,
    grid: &GridSpec,
    epsilon: f64,
    deltas: &[f64],
    scheme: AdvectionScheme,
) -> Result<DeltaLimitReport> {
    if deltas.is_empty() || *deltas.last().unwrap() != 0.0 {
        return Err(Error::InvalidParameter("delta list must end with 0".into()));
    }
    if deltas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParameter("delta list must be decreasing".into()));
    }
    let m = model.with_epsilon(epsilon)?;
    let densities: Vec<Vec<f64>> = deltas
        .iter()
        .map(|&dl| {
            let op = discretize(&m, grid, dl, scheme)?;
            Ok(stationary_solve(&op)?.density)
        })
        .collect::<Result<_>>()?;
    let base = densities.last().unwrap();
    let vol = grid.cell_volume();
    let rows: Vec<(f64, f64)> = deltas
        .iter()
        .zip(&densities)
        .map(|(&dl, f)| (dl, f.iter().zip(base).map(|(a, b)| (a - b).abs()).sum::<f64>() * vol))
        .collect();
    let strictly_decreasing = rows.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(DeltaLimitReport {
        epsilon,
        rows,
        strictly_decreasing,
        densities,
    })
}
