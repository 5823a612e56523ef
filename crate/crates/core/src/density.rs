//! Histogram estimates of stationary densities and the tail, lower-bound and
//! moment diagnostics built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EXP_CLIP;
use crate::util::{linear_fit, mean};

pub const DEFAULT_BINS: usize = 40;
/// Tail cells with fewer counts than this are ignored by the shell fit.
pub const MIN_TAIL_COUNT: u64 = 50;
const BLOCK: usize = 1 << 14;

/// One histogram over `[-R, R]^k` (k = 1, 2 or 3), stored row-major with the
/// last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Coordinates this histogram resolves.
    pub axes: Vec<usize>,
    /// Empty for estimates built from an analytic density.
    pub counts: Vec<u64>,
    pub values: Vec<f64>,
    /// Fraction of samples that fell outside the box.
    pub out_of_box: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub dim: usize,
    pub box_radius: f64,
    pub bins: usize,
    pub sample_count: usize,
    pub epsilon: Option<f64>,
    /// A single full-grid histogram for `dim <= 3`, otherwise every
    /// coordinate-pair marginal.
    pub histograms: Vec<Histogram>,
}

impl DensityEstimate {
    pub fn is_full_grid(&self) -> bool {
        self.histograms.len() == 1 && self.histograms[0].axes.len() == self.dim
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.box_radius / self.bins as f64
    }

    pub fn cell_volume(&self, h: &Histogram) -> f64 {
        self.cell_width().powi(h.axes.len() as i32)
    }

    fn center_coord(&self, k: usize) -> f64 {
        -self.box_radius + (k as f64 + 0.5) * self.cell_width()
    }

    /// Cell center of flat index `idx` in a histogram over `k` axes.
    pub fn cell_center(&self, k: usize, mut idx: usize) -> Vec<f64> {
        let mut c = vec![0.0; k];
        for a in (0..k).rev() {
            c[a] = self.center_coord(idx % self.bins);
            idx /= self.bins;
        }
        c
    }

    /// `sum f * vol` for each histogram.
    pub fn mass_inside(&self) -> Vec<f64> {
        self.histograms
            .iter()
            .map(|h| h.values.iter().sum::<f64>() * self.cell_volume(h))
            .collect()
    }

    /// Build an estimate from a density evaluated at cell centers (full grid only).
    pub fn from_function(dim: usize, box_radius: f64, bins: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::InvalidParameter("analytic estimates need 1 <= dim <= 3".into()));
        }
        let mut est = Self {
            dim,
            box_radius,
            bins,
            sample_count: 0,
            epsilon: None,
            histograms: Vec::new(),
        };
        let cells = bins.pow(dim as u32);
        let values: Vec<f64> = (0..cells).map(|i| f(&est.cell_center(dim, i))).collect();
        let vol = est.cell_width().powi(dim as i32);
        let inside: f64 = values.iter().sum::<f64>() * vol;
        est.histograms.push(Histogram {
            axes: (0..dim).collect(),
            counts: Vec::new(),
            values,
            out_of_box: (1.0 - inside).max(0.0),
        });
        Ok(est)
    }

    /// CSV with one row per cell: `hist,<axis coordinates>,count,density`.
    /// Pairwise marginals name their axes in the `hist` column as `i-j`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let k = self.histograms.first().map(|h| h.axes.len()).unwrap_or(0);
        s.push_str("hist");
        for a in 0..k {
            s.push_str(&format!(",c{}", a + 1));
        }
        s.push_str(",count,density\n");
        for h in &self.histograms {
            let tag: Vec<String> = h.axes.iter().map(|a| (a + 1).to_string()).collect();
            let tag = tag.join("-");
            for (i, v) in h.values.iter().enumerate() {
                s.push_str(&tag);
                for c in self.cell_center(h.axes.len(), i) {
                    s.push_str(&format!(",{c}"));
                }
                let count = h.counts.get(i).copied().unwrap_or(0);
                s.push_str(&format!(",{count},{v}\n"));
            }
        }
        s
    }
}

/// Four times the root-mean-square radius of the samples.
pub fn default_box_radius(samples: &[f64], dim: usize) -> Result<f64> {
    if samples.is_empty() || dim == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let n = samples.len() / dim;
    let ms = samples.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(4.0 * ms.sqrt().max(1e-12))
}

fn bin_of(x: f64, radius: f64, bins: usize) -> Option<usize> {
    if !(x >= -radius && x <= radius) {
        return None;
    }
    let k = ((x + radius) / (2.0 * radius) * bins as f64).floor() as usize;
    Some(k.min(bins - 1))
}

fn accumulate(samples: &[f64], dim: usize, axes: &[usize], radius: f64, bins: usize) -> (Vec<u64>, u64) {
    let cells = bins.pow(axes.len() as u32);
    let n = samples.len() / dim;
    let blocks: Vec<(Vec<u64>, u64)> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut counts = vec![0u64; cells];
            let mut inside = 0u64;
            for s in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let x = &samples[s * dim..(s + 1) * dim];
                let mut idx = 0usize;
                let mut ok = true;
                for &a in axes {
                    match bin_of(x[a], radius, bins) {
                        Some(k) => idx = idx * bins + k,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    counts[idx] += 1;
                    inside += 1;
                }
            }
            (counts, inside)
        })
        .collect();
    let mut counts = vec![0u64; cells];
    let mut inside = 0;
    for (c, i) in blocks {
        for (t, v) in counts.iter_mut().zip(c) {
            *t += v;
        }
        inside += i;
    }
    (counts, inside)
}

/// Histogram density estimate from row-major `n x dim` samples.
pub fn estimate_density(samples: &[f64], dim: usize, box_radius: f64, bins: usize) -> Result<DensityEstimate> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::InvalidParameter("sample buffer does not match dimension".into()));
    }
    let n = samples.len() / dim;
    if n == 0 {
        return Err(Error::InsufficientData("empty sample set".into()));
    }
    if bins == 0 || !(box_radius > 0.0) {
        return Err(Error::InvalidParameter(
            "need bins >= 1 and a positive box radius".into(),
        ));
    }
    let needed = 10 * bins.pow(dim.min(2) as u32);
    if n < needed {
        return Err(Error::InsufficientData(format!(
            "{n} samples for {bins} bins; at least {needed} required"
        )));
    }
    let axis_sets: Vec<Vec<usize>> = if dim <= 3 {
        vec![(0..dim).collect()]
    } else {
        (0..dim).flat_map(|i| (i + 1..dim).map(move |j| vec![i, j])).collect()
    };
    let width = 2.0 * box_radius / bins as f64;
    let histograms = axis_sets
        .into_iter()
        .map(|axes| {
            let (counts, inside) = accumulate(samples, dim, &axes, box_radius, bins);
            let norm = n as f64 * width.powi(axes.len() as i32);
            let values = counts.iter().map(|&c| c as f64 / norm).collect();
            Histogram {
                axes,
                counts,
                values,
                out_of_box: (n as u64 - inside) as f64 / n as f64,
            }
        })
        .collect();
    Ok(DensityEstimate {
        dim,
        box_radius,
        bins,
        sample_count: n,
        epsilon: None,
        histograms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub lambda: f64,
    pub r_squared: f64,
    /// `(|x|^2, log f)` at the maximizing cell of each shell used.
    pub shells: Vec<(f64, f64)>,
    /// True when the fit explains the data (R^2 >= 0.95) with positive decay.
    pub gaussian: bool,
}

/// Fits `log max_{shell} f = c - lambda |x|^2` over radial shells of one cell
/// width beyond `r_min`.
pub fn gaussian_tail_fit(dens: &DensityEstimate, r_min: f64) -> Result<TailFit> {
    gaussian_tail_fit_with(dens, r_min, MIN_TAIL_COUNT)
}

/// [`gaussian_tail_fit`] ignoring cells with fewer than `min_count` samples.
pub fn gaussian_tail_fit_with(dens: &DensityEstimate, r_min: f64, min_count: u64) -> Result<TailFit> {
    let width = dens.cell_width();
    // cells grouped by shell: (r^2, value, count)
    let mut groups: Vec<Vec<(f64, f64, Option<u64>)>> = Vec::new();
    for h in &dens.histograms {
        let k = h.axes.len();
        for (i, &v) in h.values.iter().enumerate() {
            let count = h.counts.get(i).copied();
            if v <= 0.0 || count.is_some_and(|c| c < min_count) {
                continue;
            }
            let c = dens.cell_center(k, i);
            let r2: f64 = c.iter().map(|x| x * x).sum();
            let r = r2.sqrt();
            if r < r_min {
                continue;
            }
            let shell = ((r - r_min) / width) as usize;
            if groups.len() <= shell {
                groups.resize(shell + 1, Vec::new());
            }
            groups[shell].push((r2, v, count));
        }
    }
    // The maximum of K noisy counts overshoots by about sqrt(2 ln K) standard
    // deviations; shrinking each cell by that much keeps the tail slope honest.
    let best: Vec<Option<(f64, f64)>> = groups
        .iter()
        .map(|g| {
            let z = (2.0 * (g.len().max(1) as f64).ln()).sqrt();
            g.iter()
                .map(|&(r2, v, count)| {
                    let shrunk = match count {
                        Some(c) => v * (1.0 - z / (c as f64).sqrt()).max(0.0),
                        None => v,
                    };
                    (r2, shrunk)
                })
                .filter(|p| p.1 > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1))
        })
        .collect();
    let shells: Vec<(f64, f64)> = best.into_iter().flatten().map(|(r2, f)| (r2, f.ln())).collect();
    if shells.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "only {} occupied shells beyond r = {r_min}",
            shells.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = shells.iter().copied().unzip();
    let fit = linear_fit(&x, &y).ok_or_else(|| Error::InsufficientData("degenerate shells".into()))?;
    let flat = y.iter().all(|v| (v - y[0]).abs() <= 1e-12 * v.abs().max(1.0));
    let r_squared = if flat { 0.0 } else { fit.r_squared };
    let lambda = -fit.slope;
    Ok(TailFit {
        lambda,
        r_squared,
        shells,
        gaussian: r_squared >= 0.95 && lambda > 0.0,
    })
}

/// Percentile interval for the tail decay rate from Poisson resampling of
/// the cell counts.
pub fn tail_fit_ci(dens: &DensityEstimate, r_min: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if dens.histograms.iter().any(|h| h.counts.is_empty()) {
        return Err(Error::InvalidParameter("bootstrap needs counts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambdas = Vec::new();
    for _ in 0..resamples.max(20) {
        let mut copy = dens.clone();
        for h in &mut copy.histograms {
            let scale = 1.0 / (dens.sample_count as f64 * dens.cell_width().powi(h.axes.len() as i32));
            for (c, v) in h.counts.iter_mut().zip(h.values.iter_mut()) {
                if *c > 0 {
                    *c = Poisson::new(*c as f64).map(|p| p.sample(&mut rng) as u64).unwrap_or(*c);
                }
                *v = *c as f64 * scale;
            }
        }
        if let Ok(fit) = gaussian_tail_fit(&copy, r_min) {
            lambdas.push(fit.lambda);
        }
    }
    if lambdas.len() < 10 {
        return Err(Error::InsufficientData("too few successful resampled fits".into()));
    }
    lambdas.sort_by(f64::total_cmp);
    let q = |p: f64| lambdas[((lambdas.len() - 1) as f64 * p).round() as usize];
    Ok((q(0.025), q(0.975)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundEntry {
    pub epsilon: Option<f64>,
    pub inf: f64,
    pub argmin: Vec<f64>,
    pub cells: usize,
    pub empty_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub r_inner: f64,
    pub min_inf: f64,
    /// `max inf / min inf` across entries; infinite if some infimum is zero.
    pub spread: f64,
    pub entries: Vec<LowerBoundEntry>,
}

/// Infimum of the estimate over cells whose center lies in the ball of radius `r_inner`.
pub fn compact_lowerbound(dens_list: &[DensityEstimate], r_inner: f64) -> Result<LowerBoundReport> {
    if dens_list.is_empty() {
        return Err(Error::InsufficientData("no density estimates".into()));
    }
    let mut entries = Vec::new();
    for dens in dens_list {
        if !dens.is_full_grid() {
            return Err(Error::InvalidParameter("lower bound needs a full-grid estimate".into()));
        }
        let h = &dens.histograms[0];
        let mut inf = f64::INFINITY;
        let mut argmin = Vec::new();
        let mut cells = 0;
        let mut empty = 0;
        for (i, &v) in h.values.iter().enumerate() {
            let c = dens.cell_center(dens.dim, i);
            if c.iter().map(|x| x * x).sum::<f64>().sqrt() > r_inner {
                continue;
            }
            cells += 1;
            if v <= 0.0 {
                empty += 1;
            }
            if v < inf {
                inf = v;
                argmin = c;
            }
        }
        if cells == 0 {
            return Err(Error::InvalidParameter(format!(
                "no cell centers inside radius {r_inner}; refine the grid"
            )));
        }
        entries.push(LowerBoundEntry {
            epsilon: dens.epsilon,
            inf,
            argmin,
            cells,
            empty_cells: empty,
        });
    }
    let min_inf = entries.iter().map(|e| e.inf).fold(f64::INFINITY, f64::min);
    let max_inf = entries.iter().map(|e| e.inf).fold(0.0, f64::max);
    let spread = if min_inf > 0.0 {
        max_inf / min_inf
    } else {
        f64::INFINITY
    };
    Ok(LowerBoundReport {
        r_inner,
        min_inf,
        spread,
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    pub estimate: f64,
    /// 95% percentile bootstrap interval.
    pub ci: (f64, f64),
    pub clipped: usize,
}

/// `E exp(gamma |x|^2)` with a block bootstrap interval (blocks of
/// consecutive samples absorb residual serial correlation).
pub fn exp_moment(samples: &[f64], dim: usize, gamma: f64, resamples: usize, seed: u64) -> Result<ExpMoment> {
    if dim == 0 || !samples.len().is_multiple_of(dim) || samples.is_empty() {
        return Err(Error::InsufficientData("empty sample set".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter("gamma must be nonnegative".into()));
    }
    if gamma == 0.0 {
        return Ok(ExpMoment {
            estimate: 1.0,
            ci: (1.0, 1.0),
            clipped: 0,
        });
    }
    let mut clipped = 0;
    let vals: Vec<f64> = samples
        .chunks_exact(dim)
        .map(|x| {
            let arg = gamma * x.iter().map(|v| v * v).sum::<f64>();
            if arg > EXP_CLIP {
                clipped += 1;
                EXP_CLIP.exp()
            } else {
                arg.exp()
            }
        })
        .collect();
    let estimate = mean(&vals);
    let blocks = vals.len().min(1000);
    let size = vals.len() / blocks;
    let block_means: Vec<f64> = (0..blocks).map(|b| mean(&vals[b * size..(b + 1) * size])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot: Vec<f64> = (0..resamples.max(20))
        .map(|_| {
            let s: f64 = (0..blocks).map(|_| block_means[rng.random_range(0..blocks)]).sum();
            s / blocks as f64
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let q = |p: f64| boot[((boot.len() - 1) as f64 * p).round() as usize];
    Ok(ExpMoment {
        estimate,
        ci: (q(0.025), q(0.975)),
        clipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTest {
    pub axes: Vec<usize>,
    pub chi2: f64,
    pub dof: usize,
    /// `(chi2 - dof) / sqrt(2 dof)`.
    pub z: f64,
}

/// Compares the full-grid histogram with its mirror image under
/// `x_a -> -x_a` for every `a` in `axes`. Each pair of mirrored cells
/// contributes `(n1 - n2)^2 / (n1 + n2)`.
pub fn reflection_test(dens: &DensityEstimate, axes: &[usize]) -> Result<ReflectionTest> {
    if !dens.is_full_grid() || axes.is_empty() || axes.iter().any(|&a| a >= dens.dim) {
        return Err(Error::InvalidParameter(
            "reflection test needs a full grid and valid axes".into(),
        ));
    }
    let h = &dens.histograms[0];
    if h.counts.is_empty() {
        return Err(Error::InvalidParameter("reflection test needs counts".into()));
    }
    let b = dens.bins;
    let d = dens.dim;
    let mirror = |mut i: usize| {
        let mut k = vec![0; d];
        for a in (0..d).rev() {
            k[a] = i % b;
            i /= b;
        }
        for &a in axes {
            k[a] = b - 1 - k[a];
        }
        k.iter().fold(0, |acc, &v| acc * b + v)
    };
    let mut chi2 = 0.0;
    let mut dof = 0;
    for i in 0..h.counts.len() {
        let j = mirror(i);
        if j <= i {
            continue;
        }
        let (n1, n2) = (h.counts[i] as f64, h.counts[j] as f64);
        if n1 + n2 > 0.0 {
            chi2 += (n1 - n2).powi(2) / (n1 + n2);
            dof += 1;
        }
    }
    let z = if dof > 0 {
        (chi2 - dof as f64) / (2.0 * dof as f64).sqrt()
    } else {
        0.0
    };
    Ok(ReflectionTest {
        axes: axes.to_vec(),
        chi2,
        dof,
        z,
    })
}

/// Integrated autocorrelation time (in samples) of a scalar series, using
/// Sokal's self-consistent window `M >= 5 tau`.
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(series);
    let c0: f64 = series.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c: f64 = (0..n - lag)
            .map(|i| (series[i] - m) * (series[i + lag] - m))
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * c / c0;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Mean integrated autocorrelation time of `|x|^2` over trajectories whose
/// snapshots are stored contiguously, `per_traj` rows each.
pub fn pooled_energy_iat(snapshots: &[f64], dim: usize, per_traj: usize) -> f64 {
    if per_traj < 4 || dim == 0 {
        return f64::NAN;
    }
    let energies: Vec<f64> = snapshots
        .chunks_exact(dim)
        .map(|x| x.iter().map(|v| v * v).sum())
        .collect();
    let taus: Vec<f64> = energies
        .chunks_exact(per_traj)
        .take(256)
        .map(integrated_autocorrelation_time)
        .collect();
    mean(&taus)
}
