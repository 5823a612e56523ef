//! Small numerical helpers shared across modules.

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131,
];

/// Halton low-discrepancy sequence in `[0,1)^dim`.
#[derive(Clone, Debug)]
pub struct Halton {
    dim: usize,
}

impl Halton {
    pub fn new(dim: usize) -> Self {
        assert!(dim <= PRIMES.len(), "Halton supports up to {} dimensions", PRIMES.len());
        Self { dim }
    }

    pub fn point(&self, index: u64) -> Vec<f64> {
        PRIMES[..self.dim]
            .iter()
            .map(|&b| radical_inverse(index, b as u64))
            .collect()
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn hex_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the mean of a series via non-overlapping batch means.
pub fn batch_means_stderr(xs: &[f64], batches: usize) -> f64 {
    let batches = batches.max(2).min(xs.len().max(2));
    if xs.len() < 2 {
        return 0.0;
    }
    let size = xs.len() / batches;
    if size == 0 {
        return (variance(xs) / xs.len() as f64).sqrt();
    }
    let means: Vec<f64> = (0..batches).map(|b| mean(&xs[b * size..(b + 1) * size])).collect();
    (variance(&means) / batches as f64).sqrt()
}

/// Least-squares line `y = slope x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Nodes of a tensor grid over `[-radius, radius]^dim` with `points` per axis,
/// visited in row-major order.
pub fn cube_grid(dim: usize, radius: f64, points: usize) -> impl Iterator<Item = Vec<f64>> {
    let total = points.pow(dim as u32);
    let coord = move |k: usize| {
        if points == 1 {
            0.0
        } else {
            -radius + 2.0 * radius * k as f64 / (points - 1) as f64
        }
    };
    (0..total).map(move |mut idx| {
        let mut x = vec![0.0; dim];
        for i in (0..dim).rev() {
            x[i] = coord(idx % points);
            idx /= points;
        }
        x
    })
}
