//! Bracket filtrations and grid certificates of the uniform parabolic
//! Hörmander condition.
//!
//! Fields are tagged by the multi-index of the brackets that generated them:
//! `[1]` is `X_1`, `[0, 2]` is `[X_0, X_2]`, `[1, 0, 2]` is `[X_1, [X_0, X_2]]`.
//! The drift `X_0` only ever appears inside brackets (parabolic convention).

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::poly::{lie_bracket, rational_from_int, CompiledField, PolyVectorField, Rational};
use crate::util::{cube_grid, Halton};

pub const DEFAULT_MAX_DEPTH: usize = 6;
pub const DEFAULT_FIELD_CAP: usize = 5000;

/// Generating multi-index, outermost bracket first, base field last.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BracketIndex(pub Vec<usize>);

impl BracketIndex {
    pub fn depth(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn label(&self) -> String {
        let name = |j: usize| {
            if j == 0 {
                "X0".to_string()
            } else {
                format!("Z{j}")
            }
        };
        let mut s = name(*self.0.last().expect("empty bracket index"));
        for &j in self.0.iter().rev().skip(1) {
            s = format!("[{},{}]", name(j), s);
        }
        s
    }
}

impl Ord for BracketIndex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for BracketIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for BracketIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Debug)]
pub struct TaggedField {
    pub index: BracketIndex,
    pub field: PolyVectorField,
}

/// The nested sets `V_0 ⊆ V_1 ⊆ ... ⊆ V_depth`.
#[derive(Clone, Debug)]
pub struct Filtration {
    dim: usize,
    x0: PolyVectorField,
    generators: Vec<PolyVectorField>,
    levels: Vec<Vec<TaggedField>>,
    seen: HashSet<PolyVectorField>,
    cap: usize,
}

impl Filtration {
    /// Level zero: the nonzero spanning fields, scalar multiples removed.
    pub fn new(x0: &PolyVectorField, spanning_fields: &[PolyVectorField], cap: usize) -> Result<Self> {
        let dim = x0.dim();
        for z in spanning_fields {
            if z.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: z.dim(),
                });
            }
        }
        let mut f = Self {
            dim,
            x0: x0.clone(),
            generators: spanning_fields.to_vec(),
            levels: Vec::new(),
            seen: HashSet::new(),
            cap,
        };
        let mut level0 = Vec::new();
        for (i, z) in spanning_fields.iter().enumerate() {
            if let Some(key) = z.ray_key() {
                if f.seen.insert(key) {
                    level0.push(TaggedField {
                        index: BracketIndex(vec![i + 1]),
                        field: z.clone(),
                    });
                }
            }
        }
        f.levels.push(level0);
        f.check_cap()?;
        Ok(f)
    }

    fn check_cap(&self) -> Result<()> {
        if self.len() > self.cap {
            return Err(Error::FiltrationBlowUp {
                level: self.depth(),
                cap: self.cap,
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// `|V_depth|`.
    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `|V_n|` for `n = 0..=depth`.
    pub fn sizes(&self) -> Vec<usize> {
        self.levels
            .iter()
            .scan(0, |acc, l| {
                *acc += l.len();
                Some(*acc)
            })
            .collect()
    }

    /// Fields added at exactly level `n`.
    pub fn new_at(&self, n: usize) -> &[TaggedField] {
        &self.levels[n]
    }

    /// All members of `V_n`, ordered by depth then multi-index.
    pub fn members(&self, n: usize) -> impl Iterator<Item = &TaggedField> {
        self.levels[..=n.min(self.depth())].iter().flatten()
    }

    pub fn contains_multiple_of(&self, field: &PolyVectorField) -> bool {
        field.ray_key().is_some_and(|k| self.seen.contains(&k))
    }

    /// Adds level `depth + 1`. Only fields new at the previous level need
    /// bracketing; older ones reproduce members already present.
    pub fn extend(&mut self) -> Result<()> {
        let mut candidates: Vec<TaggedField> = Vec::new();
        let brackets: Vec<&PolyVectorField> = std::iter::once(&self.x0).chain(self.generators.iter()).collect();
        for y in self.levels.last().expect("level zero exists") {
            for (j, xj) in brackets.iter().enumerate() {
                let field = lie_bracket(xj, &y.field)?;
                if field.is_zero() {
                    continue;
                }
                let mut idx = Vec::with_capacity(y.index.0.len() + 1);
                idx.push(j);
                idx.extend_from_slice(&y.index.0);
                candidates.push(TaggedField {
                    index: BracketIndex(idx),
                    field,
                });
            }
        }
        candidates.sort_by(|a, b| a.index.cmp(&b.index));
        let mut level = Vec::new();
        for c in candidates {
            let key = c.field.ray_key().expect("nonzero field");
            if self.seen.insert(key) {
                level.push(c);
                if self.len() + level.len() > self.cap {
                    return Err(Error::FiltrationBlowUp {
                        level: self.depth() + 1,
                        cap: self.cap,
                    });
                }
            }
        }
        self.levels.push(level);
        Ok(())
    }
}

/// Builds `V_0, ..., V_depth` for drift `x0` and spanning fields `X_1..X_k`.
pub fn generate_filtration(
    x0: &PolyVectorField,
    spanning_fields: &[PolyVectorField],
    depth: usize,
) -> Result<Filtration> {
    generate_filtration_with_cap(x0, spanning_fields, depth, DEFAULT_FIELD_CAP)
}

pub fn generate_filtration_with_cap(
    x0: &PolyVectorField,
    spanning_fields: &[PolyVectorField],
    depth: usize,
    cap: usize,
) -> Result<Filtration> {
    if depth > DEFAULT_MAX_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "filtration depth {depth} exceeds maximum {DEFAULT_MAX_DEPTH}"
        )));
    }
    let mut f = Filtration::new(x0, spanning_fields, cap)?;
    for _ in 0..depth {
        f.extend()?;
    }
    Ok(f)
}

/// Where the spanning condition is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeSet {
    /// Tensor grid with this many points per axis.
    Tensor { points_per_axis: usize },
    /// The origin followed by `nodes - 1` Halton points.
    Halton { nodes: usize },
}

impl NodeSet {
    /// 9 points per axis up to five dimensions, 10^4 quasi-random nodes beyond.
    pub fn default_for(dim: usize) -> Self {
        Self::per_axis(dim, 9)
    }

    pub fn per_axis(dim: usize, points: usize) -> Self {
        if dim <= 5 {
            NodeSet::Tensor {
                points_per_axis: points,
            }
        } else {
            NodeSet::Halton { nodes: 10_000 }
        }
    }

    pub fn nodes(&self, dim: usize, radius: f64) -> Vec<Vec<f64>> {
        match *self {
            NodeSet::Tensor { points_per_axis } => cube_grid(dim, radius, points_per_axis).collect(),
            NodeSet::Halton { nodes } => {
                let h = Halton::new(dim);
                std::iter::once(vec![0.0; dim])
                    .chain(
                        (1..nodes as u64).map(|k| h.point(k).into_iter().map(|u| radius * (2.0 * u - 1.0)).collect()),
                    )
                    .collect()
            }
        }
    }

    pub fn len(&self, dim: usize) -> usize {
        match *self {
            NodeSet::Tensor { points_per_axis } => points_per_axis.pow(dim as u32),
            NodeSet::Halton { nodes } => nodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketCertificate {
    pub model_label: String,
    pub level: usize,
    pub frame: Vec<BracketIndex>,
    pub frame_labels: Vec<String>,
    pub grid_radius: f64,
    pub grid: NodeSet,
    /// Minimum over nodes of the best determinant found at that node.
    pub min_abs_det: f64,
    pub c0: f64,
    /// Worst-node determinant of the single global frame.
    pub frame_min_abs_det: f64,
    pub worst_node: Vec<f64>,
    pub epsilon_pairs: Vec<(f64, f64)>,
    pub drift_only_tested: bool,
    pub identical_across_pairs: bool,
}

impl BracketCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

struct NodeResult {
    rank: usize,
    det: f64,
    frame: Vec<usize>,
}

/// Greedy column-pivoted Gram-Schmidt over the columns of `cols`
/// (`m` columns of length `d`, stored contiguously).
///
/// Pivoting is graded by polynomial degree: a column of higher degree is
/// taken only when no lower-degree column still adds a direction. Within a
/// degree the largest residual wins, ties going to the lower column index
/// (columns arrive ordered by bracket depth, then multi-index). A column
/// counts as independent when its residual keeps more than `1e-8` of its
/// original length.
fn greedy_frame(cols: &[f64], d: usize, degrees: &[u32]) -> NodeResult {
    let m = cols.len() / d;
    let mut resid = cols.to_vec();
    let orig: Vec<f64> = (0..m)
        .map(|j| resid[j * d..(j + 1) * d].iter().map(|v| v * v).sum())
        .collect();
    let mut norms = orig.clone();
    let mut chosen: Vec<usize> = Vec::with_capacity(d);
    let mut used = vec![false; m];
    let independent = |j: usize, norms: &[f64]| orig[j] > 0.0 && norms[j] > 1e-16 * orig[j];
    for _ in 0..d {
        let mut best: Option<usize> = None;
        for j in 0..m {
            if used[j] || !independent(j, &norms) {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(b) if degrees[j] < degrees[b] => Some(j),
                Some(b) if degrees[j] == degrees[b] && norms[j] > norms[b] * (1.0 + 1e-12) => Some(j),
                keep => keep,
            };
        }
        let Some(b) = best else { break };
        let nb = norms[b].sqrt();
        used[b] = true;
        chosen.push(b);
        let q: Vec<f64> = resid[b * d..(b + 1) * d].iter().map(|v| v / nb).collect();
        for j in 0..m {
            if used[j] {
                continue;
            }
            let c = &mut resid[j * d..(j + 1) * d];
            let p: f64 = c.iter().zip(&q).map(|(a, b)| a * b).sum();
            c.iter_mut().zip(&q).for_each(|(a, b)| *a -= p * b);
            norms[j] = c.iter().map(|v| v * v).sum();
        }
    }
    let rank = chosen.len();
    let det = if rank == d { frame_det(cols, d, &chosen) } else { 0.0 };
    NodeResult {
        rank,
        det,
        frame: chosen,
    }
}

fn frame_det(cols: &[f64], d: usize, frame: &[usize]) -> f64 {
    let m = DMatrix::from_fn(d, d, |i, k| cols[frame[k] * d + i]);
    m.determinant().abs()
}

fn eval_columns(fields: &[CompiledField], x: &[f64], d: usize) -> Vec<f64> {
    let mut cols = vec![0.0; fields.len() * d];
    for (j, f) in fields.iter().enumerate() {
        f.eval_into(x, &mut cols[j * d..(j + 1) * d]);
    }
    cols
}

/// Certifies that `V_depth` spans at every node of `[-R, R]^d`.
///
/// A screening pass over about a thousand nodes (always including the node
/// closest to the origin) runs the greedy selection on every field and keeps
/// the union of the frames it picks. The full sweep then works with that
/// subset, falling back to all fields at any node where the subset loses
/// rank. Determinants found this way are lower bounds for the per-node best,
/// so the certificate stays valid.
pub fn spanning_check(filtration: &Filtration, radius: f64, grid: NodeSet) -> Result<BracketCertificate> {
    let d = filtration.dim();
    let level = filtration.depth();
    let members: Vec<&TaggedField> = filtration.members(level).collect();
    let compiled: Vec<CompiledField> = members.iter().map(|t| t.field.compile()).collect();
    let degrees: Vec<u32> = members.iter().map(|t| t.field.max_degree()).collect();
    let nodes = grid.nodes(d, radius);
    let failure = |node: &[f64], rank: usize| Error::SpanningFailure {
        level,
        rank,
        dim: d,
        node: node.to_vec(),
    };
    if compiled.is_empty() {
        return Err(failure(&nodes[0], 0));
    }

    let norm2 = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let center = (0..nodes.len())
        .min_by(|&a, &b| norm2(&nodes[a]).total_cmp(&norm2(&nodes[b])))
        .expect("nonempty grid");
    let stride = (nodes.len() / 1024).max(1);
    let mut screen: Vec<usize> = std::iter::once(center)
        .chain((0..nodes.len()).step_by(stride))
        .collect();
    screen.dedup();
    let mut useful: Vec<usize> = Vec::new();
    for &i in &screen {
        let r = greedy_frame(&eval_columns(&compiled, &nodes[i], d), d, &degrees);
        if r.rank < d {
            return Err(failure(&nodes[i], r.rank));
        }
        useful.extend(r.frame);
    }
    useful.sort_unstable();
    useful.dedup();
    let subset: Vec<CompiledField> = useful.iter().map(|&j| compiled[j].clone()).collect();
    let subset_degrees: Vec<u32> = useful.iter().map(|&j| degrees[j]).collect();

    let results: Vec<NodeResult> = nodes
        .par_iter()
        .map(|x| {
            let r = greedy_frame(&eval_columns(&subset, x, d), d, &subset_degrees);
            if r.rank == d {
                NodeResult {
                    frame: r.frame.iter().map(|&j| useful[j]).collect(),
                    ..r
                }
            } else {
                greedy_frame(&eval_columns(&compiled, x, d), d, &degrees)
            }
        })
        .collect();
    if let Some((i, r)) = results.iter().enumerate().find(|(_, r)| r.rank < d) {
        return Err(failure(&nodes[i], r.rank));
    }

    // Candidate global frames: the most frequent per-node winners.
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for r in &results {
        let mut f = r.frame.clone();
        f.sort_unstable();
        *counts.entry(f).or_default() += 1;
    }
    let mut ranked: Vec<(Vec<usize>, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(8);

    let ids: Vec<usize> = (0..d).collect();
    let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    for (frame, _) in ranked {
        let sub: Vec<CompiledField> = frame.iter().map(|&j| compiled[j].clone()).collect();
        let dets: Vec<f64> = nodes
            .par_iter()
            .map(|x| frame_det(&eval_columns(&sub, x, d), d, &ids))
            .collect();
        let worst = dets.iter().cloned().fold(f64::INFINITY, f64::min);
        let better = match &best {
            None => true,
            Some((bf, _, bw)) => worst > *bw * (1.0 + 1e-9) || ((worst - bw).abs() <= 1e-9 * bw.abs() && frame < *bf),
        };
        if better {
            best = Some((frame, dets, worst));
        }
    }
    let (frame, frame_dets, frame_worst) = best.expect("at least one candidate");

    let mut min_det = f64::INFINITY;
    let mut worst_node = 0;
    for (i, r) in results.iter().enumerate() {
        let v = r.det.max(frame_dets[i]);
        if v < min_det {
            min_det = v;
            worst_node = i;
        }
    }
    if !(min_det > 0.0) {
        return Err(failure(&nodes[worst_node], d - 1));
    }
    let frame_idx: Vec<BracketIndex> = frame.iter().map(|&j| members[j].index.clone()).collect();
    Ok(BracketCertificate {
        model_label: String::new(),
        level,
        frame_labels: frame_idx.iter().map(BracketIndex::label).collect(),
        frame: frame_idx,
        grid_radius: radius,
        grid,
        min_abs_det: min_det,
        c0: 1.0 / min_det,
        frame_min_abs_det: frame_worst,
        worst_node: nodes[worst_node].clone(),
        epsilon_pairs: Vec::new(),
        drift_only_tested: false,
        identical_across_pairs: true,
    })
}

/// Minimum of `|det|` of the certificate frame over `grid`, recomputed from
/// the filtration that produced it.
pub fn frame_min_det(filtration: &Filtration, cert: &BracketCertificate, radius: f64, grid: NodeSet) -> Option<f64> {
    let d = filtration.dim();
    let fields: Vec<CompiledField> = cert
        .frame
        .iter()
        .map(|idx| {
            filtration
                .members(filtration.depth())
                .find(|t| &t.index == idx)
                .map(|t| t.field.compile())
        })
        .collect::<Option<_>>()?;
    let ids: Vec<usize> = (0..d).collect();
    let nodes = grid.nodes(d, radius);
    Some(
        nodes
            .par_iter()
            .map(|x| frame_det(&eval_columns(&fields, x, d), d, &ids))
            .reduce(|| f64::INFINITY, f64::min),
    )
}

/// Smallest-depth certificate for one drift, growing the filtration level by level.
pub fn certify_drift(
    x0: &PolyVectorField,
    spanning_fields: &[PolyVectorField],
    radius: f64,
    grid: NodeSet,
    max_depth: usize,
) -> Result<(BracketCertificate, Filtration)> {
    let mut filt = Filtration::new(x0, spanning_fields, DEFAULT_FIELD_CAP)?;
    loop {
        match spanning_check(&filt, radius, grid) {
            Ok(cert) => return Ok((cert, filt)),
            Err(e @ Error::SpanningFailure { .. }) if filt.depth() >= max_depth => return Err(e),
            Err(Error::SpanningFailure { .. }) => filt.extend()?,
            Err(e) => return Err(e),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Assumption2Report {
    /// Certificate with the largest `C0` over all drifts tested.
    pub worst: BracketCertificate,
    pub per_pair: Vec<BracketCertificate>,
    pub drift_only: BracketCertificate,
    pub identical_across_pairs: bool,
    pub frame_indices_identical: bool,
}

/// Runs the spanning certificate for `X_0 = N + e1 Ax + e2 Bx` over
/// `(e1, e2) in {0, 1/2, 1}^2` and for `X_0 = N` alone.
pub fn assumption2_check(model: &ModelSpec, radius: f64, grid: NodeSet, max_depth: usize) -> Result<Assumption2Report> {
    model.require_structure()?;
    let ax = PolyVectorField::linear(model.a());
    let bx = PolyVectorField::linear(model.b());
    let z: Vec<PolyVectorField> = model.noise().iter().map(|v| PolyVectorField::constant(v)).collect();
    let half = Rational::new(1.into(), 2.into());
    let levels: [(Rational, f64); 3] = [(rational_from_int(0), 0.0), (half, 0.5), (rational_from_int(1), 1.0)];

    let label = model.label().to_string();
    // Identical drifts (e.g. B = 0) share one certificate.
    let mut cache: Vec<(PolyVectorField, BracketCertificate)> = Vec::new();
    let mut certify = |x0: PolyVectorField| -> Result<BracketCertificate> {
        if let Some((_, c)) = cache.iter().find(|(f, _)| *f == x0) {
            return Ok(c.clone());
        }
        let (cert, _) = certify_drift(&x0, &z, radius, grid, max_depth)?;
        cache.push((x0, cert.clone()));
        Ok(cert)
    };
    let mut per_pair = Vec::new();
    for (e1, f1) in &levels {
        for (e2, f2) in &levels {
            let x0 = model.nonlinearity().add(&ax.scale(e1))?.add(&bx.scale(e2))?;
            let mut cert = certify(x0)?;
            cert.model_label = label.clone();
            cert.epsilon_pairs = vec![(*f1, *f2)];
            per_pair.push(cert);
        }
    }
    let mut drift_only = certify(model.nonlinearity().clone())?;
    drift_only.model_label = label.clone();
    drift_only.drift_only_tested = true;

    let all: Vec<&BracketCertificate> = per_pair.iter().chain(std::iter::once(&drift_only)).collect();
    let frame_indices_identical = all.iter().all(|c| c.frame == all[0].frame && c.level == all[0].level);
    let identical_across_pairs = frame_indices_identical
        && all
            .iter()
            .all(|c| (c.min_abs_det - all[0].min_abs_det).abs() <= 1e-9 * all[0].min_abs_det);
    let mut worst = (*all
        .iter()
        .max_by(|a, b| a.c0.partial_cmp(&b.c0).expect("finite C0"))
        .expect("nonempty"))
    .clone();
    worst.epsilon_pairs = per_pair.iter().flat_map(|c| c.epsilon_pairs.clone()).collect();
    worst.drift_only_tested = true;
    worst.identical_across_pairs = identical_across_pairs;
    Ok(Assumption2Report {
        worst,
        per_pair,
        drift_only,
        identical_across_pairs,
        frame_indices_identical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lorenz96, build_triad};

    fn q(n: i64) -> Rational {
        rational_from_int(n)
    }

    fn triad() -> ModelSpec {
        build_triad([q(1), q(1), q(-2)], 1.0, 1.0, 0.1, 1.0).unwrap()
    }

    fn noise_fields(m: &ModelSpec) -> Vec<PolyVectorField> {
        m.noise().iter().map(|v| PolyVectorField::constant(v)).collect()
    }

    #[test]
    fn triad_brackets_by_hand() {
        let m = triad();
        let n = m.nonlinearity();
        let e1 = PolyVectorField::basis(3, 0);
        let e2 = PolyVectorField::basis(3, 1);
        let b1 = lie_bracket(&e1, n).unwrap();
        // dN/dx1 = (0, a2 x3, a3 x2) up to the sign carried by N
        let sign = n.component(1).coefficient(&[1, 0, 1]);
        let mut expect = PolyVectorField::zero(3);
        expect.add_term(1, vec![0, 0, 1], sign.clone());
        expect.add_term(2, vec![0, 1, 0], n.component(2).coefficient(&[1, 1, 0]));
        assert_eq!(b1, expect);
        let b21 = lie_bracket(&e2, &b1).unwrap();
        assert!(b21.is_constant());
        assert_eq!(
            b21.eval(&[0.0; 3]),
            vec![
                0.0,
                0.0,
                crate::poly::rational_to_f64(&n.component(2).coefficient(&[1, 1, 0]))
            ]
        );
    }

    #[test]
    fn triad_level_two_contains_third_axis() {
        let m = triad();
        let f = generate_filtration(m.nonlinearity(), &noise_fields(&m), 2).unwrap();
        assert!(f.contains_multiple_of(&PolyVectorField::basis(3, 2)));
        let f1 = generate_filtration(m.nonlinearity(), &noise_fields(&m), 1).unwrap();
        assert!(!f1.contains_multiple_of(&PolyVectorField::basis(3, 2)));
    }

    #[test]
    fn triad_certificate_is_constant_frame() {
        let m = triad();
        let (cert, filt) = certify_drift(
            m.nonlinearity(),
            &noise_fields(&m),
            2.0,
            NodeSet::Tensor { points_per_axis: 9 },
            6,
        )
        .unwrap();
        assert_eq!(cert.level, 2);
        assert_eq!(cert.min_abs_det, 2.0);
        assert_eq!(cert.c0, 0.5);
        assert_eq!(cert.frame_min_abs_det, 2.0);
        assert_eq!(cert.frame.len(), 3);
        assert_eq!(cert.frame[0], BracketIndex(vec![1]));
        assert_eq!(cert.frame[1], BracketIndex(vec![2]));
        assert_eq!(cert.frame[2].depth(), 2);
        let fine = frame_min_det(&filt, &cert, 2.0, NodeSet::Tensor { points_per_axis: 90 }).unwrap();
        assert!(fine >= cert.min_abs_det / 2.0);
    }

    #[test]
    fn full_noise_needs_no_brackets() {
        let z: Vec<PolyVectorField> = (0..3).map(|i| PolyVectorField::basis(3, i)).collect();
        let m = triad();
        let (cert, _) = certify_drift(m.nonlinearity(), &z, 2.0, NodeSet::Tensor { points_per_axis: 5 }, 6).unwrap();
        assert_eq!(cert.level, 0);
        assert_eq!(cert.c0, 1.0);
        assert_eq!(
            cert.frame,
            vec![BracketIndex(vec![1]), BracketIndex(vec![2]), BracketIndex(vec![3])]
        );
    }

    #[test]
    fn no_noise_fails_with_rank_zero() {
        let m = build_lorenz96(5, &[0.0; 5], 0.1, 1.0).unwrap();
        let f = generate_filtration(m.nonlinearity(), &noise_fields(&m), 3).unwrap();
        assert!(f.is_empty());
        match spanning_check(&f, 1.0, NodeSet::Tensor { points_per_axis: 3 }) {
            Err(Error::SpanningFailure { rank, .. }) => assert_eq!(rank, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scalar_multiples_are_dropped() {
        let e1 = PolyVectorField::basis(2, 0);
        let twice = e1.scale(&q(2));
        let f = Filtration::new(&PolyVectorField::zero(2), &[e1, twice, PolyVectorField::zero(2)], 10).unwrap();
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn cap_is_enforced() {
        let m = build_lorenz96(8, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.1, 1.0).unwrap();
        let r = generate_filtration_with_cap(m.nonlinearity(), &noise_fields(&m), 4, 10);
        assert!(matches!(r, Err(Error::FiltrationBlowUp { cap: 10, .. })));
        assert!(generate_filtration(m.nonlinearity(), &noise_fields(&m), 7).is_err());
    }

    #[test]
    fn labels_read_outside_in() {
        assert_eq!(BracketIndex(vec![2, 0, 1]).label(), "[Z2,[X0,Z1]]");
        assert!(BracketIndex(vec![3]) < BracketIndex(vec![0, 1]));
    }

    #[test]
    fn triad_assumption2_identical_over_pairs() {
        let rep = assumption2_check(&triad(), 2.0, NodeSet::Tensor { points_per_axis: 9 }, 6).unwrap();
        assert!(rep.identical_across_pairs, "{:#?}", rep.per_pair);
        assert_eq!(rep.worst.c0, 0.5);
        assert_eq!(rep.worst.epsilon_pairs.len(), 9);
    }
}
