use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::AdvectionScheme;
use crate::model::{build_lorenz96, build_ou, build_sabra, build_triad, read_model_file, ModelSpec};
use crate::poly::parse_rational;
use crate::sim::{Initial, Integrator, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Structure,
    Hormander,
    Lyapunov,
    Equilibrium,
    RelaxScaling,
    Density,
    GapFp,
    TvOverlap,
    Collapse,
    DeltaLimit,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        Self::Structure,
        Self::Hormander,
        Self::Lyapunov,
        Self::Equilibrium,
        Self::RelaxScaling,
        Self::Density,
        Self::GapFp,
        Self::TvOverlap,
        Self::Collapse,
        Self::DeltaLimit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Structure => "structure",
            Self::Hormander => "hormander",
            Self::Lyapunov => "lyapunov",
            Self::Equilibrium => "equilibrium",
            Self::RelaxScaling => "relax-scaling",
            Self::Density => "density",
            Self::GapFp => "gap-fp",
            Self::TvOverlap => "tv-overlap",
            Self::Collapse => "collapse",
            Self::DeltaLimit => "delta-limit",
        }
    }

    fn needs_sim(self) -> bool {
        matches!(self, Self::Equilibrium | Self::RelaxScaling | Self::Density)
    }

    fn needs_fp(self) -> bool {
        matches!(self, Self::GapFp | Self::TvOverlap | Self::Collapse | Self::DeltaLimit)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment kind '{s}'")))
    }
}

/// Built-in model name plus parameters, or a model file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// Lorenz-96 oscillator count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    /// Triad coefficients as exact rationals, e.g. `["1", "1", "-2"]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<String>>,
    /// OU dissipation and noise amplitude.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

const BUILTINS: [&str; 4] = ["triad", "lorenz96", "sabra", "ou"];

impl ModelBlock {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match (&self.builtin, &self.file) {
            (None, None) => out.push("model: set either builtin or file".into()),
            (Some(_), Some(_)) => out.push("model: builtin and file are mutually exclusive".into()),
            (Some(b), None) if !BUILTINS.contains(&b.as_str()) => out.push(format!(
                "model.builtin: unknown model '{b}' (expected one of {BUILTINS:?})"
            )),
            _ => {}
        }
        if let Some(c) = &self.coefficients {
            if c.len() != 3 || c.iter().any(|s| parse_rational(s).is_none()) {
                out.push("model.coefficients: need three rationals".into());
            }
        }
        out
    }

    /// Builds the model at `epsilon`. Relative file paths resolve against `base`.
    pub fn build(&self, epsilon: f64, base: &Path) -> Result<ModelSpec> {
        let alpha = self.alpha.unwrap_or(1.0);
        if let Some(file) = &self.file {
            let path = base.join(file);
            let m = read_model_file(&path)?.with_epsilon(epsilon)?;
            return match self.alpha {
                Some(a) => m.with_alpha(a),
                None => Ok(m),
            };
        }
        let name = self.builtin.as_deref().unwrap_or_default();
        match name {
            "triad" => {
                let c = self
                    .coefficients
                    .clone()
                    .unwrap_or_else(|| vec!["1".into(), "1".into(), "-2".into()]);
                let r: Vec<_> = c
                    .iter()
                    .map(|s| parse_rational(s).ok_or_else(|| Error::InvalidParameter(format!("bad rational '{s}'"))))
                    .collect::<Result<_>>()?;
                let q = self.q.clone().unwrap_or_else(|| vec![1.0, 1.0]);
                if q.len() != 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        got: q.len(),
                    });
                }
                build_triad([r[0].clone(), r[1].clone(), r[2].clone()], q[0], q[1], epsilon, alpha)
            }
            "lorenz96" => {
                let n = self.n.unwrap_or(5);
                let q = self.q.clone().unwrap_or_else(|| vec![1.0; n]);
                build_lorenz96(n, &q, epsilon, alpha)
            }
            "sabra" => {
                let j = self.shells.unwrap_or(4);
                let q = self.q.clone().unwrap_or_else(|| vec![1.0; j]);
                let p = self.p.clone().unwrap_or_else(|| vec![1.0; j]);
                build_sabra(j, self.coupling.unwrap_or(0.5), &q, &p, epsilon, alpha)
            }
            "ou" => build_ou(self.a.unwrap_or(1.0), self.z.unwrap_or(1.0), epsilon),
            other => Err(Error::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }
}

fn default_integrator() -> Integrator {
    Integrator::Splitting
}
fn default_r_bound() -> f64 {
    2.0
}

/// Ensemble parameters. Durations carry their time unit in the key name:
/// `_rescaled` values are in slow time `s = eps t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub trajectories: usize,
    /// Step in physical time. Exactly one of `dt_physical` and `dt_rescaled` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_physical: Option<f64>,
    /// Step in slow time; every eps then takes the same number of steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_rescaled: Option<f64>,
    pub t_final_rescaled: f64,
    #[serde(default)]
    pub burn_in_rescaled: f64,
    pub record_every_rescaled: f64,
    /// Keep every k-th post-burn-in record as a density sample; 0 keeps none.
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    #[serde(default = "default_r_bound")]
    pub r_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma_exp: f64,
}

impl SimBlock {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trajectories == 0 {
            out.push("sim.trajectories: must be at least 1".into());
        }
        match (self.dt_physical, self.dt_rescaled) {
            (Some(dt), None) | (None, Some(dt)) => {
                if !(dt > 0.0 && dt.is_finite()) {
                    out.push("sim.dt_physical / sim.dt_rescaled: must be positive".into());
                }
            }
            _ => out.push("sim: set exactly one of dt_physical and dt_rescaled".into()),
        }
        if !(self.t_final_rescaled > 0.0) {
            out.push("sim.t_final_rescaled: must be positive".into());
        }
        if !(self.burn_in_rescaled >= 0.0 && self.burn_in_rescaled <= self.t_final_rescaled) {
            out.push("sim.burn_in_rescaled: must lie in [0, t_final_rescaled]".into());
        }
        if !(self.record_every_rescaled > 0.0) {
            out.push("sim.record_every_rescaled: must be positive".into());
        }
        if !(self.gamma_exp >= 0.0) {
            out.push("sim.gamma_exp: must be nonnegative".into());
        }
        out
    }

    /// Simulator settings at `eps`.
    pub fn to_sim_config(&self, eps: f64, seed: u64, dim: usize) -> SimConfig {
        let (dt, scale, rescaled_time) = match self.dt_rescaled {
            Some(dt) => (dt, 1.0, true),
            None => (self.dt_physical.unwrap_or(f64::NAN), 1.0 / eps, false),
        };
        SimConfig {
            dt,
            t_final: self.t_final_rescaled * scale,
            n_traj: self.trajectories,
            master_seed: seed,
            burn_in: self.burn_in_rescaled * scale,
            record_stride: ((self.record_every_rescaled * scale / dt).round() as usize).max(1),
            gamma_exp: self.gamma_exp,
            initial: Initial::Point(self.x0.clone().unwrap_or_else(|| vec![0.0; dim])),
            integrator: self.integrator,
            r_bound: self.r_bound,
            rescaled_time,
            snapshot_stride: self.snapshot_stride,
        }
    }
}

fn default_bins() -> usize {
    crate::density::DEFAULT_BINS
}
fn default_rms_multiple() -> f64 {
    4.0
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityBlock {
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Fixed box radius; by default a multiple of the sample RMS radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_radius: Option<f64>,
    #[serde(default = "default_rms_multiple")]
    pub box_rms_multiple: f64,
    #[serde(default = "one")]
    pub tail_r_min: f64,
    #[serde(default = "one")]
    pub inner_radius: f64,
}

impl Default for DensityBlock {
    fn default() -> Self {
        Self {
            bins: default_bins(),
            box_radius: None,
            box_rms_multiple: default_rms_multiple(),
            tail_r_min: 1.0,
            inner_radius: 1.0,
        }
    }
}

fn default_scheme() -> AdvectionScheme {
    AdvectionScheme::Weighted
}
fn default_fp_steps() -> usize {
    40
}
fn default_t_overlap() -> f64 {
    5.0
}
fn default_nodes() -> usize {
    3
}
fn default_half_width() -> f64 {
    0.5
}
fn default_s_max() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpBlock {
    pub cells_per_axis: usize,
    pub box_radius: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_scheme")]
    pub scheme: AdvectionScheme,
    /// Time steps for each semigroup evolution.
    #[serde(default = "default_fp_steps")]
    pub steps: usize,
    /// Decreasing regularization levels ending in 0, for `delta-limit`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<f64>,
    /// Overlap time in slow time `s = eps t`.
    #[serde(default = "default_t_overlap")]
    pub t_overlap_rescaled: f64,
    #[serde(default = "default_nodes")]
    pub nodes_per_axis: usize,
    /// Overlap nodes fill the cube `[-w, w]^d`.
    #[serde(default = "default_half_width")]
    pub node_half_width: f64,
    #[serde(default = "default_s_max")]
    pub s_max_rescaled: f64,
    /// Coordinate (1-based) used as the collapse observable.
    #[serde(default = "default_axis")]
    pub observable_axis: usize,
}

fn default_axis() -> usize {
    1
}

impl FpBlock {
    fn problems(&self, kind: ExperimentKind) -> Vec<String> {
        let mut out = Vec::new();
        if self.cells_per_axis < 16 {
            out.push("fp.cells_per_axis: must be at least 16".into());
        }
        if !(self.box_radius > 0.0) {
            out.push("fp.box_radius: must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.delta) {
            out.push("fp.delta: must lie in [0, 1]".into());
        }
        if self.steps == 0 {
            out.push("fp.steps: must be at least 1".into());
        }
        if kind == ExperimentKind::DeltaLimit {
            if self.deltas.len() < 2 || self.deltas.last() != Some(&0.0) {
                out.push("fp.deltas: need at least two values ending with 0".into());
            } else if self.deltas.windows(2).any(|w| w[1] >= w[0]) {
                out.push("fp.deltas: must be strictly decreasing".into());
            }
        }
        if self.nodes_per_axis == 0 || !(self.node_half_width >= 0.0) {
            out.push("fp.nodes_per_axis / fp.node_half_width: invalid node cube".into());
        }
        if !(self.s_max_rescaled > 0.0) {
            out.push("fp.s_max_rescaled: must be positive".into());
        }
        if self.observable_axis == 0 {
            out.push("fp.observable_axis: coordinates are numbered from 1".into());
        }
        out
    }
}

fn default_hormander_radius() -> f64 {
    2.0
}
fn default_depth() -> usize {
    6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HormanderBlock {
    #[serde(default = "default_hormander_radius")]
    pub radius: f64,
    /// Grid nodes per axis; quasi-random nodes are used by default in high dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_axis: Option<usize>,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
}

impl Default for HormanderBlock {
    fn default() -> Self {
        Self {
            radius: default_hormander_radius(),
            points_per_axis: None,
            max_depth: default_depth(),
        }
    }
}

fn default_grid_points() -> usize {
    21
}
fn default_lyap_multiple() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovBlock {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Grid radius as a multiple of the stationary RMS radius.
    #[serde(default = "default_lyap_multiple")]
    pub rms_multiple: f64,
    /// Where the Monte Carlo moment check runs when a `[sim]` block is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_epsilon: Option<f64>,
}

impl Default for LyapunovBlock {
    fn default() -> Self {
        Self {
            grid_points: default_grid_points(),
            rms_multiple: default_lyap_multiple(),
            moment_epsilon: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

fn default_seed() -> u64 {
    0x5EED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub epsilons: Vec<f64>,
    pub model: ModelBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp: Option<FpBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hormander: Option<HormanderBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputBlock>,
    /// Directory that relative model paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn parse_error(e: impl fmt::Display) -> Error {
    Error::Parse {
        line: 0,
        msg: e.to_string(),
    }
}

/// Parses a `key=value` override value as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> std::result::Result<(), String> {
    match path {
        [] => Ok(()),
        [last] => {
            table.insert(last.to_string(), value);
            Ok(())
        }
        [head, rest @ ..] => match table
            .entry(head.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => set_path(t, rest, value),
            _ => Err(head.to_string()),
        },
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses the config and applies `section.key=value` overrides before validation.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(parse_error)?;
        let mut bad = Vec::new();
        for o in overrides {
            let Some((key, raw)) = o.split_once('=') else {
                bad.push(format!("override '{o}': expected key=value"));
                continue;
            };
            let path: Vec<&str> = key.trim().split('.').collect();
            if let Err(part) = set_path(&mut table, &path, override_value(raw.trim())) {
                bad.push(format!("override '{o}': '{part}' is not a section"));
            }
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let text = toml::to_string(&table).map_err(parse_error)?;
        let cfg: Self = toml::from_str(&text).map_err(parse_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse_with_overrides(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated field, or `Ok` when the config is runnable.
    pub fn validate(&self) -> Result<()> {
        let mut out = Vec::new();
        if self.epsilons.is_empty() {
            out.push("epsilons: need at least one value".into());
        }
        for e in &self.epsilons {
            if !(*e > 0.0 && *e <= 1.0) {
                out.push(format!("epsilons: {e} not in (0, 1]"));
            }
        }
        if self.seed > i64::MAX as u64 {
            out.push("seed: must fit in a signed 64-bit integer".into());
        }
        out.extend(self.model.problems());
        let kind = self.kind;
        match (kind.needs_sim(), &self.sim) {
            (true, None) => out.push(format!("[sim] block required for {kind}")),
            (_, Some(s)) => out.extend(s.problems()),
            _ => {}
        }
        match (kind.needs_fp(), &self.fp) {
            (true, None) => out.push(format!("[fp] block required for {kind}")),
            (_, Some(f)) => out.extend(f.problems(kind)),
            _ => {}
        }
        if kind == ExperimentKind::RelaxScaling && self.epsilons.len() < 3 {
            out.push("epsilons: need ≥ 3 ε values for relax-scaling".into());
        }
        if matches!(kind, ExperimentKind::Collapse | ExperimentKind::GapFp) && self.epsilons.len() < 2 {
            out.push(format!("epsilons: need ≥ 2 ε values for {kind}"));
        }
        if kind == ExperimentKind::Density {
            if let Some(s) = &self.sim {
                if s.snapshot_stride == 0 {
                    out.push("sim.snapshot_stride: density needs snapshots (set ≥ 1)".into());
                }
            }
            if let Some(d) = &self.density {
                if d.bins == 0 || !(d.box_rms_multiple > 0.0) {
                    out.push("density: bins and box_rms_multiple must be positive".into());
                }
            }
        }
        if let Some(h) = &self.hormander {
            if !(h.radius > 0.0) || h.max_depth == 0 {
                out.push("hormander: radius and max_depth must be positive".into());
            }
        }
        if let Some(l) = &self.lyapunov {
            if l.grid_points < 2 || !(l.rms_multiple > 0.0) {
                out.push("lyapunov: grid_points >= 2 and rms_multiple > 0".into());
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(out))
        }
    }
}
