use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{DensityBlock, ExperimentConfig, ExperimentKind, FpBlock};
use super::plot::{emit_plot, PlotSpec, Series};
use crate::density::{compact_lowerbound, default_box_radius, estimate_density, gaussian_tail_fit, pooled_energy_iat};
use crate::error::{Error, Result};
use crate::fp::{
    collapse_check, delta_limit_check, discretize, spectral_gap, stationary_solve, tv_overlap_nodes, write_container,
    CollapseInput, Container, DiscreteOperator, GapOptions, GridSnapshot, GridSpec,
};
use crate::hormander::{assumption2_check, NodeSet};
use crate::lyapunov::lyapunov_certificate;
use crate::model::ModelSpec;
use crate::sim::{
    energy_balance_residual, moment_decay_check, relaxation_slope, relaxation_time_from_curve, run_ensemble, Initial,
    RelaxationEntry,
};
use crate::util::hex_digest;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Relative energy-balance tolerance for nonlinear models.
pub const ENERGY_TOL: f64 = 0.05;
pub const RELAX_SLOPE_BAND: (f64, f64) = (-1.15, -0.85);
/// Slope tolerance when the model is linear and the answer is exactly -1.
pub const LINEAR_SLOPE_TOL: f64 = 1e-3;
pub const TAIL_R2_MIN: f64 = 0.95;
pub const TAIL_SPREAD_MAX: f64 = 2.0;
pub const INNER_SPREAD_MAX: f64 = 3.0;
pub const GAP_SPREAD_MAX: f64 = 2.0;
pub const ETA_MIN: f64 = 0.1;
pub const COLLAPSE_TOL: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    /// Counts toward the exit code.
    pub tagged: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub kind: ExperimentKind,
    pub config: String,
    pub model_label: String,
    pub model_hash: String,
    pub artifact_version: String,
    pub wall_clock_seconds: f64,
    pub out_dir: PathBuf,
    pub files: Vec<FileEntry>,
    pub verdicts: Vec<Verdict>,
    pub error: Option<String>,
    pub passed: bool,
}

impl ResultManifest {
    /// 0 when every tagged verdict passes, 1 on a failed verdict, 3 on a runtime error.
    pub fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            3
        } else if self.passed {
            0
        } else {
            1
        }
    }

    /// Re-hashes every listed file.
    pub fn verify_files(&self) -> Result<()> {
        for f in &self.files {
            let bytes = std::fs::read(self.out_dir.join(&f.path))?;
            if hex_digest(&bytes) != f.sha256 {
                return Err(Error::InvalidParameter(format!(
                    "{} does not match its recorded hash",
                    f.path
                )));
            }
        }
        Ok(())
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

/// Files and verdicts accumulated in memory and written once at the end.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    verdicts: Vec<Verdict>,
}

impl Outputs {
    fn text(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body.into_bytes()));
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.text(name, s);
        Ok(())
    }

    fn plot(&mut self, name: &str, series: &[Series], spec: &PlotSpec) {
        // a degenerate plot is not worth failing the run over
        if let Ok(svg) = emit_plot(series, spec) {
            self.text(name, svg);
        }
    }

    fn verdict(&mut self, name: &str, pass: bool, detail: String) {
        self.verdicts.push(Verdict {
            name: name.into(),
            pass,
            tagged: true,
            detail,
        });
    }

    fn info(&mut self, name: &str, pass: bool, detail: String) {
        self.verdicts.push(Verdict {
            name: name.into(),
            pass,
            tagged: false,
            detail,
        });
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn seed_for(cfg: &ExperimentConfig, k: usize) -> u64 {
    cfg.seed.wrapping_add(k as u64)
}

fn is_linear(model: &ModelSpec) -> bool {
    model.nonlinearity().is_zero()
}

/// Runs the experiment into `<root>/<kind>/<model>/<tag>/`, where the root and
/// tag default to the config's `[output]` block, then `results` and a Unix
/// timestamp.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultManifest> {
    let out = cfg.output.clone().unwrap_or_default();
    let root = PathBuf::from(out.dir.unwrap_or_else(|| "results".into()));
    run_experiment_in(cfg, &root, out.tag.as_deref())
}

pub fn run_experiment_in(cfg: &ExperimentConfig, root: &Path, tag: Option<&str>) -> Result<ResultManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let eps0 = cfg.epsilons[0];
    let model = cfg.model.build(eps0, &cfg.base_dir);
    let (label, hash) = match &model {
        Ok(m) => (m.label().to_string(), m.model_hash()),
        Err(_) => (
            cfg.model.builtin.clone().unwrap_or_else(|| "model".into()),
            String::new(),
        ),
    };
    let mut out = Outputs::default();
    let result = model.and_then(|m| dispatch(cfg, &m, &mut out));
    let tag = tag.map(str::to_string).unwrap_or_else(|| {
        format!(
            "run-{}",
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        )
    });
    let parent = root.join(cfg.kind.as_str()).join(sanitize(&label));
    let dir = parent.join(&tag);
    std::fs::create_dir_all(&dir)?;

    let mut schema = serde_json::Map::new();
    for (name, bytes) in &out.files {
        if name.ends_with(".csv") {
            let header = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
            let cols: Vec<String> = String::from_utf8_lossy(header).split(',').map(str::to_string).collect();
            schema.insert(name.clone(), cols.into());
        }
    }
    if !schema.is_empty() {
        let mut s = serde_json::to_string_pretty(&schema)?;
        s.push('\n');
        out.text("schema.json", s);
    }
    let mut files = Vec::new();
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes)?;
        files.push(FileEntry {
            path: name.clone(),
            sha256: hex_digest(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let error = result.err().map(|e| e.to_string());
    let passed = error.is_none() && out.verdicts.iter().filter(|v| v.tagged).all(|v| v.pass);
    let mut config = cfg.to_toml();
    if !config.ends_with('\n') {
        config.push('\n');
    }
    let manifest = ResultManifest {
        kind: cfg.kind,
        config,
        model_label: label,
        model_hash: hash,
        artifact_version: ARTIFACT_VERSION.into(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        out_dir: dir.clone(),
        files,
        verdicts: out.verdicts,
        error,
        passed,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(dir.join("manifest.json"), json)?;
    link_latest(&parent, &tag);
    Ok(manifest)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(unix)]
fn link_latest(parent: &Path, tag: &str) {
    let link = parent.join("latest");
    let _ = std::fs::remove_file(&link);
    let _ = std::os::unix::fs::symlink(tag, &link);
}

#[cfg(not(unix))]
fn link_latest(parent: &Path, tag: &str) {
    let _ = std::fs::write(parent.join("latest"), tag);
}

fn dispatch(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    match cfg.kind {
        ExperimentKind::Structure => structure(model, out),
        ExperimentKind::Hormander => hormander(cfg, model, out),
        ExperimentKind::Lyapunov => lyapunov(cfg, model, out),
        ExperimentKind::Equilibrium => equilibrium(cfg, model, out),
        ExperimentKind::RelaxScaling => relax_scaling(cfg, model, out),
        ExperimentKind::Density => density(cfg, model, out),
        ExperimentKind::GapFp => gap_fp(cfg, model, out),
        ExperimentKind::TvOverlap => tv(cfg, model, out),
        ExperimentKind::Collapse => collapse(cfg, model, out),
        ExperimentKind::DeltaLimit => delta_limit(cfg, model, out),
    }
}

fn structure(model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let report = model.check_structure();
    out.json("structure.json", &report)?;
    out.verdict("structure", report.all_pass(), report.witnesses.join("; "));
    Ok(())
}

fn hormander(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let hb = cfg.hormander.clone().unwrap_or_default();
    let d = model.dim();
    let grid = hb
        .points_per_axis
        .map_or(NodeSet::default_for(d), |p| NodeSet::per_axis(d, p));
    match assumption2_check(model, hb.radius, grid, hb.max_depth) {
        Ok(report) => {
            out.text("certificate.json", report.worst.to_json() + "\n");
            let mut csv = String::from("eps1,eps2,level,min_abs_det,c0,frame\n");
            for c in report.per_pair.iter().chain(std::iter::once(&report.drift_only)) {
                let (e1, e2) = c
                    .epsilon_pairs
                    .first()
                    .map_or(("drift_only".into(), String::new()), |p| {
                        (p.0.to_string(), p.1.to_string())
                    });
                let _ = writeln!(
                    csv,
                    "{e1},{e2},{},{},{},{}",
                    c.level,
                    c.min_abs_det,
                    c.c0,
                    c.frame_labels.join(" ")
                );
            }
            out.text("certificates.csv", csv);
            out.verdict(
                "spanning",
                true,
                format!("level {} C0 {}", report.worst.level, report.worst.c0),
            );
            out.verdict(
                "identical_across_pairs",
                report.identical_across_pairs,
                format!("frame indices identical: {}", report.frame_indices_identical),
            );
            Ok(())
        }
        Err(e @ Error::SpanningFailure { .. }) | Err(e @ Error::FiltrationBlowUp { .. }) => {
            out.verdict("spanning", false, e.to_string());
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// Upper estimate of the stationary RMS radius from the energy identity.
fn rms_radius(model: &ModelSpec) -> f64 {
    let target = model.noise_energy() + model.delta() * model.dim() as f64;
    (target / model.lambda_min_a()).sqrt()
}

fn lyapunov(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let lb = cfg.lyapunov.clone().unwrap_or_default();
    // the certificate covers delta in [0, 1] by checking both endpoints
    let mut csv = String::from("epsilon,gamma,kappa,b,grid_radius,nodes,verified,leading_coefficient,worst_margin\n");
    let mut all = true;
    for &eps in &cfg.epsilons {
        let m = model.with_epsilon(eps)?;
        let radius = lb.rms_multiple * rms_radius(&m);
        let cert = lyapunov_certificate(&m, radius, lb.grid_points)?;
        all &= cert.verified_on_grid;
        let _ = writeln!(
            csv,
            "{eps},{},{},{},{},{},{},{},{}",
            cert.gamma,
            cert.kappa,
            cert.b,
            cert.grid_radius,
            cert.nodes_checked,
            cert.verified_on_grid,
            cert.leading_coefficient,
            cert.worst_margin
        );
    }
    out.text("lyapunov.csv", csv);
    out.verdict(
        "drift_inequality",
        all,
        format!("{} grid points per axis", lb.grid_points),
    );
    if let Some(sim) = &cfg.sim {
        let eps = lb.moment_epsilon.unwrap_or(cfg.epsilons[0]);
        let m = model.with_epsilon(eps)?;
        let cert = lyapunov_certificate(&m, lb.rms_multiple * rms_radius(&m), lb.grid_points)?;
        let sc = sim.to_sim_config(eps, seed_for(cfg, 0), m.dim());
        let report = moment_decay_check(&m, &sc, &cert)?;
        out.json("moment.json", &report)?;
        out.verdict(
            "moment_bound",
            report.passes,
            format!("worst margin {} at t = {}", report.worst_margin, report.worst_time),
        );
    }
    Ok(())
}

fn equilibrium(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let sim = cfg.sim.as_ref().expect("validated");
    let mut csv = String::from("epsilon,estimate,target,relative_residual,relative_stderr,tolerance,pass\n");
    let mut all = true;
    let mut worst = 0.0f64;
    for (k, &eps) in cfg.epsilons.iter().enumerate() {
        let m = model.with_epsilon(eps)?;
        let run = run_ensemble(&m, &sim.to_sim_config(eps, seed_for(cfg, k), m.dim()))?;
        let eb = energy_balance_residual(&run, &m)?;
        // linear models have a closed form, so the tolerance is purely statistical
        let tol = if is_linear(&m) {
            3.0 * eb.stderr
        } else {
            ENERGY_TOL.max(3.0 * eb.stderr)
        };
        let pass = eb.residual <= tol;
        all &= pass;
        worst = worst.max(eb.residual);
        let _ = writeln!(
            csv,
            "{eps},{},{},{},{},{tol},{pass}",
            eb.estimate, eb.target, eb.residual, eb.stderr
        );
        out.text(format!("ensemble_eps{eps}.csv"), run.to_csv());
    }
    out.text("energy.csv", csv);
    out.verdict("energy_balance", all, format!("largest relative residual {worst}"));
    Ok(())
}

fn relax_scaling(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let sim = cfg.sim.as_ref().expect("validated");
    let mut entries = Vec::new();
    for &eps in &cfg.epsilons {
        let m = model.with_epsilon(eps)?;
        // common random numbers across eps sharpen the fitted slope
        let mut sc = sim.to_sim_config(eps, cfg.seed, m.dim());
        sc.initial = Initial::Point(vec![0.0; m.dim()]);
        sc.burn_in = 0.0;
        sc.snapshot_stride = 0;
        let run = run_ensemble(&m, &sc)?;
        let res = relaxation_time_from_curve(&run.times, &run.mean_energy);
        let mut curve = String::from("time,mean_energy,se_energy\n");
        for i in 0..run.times.len() {
            let _ = writeln!(curve, "{},{},{}", run.times[i], run.mean_energy[i], run.se_energy[i]);
        }
        out.text(format!("relax_curve_eps{eps}.csv"), curve);
        entries.push(RelaxationEntry {
            epsilon: eps,
            tau: res.map(|r| r.0),
            plateau: res.map_or(f64::NAN, |r| r.1),
            censored: res.is_none(),
        });
    }
    let mut csv = String::from("epsilon,tau,plateau,censored\n");
    for e in &entries {
        let tau = e.tau.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{tau},{},{}", e.epsilon, e.plateau, e.censored);
    }
    out.text("relaxation.csv", csv);
    let slope = relaxation_slope(&entries);
    let censored = entries.iter().filter(|e| e.censored).count();
    let pass = match slope {
        Some(s) if censored == 0 && is_linear(model) => (s + 1.0).abs() <= LINEAR_SLOPE_TOL,
        Some(s) if censored == 0 => s >= RELAX_SLOPE_BAND.0 && s <= RELAX_SLOPE_BAND.1,
        _ => false,
    };
    out.verdict(
        "relaxation_slope",
        pass,
        format!("slope {slope:?}, censored {censored}"),
    );
    let pts: Vec<(f64, f64)> = entries.iter().filter_map(|e| e.tau.map(|t| (e.epsilon, t))).collect();
    out.plot(
        "relaxation.svg",
        &[Series::new("tau", pts)],
        &PlotSpec {
            title: "relaxation time".into(),
            x_label: "eps".into(),
            y_label: "tau".into(),
            log_x: true,
            log_y: true,
            fit: true,
            timestamp: None,
        },
    );
    Ok(())
}

fn density(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let sim = cfg.sim.as_ref().expect("validated");
    let db: DensityBlock = cfg.density.clone().unwrap_or_default();
    let mut list = Vec::new();
    let mut csv = String::from("epsilon,samples,box_radius,lambda,r_squared,shells,gaussian,energy_iat_records\n");
    let mut series = Vec::new();
    let mut lambdas = Vec::new();
    let mut fits_ok = true;
    for (k, &eps) in cfg.epsilons.iter().enumerate() {
        let m = model.with_epsilon(eps)?;
        let sc = sim.to_sim_config(eps, seed_for(cfg, k), m.dim());
        let run = run_ensemble(&m, &sc)?;
        let d = m.dim();
        let radius = match db.box_radius {
            Some(r) => r,
            None => default_box_radius(&run.snapshots, d)? * db.box_rms_multiple / 4.0,
        };
        let mut dens = estimate_density(&run.snapshots, d, radius, db.bins)?;
        dens.epsilon = Some(eps);
        let fit = gaussian_tail_fit(&dens, db.tail_r_min)?;
        let per_traj = run.n_samples() / sc.n_traj;
        let iat = pooled_energy_iat(&run.snapshots, d, per_traj);
        fits_ok &= fit.gaussian && fit.r_squared >= TAIL_R2_MIN;
        lambdas.push(fit.lambda);
        let _ = writeln!(
            csv,
            "{eps},{},{radius},{},{},{},{},{iat}",
            run.n_samples(),
            fit.lambda,
            fit.r_squared,
            fit.shells.len(),
            fit.gaussian
        );
        series.push(Series::new(format!("eps {eps}"), fit.shells.clone()));
        out.text(format!("density_eps{eps}.csv"), dens.to_csv());
        list.push(dens);
    }
    out.text("tail.csv", csv);
    let lb = compact_lowerbound(&list, db.inner_radius)?;
    out.json("lowerbound.json", &lb)?;
    out.verdict(
        "tail_fit",
        fits_ok,
        format!("R^2 >= {TAIL_R2_MIN} and lambda > 0 at every eps"),
    );
    let sp = spread(&lambdas);
    out.verdict("tail_spread", sp <= TAIL_SPREAD_MAX, format!("lambda spread {sp}"));
    out.verdict(
        "inner_lower_bound",
        lb.min_inf > 0.0 && lb.spread <= INNER_SPREAD_MAX,
        format!("min inf {} spread {}", lb.min_inf, lb.spread),
    );
    out.plot(
        "shells.svg",
        &series,
        &PlotSpec {
            title: "shell maxima".into(),
            x_label: "|x|^2".into(),
            y_label: "log f".into(),
            ..Default::default()
        },
    );
    Ok(())
}

fn fp_grid(fp: &FpBlock, model: &ModelSpec) -> Result<GridSpec> {
    GridSpec::new(model.dim(), fp.box_radius, fp.cells_per_axis)
}

fn fp_operator(fp: &FpBlock, model: &ModelSpec, grid: &GridSpec, eps: f64) -> Result<DiscreteOperator> {
    discretize(&model.with_epsilon(eps)?, grid, fp.delta, fp.scheme)
}

fn gap_fp(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let fp = cfg.fp.as_ref().expect("validated");
    let grid = fp_grid(fp, model)?;
    let mut csv = String::from("epsilon,gap,gap_over_eps,stationary_residual,peclet,m_matrix,restarts\n");
    let mut eig = String::from("epsilon,k,re,im,ritz_residual\n");
    let mut ratios = Vec::new();
    for &eps in &cfg.epsilons {
        let op = fp_operator(fp, model, &grid, eps)?;
        let st = stationary_solve(&op)?;
        let gap = spectral_gap(&op, &st.density, &GapOptions::default())?;
        ratios.push(gap.gap / eps);
        let _ = writeln!(
            csv,
            "{eps},{},{},{},{},{},{}",
            gap.gap,
            gap.gap / eps,
            st.residual,
            op.peclet,
            op.m_matrix,
            gap.restarts
        );
        for (k, (re, im, res)) in gap.eigenvalues.iter().enumerate() {
            let _ = writeln!(eig, "{eps},{k},{re},{im},{res}");
        }
        let mut bin = Vec::new();
        write_container(
            &mut bin,
            &Container::Grid(GridSnapshot {
                grid: grid.clone(),
                epsilon: eps,
                delta: fp.delta,
                label: model.label().to_string(),
                values: st.density,
            }),
        )?;
        out.files.push((format!("stationary_eps{eps}.bin"), bin));
    }
    out.text("gap.csv", csv);
    out.text("eigenvalues.csv", eig);
    let sp = spread(&ratios);
    out.verdict("gap_positive", ratios.iter().all(|r| *r > 0.0), String::new());
    out.verdict("gap_scaling", sp <= GAP_SPREAD_MAX, format!("gap/eps spread {sp}"));
    let pts: Vec<(f64, f64)> = cfg.epsilons.iter().copied().zip(ratios.iter().copied()).collect();
    out.plot(
        "gap.svg",
        &[Series::new("gap/eps", pts)],
        &PlotSpec {
            title: "spectral gap".into(),
            x_label: "eps".into(),
            y_label: "gap / eps".into(),
            log_x: true,
            ..Default::default()
        },
    );
    Ok(())
}

fn node_cube(dim: usize, per_axis: usize, w: f64) -> Vec<Vec<f64>> {
    let coords: Vec<f64> = if per_axis == 1 {
        vec![0.0]
    } else {
        (0..per_axis)
            .map(|i| -w + 2.0 * w * i as f64 / (per_axis - 1) as f64)
            .collect()
    };
    let mut nodes = vec![Vec::new()];
    for _ in 0..dim {
        nodes = nodes
            .into_iter()
            .flat_map(|p| {
                coords.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    nodes
}

fn tv(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let fp = cfg.fp.as_ref().expect("validated");
    let grid = fp_grid(fp, model)?;
    let nodes = node_cube(model.dim(), fp.nodes_per_axis, fp.node_half_width);
    let mut csv = String::from("epsilon,i,j,tv\n");
    let mut summary = String::from("epsilon,t,max_tv,eta\n");
    let mut etas = Vec::new();
    for &eps in &cfg.epsilons {
        let op = fp_operator(fp, model, &grid, eps)?;
        let t = fp.t_overlap_rescaled / eps;
        let table = tv_overlap_nodes(&op, &nodes, t, fp.steps)?;
        for (i, j, v) in &table.pairs {
            let _ = writeln!(csv, "{eps},{i},{j},{v}");
        }
        let eta = 2.0 - table.max;
        etas.push(eta);
        let _ = writeln!(summary, "{eps},{t},{},{eta}", table.max);
    }
    out.text("tv_pairs.csv", csv);
    out.text("tv.csv", summary);
    let eta = etas.iter().copied().fold(f64::INFINITY, f64::min);
    out.verdict("uniform_minorization", eta >= ETA_MIN, format!("common eta {eta}"));
    Ok(())
}

fn collapse(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let fp = cfg.fp.as_ref().expect("validated");
    let grid = fp_grid(fp, model)?;
    let axis = fp.observable_axis - 1;
    if axis >= model.dim() {
        return Err(Error::InvalidParameter(format!(
            "observable axis {} exceeds the dimension",
            axis + 1
        )));
    }
    let mut ops = Vec::new();
    let mut mus = Vec::new();
    for &eps in &cfg.epsilons {
        let op = fp_operator(fp, model, &grid, eps)?;
        mus.push(stationary_solve(&op)?.density);
        ops.push(op);
    }
    let inputs: Vec<CollapseInput> = ops
        .iter()
        .zip(&mus)
        .map(|(op, mu)| CollapseInput { op, stationary: mu })
        .collect();
    let f: Vec<f64> = (0..grid.cells()).map(|i| grid.center(i)[axis]).collect();
    let rep = collapse_check(&inputs, &f, fp.s_max_rescaled, fp.steps)?;
    let mut csv = String::from("s");
    for c in &rep.curves {
        let _ = write!(csv, ",d_eps{}", c.epsilon);
    }
    csv.push('\n');
    for (k, s) in rep.s_grid.iter().enumerate() {
        let _ = write!(csv, "{s}");
        for c in &rep.curves {
            let _ = write!(csv, ",{}", c.values[k]);
        }
        csv.push('\n');
    }
    out.text("collapse.csv", csv);
    out.verdict(
        "collapse_defect",
        rep.defect <= COLLAPSE_TOL,
        format!("defect {}", rep.defect),
    );
    out.info(
        "monotone",
        rep.curves.iter().all(|c| c.monotone),
        "every D curve is nonincreasing".into(),
    );
    let series: Vec<Series> = rep
        .curves
        .iter()
        .map(|c| {
            Series::new(
                format!("eps {}", c.epsilon),
                rep.s_grid.iter().copied().zip(c.values.iter().copied()).collect(),
            )
        })
        .collect();
    out.plot(
        "collapse.svg",
        &series,
        &PlotSpec {
            title: "collapse in slow time".into(),
            x_label: "eps t".into(),
            y_label: "D".into(),
            ..Default::default()
        },
    );
    Ok(())
}

fn delta_limit(cfg: &ExperimentConfig, model: &ModelSpec, out: &mut Outputs) -> Result<()> {
    let fp = cfg.fp.as_ref().expect("validated");
    let grid = fp_grid(fp, model)?;
    let mut csv = String::from("epsilon,delta,l1\n");
    let mut all = true;
    for &eps in &cfg.epsilons {
        let rep = delta_limit_check(model, &grid, eps, &fp.deltas, fp.scheme)?;
        all &= rep.strictly_decreasing;
        for (dl, l1) in &rep.rows {
            let _ = writeln!(csv, "{eps},{dl},{l1}");
        }
    }
    out.text("delta_limit.csv", csv);
    out.verdict("strictly_decreasing", all, String::new());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_nodes() {
        let n = node_cube(3, 3, 0.5);
        assert_eq!(n.len(), 27);
        assert_eq!(n[0], vec![-0.5, -0.5, -0.5]);
        assert_eq!(n[13], vec![0.0, 0.0, 0.0]);
    }
}
