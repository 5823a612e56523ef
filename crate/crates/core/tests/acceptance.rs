//! End-to-end acceptance run. Prints one line per criterion to stdout
//! (bypassing the test harness capture) and fails if any criterion fails.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use hypomix_core::density::{
    compact_lowerbound, default_box_radius, estimate_density, gaussian_tail_fit, DensityEstimate,
};
use hypomix_core::experiment::{run_experiment_in, ExperimentConfig, ResultManifest};
use hypomix_core::fp::{
    collapse_check, delta_limit_check, discretize, spectral_gap, stationary_solve, AdvectionScheme, CollapseInput,
    GapOptions, GridSpec,
};
use hypomix_core::model::{build_lorenz96, build_ou, build_sabra, build_triad};
use hypomix_core::poly::rational_from_int;
use hypomix_core::sim::{energy_balance_residual, run_ensemble, with_workers};
use hypomix_core::util::hex_digest;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Report {
    lines: Vec<(usize, &'static str, bool)>,
}

impl Report {
    /// Runs one criterion, folds its wall-clock budget into the verdict and prints the line.
    fn criterion(&mut self, id: usize, name: &'static str, budget_s: f64, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let out = f();
        self.record(id, name, budget_s, start.elapsed().as_secs_f64(), out);
    }

    fn record(&mut self, id: usize, name: &'static str, budget_s: f64, secs: f64, out: Outcome) {
        let pass = out.pass && secs <= budget_s;
        let line = format!(
            "criterion {id:>2} {:<4} {name}: {} [{secs:.1} s of {budget_s:.0} s]\n",
            if pass { "PASS" } else { "FAIL" },
            out.detail
        );
        let mut stdout = std::io::stdout();
        let _ = stdout.write_all(line.as_bytes());
        let _ = stdout.flush();
        self.lines.push((id, name, pass));
    }
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn out_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name), &[]).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn pipeline(name: &str) -> ResultManifest {
    let m = run_experiment_in(&load(name), &out_root(), Some("acceptance")).unwrap();
    m.verify_files().unwrap();
    m
}

fn verdicts(m: &ResultManifest) -> String {
    m.verdicts
        .iter()
        .filter(|v| v.tagged)
        .map(|v| format!("{}={}", v.name, if v.pass { "ok" } else { "fail" }))
        .collect::<Vec<_>>()
        .join(" ")
}

fn csv_column(m: &ResultManifest, file: &str, col: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(m.out_dir.join(file)).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == col).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

fn spread(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::MIN, f64::max) / v.iter().copied().fold(f64::MAX, f64::min)
}

fn gauss1(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn structural() -> Outcome {
    let r = |k| rational_from_int(k);
    let mut models = Vec::new();
    for n in [4, 5, 8] {
        let mut q = vec![0.0; n];
        q[0] = 1.0;
        q[1] = 1.0;
        models.push(build_lorenz96(n, &q, 0.1, 1.0).unwrap());
    }
    for j in [3, 4] {
        let mut q = vec![0.0; j];
        q[0] = 1.0;
        q[1] = 1.0;
        models.push(build_sabra(j, 0.5, &q, &q, 0.1, 1.0).unwrap());
    }
    models.push(build_triad([r(1), r(1), r(-2)], 1.0, 1.0, 0.1, 1.0).unwrap());
    let failing: Vec<String> = models
        .iter()
        .filter(|m| !m.check_structure().all_pass())
        .map(|m| m.label().to_string())
        .collect();
    let m = pipeline("structure-lorenz96.toml");
    Outcome::new(
        failing.is_empty() && m.passed,
        format!("{} models exact, failing {failing:?}", models.len()),
    )
}

fn hormander() -> Outcome {
    let l96 = pipeline("hormander-lorenz96.toml");
    let sabra = pipeline("hormander-sabra.toml");
    let triad = pipeline("hormander-triad.toml");
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(triad.out_dir.join("certificate.json")).unwrap()).unwrap();
    let c0 = cert["c0"].as_f64().unwrap();
    let det = cert["min_abs_det"].as_f64().unwrap();
    let frame_det = cert["frame_min_abs_det"].as_f64().unwrap();
    // a constant frame has the same determinant at every node, equal to |alpha_3|
    let constant = det == frame_det && det == 2.0;
    Outcome::new(
        l96.passed && sabra.passed && triad.passed && c0 == 0.5 && constant,
        format!(
            "lorenz96 [{}] sabra [{}] triad [{}] C0 {c0} constant frame {constant}",
            verdicts(&l96),
            verdicts(&sabra),
            verdicts(&triad)
        ),
    )
}

fn lyapunov() -> Outcome {
    let m = pipeline("lyapunov-triad.toml");
    let margin = m.verdict("moment_bound").map(|v| v.detail.clone()).unwrap_or_default();
    Outcome::new(m.passed, format!("{} ({margin})", verdicts(&m)))
}

/// Triad ensembles shared by the energy-balance and density criteria.
struct TriadRuns {
    densities: Vec<DensityEstimate>,
    energy: Vec<(f64, f64, f64)>,
    samples: Vec<usize>,
    seconds: f64,
}

fn triad_runs() -> TriadRuns {
    let start = Instant::now();
    let cfg = load("density-triad.toml");
    let sim = cfg.sim.clone().unwrap();
    let db = cfg.density.clone().unwrap();
    let mut out = TriadRuns {
        densities: Vec::new(),
        energy: Vec::new(),
        samples: Vec::new(),
        seconds: 0.0,
    };
    for (k, &eps) in cfg.epsilons.iter().enumerate() {
        let model = cfg.model.build(eps, &cfg.base_dir).unwrap();
        let run = run_ensemble(&model, &sim.to_sim_config(eps, cfg.seed + k as u64, 3)).unwrap();
        let eb = energy_balance_residual(&run, &model).unwrap();
        out.energy.push((eps, eb.residual, eb.stderr));
        let radius = default_box_radius(&run.snapshots, 3).unwrap() * db.box_rms_multiple / 4.0;
        let mut d = estimate_density(&run.snapshots, 3, radius, db.bins).unwrap();
        d.epsilon = Some(eps);
        out.samples.push(run.n_samples());
        out.densities.push(d);
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}

fn energy_balance(triad: &TriadRuns) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(eps, res, se) in &triad.energy {
        let ok = res <= 0.05f64.max(3.0 * se);
        pass &= ok;
        parts.push(format!("{eps}:{res:.4}"));
    }
    let l96 = pipeline("equilibrium-lorenz96.toml");
    let ou = pipeline("equilibrium-ou.toml");
    let l96_res = csv_column(&l96, "energy.csv", "relative_residual");
    let ou_res = csv_column(&ou, "energy.csv", "relative_residual");
    Outcome::new(
        pass && l96.passed && ou.passed,
        format!(
            "triad residuals {} lorenz96 max {:.4} ou max {:.4} (3 sigma)",
            parts.join(" "),
            l96_res.iter().copied().fold(0.0, f64::max),
            ou_res.iter().copied().fold(0.0, f64::max)
        ),
    )
}

fn relaxation() -> Outcome {
    let triad = pipeline("relax-triad.toml");
    let ou = pipeline("relax-ou.toml");
    let detail = |m: &ResultManifest| {
        m.verdict("relaxation_slope")
            .map(|v| v.detail.clone())
            .unwrap_or_default()
    };
    Outcome::new(
        triad.passed && ou.passed,
        format!("triad {} | ou {}", detail(&triad), detail(&ou)),
    )
}

fn density(triad: &TriadRuns) -> Outcome {
    let fits: Vec<_> = triad
        .densities
        .iter()
        .map(|d| gaussian_tail_fit(d, 1.0).unwrap())
        .collect();
    let lambdas: Vec<f64> = fits.iter().map(|f| f.lambda).collect();
    let r2_ok = fits.iter().all(|f| f.gaussian && f.r_squared >= 0.95);
    let lb = compact_lowerbound(&triad.densities, 1.0).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let gauss: Vec<f64> = (0..3_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let control = gaussian_tail_fit(&estimate_density(&gauss, 3, 4.0, 40).unwrap(), 1.0).unwrap();

    let pass = r2_ok
        && spread(&lambdas) <= 2.0
        && lb.min_inf > 0.0
        && lb.spread <= 3.0
        && (control.lambda - 0.5).abs() <= 0.05;
    Outcome::new(
        pass,
        format!(
            "lambda {:?} R2 min {:.4} spread {:.3}; inf B1 min {:.4} spread {:.3}; control lambda {:.4}; samples {:?}",
            lambdas.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>(),
            fits.iter().map(|f| f.r_squared).fold(1.0, f64::min),
            spread(&lambdas),
            lb.min_inf,
            lb.spread,
            control.lambda,
            triad.samples
        ),
    )
}

fn gap() -> Outcome {
    let (a, eps) = (1.5, 0.1);
    let grid = GridSpec::new(1, 6.0, 128).unwrap();
    let op = discretize(&build_ou(a, 1.0, eps).unwrap(), &grid, 0.0, AdvectionScheme::Weighted).unwrap();
    let mu = stationary_solve(&op).unwrap().density;
    let ou_gap = spectral_gap(&op, &mu, &GapOptions::default()).unwrap().gap;
    let ou_err = (ou_gap - eps * a).abs() / (eps * a);
    let triad = pipeline("gap-triad.toml");
    let ratios = csv_column(&triad, "gap.csv", "gap_over_eps");
    Outcome::new(
        ou_err <= 0.05 && triad.passed,
        format!(
            "ou relative error {ou_err:.2e}; triad gap/eps {:?} spread {:.3}",
            ratios.iter().map(|r| (r * 1e3).round() / 1e3).collect::<Vec<_>>(),
            spread(&ratios)
        ),
    )
}

fn minorization() -> Outcome {
    let m = pipeline("tv-triad.toml");
    let eta = csv_column(&m, "tv.csv", "eta");
    Outcome::new(m.passed, format!("eta per eps {eta:?} (need >= 0.1)"))
}

fn collapse() -> Outcome {
    let grid = GridSpec::new(1, 6.0, 128).unwrap();
    let ops: Vec<_> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&e| discretize(&build_ou(1.0, 1.0, e).unwrap(), &grid, 0.0, AdvectionScheme::Weighted).unwrap())
        .collect();
    let mus: Vec<Vec<f64>> = ops.iter().map(|op| stationary_solve(op).unwrap().density).collect();
    let inputs: Vec<CollapseInput> = ops
        .iter()
        .zip(&mus)
        .map(|(op, mu)| CollapseInput { op, stationary: mu })
        .collect();
    let f: Vec<f64> = (0..grid.cells()).map(|i| grid.center(i)[0]).collect();
    let ou = collapse_check(&inputs, &f, 3.0, 60).unwrap().defect;
    let triad = pipeline("collapse-triad.toml");
    let detail = triad
        .verdict("collapse_defect")
        .map(|v| v.detail.clone())
        .unwrap_or_default();
    Outcome::new(
        triad.passed && ou < 1e-10,
        format!("triad {detail}; ou defect {ou:.1e}"),
    )
}

fn delta_limit() -> Outcome {
    let m = build_ou(1.0, 1.0, 0.1).unwrap();
    let grid = GridSpec::new(1, 8.0, 256).unwrap();
    let rep = delta_limit_check(&m, &grid, 0.1, &[0.5, 0.1, 0.02, 0.0], AdvectionScheme::Hybrid).unwrap();
    let l1 = |v1: f64| {
        let (n, lim) = (200_000, 12.0);
        let dx = 2.0 * lim / n as f64;
        (0..n)
            .map(|i| {
                let x = -lim + (i as f64 + 0.5) * dx;
                (gauss1(x, v1) - gauss1(x, 1.0)).abs() * dx
            })
            .sum::<f64>()
    };
    let worst = rep.rows[..3]
        .iter()
        .map(|&(dl, got)| (got - l1(1.0 + dl)).abs() / l1(1.0 + dl))
        .fold(0.0, f64::max);
    let triad = pipeline("delta-limit-triad.toml");
    let rows = csv_column(&triad, "delta_limit.csv", "l1");
    Outcome::new(
        triad.passed && rep.strictly_decreasing && worst <= 0.02,
        format!(
            "triad L1 {:?}; ou worst relative error {worst:.2e}",
            rows.iter().map(|r| (r * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

const DETERMINISM: &str = "kind = \"equilibrium\"\nepsilons = [0.1, 0.05]\nseed = 2024\n[model]\nbuiltin = \"triad\"\n\
    [sim]\ntrajectories = 500\ndt_physical = 0.02\nburn_in_rescaled = 1\nt_final_rescaled = 2\n\
    record_every_rescaled = 0.25\n";
const GOLDEN_ENERGY_CSV: &str = "988e9b72b428f2ab2ec0123406c73aa1be337b4c39a39c5a63a079e307dcd7e2";

fn determinism() -> Outcome {
    let cfg = ExperimentConfig::parse(DETERMINISM).unwrap();
    let root = out_root().join("determinism");
    let run = |w: usize, tag: &str| {
        with_workers(w, || run_experiment_in(&cfg, &root, Some(tag)))
            .unwrap()
            .unwrap()
    };
    let one = run(1, "w1");
    let eight = run(8, "w8");
    let csvs = |m: &ResultManifest| {
        m.files
            .iter()
            .filter(|f| f.path.ends_with(".csv"))
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect::<Vec<_>>()
    };
    let energy = std::fs::read(one.out_dir.join("energy.csv")).unwrap();
    let golden = hex_digest(&energy);
    Outcome::new(
        csvs(&one) == csvs(&eight) && csvs(&one).len() == 3 && golden == GOLDEN_ENERGY_CSV,
        format!(
            "{} csv files identical across 1 and 8 workers; energy.csv sha256 {golden}",
            csvs(&one).len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut report = Report { lines: Vec::new() };
    report.criterion(1, "structural identities", 5.0, structural);
    report.criterion(2, "hormander certificates", 120.0, hormander);
    report.criterion(3, "lyapunov and moments", 600.0, lyapunov);

    let triad = triad_runs();
    let start = Instant::now();
    let energy = energy_balance(&triad);
    report.record(
        4,
        "energy balance",
        1200.0,
        triad.seconds + start.elapsed().as_secs_f64(),
        energy,
    );
    report.criterion(5, "relaxation scaling", 1800.0, relaxation);
    let start = Instant::now();
    let dens = density(&triad);
    report.record(
        6,
        "stationary density bounds",
        1800.0,
        triad.seconds + start.elapsed().as_secs_f64(),
        dens,
    );
    drop(triad);

    report.criterion(7, "spectral gap", 1200.0, gap);
    report.criterion(8, "uniform minorization", 1200.0, minorization);
    report.criterion(9, "weak poincare collapse", 900.0, collapse);
    report.criterion(10, "delta limit", 600.0, delta_limit);
    report.criterion(11, "determinism", 120.0, determinism);

    let failed: Vec<_> = report.lines.iter().filter(|l| !l.2).map(|l| (l.0, l.1)).collect();
    let summary = format!(
        "acceptance: {} of {} criteria pass\n",
        report.lines.len() - failed.len(),
        report.lines.len()
    );
    let _ = std::io::stdout().write_all(summary.as_bytes());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
