//! Experiment orchestration for the `moscolab` binary.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::discretization::fmt_f64;
use crate::error::{Error, Result};
use crate::model::{audit_assumptions_in, c_infinity, check_phi_inequality, AuditRanges, StructuralData};
use crate::mosco::{
    generate_obstacles, projection_equivalence_experiment, run_stability_experiment, ProjectionVerdict,
    LINF_SLACK,
};
use crate::solver::{lcp_oracle_for, solve_vi, VISolution};

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_OPERATIONAL: i32 = 1;
pub const EXIT_VERDICT: i32 = 2;

/// Slack allowed below `d/2` in the phi check.
const PHI_SLACK: f64 = 1e-12;

/// Largest accepted `||solve_vi - lcp_oracle||_inf`.
const ORACLE_TOL: f64 = 1e-8;

/// Files produced by one experiment, written after all computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub result_csv: String,
    pub meta: Value,
    pub plot: String,
    pub resolved_config: String,
    pub passed: bool,
}

impl Artifacts {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| Error::Internal(format!("cannot serialize meta.json: {e}")))?;
        for (name, text) in [
            ("result.csv", self.result_csv.as_str()),
            ("meta.json", meta.as_str()),
            ("plot.dat", self.plot.as_str()),
            ("resolved-config.toml", self.resolved_config.as_str()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn plot(header: &str, rows: impl Iterator<Item = (f64, f64)>) -> String {
    let mut out = format!("# {header}\n");
    for (a, b) in rows {
        let _ = writeln!(out, "{} {}", fmt_f64(a), fmt_f64(b));
    }
    out
}

fn artifacts(config: &ExperimentConfig, data: Option<&StructuralData>, csv: String, meta: Value, plot: String, passed: bool) -> Result<Artifacts> {
    let mut meta = meta;
    meta["kind"] = json!(config.kind);
    meta["passed"] = json!(passed);
    Ok(Artifacts {
        result_csv: csv,
        meta,
        plot,
        resolved_config: config.resolved_toml(data)?,
        passed,
    })
}

fn solution_meta(sol: &VISolution, p: f64) -> Value {
    let stages: Vec<Value> = sol
        .stages
        .iter()
        .map(|s| {
            json!({
                "j": s.j.to_string(),
                "sweeps": s.sweeps,
                "newton_steps": s.newton_steps,
                "converged": s.converged,
                "dist_w1p_from_previous": s.dist_w1p_from_previous,
            })
        })
        .collect();
    json!({
        "sweeps": sol.sweeps,
        "newton_steps": sol.newton_steps,
        "j_final": sol.j_final.to_string(),
        "converged": sol.converged,
        "complementarity_defect": sol.complementarity_defect(),
        "active_nodes": sol.active_set.len(),
        "norms": {
            "linf": sol.u.norm_linf(),
            "w1p": sol.u.norm_w1p(p),
            "l1": sol.u.norm_lp(1.0),
        },
        "stages": stages,
    })
}

fn run_solve(config: &ExperimentConfig) -> Result<Artifacts> {
    let data = config.structural_data()?;
    let psi = config.psi(data.grid())?;
    let sol = solve_vi(&data, &psi, &config.solver.options())?;
    let c_inf = c_infinity(data.source().norm_linf(), data.alpha0(), data.p(), psi.norm_linf());
    let linf_bound_ok = sol.u.norm_linf() <= c_inf + LINF_SLACK;
    let mut meta = solution_meta(&sol, data.p());
    meta["c_inf_bound"] = json!(c_inf);
    meta["verdicts"] = json!({ "converged": sol.converged, "linf_bound_ok": linf_bound_ok });
    let grid = data.grid();
    let plot = plot("x u", (0..grid.m()).map(|i| (grid.node(i), sol.u.values()[i])));
    artifacts(config, Some(&data), sol.to_csv_string(), meta, plot, sol.converged && linf_bound_ok)
}

fn run_oracle_compare(config: &ExperimentConfig) -> Result<Artifacts> {
    let data = config.structural_data()?;
    let psi = config.psi(data.grid())?;
    let oracle = lcp_oracle_for(&data, &psi)?;
    let sol = solve_vi(&data, &psi, &config.solver.options())?;
    let diff = sol.u.sub(&oracle).norm_linf();
    let grid = data.grid();
    let mut csv = String::from("x,u_solver,u_oracle,abs_diff\n");
    for i in 0..grid.m() {
        let (a, b) = (sol.u.values()[i], oracle.values()[i]);
        let _ = writeln!(csv, "{},{},{},{}", fmt_f64(grid.node(i)), fmt_f64(a), fmt_f64(b), fmt_f64((a - b).abs()));
    }
    let within = diff <= ORACLE_TOL;
    let mut meta = solution_meta(&sol, data.p());
    meta["max_abs_diff"] = json!(diff);
    meta["tolerance"] = json!(ORACLE_TOL);
    meta["verdicts"] = json!({ "converged": sol.converged, "oracle_match": within });
    let plot = plot("x u_solver-u_oracle", (0..grid.m()).map(|i| (grid.node(i), sol.u.values()[i] - oracle.values()[i])));
    artifacts(config, Some(&data), csv, meta, plot, sol.converged && within)
}

fn run_stability(config: &ExperimentConfig) -> Result<Artifacts> {
    let data = config.structural_data()?;
    let psi0 = config.psi(data.grid())?;
    let spec = config.obstacle_sequence(psi0);
    let report = run_stability_experiment(&data, &spec, &config.solver.options(), config.obstacle.threshold)?;
    let meta = json!({
        "obstacle_kind": report.kind.name(),
        "threshold": report.threshold,
        "c_inf_bound": report.c_inf_bound,
        "linf_u0": report.linf_u0,
        "tail_max": report.tail_max,
        "persistent_gap": report.persistent_gap,
        "failed_n": report.failed_n,
        "verdicts": report.verdicts,
        "note": "convergence is judged on the whole deterministic sequence, not a subsequence",
    });
    let plot = plot("n dist_w1p", report.records.iter().map(|r| (r.n as f64, r.dist_w1p)));
    artifacts(config, Some(&data), report.to_csv_string(), meta, plot, report.passed())
}

fn run_projection(config: &ExperimentConfig) -> Result<Artifacts> {
    let grid = config.grid()?;
    let psi0 = config.psi(grid)?;
    let family = generate_obstacles(&config.obstacle_sequence(psi0))?;
    let (lower, terms) = family.as_boxes();
    let report = projection_equivalence_experiment(&lower, &terms, config.projection.n_probe, config.seed)?;
    let mut csv = String::from("n,sup_error\n");
    for (k, e) in report.sup_errors.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", k + 1, fmt_f64(*e));
    }
    let meta = json!({
        "obstacle_kind": family.kind.name(),
        "dimension": report.dimension,
        "n_probe": report.n_probe,
        "tail_sup": report.tail_sup,
        "verdict": report.verdict,
        "witness": report.witness,
    });
    let plot = plot("n sup_error", report.sup_errors.iter().enumerate().map(|(k, e)| ((k + 1) as f64, *e)));
    let passed = report.verdict == ProjectionVerdict::Converges;
    artifacts(config, None, csv, meta, plot, passed)
}

fn run_audit(config: &ExperimentConfig) -> Result<Artifacts> {
    let data = config.structural_data()?;
    let ranges = AuditRanges {
        s_max: config.audit.s_max,
        xi_max: config.audit.xi_max,
    };
    let report = audit_assumptions_in(&data, config.audit.samples, config.seed, ranges);
    let mut csv = String::from("inequality,violations,worst_margin\n");
    for c in &report.checks {
        let _ = writeln!(csv, "{},{},{}", c.inequality.name(), c.violations, fmt_f64(c.worst_margin));
    }
    let total = report.total_violations();
    let meta = json!({
        "samples": report.samples,
        "alpha": data.alpha(),
        "beta": data.beta(),
        "total_violations": total,
        "checks": report.checks,
        "verdicts": { "assumptions_hold": total == 0 },
    });
    let plot = plot(
        "inequality_index worst_margin",
        report.checks.iter().enumerate().map(|(k, c)| (k as f64, c.worst_margin)),
    );
    artifacts(config, Some(&data), csv, meta, plot, total == 0)
}

fn run_phi_check(config: &ExperimentConfig) -> Result<Artifacts> {
    let pc = &config.phi_check;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut csv = String::from("c,d,lambda,min_slack,half_d,margin\n");
    let mut rows = Vec::with_capacity(pc.pairs);
    let mut worst = f64::INFINITY;
    for _ in 0..pc.pairs {
        // (0, max] rather than [0, max)
        let c = pc.c_max * (1.0 - rng.gen::<f64>());
        let d = pc.d_max * (1.0 - rng.gen::<f64>());
        let ts: Vec<f64> = (0..pc.samples).map(|_| rng.gen_range(-pc.t_max..=pc.t_max)).collect();
        let slack = check_phi_inequality(c, d, &ts);
        let margin = slack - 0.5 * d;
        worst = worst.min(margin);
        let lambda = c * c / (4.0 * d * d);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            fmt_f64(c),
            fmt_f64(d),
            fmt_f64(lambda),
            fmt_f64(slack),
            fmt_f64(0.5 * d),
            fmt_f64(margin)
        );
        rows.push((d, slack));
    }
    let passed = worst >= -PHI_SLACK;
    let meta = json!({
        "pairs": pc.pairs,
        "samples_per_pair": pc.samples,
        "worst_margin": worst,
        "verdicts": { "slack_ok": passed },
    });
    let plot = plot("d min_slack", rows.into_iter());
    artifacts(config, None, csv, meta, plot, passed)
}

/// Runs the configured experiment; nothing is written to disk.
pub fn run(config: &ExperimentConfig) -> Result<Artifacts> {
    match config.kind {
        ExperimentKind::Solve => run_solve(config),
        ExperimentKind::OracleCompare => run_oracle_compare(config),
        ExperimentKind::Stability => run_stability(config),
        ExperimentKind::Projection => run_projection(config),
        ExperimentKind::Audit => run_audit(config),
        ExperimentKind::PhiCheck => run_phi_check(config),
    }
}

/// Command-line overrides of the configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Domain(_) => "domain",
        Error::GridMismatch { .. } => "grid_mismatch",
        Error::Infeasible(_) => "infeasible",
        Error::Overflow(_) => "overflow",
        Error::Config(_) => "config",
        Error::Io { .. } => "io",
        Error::Csv { .. } => "csv",
        Error::Internal(_) => "internal",
    }
}

fn write_error_report(dir: &Path, err: &Error) {
    let report = json!({ "error": error_kind(err), "message": err.to_string() });
    let written = std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(dir.join("error.json"), format!("{report:#}\n")));
    if let Err(e) = written {
        eprintln!("moscolab: cannot write error.json to {}: {e}", dir.display());
    }
}

/// Loads, runs and persists an experiment; returns the process exit status.
pub fn execute(config_path: &Path, overrides: &Overrides) -> i32 {
    let fallback_dir = overrides.out.clone().unwrap_or_else(|| PathBuf::from("moscolab-out"));
    let mut config = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("moscolab: {e}");
            write_error_report(&fallback_dir, &e);
            return EXIT_OPERATIONAL;
        }
    };
    if let Some(out) = &overrides.out {
        config.out = out.clone();
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    let out_dir = config.out.clone();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = overrides.threads {
        pool = pool.num_threads(k);
    }
    let outcome = pool
        .build()
        .map_err(|e| Error::Internal(format!("cannot build thread pool: {e}")))
        .and_then(|pool| pool.install(|| run(&config)))
        .and_then(|art| art.write(&out_dir).map(|_| art.passed));
    match outcome {
        Ok(true) => EXIT_PASS,
        Ok(false) => {
            eprintln!("moscolab: verdict failed; see {}", out_dir.join("meta.json").display());
            EXIT_VERDICT
        }
        Err(e) => {
            eprintln!("moscolab: {e}");
            write_error_report(&out_dir, &e);
            EXIT_OPERATIONAL
        }
    }
}
