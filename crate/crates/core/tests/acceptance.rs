//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use moscolab::model::{audit_assumptions, c_infinity, check_phi_inequality, Shape, StructuralData, Truncation};
use moscolab::mosco::{
    generate_obstacles, projection_equivalence_experiment, recovery_sequence, run_stability_experiment,
    ObstacleKind, ObstacleSequence, ProjectionVerdict, Rate, DEFAULT_STABILITY_THRESHOLD,
};
use moscolab::solver::{lcp_oracle_for, solve_vi, SolverOptions};
use moscolab::{Grid, GridFunction};

struct Outcome {
    pass: bool,
    detail: String,
}

fn standard_data(grid: Grid, p: f64, mu: f64) -> StructuralData {
    StructuralData::builder(grid, p)
        .source_constant(1.0)
        .sigma_shape(Shape::NegTanh)
        .growth(mu, 0.0)
        .build()
        .unwrap()
}

fn sinusoidal(grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |x| 0.2 * (2.0 * PI * x).sin() - 0.05)
}

fn obstacles(grid: Grid) -> Vec<(&'static str, GridFunction)> {
    vec![
        ("-10", GridFunction::constant(grid, -10.0)),
        ("-0.05", GridFunction::constant(grid, -0.05)),
        ("sin", sinusoidal(grid)),
    ]
}

fn c1_phi() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let c = 10.0 * (1.0 - rng.gen::<f64>());
        let d = 10.0 * (1.0 - rng.gen::<f64>());
        let ts: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-10.0..=10.0)).collect();
        worst = worst.min(check_phi_inequality(c, d, &ts) - 0.5 * d);
    }
    Outcome {
        pass: worst >= -1e-12,
        detail: format!("min(slack - d/2) = {worst:.3e} over 100 pairs x 1e4 samples"),
    }
}

fn c2_linf_bound() -> Outcome {
    let grid = Grid::new(99).unwrap();
    let (mut total, mut converged, mut violations) = (0, 0, Vec::new());
    let mut worst = f64::NEG_INFINITY;
    for p in [1.5, 2.0, 3.0, 4.0] {
        for mu in [0.0, 0.25, 0.5] {
            let data = standard_data(grid, p, mu);
            for (name, psi) in obstacles(grid) {
                total += 1;
                let sol = solve_vi(&data, &psi, &SolverOptions::default()).unwrap();
                if !sol.converged {
                    continue;
                }
                converged += 1;
                let bound = c_infinity(1.0, 1.0, p, psi.norm_linf());
                let excess = sol.u.norm_linf() - bound;
                worst = worst.max(excess);
                if excess > 1e-6 {
                    violations.push(format!("p={p} mu={mu} psi={name}"));
                }
            }
        }
    }
    Outcome {
        pass: violations.is_empty() && converged == total && total >= 20,
        detail: format!(
            "{converged}/{total} converged, max(||u||_inf - C_inf) = {worst:.3e}, violations {violations:?}"
        ),
    }
}

fn c3_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut unconverged = 0;
    for m in [1, 4, 7, 11, 12] {
        let grid = Grid::new(m).unwrap();
        for f in [GridFunction::constant(grid, 1.0), GridFunction::from_fn(grid, |x| 1.0 + (7.0 * x).cos())] {
            let data = StructuralData::builder(grid, 2.0).source(f).build().unwrap();
            for (_, psi) in obstacles(grid) {
                let sol = solve_vi(&data, &psi, &SolverOptions::default()).unwrap();
                let oracle = lcp_oracle_for(&data, &psi).unwrap();
                unconverged += usize::from(!sol.converged);
                worst = worst.max(sol.u.sub(&oracle).norm_linf());
                count += 1;
            }
        }
    }
    Outcome {
        pass: worst <= 1e-8 && unconverged == 0,
        detail: format!("{count} instances, max ||solve_vi - oracle||_inf = {worst:.3e}"),
    }
}

fn closed_form_error(m: usize) -> f64 {
    let grid = Grid::new(m).unwrap();
    let data = StructuralData::builder(grid, 2.0).source_constant(1.0).build().unwrap();
    let sol = solve_vi(&data, &GridFunction::constant(grid, -10.0), &SolverOptions::default()).unwrap();
    assert!(sol.converged);
    let exact = GridFunction::from_fn(grid, |x| (x - 0.5).cosh() / 0.5f64.cosh() - 1.0);
    sol.u.sub(&exact).norm_linf()
}

fn c4_closed_form() -> Outcome {
    let (coarse, fine) = (closed_form_error(99), closed_form_error(199));
    let ratio = coarse / fine;
    Outcome {
        pass: fine <= 5e-4 && (3.2..=4.8).contains(&ratio),
        detail: format!("err(m=99) = {coarse:.3e}, err(m=199) = {fine:.3e}, ratio = {ratio:.3}"),
    }
}

fn c5_mosco() -> Outcome {
    let grid = Grid::new(99).unwrap();
    let data = standard_data(grid, 2.0, 0.5);
    let psi0 = GridFunction::constant(grid, -0.05);
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [ObstacleKind::Cond1Below, ObstacleKind::Cond2Strong, ObstacleKind::Cond4Uniform] {
        let spec = ObstacleSequence::standard(kind, psi0.clone(), 0.01, Rate::Harmonic, 32);
        let rep = run_stability_experiment(&data, &spec, &SolverOptions::default(), DEFAULT_STABILITY_THRESHOLD).unwrap();
        let ok = rep.verdicts.convergence_ok && rep.verdicts.linf_bound_ok && rep.failed_n.is_empty();
        pass &= ok;
        parts.push(format!(
            "{}: tail max {:.2e}{} linf_ok={}",
            kind.name(),
            rep.tail_max,
            if rep.verdicts.convergence_ok { "" } else { " (>= 1e-3)" },
            rep.verdicts.linf_bound_ok
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn c6_negative_control() -> Outcome {
    let grid = Grid::new(99).unwrap();
    let spec = ObstacleSequence::standard(
        ObstacleKind::NonconvergingOscillation,
        GridFunction::constant(grid, -0.05),
        0.1,
        Rate::Harmonic,
        32,
    );
    let rep = run_stability_experiment(&standard_data(grid, 2.0, 0.5), &spec, &SolverOptions::default(), DEFAULT_STABILITY_THRESHOLD)
        .unwrap();
    Outcome {
        pass: !rep.verdicts.convergence_ok && rep.persistent_gap >= 1e-3 && rep.failed_n.is_empty(),
        detail: format!(
            "convergence_ok = {}, persistent gap = {:.3e}",
            rep.verdicts.convergence_ok, rep.persistent_gap
        ),
    }
}

fn c7_projection() -> Outcome {
    let grid = Grid::new(20).unwrap();
    let psi0 = sinusoidal(grid);
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [ObstacleKind::Cond1Below, ObstacleKind::Cond2Strong, ObstacleKind::Cond4Uniform] {
        let spec = ObstacleSequence::standard(kind, psi0.clone(), 1.0, Rate::Geometric { ratio: 0.5 }, 64);
        let (lower, terms) = generate_obstacles(&spec).unwrap().as_boxes();
        let rep = projection_equivalence_experiment(&lower, &terms, 100, 7).unwrap();
        pass &= rep.verdict == ProjectionVerdict::Converges;
        parts.push(format!("{}: {:?} tail {:.1e}", kind.name(), rep.verdict, rep.tail_sup));
    }
    let spec = ObstacleSequence::standard(ObstacleKind::NonconvergingOscillation, psi0, 0.1, Rate::Harmonic, 64);
    let (lower, terms) = generate_obstacles(&spec).unwrap().as_boxes();
    let rep = projection_equivalence_experiment(&lower, &terms, 100, 7).unwrap();
    let gap = rep.witness.as_ref().map_or(0.0, |w| w.persistent_gap);
    pass &= rep.verdict == ProjectionVerdict::Diverges && gap >= 1e-3;
    parts.push(format!("oscillation: {:?} witness gap {gap:.3e}", rep.verdict));
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn c8_continuation() -> Outcome {
    let grid = Grid::new(99).unwrap();
    let sol = solve_vi(&standard_data(grid, 2.0, 0.5), &GridFunction::constant(grid, -0.05), &SolverOptions::default())
        .unwrap();
    let doubling: Vec<(u32, f64)> = sol
        .stage_distances()
        .into_iter()
        .filter_map(|(a, b, d)| match (a, b) {
            (Truncation::Level(j), Truncation::Level(k)) if k == 2 * j => Some((j, d)),
            _ => None,
        })
        .collect();
    let monotone = doubling.windows(2).all(|w| w[1].1 < w[0].1);
    let large: Vec<String> = doubling
        .iter()
        .filter(|(j, d)| *j >= 64 && *d >= 1e-4)
        .map(|(j, d)| format!("j={j}: {d:.2e}"))
        .collect();
    let last = doubling.last().map_or(f64::NAN, |x| x.1);
    Outcome {
        pass: sol.converged && monotone && large.is_empty(),
        detail: format!(
            "monotone = {monotone}, ||u_2j - u_j|| at j=512: {last:.2e}; at or above 1e-4 for j >= 64: {large:?}"
        ),
    }
}

fn c9_recovery() -> Outcome {
    let grid = Grid::new(99).unwrap();
    let psi0 = sinusoidal(grid);
    let spec = ObstacleSequence::standard(ObstacleKind::Cond2Strong, psi0.clone(), 0.05, Rate::Geometric { ratio: 0.5 }, 32);
    let family = generate_obstacles(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_final = 0.0f64;
    let mut bounded = true;
    for _ in 0..10 {
        let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w0 = GridFunction::from_fn(grid, |x| {
            coeffs.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * PI * x).sin()).sum()
        })
        .max_with(&psi0);
        let lambda_bound = family.sup_linf().max(w0.norm_linf());
        for (k, psi_n) in family.terms.iter().enumerate() {
            let r = spec.rate.at(k + 1);
            // feasible competitor overshooting the truncation level
            let spike = GridFunction::from_fn(grid, |x| 5.0 * r * (3.0 * PI * x).sin().powi(2));
            let w_n = w0.add(&psi_n.sub(&psi0)).add(&spike);
            let rec = recovery_sequence(&w_n, psi_n, &w0).unwrap();
            bounded &= rec.norm_linf() <= lambda_bound && rec.dominates(psi_n);
            if k + 1 == family.terms.len() {
                worst_final = worst_final.max(rec.sub(&w0).norm_w1p(2.0));
            }
        }
    }
    Outcome {
        pass: worst_final < 1e-6 && bounded,
        detail: format!("max ||T(w_32) - w_0||_W1p = {worst_final:.3e} over 10 w_0, uniformly bounded = {bounded}"),
    }
}

fn c10_audit() -> Outcome {
    let grid = Grid::new(9).unwrap();
    let mut violations = 0;
    let mut families = 0;
    for p in [1.5, 2.0, 3.0, 4.0] {
        for (g, sigma, mu) in [(Shape::One, Shape::Zero, 0.0), (Shape::Tanh, Shape::NegTanh, 0.5)] {
            let data = StructuralData::builder(grid, p)
                .kappa_constant(1.5)
                .source_constant(1.0)
                .g_shape(g)
                .sigma_shape(sigma)
                .growth(mu, 1.0)
                .build()
                .unwrap();
            violations += audit_assumptions(&data, 100_000, 10 + families as u64).total_violations();
            families += 1;
        }
    }
    let bad = StructuralData::builder(grid, 2.0).kappa_constant(2.0).beta(1.0).build().unwrap();
    let caught = audit_assumptions(&bad, 100_000, 3).total_violations();
    Outcome {
        pass: violations == 0 && caught > 0,
        detail: format!("{families} consistent families: {violations} violations; kappa_max > beta family: {caught} violations"),
    }
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 phi_lambda inequality", Duration::from_secs(1), c1_phi),
        ("2 L-inf a priori bound", Duration::from_secs(60), c2_linf_bound),
        ("3 oracle equivalence", Duration::from_secs(5), c3_oracle),
        ("4 closed-form convergence", Duration::from_secs(5), c4_closed_form),
        ("5 Mosco stability", Duration::from_secs(120), c5_mosco),
        ("6 negative control", Duration::from_secs(60), c6_negative_control),
        ("7 projection equivalence", Duration::from_secs(1), c7_projection),
        ("8 truncation continuation", Duration::from_secs(30), c8_continuation),
        ("9 recovery sequence", Duration::from_secs(5), c9_recovery),
        ("10 assumption audit", Duration::from_secs(2), c10_audit),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let pass = outcome.pass && elapsed < limit;
        failed += usize::from(!pass);
        println!(
            "criterion {name}: {} [{:.3}s < {}s: {}] {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            elapsed < limit,
            outcome.detail
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
