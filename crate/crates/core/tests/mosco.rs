use moscolab::model::{Shape, StructuralData};
use moscolab::mosco::{
    generate_obstacles, run_stability_experiment, ObstacleKind, ObstacleSequence, Rate,
};
use moscolab::solver::{solve_vi, SolverOptions};
use moscolab::{Grid, GridFunction};

fn standard(grid: Grid) -> StructuralData {
    StructuralData::builder(grid, 2.0)
        .source_constant(1.0)
        .sigma_shape(Shape::NegTanh)
        .growth(0.5, 0.0)
        .build()
        .unwrap()
}

#[test]
fn cond2_standard_instance_converges() {
    let grid = Grid::new(99).unwrap();
    let spec = ObstacleSequence::standard(
        ObstacleKind::Cond2Strong,
        GridFunction::constant(grid, -0.05),
        0.01,
        Rate::Harmonic,
        32,
    );
    let rep = run_stability_experiment(&standard(grid), &spec, &SolverOptions::default(), 1e-3).unwrap();
    assert!(rep.passed(), "{:?}", rep.verdicts);
    let d: Vec<f64> = rep.records.iter().map(|r| r.dist_w1p).collect();
    assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn oscillation_splits_into_two_limit_problems() {
    let grid = Grid::new(49).unwrap();
    let data = standard(grid);
    let psi0 = GridFunction::constant(grid, -0.05);
    let spec = ObstacleSequence::standard(ObstacleKind::NonconvergingOscillation, psi0, 0.1, Rate::Harmonic, 8);
    let rep = run_stability_experiment(&data, &spec, &SolverOptions::default(), 1e-3).unwrap();
    assert!(!rep.verdicts.convergence_ok);
    assert!(rep.persistent_gap >= 1e-3);

    let family = generate_obstacles(&spec).unwrap();
    let u0 = solve_vi(&data, &family.psi0, &SolverOptions::default()).unwrap().u;
    let even = solve_vi(&data, &family.terms[1], &SolverOptions::default()).unwrap().u;
    let odd = solve_vi(&data, &family.terms[0], &SolverOptions::default()).unwrap().u;
    for r in &rep.records {
        let cluster = if r.n % 2 == 0 { &even } else { &odd };
        assert_eq!(r.dist_w1p, cluster.sub(&u0).norm_w1p(2.0));
    }
    assert!(rep.records[0].dist_w1p != rep.records[1].dist_w1p);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let grid = Grid::new(31).unwrap();
    let data = standard(grid);
    let spec = ObstacleSequence::standard(
        ObstacleKind::Cond4Uniform,
        GridFunction::from_fn(grid, |x| 0.1 * (6.0 * x).sin() - 0.05),
        0.02,
        Rate::Harmonic,
        12,
    );
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_stability_experiment(&data, &spec, &SolverOptions::default(), 1e-3).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    assert_eq!(one.to_csv_string(), four.to_csv_string());
    assert_eq!(one.records.iter().map(|r| r.n).collect::<Vec<_>>(), (1..=12).collect::<Vec<_>>());
}

#[test]
fn solver_failure_is_reported_with_index() {
    let grid = Grid::new(31).unwrap();
    let data = StructuralData::builder(grid, 3.0).source_constant(1.0).build().unwrap();
    let spec = ObstacleSequence::standard(
        ObstacleKind::Cond2Strong,
        GridFunction::constant(grid, -10.0),
        0.01,
        Rate::Harmonic,
        3,
    );
    let opts = SolverOptions {
        max_sweeps: 1,
        ..SolverOptions::default()
    };
    let rep = run_stability_experiment(&data, &spec, &opts, 1e-3).unwrap();
    assert_eq!(rep.failed_n, vec![0, 1, 2, 3]);
    assert!(!rep.passed());
}

#[test]
fn linf_bound_uses_the_uniform_obstacle_norm() {
    let grid = Grid::new(31).unwrap();
    let data = standard(grid);
    let spec = ObstacleSequence::standard(
        ObstacleKind::Cond1Below,
        GridFunction::constant(grid, -0.05),
        2.0,
        Rate::Harmonic,
        4,
    );
    let rep = run_stability_experiment(&data, &spec, &SolverOptions::default(), 1e-3).unwrap();
    let family = generate_obstacles(&spec).unwrap();
    assert_eq!(rep.c_inf_bound, family.sup_linf().max(1.0));
    assert!(rep.verdicts.linf_bound_ok);
}
