//! Obstacle sequences, recovery sequences, and stability experiments for
//! obstacle sets `C(psi_n) = {v >= psi_n}`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{fmt_f64, Grid, GridFunction};
use crate::error::{Error, Result};
use crate::model::{c_infinity, StructuralData};
use crate::solver::{solve_vi, SolverOptions, VISolution};

/// Slack added to the `L^inf` bound for rounding.
pub const LINF_SLACK: f64 = 1e-6;

/// Default tail threshold for [`StabilityVerdicts::convergence_ok`].
pub const DEFAULT_STABILITY_THRESHOLD: f64 = 1e-3;

/// Tail threshold for a CONVERGES projection verdict.
pub const PROJECTION_CONVERGES_BELOW: f64 = 1e-9;

/// Persistent gap a witness probe needs for a DIVERGES projection verdict.
pub const PROJECTION_WITNESS_GAP: f64 = 1e-3;

/// Largest admissible `max / median` of `||u_n||_{W^{1,p}}`.
pub const W1P_UNIFORM_RATIO: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    /// `psi_n = psi_0 - r_n eta` with `eta >= 0`.
    Cond1Below,
    /// `psi_n = psi_0 + r_n eta`.
    Cond2Strong,
    /// `psi_n = psi_0 + r_n eta sin^2(n pi x)`, majorant `psi_0 + max_n r_n |eta|`.
    Cond4Uniform,
    /// `psi_n = psi_0 + (-1)^n eta`.
    NonconvergingOscillation,
}

impl ObstacleKind {
    pub fn name(self) -> &'static str {
        match self {
            ObstacleKind::Cond1Below => "cond1_below",
            ObstacleKind::Cond2Strong => "cond2_strong",
            ObstacleKind::Cond4Uniform => "cond4_uniform",
            ObstacleKind::NonconvergingOscillation => "nonconverging_oscillation",
        }
    }

    /// Bump for cond1 and the oscillation, hat otherwise.
    pub fn default_profile(self) -> Profile {
        match self {
            ObstacleKind::Cond1Below | ObstacleKind::NonconvergingOscillation => Profile::Bump,
            ObstacleKind::Cond2Strong | ObstacleKind::Cond4Uniform => Profile::Hat,
        }
    }
}

/// Perturbation shapes on `(0, 1)`, each with peak value 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `1 - |2x - 1|`.
    Hat,
    /// `sin^2(pi x)`.
    Bump,
}

impl Profile {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Profile::Hat => 1.0 - (2.0 * x - 1.0).abs(),
            Profile::Bump => (std::f64::consts::PI * x).sin().powi(2),
        }
    }

    pub fn sample(self, grid: Grid, amplitude: f64) -> GridFunction {
        GridFunction::from_fn(grid, |x| amplitude * self.eval(x))
    }
}

/// Rates `r_n`, `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Rate {
    /// `1 / n`.
    Harmonic,
    /// `ratio^n`, `0 < ratio < 1`.
    Geometric { ratio: f64 },
}

impl Rate {
    pub fn at(self, n: usize) -> f64 {
        match self {
            Rate::Harmonic => 1.0 / n as f64,
            Rate::Geometric { ratio } => ratio.powi(n as i32),
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Rate::Harmonic => Ok(()),
            Rate::Geometric { ratio } if ratio > 0.0 && ratio < 1.0 => Ok(()),
            Rate::Geometric { ratio } => Err(Error::Infeasible(format!(
                "geometric rate needs 0 < ratio < 1, got {ratio}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSequence {
    pub kind: ObstacleKind,
    pub psi0: GridFunction,
    /// Perturbation profile `eta`.
    pub eta: GridFunction,
    /// Ignored by [`ObstacleKind::NonconvergingOscillation`].
    pub rate: Rate,
    pub n_max: usize,
}

impl ObstacleSequence {
    /// Sequence with the kind's default profile scaled by `amplitude`.
    pub fn standard(kind: ObstacleKind, psi0: GridFunction, amplitude: f64, rate: Rate, n_max: usize) -> Self {
        let eta = kind.default_profile().sample(psi0.grid(), amplitude);
        ObstacleSequence {
            kind,
            psi0,
            eta,
            rate,
            n_max,
        }
    }
}

/// `psi_0`, the terms `psi_1..psi_{n_max}`, and the cond4 majorant.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleFamily {
    pub kind: ObstacleKind,
    pub psi0: GridFunction,
    pub terms: Vec<GridFunction>,
    pub majorant: Option<GridFunction>,
}

impl ObstacleFamily {
    /// `sup_n ||psi_n||_inf` including `psi_0`.
    pub fn sup_linf(&self) -> f64 {
        self.terms
            .iter()
            .map(GridFunction::norm_linf)
            .fold(self.psi0.norm_linf(), f64::max)
    }

    /// Nodal values as Euclidean box bounds.
    pub fn as_boxes(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        (
            self.psi0.values().to_vec(),
            self.terms.iter().map(|t| t.values().to_vec()).collect(),
        )
    }
}

pub fn generate_obstacles(spec: &ObstacleSequence) -> Result<ObstacleFamily> {
    let grid = spec.psi0.grid();
    if spec.eta.grid() != grid {
        return Err(Error::GridMismatch {
            expected: grid.m(),
            got: spec.eta.grid().m(),
        });
    }
    if spec.n_max == 0 {
        return Err(Error::Infeasible("n_max must be at least 1".into()));
    }
    spec.rate.validate()?;
    if spec.kind == ObstacleKind::Cond1Below && spec.eta.min_value() < 0.0 {
        return Err(Error::Infeasible("cond1_below needs a nonnegative perturbation".into()));
    }
    if spec.kind == ObstacleKind::NonconvergingOscillation && spec.eta.norm_linf() == 0.0 {
        return Err(Error::Infeasible("oscillation needs a nonzero perturbation".into()));
    }

    let psi0 = &spec.psi0;
    let eta = &spec.eta;
    let terms: Vec<GridFunction> = (1..=spec.n_max)
        .map(|n| {
            let r = spec.rate.at(n);
            match spec.kind {
                ObstacleKind::Cond1Below => psi0.sub(&eta.scale(r)),
                ObstacleKind::Cond2Strong => psi0.add(&eta.scale(r)),
                ObstacleKind::Cond4Uniform => {
                    let freq = n as f64 * std::f64::consts::PI;
                    let wiggle = GridFunction::from_fn(grid, |x| (freq * x).sin().powi(2));
                    psi0.add(&eta.zip_with(&wiggle, |e, w| r * e * w))
                }
                ObstacleKind::NonconvergingOscillation => {
                    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                    psi0.add(&eta.scale(sign))
                }
            }
        })
        .collect();
    let majorant = (spec.kind == ObstacleKind::Cond4Uniform).then(|| {
        let r_max = (1..=spec.n_max).map(|n| spec.rate.at(n)).fold(0.0, f64::max);
        psi0.add(&eta.map(|e| r_max * e.abs()))
    });
    Ok(ObstacleFamily {
        kind: spec.kind,
        psi0: psi0.clone(),
        terms,
        majorant,
    })
}

/// `T_{lambda_n}(w_n)` with `lambda_n = max(||psi_n||_inf, ||w_0||_inf)`.
pub fn recovery_sequence(w_n: &GridFunction, psi_n: &GridFunction, w0: &GridFunction) -> Result<GridFunction> {
    let m = w_n.grid().m();
    for other in [psi_n, w0] {
        if other.grid().m() != m {
            return Err(Error::GridMismatch {
                expected: m,
                got: other.grid().m(),
            });
        }
    }
    if !w_n.dominates(psi_n) {
        return Err(Error::Infeasible("w_n lies below psi_n".into()));
    }
    let lambda = psi_n.norm_linf().max(w0.norm_linf());
    Ok(w_n.truncate(lambda))
}

/// Euclidean projection onto `{v >= psi}`.
pub fn project_box(f: &[f64], psi: &[f64]) -> Vec<f64> {
    assert_eq!(f.len(), psi.len(), "dimension mismatch");
    f.iter().zip(psi).map(|(a, b)| a.max(*b)).collect()
}

/// `min_v (P f - f | v - P f)` over `n_samples` random `v >= psi`; nonnegative
/// up to rounding for the true projection.
pub fn projection_characterization_defect(f: &[f64], psi: &[f64], n_samples: usize, seed: u64) -> f64 {
    let proj = project_box(f, psi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = 1.0 + f.iter().chain(psi).fold(0.0f64, |a, b| a.max(b.abs()));
    (0..n_samples)
        .map(|_| {
            psi.iter()
                .zip(&proj)
                .zip(f)
                .map(|((&lo, &u), &fi)| {
                    let v = lo + rng.gen_range(0.0..2.0 * spread);
                    (u - fi) * (v - u)
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProjectionVerdict {
    Converges,
    Diverges,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub probe: Vec<f64>,
    /// `min` of `e_n(probe)` over the final half.
    pub persistent_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub dimension: usize,
    pub n_probe: usize,
    /// `sup_f ||P_n f - P_0 f||` for `n = 1..`.
    pub sup_errors: Vec<f64>,
    pub tail_sup: f64,
    pub verdict: ProjectionVerdict,
    pub witness: Option<Witness>,
}

/// Probes `f` uniform on the box of half-width `2 max |psi|` and compares
/// `P_n f` with `P_0 f` along the sequence.
pub fn projection_equivalence_experiment(
    psi0: &[f64],
    sequence: &[Vec<f64>],
    n_probe: usize,
    seed: u64,
) -> Result<ProjectionReport> {
    let d = psi0.len();
    if d == 0 || n_probe == 0 || sequence.is_empty() {
        return Err(Error::Domain("need d >= 1, n_probe >= 1 and a nonempty sequence".into()));
    }
    if let Some(bad) = sequence.iter().find(|s| s.len() != d) {
        return Err(Error::GridMismatch { expected: d, got: bad.len() });
    }
    if sequence.iter().flatten().chain(psi0).any(|v| !v.is_finite()) {
        return Err(Error::Domain("box bounds must be finite".into()));
    }
    let bound = sequence.iter().flatten().chain(psi0).fold(0.0f64, |a, b| a.max(b.abs()));
    let half_width = if bound > 0.0 { 2.0 * bound } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<Vec<f64>> = (0..n_probe)
        .map(|_| (0..d).map(|_| rng.gen_range(-half_width..=half_width)).collect())
        .collect();

    // errors[k][n]: probe k against term n
    let errors: Vec<Vec<f64>> = probes
        .iter()
        .map(|f| {
            let p0 = project_box(f, psi0);
            sequence
                .iter()
                .map(|psi_n| euclidean_distance(&project_box(f, psi_n), &p0))
                .collect()
        })
        .collect();
    let n = sequence.len();
    let sup_errors: Vec<f64> = (0..n)
        .map(|t| errors.iter().map(|e| e[t]).fold(0.0, f64::max))
        .collect();
    let tail_sup = sup_errors[tail_start(n, 4)..].iter().copied().fold(0.0, f64::max);
    let half = tail_start(n, 2);
    let witness = errors
        .iter()
        .zip(&probes)
        .map(|(e, f)| (e[half..].iter().copied().fold(f64::INFINITY, f64::min), f))
        .filter(|(gap, _)| *gap >= PROJECTION_WITNESS_GAP)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(gap, f)| Witness {
            probe: f.clone(),
            persistent_gap: gap,
        });
    let verdict = if tail_sup < PROJECTION_CONVERGES_BELOW {
        ProjectionVerdict::Converges
    } else if witness.is_some() {
        ProjectionVerdict::Diverges
    } else {
        ProjectionVerdict::Inconclusive
    };
    Ok(ProjectionReport {
        dimension: d,
        n_probe,
        sup_errors,
        tail_sup,
        verdict,
        witness,
    })
}

/// First index of the final `1/parts` of a sequence of length `n` (at least
/// one element).
fn tail_start(n: usize, parts: usize) -> usize {
    n - n.div_ceil(parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub n: usize,
    pub dist_w1p: f64,
    pub linf_un: f64,
    pub w1p_un: f64,
    pub c_inf_bound: f64,
    pub sweeps: usize,
    pub newton_steps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityVerdicts {
    pub linf_bound_ok: bool,
    pub w1p_uniform_ok: bool,
    pub convergence_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: ObstacleKind,
    pub p: f64,
    pub threshold: f64,
    /// `C_inf(||f||_inf, alpha_0, p, sup_n ||psi_n||_inf)`.
    pub c_inf_bound: f64,
    pub linf_u0: f64,
    pub records: Vec<StabilityRecord>,
    /// `max` of `dist_w1p` over the final quarter.
    pub tail_max: f64,
    /// `min` of `dist_w1p` over the final half.
    pub persistent_gap: f64,
    pub verdicts: StabilityVerdicts,
    /// Indices whose solve did not converge; `0` stands for `psi_0`.
    pub failed_n: Vec<usize>,
}

impl StabilityReport {
    /// CSV text with header `n,dist_w1p,linf_un,c_inf_bound,sweeps,converged`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("n,dist_w1p,linf_un,c_inf_bound,sweeps,converged\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.n,
                fmt_f64(r.dist_w1p),
                fmt_f64(r.linf_un),
                fmt_f64(r.c_inf_bound),
                r.sweeps,
                u8::from(r.converged)
            );
        }
        out
    }

    pub fn passed(&self) -> bool {
        let v = self.verdicts;
        self.failed_n.is_empty() && v.linf_bound_ok && v.w1p_uniform_ok && v.convergence_ok
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Solves for `psi_0` and every `psi_n` (in parallel on the current rayon
/// pool) and compares the solutions with `u_0`.
pub fn run_stability_experiment(
    data: &StructuralData,
    spec: &ObstacleSequence,
    opts: &SolverOptions,
    threshold: f64,
) -> Result<StabilityReport> {
    opts.validate()?;
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!("threshold must be positive, got {threshold}")));
    }
    if spec.psi0.grid() != data.grid() {
        return Err(Error::GridMismatch {
            expected: data.grid().m(),
            got: spec.psi0.grid().m(),
        });
    }
    let family = generate_obstacles(spec)?;
    let p = data.p();
    let mut all: Vec<&GridFunction> = vec![&family.psi0];
    all.extend(family.terms.iter());
    let solutions: Vec<VISolution> = all
        .par_iter()
        .map(|psi| solve_vi(data, psi, opts))
        .collect::<Result<Vec<_>>>()?;

    let c_inf = c_infinity(data.source().norm_linf(), data.alpha0(), p, family.sup_linf());
    let u0 = &solutions[0];
    let mut failed_n: Vec<usize> = solutions
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.converged)
        .map(|(n, _)| n)
        .collect();
    failed_n.sort_unstable();
    let records: Vec<StabilityRecord> = solutions[1..]
        .iter()
        .enumerate()
        .map(|(k, sol)| StabilityRecord {
            n: k + 1,
            dist_w1p: sol.u.sub(&u0.u).norm_w1p(p),
            linf_un: sol.u.norm_linf(),
            w1p_un: sol.u.norm_w1p(p),
            c_inf_bound: c_inf,
            sweeps: sol.sweeps,
            newton_steps: sol.newton_steps,
            converged: sol.converged,
        })
        .collect();

    let n = records.len();
    let tail_max = records[tail_start(n, 4)..].iter().map(|r| r.dist_w1p).fold(0.0, f64::max);
    let persistent_gap = records[tail_start(n, 2)..]
        .iter()
        .map(|r| r.dist_w1p)
        .fold(f64::INFINITY, f64::min);
    let linf_u0 = u0.u.norm_linf();
    let linf_bound_ok = records.iter().all(|r| r.linf_un <= c_inf + LINF_SLACK) && linf_u0 <= c_inf + LINF_SLACK;
    let mut w1p: Vec<f64> = records.iter().map(|r| r.w1p_un).collect();
    let w1p_max = w1p.iter().copied().fold(0.0, f64::max);
    let w1p_median = median(&mut w1p);
    let w1p_uniform_ok = w1p_max == 0.0 || w1p_max <= W1P_UNIFORM_RATIO * w1p_median;
    Ok(StabilityReport {
        kind: spec.kind,
        p,
        threshold,
        c_inf_bound: c_inf,
        linf_u0,
        records,
        tail_max,
        persistent_gap,
        verdicts: StabilityVerdicts {
            linf_bound_ok,
            w1p_uniform_ok,
            convergence_ok: tail_max < threshold,
        },
        failed_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Verdict {
    Converges,
    DoesNotConverge,
    HypothesesNotSatisfied,
}

/// Tail floor below which a sequence counts as converged outright.
const L1_TAIL_FLOOR: f64 = 1e-10;

/// A nonnegative sequence has converged at the tail if its final quarter stays
/// below `max(1e-10, first-quarter max / 4)`.
fn tail_converges(seq: &[f64]) -> bool {
    let n = seq.len();
    let head = seq[..n.div_ceil(4)].iter().copied().fold(0.0, f64::max);
    let tail = seq[tail_start(n, 4)..].iter().copied().fold(0.0, f64::max);
    tail <= L1_TAIL_FLOOR.max(0.25 * head)
}

/// Checks that nodewise and integral convergence of `y_j >= 0` to `y` come
/// with `L^1` convergence, on the tail of a sequence of at least 4 terms.
pub fn l1_convergence_check(sequence: &[GridFunction], y: &GridFunction) -> Result<L1Verdict> {
    if sequence.len() < 4 {
        return Err(Error::Domain("need at least 4 terms to judge a tail".into()));
    }
    let m = y.grid().m();
    if let Some(bad) = sequence.iter().find(|s| s.grid().m() != m) {
        return Err(Error::GridMismatch {
            expected: m,
            got: bad.grid().m(),
        });
    }
    if y.min_value() < 0.0 || sequence.iter().any(|s| s.min_value() < 0.0) {
        return Err(Error::Domain("sequence and limit must be nonnegative".into()));
    }
    let nodewise = (0..m).all(|i| {
        let seq: Vec<f64> = sequence.iter().map(|s| (s.values()[i] - y.values()[i]).abs()).collect();
        tail_converges(&seq)
    });
    let target = y.integral();
    let integrals: Vec<f64> = sequence.iter().map(|s| (s.integral() - target).abs()).collect();
    if !(nodewise && tail_converges(&integrals)) {
        return Ok(L1Verdict::HypothesesNotSatisfied);
    }
    let l1: Vec<f64> = sequence.iter().map(|s| s.sub(y).norm_lp(1.0)).collect();
    Ok(if tail_converges(&l1) {
        L1Verdict::Converges
    } else {
        L1Verdict::DoesNotConverge
    })
}
