//! Discrete obstacle variational inequality.
//!
//! The discrete problem is the complementarity system
//! `u >= psi`, `F(u) >= 0`, `F_i(u) = 0` wherever `u_i > psi_i`, where `F` is the
//! Galerkin residual of `-div a(x, u, Du) + a_0(x, u) + H(x, u, Du)` in the hat
//! basis. It is solved by projected, damped nonlinear Gauss–Seidel with a
//! continuation in the truncation level of `H`. Sweeps are interleaved with
//! projected Newton corrections on the tridiagonal Jacobian; a correction is
//! kept only if it lowers the complementarity merit.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discretization::{fmt_f64, Grid, GridFunction};
use crate::error::{Error, Result};
use crate::model::{StructuralData, Truncation};

/// Largest grid accepted by [`lcp_oracle`] (enumeration is `2^m`).
pub const ORACLE_MAX_NODES: usize = 12;

const SCALAR_MAX_ITERS: usize = 200;

/// Sweeps between two full residual evaluations.
const CHECK_EVERY: usize = 8;

/// Newton corrections attempted after each residual evaluation.
const NEWTON_BURST: usize = 30;

/// Step halvings in the Newton line search.
const NEWTON_HALVINGS: usize = 12;

/// Gradient and value magnitude below which Jacobian slopes are frozen.
const SLOPE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_res: f64,
    pub tol_act: f64,
    pub max_sweeps: usize,
    pub damping: f64,
    pub j_schedule: Vec<Truncation>,
    pub scalar_solver_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_res: 1e-10,
            tol_act: 1e-12,
            max_sweeps: 200_000,
            damping: 0.7,
            j_schedule: default_schedule(1024),
            scalar_solver_tol: 1e-13,
        }
    }
}

/// `1, 2, 4, ..., j_max` followed by the untruncated problem.
pub fn default_schedule(j_max: u32) -> Vec<Truncation> {
    let mut schedule: Vec<Truncation> = std::iter::successors(Some(1u32), |j| j.checked_mul(2))
        .take_while(|&j| j <= j_max)
        .map(Truncation::Level)
        .collect();
    schedule.push(Truncation::Untruncated);
    schedule
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        if !(self.tol_res > 0.0 && self.tol_act > 0.0 && self.scalar_solver_tol > 0.0) {
            return bad("solver tolerances must be positive".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be positive".into());
        }
        if self.j_schedule.is_empty() {
            return bad("j_schedule must not be empty".into());
        }
        if self.j_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad("j_schedule must be strictly increasing".into());
        }
        if self.j_schedule.contains(&Truncation::Level(0)) {
            return bad("truncation levels start at 1".into());
        }
        Ok(())
    }
}

/// Diagnostics of one continuation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub j: Truncation,
    pub sweeps: usize,
    pub newton_steps: usize,
    pub converged: bool,
    /// `||u_j - u_prev||_{W^{1,p}}` against the previous stage.
    pub dist_w1p_from_previous: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VISolution {
    pub u: GridFunction,
    pub psi: GridFunction,
    pub active_set: Vec<usize>,
    pub residuals: Vec<f64>,
    pub sweeps: usize,
    pub newton_steps: usize,
    pub j_final: Truncation,
    pub converged: bool,
    pub stages: Vec<StageRecord>,
}

impl VISolution {
    pub fn is_active(&self, i: usize) -> bool {
        self.active_set.binary_search(&i).is_ok()
    }

    /// `max(-min F, max over inactive |F|)`, the complementarity defect.
    pub fn complementarity_defect(&self) -> f64 {
        self.residuals
            .iter()
            .enumerate()
            .map(|(i, &r)| if self.is_active(i) { (-r).max(0.0) } else { r.abs() })
            .fold(0.0, f64::max)
    }

    /// CSV text with header `x,u,psi,residual,active`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x,u,psi,residual,active\n");
        let grid = self.u.grid();
        for i in 0..grid.m() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(grid.node(i)),
                fmt_f64(self.u.values()[i]),
                fmt_f64(self.psi.values()[i]),
                fmt_f64(self.residuals[i]),
                u8::from(self.is_active(i))
            );
        }
        out
    }

    /// Stage distances `||u_{j_next} - u_j||_{W^{1,p}}` in schedule order.
    pub fn stage_distances(&self) -> Vec<(Truncation, Truncation, f64)> {
        self.stages
            .windows(2)
            .filter_map(|w| w[1].dist_w1p_from_previous.map(|d| (w[0].j, w[1].j, d)))
            .collect()
    }
}

/// Residual of the untruncated problem.
pub fn assemble_residual(data: &StructuralData, u: &GridFunction) -> Vec<f64> {
    assemble_residual_truncated(data, u, Truncation::Untruncated)
}

/// `F_i(u) = a_{e-} - a_{e+} + h a_0(u_i) + (h/2)(H_j(e-) + H_j(e+))`.
///
/// Flux and Hamiltonian are evaluated per element at the element gradient and
/// the element-midpoint value; the source `f` is taken at node `i`.
pub fn assemble_residual_truncated(
    data: &StructuralData,
    u: &GridFunction,
    j: Truncation,
) -> Vec<f64> {
    assert_eq!(u.grid().m(), data.grid().m(), "residual on a foreign grid");
    residual_of(data, u.values(), j)
}

fn residual_of(data: &StructuralData, v: &[f64], j: Truncation) -> Vec<f64> {
    let h = data.grid().h();
    let f = data.source().values();
    let m = v.len();
    let mut grad = Vec::with_capacity(m + 1);
    let mut mid = Vec::with_capacity(m + 1);
    for e in 0..=m {
        let left = if e == 0 { 0.0 } else { v[e - 1] };
        let right = if e == m { 0.0 } else { v[e] };
        grad.push((right - left) / h);
        mid.push(0.5 * (left + right));
    }
    (0..m)
        .map(|i| {
            let (el, er) = (i, i + 1);
            let principal = data.flux(el, grad[el]) - data.flux(er, grad[er]);
            let hl = j.apply(data.hamiltonian(f[i], mid[el], grad[el]));
            let hr = j.apply(data.hamiltonian(f[i], mid[er], grad[er]));
            principal + h * data.zero_order(v[i]) + 0.5 * h * (hl + hr)
        })
        .collect()
}

/// Tridiagonal Jacobian of `F` as `(sub, diag, sup)`, with slopes frozen at
/// `SLOPE_FLOOR` so the singular and degenerate cases stay invertible.
fn jacobian_of(data: &StructuralData, v: &[f64], j: Truncation) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = data.grid().h();
    let f = data.source().values();
    let m = v.len();
    let floored = |x: f64| if x.abs() < SLOPE_FLOOR { SLOPE_FLOOR } else { x };
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    for i in 0..m {
        let ul = if i == 0 { 0.0 } else { v[i - 1] };
        let ur = if i + 1 == m { 0.0 } else { v[i + 1] };
        let (gl, gr) = ((v[i] - ul) / h, (ur - v[i]) / h);
        let (al, ar) = (data.flux_slope(i, floored(gl)), data.flux_slope(i + 1, floored(gr)));
        let (hl, hsl, hxl) = data.hamiltonian_partials(f[i], 0.5 * (ul + v[i]), gl);
        let (hr, hsr, hxr) = data.hamiltonian_partials(f[i], 0.5 * (v[i] + ur), gr);
        let (tl, tr) = (0.5 * h * j.slope(hl), 0.5 * h * j.slope(hr));
        sub[i] = -al / h + tl * (0.5 * hsl - hxl / h);
        sup[i] = -ar / h + tr * (0.5 * hsr + hxr / h);
        diag[i] = (al + ar) / h
            + h * data.zero_order_slope(floored(v[i]))
            + tl * (0.5 * hsl + hxl / h)
            + tr * (0.5 * hsr - hxr / h);
    }
    (sub, diag, sup)
}

/// Thomas algorithm; `None` on a vanishing or non-finite pivot.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    for i in 0..m {
        let (a, cp, dp) = if i == 0 { (0.0, 0.0, 0.0) } else { (sub[i], c[i - 1], d[i - 1]) };
        let pivot = diag[i] - a * cp;
        if !(pivot.is_finite() && pivot.abs() > f64::MIN_POSITIVE) {
            return None;
        }
        c[i] = sup[i] / pivot;
        d[i] = (rhs[i] - a * dp) / pivot;
    }
    for i in (0..m.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d.iter().all(|x| x.is_finite()).then_some(d)
}

/// `max_i |min(u_i - psi_i, F_i / d_i)|`.
fn merit(residuals: &[f64], u: &[f64], psi: &[f64], scale: &[f64]) -> f64 {
    residuals
        .iter()
        .zip(u.iter().zip(psi))
        .zip(scale)
        .map(|((&r, (&ui, &pi)), &d)| (ui - pi).min(r / d).abs())
        .fold(0.0, f64::max)
}

/// One projected Newton correction with backtracking. Nodes whose diagonal
/// Newton step would cross the obstacle are pinned to it; the rest solve the
/// linearised equations. Returns the new iterate and its residual when the
/// merit decreases.
fn newton_correction(
    data: &StructuralData,
    u: &[f64],
    psi: &[f64],
    residuals: &[f64],
    j: Truncation,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let (mut sub, mut diag, mut sup) = jacobian_of(data, u, j);
    if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return None;
    }
    let scale = diag.clone();
    let current = merit(residuals, u, psi, &scale);
    let m = u.len();
    let mut rhs: Vec<f64> = residuals.iter().map(|r| -r).collect();
    for i in 0..m {
        if u[i] - psi[i] < residuals[i] / diag[i] {
            sub[i] = 0.0;
            sup[i] = 0.0;
            diag[i] = 1.0;
            rhs[i] = psi[i] - u[i];
        }
    }
    let delta = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    let mut step = 1.0;
    for _ in 0..=NEWTON_HALVINGS {
        let candidate: Vec<f64> = (0..m).map(|i| (u[i] + step * delta[i]).max(psi[i])).collect();
        let r = residual_of(data, &candidate, j);
        if r.iter().all(|x| x.is_finite()) && merit(&r, &candidate, psi, &scale) < current {
            return Some((candidate, r));
        }
        step *= 0.5;
    }
    None
}

fn active_set(u: &GridFunction, psi: &GridFunction, tol_act: f64) -> Vec<usize> {
    u.values()
        .iter()
        .zip(psi.values())
        .enumerate()
        .filter(|(_, (u, p))| *u - *p <= tol_act)
        .map(|(i, _)| i)
        .collect()
}

fn complementarity_holds(residuals: &[f64], u: &[f64], psi: &[f64], opts: &SolverOptions) -> bool {
    residuals
        .iter()
        .zip(u.iter().zip(psi))
        .all(|(&r, (&ui, &pi))| r >= -opts.tol_res && (ui - pi <= opts.tol_act || r.abs() <= opts.tol_res))
}

/// Root of a strictly increasing scalar function by Newton's method inside a
/// shrinking bracket, with bisection and bracket expansion as fallbacks.
fn solve_increasing(g: impl Fn(f64) -> (f64, f64), t0: f64, tol: f64) -> f64 {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut t = t0;
    let mut reach = 1e-2 * (1.0 + t0.abs());
    let mut last_step = f64::INFINITY;
    for _ in 0..SCALAR_MAX_ITERS {
        let (value, slope) = g(t);
        if value == 0.0 {
            return t;
        }
        if value > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - value / slope;
        if slope.is_finite() && (newton - t).abs() <= tol * (1.0 + t.abs()) {
            return newton;
        }
        let bracketed = lo.is_finite() && hi.is_finite();
        let inside = newton > lo && newton < hi;
        let next = if inside && (!bracketed || (newton - t).abs() <= 0.75 * last_step) {
            newton
        } else if bracketed {
            0.5 * (lo + hi)
        } else {
            reach *= 2.0;
            if lo.is_finite() {
                lo + reach
            } else {
                hi - reach
            }
        };
        let step = (next - t).abs();
        if step <= tol * (1.0 + t.abs()) || (bracketed && hi - lo <= tol * (1.0 + t.abs())) {
            return next;
        }
        last_step = step;
        t = next;
    }
    t
}

fn check_inputs(data: &StructuralData, psi: &GridFunction, u_init: &GridFunction) -> Result<()> {
    let m = data.grid().m();
    for gf in [psi, u_init] {
        if gf.grid().m() != m {
            return Err(Error::GridMismatch {
                expected: m,
                got: gf.grid().m(),
            });
        }
    }
    if !u_init.dominates(psi) {
        return Err(Error::Infeasible("initial guess lies below the obstacle".into()));
    }
    Ok(())
}

/// Default initial guess `max(psi, 0)`.
pub fn default_initial_guess(psi: &GridFunction) -> GridFunction {
    psi.map(|v| v.max(0.0))
}

/// Solves the problem with `H` replaced by `H_j`.
///
/// Returns `converged = false` with diagnostics when the sweep budget runs
/// out or the iteration leaves the finite range.
pub fn solve_truncated(
    data: &StructuralData,
    psi: &GridFunction,
    j: Truncation,
    opts: &SolverOptions,
    u_init: Option<&GridFunction>,
) -> Result<VISolution> {
    opts.validate()?;
    let u_init = u_init.cloned().unwrap_or_else(|| default_initial_guess(psi));
    check_inputs(data, psi, &u_init)?;

    let grid = data.grid();
    let h = grid.h();
    let m = grid.m();
    let f = data.source().values();
    let lower = psi.values();
    let theta = opts.damping;
    let mut u = u_init.into_values();

    let mut sweeps = 0;
    let mut newton_steps = 0;
    let mut converged = false;
    let mut residuals: Vec<f64>;
    'outer: loop {
        if sweeps % CHECK_EVERY == 0 || sweeps >= opts.max_sweeps {
            if u.iter().any(|v| !v.is_finite()) {
                residuals = vec![f64::NAN; m];
                break;
            }
            residuals = residual_of(data, &u, j);
            for burst in 0..=NEWTON_BURST {
                if complementarity_holds(&residuals, &u, lower, opts) {
                    converged = true;
                    break 'outer;
                }
                if burst == NEWTON_BURST || newton_steps >= opts.max_sweeps {
                    break;
                }
                match newton_correction(data, &u, lower, &residuals, j) {
                    Some((next, r)) => {
                        u = next;
                        residuals = r;
                        newton_steps += 1;
                    }
                    None => break,
                }
            }
            if sweeps >= opts.max_sweeps {
                break;
            }
        }

        for i in 0..m {
            let ul = if i == 0 { 0.0 } else { u[i - 1] };
            let ur = if i + 1 == m { 0.0 } else { u[i + 1] };
            let t0 = u[i];
            // lagged Hamiltonian: frozen at the current iterate
            let hl = j.apply(data.hamiltonian(f[i], 0.5 * (ul + t0), (t0 - ul) / h));
            let hr = j.apply(data.hamiltonian(f[i], 0.5 * (t0 + ur), (ur - t0) / h));
            let lagged = 0.5 * h * (hl + hr);
            let (el, er) = (i, i + 1);
            let g = |t: f64| {
                let gl = (t - ul) / h;
                let gr = (ur - t) / h;
                let value = data.flux(el, gl) - data.flux(er, gr) + h * data.zero_order(t) + lagged;
                let slope = (data.flux_slope(el, gl) + data.flux_slope(er, gr)) / h
                    + h * data.zero_order_slope(t);
                (value, slope)
            };
            let target = solve_increasing(g, t0, opts.scalar_solver_tol);
            u[i] = (t0 + theta * (target - t0)).max(lower[i]);
        }
        sweeps += 1;
    }

    // a diverged iterate is replaced by the obstacle so the value stays finite
    let u = GridFunction::new(grid, u).unwrap_or_else(|_| psi.map(|v| v.max(0.0)));
    let active_set = active_set(&u, psi, opts.tol_act);
    Ok(VISolution {
        u,
        psi: psi.clone(),
        active_set,
        residuals,
        sweeps,
        newton_steps,
        j_final: j,
        converged,
        stages: vec![StageRecord {
            j,
            sweeps,
            newton_steps,
            converged,
            dist_w1p_from_previous: None,
        }],
    })
}

/// Solves the untruncated problem by continuation along `opts.j_schedule`,
/// warm-starting each stage from the previous one. The final stage is always
/// the untruncated problem, appended if the schedule does not end with it.
///
/// Stops at the first stage that does not converge; the returned solution then
/// carries `converged = false` and that stage as `j_final`.
pub fn solve_vi(data: &StructuralData, psi: &GridFunction, opts: &SolverOptions) -> Result<VISolution> {
    opts.validate()?;
    let mut schedule = opts.j_schedule.clone();
    if schedule.last() != Some(&Truncation::Untruncated) {
        schedule.push(Truncation::Untruncated);
    }
    let p = data.p();
    let mut stages: Vec<StageRecord> = Vec::with_capacity(schedule.len());
    let mut total_sweeps = 0;
    let mut total_newton = 0;
    let mut previous: Option<GridFunction> = None;
    let mut last = None;
    for &j in &schedule {
        let mut sol = solve_truncated(data, psi, j, opts, previous.as_ref())?;
        total_sweeps += sol.sweeps;
        total_newton += sol.newton_steps;
        let mut record = sol.stages.pop().expect("one stage per truncated solve");
        record.dist_w1p_from_previous = previous.as_ref().map(|prev| sol.u.sub(prev).norm_w1p(p));
        stages.push(record);
        let converged = sol.converged;
        previous = Some(sol.u.clone());
        last = Some(sol);
        if !converged {
            break;
        }
    }
    let mut sol = last.expect("schedule is never empty");
    sol.sweeps = total_sweeps;
    sol.newton_steps = total_newton;
    sol.stages = stages;
    Ok(sol)
}

/// Matrix `kappa tridiag(-1, 2, -1) / h + alpha0 h I` of the linear case.
pub fn linear_system_matrix(grid: Grid, kappa: f64, alpha0: f64) -> DMatrix<f64> {
    let m = grid.m();
    let h = grid.h();
    DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            2.0 * kappa / h + alpha0 * h
        } else if r.abs_diff(c) == 1 {
            -kappa / h
        } else {
            0.0
        }
    })
}

/// Exact solution of the linear complementarity problem
/// `u >= psi`, `M u + q >= 0`, `(u - psi)^T (M u + q) = 0`, with `q_i = h f_i`,
/// by enumerating all active sets.
pub fn lcp_oracle(kappa: f64, alpha0: f64, f: &GridFunction, psi: &GridFunction) -> Result<GridFunction> {
    let grid = f.grid();
    let m = grid.m();
    if m > ORACLE_MAX_NODES {
        return Err(Error::Domain(format!(
            "oracle enumerates 2^m active sets; m = {m} exceeds {ORACLE_MAX_NODES}"
        )));
    }
    if psi.grid().m() != m {
        return Err(Error::GridMismatch {
            expected: m,
            got: psi.grid().m(),
        });
    }
    if !(kappa > 0.0 && alpha0 > 0.0) {
        return Err(Error::Domain("oracle needs kappa > 0 and alpha0 > 0".into()));
    }
    let h = grid.h();
    let mat = linear_system_matrix(grid, kappa, alpha0);
    let q = DVector::from_iterator(m, f.values().iter().map(|fi| h * fi));
    let lower = DVector::from_column_slice(psi.values());
    let scale = mat.amax() * (1.0 + lower.amax()) + q.amax();
    let sign_tol = 1e-12 * scale;

    for mask in 0u32..(1u32 << m) {
        let active = |i: usize| mask & (1 << i) != 0;
        let free: Vec<usize> = (0..m).filter(|&i| !active(i)).collect();
        let mut u = lower.clone();
        if !free.is_empty() {
            let k = free.len();
            let reduced = DMatrix::from_fn(k, k, |r, c| mat[(free[r], free[c])]);
            let rhs = DVector::from_fn(k, |r, _| {
                let i = free[r];
                -q[i] - (0..m).filter(|&c| active(c)).map(|c| mat[(i, c)] * lower[c]).sum::<f64>()
            });
            let lu = reduced.clone().lu();
            let mut sol = lu
                .solve(&rhs)
                .ok_or_else(|| Error::Internal("singular reduced system".into()))?;
            // one refinement step keeps the reduced residual at rounding level
            let defect = &rhs - &reduced * &sol;
            if let Some(corr) = lu.solve(&defect) {
                sol += corr;
            }
            for (r, &i) in free.iter().enumerate() {
                u[i] = sol[r];
            }
        }
        if free.iter().any(|&i| u[i] < lower[i] - sign_tol) {
            continue;
        }
        let w = &mat * &u + &q;
        if (0..m).filter(|&i| active(i)).any(|i| w[i] < -sign_tol) {
            continue;
        }
        let values: Vec<f64> = (0..m).map(|i| u[i].max(lower[i])).collect();
        return GridFunction::new(grid, values);
    }
    Err(Error::Internal(
        "no active set satisfies the complementarity conditions".into(),
    ))
}

/// [`lcp_oracle`] for structural data in the linear class: `p = 2`, constant
/// `kappa`, gradient-free `H` with a constant `g`.
pub fn lcp_oracle_for(data: &StructuralData, psi: &GridFunction) -> Result<GridFunction> {
    let kappa = data.kappa()[0];
    let linear = data.p() == 2.0
        && data.kappa().iter().all(|&k| k == kappa)
        && data.hamiltonian_is_gradient_free();
    let g = data.g_shape().constant_value();
    match (linear, g) {
        (true, Some(g)) => lcp_oracle(kappa, data.alpha0(), &data.source().scale(g), psi),
        _ => Err(Error::Domain(
            "oracle needs p = 2, constant kappa, and a gradient-free H with constant g".into(),
        )),
    }
}
