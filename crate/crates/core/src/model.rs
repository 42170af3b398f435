//! Structural data of the obstacle problem: the principal flux `a`, the
//! zero-order term `a_0`, the natural-growth Hamiltonian `H` with its bounded
//! truncations, and the explicit constants of the a priori estimates.
//!
//! The operator families are closed-form so that the structural inequalities
//! can be audited by sampling:
//!
//! * `a(x, s, xi) = kappa(x) |xi|^(p-2) xi`, `kappa` piecewise constant per element,
//! * `a_0(x, s) = alpha0 |s|^(p-2) s`,
//! * `H(x, s, xi) = f(x) g(s) + sigma(s) b(|s|) |xi|^p` with `b(t) = mu (1 + t)^q`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::{Grid, GridFunction};
use crate::error::{Error, Result};

/// Largest exponent accepted before `exp` is considered to overflow.
pub const EXP_GUARD: f64 = 700.0;

/// Bounded shape functions used for `g` and `sigma` in the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Zero,
    One,
    MinusOne,
    Tanh,
    NegTanh,
}

impl Shape {
    #[inline]
    pub fn eval(self, s: f64) -> f64 {
        match self {
            Shape::Zero => 0.0,
            Shape::One => 1.0,
            Shape::MinusOne => -1.0,
            Shape::Tanh => s.tanh(),
            Shape::NegTanh => -s.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Shape::Zero | Shape::One | Shape::MinusOne => 0.0,
            Shape::Tanh => 1.0 - s.tanh().powi(2),
            Shape::NegTanh => s.tanh().powi(2) - 1.0,
        }
    }

    /// Value if the shape does not depend on `s`.
    pub fn constant_value(self) -> Option<f64> {
        match self {
            Shape::Zero => Some(0.0),
            Shape::One => Some(1.0),
            Shape::MinusOne => Some(-1.0),
            Shape::Tanh | Shape::NegTanh => None,
        }
    }
}

/// Growth coefficient `b(t) = mu (1 + t)^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub mu: f64,
    pub q: f64,
}

impl Growth {
    /// `b'(t)`.
    pub fn derivative(&self, t: f64) -> f64 {
        if self.mu == 0.0 || self.q == 0.0 {
            0.0
        } else {
            self.mu * self.q * (1.0 + t).powf(self.q - 1.0)
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if self.mu == 0.0 {
            0.0
        } else if self.q == 0.0 {
            self.mu
        } else {
            self.mu * (1.0 + t).powf(self.q)
        }
    }
}

/// Index of the truncated problem: `H_j` for a finite level, `H` itself otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Truncation {
    Level(u32),
    Untruncated,
}

impl Truncation {
    /// `H / (1 + |H| / j)`, or `H` when untruncated.
    #[inline]
    pub fn apply(self, hamiltonian: f64) -> f64 {
        match self {
            Truncation::Level(j) => hamiltonian / (1.0 + hamiltonian.abs() / j as f64),
            Truncation::Untruncated => hamiltonian,
        }
    }
}

impl Truncation {
    /// Derivative of [`Truncation::apply`] with respect to `H`.
    #[inline]
    pub fn slope(self, hamiltonian: f64) -> f64 {
        match self {
            Truncation::Level(j) => {
                let d = 1.0 + hamiltonian.abs() / j as f64;
                1.0 / (d * d)
            }
            Truncation::Untruncated => 1.0,
        }
    }
}

impl std::fmt::Display for Truncation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truncation::Level(j) => write!(f, "{j}"),
            Truncation::Untruncated => write!(f, "inf"),
        }
    }
}

/// `|x|^r sign(x)` with fast paths for the common integer exponents.
#[inline]
pub(crate) fn signed_pow(x: f64, r: f64) -> f64 {
    if r == 1.0 {
        x
    } else if r == 2.0 {
        x * x.abs()
    } else if r == 3.0 {
        x * x * x
    } else if x == 0.0 {
        0.0
    } else {
        x.abs().powf(r).copysign(x)
    }
}

/// `|x|^p` with fast paths.
#[inline]
pub(crate) fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 3.0 {
        (x * x * x).abs()
    } else if p == 4.0 {
        let y = x * x;
        y * y
    } else {
        x.abs().powf(p)
    }
}

/// Structural data on a fixed grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralData {
    grid: Grid,
    p: f64,
    alpha: f64,
    beta: f64,
    alpha0: f64,
    kappa: Vec<f64>,
    g_shape: Shape,
    sigma_shape: Shape,
    growth: Growth,
    f: GridFunction,
    h_weight: GridFunction,
}

/// Builder for [`StructuralData`]; defaults give the plain p-Laplacian with
/// `kappa = 1`, `alpha0 = 1` and a vanishing Hamiltonian.
#[derive(Debug, Clone)]
pub struct StructuralDataBuilder {
    grid: Grid,
    p: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    alpha0: f64,
    kappa: Vec<f64>,
    g_shape: Shape,
    sigma_shape: Shape,
    growth: Growth,
    f: GridFunction,
    h_weight: GridFunction,
}

impl StructuralDataBuilder {
    pub fn alpha0(mut self, alpha0: f64) -> Self {
        self.alpha0 = alpha0;
        self
    }

    /// Coercivity constant; defaults to `min kappa`.
    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    /// Growth constant; defaults to `max(max kappa, alpha0)`.
    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn kappa_constant(mut self, kappa: f64) -> Self {
        self.kappa = vec![kappa; self.grid.n_elements()];
        self
    }

    /// One weight per element (`m + 1` values).
    pub fn kappa_per_element(mut self, kappa: Vec<f64>) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn g_shape(mut self, shape: Shape) -> Self {
        self.g_shape = shape;
        self
    }

    pub fn sigma_shape(mut self, shape: Shape) -> Self {
        self.sigma_shape = shape;
        self
    }

    pub fn growth(mut self, mu: f64, q: f64) -> Self {
        self.growth = Growth { mu, q };
        self
    }

    pub fn source(mut self, f: GridFunction) -> Self {
        self.f = f;
        self
    }

    pub fn source_constant(mut self, f: f64) -> Self {
        self.f = GridFunction::constant(self.grid, f);
        self
    }

    pub fn h_weight(mut self, h: GridFunction) -> Self {
        self.h_weight = h;
        self
    }

    pub fn build(self) -> Result<StructuralData> {
        let dom = |msg: String| Err(Error::Domain(msg));
        if !(self.p > 1.0 && self.p.is_finite()) {
            return dom(format!("p must lie in (1, inf), got {}", self.p));
        }
        if !(self.alpha0 > 0.0) {
            return dom(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if self.kappa.len() != self.grid.n_elements() {
            return Err(Error::GridMismatch {
                expected: self.grid.n_elements(),
                got: self.kappa.len(),
            });
        }
        if let Some(k) = self.kappa.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return dom(format!("kappa must be positive and finite, got {k}"));
        }
        if !(self.growth.mu >= 0.0 && self.growth.q >= 0.0) {
            return dom(format!(
                "growth parameters must be nonnegative, got mu = {}, q = {}",
                self.growth.mu, self.growth.q
            ));
        }
        for (name, field) in [("f", &self.f), ("h_weight", &self.h_weight)] {
            if field.grid() != self.grid {
                return Err(Error::GridMismatch {
                    expected: self.grid.m(),
                    got: field.grid().m(),
                });
            }
            if field.min_value() < 0.0 {
                return dom(format!("{name} must be nonnegative"));
            }
        }
        let kappa_min = self.kappa.iter().copied().fold(f64::INFINITY, f64::min);
        let kappa_max = self.kappa.iter().copied().fold(0.0, f64::max);
        let alpha = self.alpha.unwrap_or(kappa_min);
        let beta = self.beta.unwrap_or(kappa_max.max(self.alpha0));
        if !(alpha > 0.0 && beta > 0.0) {
            return dom(format!("alpha and beta must be positive, got {alpha}, {beta}"));
        }
        Ok(StructuralData {
            grid: self.grid,
            p: self.p,
            alpha,
            beta,
            alpha0: self.alpha0,
            kappa: self.kappa,
            g_shape: self.g_shape,
            sigma_shape: self.sigma_shape,
            growth: self.growth,
            f: self.f,
            h_weight: self.h_weight,
        })
    }
}

impl StructuralData {
    pub fn builder(grid: Grid, p: f64) -> StructuralDataBuilder {
        StructuralDataBuilder {
            grid,
            p,
            alpha: None,
            beta: None,
            alpha0: 1.0,
            kappa: vec![1.0; grid.n_elements()],
            g_shape: Shape::One,
            sigma_shape: Shape::Zero,
            growth: Growth { mu: 0.0, q: 0.0 },
            f: GridFunction::zeros(grid),
            h_weight: GridFunction::zeros(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    /// Conjugate exponent `p / (p - 1)`.
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }
    pub fn g_shape(&self) -> Shape {
        self.g_shape
    }
    pub fn sigma_shape(&self) -> Shape {
        self.sigma_shape
    }
    pub fn growth(&self) -> Growth {
        self.growth
    }
    pub fn source(&self) -> &GridFunction {
        &self.f
    }
    pub fn h_weight(&self) -> &GridFunction {
        &self.h_weight
    }

    /// `true` when `H` does not depend on the gradient.
    pub fn hamiltonian_is_gradient_free(&self) -> bool {
        self.growth.mu == 0.0 || self.sigma_shape == Shape::Zero
    }

    /// Flux on element `e` for gradient `xi`.
    #[inline]
    pub(crate) fn flux(&self, e: usize, xi: f64) -> f64 {
        self.kappa[e] * signed_pow(xi, self.p - 1.0)
    }

    /// Derivative of [`Self::flux`] in `xi`; infinite at `xi = 0` for `p < 2`.
    #[inline]
    pub(crate) fn flux_slope(&self, e: usize, xi: f64) -> f64 {
        let r = self.p - 2.0;
        let mag = if r == 0.0 {
            1.0
        } else if r == 1.0 {
            xi.abs()
        } else if r == 2.0 {
            xi * xi
        } else {
            xi.abs().powf(r)
        };
        self.kappa[e] * (self.p - 1.0) * mag
    }

    #[inline]
    pub(crate) fn zero_order(&self, s: f64) -> f64 {
        self.alpha0 * signed_pow(s, self.p - 1.0)
    }

    #[inline]
    pub(crate) fn zero_order_slope(&self, s: f64) -> f64 {
        let r = self.p - 2.0;
        let mag = if r == 0.0 { 1.0 } else { s.abs().powf(r) };
        self.alpha0 * (self.p - 1.0) * mag
    }

    /// `H` with the source value supplied directly.
    #[inline]
    pub(crate) fn hamiltonian(&self, f_val: f64, s: f64, xi: f64) -> f64 {
        let source = f_val * self.g_shape.eval(s);
        if self.hamiltonian_is_gradient_free() {
            return source;
        }
        let sigma = self.sigma_shape.eval(s);
        source + sigma * self.growth.eval(s.abs()) * abs_pow(xi, self.p)
    }

    /// `(H, dH/ds, dH/dxi)` with the source value supplied directly.
    pub(crate) fn hamiltonian_partials(&self, f_val: f64, s: f64, xi: f64) -> (f64, f64, f64) {
        let g = self.g_shape.eval(s);
        let dg = self.g_shape.derivative(s);
        if self.hamiltonian_is_gradient_free() {
            return (f_val * g, f_val * dg, 0.0);
        }
        let p = self.p;
        let sigma = self.sigma_shape.eval(s);
        let dsigma = self.sigma_shape.derivative(s);
        let t = s.abs();
        let b = self.growth.eval(t);
        let db = self.growth.derivative(t) * if s < 0.0 { -1.0 } else { 1.0 };
        let xi_p = abs_pow(xi, p);
        let value = f_val * g + sigma * b * xi_p;
        let d_s = f_val * dg + (dsigma * b + sigma * db) * xi_p;
        let d_xi = sigma * b * p * signed_pow(xi, p - 1.0);
        (value, d_s, d_xi)
    }

    fn source_at(&self, x: f64) -> f64 {
        self.f.values()[self.grid.nearest_node(x)]
    }

    fn h_at(&self, x: f64) -> f64 {
        self.h_weight.values()[self.grid.nearest_node(x)]
    }

    /// `a(x, s, xi)`; zero at `xi = 0` for every `p`.
    pub fn eval_a(&self, x: f64, _s: f64, xi: f64) -> f64 {
        self.flux(self.grid.element_of(x), xi)
    }

    pub fn eval_a0(&self, _x: f64, s: f64) -> f64 {
        self.zero_order(s)
    }

    /// `H(x, s, xi)`; the source is piecewise constant around the nearest node.
    pub fn eval_h(&self, x: f64, s: f64, xi: f64) -> f64 {
        self.hamiltonian(self.source_at(x), s, xi)
    }

    pub fn eval_hj(&self, j: Truncation, x: f64, s: f64, xi: f64) -> f64 {
        j.apply(self.eval_h(x, s, xi))
    }
}

/// `t exp(lambda t^2)`.
pub fn phi_lambda(t: f64, lambda: f64) -> Result<f64> {
    Ok(t * guarded_exp(t, lambda)?)
}

/// `(1 + 2 lambda t^2) exp(lambda t^2)`.
pub fn phi_lambda_prime(t: f64, lambda: f64) -> Result<f64> {
    Ok((1.0 + 2.0 * lambda * t * t) * guarded_exp(t, lambda)?)
}

fn guarded_exp(t: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let arg = lambda * t * t;
    if !(arg <= EXP_GUARD) {
        return Err(Error::Overflow(format!("lambda t^2 = {arg} exceeds {EXP_GUARD}")));
    }
    Ok(arg.exp())
}

/// Minimum over `ts` of `d phi'(t) - c |phi(t)|` with `lambda = c^2 / (4 d^2)`.
///
/// Samples past the exponent guard are evaluated as
/// `exp(lambda t^2) (d (1 + 2 lambda t^2) - c |t|)`, which rounds to `+inf`
/// whenever the bracket is positive.
pub fn check_phi_inequality(c: f64, d: f64, ts: &[f64]) -> f64 {
    assert!(c > 0.0 && d > 0.0, "c and d must be positive");
    let lambda = c * c / (4.0 * d * d);
    ts.iter()
        .map(|&t| match (phi_lambda(t, lambda), phi_lambda_prime(t, lambda)) {
            (Ok(phi), Ok(dphi)) => d * dphi - c * phi.abs(),
            _ => {
                let bracket = d * (1.0 + 2.0 * lambda * t * t) - c * t.abs();
                if bracket > 0.0 {
                    f64::INFINITY
                } else {
                    bracket * (lambda * t * t).exp()
                }
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// `max{(f_inf / alpha0)^(1/(p-1)), psi_inf}`.
pub fn c_infinity(f_inf: f64, alpha0: f64, p: f64, psi_inf: f64) -> f64 {
    assert!(alpha0 > 0.0 && p > 1.0);
    (f_inf / alpha0).powf(1.0 / (p - 1.0)).max(psi_inf)
}

/// Lower floor for `lambda` in the gradient bound when `b(C_inf)` vanishes.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Right-hand side of the uniform `W^{1,p}` estimate for a given calibration
/// constant `m_const`. `psi_big` is a competitor in `C(psi) ∩ L^inf`.
pub fn w1p_bound_rhs(
    data: &StructuralData,
    f_inf: f64,
    h_norm_pconj: f64,
    c_inf: f64,
    psi_big: &GridFunction,
    m_const: f64,
) -> Result<f64> {
    if !(m_const > 0.0) {
        return Err(Error::Domain(format!("M must be positive, got {m_const}")));
    }
    let p = data.p();
    let b_inf = data.growth().eval(c_inf);
    let lambda = (b_inf * b_inf / (4.0 * data.alpha() * data.alpha())).max(LAMBDA_FLOOR);
    let c_tilde = c_inf + psi_big.norm_linf();
    let exponent = 4.0 * lambda * c_tilde * c_tilde;
    if exponent > EXP_GUARD {
        return Err(Error::Overflow(format!("4 lambda C~^2 = {exponent} exceeds {EXP_GUARD}")));
    }
    let factor = ((1.0 + lambda * c_tilde * c_tilde) * exponent.exp()).powf(p);
    let dpsi = psi_big.norm_w1p(p);
    let c_pow = c_inf.powf(p - 1.0);
    let braces = f_inf + h_norm_pconj + dpsi.powf(p) + dpsi * (h_norm_pconj + c_pow) + c_pow;
    let value = m_const * factor * braces;
    if !value.is_finite() {
        return Err(Error::Overflow("W^{1,p} bound is not finite".into()));
    }
    Ok(value)
}

/// Sampling box of the assumption auditor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRanges {
    pub s_max: f64,
    pub xi_max: f64,
}

impl Default for AuditRanges {
    fn default() -> Self {
        AuditRanges {
            s_max: 10.0,
            xi_max: 10.0,
        }
    }
}

/// One structural inequality of the audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    Coercivity,
    Boundedness,
    Monotonicity,
    ZeroOrderCoercivity,
    ZeroOrderBoundedness,
    HamiltonianGrowth,
}

impl Inequality {
    pub const ALL: [Inequality; 6] = [
        Inequality::Coercivity,
        Inequality::Boundedness,
        Inequality::Monotonicity,
        Inequality::ZeroOrderCoercivity,
        Inequality::ZeroOrderBoundedness,
        Inequality::HamiltonianGrowth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Inequality::Coercivity => "coercivity",
            Inequality::Boundedness => "boundedness",
            Inequality::Monotonicity => "monotonicity",
            Inequality::ZeroOrderCoercivity => "zero_order_coercivity",
            Inequality::ZeroOrderBoundedness => "zero_order_boundedness",
            Inequality::HamiltonianGrowth => "hamiltonian_growth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub inequality: Inequality,
    pub violations: usize,
    /// Smallest observed `lhs - rhs` (the product itself for monotonicity).
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub samples: usize,
    pub checks: Vec<InequalityCheck>,
}

impl AuditReport {
    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn check(&self, inequality: Inequality) -> &InequalityCheck {
        self.checks
            .iter()
            .find(|c| c.inequality == inequality)
            .expect("every inequality is audited")
    }
}

const AUDIT_RTOL: f64 = 1e-12;

/// Samples `(x, s, xi, eta)` and checks the six structural inequalities.
pub fn audit_assumptions(data: &StructuralData, n_samples: usize, seed: u64) -> AuditReport {
    audit_assumptions_in(data, n_samples, seed, AuditRanges::default())
}

pub fn audit_assumptions_in(
    data: &StructuralData,
    n_samples: usize,
    seed: u64,
    ranges: AuditRanges,
) -> AuditReport {
    assert!(n_samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = data.p();
    let mut checks: Vec<InequalityCheck> = Inequality::ALL
        .iter()
        .map(|&inequality| InequalityCheck {
            inequality,
            violations: 0,
            worst_margin: f64::INFINITY,
        })
        .collect();

    fn record(check: &mut InequalityCheck, lhs: f64, rhs: f64) {
        let margin = lhs - rhs;
        check.worst_margin = check.worst_margin.min(margin);
        if margin < -AUDIT_RTOL * (1.0 + lhs.abs() + rhs.abs()) {
            check.violations += 1;
        }
    }

    for _ in 0..n_samples {
        let x: f64 = rng.gen_range(0.0..=1.0);
        let s: f64 = rng.gen_range(-ranges.s_max..=ranges.s_max);
        let xi: f64 = rng.gen_range(-ranges.xi_max..=ranges.xi_max);
        let eta: f64 = rng.gen_range(-ranges.xi_max..=ranges.xi_max);

        let a_xi = data.eval_a(x, s, xi);
        let h = data.h_at(x);
        let s_pow = s.abs().powf(p - 1.0);

        record(&mut checks[0], a_xi * xi, data.alpha() * xi.abs().powf(p));
        record(&mut checks[1], data.beta() * (h + s_pow + xi.abs().powf(p - 1.0)), a_xi.abs());

        if xi != eta {
            let product = (a_xi - data.eval_a(x, s, eta)) * (xi - eta);
            let check = &mut checks[2];
            check.worst_margin = check.worst_margin.min(product);
            if !(product > 0.0) {
                check.violations += 1;
            }
        }

        let a0 = data.eval_a0(x, s);
        record(&mut checks[3], a0 * s, data.alpha0() * s.abs().powf(p));
        record(&mut checks[4], data.beta() * (h + s_pow), a0.abs());

        let bound = data.source_at(x) + data.growth().eval(s.abs()) * xi.abs().powf(p);
        record(&mut checks[5], bound, data.eval_h(x, s, xi).abs());
    }

    AuditReport {
        samples: n_samples,
        checks,
    }
}
