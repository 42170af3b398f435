//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discretization::{Grid, GridFunction};
use crate::error::{Error, Result};
use crate::model::{AuditRanges, Shape, StructuralData, Truncation};
use crate::mosco::{ObstacleKind, ObstacleSequence, Profile, Rate, DEFAULT_STABILITY_THRESHOLD};
use crate::solver::{default_schedule, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Audit,
    Solve,
    Stability,
    Projection,
    PhiCheck,
    OracleCompare,
}

/// A constant or a nodal CSV file (`x,value`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodalField {
    Constant(f64),
    Csv(PathBuf),
}

/// `kappa`: a constant or one value per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaField {
    Constant(f64),
    PerElement(Vec<f64>),
}

/// `offset + amplitude sin(frequency pi x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObstacleField {
    Constant(f64),
    Csv(PathBuf),
    Sinusoid(Sinusoid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateName {
    Harmonic,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleConfig {
    pub kind: ObstacleKind,
    /// Defaults to 0.1 for the oscillation and 0.01 otherwise.
    pub amplitude: Option<f64>,
    pub profile: Option<Profile>,
    pub rate: RateName,
    pub ratio: f64,
    pub n_max: usize,
    pub threshold: f64,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        ObstacleConfig {
            kind: ObstacleKind::Cond2Strong,
            amplitude: None,
            profile: None,
            rate: RateName::Harmonic,
            ratio: 0.5,
            n_max: 32,
            threshold: DEFAULT_STABILITY_THRESHOLD,
        }
    }
}

impl ObstacleConfig {
    fn materialize(&mut self) {
        self.profile.get_or_insert(self.kind.default_profile());
        let amplitude = if self.kind == ObstacleKind::NonconvergingOscillation { 0.1 } else { 0.01 };
        self.amplitude.get_or_insert(amplitude);
    }

    pub fn rate(&self) -> Rate {
        match self.rate {
            RateName::Harmonic => Rate::Harmonic,
            RateName::Geometric => Rate::Geometric { ratio: self.ratio },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_res: f64,
    pub tol_act: f64,
    pub max_sweeps: usize,
    pub damping: f64,
    /// Levels `1, 2, 4, ..., j_max`; ignored when `j_schedule` is given.
    pub j_max: u32,
    /// Explicit finite levels; the untruncated stage is always appended.
    pub j_schedule: Option<Vec<u32>>,
    pub scalar_solver_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            tol_res: d.tol_res,
            tol_act: d.tol_act,
            max_sweeps: d.max_sweeps,
            damping: d.damping,
            j_max: 1024,
            j_schedule: None,
            scalar_solver_tol: d.scalar_solver_tol,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        let j_schedule = match &self.j_schedule {
            Some(levels) => levels
                .iter()
                .map(|&j| Truncation::Level(j))
                .chain(std::iter::once(Truncation::Untruncated))
                .collect(),
            None => default_schedule(self.j_max),
        };
        SolverOptions {
            tol_res: self.tol_res,
            tol_act: self.tol_act,
            max_sweeps: self.max_sweeps,
            damping: self.damping,
            j_schedule,
            scalar_solver_tol: self.scalar_solver_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub samples: usize,
    pub s_max: f64,
    pub xi_max: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        let r = AuditRanges::default();
        AuditConfig {
            samples: 100_000,
            s_max: r.s_max,
            xi_max: r.xi_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhiCheckConfig {
    pub pairs: usize,
    pub samples: usize,
    pub c_max: f64,
    pub d_max: f64,
    pub t_max: f64,
}

impl Default for PhiCheckConfig {
    fn default() -> Self {
        PhiCheckConfig {
            pairs: 100,
            samples: 10_000,
            c_max: 10.0,
            d_max: 10.0,
            t_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub n_probe: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig { n_probe: 100 }
    }
}

fn default_m() -> usize {
    99
}
fn default_out() -> PathBuf {
    PathBuf::from("moscolab-out")
}
fn default_p() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}
fn default_kappa() -> KappaField {
    KappaField::Constant(1.0)
}
fn default_zero_field() -> NodalField {
    NodalField::Constant(0.0)
}
fn default_psi() -> ObstacleField {
    ObstacleField::Constant(-10.0)
}
fn default_g() -> Shape {
    Shape::One
}
fn default_sigma() -> Shape {
    Shape::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_one")]
    pub alpha0: f64,
    /// Coercivity constant; defaults to `min kappa`.
    pub alpha: Option<f64>,
    /// Growth constant; defaults to `max(max kappa, alpha0)`.
    pub beta: Option<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: KappaField,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub q_growth: f64,
    #[serde(default = "default_g")]
    pub g_shape: Shape,
    #[serde(default = "default_sigma")]
    pub sigma_shape: Shape,
    #[serde(default = "default_zero_field")]
    pub f: NodalField,
    #[serde(default = "default_zero_field")]
    pub h_weight: NodalField,
    #[serde(default = "default_psi")]
    pub psi: ObstacleField,
    #[serde(default)]
    pub obstacle: ObstacleConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub phi_check: PhiCheckConfig,
    #[serde(default)]
    pub projection: ProjectionConfig,
    /// Directory relative CSV paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// 1-based line of `key = ...`, inside `[table]` if given.
fn key_line(source: &str, table: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (k, line) in source.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(header) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = Some(header.trim().to_string());
            continue;
        }
        let in_scope = match (table, &current) {
            (None, None) => true,
            (Some(t), Some(c)) => t == c,
            _ => false,
        };
        if !in_scope {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(k + 1);
            }
        }
    }
    None
}

fn invariant(source: &str, table: Option<&str>, key: &str, message: String) -> Error {
    let qualified = match table {
        Some(t) => format!("{t}.{key}"),
        None => key.to_string(),
    };
    match key_line(source, table, key) {
        Some(line) => Error::Config(format!("line {line}: `{qualified}`: {message}")),
        None => Error::Config(format!("`{qualified}`: {message}")),
    }
}

/// Parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&source, &base_dir)
}

/// Parses configuration text; relative CSV paths resolve against `base_dir`.
pub fn parse_config(source: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig =
        toml::from_str(source).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    config.base_dir = base_dir.to_path_buf();
    config.obstacle.materialize();
    config.validate(source)?;
    Ok(config)
}

impl ExperimentConfig {
    fn validate(&self, source: &str) -> Result<()> {
        let top = |key: &str, message: String| invariant(source, None, key, message);
        if self.m == 0 {
            return Err(top("m", "grid needs at least one interior node (m >= 1)".into()));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(top("p", format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.alpha0 > 0.0) {
            return Err(top("alpha0", format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if let KappaField::PerElement(values) = &self.kappa {
            if values.len() != self.m + 1 {
                return Err(top(
                    "kappa",
                    format!("expected m + 1 = {} element values, got {}", self.m + 1, values.len()),
                ));
            }
        }
        for (key, path) in [("f", self.f_path()), ("h_weight", self.h_path()), ("psi", self.psi_path())] {
            if let Some(path) = path {
                if !path.is_file() {
                    return Err(top(key, format!("CSV file {} does not exist", path.display())));
                }
            }
        }
        if let ObstacleField::Sinusoid(s) = &self.psi {
            if ![s.offset, s.amplitude, s.frequency].iter().all(|v| v.is_finite()) {
                return Err(top("psi", "sinusoid parameters must be finite".into()));
            }
        }
        self.solver
            .options()
            .validate()
            .map_err(|e| invariant(source, Some("solver"), "damping", e.to_string()))?;
        let ob = &self.obstacle;
        let obstacle = |key: &str, message: String| invariant(source, Some("obstacle"), key, message);
        if ob.n_max == 0 {
            return Err(obstacle("n_max", "need at least one term".into()));
        }
        if !(ob.threshold > 0.0) {
            return Err(obstacle("threshold", "threshold must be positive".into()));
        }
        if ob.rate == RateName::Geometric && !(ob.ratio > 0.0 && ob.ratio < 1.0) {
            return Err(obstacle("ratio", format!("ratio must lie in (0, 1), got {}", ob.ratio)));
        }
        if ob.kind == ObstacleKind::Cond1Below && ob.amplitude.unwrap_or(0.0) < 0.0 {
            return Err(obstacle("amplitude", "cond1_below needs a nonnegative amplitude".into()));
        }
        match self.kind {
            ExperimentKind::OracleCompare if self.m > crate::solver::ORACLE_MAX_NODES => {
                return Err(top(
                    "m",
                    format!("oracle-compare needs m <= {}", crate::solver::ORACLE_MAX_NODES),
                ));
            }
            ExperimentKind::Audit if self.audit.samples == 0 => {
                return Err(invariant(source, Some("audit"), "samples", "need at least one sample".into()));
            }
            ExperimentKind::PhiCheck => {
                let pc = &self.phi_check;
                let phi = |key: &str, message: String| invariant(source, Some("phi_check"), key, message);
                if pc.pairs == 0 || pc.samples == 0 {
                    return Err(phi("pairs", "pairs and samples must be positive".into()));
                }
                if !(pc.c_max > 0.0 && pc.d_max > 0.0 && pc.t_max > 0.0) {
                    return Err(phi("c_max", "c_max, d_max and t_max must be positive".into()));
                }
            }
            ExperimentKind::Projection if self.projection.n_probe == 0 => {
                return Err(invariant(source, Some("projection"), "n_probe", "need at least one probe".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn f_path(&self) -> Option<PathBuf> {
        match &self.f {
            NodalField::Csv(p) => Some(self.resolve(p)),
            NodalField::Constant(_) => None,
        }
    }

    fn h_path(&self) -> Option<PathBuf> {
        match &self.h_weight {
            NodalField::Csv(p) => Some(self.resolve(p)),
            NodalField::Constant(_) => None,
        }
    }

    fn psi_path(&self) -> Option<PathBuf> {
        match &self.psi {
            ObstacleField::Csv(p) => Some(self.resolve(p)),
            _ => None,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.m)
    }

    fn nodal(&self, field: &NodalField, grid: Grid) -> Result<GridFunction> {
        match field {
            NodalField::Constant(c) => Ok(GridFunction::constant(grid, *c)),
            NodalField::Csv(p) => GridFunction::read_csv(grid, &self.resolve(p)),
        }
    }

    pub fn psi(&self, grid: Grid) -> Result<GridFunction> {
        match &self.psi {
            ObstacleField::Constant(c) => Ok(GridFunction::constant(grid, *c)),
            ObstacleField::Csv(p) => GridFunction::read_csv(grid, &self.resolve(p)),
            ObstacleField::Sinusoid(s) => Ok(GridFunction::from_fn(grid, |x| {
                s.offset + s.amplitude * (s.frequency * std::f64::consts::PI * x).sin()
            })),
        }
    }

    pub fn structural_data(&self) -> Result<StructuralData> {
        let grid = self.grid()?;
        let mut builder = StructuralData::builder(grid, self.p)
            .alpha0(self.alpha0)
            .growth(self.mu, self.q_growth)
            .g_shape(self.g_shape)
            .sigma_shape(self.sigma_shape)
            .source(self.nodal(&self.f, grid)?)
            .h_weight(self.nodal(&self.h_weight, grid)?);
        builder = match &self.kappa {
            KappaField::Constant(k) => builder.kappa_constant(*k),
            KappaField::PerElement(values) => builder.kappa_per_element(values.clone()),
        };
        if let Some(alpha) = self.alpha {
            builder = builder.alpha(alpha);
        }
        if let Some(beta) = self.beta {
            builder = builder.beta(beta);
        }
        builder.build()
    }

    pub fn obstacle_sequence(&self, psi0: GridFunction) -> ObstacleSequence {
        let ob = &self.obstacle;
        let profile = ob.profile.unwrap_or(ob.kind.default_profile());
        let eta = profile.sample(psi0.grid(), ob.amplitude.unwrap_or(0.01));
        ObstacleSequence {
            kind: ob.kind,
            psi0,
            eta,
            rate: ob.rate(),
            n_max: ob.n_max,
        }
    }

    /// TOML text with every default written out.
    pub fn resolved_toml(&self, data: Option<&StructuralData>) -> Result<String> {
        let mut copy = self.clone();
        if let Some(d) = data {
            copy.alpha.get_or_insert(d.alpha());
            copy.beta.get_or_insert(d.beta());
        }
        toml::to_string(&copy).map_err(|e| Error::Internal(format!("cannot serialize config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(text, Path::new("."))
    }

    #[test]
    fn minimal_solve_config_gets_defaults() {
        let c = parse("kind = \"solve\"\nm = 9\np = 2.0\nalpha0 = 1.0\nf = 1.0\npsi = -10.0\n").unwrap();
        assert_eq!(c.kind, ExperimentKind::Solve);
        assert_eq!(c.kappa, KappaField::Constant(1.0));
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.obstacle.amplitude, Some(0.01));
        assert_eq!(c.obstacle.profile, Some(Profile::Hat));
        let d = c.structural_data().unwrap();
        assert_eq!(d.source().values(), &[1.0; 9]);
    }

    #[test]
    fn misspelled_key_is_named() {
        let err = parse("kind = \"solve\"\nalpha_0 = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("alpha_0"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn invariant_errors_carry_lines() {
        let err = parse("kind = \"solve\"\n\nm = 0\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("`m`"), "{err}");
        let err = parse("kind = \"stability\"\n[obstacle]\nn_max = 0\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("obstacle.n_max"), "{err}");
        let err = parse("kind = \"oracle-compare\"\nm = 20\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_kind_and_missing_csv_rejected() {
        assert!(parse("kind = \"bogus\"\n").is_err());
        let err = parse("kind = \"solve\"\nf = \"missing.csv\"\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("missing.csv"), "{err}");
    }

    #[test]
    fn oscillation_defaults() {
        let c = parse("kind = \"stability\"\n[obstacle]\nkind = \"nonconverging_oscillation\"\n").unwrap();
        assert_eq!(c.obstacle.amplitude, Some(0.1));
        assert_eq!(c.obstacle.profile, Some(Profile::Bump));
    }

    #[test]
    fn fields_accept_all_forms() {
        let c = parse(
            "kind = \"solve\"\nm = 2\nkappa = [1.0, 2.0, 3.0]\npsi = { offset = -0.05, amplitude = 0.2, frequency = 2.0 }\n",
        )
        .unwrap();
        assert_eq!(c.kappa, KappaField::PerElement(vec![1.0, 2.0, 3.0]));
        assert!(matches!(c.psi, ObstacleField::Sinusoid(_)));
        let err = parse("kind = \"solve\"\nm = 2\nkappa = [1.0]\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = parse("kind = \"stability\"\nm = 9\nmu = 0.5\nsigma_shape = \"neg_tanh\"\npsi = { offset = -0.05, amplitude = 0.2, frequency = 2.0 }\n[solver]\nj_schedule = [1, 4]\n").unwrap();
        let d = c.structural_data().unwrap();
        let text = c.resolved_toml(Some(&d)).unwrap();
        let again = parse(&text).unwrap();
        assert_eq!(again.alpha, Some(d.alpha()));
        let mut expected = c.clone();
        expected.alpha = Some(d.alpha());
        expected.beta = Some(d.beta());
        assert_eq!(again, expected);
    }
}
