//! Uniform 1-D grid on (0, 1) with homogeneous Dirichlet boundary, nodal
//! functions on the interior nodes, and the discrete norms used throughout.
//!
//! Gradients are constant per element (one-point quadrature); zero-order
//! quantities use lumped nodal quadrature with weight `h`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Uniform partition of (0, 1) with `m` interior nodes `x_i = i h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    m: usize,
    h: f64,
}

impl Grid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("grid needs at least one interior node".into()));
        }
        let h = 1.0 / (m as f64 + 1.0);
        debug_assert!(((m as f64 + 1.0) * h - 1.0).abs() <= 1e-14);
        Ok(Grid { m, h })
    }

    /// Number of interior nodes.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of elements, `m + 1`.
    pub fn n_elements(&self) -> usize {
        self.m + 1
    }

    /// Coordinate of interior node `i` (0-based, so node `i` sits at `(i+1) h`).
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.h
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(|i| self.node(i))
    }

    /// Midpoint of element `e` (0-based, element `e` spans `[e h, (e+1) h]`).
    pub fn element_midpoint(&self, e: usize) -> f64 {
        (e as f64 + 0.5) * self.h
    }

    /// Element containing `x`; points on an interface go to the right element,
    /// `x = 1` to the last one.
    pub fn element_of(&self, x: f64) -> usize {
        let e = (x / self.h).floor();
        if e <= 0.0 {
            0
        } else {
            (e as usize).min(self.m)
        }
    }

    /// Interior node nearest to `x`, clamped to the interior.
    pub fn nearest_node(&self, x: f64) -> usize {
        let k = (x / self.h).round();
        if k <= 1.0 {
            0
        } else {
            (k as usize - 1).min(self.m - 1)
        }
    }
}

/// Nodal values at the interior nodes of a [`Grid`]; boundary values are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.m() {
            return Err(Error::GridMismatch {
                expected: grid.m(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite nodal value at node {i}")));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        GridFunction {
            grid,
            values: vec![c; grid.m()],
        }
    }

    /// Samples `f` at the interior nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            grid,
            values: grid.nodes().map(f).collect(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value with the boundary convention: nodes `-1` and `m` are zero.
    #[inline]
    pub(crate) fn padded(&self, k: isize) -> f64 {
        if k < 0 || k as usize >= self.values.len() {
            0.0
        } else {
            self.values[k as usize]
        }
    }

    /// Sup norm over interior nodes.
    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Per-element difference quotients, `m + 1` of them.
    pub fn element_gradients(&self) -> Vec<f64> {
        let h = self.grid.h();
        (0..self.grid.n_elements())
            .map(|e| {
                let left = self.padded(e as isize - 1);
                let right = self.padded(e as isize);
                (right - left) / h
            })
            .collect()
    }

    /// Gradient seminorm `(sum_e h |g_e|^p)^(1/p)`, the W_0^{1,p} norm.
    pub fn norm_w1p(&self, p: f64) -> f64 {
        assert!(p > 1.0, "W^{{1,p}} norm needs p > 1, got {p}");
        let h = self.grid.h();
        let sum: f64 = self
            .element_gradients()
            .iter()
            .map(|g| h * g.abs().powf(p))
            .sum();
        sum.powf(1.0 / p)
    }

    /// Lumped `L^p` norm `(sum_i h |v_i|^p)^(1/p)`.
    pub fn norm_lp(&self, p: f64) -> f64 {
        assert!(p >= 1.0, "L^p norm needs p >= 1, got {p}");
        let h = self.grid.h();
        let sum: f64 = self.values.iter().map(|v| h * v.abs().powf(p)).sum();
        sum.powf(1.0 / p)
    }

    /// Lumped integral `sum_i h v_i`.
    pub fn integral(&self) -> f64 {
        self.grid.h() * self.values.iter().sum::<f64>()
    }

    /// Nodewise clamp to `[-lambda, lambda]`.
    pub fn truncate(&self, lambda: f64) -> GridFunction {
        assert!(lambda >= 0.0, "truncation level must be nonnegative");
        self.map(|v| v.clamp(-lambda, lambda))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        assert_eq!(self.grid.m(), other.grid.m(), "grid functions live on different grids");
        GridFunction {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    pub fn max_with(&self, other: &GridFunction) -> GridFunction {
        self.zip_with(other, f64::max)
    }

    /// True if `self >= other` at every node.
    pub fn dominates(&self, other: &GridFunction) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| a >= b)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV text with header `x,value`, 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x,value\n");
        for (x, v) in self.grid.nodes().zip(&self.values) {
            let _ = writeln!(out, "{},{}", fmt_f64(x), fmt_f64(*v));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads a `x,value` CSV; rows must be the interior nodes of `grid` in order.
    pub fn read_csv(grid: Grid, path: &Path) -> Result<GridFunction> {
        let csv_err = |message: String| Error::Csv {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "value"] {
            return Err(csv_err(format!("expected header `x,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut values = Vec::with_capacity(grid.m());
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| csv_err(e.to_string()))?;
            let parse = |k: usize| -> Result<f64> {
                record
                    .get(k)
                    .ok_or_else(|| csv_err(format!("row {}: missing column {k}", row + 2)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| csv_err(format!("row {}: {e}", row + 2)))
            };
            let x = parse(0)?;
            if row < grid.m() && (x - grid.node(row)).abs() > 1e-9 {
                return Err(csv_err(format!(
                    "row {}: x = {x} does not match node {}",
                    row + 2,
                    grid.node(row)
                )));
            }
            values.push(parse(1)?);
        }
        GridFunction::new(grid, values)
    }
}

/// Round-trip formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
