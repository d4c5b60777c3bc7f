//! Uniform cell-centred lattices and sampled solution fields.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::numerics::compensated_sum;

pub const MIN_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    ZeroFlux,
    ZeroValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.spacing()
    }
}

/// Cell-centred lattice in one or two dimensions. Points are
/// `x_i = x_min + (i + ½) h`; the flat index runs fastest along axis 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
    boundary: Boundary,
}

impl Grid {
    pub fn new(axes: Vec<Axis>, boundary: Boundary) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Validation {
                path: "grid.dim".into(),
                message: format!("dimension must be 1 or 2, got {}", axes.len()),
            });
        }
        for (k, ax) in axes.iter().enumerate() {
            if ax.n < MIN_CELLS {
                return Err(Error::Validation {
                    path: format!("grid.n[{k}]"),
                    message: format!("need n >= {MIN_CELLS}, got {}", ax.n),
                });
            }
            if !(ax.max > ax.min) || !ax.min.is_finite() || !ax.max.is_finite() {
                return Err(Error::Validation {
                    path: format!("grid.x_max[{k}]"),
                    message: "x_max must exceed x_min".into(),
                });
            }
        }
        Ok(Self { axes, boundary })
    }

    pub fn uniform_1d(min: f64, max: f64, n: usize) -> Result<Self> {
        Self::new(vec![Axis { min, max, n }], Boundary::ZeroFlux)
    }

    pub fn uniform_2d(min: f64, max: f64, n: usize) -> Result<Self> {
        let ax = Axis { min, max, n };
        Self::new(vec![ax, ax], Boundary::ZeroFlux)
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    /// Same extent, `n` multiplied by `factor` along every axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let axes = self
            .axes
            .iter()
            .map(|a| Axis {
                n: a.n * factor,
                ..*a
            })
            .collect();
        Self::new(axes, self.boundary)
    }

    /// Same extent, `n` divided by `factor` along every axis.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if self.axes.iter().any(|a| a.n % factor != 0) {
            return Err(Error::Argument(format!("factor {factor} does not divide n")));
        }
        let axes = self
            .axes
            .iter()
            .map(|a| Axis {
                n: a.n / factor,
                ..*a
            })
            .collect();
        Self::new(axes, self.boundary)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, k: usize) -> f64 {
        self.axes[k].spacing()
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Stride of axis `k` in the flat index.
    pub fn stride(&self, k: usize) -> usize {
        self.axes[..k].iter().map(|a| a.n).product()
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n0 = self.axes[0].n;
        [idx % n0, idx / n0]
    }

    pub fn flat(&self, mi: [usize; 2]) -> usize {
        mi[0] + self.axes[0].n * mi[1]
    }

    /// Coordinates of point `idx`; only the first `dim()` entries are used.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let mut p = [0.0; 2];
        for (k, ax) in self.axes.iter().enumerate() {
            p[k] = ax.center(mi[k]);
        }
        p
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Samples `field` at every grid point.
    pub fn sample(&self, field: &dyn ScalarField, t: f64) -> Vec<f64> {
        let d = self.dim();
        self.points().map(|p| field.value(t, &p[..d])).collect()
    }

    /// `h^d Σ v` with compensated summation.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.cell_volume() * compensated_sum(values.iter().copied())
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_volume() * compensated_sum(a.iter().zip(b).map(|(a, b)| a * b))
    }

    pub fn l1_norm(&self, values: &[f64]) -> f64 {
        self.cell_volume() * compensated_sum(values.iter().map(|v| v.abs()))
    }

    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        self.inner(values, values).sqrt()
    }

    /// Distance from point `idx` to the nearest boundary face.
    pub fn distance_to_boundary(&self, idx: usize) -> f64 {
        let p = self.point(idx);
        self.axes
            .iter()
            .enumerate()
            .map(|(k, a)| (p[k] - a.min).min(a.max - p[k]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Mass fraction carried by the outermost layer of cells.
    pub fn boundary_mass_fraction(&self, values: &[f64]) -> f64 {
        let total = self.l1_norm(values);
        if total == 0.0 {
            return 0.0;
        }
        let edge: f64 = (0..self.len())
            .filter(|&i| {
                let mi = self.multi_index(i);
                self.axes
                    .iter()
                    .enumerate()
                    .any(|(k, a)| mi[k] == 0 || mi[k] + 1 == a.n)
            })
            .map(|i| values[i].abs())
            .sum();
        edge * self.cell_volume() / total
    }
}

/// A sample of the solution on a grid at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub time_index: usize,
    pub t: f64,
}

impl DensityField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, time_index: usize, t: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Argument(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let p = grid.point(i);
            return Err(Error::Evaluation {
                field: "u".into(),
                t,
                x: p[..grid.dim()].to_vec(),
            });
        }
        Ok(Self {
            grid,
            values,
            time_index,
            t,
        })
    }

    pub fn from_field(grid: Arc<Grid>, field: &dyn ScalarField) -> Result<Self> {
        let values = grid.sample(field, 0.0);
        Self::new(grid, values, 0, 0.0)
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn l1(&self) -> f64 {
        self.grid.l1_norm(&self.values)
    }

    pub fn l2(&self) -> f64 {
        self.grid.l2_norm(&self.values)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Divides by the mass. Fails on non-positive mass. A field whose mass is
    /// already 1 to within rounding is returned unchanged, which makes the
    /// operation idempotent bit for bit.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::Degeneracy {
                step: self.time_index,
                mass: m,
            });
        }
        let mut out = self.clone();
        if (m - 1.0).abs() > 8.0 * f64::EPSILON {
            out.values.iter_mut().for_each(|v| *v /= m);
        }
        Ok(out)
    }
}
