//! Nonlinear filtering on top of the linear solver.
//!
//! Signal `dx = b̂(t,x,y)dt + σ̂(t,x,y)dB̂`, observation
//! `dy = b̃(t,x,y)dt + σ̃(t,y)dB̃`. The unnormalized conditional density
//! solves the Zakai equation
//!
//! ```text
//! du = [∂_i∂_j(a^{ij}u) − ∂_i(b̂^i u)] dt + h^k u dB̄^k,
//! a = σ̂σ̂ᵀ/2,  h = σ̃⁻¹b̃,  dB̄ = σ̃⁻¹dy,
//! ```
//!
//! which is the divergence form `∂_i(a^{ij}∂_j u) + ∂_i(b^i u)` with
//! `b^i = ∂_j a^{ij} − b̂^i`. Normalizing gives the conditional density `π`;
//! the Kushner equation is stepped directly as a cross-check, and particle
//! and Kalman-Bucy oracles give independent references.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::CheckReport;
use crate::error::{Error, Result};
use crate::field::{self, Field, Regularity, ScalarField};
use crate::grid::{DensityField, Grid};
use crate::model::CoefficientSet;
use crate::noise::{self, BrownianPath, NormalStream};
use crate::numerics::pairwise_sum;
use crate::solver::{
    solve_with_sources, OutputSchedule, SeriesPoint, SolverConfig, StepSources, Stepper, Trajectory,
};
use crate::testfn::TestFunction;

/// Determinant floor for `σ̃`.
pub const DET_FLOOR: f64 = 1e-12;
/// Generator id recorded on `B̄` paths reconstructed from observations.
pub const BBAR_GENERATOR_ID: &str = "observation-girsanov";

/// Coefficient families in the joint variable `z = (x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JointFamily {
    Constant {
        value: f64,
    },
    /// `offset + x·slope_x + y·slope_y`
    Affine {
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        x: Vec<f64>,
        #[serde(default)]
        y: Vec<f64>,
    },
    /// `amplitude · sin(wavenumber·x + phase)`
    Sine {
        amplitude: f64,
        wavenumber: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    /// `scale · s²/(1 + s²)` with `s = (|x| − radius)⁺`: vanishes on the
    /// ball of the given radius, C¹ with Lipschitz derivative, bounded.
    Degenerate {
        scale: f64,
        radius: f64,
    },
}

impl JointFamily {
    pub fn constant(value: f64) -> Self {
        JointFamily::Constant { value }
    }

    pub fn linear_x(slope: f64) -> Self {
        JointFamily::Affine {
            offset: 0.0,
            x: vec![slope],
            y: vec![],
        }
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            JointFamily::Constant { value } => *value,
            JointFamily::Affine { offset, x: sx, y: sy } => {
                offset
                    + sx.iter().zip(x).map(|(s, v)| s * v).sum::<f64>()
                    + sy.iter().zip(y).map(|(s, v)| s * v).sum::<f64>()
            }
            JointFamily::Sine {
                amplitude,
                wavenumber,
                phase,
            } => {
                let arg: f64 = wavenumber.iter().zip(x).map(|(k, v)| k * v).sum::<f64>() + phase;
                amplitude * arg.sin()
            }
            JointFamily::Degenerate { scale, radius } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s = (r - radius).max(0.0);
                scale * s * s / (1.0 + s * s)
            }
        }
    }

    /// `∂/∂x_i`.
    pub fn partial_x(&self, x: &[f64], i: usize) -> f64 {
        match self {
            JointFamily::Constant { .. } => 0.0,
            JointFamily::Affine { x: sx, .. } => sx.get(i).copied().unwrap_or(0.0),
            JointFamily::Sine {
                amplitude,
                wavenumber,
                phase,
            } => {
                let arg: f64 = wavenumber.iter().zip(x).map(|(k, v)| k * v).sum::<f64>() + phase;
                amplitude * wavenumber.get(i).copied().unwrap_or(0.0) * arg.cos()
            }
            JointFamily::Degenerate { scale, radius } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s = r - radius;
                if s <= 0.0 || r == 0.0 {
                    return 0.0;
                }
                let q = 1.0 + s * s;
                scale * 2.0 * s / (q * q) * x[i] / r
            }
        }
    }

    pub fn depends_on_x(&self) -> bool {
        match self {
            JointFamily::Constant { .. } => false,
            JointFamily::Affine { x, .. } => x.iter().any(|v| *v != 0.0),
            JointFamily::Sine { amplitude, wavenumber, .. } => {
                *amplitude != 0.0 && wavenumber.iter().any(|v| *v != 0.0)
            }
            JointFamily::Degenerate { scale, .. } => *scale != 0.0,
        }
    }

    pub fn depends_on_y(&self) -> bool {
        matches!(self, JointFamily::Affine { y, .. } if y.iter().any(|v| *v != 0.0))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            JointFamily::Constant { value } => *value == 0.0,
            JointFamily::Affine { offset, x, y } => {
                *offset == 0.0 && x.iter().chain(y).all(|v| *v == 0.0)
            }
            JointFamily::Sine { amplitude, .. } => *amplitude == 0.0,
            JointFamily::Degenerate { scale, .. } => *scale == 0.0,
        }
    }

    fn check(&self, d: usize, d1: usize, path: &str) -> Result<()> {
        let bad = |m: String| {
            Err(Error::Validation {
                path: path.to_string(),
                message: m,
            })
        };
        match self {
            JointFamily::Affine { offset, x, y } => {
                if x.len() > d || y.len() > d1 {
                    return bad(format!("affine slopes longer than ({d}, {d1})"));
                }
                if !offset.is_finite() || x.iter().chain(y).any(|v| !v.is_finite()) {
                    return bad("non-finite affine parameter".into());
                }
            }
            JointFamily::Sine { wavenumber, amplitude, phase } => {
                if wavenumber.len() > d {
                    return bad(format!("wavenumber longer than {d}"));
                }
                if !(amplitude.is_finite() && phase.is_finite()) {
                    return bad("non-finite sine parameter".into());
                }
            }
            JointFamily::Degenerate { scale, radius } => {
                if !(scale.is_finite() && *radius >= 0.0) {
                    return bad("degenerate family needs finite scale and radius >= 0".into());
                }
            }
            JointFamily::Constant { value } => {
                if !value.is_finite() {
                    return bad("non-finite constant".into());
                }
            }
        }
        Ok(())
    }
}

/// Initial law of the signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Prior {
    /// Independent normal coordinates.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Mixture of independent-coordinate Gaussians.
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        stds: Vec<Vec<f64>>,
    },
}

impl Prior {
    fn components(&self) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match self {
            Prior::Gaussian { mean, std } => (vec![1.0], vec![mean.clone()], vec![std.clone()]),
            Prior::Mixture { weights, means, stds } => {
                let total: f64 = weights.iter().sum();
                (
                    weights.iter().map(|w| w / total).collect(),
                    means.clone(),
                    stds.clone(),
                )
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let (w, m, s) = self.components();
        w.iter()
            .zip(m.iter().zip(&s))
            .map(|(w, (m, s))| {
                w * x
                    .iter()
                    .zip(m.iter().zip(s))
                    .map(|(x, (m, s))| {
                        let z = (x - m) / s;
                        (-0.5 * z * z).exp() / (s * (std::f64::consts::TAU).sqrt())
                    })
                    .product::<f64>()
            })
            .sum()
    }

    /// Draws one sample from `stream`.
    pub fn sample(&self, stream: &mut NormalStream) -> Vec<f64> {
        let (w, m, s) = self.components();
        let mut k = 0;
        if w.len() > 1 {
            let u = stream.next_uniform();
            let mut acc = 0.0;
            k = w.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                acc += wi;
                if u < acc {
                    k = i;
                    break;
                }
            }
        }
        m[k].iter().zip(&s[k]).map(|(m, s)| m + s * stream.next_normal()).collect()
    }

    fn check(&self, d: usize) -> Result<()> {
        let (w, m, s) = self.components();
        let ok = !w.is_empty()
            && w.iter().all(|w| *w >= 0.0 && w.is_finite())
            && m.len() == w.len()
            && s.len() == w.len()
            && m.iter().all(|m| m.len() == d && m.iter().all(|v| v.is_finite()))
            && s.iter().all(|s| s.len() == d && s.iter().all(|v| *v > 0.0 && v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::Validation {
                path: "filter.prior".into(),
                message: format!("prior parameters must be finite, positive-width, and {d}-dimensional"),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterScenario {
    pub dim: usize,
    pub obs_dim: usize,
    pub b_hat: Vec<JointFamily>,
    /// `d × d`.
    pub sigma_hat: Vec<Vec<JointFamily>>,
    pub b_tilde: Vec<JointFamily>,
    /// `d1 × d1`, independent of `x`.
    pub sigma_tilde: Vec<Vec<JointFamily>>,
    pub prior: Prior,
    /// Initial observation.
    pub y0: Vec<f64>,
    /// Declared bound/Lipschitz constant `K`.
    pub bound: f64,
}

/// Parameters of the scalar linear-Gaussian model
/// `dx = A x dt + Q dB̂`, `dy = H x dt + R dB̃`, `x₀ ~ N(m₀, P₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussian {
    pub a: f64,
    pub q: f64,
    pub h: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

impl FilterScenario {
    pub fn kalman_bucy(lg: LinearGaussian) -> Self {
        Self {
            dim: 1,
            obs_dim: 1,
            b_hat: vec![JointFamily::linear_x(lg.a)],
            sigma_hat: vec![vec![JointFamily::constant(lg.q)]],
            b_tilde: vec![JointFamily::linear_x(lg.h)],
            sigma_tilde: vec![vec![JointFamily::constant(lg.r)]],
            prior: Prior::Gaussian {
                mean: vec![lg.m0],
                std: vec![lg.p0.sqrt()],
            },
            y0: vec![0.0],
            bound: [lg.a.abs(), lg.q.abs(), lg.h.abs(), lg.r.abs(), 1.0 / lg.r.abs()]
                .into_iter()
                .fold(0.0, f64::max),
        }
    }

    /// The linear-Gaussian parameters, when the families have that form.
    pub fn linear_gaussian(&self) -> Option<LinearGaussian> {
        if self.dim != 1 || self.obs_dim != 1 {
            return None;
        }
        let slope = |f: &JointFamily| match f {
            JointFamily::Affine { offset, x, y } if *offset == 0.0 && y.iter().all(|v| *v == 0.0) => {
                Some(x.first().copied().unwrap_or(0.0))
            }
            JointFamily::Constant { value } if *value == 0.0 => Some(0.0),
            _ => None,
        };
        let constant = |f: &JointFamily| match f {
            JointFamily::Constant { value } => Some(*value),
            _ => None,
        };
        let a = slope(&self.b_hat[0])?;
        let h = slope(&self.b_tilde[0])?;
        let q = constant(&self.sigma_hat[0][0])?;
        let r = constant(&self.sigma_tilde[0][0])?;
        match &self.prior {
            Prior::Gaussian { mean, std } => Some(LinearGaussian {
                a,
                q,
                h,
                r,
                m0: mean[0],
                p0: std[0] * std[0],
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, d1) = (self.dim, self.obs_dim);
        if !(1..=2).contains(&d) || !(1..=2).contains(&d1) {
            return Err(Error::Validation {
                path: "filter.dim".into(),
                message: format!("signal and observation dimensions must be 1 or 2, got ({d}, {d1})"),
            });
        }
        let shape_ok = self.b_hat.len() == d
            && self.sigma_hat.len() == d
            && self.sigma_hat.iter().all(|r| r.len() == d)
            && self.b_tilde.len() == d1
            && self.sigma_tilde.len() == d1
            && self.sigma_tilde.iter().all(|r| r.len() == d1)
            && self.y0.len() == d1;
        if !shape_ok {
            return Err(Error::Validation {
                path: "filter".into(),
                message: format!("coefficient shapes do not match dimensions ({d}, {d1})"),
            });
        }
        for (i, f) in self.b_hat.iter().enumerate() {
            f.check(d, d1, &format!("filter.b_hat[{i}]"))?;
        }
        for (i, f) in self.b_tilde.iter().enumerate() {
            f.check(d, d1, &format!("filter.b_tilde[{i}]"))?;
        }
        for (i, row) in self.sigma_hat.iter().enumerate() {
            for (k, f) in row.iter().enumerate() {
                f.check(d, d1, &format!("filter.sigma_hat[{i}][{k}]"))?;
            }
        }
        for (i, row) in self.sigma_tilde.iter().enumerate() {
            for (k, f) in row.iter().enumerate() {
                let path = format!("filter.sigma_tilde[{i}][{k}]");
                f.check(d, d1, &path)?;
                if f.depends_on_x() {
                    return Err(Error::Validation {
                        path,
                        message: "observation diffusion must not depend on the signal".into(),
                    });
                }
            }
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::Validation {
                path: "filter.bound".into(),
                message: "declared bound K must be positive".into(),
            });
        }
        self.prior.check(d)
    }

    fn sigma_tilde_at(&self, y: &[f64]) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for (i, row) in self.sigma_tilde.iter().enumerate() {
            for (k, f) in row.iter().enumerate() {
                m[i][k] = f.value(&[], y);
            }
        }
        m
    }

    /// `σ̃⁻¹(y)`, failing when `|det σ̃| ≤ 1e-12`.
    pub fn sigma_tilde_inverse(&self, t: f64, y: &[f64]) -> Result<[[f64; 2]; 2]> {
        let m = self.sigma_tilde_at(y);
        invert(m, self.obs_dim).ok_or_else(|| Error::Invertibility {
            t,
            det: det(m, self.obs_dim),
        })
    }

    /// `h = σ̃⁻¹(y) b̃(x, y)`.
    fn h_at(&self, inv: &[[f64; 2]; 2], x: &[f64], y: &[f64]) -> [f64; 2] {
        let d1 = self.obs_dim;
        let mut bt = [0.0; 2];
        for (m, f) in self.b_tilde.iter().enumerate() {
            bt[m] = f.value(x, y);
        }
        let mut h = [0.0; 2];
        for l in 0..d1 {
            h[l] = (0..d1).map(|m| inv[l][m] * bt[m]).sum();
        }
        h
    }

    /// Soft check of `sup |σ̂|, |σ̃|, |σ̃⁻¹|, |b̃|` against the declared `K`
    /// over the given points.
    pub fn bound_report(&self, points: &[Vec<f64>]) -> CheckReport {
        let y = self.y0.clone();
        let mut worst = 0.0f64;
        for x in points {
            for f in self.sigma_hat.iter().flatten().chain(&self.b_tilde) {
                worst = worst.max(f.value(x, &y).abs());
            }
        }
        let st = self.sigma_tilde_at(&y);
        let d1 = self.obs_dim;
        for row in st.iter().take(d1) {
            for v in row.iter().take(d1) {
                worst = worst.max(v.abs());
            }
        }
        if let Some(inv) = invert(st, d1) {
            for row in inv.iter().take(d1) {
                for v in row.iter().take(d1) {
                    worst = worst.max(v.abs());
                }
            }
        }
        CheckReport::new("declared-bound", worst, self.bound)
    }
}

fn det(m: [[f64; 2]; 2], d: usize) -> f64 {
    if d == 1 {
        m[0][0]
    } else {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

fn invert(m: [[f64; 2]; 2], d: usize) -> Option<[[f64; 2]; 2]> {
    let det = det(m, d);
    if !(det.abs() > DET_FLOOR) {
        return None;
    }
    Some(if d == 1 {
        [[1.0 / m[0][0], 0.0], [0.0, 0.0]]
    } else {
        [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ]
    })
}

/// Sampled observation path `y_n`, read piecewise constant from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    pub dt: f64,
    pub dim: usize,
    /// `(n_steps + 1) × dim`, row-major.
    pub values: Vec<f64>,
}

impl ObservationPath {
    pub fn n_steps(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    /// `y` at the last grid time not after `t`.
    pub fn at(&self, t: f64) -> &[f64] {
        let n = ((t / self.dt) + 1e-9).floor().max(0.0) as usize;
        self.row(n.min(self.n_steps()))
    }
}

#[derive(Debug, Clone)]
pub struct TruthRealization {
    pub x_path: Vec<Vec<f64>>,
    pub y_path: Arc<ObservationPath>,
    /// `ΔB̄_n = σ̃⁻¹(y_n) Δy_n`, as a driver path.
    pub bbar: BrownianPath,
    pub seed: u64,
}

impl TruthRealization {
    pub fn dt(&self) -> f64 {
        self.y_path.dt
    }

    pub fn n_steps(&self) -> usize {
        self.y_path.n_steps()
    }

    /// The same realization observed every `k` steps.
    pub fn coarsen(&self, k: usize, sc: &FilterScenario) -> Result<Self> {
        let bbar_dt = self.dt() * k as f64;
        let n = self.n_steps() / k;
        if n * k != self.n_steps() {
            return Err(Error::Argument(format!("{} steps not divisible by {k}", self.n_steps())));
        }
        let d1 = self.y_path.dim;
        let mut values = Vec::with_capacity((n + 1) * d1);
        for m in 0..=n {
            values.extend_from_slice(self.y_path.row(m * k));
        }
        let y_path = Arc::new(ObservationPath {
            dt: bbar_dt,
            dim: d1,
            values,
        });
        let bbar = bbar_from_observations(sc, &y_path, self.seed)?;
        Ok(Self {
            x_path: self.x_path.iter().step_by(k).cloned().collect(),
            y_path,
            bbar,
            seed: self.seed,
        })
    }
}

fn bbar_from_observations(sc: &FilterScenario, y: &ObservationPath, seed: u64) -> Result<BrownianPath> {
    let d1 = y.dim;
    let n = y.n_steps();
    let mut incs = Vec::with_capacity(n * d1);
    for k in 0..n {
        let t = k as f64 * y.dt;
        let inv = sc.sigma_tilde_inverse(t, y.row(k))?;
        let (a, b) = (y.row(k), y.row(k + 1));
        for l in 0..d1 {
            incs.push((0..d1).map(|m| inv[l][m] * (b[m] - a[m])).sum());
        }
    }
    BrownianPath::from_increments(d1, y.dt, &incs, seed, BBAR_GENERATOR_ID)
}

/// Which coefficient of the Zakai operator a [`ZakaiField`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ZakaiPart {
    A(usize, usize),
    B(usize),
    H(usize),
    SigmaHat(usize, usize),
}

#[derive(Debug)]
struct ZakaiField {
    sc: Arc<FilterScenario>,
    y: Arc<ObservationPath>,
    part: ZakaiPart,
    y_dependent: bool,
}

impl ZakaiField {
    fn a(&self, x: &[f64], y: &[f64], i: usize, j: usize) -> f64 {
        let s = &self.sc.sigma_hat;
        0.5 * (0..self.sc.dim).map(|k| s[i][k].value(x, y) * s[j][k].value(x, y)).sum::<f64>()
    }

    /// `∂_j a^{ij}`, analytically from `σ̂` and its x-derivatives.
    fn div_a(&self, x: &[f64], y: &[f64], i: usize) -> f64 {
        let s = &self.sc.sigma_hat;
        let d = self.sc.dim;
        let mut v = 0.0;
        for j in 0..d {
            for k in 0..d {
                v += s[i][k].partial_x(x, j) * s[j][k].value(x, y) + s[i][k].value(x, y) * s[j][k].partial_x(x, j);
            }
        }
        0.5 * v
    }
}

impl ScalarField for ZakaiField {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let y = self.y.at(t);
        match self.part {
            ZakaiPart::A(i, j) => self.a(x, y, i, j),
            ZakaiPart::B(i) => self.div_a(x, y, i) - self.sc.b_hat[i].value(x, y),
            ZakaiPart::H(l) => match self.sc.sigma_tilde_inverse(t, y) {
                Ok(inv) => self.sc.h_at(&inv, x, y)[l],
                Err(_) => f64::NAN,
            },
            ZakaiPart::SigmaHat(i, k) => std::f64::consts::FRAC_1_SQRT_2 * self.sc.sigma_hat[i][k].value(x, y),
        }
    }

    fn regularity(&self) -> Regularity {
        let rough = |f: &JointFamily| matches!(f, JointFamily::Degenerate { .. });
        let sc = &self.sc;
        let any = match self.part {
            ZakaiPart::H(_) => sc.b_tilde.iter().any(rough),
            _ => sc.sigma_hat.iter().flatten().chain(&sc.b_hat).any(rough),
        };
        if any {
            Regularity::Lipschitz
        } else {
            Regularity::Smooth
        }
    }

    fn is_time_invariant(&self) -> bool {
        !self.y_dependent
    }
}

/// The Zakai coefficient set along `y`: `a = σ̂σ̂ᵀ/2`,
/// `b = ∂_j a^{ij} − b̂`, `c = 0`, `σ = 0`, `h = σ̃⁻¹b̃`, no sources. Fields
/// read `y` at the last observation time not after `t`.
pub fn zakai_coefficients(sc: &FilterScenario, y: Arc<ObservationPath>) -> Result<CoefficientSet> {
    sc.validate()?;
    if y.dim != sc.obs_dim {
        return Err(Error::Argument(format!(
            "observation path has dimension {}, scenario expects {}",
            y.dim, sc.obs_dim
        )));
    }
    for n in 0..=y.n_steps() {
        sc.sigma_tilde_inverse(n as f64 * y.dt, y.row(n))?;
    }
    let sc = Arc::new(sc.clone());
    let (d, d1) = (sc.dim, sc.obs_dim);
    let hat_y = sc.sigma_hat.iter().flatten().chain(&sc.b_hat).any(JointFamily::depends_on_y);
    let obs_y = sc.sigma_tilde.iter().flatten().chain(&sc.b_tilde).any(JointFamily::depends_on_y)
        || sc.sigma_tilde.iter().flatten().any(|f| !matches!(f, JointFamily::Constant { .. }));
    let make = |part: ZakaiPart, y_dependent: bool| -> Field {
        Arc::new(ZakaiField {
            sc: sc.clone(),
            y: y.clone(),
            part,
            y_dependent,
        })
    };
    let mut c = CoefficientSet::zero(d, d1);
    for i in 0..d {
        for j in 0..d {
            c.a[i][j] = make(ZakaiPart::A(i, j), hat_y);
        }
        c.b[i] = make(ZakaiPart::B(i), hat_y);
    }
    for l in 0..d1 {
        c.h[l] = make(ZakaiPart::H(l), obs_y);
    }
    c.sigma_hat = Some(
        (0..d)
            .map(|i| (0..d).map(|k| make(ZakaiPart::SigmaHat(i, k), hat_y)).collect())
            .collect(),
    );
    c.c = field::zero();
    Ok(c)
}

/// Euler-Maruyama on the joint system, drivers `0..d` for the signal and
/// `d..d+d1` for the observation, all from `seed`. The initial state is
/// drawn from the prior on a separate stream.
pub fn simulate_truth(
    sc: &FilterScenario,
    seed: u64,
    n_steps: usize,
    dt: f64,
    domain: &Grid,
) -> Result<TruthRealization> {
    sc.validate()?;
    let (d, d1) = (sc.dim, sc.obs_dim);
    let drivers = noise::generate(seed, d + d1, n_steps, dt)?;
    let mut x = sc.prior.sample(&mut NormalStream::new(seed, u64::MAX));
    let mut y = sc.y0.clone();
    let mut x_path = Vec::with_capacity(n_steps + 1);
    let mut y_values = Vec::with_capacity((n_steps + 1) * d1);
    x_path.push(x.clone());
    y_values.extend_from_slice(&y);
    let outside = |x: &[f64]| {
        domain
            .axes()
            .iter()
            .zip(x)
            .any(|(ax, v)| !v.is_finite() || *v < ax.min || *v > ax.max)
    };
    for n in 0..n_steps {
        let t = n as f64 * dt;
        let db = drivers.increments_at(n);
        let mut nx = x.clone();
        for i in 0..d {
            let mut v = sc.b_hat[i].value(&x, &y) * dt;
            for k in 0..d {
                v += sc.sigma_hat[i][k].value(&x, &y) * db[k];
            }
            nx[i] += v;
        }
        let st = sc.sigma_tilde_at(&y);
        if invert(st, d1).is_none() {
            return Err(Error::Invertibility { t, det: det(st, d1) });
        }
        let mut ny = y.clone();
        for m in 0..d1 {
            let mut v = sc.b_tilde[m].value(&x, &y) * dt;
            for k in 0..d1 {
                v += st[m][k] * db[d + k];
            }
            ny[m] += v;
        }
        if outside(&nx) {
            return Err(Error::Scenario(format!(
                "signal left the computational box at step {} (x = {nx:?})",
                n + 1
            )));
        }
        x = nx;
        y = ny;
        x_path.push(x.clone());
        y_values.extend_from_slice(&y);
    }
    let y_path = Arc::new(ObservationPath {
        dt,
        dim: d1,
        values: y_values,
    });
    let bbar = bbar_from_observations(sc, &y_path, seed)?;
    Ok(TruthRealization {
        x_path,
        y_path,
        bbar,
        seed,
    })
}

/// The prior sampled on the grid; fails unless its grid mass is 1 within
/// 1e-10.
pub fn prior_density(sc: &FilterScenario, grid: Arc<Grid>) -> Result<DensityField> {
    let d = grid.dim();
    let values: Vec<f64> = grid.points().map(|p| sc.prior.density(&p[..d])).collect();
    let u = DensityField::new(grid, values, 0, 0.0)?;
    let m = u.mass();
    if (m - 1.0).abs() > 1e-10 {
        return Err(Error::Validation {
            path: "filter.prior".into(),
            message: format!("prior has grid mass {m}; the box or resolution is too small"),
        });
    }
    Ok(u)
}

/// Posterior mean and variance along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub t: f64,
    pub mean: [f64; 2],
    pub var: [f64; 2],
    pub mass: f64,
}

/// Moments of `u/∫u`.
pub fn moments(u: &DensityField) -> Moments {
    let g = &u.grid;
    let d = g.dim();
    let mass = u.mass();
    let mut mean = [0.0; 2];
    let mut var = [0.0; 2];
    for k in 0..d {
        let xs: Vec<f64> = g.points().map(|p| p[k]).collect();
        mean[k] = g.inner(&u.values, &xs) / mass;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean[k]) * (x - mean[k])).collect();
        var[k] = g.inner(&u.values, &sq) / mass;
    }
    Moments {
        t: u.t,
        mean,
        var,
        mass,
    }
}

#[derive(Debug, Clone)]
pub struct ZakaiResult {
    pub u: Trajectory,
    /// `∫u_n` at every step.
    pub mass: Vec<f64>,
    /// Normalized snapshots.
    pub pi: Vec<DensityField>,
    /// `ΔB̌_n = ΔB̄_n − π_n(h) dt`, `n_steps × d1`.
    pub innovation: Vec<Vec<f64>>,
    pub coefficients: CoefficientSet,
}

impl ZakaiResult {
    pub fn moments(&self) -> Vec<Moments> {
        self.pi.iter().map(moments).collect()
    }
}

/// `∫ h^l π` at time `t` for every driver.
fn mean_h(coeffs: &CoefficientSet, grid: &Grid, pi: &[f64], t: f64) -> Vec<f64> {
    coeffs
        .h
        .iter()
        .map(|h| grid.inner(pi, &grid.sample(h.as_ref(), t)))
        .collect()
}

/// Solves the Zakai equation along the truth's `B̄` and normalizes.
pub fn run_zakai(
    sc: &FilterScenario,
    truth: &TruthRealization,
    grid: Arc<Grid>,
    cfg: &SolverConfig,
    schedule: &OutputSchedule,
) -> Result<ZakaiResult> {
    let coeffs = zakai_coefficients(sc, truth.y_path.clone())?;
    let u0 = prior_density(sc, grid.clone())?;
    let dt = cfg.dt;
    let mut innovation = Vec::with_capacity(truth.n_steps());
    let mut failure: Option<Error> = None;
    let mut cb = |n: usize, u: &[f64]| -> Result<StepSources> {
        let m = grid.integrate(u);
        if !(m > 0.0) {
            let e = Error::Degeneracy { step: n, mass: m };
            failure.get_or_insert(Error::Degeneracy { step: n, mass: m });
            return Err(e);
        }
        let t = n as f64 * dt;
        let pi: Vec<f64> = u.iter().map(|v| v / m).collect();
        let ph = mean_h(&coeffs, &grid, &pi, t);
        innovation.push(
            ph.iter()
                .enumerate()
                .map(|(l, p)| truth.bbar.increment(n, l) - p * dt)
                .collect(),
        );
        Ok(StepSources::default())
    };
    let u = solve_with_sources(&coeffs, &u0, cfg, &truth.bbar, schedule, Some(&mut cb))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mass: Vec<f64> = u.series.iter().map(|s| s.mass).collect();
    if let Some((step, &m)) = mass.iter().enumerate().find(|(_, m)| !(**m > 0.0)) {
        return Err(Error::Degeneracy { step, mass: m });
    }
    let pi = u
        .snapshots
        .iter()
        .map(DensityField::normalized)
        .collect::<Result<Vec<_>>>()?;
    Ok(ZakaiResult {
        u,
        mass,
        pi,
        innovation,
        coefficients: coeffs,
    })
}

/// Steps the Kushner equation
/// `dπ = ℒπ dt + (h^k π − π(h^k) π) dB̌^k`, `dB̌ = dB̄ − π(h) dt`, by one
/// Zakai step with source `g^k = −π_n(h^k) π_n` followed by normalization.
pub fn run_kushner(
    sc: &FilterScenario,
    truth: &TruthRealization,
    grid: Arc<Grid>,
    cfg: &SolverConfig,
    schedule: &OutputSchedule,
) -> Result<Trajectory> {
    let coeffs = zakai_coefficients(sc, truth.y_path.clone())?;
    let pi0 = prior_density(sc, grid.clone())?;
    let mut stepper = Stepper::new(&coeffs, grid.clone(), cfg)?;
    let dt = cfg.dt;
    let n_steps = truth.n_steps();
    let keep = schedule.steps(dt, n_steps)?;
    let mut keep_it = keep.iter().peekable();
    let mut pi = pi0.values.clone();
    let mut snapshots = Vec::new();
    let mut series = Vec::with_capacity(n_steps + 1);
    let mut max_edge = grid.boundary_mass_fraction(&pi);
    for n in 0..=n_steps {
        let t = n as f64 * dt;
        series.push(SeriesPoint {
            t,
            mass: grid.integrate(&pi),
            l2: grid.l2_norm(&pi),
            energy_defect: 0.0,
        });
        if keep_it.peek() == Some(&&n) {
            keep_it.next();
            snapshots.push(DensityField::new(grid.clone(), pi.clone(), n, t)?);
        }
        if n == n_steps {
            break;
        }
        let ph = mean_h(&coeffs, &grid, &pi, t);
        let db: Vec<f64> = ph
            .iter()
            .enumerate()
            .map(|(l, p)| truth.bbar.increment(n, l) - p * dt)
            .collect();
        let g: Vec<Vec<f64>> = ph.iter().map(|p| pi.iter().map(|v| -p * v).collect()).collect();
        let src = StepSources { f: None, g: Some(g) };
        let out = stepper.step(&pi, n, &db, Some(&src))?;
        let m = grid.integrate(&out.u);
        if !(m > 0.0) {
            return Err(Error::Degeneracy { step: n + 1, mass: m });
        }
        pi = out.u.into_iter().map(|v| v / m).collect();
        max_edge = max_edge.max(grid.boundary_mass_fraction(&pi));
    }
    Ok(Trajectory {
        grid,
        dt,
        snapshots,
        series,
        max_boundary_fraction: max_edge,
    })
}

/// `sup_t ‖π^{Kushner}_t − π^{Zakai}_t‖₁` over matching snapshots.
pub fn kushner_zakai_gap(kushner: &Trajectory, zakai: &ZakaiResult) -> f64 {
    kushner
        .snapshots
        .iter()
        .zip(&zakai.pi)
        .map(|(a, b)| {
            let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
            a.grid.l1_norm(&diff)
        })
        .fold(0.0, f64::max)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// A function of the signal state for the particle oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Observable {
    One,
    /// `x_axis`
    Coordinate { axis: usize },
    /// `x_axis²`
    Square { axis: usize },
    Test { function: TestFunction },
}

impl Observable {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Observable::One => 1.0,
            Observable::Coordinate { axis } => x[*axis],
            Observable::Square { axis } => x[*axis] * x[*axis],
            Observable::Test { function } => function.value(x),
        }
    }

    /// `∫ u φ` on the grid.
    pub fn pair(&self, u: &DensityField) -> f64 {
        let g = &u.grid;
        let d = g.dim();
        let w: Vec<f64> = g.points().map(|p| self.value(&p[..d])).collect();
        g.inner(&u.values, &w)
    }

    pub fn label(&self) -> String {
        match self {
            Observable::One => "1".into(),
            Observable::Coordinate { axis } => format!("x{axis}"),
            Observable::Square { axis } => format!("x{axis}^2"),
            Observable::Test {
                function: TestFunction::Gaussian { center, width },
            } => format!("gaussian({center:?};{width})"),
            Observable::Test {
                function: TestFunction::Bump { center, radius },
            } => format!("bump({center:?};{radius})"),
        }
    }
}

/// Kallianpur-Striebel estimate of `∫u_Tφ` at the truth's final time:
/// `N` signal paths with fresh drivers under the reference measure, each
/// weighted by `exp(Σ h(x_n)·ΔB̄_n − ½|h(x_n)|² dt)` on the fixed `B̄`.
/// Particle `i` draws from stream `i` of `seed`; sums are pairwise, so the
/// result does not depend on the thread count.
pub fn particle_estimate(
    sc: &FilterScenario,
    truth: &TruthRealization,
    n_particles: usize,
    phis: &[Observable],
    seed: u64,
) -> Result<Vec<Estimate>> {
    if n_particles < 100 {
        return Err(Error::Argument(format!("need at least 100 particles, got {n_particles}")));
    }
    sc.validate()?;
    let (d, d1) = (sc.dim, sc.obs_dim);
    let dt = truth.dt();
    let n_steps = truth.n_steps();
    let y = &truth.y_path;
    let invs: Vec<[[f64; 2]; 2]> = (0..n_steps)
        .map(|n| sc.sigma_tilde_inverse(n as f64 * dt, y.row(n)))
        .collect::<Result<_>>()?;
    let sqdt = dt.sqrt();
    let results: Vec<(Vec<f64>, f64)> = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = NormalStream::new(seed, i as u64);
            let mut x = sc.prior.sample(&mut rng);
            let mut logw = 0.0;
            let mut nx = x.clone();
            for n in 0..n_steps {
                let yn = y.row(n);
                let h = sc.h_at(&invs[n], &x, yn);
                for l in 0..d1 {
                    logw += h[l] * truth.bbar.increment(n, l) - 0.5 * h[l] * h[l] * dt;
                }
                let mut z = [0.0; 2];
                for zk in z.iter_mut().take(d) {
                    *zk = rng.next_normal() * sqdt;
                }
                for i in 0..d {
                    let mut v = sc.b_hat[i].value(&x, yn) * dt;
                    for k in 0..d {
                        v += sc.sigma_hat[i][k].value(&x, yn) * z[k];
                    }
                    nx[i] = x[i] + v;
                }
                std::mem::swap(&mut x, &mut nx);
            }
            (x, logw.exp())
        })
        .collect();
    let n = n_particles as f64;
    Ok(phis
        .iter()
        .map(|phi| {
            let vals: Vec<f64> = results.iter().map(|(x, w)| phi.value(x) * w).collect();
            let mean = pairwise_sum(&vals) / n;
            let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
            let var = pairwise_sum(&sq) / (n - 1.0);
            Estimate {
                value: mean,
                stderr: (var / n).sqrt(),
            }
        })
        .collect())
}

/// Kalman-Bucy mean and variance at every observation time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KalmanSeries {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// `dm = Am dt + (P H/R²)(dy − H m dt)` by Euler on the observation
/// increments and `dP = (2AP + Q² − P²H²/R²) dt` by classical RK4 between
/// them.
pub fn kalman_bucy_oracle(sc: &FilterScenario, truth: &TruthRealization) -> Result<KalmanSeries> {
    let lg = sc
        .linear_gaussian()
        .ok_or_else(|| Error::OracleNotApplicable("scenario is not scalar linear-Gaussian".into()))?;
    Ok(kalman_bucy(&lg, &truth.y_path))
}

pub fn kalman_bucy(lg: &LinearGaussian, y: &ObservationPath) -> KalmanSeries {
    let dt = y.dt;
    let n = y.n_steps();
    let r2 = lg.r * lg.r;
    let rhs = |p: f64| 2.0 * lg.a * p + lg.q * lg.q - p * p * lg.h * lg.h / r2;
    let mut out = KalmanSeries {
        t: Vec::with_capacity(n + 1),
        mean: Vec::with_capacity(n + 1),
        var: Vec::with_capacity(n + 1),
    };
    let (mut m, mut p) = (lg.m0, lg.p0);
    for k in 0..=n {
        out.t.push(k as f64 * dt);
        out.mean.push(m);
        out.var.push(p);
        if k == n {
            break;
        }
        let dy = y.row(k + 1)[0] - y.row(k)[0];
        m += lg.a * m * dt + p * lg.h / r2 * (dy - lg.h * m * dt);
        let k1 = rhs(p);
        let k2 = rhs(p + 0.5 * dt * k1);
        let k3 = rhs(p + 0.5 * dt * k2);
        let k4 = rhs(p + dt * k3);
        p += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb() -> FilterScenario {
        FilterScenario::kalman_bucy(LinearGaussian {
            a: -0.5,
            q: 1.0,
            h: 1.0,
            r: 1.0,
            m0: 0.0,
            p0: 1.0,
        })
    }

    fn box1(n: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform_1d(-10.0, 10.0, n).unwrap())
    }

    #[test]
    fn zakai_coefficient_examples() {
        let mut sc = kb();
        sc.b_hat = vec![JointFamily::Sine {
            amplitude: 0.3,
            wavenumber: vec![1.0],
            phase: 0.0,
        }];
        sc.sigma_tilde = vec![vec![JointFamily::constant(2.0)]];
        let y = Arc::new(ObservationPath {
            dt: 0.1,
            dim: 1,
            values: vec![0.0, 0.1],
        });
        let c = zakai_coefficients(&sc, y.clone()).unwrap();
        let x = [0.7];
        assert_eq!(c.a[0][0].value(0.0, &x), 0.5);
        assert!((c.b[0].value(0.0, &x) + 0.3 * 0.7f64.sin()).abs() < 1e-15);
        assert!((c.h[0].value(0.0, &x) - 0.35).abs() < 1e-15);
        assert!(c.is_time_invariant());

        sc.sigma_hat = vec![vec![JointFamily::linear_x(1.0)]];
        let c = zakai_coefficients(&sc, y.clone()).unwrap();
        assert!((c.a[0][0].value(0.0, &x) - 0.245).abs() < 1e-15);
        // b = ∂a − b̂ = x − b̂
        assert!((c.b[0].value(0.0, &x) - (0.7 - 0.3 * 0.7f64.sin())).abs() < 1e-15);

        sc.sigma_tilde = vec![vec![JointFamily::constant(1e-13)]];
        assert!(matches!(zakai_coefficients(&sc, y), Err(Error::Invertibility { .. })));
    }

    #[test]
    fn truth_bookkeeping() {
        let g = box1(64);
        let mut sc = kb();
        sc.b_tilde = vec![JointFamily::constant(0.0)];
        let tr = simulate_truth(&sc, 5, 200, 1e-2, &g).unwrap();
        let raw = noise::generate(5, 2, 200, 1e-2).unwrap();
        for n in 0..200 {
            assert!((tr.bbar.increment(n, 0) - raw.increment(n, 1)).abs() < 1e-15);
        }
        // Δy = σ̃ΔB̄ rebuilds the observations
        let mut y = tr.y_path.row(0)[0];
        for n in 0..200 {
            y += tr.bbar.increment(n, 0);
            assert!((y - tr.y_path.row(n + 1)[0]).abs() < 1e-12);
        }

        let mut frozen = kb();
        frozen.b_hat = vec![JointFamily::constant(0.0)];
        frozen.sigma_hat = vec![vec![JointFamily::constant(0.0)]];
        let tr = simulate_truth(&frozen, 1, 50, 1e-2, &g).unwrap();
        assert!(tr.x_path.iter().all(|x| x == &tr.x_path[0]));
    }

    #[test]
    fn ou_mean_matches_moments() {
        let g = box1(64);
        let mut sc = kb();
        sc.prior = Prior::Gaussian {
            mean: vec![2.0],
            std: vec![0.5],
        };
        let (n, dt) = (50, 0.02);
        let xs: Vec<f64> = (0..10_000u64)
            .map(|s| simulate_truth(&sc, s, n, dt, &g).unwrap().x_path[n][0])
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let exact = (-0.5f64 * 1.0).exp() * 2.0;
        assert!((mean - exact).abs() < 3.0 * (var / xs.len() as f64).sqrt(), "{mean} {exact}");
    }

    #[test]
    fn kalman_riccati_closed_forms() {
        let y = ObservationPath {
            dt: 1e-3,
            dim: 1,
            values: vec![0.0; 3001],
        };
        let lg = LinearGaussian {
            a: 0.0,
            q: 0.0,
            h: 1.0,
            r: 1.0,
            m0: 0.0,
            p0: 1.0,
        };
        let s = kalman_bucy(&lg, &y);
        for (t, p) in s.t.iter().zip(&s.var) {
            assert!((p - 1.0 / (1.0 + t)).abs() < 1e-12);
        }
        let lg = LinearGaussian {
            a: -0.5,
            q: 1.0,
            h: 1.0,
            r: 1.0,
            m0: 0.0,
            p0: 1.0,
        };
        let s = kalman_bucy(&lg, &y);
        let p_inf = (5f64.sqrt() - 1.0) / 2.0;
        assert!((s.var.last().unwrap() - p_inf).abs() < 1e-3);
        let lg = LinearGaussian { h: 0.0, ..lg };
        let s = kalman_bucy(&lg, &y);
        // dP = 2AP + Q² from P₀ = 1 with A = −½ stays at 1
        assert!(s.var.iter().all(|p| (p - 1.0).abs() < 1e-12));
        let mut nl = kb();
        nl.b_hat = vec![JointFamily::Sine {
            amplitude: 1.0,
            wavenumber: vec![1.0],
            phase: 0.0,
        }];
        let g = box1(64);
        let tr = simulate_truth(&nl, 0, 10, 1e-2, &g).unwrap();
        assert!(matches!(kalman_bucy_oracle(&nl, &tr), Err(Error::OracleNotApplicable(_))));
    }

    #[test]
    fn zero_observation_drift_gives_fokker_planck() {
        let g = box1(256);
        let mut sc = kb();
        sc.b_tilde = vec![JointFamily::constant(0.0)];
        let tr = simulate_truth(&sc, 2, 100, 1e-3, &g).unwrap();
        let cfg = SolverConfig::new(1e-3).unwrap();
        let z = run_zakai(&sc, &tr, g.clone(), &cfg, &OutputSchedule::Stride(10)).unwrap();
        for m in &z.mass {
            assert!((m - z.mass[0]).abs() <= 1e-12);
        }
        for p in &z.pi {
            assert!((p.mass() - 1.0).abs() < 1e-10);
        }
        let k = run_kushner(&sc, &tr, g, &cfg, &OutputSchedule::Stride(10)).unwrap();
        assert!(kushner_zakai_gap(&k, &z) < 1e-12);
    }

    #[test]
    fn particles_without_observation_drift() {
        let g = box1(64);
        let mut sc = kb();
        sc.b_tilde = vec![JointFamily::constant(0.0)];
        let tr = simulate_truth(&sc, 3, 20, 1e-2, &g).unwrap();
        let est = particle_estimate(&sc, &tr, 1000, &[Observable::One, Observable::Coordinate { axis: 0 }], 11).unwrap();
        assert_eq!(est[0].value, 1.0);
        assert_eq!(est[0].stderr, 0.0);
        let again = particle_estimate(&sc, &tr, 1000, &[Observable::Coordinate { axis: 0 }], 11).unwrap();
        assert_eq!(again[0], est[1]);
        assert!(particle_estimate(&sc, &tr, 99, &[Observable::One], 1).is_err());
    }

    #[test]
    fn kushner_tracks_zakai() {
        let g = box1(256);
        let sc = kb();
        let tr = simulate_truth(&sc, 4, 400, 1e-3, &g).unwrap();
        let cfg = SolverConfig::new(1e-3).unwrap();
        let z = run_zakai(&sc, &tr, g.clone(), &cfg, &OutputSchedule::Stride(50)).unwrap();
        let k = run_kushner(&sc, &tr, g, &cfg, &OutputSchedule::Stride(50)).unwrap();
        let gap = kushner_zakai_gap(&k, &z);
        assert!(gap < 0.05, "{gap}");
        for s in &k.snapshots {
            assert!((s.mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_mass_check() {
        let sc = kb();
        assert!(prior_density(&sc, box1(256)).is_ok());
        let small = Arc::new(Grid::uniform_1d(-2.0, 2.0, 64).unwrap());
        assert!(matches!(prior_density(&sc, small), Err(Error::Validation { .. })));
    }
}
