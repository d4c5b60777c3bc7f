//! Scalar fields of `(t, x)`.
//!
//! Every coefficient, source, initial condition and test profile in the crate
//! is a [`ScalarField`]. Scenario files select from the serializable
//! [`Family`] catalogue; code that needs composites (products, closures over a
//! realized observation path) builds them from the same trait.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared handle to an immutable field.
pub type Field = Arc<dyn ScalarField>;

/// Weak regularity class of a field, used to gate commutator hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Regularity {
    Discontinuous,
    Lipschitz,
    Smooth,
}

impl Regularity {
    pub fn is_weakly_differentiable(self) -> bool {
        self >= Regularity::Lipschitz
    }
}

pub trait ScalarField: Send + Sync + fmt::Debug {
    fn value(&self, t: f64, x: &[f64]) -> f64;

    /// Partial derivative along `axis`. Defaults to a fourth-order central
    /// difference.
    fn partial(&self, t: f64, x: &[f64], axis: usize) -> f64 {
        central_difference(|y| self.value(t, y), x, axis)
    }

    fn regularity(&self) -> Regularity {
        Regularity::Smooth
    }

    /// Coordinates along `axis` inside `(lo, hi)` where the field or its
    /// derivative jumps.
    fn kinks(&self, _axis: usize, _lo: f64, _hi: f64) -> Vec<f64> {
        Vec::new()
    }

    fn is_time_invariant(&self) -> bool {
        false
    }

    fn is_zero(&self) -> bool {
        false
    }
}

const FD_STEP: f64 = 1e-3;

/// Fourth-order central difference of `f` along `axis` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], axis: usize) -> f64 {
    let mut y = x.to_vec();
    let base = x[axis];
    let delta = FD_STEP * base.abs().max(1.0);
    let mut eval = |s: f64| {
        y[axis] = base + s * delta;
        f(&y)
    };
    let (p2, p1, m1, m2) = (eval(2.0), eval(1.0), eval(-1.0), eval(-2.0));
    (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * delta)
}

/// Built-in parametric field families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    Constant {
        value: f64,
    },
    /// `offset + slope · x`
    Affine {
        #[serde(default)]
        offset: f64,
        slope: Vec<f64>,
    },
    /// `offset + amplitude · sin(wavenumber · x + omega · t + phase)`
    Sinusoidal {
        amplitude: f64,
        wavenumber: Vec<f64>,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        omega: f64,
    },
    /// Linear interpolation through `knots` along one axis. Extrapolates with
    /// the end slopes, or repeats the knot pattern when `period` is set.
    PiecewiseLinear {
        #[serde(default)]
        axis: usize,
        knots: Vec<[f64; 2]>,
        #[serde(default)]
        period: Option<f64>,
    },
    /// `amplitude · exp(-|x - center|² / (2 width²))`
    GaussianBump {
        #[serde(default = "one")]
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    Step {
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        location: f64,
        #[serde(default)]
        left: f64,
        #[serde(default = "one")]
        right: f64,
    },
    /// `Σ_k coefficients[k] · x_axis^k`
    Polynomial {
        #[serde(default)]
        axis: usize,
        coefficients: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl Family {
    pub fn zero() -> Self {
        Family::Constant { value: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        Family::Constant { value }
    }

    pub fn into_field(self) -> Field {
        Arc::new(self)
    }

    /// Checks the parameters against the point dimension the field will be
    /// evaluated on.
    pub fn check(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            Family::Constant { .. } => Ok(()),
            Family::Affine { slope, .. } if slope.len() != dim => {
                bad(format!("affine slope has {} entries, expected {dim}", slope.len()))
            }
            Family::Sinusoidal { wavenumber, .. } if wavenumber.len() != dim => bad(format!(
                "sinusoidal wavenumber has {} entries, expected {dim}",
                wavenumber.len()
            )),
            Family::GaussianBump { center, width, .. } => {
                if center.len() != dim {
                    bad(format!("gaussian center has {} entries, expected {dim}", center.len()))
                } else if !(*width > 0.0) {
                    bad("gaussian width must be positive".into())
                } else {
                    Ok(())
                }
            }
            Family::PiecewiseLinear { axis, knots, period } => {
                if *axis >= dim {
                    return bad(format!("axis {axis} out of range for dimension {dim}"));
                }
                if knots.len() < 2 {
                    return bad("piecewise-linear needs at least two knots".into());
                }
                if knots.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return bad("piecewise-linear knots must be strictly increasing".into());
                }
                if let Some(p) = period {
                    let span = knots[knots.len() - 1][0] - knots[0][0];
                    if !(*p > 0.0) || (span - p).abs() > 1e-12 * p.max(1.0) {
                        return bad("periodic knots must span exactly one period".into());
                    }
                }
                Ok(())
            }
            Family::Step { axis, .. } | Family::Polynomial { axis, .. } if *axis >= dim => {
                bad(format!("axis {axis} out of range for dimension {dim}"))
            }
            _ => Ok(()),
        }
    }

    pub fn depends_on_axis(&self, k: usize) -> bool {
        match self {
            Family::Constant { .. } => false,
            Family::Affine { slope, .. } => slope.get(k).is_some_and(|s| *s != 0.0),
            Family::Sinusoidal {
                amplitude,
                wavenumber,
                ..
            } => *amplitude != 0.0 && wavenumber.get(k).is_some_and(|w| *w != 0.0),
            Family::GaussianBump { amplitude, .. } => *amplitude != 0.0,
            Family::PiecewiseLinear { axis, .. }
            | Family::Step { axis, .. }
            | Family::Polynomial { axis, .. } => *axis == k,
        }
    }

    fn reduce_periodic(knots: &[[f64; 2]], period: Option<f64>, s: f64) -> f64 {
        match period {
            Some(p) => {
                let x0 = knots[0][0];
                x0 + (s - x0).rem_euclid(p)
            }
            None => s,
        }
    }

    fn segment(knots: &[[f64; 2]], s: f64) -> usize {
        let last = knots.len() - 2;
        match knots.iter().position(|k| k[0] > s) {
            Some(0) => 0,
            Some(i) => (i - 1).min(last),
            None => last,
        }
    }
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(a, x)| a * x).sum()
}

impl ScalarField for Family {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Family::Constant { value } => *value,
            Family::Affine { offset, slope } => offset + dot(slope, x),
            Family::Sinusoidal {
                amplitude,
                wavenumber,
                phase,
                offset,
                omega,
            } => offset + amplitude * (dot(wavenumber, x) + omega * t + phase).sin(),
            Family::PiecewiseLinear {
                axis,
                knots,
                period,
            } => {
                let s = Self::reduce_periodic(knots, *period, x[*axis]);
                let i = Self::segment(knots, s);
                let ([x0, y0], [x1, y1]) = (knots[i], knots[i + 1]);
                y0 + (y1 - y0) * (s - x0) / (x1 - x0)
            }
            Family::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = x.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            Family::Step {
                axis,
                location,
                left,
                right,
            } => {
                let s = x[*axis];
                if s < *location {
                    *left
                } else if s > *location {
                    *right
                } else {
                    0.5 * (left + right)
                }
            }
            Family::Polynomial { axis, coefficients } => {
                let s = x[*axis];
                coefficients.iter().rev().fold(0.0, |acc, c| acc * s + c)
            }
        }
    }

    fn partial(&self, t: f64, x: &[f64], k: usize) -> f64 {
        match self {
            Family::Constant { .. } | Family::Step { .. } => 0.0,
            Family::Affine { slope, .. } => slope.get(k).copied().unwrap_or(0.0),
            Family::Sinusoidal {
                amplitude,
                wavenumber,
                phase,
                omega,
                ..
            } => {
                let w = wavenumber.get(k).copied().unwrap_or(0.0);
                amplitude * w * (dot(wavenumber, x) + omega * t + phase).cos()
            }
            Family::PiecewiseLinear {
                axis,
                knots,
                period,
            } => {
                if k != *axis {
                    return 0.0;
                }
                let s = Self::reduce_periodic(knots, *period, x[*axis]);
                let i = Self::segment(knots, s);
                (knots[i + 1][1] - knots[i][1]) / (knots[i + 1][0] - knots[i][0])
            }
            Family::GaussianBump { center, width, .. } => {
                -(x[k] - center[k]) / (width * width) * self.value(t, x)
            }
            Family::Polynomial { axis, coefficients } => {
                if k != *axis {
                    return 0.0;
                }
                let s = x[*axis];
                coefficients
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (p, c)| acc * s + p as f64 * c)
            }
        }
    }

    fn regularity(&self) -> Regularity {
        match self {
            Family::Step { left, right, .. } if left != right => Regularity::Discontinuous,
            Family::PiecewiseLinear { .. } => Regularity::Lipschitz,
            _ => Regularity::Smooth,
        }
    }

    fn kinks(&self, k: usize, lo: f64, hi: f64) -> Vec<f64> {
        match self {
            Family::Step { axis, location, .. } if *axis == k => {
                if *location > lo && *location < hi {
                    vec![*location]
                } else {
                    Vec::new()
                }
            }
            Family::PiecewiseLinear {
                axis,
                knots,
                period,
            } if *axis == k => {
                let mut out = Vec::new();
                match period {
                    None => out.extend(knots.iter().map(|k| k[0]).filter(|s| *s > lo && *s < hi)),
                    Some(p) => {
                        let x0 = knots[0][0];
                        let first = ((lo - x0) / p).floor() as i64;
                        let last = ((hi - x0) / p).ceil() as i64;
                        for m in first..=last {
                            for knot in &knots[..knots.len() - 1] {
                                let s = knot[0] + m as f64 * p;
                                if s > lo && s < hi {
                                    out.push(s);
                                }
                            }
                        }
                        out.sort_by(f64::total_cmp);
                    }
                }
                out
            }
            _ => Vec::new(),
        }
    }

    fn is_time_invariant(&self) -> bool {
        !matches!(self, Family::Sinusoidal { omega, .. } if *omega != 0.0)
    }

    fn is_zero(&self) -> bool {
        match self {
            Family::Constant { value } => *value == 0.0,
            Family::GaussianBump { amplitude, .. } => *amplitude == 0.0,
            Family::Polynomial { coefficients, .. } => coefficients.iter().all(|c| *c == 0.0),
            Family::Step { left, right, .. } => *left == 0.0 && *right == 0.0,
            _ => false,
        }
    }
}

/// Field backed by an arbitrary closure. Derivatives fall back to finite
/// differences.
pub struct FnField<F> {
    name: &'static str,
    time_invariant: bool,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
{
    pub fn new(name: &'static str, time_invariant: bool, f: F) -> Field {
        Arc::new(Self {
            name,
            time_invariant,
            f,
        })
    }
}

impl<F> fmt::Debug for FnField<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnField({})", self.name)
    }
}

impl<F> ScalarField for FnField<F>
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.f)(t, x)
    }

    fn is_time_invariant(&self) -> bool {
        self.time_invariant
    }
}

/// Pointwise product of two fields, differentiated by the product rule.
#[derive(Debug)]
pub struct Product(pub Field, pub Field);

impl ScalarField for Product {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.0.value(t, x) * self.1.value(t, x)
    }

    fn partial(&self, t: f64, x: &[f64], axis: usize) -> f64 {
        self.0.partial(t, x, axis) * self.1.value(t, x)
            + self.0.value(t, x) * self.1.partial(t, x, axis)
    }

    fn regularity(&self) -> Regularity {
        self.0.regularity().min(self.1.regularity())
    }

    fn kinks(&self, axis: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mut k = self.0.kinks(axis, lo, hi);
        k.extend(self.1.kinks(axis, lo, hi));
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    fn is_time_invariant(&self) -> bool {
        self.0.is_time_invariant() && self.1.is_time_invariant()
    }

    fn is_zero(&self) -> bool {
        self.0.is_zero() || self.1.is_zero()
    }
}

pub fn product(a: Field, b: Field) -> Field {
    Arc::new(Product(a, b))
}

pub fn constant(value: f64) -> Field {
    Family::constant(value).into_field()
}

pub fn zero() -> Field {
    Family::zero().into_field()
}
