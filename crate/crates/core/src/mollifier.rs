//! Kernel `ρ_ε`, cutoff `χ_ε`, mollified coefficients and the bounds that go
//! with them.
//!
//! `ρ(x) = Z_d exp(−1/(1−|x|²))` on the open unit ball, `ρ_ε(x) = ε^{-d}ρ(x/ε)`.
//! `χ_ε(x) = ψ(ε|x|)` where `ψ(r) = φ(2−r)/(φ(2−r)+φ(r−1))` and
//! `φ(s) = e^{−1/s}` for `s > 0`, so `ψ = 1` on `[0,1]` and `ψ = 0` on
//! `[2,∞)`.
//!
//! Convolutions of grid data use the discrete weights `w_k ∝ ρ_ε(kh)`
//! normalized to sum to one, which keeps constants, affine functions and the
//! Jensen inequality exact. Convolutions of continuous fields that need to be
//! independent of any grid use composite Gauss-Legendre panels.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Field, Regularity, ScalarField};
use crate::grid::Grid;
use crate::model::{
    self, defect_of, verify_parabolicity, CoefficientSet, ParabolicityReport, PointCoefficients,
    WitnessPool,
};
use crate::numerics::gauss_legendre;

/// `1/∫_{|x|<1} exp(−1/(1−|x|²)) dx` in one dimension.
pub const Z1: f64 = 2.252_283_621_043_581;
/// Same for two dimensions.
pub const Z2: f64 = 2.143_565_775_792_236_6;

/// `sup |ψ'|`, attained at `r = 3/2`.
pub const PSI_PRIME_SUP: f64 = 2.0;

/// Quadrature slack for mollified parabolicity.
pub const MOLLIFIED_TOL: f64 = 1e-10;

fn bump(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn bump_prime(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp() / (s * s)
    } else {
        0.0
    }
}

/// Smooth transition: 1 on `[0,1]`, 0 on `[2,∞)`.
pub fn psi(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let a = bump(2.0 - r);
        a / (a + bump(r - 1.0))
    }
}

pub fn psi_prime(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        return 0.0;
    }
    let (a, b) = (bump(2.0 - r), bump(r - 1.0));
    let (da, db) = (-bump_prime(2.0 - r), bump_prime(r - 1.0));
    (da * b - a * db) / ((a + b) * (a + b))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MollifierParams {
    pub epsilon: f64,
}

impl MollifierParams {
    /// Accepts `ε ∈ (0, 1]`.
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Argument(format!("epsilon must lie in (0, 1], got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn normalization(dim: usize) -> f64 {
        if dim == 1 {
            Z1
        } else {
            Z2
        }
    }

    /// `ρ_ε(z)`.
    pub fn kernel(&self, z: &[f64]) -> f64 {
        let e = self.epsilon;
        let s2: f64 = z.iter().map(|v| (v / e) * (v / e)).sum();
        if s2 >= 1.0 {
            return 0.0;
        }
        Self::normalization(z.len()) * (-1.0 / (1.0 - s2)).exp() / e.powi(z.len() as i32)
    }

    /// `∂_axis ρ_ε(z)`.
    pub fn kernel_gradient(&self, z: &[f64], axis: usize) -> f64 {
        let e = self.epsilon;
        let s2: f64 = z.iter().map(|v| (v / e) * (v / e)).sum();
        if s2 >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - s2;
        self.kernel(z) * (-2.0 * z[axis] / (e * e * q * q))
    }

    /// `χ_ε(x)`.
    pub fn cutoff(&self, x: &[f64]) -> f64 {
        psi(self.epsilon * norm(x))
    }

    /// `∂_axis χ_ε(x)`.
    pub fn cutoff_gradient(&self, x: &[f64], axis: usize) -> f64 {
        let r = norm(x);
        if r == 0.0 {
            return 0.0;
        }
        psi_prime(self.epsilon * r) * self.epsilon * x[axis] / r
    }

    /// Smallest ε the grid resolves: two cells per kernel radius.
    pub fn min_epsilon(grid: &Grid) -> f64 {
        2.0 * grid.max_spacing()
    }

    pub fn check_resolution(&self, grid: &Grid) -> Result<()> {
        let min = Self::min_epsilon(grid);
        if self.epsilon < min {
            Err(Error::UnderResolved {
                epsilon: self.epsilon,
                min_epsilon: min,
            })
        } else {
            Ok(())
        }
    }

    /// Discrete kernel weights on the grid lattice.
    pub fn stencil(&self, grid: &Grid) -> Result<Stencil> {
        self.check_resolution(grid)?;
        let d = grid.dim();
        let h = [grid.spacing(0), if d == 2 { grid.spacing(1) } else { 1.0 }];
        let reach = [
            (self.epsilon / h[0]).ceil() as isize,
            if d == 2 { (self.epsilon / h[1]).ceil() as isize } else { 0 },
        ];
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for k1 in -reach[1]..=reach[1] {
            for k0 in -reach[0]..=reach[0] {
                let z = [k0 as f64 * h[0], k1 as f64 * h[1]];
                let w = self.kernel(&z[..d]);
                if w > 0.0 {
                    offsets.push([k0, k1]);
                    weights.push(w);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Stencil {
            dim: d,
            h,
            offsets,
            weights,
        })
    }

    /// `Σ_i ρ_ε(x_i − center) h^d`, the raw grid quadrature of the kernel.
    pub fn kernel_mass_on_grid(&self, grid: &Grid, center: &[f64]) -> f64 {
        let d = grid.dim();
        let v: Vec<f64> = grid
            .points()
            .map(|p| {
                let z: Vec<f64> = (0..d).map(|k| p[k] - center[k]).collect();
                self.kernel(&z)
            })
            .collect();
        grid.integrate(&v)
    }
}

/// Normalized discrete kernel weights at lattice offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    dim: usize,
    h: [f64; 2],
    offsets: Vec<[isize; 2]>,
    weights: Vec<f64>,
}

impl Stencil {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted average of `f(x − k h)` over the stencil.
    pub fn average_at(&self, x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let d = self.dim;
        let mut y = [0.0; 2];
        let mut s = 0.0;
        for (o, w) in self.offsets.iter().zip(&self.weights) {
            for k in 0..d {
                y[k] = x[k] - o[k] as f64 * self.h[k];
            }
            s += w * f(&y[..d]);
        }
        s
    }
}

fn at_grid(
    grid: &Grid,
    stencil: &Stencil,
    values: &[f64],
    idx: usize,
    transform: impl Fn(f64) -> f64,
) -> f64 {
    let mi = grid.multi_index(idx);
    let d = grid.dim();
    let mut s = 0.0;
    let mut wsum = 0.0;
    'outer: for (o, w) in stencil.offsets.iter().zip(&stencil.weights) {
        let mut mj = [0usize; 2];
        for k in 0..d {
            let j = mi[k] as isize - o[k];
            if j < 0 || j >= grid.axis(k).n as isize {
                continue 'outer;
            }
            mj[k] = j as usize;
        }
        s += w * transform(values[grid.flat(mj)]);
        wsum += w;
    }
    s / wsum
}

/// `(v ∗ ρ_ε)·χ_ε^power` on the grid. Near the box boundary the truncated
/// kernel is renormalized.
pub fn mollify_field(grid: &Grid, values: &[f64], p: &MollifierParams, power: i32) -> Result<Vec<f64>> {
    if values.len() != grid.len() {
        return Err(Error::Argument("value array does not match grid".into()));
    }
    let st = p.stencil(grid)?;
    let d = grid.dim();
    Ok((0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            at_grid(grid, &st, values, i, |v| v) * p.cutoff(&x[..d]).powi(power)
        })
        .collect())
}

/// `[(b ∧ 1/ε) ∨ (−1/ε)] ∗ ρ_ε` on the grid.
pub fn truncate_drift(grid: &Grid, values: &[f64], p: &MollifierParams) -> Result<Vec<f64>> {
    if values.len() != grid.len() {
        return Err(Error::Argument("value array does not match grid".into()));
    }
    let st = p.stencil(grid)?;
    let cap = 1.0 / p.epsilon;
    Ok((0..grid.len())
        .map(|i| at_grid(grid, &st, values, i, |v| v.clamp(-cap, cap)))
        .collect())
}

/// A field mollified with the grid stencil: `(clip(v) ∗ ρ_ε)·χ_ε^power`,
/// evaluable anywhere.
#[derive(Debug)]
pub struct MollifiedField {
    inner: Field,
    params: MollifierParams,
    stencil: Arc<Stencil>,
    power: i32,
    clip: Option<f64>,
}

impl MollifiedField {
    pub fn new(inner: Field, params: MollifierParams, stencil: Arc<Stencil>, power: i32) -> Field {
        Arc::new(Self {
            inner,
            params,
            stencil,
            power,
            clip: None,
        })
    }

    pub fn truncated(inner: Field, params: MollifierParams, stencil: Arc<Stencil>) -> Field {
        Arc::new(Self {
            inner,
            params,
            clip: Some(1.0 / params.epsilon),
            stencil,
            power: 0,
        })
    }
}

impl ScalarField for MollifiedField {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let conv = match self.clip {
            Some(cap) => self
                .stencil
                .average_at(x, |y| self.inner.value(t, y).clamp(-cap, cap)),
            None => self.stencil.average_at(x, |y| self.inner.value(t, y)),
        };
        if self.power == 0 {
            conv
        } else {
            conv * self.params.cutoff(x).powi(self.power)
        }
    }

    fn regularity(&self) -> Regularity {
        Regularity::Smooth
    }

    fn is_time_invariant(&self) -> bool {
        self.inner.is_time_invariant()
    }

    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }
}

fn wrap(f: &Field, p: MollifierParams, st: &Arc<Stencil>, power: i32) -> Field {
    if f.is_zero() {
        f.clone()
    } else {
        MollifiedField::new(f.clone(), p, st.clone(), power)
    }
}

/// The approximating coefficient set: `a·χ²`, `σ, c, h, f, g·χ` after
/// convolution, and the truncated drift for `b`. `sigma_hat` is dropped
/// since the factorization does not survive mollification.
pub fn mollify_coefficients(
    coeffs: &CoefficientSet,
    grid: &Grid,
    p: &MollifierParams,
) -> Result<CoefficientSet> {
    let st = Arc::new(p.stencil(grid)?);
    let p = *p;
    let mut out = coeffs.clone();
    for row in out.a.iter_mut() {
        for f in row.iter_mut() {
            *f = wrap(f, p, &st, 2);
        }
    }
    for f in out.b.iter_mut() {
        if !f.is_zero() {
            *f = MollifiedField::truncated(f.clone(), p, st.clone());
        }
    }
    out.c = wrap(&out.c, p, &st, 1);
    for row in out.sigma.iter_mut() {
        for f in row.iter_mut() {
            *f = wrap(f, p, &st, 1);
        }
    }
    for f in out.h.iter_mut().chain(out.g.iter_mut()) {
        *f = wrap(f, p, &st, 1);
    }
    out.f = wrap(&out.f, p, &st, 1);
    out.sigma_hat = None;
    Ok(out)
}

/// Checks `𝒜_{a_ε,σ_ε}(ξ) ≥ κ_ε χ_ε² |ξ|²` on the grid, after confirming
/// the unmollified condition.
pub fn mollified_parabolicity_check(
    coeffs: &CoefficientSet,
    p: &MollifierParams,
    grid: &Grid,
    times: &[f64],
    kappa: &Field,
    n_dirs: usize,
    seed: u64,
) -> Result<ParabolicityReport> {
    let raw = verify_parabolicity(coeffs, grid, times, kappa.as_ref(), n_dirs, seed)?;
    if !raw.passes() {
        return Err(Error::Hypothesis(format!(
            "coefficients violate the parabolic condition (min defect {:e})",
            raw.min_defect
        )));
    }
    let moll = mollify_coefficients(coeffs, grid, p)?;
    let st = Arc::new(p.stencil(grid)?);
    let kappa_eps = wrap(kappa, *p, &st, 2);
    let d = grid.dim();
    let dirs = model::sample_directions(d, n_dirs, seed);
    let mut pool = WitnessPool::new();
    for &t in times {
        for pt in grid.points() {
            let x = &pt[..d];
            let pc = moll.sample(t, x)?;
            let k = kappa_eps.value(t, x);
            for xi in &dirs {
                pool.offer(t, x, xi, defect_of(&pc, xi) - k);
            }
            if d == 2 {
                let v = model::min_eigenvector_2x2(model::defect_matrix(&pc));
                pool.offer(t, x, &v, defect_of(&pc, &v) - k);
            }
        }
    }
    Ok(pool.finish(raw.kappa_floor, MOLLIFIED_TOL))
}

/// Minimum over grid points of
/// `((|σᵀξ|²) ∗ ρ_ε)χ² − |(σᵀξ) ∗ ρ_ε|²χ²`, which Jensen's inequality keeps
/// non-negative.
pub fn jensen_gap(
    coeffs: &CoefficientSet,
    p: &MollifierParams,
    grid: &Grid,
    t: f64,
    xi: &[f64],
) -> Result<f64> {
    let st = p.stencil(grid)?;
    let d = grid.dim();
    let proj = |pc: &PointCoefficients, l: usize| -> f64 { (0..d).map(|i| pc.sigma[l][i] * xi[i]).sum() };
    let mut min = f64::INFINITY;
    for pt in grid.points() {
        let x = &pt[..d];
        let chi2 = p.cutoff(x).powi(2);
        for l in 0..coeffs.drivers {
            let mut err = None;
            let mean = st.average_at(x, |y| match coeffs.sample(t, y) {
                Ok(pc) => proj(&pc, l),
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            });
            let mean_sq = st.average_at(x, |y| coeffs.sample(t, y).map_or(0.0, |pc| proj(&pc, l).powi(2)));
            if let Some(e) = err {
                return Err(e);
            }
            min = min.min((mean_sq - mean * mean) * chi2);
        }
    }
    Ok(min)
}

/// Largest `|∇χ_ε|/ε` over the grid points. Never exceeds
/// [`PSI_PRIME_SUP`].
pub fn cutoff_derivative_bound(p: &MollifierParams, grid: &Grid) -> f64 {
    let d = grid.dim();
    grid.points()
        .map(|x| psi_prime(p.epsilon * norm(&x[..d])).abs())
        .fold(0.0, f64::max)
}

/// `C = 1 + sup_x (1 + |x| + ε)|∇χ_ε(x)|`: the first term bounds
/// `(div b ∗ ρ_ε)χ_ε`, the second bounds `(b ∗ ρ_ε)·∇χ_ε` using
/// `|b ∗ ρ_ε|(x) ≤ ‖b/(1+|·|)‖_∞ (1 + |x| + ε)`. The sup is taken by dense
/// radial sampling of the fixed profile.
pub fn div_bound_constant(p: &MollifierParams) -> f64 {
    const SAMPLES: usize = 100_000;
    let e = p.epsilon;
    let mut best = 0.0f64;
    for k in 0..=SAMPLES {
        let r = 1.0 + k as f64 / SAMPLES as f64;
        // r = ε|x|, |∇χ_ε| = ε|ψ'(r)|
        best = best.max((1.0 + r / e + e) * e * psi_prime(r).abs());
    }
    1.0 + best
}

/// Tensor Gauss-Legendre rule for `∫ ρ_ε(z) F(z) dz` over `[−ε, ε]^d`.
#[derive(Debug, Clone)]
pub struct KernelRule {
    nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
    dim: usize,
}

impl KernelRule {
    pub fn new(p: &MollifierParams, dim: usize, panels: usize) -> Self {
        let (gx, gw) = gauss_legendre(12);
        let e = p.epsilon;
        let width = 2.0 * e / panels as f64;
        let mut axis = Vec::new();
        for k in 0..panels {
            let lo = -e + k as f64 * width;
            for (x, w) in gx.iter().zip(&gw) {
                axis.push((lo + 0.5 * width * (x + 1.0), 0.5 * width * w));
            }
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let second: Vec<(f64, f64)> = if dim == 2 { axis.clone() } else { vec![(0.0, 1.0)] };
        for &(y, wy) in &second {
            for &(x, wx) in &axis {
                let z = [x, y];
                let k = p.kernel(&z[..dim]);
                if k > 0.0 {
                    nodes.push(z);
                    weights.push(k * wx * wy);
                }
            }
        }
        Self { nodes, weights, dim }
    }

    /// `∫ ρ_ε(z) f(x − z) dz`.
    pub fn convolve(&self, x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut y = [0.0; 2];
        let mut s = 0.0;
        for (z, w) in self.nodes.iter().zip(&self.weights) {
            for k in 0..self.dim {
                y[k] = x[k] - z[k];
            }
            s += w * f(&y[..self.dim]);
        }
        s
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivBound {
    pub epsilon: f64,
    /// `sup |div((b ∗ ρ_ε)χ_ε)|`
    pub lhs: f64,
    pub div_norm: f64,
    pub growth_norm: f64,
    pub constant: f64,
    pub bound: f64,
}

impl DivBound {
    pub fn holds(&self) -> bool {
        self.lhs <= self.bound
    }
}

fn ball_lattice(dim: usize, radius: f64, spacing: f64) -> Vec<[f64; 2]> {
    let n = (radius / spacing).ceil() as i64;
    let step = radius / n as f64;
    let mut out = Vec::new();
    let second = if dim == 2 { -n..=n } else { 0..=0 };
    for j in second {
        for i in -n..=n {
            let p = [i as f64 * step, j as f64 * step];
            if norm(&p[..dim]) <= radius {
                out.push(p);
            }
        }
    }
    out
}

/// Both sides of `sup|div((b∗ρ_ε)χ_ε)| ≤ C(‖div b‖_∞ + ‖b/(1+|x|)‖_∞)`,
/// sampled on a lattice over the ball of radius `2/ε + ε` at time `t`.
/// Each component of `b` must be weakly differentiable.
pub fn div_bound_check(b: &[Field], p: &MollifierParams, t: f64) -> Result<DivBound> {
    let dim = b.len();
    if !(1..=2).contains(&dim) {
        return Err(Error::Argument("drift must have 1 or 2 components".into()));
    }
    if let Some(i) = b.iter().position(|f| !f.regularity().is_weakly_differentiable()) {
        return Err(Error::Hypothesis(format!("b[{i}] is not differentiable")));
    }
    let e = p.epsilon;
    let radius = 2.0 / e + e;
    let spacing = if dim == 1 {
        (e / 4.0).min(0.01)
    } else {
        (e / 4.0).max(radius / 200.0)
    };
    let rule = KernelRule::new(p, dim, 8);
    let mut lhs = 0.0f64;
    let mut div_norm = 0.0f64;
    let mut growth_norm = 0.0f64;
    for x in ball_lattice(dim, radius, spacing) {
        let x = &x[..dim];
        let div_b = |y: &[f64]| (0..dim).map(|i| b[i].partial(t, y, i)).sum::<f64>();
        div_norm = div_norm.max(div_b(x).abs());
        let bx = norm(&b.iter().map(|f| f.value(t, x)).collect::<Vec<_>>());
        growth_norm = growth_norm.max(bx / (1.0 + norm(x)));
        let chi = p.cutoff(x);
        let mut v = rule.convolve(x, div_b) * chi;
        for (i, bi) in b.iter().enumerate() {
            let g = p.cutoff_gradient(x, i);
            if g != 0.0 {
                v += rule.convolve(x, |y| bi.value(t, y)) * g;
            }
        }
        lhs = lhs.max(v.abs());
    }
    if !(lhs.is_finite() && div_norm.is_finite() && growth_norm.is_finite()) {
        return Err(Error::Evaluation {
            field: "b".into(),
            t,
            x: vec![],
        });
    }
    let constant = div_bound_constant(p);
    Ok(DivBound {
        epsilon: e,
        lhs,
        div_norm,
        growth_norm,
        constant,
        bound: constant * (div_norm + growth_norm),
    })
}

/// Growth factor above which an ε-sweep counts as non-uniform.
pub const UNIFORMITY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivBoundSweep {
    pub entries: Vec<DivBound>,
    pub uniform: bool,
}

/// Runs [`div_bound_check`] over `epsilons` (largest first). The sweep is
/// uniform when every bound holds and neither side grows by more than
/// [`UNIFORMITY_FACTOR`] relative to the largest ε.
pub fn div_bound_sweep(b: &[Field], epsilons: &[f64], t: f64) -> Result<DivBoundSweep> {
    let mut entries = Vec::with_capacity(epsilons.len());
    for &e in epsilons {
        entries.push(div_bound_check(b, &MollifierParams::new(e)?, t)?);
    }
    let first = entries
        .first()
        .ok_or_else(|| Error::Argument("empty epsilon sweep".into()))?
        .clone();
    let uniform = entries.iter().all(|e| {
        e.holds()
            && e.lhs <= UNIFORMITY_FACTOR * first.lhs.max(f64::MIN_POSITIVE)
            && e.bound <= UNIFORMITY_FACTOR * first.bound
    });
    Ok(DivBoundSweep { entries, uniform })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{self, Family, FnField};
    use proptest::prelude::*;

    fn grid(n: usize, l: f64) -> Grid {
        Grid::uniform_1d(-l, l, n).unwrap()
    }

    #[test]
    fn normalization_constants_match_quadrature() {
        // ε = 40h: the Riemann sum of a smooth compactly supported function is
        // spectrally accurate.
        let g = grid(1600, 2.0);
        let p = MollifierParams::new(0.1).unwrap();
        assert!((p.kernel_mass_on_grid(&g, &[0.0]) - 1.0).abs() < 1e-8);
        let g2 = Grid::uniform_2d(-0.5, 0.5, 200).unwrap();
        let p2 = MollifierParams::new(0.2).unwrap();
        assert!((p2.kernel_mass_on_grid(&g2, &[0.0, 0.0]) - 1.0).abs() < 1e-8);
        // The flat tails of the kernel make composite Gauss converge
        // algebraically; 16 panels per axis reach 1e-10.
        assert!((KernelRule::new(&p, 1, 16).mass() - 1.0).abs() < 1e-10);
        assert!((KernelRule::new(&p2, 2, 16).mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kernel_support_and_gradient() {
        let p = MollifierParams::new(0.3).unwrap();
        assert_eq!(p.kernel(&[0.3]), 0.0);
        assert!(p.kernel(&[0.29]) > 0.0);
        let x = [0.1, -0.05];
        for k in 0..2 {
            let fd = field::central_difference(|z| p.kernel(z), &x, k);
            let exact = p.kernel_gradient(&x, k);
            assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0), "{fd} {exact}");
        }
    }

    #[test]
    fn cutoff_profile() {
        let p = MollifierParams::new(0.1).unwrap();
        assert_eq!(p.cutoff(&[10.0]), 1.0);
        assert_eq!(p.cutoff(&[20.0]), 0.0);
        assert_eq!(p.cutoff_gradient(&[9.0], 0), 0.0);
        assert_eq!(p.cutoff_gradient(&[25.0], 0), 0.0);
        assert!((psi(1.5) - 0.5).abs() < 1e-15);
        // dense sampling oracle for sup|ψ'|
        let dense = (0..=100_000)
            .map(|k| psi_prime(1.0 + k as f64 * 1e-5).abs())
            .fold(0.0, f64::max);
        assert!((dense - PSI_PRIME_SUP).abs() < 1e-6);
        for r in [1.2, 1.5, 1.9] {
            let fd = field::central_difference(|s| psi(s[0]), &[r], 0);
            assert!((fd - psi_prime(r)).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_bound_examples() {
        let p = MollifierParams::new(0.1).unwrap();
        // Integer cell centres: the shell midpoint |x| = 15 is sampled.
        let g = Grid::uniform_1d(-25.5, 25.5, 51).unwrap();
        let c = cutoff_derivative_bound(&p, &g);
        let dense = (0..=100_000)
            .map(|k| {
                let x = 10.0 + k as f64 * 1e-4;
                p.cutoff_gradient(&[x], 0).abs() / p.epsilon
            })
            .fold(0.0, f64::max);
        assert!((c - dense).abs() < 1e-6, "{c} vs {dense}");
        let g = Grid::uniform_1d(-30.0, 30.0, 97).unwrap();
        assert!(cutoff_derivative_bound(&p, &g) <= PSI_PRIME_SUP);
    }

    #[test]
    fn mollify_examples() {
        let g = grid(201, 1.0);
        let p = MollifierParams::new(0.1).unwrap();
        let mid = 100;
        let x0 = g.point(mid)[0];
        assert!(x0.abs() < 1e-15);
        let three = vec![3.0; g.len()];
        let m = mollify_field(&g, &three, &p, 1).unwrap();
        assert!((m[mid] - 3.0).abs() < 1e-14);
        let x: Vec<f64> = g.points().map(|p| p[0]).collect();
        let m = mollify_field(&g, &x, &p, 1).unwrap();
        for i in 20..180 {
            assert!((m[i] - x[i]).abs() < 1e-14);
        }
        let step = g.sample(&Family::Step { axis: 0, location: x0, left: 0.0, right: 1.0 }, 0.0);
        let m = mollify_field(&g, &step, &p, 1).unwrap();
        assert!((m[mid] - 0.5).abs() < 1e-6);
        let fine = Grid::uniform_1d(-1.0, 1.0, 16).unwrap();
        assert!(matches!(
            mollify_field(&fine, &vec![0.0; 16], &MollifierParams::new(0.2).unwrap(), 1),
            Err(Error::UnderResolved { .. })
        ));
    }

    #[test]
    fn truncate_examples() {
        let g = grid(201, 2.0);
        let five = vec![5.0; g.len()];
        let out = truncate_drift(&g, &five, &MollifierParams::new(1.0).unwrap()).unwrap();
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let small = vec![0.1; g.len()];
        let out = truncate_drift(&g, &small, &MollifierParams::new(0.5).unwrap()).unwrap();
        assert!(out.iter().all(|v| (v - 0.1).abs() < 1e-15));
        let x: Vec<f64> = g.points().map(|p| p[0]).collect();
        let out = truncate_drift(&g, &x, &MollifierParams::new(0.5).unwrap()).unwrap();
        assert!(out[100].abs() < 1e-15);
        assert!(out.iter().all(|v| v.abs() <= 2.0));
    }

    #[test]
    fn mollified_parabolicity_on_degenerate_pair() {
        let g = grid(129, 4.0);
        let p = MollifierParams::new(0.25).unwrap();
        let mut c = CoefficientSet::isotropic(1, 1, 0.5);
        c.sigma[0][0] = field::constant(1.0);
        let r = mollified_parabolicity_check(&c, &p, &g, &[0.0], &field::zero(), 2, 1).unwrap();
        assert!(r.passes(), "{}", r.min_defect);
        assert!(r.min_defect.abs() < 1e-12);

        let c = CoefficientSet::isotropic(1, 0, 1.0);
        let r = mollified_parabolicity_check(&c, &p, &g, &[0.0], &field::constant(2.0), 2, 1).unwrap();
        assert!(r.passes());
    }

    #[test]
    fn mollified_parabolicity_with_variable_coefficients() {
        let g = grid(161, 5.0);
        let p = MollifierParams::new(0.3).unwrap();
        let mut c = CoefficientSet::zero(1, 1);
        c.a[0][0] = FnField::new("1+sin^2", true, |_, x| 1.0 + x[0].sin().powi(2));
        c.sigma[0][0] = field::constant(1.0);
        let kappa = FnField::new("kappa", true, |_, x| 2.0 * (1.0 + x[0].sin().powi(2)) - 1.0);
        let r = mollified_parabolicity_check(&c, &p, &g, &[0.0], &kappa, 2, 1).unwrap();
        assert!(r.passes(), "{}", r.min_defect);
    }

    #[test]
    fn jensen_gap_against_continuous_quadrature() {
        let g = grid(161, 5.0);
        let p = MollifierParams::new(0.3).unwrap();
        let mut c = CoefficientSet::isotropic(1, 1, 1.0);
        c.sigma[0][0] = Family::Sinusoidal {
            amplitude: 1.0,
            wavenumber: vec![2.0],
            phase: 0.0,
            offset: 0.3,
            omega: 0.0,
        }
        .into_field();
        let gap = jensen_gap(&c, &p, &g, 0.0, &[1.0]).unwrap();
        assert!(gap >= -1e-15);
        // Both sides of the inequality by Gauss quadrature at a few points.
        let rule = KernelRule::new(&p, 1, 16);
        for x in [-1.3, 0.0, 0.77] {
            let s = |y: &[f64]| c.sigma[0][0].value(0.0, y);
            let lhs = rule.convolve(&[x], s).powi(2);
            let rhs = rule.convolve(&[x], |y| s(y).powi(2));
            assert!(rhs - lhs >= 0.0);
        }
    }

    #[test]
    fn div_bound_examples() {
        let one = vec![field::constant(1.0)];
        let r = div_bound_check(&one, &MollifierParams::new(0.1).unwrap(), 0.0).unwrap();
        assert!(r.holds());
        assert_eq!(r.div_norm, 0.0);
        assert!(r.lhs <= r.constant * r.growth_norm);

        let x = vec![Family::Affine { offset: 0.0, slope: vec![1.0] }.into_field()];
        let s = div_bound_sweep(&x, &[0.2, 0.1, 0.05], 0.0).unwrap();
        assert!(s.uniform, "{s:?}");

        let x2 = vec![Family::Polynomial { axis: 0, coefficients: vec![0.0, 0.0, 1.0] }.into_field()];
        let s = div_bound_sweep(&x2, &[0.2, 0.1, 0.05], 0.0).unwrap();
        assert!(!s.uniform);

        let step = vec![Family::Step { axis: 0, location: 0.0, left: 0.0, right: 1.0 }.into_field()];
        assert!(matches!(
            div_bound_check(&step, &MollifierParams::new(0.2).unwrap(), 0.0),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn mollified_coefficients_keep_structure() {
        let g = grid(64, 4.0);
        let p = MollifierParams::new(0.25).unwrap();
        let mut c = CoefficientSet::isotropic(1, 1, 0.5);
        c.b[0] = Family::constant(7.0).into_field();
        let m = mollify_coefficients(&c, &g, &p).unwrap();
        assert!((m.b[0].value(0.0, &[0.3]) - 4.0).abs() < 1e-14);
        assert!((m.a[0][0].value(0.0, &[0.3]) - 0.5).abs() < 1e-14);
        assert_eq!(m.a[0][0].value(0.0, &[9.0]), 0.0);
        assert!(m.h[0].is_zero());
    }

    proptest! {
        #[test]
        fn mollification_is_linear_and_contracts(
            v in proptest::collection::vec(-3.0f64..3.0, 64),
            w in proptest::collection::vec(-3.0f64..3.0, 64),
            alpha in -2.0f64..2.0,
        ) {
            let g = grid(64, 4.0);
            let p = MollifierParams::new(0.4).unwrap();
            let mv = mollify_field(&g, &v, &p, 1).unwrap();
            let mw = mollify_field(&g, &w, &p, 1).unwrap();
            let comb: Vec<f64> = v.iter().zip(&w).map(|(a, b)| alpha * a + b).collect();
            let mc = mollify_field(&g, &comb, &p, 1).unwrap();
            for i in 0..64 {
                prop_assert!((mc[i] - (alpha * mv[i] + mw[i])).abs() < 1e-12);
            }
            let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(mv.iter().all(|x| x.abs() <= sup * (1.0 + 1e-14)));
            let tr = truncate_drift(&g, &v, &MollifierParams::new(0.5).unwrap()).unwrap();
            prop_assert!(tr.iter().all(|x| x.is_finite() && x.abs() <= 2.0 + 1e-14));
        }
    }
}
