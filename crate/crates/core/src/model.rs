//! Coefficient data for the operators
//!
//! ```text
//! ℒu   = ∂_i(a^{ij} ∂_j u) + ∂_i(b^i u) + c u
//! ℳ^l u = σ^{il} ∂_i u + h^l u
//! ```
//!
//! and the parabolicity predicates built on the defect
//! `𝒜(ξ) = 2 ξᵀaξ − Σ_l (σᵀξ)_l²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{self, Field, ScalarField};
use crate::grid::Grid;

/// Tolerance on the parabolicity minimum.
pub const PARABOLICITY_TOL: f64 = 1e-12;

/// Time/space coefficient fields of one linear SPDE. Matrices are stored
/// row-major as nested vectors: `a[i][j]`, `sigma[i][l]`,
/// `sigma_hat[i][k]`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub dim: usize,
    pub drivers: usize,
    pub a: Vec<Vec<Field>>,
    pub b: Vec<Field>,
    pub c: Field,
    pub sigma: Vec<Vec<Field>>,
    pub h: Vec<Field>,
    pub f: Field,
    pub g: Vec<Field>,
    pub sigma_hat: Option<Vec<Vec<Field>>>,
}

/// All coefficients evaluated at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCoefficients {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub c: f64,
    /// `sigma[l]` is the column `σ^{·l}`.
    pub sigma: Vec<[f64; 2]>,
    pub h: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
}

fn eval(field: &dyn ScalarField, name: &str, t: f64, x: &[f64]) -> Result<f64> {
    let v = field.value(t, x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            field: name.to_string(),
            t,
            x: x.to_vec(),
        })
    }
}

impl CoefficientSet {
    /// All coefficients zero.
    pub fn zero(dim: usize, drivers: usize) -> Self {
        let z = field::zero();
        Self {
            dim,
            drivers,
            a: vec![vec![z.clone(); dim]; dim],
            b: vec![z.clone(); dim],
            c: z.clone(),
            sigma: vec![vec![z.clone(); drivers]; dim],
            h: vec![z.clone(); drivers],
            f: z.clone(),
            g: vec![z; drivers],
            sigma_hat: None,
        }
    }

    /// `a = value · I`, everything else zero.
    pub fn isotropic(dim: usize, drivers: usize, value: f64) -> Self {
        let mut c = Self::zero(dim, drivers);
        for i in 0..dim {
            c.a[i][i] = field::constant(value);
        }
        c
    }

    /// Sets `a^{ij}` and `a^{ji}` together.
    pub fn set_a(&mut self, i: usize, j: usize, value: Field) {
        self.a[i][j] = value.clone();
        self.a[j][i] = value;
    }

    pub fn all_fields(&self) -> Vec<(String, &Field)> {
        let mut out = Vec::new();
        for (i, row) in self.a.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                out.push((format!("a[{i}][{j}]"), f));
            }
        }
        for (i, f) in self.b.iter().enumerate() {
            out.push((format!("b[{i}]"), f));
        }
        out.push(("c".into(), &self.c));
        for (i, row) in self.sigma.iter().enumerate() {
            for (l, f) in row.iter().enumerate() {
                out.push((format!("sigma[{i}][{l}]"), f));
            }
        }
        for (l, f) in self.h.iter().enumerate() {
            out.push((format!("h[{l}]"), f));
        }
        out.push(("f".into(), &self.f));
        for (l, f) in self.g.iter().enumerate() {
            out.push((format!("g[{l}]"), f));
        }
        if let Some(sh) = &self.sigma_hat {
            for (i, row) in sh.iter().enumerate() {
                for (k, f) in row.iter().enumerate() {
                    out.push((format!("sigma_hat[{i}][{k}]"), f));
                }
            }
        }
        out
    }

    pub fn is_time_invariant(&self) -> bool {
        self.all_fields().iter().all(|(_, f)| f.is_time_invariant())
    }

    /// True when the generator part (a, b, c) does not depend on time.
    pub fn generator_time_invariant(&self) -> bool {
        self.a.iter().flatten().all(|f| f.is_time_invariant())
            && self.b.iter().all(|f| f.is_time_invariant())
            && self.c.is_time_invariant()
    }

    pub fn noise_time_invariant(&self) -> bool {
        self.sigma.iter().flatten().all(|f| f.is_time_invariant())
            && self.h.iter().all(|f| f.is_time_invariant())
    }

    pub fn sigma_is_zero(&self) -> bool {
        self.sigma.iter().flatten().all(|f| f.is_zero())
    }

    pub fn sample(&self, t: f64, x: &[f64]) -> Result<PointCoefficients> {
        let d = self.dim;
        let mut p = PointCoefficients {
            a: [[0.0; 2]; 2],
            b: [0.0; 2],
            c: eval(self.c.as_ref(), "c", t, x)?,
            sigma: vec![[0.0; 2]; self.drivers],
            h: Vec::with_capacity(self.drivers),
            f: eval(self.f.as_ref(), "f", t, x)?,
            g: Vec::with_capacity(self.drivers),
        };
        for i in 0..d {
            for j in 0..d {
                p.a[i][j] = eval(self.a[i][j].as_ref(), &format!("a[{i}][{j}]"), t, x)?;
            }
            p.b[i] = eval(self.b[i].as_ref(), &format!("b[{i}]"), t, x)?;
            for l in 0..self.drivers {
                p.sigma[l][i] = eval(self.sigma[i][l].as_ref(), &format!("sigma[{i}][{l}]"), t, x)?;
            }
        }
        for l in 0..self.drivers {
            p.h.push(eval(self.h[l].as_ref(), &format!("h[{l}]"), t, x)?);
            p.g.push(eval(self.g[l].as_ref(), &format!("g[{l}]"), t, x)?);
        }
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.dim;
        let l = self.drivers;
        let ok = (1..=2).contains(&d)
            && self.a.len() == d
            && self.a.iter().all(|r| r.len() == d)
            && self.b.len() == d
            && self.sigma.len() == d
            && self.sigma.iter().all(|r| r.len() == l)
            && self.h.len() == l
            && self.g.len() == l
            && self
                .sigma_hat
                .as_ref()
                .is_none_or(|s| s.len() == d && s.iter().all(|r| !r.is_empty() && r.len() == s[0].len()));
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "coefficient shapes inconsistent with dim {d} and {l} drivers"
            )))
        }
    }

    /// Checks the model invariants on every grid point at every listed time:
    /// finite values, symmetric `a`, and `a = σ̂σ̂ᵀ` within relative 1e-12
    /// when `sigma_hat` is present.
    pub fn validate(&self, grid: &Grid, times: &[f64]) -> Result<()> {
        self.check_shapes()?;
        if grid.dim() != self.dim {
            return Err(Error::Config(format!(
                "grid dimension {} does not match coefficient dimension {}",
                grid.dim(),
                self.dim
            )));
        }
        let d = self.dim;
        for &t in times {
            for p in grid.points() {
                let x = &p[..d];
                let pc = self.sample(t, x)?;
                if d == 2 && (pc.a[0][1] - pc.a[1][0]).abs() > 1e-14 * (1.0 + pc.a[0][1].abs()) {
                    return Err(Error::Validation {
                        path: "coefficients.a".into(),
                        message: format!("a is not symmetric at t={t}, x={x:?}"),
                    });
                }
                if let Some(sh) = &self.sigma_hat {
                    let s = self.sample_sigma_hat(sh, t, x)?;
                    for i in 0..d {
                        for j in 0..d {
                            let prod: f64 = (0..s[i].len()).map(|k| s[i][k] * s[j][k]).sum();
                            let scale = pc.a[i][j].abs().max(prod.abs()).max(f64::MIN_POSITIVE);
                            if (prod - pc.a[i][j]).abs() > 1e-12 * scale {
                                return Err(Error::Validation {
                                    path: format!("coefficients.a[{i}][{j}]"),
                                    message: format!(
                                        "a = sigma_hat sigma_hat^T violated at t={t}, x={x:?}: a={} vs {prod}",
                                        pc.a[i][j]
                                    ),
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn sample_sigma_hat(&self, sh: &[Vec<Field>], t: f64, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        sh.iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, f)| eval(f.as_ref(), &format!("sigma_hat[{i}][{k}]"), t, x))
                    .collect()
            })
            .collect()
    }
}

/// `𝒜_{a,σ}(ξ) = 2ξᵀaξ − Σ_l (σᵀξ)_l²` from already-sampled coefficients.
pub fn defect_of(pc: &PointCoefficients, xi: &[f64]) -> f64 {
    let d = xi.len();
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += pc.a[i][j] * xi[i] * xi[j];
        }
    }
    let noise: f64 = pc
        .sigma
        .iter()
        .map(|s| {
            let v: f64 = (0..d).map(|i| s[i] * xi[i]).sum();
            v * v
        })
        .sum();
    2.0 * q - noise
}

pub fn parabolic_defect(coeffs: &CoefficientSet, t: f64, x: &[f64], xi: &[f64]) -> Result<f64> {
    if xi.len() != coeffs.dim || xi.iter().all(|v| *v == 0.0) {
        return Err(Error::Argument("xi must be a nonzero vector of length d".into()));
    }
    Ok(defect_of(&coeffs.sample(t, x)?, xi))
}

/// A sampled `(t, x, ξ)` and its normalized defect `𝒜(ξ)/|ξ|² − κ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParabolicityReport {
    pub min_defect: f64,
    pub kappa_floor: f64,
    pub alpha: Option<f64>,
    pub tolerance: f64,
    pub witnesses: Vec<Witness>,
}

impl ParabolicityReport {
    pub fn passes(&self) -> bool {
        self.min_defect >= -self.tolerance
    }
}

const WITNESS_COUNT: usize = 5;

/// Keeps the `WITNESS_COUNT` smallest defects seen.
#[derive(Debug, Default)]
pub(crate) struct WitnessPool {
    min: f64,
    items: Vec<Witness>,
}

impl WitnessPool {
    pub(crate) fn new() -> Self {
        Self {
            min: f64::INFINITY,
            items: Vec::new(),
        }
    }

    pub(crate) fn offer(&mut self, t: f64, x: &[f64], xi: &[f64], defect: f64) {
        self.min = self.min.min(defect);
        let worst = self.items.last().map_or(f64::INFINITY, |w| w.defect);
        if self.items.len() < WITNESS_COUNT || defect < worst {
            let w = Witness {
                t,
                x: x.to_vec(),
                xi: xi.to_vec(),
                defect,
            };
            let pos = self.items.partition_point(|v| v.defect <= defect);
            self.items.insert(pos, w);
            self.items.truncate(WITNESS_COUNT);
        }
    }

    pub(crate) fn finish(self, kappa_floor: f64, tolerance: f64) -> ParabolicityReport {
        ParabolicityReport {
            min_defect: self.min,
            kappa_floor,
            alpha: None,
            tolerance,
            witnesses: self.items,
        }
    }
}

/// Unit directions: the `d` axes followed by `n_dirs − d` uniform samples
/// on the sphere from a ChaCha stream seeded with `seed`.
pub fn sample_directions(dim: usize, n_dirs: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..dim)
        .map(|k| (0..dim).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    while out.len() < n_dirs {
        if dim == 1 {
            out.push(vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]);
        } else {
            let th: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            out.push(vec![th.cos(), th.sin()]);
        }
    }
    out
}

/// Unit eigenvector for the smallest eigenvalue of a symmetric 2×2 matrix.
pub(crate) fn min_eigenvector_2x2(m: [[f64; 2]; 2]) -> [f64; 2] {
    let (p, q, r) = (m[0][0], m[0][1], m[1][1]);
    if q == 0.0 {
        return if p <= r { [1.0, 0.0] } else { [0.0, 1.0] };
    }
    let half_diff = 0.5 * (p - r);
    let lam = 0.5 * (p + r) - (half_diff * half_diff + q * q).sqrt();
    // (p − λ) v0 + q v1 = 0 and q v0 + (r − λ) v1 = 0; use the better
    // conditioned row.
    let v = if (p - lam).abs() >= (r - lam).abs() {
        [-q, p - lam]
    } else {
        [r - lam, -q]
    };
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub(crate) fn min_eigenvalue_2x2(m: [[f64; 2]; 2]) -> f64 {
    let (p, q, r) = (m[0][0], m[0][1], m[1][1]);
    let half_diff = 0.5 * (p - r);
    0.5 * (p + r) - (half_diff * half_diff + q * q).sqrt()
}

/// The defect quadratic form as a matrix: `Q = 2a − Σ_l σ_l σ_lᵀ`.
pub(crate) fn defect_matrix(pc: &PointCoefficients) -> [[f64; 2]; 2] {
    let mut q = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            q[i][j] = 2.0 * pc.a[i][j] - pc.sigma.iter().map(|s| s[i] * s[j]).sum::<f64>();
        }
    }
    q
}

/// Minimum of `𝒜(ξ)/|ξ|² − κ(x)` over all times, grid points and the
/// direction set. In two dimensions the set is augmented per point with the
/// eigenvector of the smallest eigenvalue of `2a − σσᵀ`, so the minimum is the
/// exact pointwise minimum whenever that vector is sampled.
pub fn verify_parabolicity(
    coeffs: &CoefficientSet,
    grid: &Grid,
    times: &[f64],
    kappa: &dyn ScalarField,
    n_dirs: usize,
    seed: u64,
) -> Result<ParabolicityReport> {
    if grid.is_empty() || times.is_empty() {
        return Err(Error::Config("parabolicity check needs a grid and at least one time".into()));
    }
    let d = coeffs.dim;
    if n_dirs < 2 * d {
        return Err(Error::Argument(format!("need at least {} directions", 2 * d)));
    }
    let dirs = sample_directions(d, n_dirs, seed);
    let mut pool = WitnessPool::new();
    let mut kappa_floor = f64::INFINITY;
    for &t in times {
        for p in grid.points() {
            let x = &p[..d];
            let pc = coeffs.sample(t, x)?;
            let k = eval(kappa, "kappa", t, x)?;
            kappa_floor = kappa_floor.min(k);
            for xi in &dirs {
                pool.offer(t, x, xi, defect_of(&pc, xi) - k);
            }
            if d == 2 {
                let v = min_eigenvector_2x2(defect_matrix(&pc));
                pool.offer(t, x, &v, defect_of(&pc, &v) - k);
            }
        }
    }
    Ok(pool.finish(kappa_floor.max(0.0), PARABOLICITY_TOL))
}

/// `(2α − 1)/(1 + α)`, the coercivity constant left over when the margin
/// `|σ̂ᵀξ|² − α|σᵀξ|²` is non-negative.
pub fn coercivity_constant(alpha: f64) -> Result<f64> {
    if !(alpha > 0.5) {
        return Err(Error::Argument(format!("alpha must exceed 1/2, got {alpha}")));
    }
    Ok((2.0 * alpha - 1.0) / (1.0 + alpha))
}

/// `|σ̂ᵀξ|² − α|σᵀξ|²`.
pub fn factorized_margin(
    coeffs: &CoefficientSet,
    alpha: f64,
    t: f64,
    x: &[f64],
    xi: &[f64],
) -> Result<f64> {
    coercivity_constant(alpha)?;
    let sh = coeffs
        .sigma_hat
        .as_ref()
        .ok_or_else(|| Error::Config("factorized margin needs sigma_hat".into()))?;
    let s = coeffs.sample_sigma_hat(sh, t, x)?;
    let pc = coeffs.sample(t, x)?;
    let d = coeffs.dim;
    let hat: f64 = (0..s[0].len())
        .map(|k| {
            let v: f64 = (0..d).map(|i| s[i][k] * xi[i]).sum();
            v * v
        })
        .sum();
    let noise: f64 = pc
        .sigma
        .iter()
        .map(|col| {
            let v: f64 = (0..d).map(|i| col[i] * xi[i]).sum();
            v * v
        })
        .sum();
    Ok(hat - alpha * noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Family;
    use proptest::prelude::*;

    fn transport() -> CoefficientSet {
        let mut c = CoefficientSet::isotropic(1, 1, 0.5);
        c.sigma[0][0] = field::constant(1.0);
        c
    }

    #[test]
    fn defect_examples() {
        let c = CoefficientSet::isotropic(2, 0, 1.0);
        assert_eq!(parabolic_defect(&c, 0.0, &[0.0, 0.0], &[1.0, 0.0]).unwrap(), 2.0);

        let mut c = CoefficientSet::isotropic(1, 2, 1.0);
        c.sigma[0][0] = field::constant(1.0);
        c.sigma[0][1] = field::constant(1.0);
        assert_eq!(parabolic_defect(&c, 0.0, &[0.3], &[1.0]).unwrap(), 0.0);

        assert!(parabolic_defect(&c, 0.0, &[0.3], &[0.0]).is_err());
    }

    #[test]
    fn half_sigma_sigma_t_is_exactly_degenerate() {
        let s = [[0.5, -1.25, 2.0], [1.5, 0.75, -0.5]];
        let mut c = CoefficientSet::zero(2, 3);
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..3).map(|l| s[i][l] * s[j][l]).sum::<f64>() / 2.0;
                c.a[i][j] = field::constant(v);
            }
            for l in 0..3 {
                c.sigma[i][l] = field::constant(s[i][l]);
            }
        }
        for xi in [[1.0, 0.0], [0.6, -0.8], [0.25, 4.0]] {
            let v = parabolic_defect(&c, 0.0, &[0.0, 0.0], &xi).unwrap();
            assert!(v.abs() < 1e-13, "{v}");
        }
    }

    #[test]
    fn non_finite_field_is_named() {
        let mut c = CoefficientSet::zero(1, 1);
        c.h[0] = crate::field::FnField::new("bad", true, |_, _| f64::NAN);
        match parabolic_defect(&c, 0.0, &[0.0], &[1.0]) {
            Err(Error::Evaluation { field, .. }) => assert_eq!(field, "h[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn heat_and_transport_reports() {
        let g = Grid::uniform_1d(-1.0, 1.0, 16).unwrap();
        let heat = CoefficientSet::isotropic(1, 0, 0.5);
        let r = verify_parabolicity(&heat, &g, &[0.0], &Family::constant(1.0), 4, 1).unwrap();
        assert_eq!(r.min_defect, 0.0);
        assert!(r.passes());
        let r = verify_parabolicity(&transport(), &g, &[0.0], &Family::zero(), 4, 1).unwrap();
        assert_eq!(r.min_defect, 0.0);
        assert!(r.passes());
        assert!(verify_parabolicity(&heat, &g, &[], &Family::zero(), 4, 1).is_err());
    }

    #[test]
    fn min_defect_is_recomputed_by_brute_force() {
        let g = Grid::uniform_2d(-1.0, 1.0, 16).unwrap();
        let mut c = CoefficientSet::isotropic(2, 1, 1.0);
        c.set_a(
            0,
            1,
            Family::Sinusoidal {
                amplitude: 0.4,
                wavenumber: vec![1.0, 2.0],
                phase: 0.0,
                offset: 0.0,
                omega: 0.0,
            }
            .into_field(),
        );
        c.sigma[0][0] = field::constant(0.8);
        let times = [0.0, 0.5];
        let r = verify_parabolicity(&c, &g, &times, &Family::zero(), 8, 3).unwrap();
        let dirs = sample_directions(2, 8, 3);
        let mut brute = f64::INFINITY;
        for &t in &times {
            for p in g.points() {
                let pc = c.sample(t, &p).unwrap();
                for xi in &dirs {
                    brute = brute.min(defect_of(&pc, xi));
                }
                brute = brute.min(defect_of(&pc, &min_eigenvector_2x2(defect_matrix(&pc))));
            }
        }
        assert_eq!(r.min_defect, brute);
        assert_eq!(r.witnesses[0].defect, brute);
        assert!(r.witnesses.windows(2).all(|w| w[0].defect <= w[1].defect));
    }

    #[test]
    fn margin_examples() {
        assert_eq!(coercivity_constant(1.0).unwrap(), 0.5);
        assert_eq!(coercivity_constant(2.0).unwrap(), 1.0);
        assert!(coercivity_constant(0.5).is_err());

        let mut c = transport();
        assert!(factorized_margin(&c, 1.0, 0.0, &[0.0], &[1.0]).is_err());
        c.sigma_hat = Some(vec![vec![field::constant(1.0)]]);
        assert_eq!(factorized_margin(&c, 1.0, 0.0, &[0.0], &[1.0]).unwrap(), 0.0);
        c.sigma_hat = Some(vec![vec![field::constant(2f64.sqrt())]]);
        let m = factorized_margin(&c, 2.0, 0.0, &[0.0], &[0.7]).unwrap();
        assert!(m.abs() < 1e-15);
    }

    #[test]
    fn validate_catches_factorization_mismatch() {
        let g = Grid::uniform_1d(-1.0, 1.0, 16).unwrap();
        let mut c = CoefficientSet::isotropic(1, 0, 1.0);
        c.sigma_hat = Some(vec![vec![field::constant(1.0)]]);
        c.validate(&g, &[0.0]).unwrap();
        c.sigma_hat = Some(vec![vec![field::constant(1.1)]]);
        assert!(matches!(c.validate(&g, &[0.0]), Err(Error::Validation { .. })));
    }

    proptest! {
        #[test]
        fn defect_is_even_and_two_homogeneous(
            a in 0.0f64..3.0, off in -1.0f64..1.0, s0 in -2.0f64..2.0, s1 in -2.0f64..2.0,
            x0 in -1.0f64..1.0, x1 in -1.0f64..1.0, s in -5.0f64..5.0,
        ) {
            let mut c = CoefficientSet::isotropic(2, 1, a);
            c.set_a(0, 1, field::constant(off));
            c.sigma[0][0] = field::constant(s0);
            c.sigma[1][0] = field::constant(s1);
            prop_assume!(x0 != 0.0 || x1 != 0.0);
            let p = parabolic_defect(&c, 0.0, &[0.0, 0.0], &[x0, x1]).unwrap();
            let m = parabolic_defect(&c, 0.0, &[0.0, 0.0], &[-x0, -x1]).unwrap();
            prop_assert_eq!(p, m);
            prop_assume!(s != 0.0);
            let q = parabolic_defect(&c, 0.0, &[0.0, 0.0], &[s * x0, s * x1]).unwrap();
            prop_assert!((q - s * s * p).abs() <= 1e-12 * (1.0 + q.abs()));
        }

        #[test]
        fn nonnegative_margin_implies_parabolicity(
            sh in proptest::collection::vec(-2.0f64..2.0, 4),
            alpha in 0.51f64..3.0,
            dir in 0.0f64..6.3,
        ) {
            // σ = σ̂ v / √α along one direction keeps the margin ≥ 0.
            let mut c = CoefficientSet::zero(2, 1);
            for i in 0..2 {
                for j in 0..2 {
                    let v = sh[2 * i] * sh[2 * j] + sh[2 * i + 1] * sh[2 * j + 1];
                    c.a[i][j] = field::constant(v);
                }
            }
            let (cs, sn) = (dir.cos(), dir.sin());
            for i in 0..2 {
                c.sigma[i][0] = field::constant((sh[2 * i] * cs + sh[2 * i + 1] * sn) / alpha.sqrt());
            }
            c.sigma_hat = Some(vec![
                vec![field::constant(sh[0]), field::constant(sh[1])],
                vec![field::constant(sh[2]), field::constant(sh[3])],
            ]);
            let g = Grid::uniform_2d(-1.0, 1.0, 16).unwrap();
            for xi in sample_directions(2, 16, 9) {
                prop_assert!(factorized_margin(&c, alpha, 0.0, &[0.0, 0.0], &xi).unwrap() >= -1e-12);
            }
            let r = verify_parabolicity(&c, &g, &[0.0], &Family::zero(), 16, 9).unwrap();
            prop_assert!(r.passes(), "min {}", r.min_defect);
        }
    }
}
