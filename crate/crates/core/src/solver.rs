//! Finite-volume discretization of `ℒ` and `ℳ^l` and the semi-implicit
//! stepper. The noise term is Euler-Maruyama, plus the Milstein correction
//! by default when the noise operators commute.
//!
//! ```text
//! (I − θ dt ℒ_h) u_{n+1} = u_n + (1−θ) dt ℒ_h u_n + dt f_n + S_n
//! S_n = Σ_l (ℳ_h^l u_n + g_n^l) ΔB^l  [+ ½ Σ_{l,k} ℳ_h^l(ℳ_h^k u_n + g_n^k)(ΔB^l ΔB^k − δ_lk dt)]
//! ```
//!
//! `ℒ_h` is assembled in flux form: every interior face carries one flux
//! that is added to the cell on its left and subtracted from the cell on its
//! right, so with `c = 0` and zero-flux walls the columns sum to zero and
//! mass is conserved to rounding. The generator and `f` are evaluated at the
//! midpoint `t_n + dt/2`; the noise coefficients at the left point `t_n`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{Boundary, DensityField, Grid};
use crate::linalg::{BandedLu, SparseMatrix};
use crate::model::{min_eigenvalue_2x2, CoefficientSet};
use crate::mollifier::{mollify_coefficients, mollify_field, MollifierParams};
use crate::noise::BrownianPath;
use crate::testfn::TestFunction;

/// Slack on the discrete degeneracy margin `2a − |σ|²` at faces.
pub const MARGIN_TOL: f64 = 1e-12;

/// Treatment of the explicit noise term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScheme {
    EulerMaruyama,
    /// Euler-Maruyama plus `½ Σ_{l,k} ℳ^l(ℳ^k u + g^k)(ΔB^l ΔB^k − δ_lk dt)`
    /// when the noise operators commute (one driver, or `σ ≡ 0`); plain
    /// Euler-Maruyama otherwise.
    #[default]
    Milstein,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    /// Implicitness of the generator, in `[½, 1]`.
    pub theta: f64,
    pub stability_guard: bool,
    /// Run the mollified approximation at this scale instead of the raw
    /// coefficients.
    pub mollify: Option<f64>,
    pub noise: NoiseScheme,
}

impl SolverConfig {
    pub fn new(dt: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            theta: 1.0,
            stability_guard: true,
            mollify: None,
            noise: NoiseScheme::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation {
                path: "time.dt".into(),
                message: format!("dt must be positive and finite, got {}", self.dt),
            });
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::Validation {
                path: "time.theta".into(),
                message: format!("theta must lie in [0.5, 1], got {}", self.theta),
            });
        }
        Ok(())
    }
}

/// Which steps are kept as snapshots.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputSchedule {
    EveryStep,
    /// Every `k`-th step, plus the last one.
    Stride(usize),
    /// The steps nearest to these times.
    Times(Vec<f64>),
}

impl OutputSchedule {
    /// Step indices to record for a run of `n_steps` steps.
    pub fn steps(&self, dt: f64, n_steps: usize) -> Result<Vec<usize>> {
        match self {
            OutputSchedule::EveryStep => Ok((0..=n_steps).collect()),
            OutputSchedule::Stride(k) => {
                if *k == 0 {
                    return Err(Error::Argument("output stride must be positive".into()));
                }
                let mut s: Vec<usize> = (0..=n_steps).step_by(*k).collect();
                if s.last() != Some(&n_steps) {
                    s.push(n_steps);
                }
                Ok(s)
            }
            OutputSchedule::Times(ts) => {
                let mut s = Vec::with_capacity(ts.len());
                for &t in ts {
                    let n = (t / dt).round();
                    if !(n >= 0.0 && n <= n_steps as f64) {
                        return Err(Error::Argument(format!(
                            "output time {t} lies outside [0, {}]",
                            n_steps as f64 * dt
                        )));
                    }
                    let n = n as usize;
                    if s.last().is_some_and(|&m| m >= n) {
                        return Err(Error::Argument(
                            "output times must be strictly increasing on the step lattice".into(),
                        ));
                    }
                    s.push(n);
                }
                Ok(s)
            }
        }
    }
}

/// Per-step bookkeeping, recorded at every step regardless of the
/// snapshot schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub t: f64,
    pub mass: f64,
    pub l2: f64,
    /// Cumulative signed defect of the discrete energy balance.
    pub energy_defect: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Arc<Grid>,
    pub dt: f64,
    pub snapshots: Vec<DensityField>,
    pub series: Vec<SeriesPoint>,
    /// Largest mass fraction seen in the outermost cell layer.
    pub max_boundary_fraction: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &DensityField {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// True when every step was recorded.
    pub fn is_dense(&self) -> bool {
        self.snapshots.len() == self.series.len()
    }

    /// Summed absolute energy defect.
    pub fn energy_defect(&self) -> f64 {
        self.series.last().map_or(0.0, |p| p.energy_defect.abs())
    }
}

fn sample(field: &dyn ScalarField, name: &str, grid: &Grid, t: f64) -> Result<Vec<f64>> {
    let d = grid.dim();
    let mut out = Vec::with_capacity(grid.len());
    for p in grid.points() {
        let v = field.value(t, &p[..d]);
        if !v.is_finite() {
            return Err(Error::Evaluation {
                field: name.to_string(),
                t,
                x: p[..d].to_vec(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

fn check_dims(coeffs: &CoefficientSet, grid: &Grid) -> Result<()> {
    if coeffs.dim != grid.dim() {
        return Err(Error::Config(format!(
            "grid dimension {} does not match coefficient dimension {}",
            grid.dim(),
            coeffs.dim
        )));
    }
    Ok(())
}

/// Neighbour of `q` one cell along axis `l` in direction `dir`, following
/// the boundary rule: zero-flux mirrors the cell itself, zero-value drops
/// the entry (ghost value 0).
fn neighbour(grid: &Grid, q: usize, l: usize, forward: bool) -> Option<usize> {
    let mi = grid.multi_index(q);
    let s = grid.stride(l);
    let inside = if forward {
        mi[l] + 1 < grid.axis(l).n
    } else {
        mi[l] > 0
    };
    match (inside, grid.boundary()) {
        (true, _) => Some(if forward { q + s } else { q - s }),
        (false, Boundary::ZeroFlux) => Some(q),
        (false, Boundary::ZeroValue) => None,
    }
}

/// `ℒ_h` at time `t`.
pub fn assemble_generator(coeffs: &CoefficientSet, grid: &Grid, t: f64) -> Result<SparseMatrix> {
    check_dims(coeffs, grid)?;
    let d = grid.dim();
    let n = grid.len();
    let mut a = vec![vec![Vec::new(); d]; d];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = sample(coeffs.a[i][j].as_ref(), &format!("a[{i}][{j}]"), grid, t)?;
        }
    }
    if d == 2 {
        for p in 0..n {
            let (x, y) = (a[0][1][p], a[1][0][p]);
            if (x - y).abs() > 1e-14 * (1.0 + x.abs()) {
                let pt = grid.point(p);
                return Err(Error::Invariant(format!(
                    "a is not symmetric at t={t}, x={:?}: a01={x}, a10={y}",
                    &pt[..d]
                )));
            }
        }
    }
    let b: Vec<Vec<f64>> = (0..d)
        .map(|i| sample(coeffs.b[i].as_ref(), &format!("b[{i}]"), grid, t))
        .collect::<Result<_>>()?;
    let c = sample(coeffs.c.as_ref(), "c", grid, t)?;

    let zero_value = grid.boundary() == Boundary::ZeroValue;
    let mut trip = Vec::with_capacity(n * if d == 1 { 8 } else { 32 });
    let mut flux: Vec<(usize, f64)> = Vec::with_capacity(12);
    for k in 0..d {
        let hk = grid.spacing(k);
        let nk = grid.axis(k).n;
        let sk = grid.stride(k);
        for p in 0..n {
            let mi = grid.multi_index(p);
            if mi[k] + 1 < nk {
                let e = p + sk;
                flux.clear();
                let af = 0.5 * (a[k][k][p] + a[k][k][e]);
                flux.push((e, af / hk));
                flux.push((p, -af / hk));
                flux.push((p, 0.5 * b[k][p]));
                flux.push((e, 0.5 * b[k][e]));
                for l in (0..d).filter(|&l| l != k) {
                    let akl = 0.5 * (a[k][l][p] + a[k][l][e]);
                    if akl == 0.0 {
                        continue;
                    }
                    let w = akl / (4.0 * grid.spacing(l));
                    for q in [p, e] {
                        if let Some(j) = neighbour(grid, q, l, true) {
                            flux.push((j, w));
                        }
                        if let Some(j) = neighbour(grid, q, l, false) {
                            flux.push((j, -w));
                        }
                    }
                }
                for &(j, v) in &flux {
                    trip.push((p, j, v / hk));
                    trip.push((e, j, -v / hk));
                }
            }
            if zero_value {
                let (akk, bk) = (a[k][k][p], b[k][p]);
                if mi[k] == 0 {
                    trip.push((p, p, -(akk / hk + 0.5 * bk) / hk));
                }
                if mi[k] + 1 == nk {
                    trip.push((p, p, (-akk / hk + 0.5 * bk) / hk));
                }
            }
        }
    }
    for (p, &cp) in c.iter().enumerate() {
        if cp != 0.0 {
            trip.push((p, p, cp));
        }
    }
    Ok(SparseMatrix::from_triplets(n, trip))
}

/// `ℳ_h^l` at time `t`: central differences, with face values taken as
/// zero on the outer faces.
pub fn assemble_noise_op(coeffs: &CoefficientSet, grid: &Grid, t: f64, l: usize) -> Result<SparseMatrix> {
    check_dims(coeffs, grid)?;
    if l >= coeffs.drivers {
        return Err(Error::Argument(format!(
            "driver index {l} out of range for {} drivers",
            coeffs.drivers
        )));
    }
    let d = grid.dim();
    let n = grid.len();
    let mut trip = Vec::with_capacity(n * (2 * d + 1) * 2);
    for i in 0..d {
        let field = &coeffs.sigma[i][l];
        if field.is_zero() {
            continue;
        }
        let s = sample(field.as_ref(), &format!("sigma[{i}][{l}]"), grid, t)?;
        let w = 0.5 / grid.spacing(i);
        let ni = grid.axis(i).n;
        let si = grid.stride(i);
        for p in 0..n {
            let mi = grid.multi_index(p);
            let coef = s[p] * w;
            // (ū_{p+½} − ū_{p−½})/h with ū the face average, zero outside
            if mi[i] + 1 < ni {
                trip.push((p, p + si, coef));
                trip.push((p, p, coef));
            }
            if mi[i] > 0 {
                trip.push((p, p - si, -coef));
                trip.push((p, p, -coef));
            }
        }
    }
    let h = sample(coeffs.h[l].as_ref(), &format!("h[{l}]"), grid, t)?;
    for (p, &hp) in h.iter().enumerate() {
        if hp != 0.0 {
            trip.push((p, p, hp));
        }
    }
    Ok(SparseMatrix::from_triplets(n, trip))
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// The stability guard: `dt Σ_l ‖σ^{·l}‖∞² / h² ≤ 1` and `2a − σσᵀ` not
/// negative at any interior face.
pub fn stability_check(coeffs: &CoefficientSet, grid: &Grid, t: f64, dt: f64) -> Result<()> {
    let d = grid.dim();
    let n = grid.len();
    let h = grid.min_spacing();
    let mut sig = vec![vec![Vec::new(); coeffs.drivers]; d];
    let mut total = 0.0;
    for i in 0..d {
        for l in 0..coeffs.drivers {
            sig[i][l] = sample(coeffs.sigma[i][l].as_ref(), &format!("sigma[{i}][{l}]"), grid, t)?;
        }
    }
    for l in 0..coeffs.drivers {
        let col: f64 = (0..d).map(|i| sup_abs(&sig[i][l]).powi(2)).sum();
        total += col;
    }
    if total > 0.0 && dt * total / (h * h) > 1.0 {
        return Err(Error::Stability {
            reason: format!(
                "dt Σ‖σ‖²/h² = {:.4} exceeds 1 at t={t}",
                dt * total / (h * h)
            ),
            suggested_dt: h * h / total,
        });
    }
    if total == 0.0 {
        return Ok(());
    }
    let mut a = vec![vec![Vec::new(); d]; d];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = sample(coeffs.a[i][j].as_ref(), &format!("a[{i}][{j}]"), grid, t)?;
        }
    }
    for k in 0..d {
        let sk = grid.stride(k);
        for p in 0..n {
            if grid.multi_index(p)[k] + 1 >= grid.axis(k).n {
                continue;
            }
            let e = p + sk;
            let mut q = [[0.0; 2]; 2];
            for i in 0..d {
                for j in 0..d {
                    let af = 0.5 * (a[i][j][p] + a[i][j][e]);
                    let ss: f64 = (0..coeffs.drivers)
                        .map(|l| 0.25 * (sig[i][l][p] + sig[i][l][e]) * (sig[j][l][p] + sig[j][l][e]))
                        .sum();
                    q[i][j] = 2.0 * af - ss;
                }
            }
            let m = if d == 1 { q[0][0] } else { min_eigenvalue_2x2(q) };
            if m < -MARGIN_TOL {
                let pt = grid.point(p);
                return Err(Error::Stability {
                    reason: format!(
                        "degeneracy margin 2a − |σ|² = {m:e} at the face after x={:?}, t={t}",
                        &pt[..d]
                    ),
                    suggested_dt: h * h / total,
                });
            }
        }
    }
    Ok(())
}

/// Externally supplied source terms for one step, replacing `f` and `g`.
#[derive(Debug, Clone, Default)]
pub struct StepSources {
    pub f: Option<Vec<f64>>,
    pub g: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub u: Vec<f64>,
    /// Defect of the discrete energy balance over this step.
    pub energy_defect: f64,
}

struct Generator {
    op: SparseMatrix,
    lu: BandedLu,
}

/// Steps one coefficient set on one grid, caching every operator that does
/// not depend on time.
pub struct Stepper {
    coeffs: CoefficientSet,
    grid: Arc<Grid>,
    cfg: SolverConfig,
    generator: Option<Generator>,
    noise: Option<Vec<SparseMatrix>>,
    f: Option<Vec<f64>>,
    g: Option<Vec<Vec<f64>>>,
}

impl Stepper {
    pub fn new(coeffs: &CoefficientSet, grid: Arc<Grid>, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        check_dims(coeffs, &grid)?;
        Ok(Self {
            coeffs: coeffs.clone(),
            grid,
            cfg: *cfg,
            generator: None,
            noise: None,
            f: None,
            g: None,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coeffs
    }

    fn generator(&self, t: f64) -> Result<Generator> {
        let op = assemble_generator(&self.coeffs, &self.grid, t)?;
        let lhs = op.shifted(1.0, -self.cfg.theta * self.cfg.dt);
        let lu = BandedLu::factor(&lhs)?;
        Ok(Generator { op, lu })
    }

    fn noise_ops(&self, t: f64) -> Result<Vec<SparseMatrix>> {
        if self.cfg.stability_guard {
            stability_check(&self.coeffs, &self.grid, t, self.cfg.dt)?;
        }
        (0..self.coeffs.drivers)
            .map(|l| assemble_noise_op(&self.coeffs, &self.grid, t, l))
            .collect()
    }

    /// One step from `t` with increments `db`.
    pub fn step_at(
        &mut self,
        u: &[f64],
        t: f64,
        db: &[f64],
        sources: Option<&StepSources>,
    ) -> Result<StepOutput> {
        let grid = self.grid.clone();
        let n = grid.len();
        let dt = self.cfg.dt;
        let theta = self.cfg.theta;
        if u.len() != n {
            return Err(Error::Argument(format!("state has {} values, grid has {n}", u.len())));
        }
        if db.len() != self.coeffs.drivers {
            return Err(Error::Argument(format!(
                "{} increments for {} drivers",
                db.len(),
                self.coeffs.drivers
            )));
        }
        let t_mid = t + 0.5 * dt;

        let fresh_gen;
        let gen = if self.coeffs.generator_time_invariant() {
            if self.generator.is_none() {
                self.generator = Some(self.generator(t_mid)?);
            }
            self.generator.as_ref().unwrap()
        } else {
            fresh_gen = self.generator(t_mid)?;
            &fresh_gen
        };

        let fresh_noise;
        let noise = if self.coeffs.noise_time_invariant() {
            if self.noise.is_none() {
                self.noise = Some(self.noise_ops(t)?);
            }
            self.noise.as_ref().unwrap()
        } else {
            fresh_noise = self.noise_ops(t)?;
            &fresh_noise
        };

        let f_own;
        let f: &[f64] = match sources.and_then(|s| s.f.as_deref()) {
            Some(v) => v,
            None if self.coeffs.f.is_time_invariant() => {
                if self.f.is_none() {
                    self.f = Some(sample(self.coeffs.f.as_ref(), "f", &grid, t_mid)?);
                }
                self.f.as_deref().unwrap()
            }
            None => {
                f_own = sample(self.coeffs.f.as_ref(), "f", &grid, t_mid)?;
                &f_own
            }
        };

        let g_own;
        let g: &[Vec<f64>] = match sources.and_then(|s| s.g.as_deref()) {
            Some(v) => v,
            None if self.coeffs.g.iter().all(|f| f.is_time_invariant()) => {
                if self.g.is_none() {
                    self.g = Some(
                        (0..self.coeffs.drivers)
                            .map(|l| sample(self.coeffs.g[l].as_ref(), &format!("g[{l}]"), &grid, t))
                            .collect::<Result<_>>()?,
                    );
                }
                self.g.as_deref().unwrap()
            }
            None => {
                g_own = (0..self.coeffs.drivers)
                    .map(|l| sample(self.coeffs.g[l].as_ref(), &format!("g[{l}]"), &grid, t))
                    .collect::<Result<Vec<_>>>()?;
                &g_own
            }
        };
        if f.len() != n || g.len() != self.coeffs.drivers || g.iter().any(|v| v.len() != n) {
            return Err(Error::Argument("source arrays do not match the grid".into()));
        }

        // S = Σ_l (ℳ^l u + g^l) ΔB^l
        let mut s = vec![0.0; n];
        for (l, &dbl) in db.iter().enumerate() {
            if dbl == 0.0 {
                continue;
            }
            let mu = noise[l].apply(u);
            for i in 0..n {
                s[i] += (mu[i] + g[l][i]) * dbl;
            }
        }
        let commuting = self.coeffs.drivers == 1 || self.coeffs.sigma_is_zero();
        if self.cfg.noise == NoiseScheme::Milstein && commuting && db.iter().any(|&v| v != 0.0) {
            let d1 = db.len();
            for k in 0..d1 {
                let mut inner = noise[k].apply(u);
                for i in 0..n {
                    inner[i] += g[k][i];
                }
                for (l, op) in noise.iter().enumerate() {
                    let w = db[l] * db[k] - if l == k { dt } else { 0.0 };
                    if w == 0.0 {
                        continue;
                    }
                    let mm = op.apply(&inner);
                    for i in 0..n {
                        s[i] += 0.5 * w * mm[i];
                    }
                }
            }
        }
        let lu_n = gen.op.apply(u);
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = u[i] + (1.0 - theta) * dt * lu_n[i] + dt * f[i] + s[i];
        }
        gen.lu.solve_in_place(&mut rhs);
        let next = rhs;
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            let p = grid.point(i);
            return Err(Error::Evaluation {
                field: "u".into(),
                t: t + dt,
                x: p[..grid.dim()].to_vec(),
            });
        }

        // ‖u_{n+1}‖² − ‖u_n‖² − 2dt⟨u_n, ℒu_n + f⟩ − 2⟨u_n, S⟩ − ‖S‖²
        let drift: Vec<f64> = lu_n.iter().zip(f).map(|(l, f)| l + f).collect();
        let defect = grid.inner(&next, &next)
            - grid.inner(u, u)
            - 2.0 * dt * grid.inner(u, &drift)
            - 2.0 * grid.inner(u, &s)
            - grid.inner(&s, &s);
        Ok(StepOutput {
            u: next,
            energy_defect: defect,
        })
    }

    /// Step `index` of a run, starting at `t = index·dt`.
    pub fn step(
        &mut self,
        u: &[f64],
        index: usize,
        db: &[f64],
        sources: Option<&StepSources>,
    ) -> Result<StepOutput> {
        self.step_at(u, index as f64 * self.cfg.dt, db, sources)
    }
}

/// One step of the scheme from `u` at time `t`.
pub fn step(
    u: &DensityField,
    t: f64,
    cfg: &SolverConfig,
    db: &[f64],
    coeffs: &CoefficientSet,
) -> Result<DensityField> {
    let mut st = Stepper::new(coeffs, u.grid.clone(), cfg)?;
    let out = st.step_at(&u.values, t, db, None)?;
    DensityField::new(u.grid.clone(), out.u, u.time_index + 1, t + cfg.dt)
}

/// Replaces the coefficients and initial data by their mollified versions
/// when `cfg.mollify` is set.
pub fn prepare(
    coeffs: &CoefficientSet,
    u0: &DensityField,
    cfg: &SolverConfig,
) -> Result<(CoefficientSet, DensityField)> {
    match cfg.mollify {
        None => Ok((coeffs.clone(), u0.clone())),
        Some(eps) => {
            let p = MollifierParams::new(eps)?;
            let c = mollify_coefficients(coeffs, &u0.grid, &p)?;
            let v = mollify_field(&u0.grid, &u0.values, &p, 1)?;
            Ok((c, DensityField::new(u0.grid.clone(), v, u0.time_index, u0.t)?))
        }
    }
}

fn check_path(cfg: &SolverConfig, path: &BrownianPath, drivers: usize) -> Result<()> {
    if (path.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::Argument(format!(
            "path dt {} differs from solver dt {}",
            path.dt(),
            cfg.dt
        )));
    }
    if path.drivers() != drivers && path.n_steps() > 0 && drivers > 0 {
        return Err(Error::Argument(format!(
            "path has {} drivers, coefficients have {drivers}",
            path.drivers()
        )));
    }
    Ok(())
}

/// Source callback: given the step index and current state, the sources
/// for that step.
pub type SourceFn<'a> = dyn FnMut(usize, &[f64]) -> Result<StepSources> + 'a;

/// Runs the scheme over every step of `path`.
pub fn solve(
    coeffs: &CoefficientSet,
    u0: &DensityField,
    cfg: &SolverConfig,
    path: &BrownianPath,
    schedule: &OutputSchedule,
) -> Result<Trajectory> {
    solve_with_sources(coeffs, u0, cfg, path, schedule, None)
}

pub fn solve_with_sources(
    coeffs: &CoefficientSet,
    u0: &DensityField,
    cfg: &SolverConfig,
    path: &BrownianPath,
    schedule: &OutputSchedule,
    mut sources: Option<&mut SourceFn<'_>>,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_path(cfg, path, coeffs.drivers)?;
    let (coeffs, u0) = prepare(coeffs, u0, cfg)?;
    let grid = u0.grid.clone();
    let n_steps = path.n_steps();
    let keep = schedule.steps(cfg.dt, n_steps)?;
    let mut stepper = Stepper::new(&coeffs, grid.clone(), cfg)?;

    let mut u = u0.values.clone();
    let mut cumulative = 0.0;
    let mut series = Vec::with_capacity(n_steps + 1);
    let mut snapshots = Vec::with_capacity(keep.len());
    let mut next_keep = keep.iter().peekable();
    let mut max_edge = grid.boundary_mass_fraction(&u);
    let mut record = |n: usize, u: &[f64], cumulative: f64, snapshots: &mut Vec<DensityField>| -> Result<()> {
        let t = n as f64 * cfg.dt;
        series.push(SeriesPoint {
            t,
            mass: grid.integrate(u),
            l2: grid.l2_norm(u),
            energy_defect: cumulative,
        });
        if next_keep.peek() == Some(&&n) {
            next_keep.next();
            snapshots.push(DensityField::new(grid.clone(), u.to_vec(), n, t)?);
        }
        Ok(())
    };
    record(0, &u, 0.0, &mut snapshots)?;
    let zeros = vec![0.0; coeffs.drivers];
    for n in 0..n_steps {
        let db = if coeffs.drivers == 0 {
            zeros.clone()
        } else {
            path.increments_at(n)
        };
        let src = match sources.as_mut() {
            Some(cb) => Some(cb(n, &u)?),
            None => None,
        };
        let out = stepper.step(&u, n, &db, src.as_ref())?;
        cumulative += out.energy_defect;
        u = out.u;
        max_edge = max_edge.max(grid.boundary_mass_fraction(&u));
        record(n + 1, &u, cumulative, &mut snapshots)?;
    }
    Ok(Trajectory {
        grid,
        dt: cfg.dt,
        snapshots,
        series,
        max_boundary_fraction: max_edge,
    })
}

/// `ℒ*φ = ∂_j(a^{ij}∂_iφ) − b^i∂_iφ + cφ`.
fn generator_adjoint(coeffs: &CoefficientSet, phi: &TestFunction, t: f64, x: &[f64]) -> f64 {
    let d = coeffs.dim;
    let g = phi.gradient(x);
    let hs = phi.hessian(x);
    let mut v = coeffs.c.value(t, x) * phi.value(x);
    for i in 0..d {
        v -= coeffs.b[i].value(t, x) * g[i];
        for j in 0..d {
            let a = &coeffs.a[i][j];
            v += a.value(t, x) * hs[i][j];
            if !a.is_zero() {
                v += a.partial(t, x, j) * g[i];
            }
        }
    }
    v
}

/// `ℳ^{l*}φ = −∂_i(σ^{il}φ) + h^lφ`.
fn noise_adjoint(coeffs: &CoefficientSet, l: usize, phi: &TestFunction, t: f64, x: &[f64]) -> f64 {
    let g = phi.gradient(x);
    let p = phi.value(x);
    let mut v = coeffs.h[l].value(t, x) * p;
    for i in 0..coeffs.dim {
        let s = &coeffs.sigma[i][l];
        if !s.is_zero() {
            v -= s.partial(t, x, i) * p + s.value(t, x) * g[i];
        }
    }
    v
}

/// Defect of the weak formulation against `phi` along a densely recorded
/// trajectory: the largest `|I(t_n)|` over steps, with
///
/// ```text
/// I(t_n) = ∫u_nφ − ∫u_0φ − Σ_{m<n} dt (∫u_m ℒ*φ + ∫fφ)
///          − Σ_l Σ_{m<n} (∫u_m ℳ^{l*}φ + ∫g^lφ) ΔB^l_m
/// ```
///
/// normalized by `sup_n |∫u_nφ| + 1`. Stochastic sums use the left point.
/// `sources`, when given, supplies `f` and `g` per step in place of the
/// coefficient fields.
pub fn weak_residual(
    traj: &Trajectory,
    phi: &TestFunction,
    coeffs: &CoefficientSet,
    path: &BrownianPath,
    sources: Option<&[StepSources]>,
) -> Result<f64> {
    let grid = traj.grid.clone();
    phi.check(&grid)?;
    if !traj.is_dense() {
        return Err(Error::Argument("weak residual needs every step recorded".into()));
    }
    let d = grid.dim();
    let dt = traj.dt;
    let n_steps = traj.snapshots.len() - 1;
    if coeffs.drivers > 0 && path.n_steps() < n_steps {
        return Err(Error::Argument("path shorter than trajectory".into()));
    }
    let phis: Vec<f64> = grid.points().map(|p| phi.value(&p[..d])).collect();
    let time_invariant = coeffs.is_time_invariant();
    let weights = |t: f64| -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let pts: Vec<[f64; 2]> = grid.points().collect();
        let lstar = pts.iter().map(|p| generator_adjoint(coeffs, phi, t, &p[..d])).collect();
        let fphi = pts.iter().map(|p| coeffs.f.value(t, &p[..d]) * phi.value(&p[..d])).collect();
        let mstar = (0..coeffs.drivers)
            .map(|l| pts.iter().map(|p| noise_adjoint(coeffs, l, phi, t, &p[..d])).collect())
            .collect();
        let gphi = (0..coeffs.drivers)
            .map(|l| {
                pts.iter()
                    .map(|p| coeffs.g[l].value(t, &p[..d]) * phi.value(&p[..d]))
                    .collect()
            })
            .collect();
        (lstar, fphi, mstar, gphi)
    };
    let fixed = if time_invariant { Some(weights(0.0)) } else { None };

    let pairing = |u: &[f64]| grid.inner(u, &phis);
    let base = pairing(&traj.snapshots[0].values);
    let mut sup_pair = base.abs();
    let mut worst = 0.0f64;
    let mut integral = 0.0;
    for m in 0..n_steps {
        let t = m as f64 * dt;
        let own;
        let (lstar, fphi, mstar, gphi) = match &fixed {
            Some(w) => (&w.0, &w.1, &w.2, &w.3),
            None => {
                own = weights(t);
                (&own.0, &own.1, &own.2, &own.3)
            }
        };
        let u = &traj.snapshots[m].values;
        let src = sources.map(|s| &s[m]);
        let f_term = match src.and_then(|s| s.f.as_ref()) {
            Some(f) => pairing(f),
            None => grid.integrate(fphi),
        };
        integral += dt * (grid.inner(u, lstar) + f_term);
        for l in 0..coeffs.drivers {
            let db = path.increment(m, l);
            let g_term = match src.and_then(|s| s.g.as_ref()) {
                Some(g) => pairing(&g[l]),
                None => grid.integrate(&gphi[l]),
            };
            integral += (grid.inner(u, &mstar[l]) + g_term) * db;
        }
        let now = pairing(&traj.snapshots[m + 1].values);
        sup_pair = sup_pair.max(now.abs());
        worst = worst.max((now - base - integral).abs());
    }
    Ok(worst / (sup_pair + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{self, Field, FnField};
    use crate::noise;
    use proptest::prelude::*;

    fn grid1(n: usize, lo: f64, hi: f64) -> Arc<Grid> {
        Arc::new(Grid::uniform_1d(lo, hi, n).unwrap())
    }

    fn gaussian(var: f64) -> Field {
        FnField::new("gaussian", true, move |_, x: &[f64]| {
            (-x[0] * x[0] / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        })
    }


    #[test]
    fn heat_stencil() {
        let g = grid1(16, 0.0, 1.0);
        let c = CoefficientSet::isotropic(1, 0, 1.0);
        let op = assemble_generator(&c, &g, 0.0).unwrap();
        let h2 = g.spacing(0).powi(2);
        for (j, w) in [(4, 1.0), (5, -2.0), (6, 1.0)] {
            assert!((op.get(5, j) * h2 - w).abs() < 1e-12);
        }
        assert!(op.column_sums().iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn constant_drift_annihilates_constants() {
        let g = grid1(32, -1.0, 1.0);
        let mut c = CoefficientSet::zero(1, 0);
        c.b[0] = field::constant(2.5);
        let op = assemble_generator(&c, &g, 0.0).unwrap();
        let out = op.apply(&vec![1.0; 32]);
        assert!(out[1..31].iter().all(|v| v.abs() < 1e-12));
    }

    fn smooth_set(dim: usize) -> CoefficientSet {
        let mut c = CoefficientSet::zero(dim, 1);
        c.a[0][0] = FnField::new("a", true, |_, x: &[f64]| 1.0 + 0.3 * x[0].sin());
        c.b[0] = FnField::new("b", true, |_, x: &[f64]| 0.5 * x[0].cos());
        c.c = FnField::new("c", true, |_, x: &[f64]| -0.2 * x[0] * x[0]);
        c.sigma[0][0] = FnField::new("sigma", true, |_, x: &[f64]| x[0].sin());
        c.h[0] = FnField::new("h", true, |_, x: &[f64]| x[0].cos());
        c
    }

    fn max_interior_error(op: &SparseMatrix, g: &Grid, u: impl Fn(f64) -> f64, exact: impl Fn(f64) -> f64) -> f64 {
        let vals: Vec<f64> = g.points().map(|p| u(p[0])).collect();
        let out = op.apply(&vals);
        (2..g.len() - 2)
            .map(|i| (out[i] - exact(g.point(i)[0])).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn generator_is_second_order() {
        let c = smooth_set(1);
        // ℒ sin = (a cos)' + (b sin)' + c sin
        let exact = |x: f64| {
            let a = 1.0 + 0.3 * x.sin();
            let da = 0.3 * x.cos();
            let b = 0.5 * x.cos();
            let db = -0.5 * x.sin();
            da * x.cos() - a * x.sin() + db * x.sin() + b * x.cos() - 0.2 * x * x * x.sin()
        };
        let errs: Vec<f64> = [64, 128]
            .iter()
            .map(|&n| {
                let g = grid1(n, -3.0, 3.0);
                let op = assemble_generator(&c, &g, 0.0).unwrap();
                max_interior_error(&op, &g, f64::sin, exact)
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn noise_operator_examples() {
        let g = grid1(32, -2.0, 2.0);
        let mut c = CoefficientSet::zero(1, 1);
        c.h[0] = field::constant(1.0);
        let op = assemble_noise_op(&c, &g, 0.0, 0).unwrap();
        assert_eq!(op, SparseMatrix::diagonal(&vec![1.0; 32]));
        assert!(matches!(assemble_noise_op(&c, &g, 0.0, 1), Err(Error::Argument(_))));

        let mut c = CoefficientSet::zero(1, 1);
        c.sigma[0][0] = field::constant(1.0);
        let op = assemble_noise_op(&c, &g, 0.0, 0).unwrap();
        let x: Vec<f64> = g.points().map(|p| p[0]).collect();
        let out = op.apply(&x);
        assert!(out[1..31].iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(op.column_sums().iter().all(|s| s.abs() < 1e-12));

        let c = smooth_set(1);
        let u = |x: f64| (-x * x).exp();
        let exact = |x: f64| x.sin() * (-2.0 * x) * u(x) + x.cos() * u(x);
        let errs: Vec<f64> = [64, 128]
            .iter()
            .map(|&n| {
                let g = grid1(n, -4.0, 4.0);
                let op = assemble_noise_op(&c, &g, 0.0, 0).unwrap();
                max_interior_error(&op, &g, u, exact)
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_coefficients_give_identity_step() {
        let g = grid1(32, -2.0, 2.0);
        let c = CoefficientSet::zero(1, 1);
        let u = DensityField::from_field(g.clone(), gaussian(0.3).as_ref()).unwrap();
        let cfg = SolverConfig::new(0.01).unwrap();
        let v = step(&u, 0.0, &cfg, &[0.7], &c).unwrap();
        assert_eq!(v.values, u.values);
    }

    #[test]
    fn multiplicative_noise_schemes() {
        let g = grid1(32, -2.0, 2.0);
        let mut c = CoefficientSet::zero(1, 1);
        c.h[0] = crate::field::constant(0.5);
        let u = DensityField::from_field(g.clone(), gaussian(0.3).as_ref()).unwrap();
        let (dt, db) = (0.01, 0.3);
        let mut cfg = SolverConfig::new(dt).unwrap();
        let v = step(&u, 0.0, &cfg, &[db], &c).unwrap();
        let milstein = 1.0 + 0.5 * db + 0.125 * (db * db - dt);
        for (a, b) in v.values.iter().zip(&u.values) {
            assert!((a - milstein * b).abs() < 1e-14);
        }
        cfg.noise = NoiseScheme::EulerMaruyama;
        let v = step(&u, 0.0, &cfg, &[db], &c).unwrap();
        for (a, b) in v.values.iter().zip(&u.values) {
            assert!((a - (1.0 + 0.5 * db) * b).abs() < 1e-14);
        }
    }

    #[test]
    fn heat_step_matches_gaussian_growth() {
        let g = grid1(512, -4.0, 4.0);
        let c = CoefficientSet::isotropic(1, 0, 0.5);
        let u = DensityField::from_field(g.clone(), gaussian(0.25).as_ref()).unwrap();
        let dt = 1e-3;
        let cfg = SolverConfig::new(dt).unwrap();
        let v = step(&u, 0.0, &cfg, &[], &c).unwrap();
        let exact = g.sample(gaussian(0.25 + dt).as_ref(), 0.0);
        let err: f64 = v.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // leading local error of implicit Euler is ½dt²·∂_t²u = ⅛dt²·∂⁴u,
        // largest at the centre where ∂⁴u = 3u(0)/v²
        let u00 = 1.0 / (2.0 * std::f64::consts::PI * 0.25f64).sqrt();
        let predicted = 0.125 * dt * dt * 3.0 * u00 / (0.25 * 0.25);
        assert!(err < 1.25 * predicted, "err {err} predicted {predicted}");
    }

    #[test]
    fn transport_step_matches_shift() {
        let mut c = CoefficientSet::isotropic(1, 1, 0.5);
        c.sigma[0][0] = field::constant(1.0);
        let u0 = |x: f64| (-x * x / 0.5).exp();
        let err = |n: usize, dt: f64| {
            let g = grid1(n, -6.0, 6.0);
            let db = 0.5 * dt.sqrt();
            let u = DensityField::new(g.clone(), g.points().map(|p| u0(p[0])).collect(), 0, 0.0).unwrap();
            let cfg = SolverConfig::new(dt).unwrap();
            let v = step(&u, 0.0, &cfg, &[db], &c).unwrap();
            let exact: Vec<f64> = g.points().map(|p| u0(p[0] + db)).collect();
            let diff: Vec<f64> = v.values.iter().zip(&exact).map(|(a, b)| a - b).collect();
            g.l2_norm(&diff)
        };
        let e1 = err(256, 1e-4);
        let e2 = err(512, 2.5e-5);
        // the one-step error is ½(dt − ΔB²)u'' to leading order, so it falls
        // about 4-fold when dt is quartered
        assert!(e2 < e1 / 3.0, "{e1} {e2}");
        let g = grid1(512, -6.0, 6.0);
        let d2: Vec<f64> = g
            .points()
            .map(|p| (-p[0] * p[0] / 0.5).exp() * (16.0 * p[0] * p[0] - 4.0))
            .collect();
        assert!(e1 < 0.5 * 1e-4 * g.l2_norm(&d2), "{e1}");
    }

    #[test]
    fn stability_guard() {
        let g = grid1(64, -2.0, 2.0);
        let mut c = CoefficientSet::isotropic(1, 1, 0.5);
        c.sigma[0][0] = field::constant(1.0);
        let err = stability_check(&c, &g, 0.0, 0.1).unwrap_err();
        match err {
            Error::Stability { suggested_dt, .. } => {
                assert!((suggested_dt - g.spacing(0).powi(2)).abs() < 1e-15)
            }
            e => panic!("{e}"),
        }
        stability_check(&c, &g, 0.0, 1e-4).unwrap();
        c.a[0][0] = field::constant(0.4);
        assert!(matches!(stability_check(&c, &g, 0.0, 1e-4), Err(Error::Stability { .. })));
    }

    #[test]
    fn asymmetric_a_rejected() {
        let g = Grid::uniform_2d(-1.0, 1.0, 16).unwrap();
        let mut c = CoefficientSet::isotropic(2, 0, 1.0);
        c.a[0][1] = field::constant(0.1);
        assert!(matches!(assemble_generator(&c, &g, 0.0), Err(Error::Invariant(_))));
    }

    #[test]
    fn two_d_conserves_mass_with_cross_terms() {
        let g = Arc::new(Grid::uniform_2d(-3.0, 3.0, 24).unwrap());
        let mut c = CoefficientSet::isotropic(2, 1, 0.6);
        c.set_a(0, 1, FnField::new("a01", true, |_, x: &[f64]| 0.2 * x[0].sin()));
        c.b[1] = FnField::new("b1", true, |_, x: &[f64]| x[0] * 0.3);
        c.sigma[0][0] = field::constant(0.5);
        let op = assemble_generator(&c, &g, 0.0).unwrap();
        assert!(op.column_sums().iter().all(|s| s.abs() < 1e-10));
        let u0 = FnField::new("bump", true, |_, x: &[f64]| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let u = DensityField::from_field(g.clone(), u0.as_ref()).unwrap();
        let path = noise::generate(3, 1, 50, 1e-3).unwrap();
        let cfg = SolverConfig::new(1e-3).unwrap();
        let tr = solve(&c, &u, &cfg, &path, &OutputSchedule::Stride(10)).unwrap();
        let m0 = tr.series[0].mass;
        for s in &tr.series {
            assert!((s.mass - m0).abs() <= 1e-12 * m0);
        }
    }

    #[test]
    fn zero_value_boundary_loses_mass() {
        let g = Arc::new(Grid::uniform_1d(-1.0, 1.0, 32).unwrap().with_boundary(Boundary::ZeroValue));
        let c = CoefficientSet::isotropic(1, 0, 1.0);
        let u = DensityField::new(g.clone(), vec![1.0; 32], 0, 0.0).unwrap();
        let cfg = SolverConfig::new(1e-3).unwrap();
        let tr = solve(&c, &u, &cfg, &BrownianPath::empty(20, 1e-3), &OutputSchedule::EveryStep).unwrap();
        assert!(tr.series[20].mass < tr.series[0].mass);
    }

    #[test]
    fn schedule_and_path_checks() {
        let g = grid1(32, -2.0, 2.0);
        let c = CoefficientSet::zero(1, 0);
        let u = DensityField::new(g, vec![1.0; 32], 0, 0.0).unwrap();
        let cfg = SolverConfig::new(0.1).unwrap();
        let p = BrownianPath::empty(10, 0.1);
        let tr = solve(&c, &u, &cfg, &p, &OutputSchedule::Times(vec![0.0, 0.5, 1.0])).unwrap();
        assert_eq!(tr.times(), vec![0.0, 0.5, 1.0]);
        let tr = solve(&c, &u, &cfg, &p, &OutputSchedule::Stride(4)).unwrap();
        assert_eq!(tr.snapshots.iter().map(|s| s.time_index).collect::<Vec<_>>(), vec![0, 4, 8, 10]);
        assert!(solve(&c, &u, &cfg, &p, &OutputSchedule::Times(vec![0.5, 0.5])).is_err());
        assert!(solve(&c, &u, &cfg, &BrownianPath::empty(10, 0.2), &OutputSchedule::EveryStep).is_err());
        assert!(SolverConfig::new(0.0).is_err());
    }

    #[test]
    fn weak_residual_zero_run() {
        let g = grid1(64, -4.0, 4.0);
        let c = CoefficientSet::zero(1, 1);
        let u = DensityField::from_field(g, gaussian(0.5).as_ref()).unwrap();
        let cfg = SolverConfig::new(0.01).unwrap();
        let p = noise::generate(1, 1, 20, 0.01).unwrap();
        let tr = solve(&c, &u, &cfg, &p, &OutputSchedule::EveryStep).unwrap();
        let r = weak_residual(&tr, &TestFunction::gaussian(&[0.3], 0.3), &c, &p, None).unwrap();
        assert!(r <= 1e-12);
        assert!(matches!(
            weak_residual(&tr, &TestFunction::bump(&[3.5], 1.0), &c, &p, None),
            Err(Error::TestFunction(_))
        ));
    }

    #[test]
    fn weak_residual_detects_wrong_drift_sign() {
        let g = grid1(256, -6.0, 6.0);
        let mut good = CoefficientSet::isotropic(1, 1, 0.5);
        good.b[0] = field::constant(1.0);
        good.h[0] = FnField::new("h", true, |_, x: &[f64]| 0.5 * x[0].sin());
        let mut bad = good.clone();
        bad.b[0] = field::constant(-1.0);
        let u = DensityField::from_field(g, gaussian(0.3).as_ref()).unwrap();
        let cfg = SolverConfig::new(1e-3).unwrap();
        let p = noise::generate(9, 1, 300, 1e-3).unwrap();
        let phi = TestFunction::gaussian(&[0.5], 0.4);
        let tr = solve(&good, &u, &cfg, &p, &OutputSchedule::EveryStep).unwrap();
        let r_good = weak_residual(&tr, &phi, &good, &p, None).unwrap();
        let tr = solve(&bad, &u, &cfg, &p, &OutputSchedule::EveryStep).unwrap();
        let r_bad = weak_residual(&tr, &phi, &good, &p, None).unwrap();
        assert!(r_bad > 10.0 * r_good, "{r_good} {r_bad}");
    }

    #[test]
    fn mollified_run_keeps_mass() {
        let g = grid1(256, -6.0, 6.0);
        let mut c = CoefficientSet::isotropic(1, 1, 0.5);
        c.sigma[0][0] = field::constant(1.0);
        let u = DensityField::from_field(g, gaussian(0.3).as_ref()).unwrap();
        let mut cfg = SolverConfig::new(1e-4).unwrap();
        cfg.mollify = Some(0.2);
        let p = noise::generate(2, 1, 50, 1e-4).unwrap();
        let tr = solve(&c, &u, &cfg, &p, &OutputSchedule::Stride(50)).unwrap();
        let m0 = tr.series[0].mass;
        assert!((tr.series[50].mass - m0).abs() < 1e-12 * m0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn linear_in_data(alpha in -2.0f64..2.0, seed in 0u64..1000, shift in -1.0f64..1.0) {
            let g = grid1(48, -4.0, 4.0);
            let mut c = CoefficientSet::isotropic(1, 1, 0.5);
            c.sigma[0][0] = field::constant(0.8);
            c.h[0] = FnField::new("h", true, |_, x: &[f64]| 0.3 * x[0].cos());
            let v = DensityField::new(g.clone(), g.points().map(|p| (-(p[0] - shift).powi(2)).exp()).collect(), 0, 0.0).unwrap();
            let w = DensityField::new(g.clone(), g.points().map(|p| (p[0] * 0.7).sin() * (-p[0] * p[0] / 4.0).exp()).collect(), 0, 0.0).unwrap();
            let mix: Vec<f64> = v.values.iter().zip(&w.values).map(|(a, b)| alpha * a + b).collect();
            let uw = DensityField::new(g.clone(), mix, 0, 0.0).unwrap();
            let cfg = SolverConfig::new(1e-3).unwrap();
            let p = noise::generate(seed, 1, 30, 1e-3).unwrap();
            let sv = solve(&c, &v, &cfg, &p, &OutputSchedule::EveryStep).unwrap();
            let sw = solve(&c, &w, &cfg, &p, &OutputSchedule::EveryStep).unwrap();
            let su = solve(&c, &uw, &cfg, &p, &OutputSchedule::EveryStep).unwrap();
            for n in 0..=30 {
                for i in 0..48 {
                    let lin = alpha * sv.snapshots[n].values[i] + sw.snapshots[n].values[i];
                    prop_assert!((su.snapshots[n].values[i] - lin).abs() <= 1e-10);
                }
            }
        }
    }
}
