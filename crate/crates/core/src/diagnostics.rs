//! Numerical checks of the a-priori estimates: positivity, L¹ bounds, the
//! discrete energy balance and the weak time-continuity modulus.
//!
//! Each check is a pure function of a trajectory and the declared
//! hypotheses. Checks whose conclusion needs `g ≡ 0` refuse to run
//! otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid};
use crate::model::CoefficientSet;
use crate::solver::Trajectory;
use crate::testfn::TestFunction;

/// Default undershoot tolerance for resolved scenarios.
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Slack on the sharp L¹ bound.
pub const SHARP_L1_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
    pub manifest_hash: String,
}

impl CheckReport {
    /// Passes iff `measured ≤ threshold` and both are finite.
    pub fn new(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: measured.is_finite() && threshold.is_finite() && measured <= threshold,
            measured,
            threshold,
            manifest_hash: String::new(),
        }
    }

    /// Passes iff `lo ≤ measured ≤ hi`; `threshold` records the violated or
    /// nearest edge.
    pub fn within(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        let pass = measured.is_finite() && (lo..=hi).contains(&measured);
        let threshold = if measured < lo { lo } else { hi };
        Self {
            name: name.into(),
            pass,
            measured,
            threshold,
            manifest_hash: String::new(),
        }
    }

    pub fn with_hash(mut self, hash: &str) -> Self {
        self.manifest_hash = hash.to_string();
        self
    }
}

/// Sign and source hypotheses declared by a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Hypotheses {
    pub u0_nonnegative: bool,
    pub f_nonnegative: bool,
    pub g_zero: bool,
}

impl Hypotheses {
    /// Reads the hypotheses off the data: `u₀ ≥ 0` and `f ≥ 0` on the grid
    /// at the listed times, `g` structurally zero.
    pub fn inspect(coeffs: &CoefficientSet, u0: &DensityField, times: &[f64]) -> Self {
        let grid = &u0.grid;
        let f_nonnegative = coeffs.f.is_zero()
            || times
                .iter()
                .all(|&t| grid.sample(coeffs.f.as_ref(), t).iter().all(|&v| v >= 0.0));
        Self {
            u0_nonnegative: u0.values.iter().all(|&v| v >= 0.0),
            f_nonnegative,
            g_zero: coeffs.g.iter().all(|g| g.is_zero()),
        }
    }

    fn require(&self, what: &str) -> Result<()> {
        let mut missing = Vec::new();
        if !self.u0_nonnegative {
            missing.push("u0 >= 0");
        }
        if !self.f_nonnegative {
            missing.push("f >= 0");
        }
        if !self.g_zero {
            missing.push("g == 0");
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Hypothesis(format!(
                "{what} needs {} to be declared",
                missing.join(", ")
            )))
        }
    }
}

/// Largest relative undershoot `max_t max_x (−u)⁺ / ‖u_t‖∞` over the
/// snapshots. Refuses to run unless `u₀ ≥ 0`, `f ≥ 0`, `g ≡ 0` are declared.
pub fn check_positivity(traj: &Trajectory, hyp: &Hypotheses, tol: f64) -> Result<CheckReport> {
    hyp.require("positivity check")?;
    let measured = traj
        .snapshots
        .iter()
        .map(|s| {
            let sup = s.sup();
            if sup == 0.0 {
                0.0
            } else {
                s.values.iter().fold(0.0f64, |m, &v| m.max(-v)) / sup
            }
        })
        .fold(0.0, f64::max);
    Ok(CheckReport::new("positivity", measured, tol))
}

/// L¹ bounds over the snapshots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L1Report {
    /// `sup_t ‖u_t‖₁`.
    pub sup_l1: f64,
    pub initial_l1: f64,
    /// `∫₀ᵀ ‖f_s‖₁ ds`, left-point sum.
    pub source_l1: f64,
    /// `exp(‖c⁺‖_{L¹L∞} + ‖∂_iσ^{i·}‖²_{L²L∞} + ‖h‖²_{L²L∞})`.
    pub constant: f64,
    /// Whether the clean case (`c ≤ 0`, `h ≡ 0`) applies.
    pub sharp_applicable: bool,
    /// `sup_t‖u_t‖₁ ≤ ‖u₀‖₁ + ∫‖f‖₁` within slack, in the clean case.
    pub sharp: Option<CheckReport>,
    /// `sup_t‖u_t‖₁ ≤ C (‖u₀‖₁ + ∫‖f‖₁)`.
    pub general: CheckReport,
}

/// Bounds `sup_t ‖u_t‖₁` by the initial and source L¹ norms. The sup is
/// taken over the recorded snapshots; coefficient bounds are sampled on the
/// grid at every step time.
pub fn l1_report(traj: &Trajectory, coeffs: &CoefficientSet, hyp: &Hypotheses) -> Result<L1Report> {
    hyp.require("L1 bound")?;
    let grid: &Grid = &traj.grid;
    let d = grid.dim();
    let dt = traj.dt;
    let n_steps = traj.series.len().saturating_sub(1);
    let mut source_l1 = 0.0;
    let mut c_plus = 0.0;
    let mut div_sigma = 0.0;
    let mut h_sq = 0.0;
    let mut sharp_applicable = true;
    for n in 0..n_steps {
        let t = n as f64 * dt;
        if !coeffs.f.is_zero() {
            source_l1 += dt * grid.l1_norm(&grid.sample(coeffs.f.as_ref(), t));
        }
        let mut cmax = f64::NEG_INFINITY;
        let mut dsmax = 0.0f64;
        let mut hmax = 0.0f64;
        for p in grid.points() {
            let x = &p[..d];
            let c = coeffs.c.value(t, x);
            cmax = cmax.max(c);
            let mut ds = 0.0;
            let mut hh = 0.0;
            for l in 0..coeffs.drivers {
                let div: f64 = (0..d)
                    .filter(|&i| !coeffs.sigma[i][l].is_zero())
                    .map(|i| coeffs.sigma[i][l].partial(t, x, i))
                    .sum();
                ds += div * div;
                let h = coeffs.h[l].value(t, x);
                hh += h * h;
            }
            dsmax = dsmax.max(ds);
            hmax = hmax.max(hh);
        }
        c_plus += dt * cmax.max(0.0);
        div_sigma += dt * dsmax;
        h_sq += dt * hmax;
        if cmax > 0.0 || hmax > 0.0 {
            sharp_applicable = false;
        }
    }
    let sup_l1 = traj.snapshots.iter().map(DensityField::l1).fold(0.0, f64::max);
    let initial_l1 = traj.snapshots[0].l1();
    let budget = initial_l1 + source_l1;
    let constant = (c_plus + div_sigma + h_sq).exp();
    let sharp = sharp_applicable.then(|| {
        CheckReport::new("l1-sharp", sup_l1 - budget, SHARP_L1_TOL * budget.max(1.0))
    });
    let general = CheckReport::new("l1-general", sup_l1, constant * budget);
    Ok(L1Report {
        sup_l1,
        initial_l1,
        source_l1,
        constant,
        sharp_applicable,
        sharp,
        general,
    })
}

/// `|Σ_n defect_n|` of the discrete energy balance
///
/// ```text
/// ‖u_{n+1}‖² − ‖u_n‖² − 2dt⟨u_n, ℒ_h u_n + f⟩ − 2⟨u_n, S_n⟩ − ‖S_n‖²,
/// S_n = Σ_l (ℳ_h^l u_n + g^l) ΔB^l_n.
/// ```
///
/// `2⟨u, ℒ_h u⟩` is the grid form of `−∫𝒜`-type dissipation plus the drift
/// and zero-order terms, and `‖S‖²` is the Itô correction with the realized
/// quadratic variation.
pub fn energy_report(traj: &Trajectory, threshold: f64) -> CheckReport {
    CheckReport::new("energy-defect", traj.energy_defect(), threshold)
}

/// Ratio `defect(coarse) / defect(fine)` for two runs on the same path, the
/// coarse one at twice the step.
pub fn energy_halving_ratio(coarse: &Trajectory, fine: &Trajectory) -> f64 {
    coarse.energy_defect() / fine.energy_defect()
}

/// `∫|∇_h u|²` with forward differences, per snapshot.
pub fn gradient_energy(u: &DensityField) -> f64 {
    let grid = &u.grid;
    let mut s = 0.0;
    for k in 0..grid.dim() {
        let hk = grid.spacing(k);
        let sk = grid.stride(k);
        let nk = grid.axis(k).n;
        for p in 0..grid.len() {
            if grid.multi_index(p)[k] + 1 < nk {
                let g = (u.values[p + sk] - u.values[p]) / hk;
                s += g * g;
            }
        }
    }
    s * grid.cell_volume()
}

/// `max_t ∫|∇_h u_t|² / ∫|∇_h u_0|²`.
pub fn gradient_growth(traj: &Trajectory) -> f64 {
    let first = gradient_energy(&traj.snapshots[0]);
    let max = traj.snapshots.iter().map(gradient_energy).fold(0.0, f64::max);
    if first == 0.0 {
        if max == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        max / first
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    /// Output spacings in steps, increasing.
    pub spacings: Vec<usize>,
    /// `moduli[k][j]`: modulus of test function `k` at spacing `j`.
    pub moduli: Vec<Vec<f64>>,
    /// `ratios[k][j] = moduli[k][j] / moduli[k][j+1]`.
    pub ratios: Vec<Vec<f64>>,
    pub report: CheckReport,
}

/// Largest jump `|∫u_{t+Δ}φ − ∫u_tφ|` between outputs `Δ` apart, for the
/// spacings `base·2^j`, `j = 0..levels`. Passes when every halving of the
/// spacing shrinks the modulus by at least `max_ratio`. Needs a dense
/// trajectory.
pub fn continuity_modulus(
    traj: &Trajectory,
    phis: &[TestFunction],
    base: usize,
    levels: usize,
    max_ratio: f64,
) -> Result<ContinuityReport> {
    if levels < 3 {
        return Err(Error::Argument("need at least three output spacings".into()));
    }
    if base == 0 {
        return Err(Error::Argument("base spacing must be positive".into()));
    }
    let n_steps = traj.snapshots.len() - 1;
    let spacings: Vec<usize> = (0..levels).map(|j| base << j).collect();
    if !traj.is_dense() || *spacings.last().unwrap() > n_steps {
        return Err(Error::Argument(
            "trajectory too short or not densely recorded for the requested spacings".into(),
        ));
    }
    let grid = &traj.grid;
    let d = grid.dim();
    let mut moduli = Vec::with_capacity(phis.len());
    for phi in phis {
        phi.check(grid)?;
        let w: Vec<f64> = grid.points().map(|p| phi.value(&p[..d])).collect();
        let pairs: Vec<f64> = traj.snapshots.iter().map(|s| grid.inner(&s.values, &w)).collect();
        moduli.push(
            spacings
                .iter()
                .map(|&s| {
                    (0..=n_steps - s)
                        .step_by(s)
                        .map(|n| (pairs[n + s] - pairs[n]).abs())
                        .fold(0.0, f64::max)
                })
                .collect::<Vec<f64>>(),
        );
    }
    let ratios: Vec<Vec<f64>> = moduli
        .iter()
        .map(|m| {
            m.windows(2)
                .map(|w| if w[1] == 0.0 { 0.0 } else { w[0] / w[1] })
                .collect()
        })
        .collect();
    let worst = ratios.iter().flatten().copied().fold(0.0, f64::max);
    Ok(ContinuityReport {
        spacings,
        moduli,
        ratios,
        report: CheckReport::new("continuity-modulus", worst, max_ratio),
    })
}
