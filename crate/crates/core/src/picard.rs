//! Picard iteration for the nonlinear equation
//!
//! ```text
//! du = (ℒu + f(t,x,u)) dt + (ℳ^l u + g^l(t,x,u)) dB^l
//! ```
//!
//! Each iterate solves the linear equation on the same driver path with the
//! sources frozen at the previous iterate's trajectory. Iteration stops once
//! the sup-in-time L² distance between successive iterates drops below the
//! tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Family, ScalarField};
use crate::grid::{DensityField, Grid};
use crate::model::CoefficientSet;
use crate::noise::{BrownianPath, NormalStream};
use crate::solver::{self, OutputSchedule, SolverConfig, StepSources, Trajectory};
use crate::testfn::TestFunction;

/// Slack allowed in the sampled Lipschitz and growth checks.
pub const LIPSCHITZ_SLACK: f64 = 1e-10;
/// Number of seeded triples in the Lipschitz check.
pub const LIPSCHITZ_SAMPLES: usize = 512;

/// A scalar source `F(t, x, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NonlinearTerm {
    Zero,
    /// `coef · z`
    Linear { coef: f64 },
    /// `amplitude · sin(frequency · z)`
    Sine { amplitude: f64, frequency: f64 },
    /// A field of `(t, x)` that ignores `z`.
    Fixed { field: Family },
}

impl NonlinearTerm {
    pub fn value(&self, t: f64, x: &[f64], z: f64) -> f64 {
        match self {
            NonlinearTerm::Zero => 0.0,
            NonlinearTerm::Linear { coef } => coef * z,
            NonlinearTerm::Sine { amplitude, frequency } => amplitude * (frequency * z).sin(),
            NonlinearTerm::Fixed { field } => field.value(t, x),
        }
    }

    /// Exact Lipschitz constant in `z`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            NonlinearTerm::Zero | NonlinearTerm::Fixed { .. } => 0.0,
            NonlinearTerm::Linear { coef } => coef.abs(),
            NonlinearTerm::Sine { amplitude, frequency } => (amplitude * frequency).abs(),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            NonlinearTerm::Fixed { field } => field.check(dim),
            NonlinearTerm::Linear { coef } if !coef.is_finite() => {
                Err(Error::Config("linear source coefficient must be finite".into()))
            }
            NonlinearTerm::Sine { amplitude, frequency } if !(amplitude.is_finite() && frequency.is_finite()) => {
                Err(Error::Config("sine source parameters must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearSources {
    pub f: NonlinearTerm,
    /// One entry per driver.
    #[serde(default)]
    pub g: Vec<NonlinearTerm>,
    /// Declared Lipschitz constant `K` in `z`.
    pub lipschitz: f64,
    /// Declared linear-growth offset: `|f| + |g| ≤ γ + K|z|`.
    pub gamma_bound: f64,
}

impl NonlinearSources {
    /// Samples `(t, x, z, z')` from `seed` and checks
    /// `|f(z) − f(z')| + |g(z) − g(z')| ≤ K|z − z'|` and the growth bound,
    /// both up to [`LIPSCHITZ_SLACK`].
    pub fn check(&self, grid: &Grid, t_end: f64, drivers: usize, seed: u64) -> Result<()> {
        if self.g.len() != drivers {
            return Err(Error::Validation {
                path: "picard.g".into(),
                message: format!("{} noise sources for {drivers} drivers", self.g.len()),
            });
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::Validation {
                path: "picard.lipschitz".into(),
                message: "K must be finite and non-negative".into(),
            });
        }
        let d = grid.dim();
        self.f.check(d)?;
        for g in &self.g {
            g.check(d)?;
        }
        let mut rng = NormalStream::new(seed, 0);
        let k = self.lipschitz;
        for _ in 0..LIPSCHITZ_SAMPLES {
            let t = t_end * rng.next_uniform();
            let x: Vec<f64> = grid
                .axes()
                .iter()
                .map(|ax| ax.min + (ax.max - ax.min) * rng.next_uniform())
                .collect();
            let z = 10.0 * rng.next_normal();
            let w = 10.0 * rng.next_normal();
            let gz: Vec<f64> = self.g.iter().map(|g| g.value(t, &x, z)).collect();
            let gw: Vec<f64> = self.g.iter().map(|g| g.value(t, &x, w)).collect();
            let fz = self.f.value(t, &x, z);
            let fw = self.f.value(t, &x, w);
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let dg: Vec<f64> = gz.iter().zip(&gw).map(|(a, b)| a - b).collect();
            let lhs = (fz - fw).abs() + norm(&dg);
            if lhs > k * (z - w).abs() + LIPSCHITZ_SLACK {
                return Err(Error::Validation {
                    path: "picard.lipschitz".into(),
                    message: format!("sources vary by {lhs:e} between z={z} and z={w} at t={t}, x={x:?}; K={k} is too small"),
                });
            }
            let growth = fz.abs() + norm(&gz);
            if growth > self.gamma_bound + k * z.abs() + LIPSCHITZ_SLACK {
                return Err(Error::Validation {
                    path: "picard.gamma_bound".into(),
                    message: format!("sources reach {growth:e} at z={z}, t={t}, x={x:?}; exceeds the declared growth bound"),
                });
            }
        }
        Ok(())
    }

    /// Sources for one step: `f` at `t_{n+1}` on `next`, `g` at `t_n` on `now`.
    fn freeze(&self, grid: &Grid, t_now: f64, t_next: f64, now: &[f64], next: &[f64]) -> StepSources {
        let d = grid.dim();
        let f = grid
            .points()
            .zip(next)
            .map(|(p, z)| self.f.value(t_next, &p[..d], *z))
            .collect();
        let g = self
            .g
            .iter()
            .map(|g| grid.points().zip(now).map(|(p, z)| g.value(t_now, &p[..d], *z)).collect())
            .collect();
        StepSources { f: Some(f), g: Some(g) }
    }
}

/// Starting trajectory of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    /// `u⁰_t ≡ u₀` for all `t`.
    #[default]
    Initial,
    /// `u⁰ ≡ 0`.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub initial: InitialGuess,
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Validation {
                path: "picard.tol".into(),
                message: format!("tolerance must be positive, got {}", self.tol),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::Validation {
                path: "picard.max_iter".into(),
                message: "need at least one iteration".into(),
            });
        }
        Ok(())
    }
}

/// One row of the iterate log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iter: usize,
    /// `sup_t ‖uⁿ_t − uⁿ⁻¹_t‖_{L²}`
    pub sup_diff: f64,
    /// `sup_diff(n) / sup_diff(n−1)`; absent for the first iterate.
    pub ratio: Option<f64>,
    /// `sup_t ‖uⁿ_t‖_{L²}`
    pub sup_l2: f64,
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    /// Final iterate, every step recorded.
    pub trajectory: Trajectory,
    pub log: Vec<IterateRecord>,
    /// Sources frozen at the final iterate, one per step.
    pub sources: Vec<StepSources>,
}

impl PicardResult {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    /// Largest of the last `k` contraction ratios.
    pub fn max_recent_ratio(&self, k: usize) -> Option<f64> {
        let ratios: Vec<f64> = self.log.iter().filter_map(|r| r.ratio).collect();
        if ratios.len() < k {
            return None;
        }
        ratios[ratios.len() - k..].iter().copied().reduce(f64::max)
    }

    /// `max_n sup_t‖uⁿ‖ / sup_t‖u¹‖`.
    pub fn uniform_bound_ratio(&self) -> f64 {
        let first = self.log[0].sup_l2;
        let max = self.log.iter().map(|r| r.sup_l2).fold(0.0, f64::max);
        if first > 0.0 {
            max / first
        } else if max == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }

    /// Weak-form residual of the final iterate with the frozen sources.
    pub fn weak_residual(&self, phi: &TestFunction, coeffs: &CoefficientSet, path: &BrownianPath) -> Result<f64> {
        solver::weak_residual(&self.trajectory, phi, coeffs, path, Some(&self.sources))
    }

    /// The final iterate restricted to `schedule`.
    pub fn scheduled(&self, schedule: &OutputSchedule) -> Result<Trajectory> {
        let n_steps = self.trajectory.series.len() - 1;
        let keep = schedule.steps(self.trajectory.dt, n_steps)?;
        let mut out = self.trajectory.clone();
        out.snapshots = keep.iter().map(|&n| self.trajectory.snapshots[n].clone()).collect();
        Ok(out)
    }
}

/// `sup_n ‖a_n − b_n‖_{L²}` over two dense state lists.
pub fn sup_l2_distance(grid: &Grid, a: &[DensityField], b: &[DensityField]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let diff: Vec<f64> = x.values.iter().zip(&y.values).map(|(p, q)| p - q).collect();
            grid.l2_norm(&diff)
        })
        .fold(0.0, f64::max)
}

/// Runs the iteration. The `f` and `g` of `coeffs` are replaced by the
/// frozen nonlinear sources; the Lipschitz check runs with `check_seed`.
pub fn picard_solve(
    coeffs: &CoefficientSet,
    sources: &NonlinearSources,
    u0: &DensityField,
    cfg: &SolverConfig,
    path: &BrownianPath,
    pc: &PicardConfig,
    check_seed: u64,
) -> Result<PicardResult> {
    pc.validate()?;
    cfg.validate()?;
    let grid = u0.grid.clone();
    let n_steps = path.n_steps();
    let dt = cfg.dt;
    sources.check(&grid, n_steps as f64 * dt, coeffs.drivers, check_seed)?;

    let start = match pc.initial {
        InitialGuess::Initial => u0.values.clone(),
        InitialGuess::Zero => vec![0.0; grid.len()],
    };
    let mut prev: Vec<DensityField> = (0..=n_steps)
        .map(|n| DensityField::new(grid.clone(), start.clone(), n, n as f64 * dt))
        .collect::<Result<_>>()?;
    let mut log: Vec<IterateRecord> = Vec::new();
    for iter in 1..=pc.max_iter {
        let frozen: Vec<StepSources> = (0..n_steps)
            .map(|n| {
                sources.freeze(
                    &grid,
                    n as f64 * dt,
                    (n + 1) as f64 * dt,
                    &prev[n].values,
                    &prev[n + 1].values,
                )
            })
            .collect();
        let mut cb = |n: usize, _: &[f64]| -> Result<StepSources> { Ok(frozen[n].clone()) };
        let traj = solver::solve_with_sources(coeffs, u0, cfg, path, &OutputSchedule::EveryStep, Some(&mut cb))?;
        let sup_diff = sup_l2_distance(&grid, &traj.snapshots, &prev);
        let sup_l2 = traj.series.iter().map(|p| p.l2).fold(0.0, f64::max);
        let ratio = log.last().map(|r| sup_diff / r.sup_diff);
        log.push(IterateRecord {
            iter,
            sup_diff,
            ratio,
            sup_l2,
        });
        if sup_diff < pc.tol {
            let sources = (0..n_steps)
                .map(|n| {
                    sources.freeze(
                        &grid,
                        n as f64 * dt,
                        (n + 1) as f64 * dt,
                        &traj.snapshots[n].values,
                        &traj.snapshots[n + 1].values,
                    )
                })
                .collect();
            return Ok(PicardResult {
                trajectory: traj,
                log,
                sources,
            });
        }
        prev = traj.snapshots;
    }
    Err(Error::NonConvergence {
        tol: pc.tol,
        iterations: pc.max_iter,
        last: log.last().map_or(f64::NAN, |r| r.sup_diff),
        log: log.iter().map(|r| r.sup_diff).collect(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::field::{self, FnField};
    use crate::noise;

    fn setup(n: usize) -> (CoefficientSet, DensityField) {
        let g = Arc::new(Grid::uniform_1d(-4.0, 4.0, n).unwrap());
        let c = CoefficientSet::isotropic(1, 0, 0.5);
        let u0 = DensityField::from_field(
            g,
            FnField::new("u0", true, |_, x: &[f64]| 2.0 * (-2.0 * x[0] * x[0]).exp()).as_ref(),
        )
        .unwrap();
        (c, u0)
    }

    fn sine() -> NonlinearSources {
        NonlinearSources {
            f: NonlinearTerm::Sine {
                amplitude: 0.1,
                frequency: 1.0,
            },
            g: vec![],
            lipschitz: 0.1,
            gamma_bound: 0.1,
        }
    }

    fn pc(tol: f64, initial: InitialGuess) -> PicardConfig {
        PicardConfig {
            tol,
            max_iter: 30,
            initial,
        }
    }

    #[test]
    fn independent_source_needs_one_correction() {
        let (c, u0) = setup(64);
        let src = NonlinearSources {
            f: NonlinearTerm::Fixed {
                field: Family::GaussianBump {
                    amplitude: 0.3,
                    center: vec![0.5],
                    width: 0.4,
                },
            },
            g: vec![],
            lipschitz: 0.0,
            gamma_bound: 0.3,
        };
        let cfg = SolverConfig::new(1e-2).unwrap();
        let path = BrownianPath::empty(25, 1e-2);
        let r = picard_solve(&c, &src, &u0, &cfg, &path, &pc(1e-10, InitialGuess::Initial), 0).unwrap();
        assert_eq!(r.iterations(), 2);
        assert!(r.log[1].sup_diff <= 1e-12);
    }

    #[test]
    fn sine_source_contracts_and_is_unique() {
        let (c, u0) = setup(64);
        let cfg = SolverConfig::new(1e-2).unwrap();
        let path = BrownianPath::empty(25, 1e-2);
        let tol = 1e-8;
        let a = picard_solve(&c, &sine(), &u0, &cfg, &path, &pc(tol, InitialGuess::Initial), 0).unwrap();
        assert!(a.max_recent_ratio(3).unwrap() < 0.9);
        assert!(a.uniform_bound_ratio() < 10.0);
        let b = picard_solve(&c, &sine(), &u0, &cfg, &path, &pc(tol, InitialGuess::Zero), 0).unwrap();
        let gap = sup_l2_distance(&u0.grid, &a.trajectory.snapshots, &b.trajectory.snapshots);
        assert!(gap < 10.0 * tol, "{gap}");
        let again = picard_solve(&c, &sine(), &u0, &cfg, &path, &pc(tol, InitialGuess::Initial), 0).unwrap();
        assert_eq!(again.trajectory.snapshots, a.trajectory.snapshots);
    }

    #[test]
    fn linear_absorption_matches_linear_solve() {
        let (mut c, u0) = setup(64);
        let cfg = SolverConfig::new(1e-2).unwrap();
        let path = BrownianPath::empty(25, 1e-2);
        let src = NonlinearSources {
            f: NonlinearTerm::Linear { coef: 0.2 },
            g: vec![],
            lipschitz: 0.2,
            gamma_bound: 0.0,
        };
        let r = picard_solve(&c, &src, &u0, &cfg, &path, &pc(1e-12, InitialGuess::Initial), 0).unwrap();
        c.c = field::constant(0.2);
        let lin = solver::solve(&c, &u0, &cfg, &path, &OutputSchedule::EveryStep).unwrap();
        let gap = sup_l2_distance(&u0.grid, &r.trajectory.snapshots, &lin.snapshots);
        assert!(gap < 1e-8, "{gap}");
    }

    #[test]
    fn noisy_sources_and_residual() {
        let (_, u0) = setup(64);
        let c = CoefficientSet::isotropic(1, 1, 0.5);
        let path = noise::generate(3, 1, 50, 5e-3).unwrap();
        let cfg = SolverConfig::new(5e-3).unwrap();
        let src = NonlinearSources {
            f: NonlinearTerm::Sine {
                amplitude: 0.1,
                frequency: 1.0,
            },
            g: vec![NonlinearTerm::Linear { coef: 0.1 }],
            lipschitz: 0.2,
            gamma_bound: 0.1,
        };
        let r = picard_solve(&c, &src, &u0, &cfg, &path, &pc(1e-10, InitialGuess::Initial), 0).unwrap();
        let phi = TestFunction::gaussian(&[0.0], 0.4);
        let res = r.weak_residual(&phi, &c, &path).unwrap();
        assert!(res < 5e-3, "{res}");
    }

    #[test]
    fn errors() {
        let (c, u0) = setup(32);
        let cfg = SolverConfig::new(1e-2).unwrap();
        let path = BrownianPath::empty(10, 1e-2);
        let mut bad = sine();
        bad.lipschitz = 0.05;
        assert!(matches!(
            picard_solve(&c, &bad, &u0, &cfg, &path, &pc(1e-8, InitialGuess::Initial), 0),
            Err(Error::Validation { .. })
        ));
        let short = PicardConfig {
            tol: 1e-14,
            max_iter: 2,
            initial: InitialGuess::Initial,
        };
        match picard_solve(&c, &sine(), &u0, &cfg, &path, &short, 0) {
            Err(Error::NonConvergence { log, .. }) => assert_eq!(log.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
