//! Scenario files: a TOML document with sections `[grid]`, `[time]`,
//! `[coefficients]`, `[filter]`, `[picard]`, `[commutator]` and `[checks]`.
//! Unknown keys are rejected, and the model invariants run at parse time.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Family, Field};
use crate::filter::{FilterScenario, JointFamily, Observable, Prior};
use crate::grid::{Boundary, DensityField, Grid};
use crate::model::CoefficientSet;
use crate::picard::{InitialGuess, NonlinearSources, NonlinearTerm, PicardConfig};
use crate::solver::{NoiseScheme, OutputSchedule, SolverConfig};
use crate::testfn::TestFunction;

/// Scenarios shipped with the crate, by name.
pub const BUILTIN: &[(&str, &str)] = &[
    ("heat", include_str!("../scenarios/heat.toml")),
    ("transport", include_str!("../scenarios/transport.toml")),
    ("decay", include_str!("../scenarios/decay.toml")),
    ("drift-2d", include_str!("../scenarios/drift_2d.toml")),
    ("kalman-bucy", include_str!("../scenarios/kalman_bucy.toml")),
    ("picard-sine", include_str!("../scenarios/picard_sine.toml")),
    ("commutator-sine", include_str!("../scenarios/commutator_sine.toml")),
];

pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    let text = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = BUILTIN.iter().map(|(n, _)| *n).collect();
            Error::Usage(format!("no built-in scenario `{name}` (have: {})", names.join(", ")))
        })?;
    ScenarioConfig::parse(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commutator: Option<CommutatorConfig>,
    #[serde(default)]
    pub checks: ChecksConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one_usize")]
    pub dim: usize,
    pub min: f64,
    pub max: f64,
    /// Cells per axis.
    pub n: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

fn one_usize() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "one_f64")]
    pub theta: f64,
    /// Driver path seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub stability_guard: bool,
    /// Mollify the coefficients at this ε before solving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollify: Option<f64>,
    #[serde(default)]
    pub noise_scheme: NoiseScheme,
    /// Keep every k-th step. Defaults to ten snapshots plus the start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    #[serde(default)]
    pub drivers: usize,
    pub a: Vec<Vec<Family>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Family>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Family>,
    /// `sigma[i][l]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<Family>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Family>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Family>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<Vec<Vec<Family>>>,
    pub initial: Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "one_usize")]
    pub obs_dim: usize,
    pub b_hat: Vec<JointFamily>,
    pub sigma_hat: Vec<Vec<JointFamily>>,
    pub b_tilde: Vec<JointFamily>,
    pub sigma_tilde: Vec<Vec<JointFamily>>,
    pub prior: Prior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    pub bound: f64,
    /// Particle count for the representation oracle; 0 skips it.
    #[serde(default)]
    pub particles: usize,
    #[serde(default)]
    pub particle_seed: u64,
    #[serde(default)]
    pub observables: Vec<Observable>,
    #[serde(default = "yes")]
    pub kushner: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub initial: InitialGuess,
    pub f: NonlinearTerm,
    #[serde(default)]
    pub g: Vec<NonlinearTerm>,
    pub lipschitz: f64,
    pub gamma_bound: f64,
    /// Seed of the sampled Lipschitz check.
    #[serde(default)]
    pub check_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CommutatorMode {
    #[default]
    Transport,
    ZeroOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommutatorConfig {
    #[serde(default)]
    pub mode: CommutatorMode,
    /// Drift for transport sweeps.
    #[serde(default)]
    pub b: Vec<Family>,
    /// Multiplier for zero-order sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Family>,
    pub u: Family,
    pub epsilons: Vec<f64>,
    pub radius: f64,
    #[serde(default = "two")]
    pub exponent: f64,
    #[serde(default)]
    pub t: f64,
}

fn two() -> f64 {
    2.0
}

/// A closed-form reference solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExactSolution {
    /// `u₀(x + speed·B_t)` for `du = ½speed²∂²u dt + speed ∂u dB`.
    ShiftedInitial { speed: f64 },
    /// Centred Gaussian of the given mass whose variance grows as
    /// `variance + 2·diffusivity·t`.
    HeatGaussian { mass: f64, variance: f64, diffusivity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactCheck {
    pub solution: ExactSolution,
    /// Largest relative L² error allowed at the output times.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakResidualCheck {
    pub phi: TestFunction,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    /// Tolerance for the positivity check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positivity: Option<f64>,
    #[serde(default)]
    pub l1: bool,
    /// Tolerance on `|mass(t) − mass(0)|/mass(0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_conservation: Option<f64>,
    /// Band for the energy-defect ratio under dt-halving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_halving: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_residual: Option<WeakResidualCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactCheck>,
    /// Bound on `|posterior − Kalman-Bucy|` for mean and variance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kalman_bucy: Option<f64>,
    /// Bound on the largest of the last three Picard ratios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard_ratio: Option<f64>,
    /// Bound on the commutator sweep's last/first norm ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commutator_reduction: Option<f64>,
    /// Bound on the direct/integral commutator gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commutator_gap: Option<f64>,
    /// Number of sampled directions for the parabolicity check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parabolicity: Option<usize>,
    /// Seed for sampled directions.
    #[serde(default)]
    pub direction_seed: u64,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.solver_config()?;
        self.n_steps()?;
        self.schedule()?;
        if let Some(c) = &self.coefficients {
            let coeffs = self.coefficient_set()?;
            coeffs.validate(&grid, &[0.0, self.time.t_end])?;
            c.initial.check(self.grid.dim)?;
        }
        if self.filter.is_some() {
            self.filter_scenario()?.validate()?;
        }
        if let Some(p) = &self.picard {
            if self.coefficients.is_none() {
                return Err(Error::Validation {
                    path: "picard".into(),
                    message: "a Picard run needs a [coefficients] section".into(),
                });
            }
            self.picard_config()?.validate()?;
            self.nonlinear_sources()?.check(
                &grid,
                self.time.t_end,
                self.coefficients.as_ref().map_or(0, |c| c.drivers),
                p.check_seed,
            )?;
        }
        if let Some(c) = &self.commutator {
            let d = self.grid.dim;
            c.u.check(d)?;
            match c.mode {
                CommutatorMode::Transport => {
                    if c.b.len() != d {
                        return Err(Error::Validation {
                            path: "commutator.b".into(),
                            message: format!("need {d} drift components, got {}", c.b.len()),
                        });
                    }
                    for f in &c.b {
                        f.check(d)?;
                    }
                }
                CommutatorMode::ZeroOrder => match &c.c {
                    Some(f) => f.check(d)?,
                    None => {
                        return Err(Error::Validation {
                            path: "commutator.c".into(),
                            message: "zero-order sweep needs c".into(),
                        })
                    }
                },
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        let grid = match g.dim {
            1 => Grid::uniform_1d(g.min, g.max, g.n)?,
            2 => Grid::uniform_2d(g.min, g.max, g.n)?,
            d => {
                return Err(Error::Validation {
                    path: "grid.dim".into(),
                    message: format!("dimension must be 1 or 2, got {d}"),
                })
            }
        };
        Ok(grid.with_boundary(g.boundary))
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let t = &self.time;
        let cfg = SolverConfig {
            dt: t.dt,
            theta: t.theta,
            stability_guard: t.stability_guard,
            mollify: t.mollify,
            noise: t.noise_scheme,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_steps(&self) -> Result<usize> {
        let t = &self.time;
        let n = (t.t_end / t.dt).round();
        if !(t.t_end > 0.0) || !(n >= 1.0) || (n * t.dt - t.t_end).abs() > 1e-9 * t.t_end {
            return Err(Error::Validation {
                path: "time.t_end".into(),
                message: format!("t_end = {} is not a positive multiple of dt = {}", t.t_end, t.dt),
            });
        }
        Ok(n as usize)
    }

    pub fn schedule(&self) -> Result<OutputSchedule> {
        let t = &self.time;
        match (&t.output_stride, &t.output_times) {
            (Some(_), Some(_)) => Err(Error::Validation {
                path: "time.output_times".into(),
                message: "give either output_stride or output_times".into(),
            }),
            (Some(0), None) => Err(Error::Validation {
                path: "time.output_stride".into(),
                message: "stride must be positive".into(),
            }),
            (Some(k), None) => Ok(OutputSchedule::Stride(*k)),
            (None, Some(ts)) => Ok(OutputSchedule::Times(ts.clone())),
            (None, None) => Ok(OutputSchedule::Stride((self.n_steps()? / 10).max(1))),
        }
    }

    fn section<T>(&self, value: &Option<T>, name: &str) -> Result<()> {
        if value.is_none() {
            return Err(Error::Config(format!("scenario `{}` has no [{name}] section", self.name)));
        }
        Ok(())
    }

    pub fn coefficient_set(&self) -> Result<CoefficientSet> {
        self.section(&self.coefficients, "coefficients")?;
        let c = self.coefficients.as_ref().unwrap();
        let d = self.grid.dim;
        let l = c.drivers;
        let field = |f: &Family, path: String| -> Result<Field> {
            f.check(d).map_err(|e| Error::Validation {
                path,
                message: e.to_string(),
            })?;
            Ok(f.clone().into_field())
        };
        let shape = |path: &str, ok: bool, want: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation {
                    path: format!("coefficients.{path}"),
                    message: format!("expected {want}"),
                })
            }
        };
        let mut out = CoefficientSet::zero(d, l);
        shape("a", c.a.len() == d && c.a.iter().all(|r| r.len() == d), format!("{d}x{d} entries"))?;
        for i in 0..d {
            for j in 0..d {
                out.a[i][j] = field(&c.a[i][j], format!("coefficients.a[{i}][{j}]"))?;
            }
        }
        if let Some(b) = &c.b {
            shape("b", b.len() == d, format!("{d} entries"))?;
            for i in 0..d {
                out.b[i] = field(&b[i], format!("coefficients.b[{i}]"))?;
            }
        }
        if let Some(cc) = &c.c {
            out.c = field(cc, "coefficients.c".into())?;
        }
        if let Some(s) = &c.sigma {
            shape("sigma", s.len() == d && s.iter().all(|r| r.len() == l), format!("{d}x{l} entries"))?;
            for i in 0..d {
                for k in 0..l {
                    out.sigma[i][k] = field(&s[i][k], format!("coefficients.sigma[{i}][{k}]"))?;
                }
            }
        }
        if let Some(h) = &c.h {
            shape("h", h.len() == l, format!("{l} entries"))?;
            for k in 0..l {
                out.h[k] = field(&h[k], format!("coefficients.h[{k}]"))?;
            }
        }
        if let Some(f) = &c.f {
            out.f = field(f, "coefficients.f".into())?;
        }
        if let Some(g) = &c.g {
            shape("g", g.len() == l, format!("{l} entries"))?;
            for k in 0..l {
                out.g[k] = field(&g[k], format!("coefficients.g[{k}]"))?;
            }
        }
        if let Some(sh) = &c.sigma_hat {
            shape("sigma_hat", sh.len() == d && sh.iter().all(|r| !r.is_empty()), format!("{d} non-empty rows"))?;
            let rows = sh
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    r.iter()
                        .enumerate()
                        .map(|(k, f)| field(f, format!("coefficients.sigma_hat[{i}][{k}]")))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            out.sigma_hat = Some(rows);
        }
        Ok(out)
    }

    pub fn initial_density(&self, grid: Arc<Grid>) -> Result<DensityField> {
        self.section(&self.coefficients, "coefficients")?;
        let f = self.coefficients.as_ref().unwrap().initial.clone().into_field();
        DensityField::from_field(grid, f.as_ref())
    }

    pub fn drivers(&self) -> usize {
        self.coefficients.as_ref().map_or(0, |c| c.drivers)
    }

    pub fn filter_scenario(&self) -> Result<FilterScenario> {
        self.section(&self.filter, "filter")?;
        let f = self.filter.as_ref().unwrap();
        Ok(FilterScenario {
            dim: self.grid.dim,
            obs_dim: f.obs_dim,
            b_hat: f.b_hat.clone(),
            sigma_hat: f.sigma_hat.clone(),
            b_tilde: f.b_tilde.clone(),
            sigma_tilde: f.sigma_tilde.clone(),
            prior: f.prior.clone(),
            y0: f.y0.clone().unwrap_or_else(|| vec![0.0; f.obs_dim]),
            bound: f.bound,
        })
    }

    pub fn picard_config(&self) -> Result<PicardConfig> {
        self.section(&self.picard, "picard")?;
        let p = self.picard.as_ref().unwrap();
        Ok(PicardConfig {
            tol: p.tol,
            max_iter: p.max_iter,
            initial: p.initial,
        })
    }

    pub fn nonlinear_sources(&self) -> Result<NonlinearSources> {
        self.section(&self.picard, "picard")?;
        let p = self.picard.as_ref().unwrap();
        Ok(NonlinearSources {
            f: p.f.clone(),
            g: p.g.clone(),
            lipschitz: p.lipschitz,
            gamma_bound: p.gamma_bound,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        name = "minimal-heat"
        [grid]
        min = -4.0
        max = 4.0
        n = 64
        [time]
        dt = 0.01
        t_end = 0.1
        [coefficients]
        a = [[{ kind = "constant", value = 0.5 }]]
        initial = { kind = "gaussian-bump", center = [0.0], width = 0.5 }
    "#;

    #[test]
    fn minimal_heat_gets_defaults() {
        let c = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.time.theta, 1.0);
        assert_eq!(c.grid.boundary, Boundary::ZeroFlux);
        assert_eq!(c.n_steps().unwrap(), 10);
        assert_eq!(c.schedule().unwrap(), OutputSchedule::Stride(1));
        let round = ScenarioConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn rejections() {
        let e = ScenarioConfig::parse(&MINIMAL.replace("n = 64", "n = 8")).unwrap_err();
        assert!(matches!(e, Error::Validation { .. }), "{e}");
        assert!(e.to_string().contains("n >= 16"));

        let e = ScenarioConfig::parse(&MINIMAL.replace("dt = 0.01", "dt = 0.01\nwobble = 1")).unwrap_err();
        assert!(matches!(e, Error::Parse(ref m) if m.contains("wobble")), "{e}");

        let bad = MINIMAL.replace(
            "initial =",
            "sigma_hat = [[{ kind = \"constant\", value = 2.0 }]]\ninitial =",
        );
        let e = ScenarioConfig::parse(&bad).unwrap_err();
        assert!(e.to_string().contains("sigma_hat sigma_hat^T"), "{e}");

        let e = ScenarioConfig::parse(&MINIMAL.replace("t_end = 0.1", "t_end = 0.105")).unwrap_err();
        assert!(matches!(e, Error::Validation { ref path, .. } if path == "time.t_end"));
    }

    #[test]
    fn builtins_parse() {
        for (name, _) in BUILTIN {
            let c = builtin(name).unwrap();
            assert_eq!(&c.name, name);
        }
        assert!(matches!(builtin("nope"), Err(Error::Usage(_))));
    }
}
