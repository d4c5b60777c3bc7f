//! Subcommand execution: builds everything from a [`ScenarioConfig`], runs
//! the requested checks, and writes the outputs into a directory named by
//! the manifest hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commutator::{self, CommutatorSweep};
use crate::config::{CommutatorMode, ExactSolution, ScenarioConfig};
use crate::diagnostics::{self, CheckReport, Hypotheses};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::filter::{self, Estimate, KalmanSeries, Observable, TruthRealization, ZakaiResult};
use crate::grid::{DensityField, Grid};
use crate::model::{self, CoefficientSet};
use crate::noise::{self, BrownianPath};
use crate::picard::{self, PicardResult};
use crate::solver::{self, OutputSchedule, SolverConfig, Trajectory};

/// Hex digits of the manifest hash used for the run directory name.
pub const RUN_DIR_DIGITS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    RunSpde,
    RunFilter,
    SweepCommutator,
    Picard,
}

impl Subcommand {
    /// The subcommand a scenario's sections call for.
    pub fn infer(cfg: &ScenarioConfig) -> Self {
        if cfg.filter.is_some() {
            Subcommand::RunFilter
        } else if cfg.picard.is_some() {
            Subcommand::Picard
        } else if cfg.commutator.is_some() {
            Subcommand::SweepCommutator
        } else {
            Subcommand::RunSpde
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub path: u64,
    pub particle: u64,
    pub direction: u64,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub subcommand: Subcommand,
    pub tool_version: String,
    pub seeds: Seeds,
    pub config: ScenarioConfig,
}

impl RunManifest {
    pub fn new(config: &ScenarioConfig, subcommand: Subcommand) -> Self {
        Self {
            scenario: config.name.clone(),
            subcommand,
            tool_version: format!("spdelab {}", env!("CARGO_PKG_VERSION")),
            seeds: Seeds {
                path: config.time.seed,
                particle: config.filter.as_ref().map_or(0, |f| f.particle_seed),
                direction: config.checks.direction_seed,
            },
            config: config.clone(),
        }
    }

    /// JSON with lexicographically ordered keys.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        m.config.validate()?;
        Ok(m)
    }
}

/// Result of any subcommand.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub hash: String,
    pub reports: Vec<CheckReport>,
}

impl RunOutcome {
    pub fn pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// Output files in memory, written in one go.
#[derive(Debug, Default)]
pub struct Files(Vec<(String, Vec<u8>)>);

impl Files {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.0.push((name.to_string(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.0 {
            fs::File::create(dir.join(name))?.write_all(bytes)?;
        }
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn coord_names(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["x".into()]
    } else {
        (0..d).map(|k| format!("x{k}")).collect()
    }
}

/// `(t, x..., <value>)` rows for every snapshot.
pub fn snapshots_csv(snaps: &[DensityField], value: &str) -> Result<Vec<u8>> {
    let Some(first) = snaps.first() else {
        return csv_bytes(&["t".into(), value.into()], Vec::new());
    };
    let d = first.grid.dim();
    let mut header = vec!["t".to_string()];
    header.extend(coord_names(d));
    header.push(value.into());
    let rows = snaps.iter().flat_map(|s| {
        s.grid.points().zip(&s.values).map(move |(p, u)| {
            let mut r = vec![num(s.t)];
            r.extend(p[..d].iter().map(|v| num(*v)));
            r.push(num(*u));
            r
        })
    });
    csv_bytes(&header, rows)
}

pub fn series_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let header = ["t", "mass", "l2", "energy_defect"].map(String::from);
    let rows = traj
        .series
        .iter()
        .map(|p| vec![num(p.t), num(p.mass), num(p.l2), num(p.energy_defect)]);
    csv_bytes(&header, rows)
}

fn report_json(reports: &[CheckReport]) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(reports)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn manifest_json(m: &RunManifest) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(&serde_json::to_value(m)?)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// `sup_t ‖u_t − exact_t‖/‖exact_t‖` over the snapshots.
pub fn exact_error(traj: &Trajectory, exact: &ExactSolution, u0: &Field, path: &BrownianPath) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in &traj.snapshots {
        let g = &s.grid;
        let d = g.dim();
        let reference: Vec<f64> = match exact {
            ExactSolution::ShiftedInitial { speed } => {
                if path.drivers() == 0 {
                    return Err(Error::Config("shifted-initial solution needs a driver".into()));
                }
                let b = speed * path.value(s.time_index, 0);
                g.points()
                    .map(|p| {
                        let mut x = p;
                        x[0] += b;
                        u0.value(0.0, &x[..d])
                    })
                    .collect()
            }
            ExactSolution::HeatGaussian {
                mass,
                variance,
                diffusivity,
            } => {
                let v = variance + 2.0 * diffusivity * s.t;
                let norm = (std::f64::consts::TAU * v).powf(-0.5 * d as f64);
                g.points()
                    .map(|p| {
                        let r2: f64 = p[..d].iter().map(|x| x * x).sum();
                        mass * norm * (-r2 / (2.0 * v)).exp()
                    })
                    .collect()
            }
        };
        let diff: Vec<f64> = s.values.iter().zip(&reference).map(|(a, b)| a - b).collect();
        worst = worst.max(g.l2_norm(&diff) / g.l2_norm(&reference));
    }
    Ok(worst)
}

/// `max_t |mass(t) − mass(0)| / mass(0)` over every step.
pub fn mass_drift(traj: &Trajectory) -> f64 {
    let m0 = traj.series[0].mass;
    traj.series.iter().map(|p| (p.mass - m0).abs()).fold(0.0, f64::max) / m0.abs()
}

/// The seeded driver path, or an empty one when there are no drivers.
pub fn driver_path(seed: u64, drivers: usize, n_steps: usize, dt: f64) -> Result<BrownianPath> {
    if drivers == 0 {
        Ok(BrownianPath::empty(n_steps, dt))
    } else {
        noise::generate(seed, drivers, n_steps, dt)
    }
}

/// In-memory result of `run-spde`.
#[derive(Debug, Clone)]
pub struct SpdeRun {
    pub grid: Arc<Grid>,
    pub coeffs: CoefficientSet,
    pub u0: DensityField,
    pub path: BrownianPath,
    /// Dense when a weak-residual check was requested.
    pub trajectory: Trajectory,
    /// The schedule's snapshots.
    pub output: Vec<DensityField>,
    pub reports: Vec<CheckReport>,
}

pub fn compute_spde(cfg: &ScenarioConfig) -> Result<SpdeRun> {
    let grid = Arc::new(cfg.grid()?);
    let coeffs = cfg.coefficient_set()?;
    let u0 = cfg.initial_density(grid.clone())?;
    let scfg = cfg.solver_config()?;
    let n_steps = cfg.n_steps()?;
    let path = driver_path(cfg.time.seed, coeffs.drivers, n_steps, scfg.dt)?;
    let schedule = cfg.schedule()?;
    let checks = &cfg.checks;
    let dense = checks.weak_residual.is_some();
    let run_schedule = if dense { OutputSchedule::EveryStep } else { schedule.clone() };
    let trajectory = solver::solve(&coeffs, &u0, &scfg, &path, &run_schedule)?;
    let keep = schedule.steps(scfg.dt, n_steps)?;
    let output: Vec<DensityField> = if dense {
        keep.iter().map(|&n| trajectory.snapshots[n].clone()).collect()
    } else {
        trajectory.snapshots.clone()
    };

    let mut reports = Vec::new();
    if let Some(n_dirs) = checks.parabolicity {
        let times = [0.0, cfg.time.t_end];
        let zero = crate::field::zero();
        let r = model::verify_parabolicity(&coeffs, &grid, &times, zero.as_ref(), n_dirs, checks.direction_seed)?;
        reports.push(CheckReport::new("parabolicity", (-r.min_defect).max(0.0), r.tolerance));
    }
    let times: Vec<f64> = output.iter().map(|s| s.t).collect();
    let hyp = Hypotheses::inspect(&coeffs, &u0, &times);
    if let Some(tol) = checks.positivity {
        reports.push(diagnostics::check_positivity(&trajectory, &hyp, tol)?);
    }
    if checks.l1 {
        let r = diagnostics::l1_report(&trajectory, &coeffs, &hyp)?;
        reports.extend(r.sharp);
        reports.push(r.general);
    }
    if let Some(tol) = checks.mass_conservation {
        reports.push(CheckReport::new("mass-conservation", mass_drift(&trajectory), tol));
    }
    if let Some([lo, hi]) = checks.energy_halving {
        let coarse_path = path.coarsen(2)?;
        let coarse_cfg = SolverConfig {
            dt: coarse_path.dt(),
            ..scfg
        };
        let coarse = solver::solve(&coeffs, &u0, &coarse_cfg, &coarse_path, &OutputSchedule::Stride(usize::MAX))?;
        let ratio = diagnostics::energy_halving_ratio(&coarse, &trajectory);
        reports.push(CheckReport::within("energy-halving", ratio, lo, hi));
    }
    if let Some(w) = &checks.weak_residual {
        let r = solver::weak_residual(&trajectory, &w.phi, &coeffs, &path, None)?;
        reports.push(CheckReport::new("weak-residual", r, w.threshold));
    }
    if let Some(e) = &checks.exact {
        let init = cfg.coefficients.as_ref().unwrap().initial.clone().into_field();
        let sched = Trajectory {
            snapshots: output.clone(),
            ..trajectory.clone()
        };
        let err = exact_error(&sched, &e.solution, &init, &path)?;
        reports.push(CheckReport::new("exact-solution", err, e.tolerance));
    }
    Ok(SpdeRun {
        grid,
        coeffs,
        u0,
        path,
        trajectory,
        output,
        reports,
    })
}

/// Per-observable comparison of `∫u_Tφ` with the particle estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationRow {
    pub observable: String,
    pub pde: f64,
    pub particle: f64,
    pub stderr: f64,
    /// `|I(dt) − I(2dt)|/(√2 − 1) + |I(n) − I(n/2)|/3`.
    pub budget: f64,
}

impl RepresentationRow {
    pub fn gap(&self) -> f64 {
        (self.pde - self.particle).abs()
    }

    pub fn allowance(&self) -> f64 {
        3.0 * self.stderr + self.budget
    }
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    pub truth: TruthRealization,
    pub zakai: ZakaiResult,
    pub kushner: Option<Trajectory>,
    pub kalman: Option<KalmanSeries>,
    pub representation: Vec<RepresentationRow>,
    pub reports: Vec<CheckReport>,
}

/// Largest gap between the Zakai posterior moments and Kalman-Bucy over
/// the output times: `(mean gap, variance gap)`.
pub fn kalman_gaps(z: &ZakaiResult, kb: &KalmanSeries) -> (f64, f64) {
    let dt = z.u.dt;
    let mut gm = 0.0f64;
    let mut gv = 0.0f64;
    for m in z.moments() {
        let n = (m.t / dt).round() as usize;
        gm = gm.max((m.mean[0] - kb.mean[n]).abs());
        gv = gv.max((m.var[0] - kb.var[n]).abs());
    }
    (gm, gv)
}

fn final_pairings(z: &ZakaiResult, obs: &[Observable]) -> Vec<f64> {
    let u = z.u.final_state();
    obs.iter().map(|o| o.pair(u)).collect()
}

pub fn compute_filter(cfg: &ScenarioConfig) -> Result<FilterRun> {
    let fc = cfg.filter.as_ref().ok_or_else(|| Error::Config("no [filter] section".into()))?;
    let sc = cfg.filter_scenario()?;
    let grid = Arc::new(cfg.grid()?);
    let scfg = cfg.solver_config()?;
    let n_steps = cfg.n_steps()?;
    let schedule = cfg.schedule()?;
    let truth = filter::simulate_truth(&sc, cfg.time.seed, n_steps, scfg.dt, &grid)?;
    let zakai = filter::run_zakai(&sc, &truth, grid.clone(), &scfg, &schedule)?;
    let kushner = if fc.kushner {
        Some(filter::run_kushner(&sc, &truth, grid.clone(), &scfg, &schedule)?)
    } else {
        None
    };
    let kalman = sc.linear_gaussian().map(|lg| filter::kalman_bucy(&lg, &truth.y_path));
    let checks = &cfg.checks;
    let mut reports = Vec::new();

    let needs_coarse = checks.energy_halving.is_some() || fc.particles > 0;
    let coarse = if needs_coarse {
        let ct = truth.coarsen(2, &sc)?;
        let ccfg = SolverConfig {
            dt: ct.dt(),
            ..scfg
        };
        Some(filter::run_zakai(&sc, &ct, grid.clone(), &ccfg, &OutputSchedule::Stride(usize::MAX))?)
    } else {
        None
    };

    if let Some(tol) = checks.positivity {
        let times = zakai.u.times();
        let hyp = Hypotheses::inspect(&zakai.coefficients, &zakai.u.snapshots[0], &times);
        reports.push(diagnostics::check_positivity(&zakai.u, &hyp, tol)?);
    }
    if let Some(tol) = checks.kalman_bucy {
        let kb = kalman
            .as_ref()
            .ok_or_else(|| Error::OracleNotApplicable("scenario is not scalar linear-Gaussian".into()))?;
        let (gm, gv) = kalman_gaps(&zakai, kb);
        reports.push(CheckReport::new("kalman-bucy-mean", gm, tol));
        reports.push(CheckReport::new("kalman-bucy-variance", gv, tol));
    }
    if let (Some([lo, hi]), Some(c)) = (checks.energy_halving, &coarse) {
        let ratio = diagnostics::energy_halving_ratio(&c.u, &zakai.u);
        reports.push(CheckReport::within("energy-halving", ratio, lo, hi));
    }

    let mut representation = Vec::new();
    if fc.particles > 0 {
        let obs = &fc.observables;
        let est: Vec<Estimate> = filter::particle_estimate(&sc, &truth, fc.particles, obs, fc.particle_seed)?;
        let fine = final_pairings(&zakai, obs);
        let dt_coarse = final_pairings(coarse.as_ref().unwrap(), obs);
        let half_grid = Arc::new(grid.coarsened(2)?);
        let h_coarse = filter::run_zakai(&sc, &truth, half_grid, &scfg, &OutputSchedule::Stride(usize::MAX))?;
        let h_coarse = final_pairings(&h_coarse, obs);
        for (k, o) in obs.iter().enumerate() {
            let budget = (fine[k] - dt_coarse[k]).abs() / (2f64.sqrt() - 1.0) + (fine[k] - h_coarse[k]).abs() / 3.0;
            let row = RepresentationRow {
                observable: o.label(),
                pde: fine[k],
                particle: est[k].value,
                stderr: est[k].stderr,
                budget,
            };
            let mut r = CheckReport::new(format!("representation[{}]", row.observable), row.gap(), row.allowance());
            r.pass = r.pass && row.stderr.is_finite();
            reports.push(r);
            representation.push(row);
        }
    }
    Ok(FilterRun {
        truth,
        zakai,
        kushner,
        kalman,
        representation,
        reports,
    })
}

pub fn compute_sweep(cfg: &ScenarioConfig) -> Result<(CommutatorSweep, Vec<CheckReport>)> {
    let c = cfg
        .commutator
        .as_ref()
        .ok_or_else(|| Error::Config("no [commutator] section".into()))?;
    let grid = cfg.grid()?;
    let u = c.u.clone().into_field();
    let sweep = match c.mode {
        CommutatorMode::Transport => {
            let b: Vec<Field> = c.b.iter().map(|f| f.clone().into_field()).collect();
            commutator::convergence_sweep(&b, &u, &c.epsilons, c.radius, c.exponent, &grid, c.t)?
        }
        CommutatorMode::ZeroOrder => {
            let m = c.c.clone().unwrap().into_field();
            commutator::zero_order_sweep(&m, &u, &c.epsilons, c.radius, c.exponent, &grid, c.t)?
        }
    };
    let mut reports = Vec::new();
    if let Some(limit) = cfg.checks.commutator_reduction {
        let mut r = CheckReport::new("commutator-reduction", sweep.reduction(), limit);
        r.pass = r.pass && sweep.strictly_decreasing();
        reports.push(r);
    }
    if let Some(limit) = cfg.checks.commutator_gap {
        let gap = sweep.consistency_gap.unwrap_or(f64::NAN);
        reports.push(CheckReport::new("commutator-consistency", gap, limit));
    }
    Ok((sweep, reports))
}

#[derive(Debug, Clone)]
pub struct PicardRun {
    pub result: PicardResult,
    pub output: Trajectory,
    pub reports: Vec<CheckReport>,
}

pub fn compute_picard(cfg: &ScenarioConfig) -> Result<PicardRun> {
    let grid = Arc::new(cfg.grid()?);
    let coeffs = cfg.coefficient_set()?;
    let u0 = cfg.initial_density(grid)?;
    let scfg = cfg.solver_config()?;
    let path = driver_path(cfg.time.seed, coeffs.drivers, cfg.n_steps()?, scfg.dt)?;
    let sources = cfg.nonlinear_sources()?;
    let pc = cfg.picard_config()?;
    let check_seed = cfg.picard.as_ref().unwrap().check_seed;
    let result = picard::picard_solve(&coeffs, &sources, &u0, &scfg, &path, &pc, check_seed)?;
    let output = result.scheduled(&cfg.schedule()?)?;
    let mut reports = vec![CheckReport::new("picard-uniform-bound", result.uniform_bound_ratio(), 10.0)];
    if let Some(limit) = cfg.checks.picard_ratio {
        let r = result.max_recent_ratio(3).unwrap_or(f64::NAN);
        reports.push(CheckReport::new("picard-contraction", r, limit));
    }
    if let Some(w) = &cfg.checks.weak_residual {
        let r = result.weak_residual(&w.phi, &coeffs, &path)?;
        reports.push(CheckReport::new("weak-residual", r, w.threshold));
    }
    Ok(PicardRun {
        result,
        output,
        reports,
    })
}

/// Runs `sub` on `cfg` and renders every output file.
pub fn execute(cfg: &ScenarioConfig, sub: Subcommand) -> Result<(RunOutcome, Files)> {
    cfg.validate()?;
    let manifest = RunManifest::new(cfg, sub);
    let hash = manifest.hash()?;
    let mut files = Files::default();
    let mut reports = match sub {
        Subcommand::RunSpde => {
            let run = compute_spde(cfg)?;
            files.add("trajectory.csv", snapshots_csv(&run.output, "u")?);
            files.add("series.csv", series_csv(&run.trajectory)?);
            if run.path.drivers() > 0 {
                let mut bin = Vec::new();
                run.path.write_binary(&mut bin)?;
                files.add("path.bin", bin);
            }
            run.reports
        }
        Subcommand::RunFilter => {
            let run = compute_filter(cfg)?;
            files.add("posterior.csv", snapshots_csv(&run.zakai.pi, "pi")?);
            files.add("moments.csv", moments_csv(&run)?);
            files.add("oracle.csv", oracle_csv(&run)?);
            if !run.representation.is_empty() {
                files.add("particles.csv", particles_csv(&run.representation)?);
            }
            run.reports
        }
        Subcommand::SweepCommutator => {
            let (sweep, reports) = compute_sweep(cfg)?;
            files.add("sweep.csv", sweep_csv(&sweep)?);
            reports
        }
        Subcommand::Picard => {
            let run = compute_picard(cfg)?;
            files.add("iterates.csv", iterates_csv(&run.result)?);
            files.add("trajectory.csv", snapshots_csv(&run.output.snapshots, "u")?);
            files.add("series.csv", series_csv(&run.output)?);
            run.reports
        }
    };
    for r in reports.iter_mut() {
        r.manifest_hash = hash.clone();
    }
    files.add("manifest.json", manifest_json(&manifest)?);
    files.add("report.json", report_json(&reports)?);
    Ok((
        RunOutcome {
            manifest,
            hash,
            reports,
        },
        files,
    ))
}

pub fn run_dir(out_root: &Path, hash: &str) -> PathBuf {
    out_root.join(&hash[..RUN_DIR_DIGITS])
}

/// [`execute`] and write into `out_root/<hash prefix>/`.
pub fn execute_to(cfg: &ScenarioConfig, sub: Subcommand, out_root: &Path) -> Result<(RunOutcome, PathBuf)> {
    let (outcome, files) = execute(cfg, sub)?;
    let dir = run_dir(out_root, &outcome.hash);
    files.write_to(&dir)?;
    Ok((outcome, dir))
}

fn moments_csv(run: &FilterRun) -> Result<Vec<u8>> {
    let d = run.zakai.pi.first().map_or(1, |p| p.grid.dim());
    let mut header = vec!["t".to_string()];
    if d == 1 {
        header.extend(["mean", "var"].map(String::from));
    } else {
        header.extend(["mean_0", "mean_1", "var_0", "var_1"].map(String::from));
    }
    header.push("mass".into());
    let rows = run.zakai.u.snapshots.iter().zip(run.zakai.moments()).map(|(u, m)| {
        let mut r = vec![num(m.t)];
        r.extend(m.mean[..d].iter().map(|v| num(*v)));
        r.extend(m.var[..d].iter().map(|v| num(*v)));
        r.push(num(u.mass()));
        r
    });
    csv_bytes(&header, rows)
}

fn oracle_csv(run: &FilterRun) -> Result<Vec<u8>> {
    let header = ["t", "pde_mean", "kb_mean", "pde_var", "kb_var", "particle_phi", "stderr"].map(String::from);
    let dt = run.zakai.u.dt;
    let moments = run.zakai.moments();
    let last = moments.len().saturating_sub(1);
    let rows = moments.iter().enumerate().map(|(i, m)| {
        let n = (m.t / dt).round() as usize;
        let (kbm, kbv) = match &run.kalman {
            Some(k) => (num(k.mean[n]), num(k.var[n])),
            None => (String::new(), String::new()),
        };
        let (pp, se) = match run.representation.first() {
            Some(r) if i == last => (num(r.particle), num(r.stderr)),
            _ => (String::new(), String::new()),
        };
        vec![num(m.t), num(m.mean[0]), kbm, num(m.var[0]), kbv, pp, se]
    });
    csv_bytes(&header, rows)
}

fn particles_csv(rows: &[RepresentationRow]) -> Result<Vec<u8>> {
    let header = ["observable", "pde", "particle", "stderr", "budget"].map(String::from);
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.observable.clone(),
                num(r.pde),
                num(r.particle),
                num(r.stderr),
                num(r.budget),
            ]
        }),
    )
}

fn sweep_csv(s: &CommutatorSweep) -> Result<Vec<u8>> {
    let header = ["epsilon", "norm", "consistency_gap"].map(String::from);
    let rows = s.epsilons.iter().zip(&s.norms).enumerate().map(|(i, (e, n))| {
        vec![num(*e), num(*n), s.gaps.get(i).map_or(String::new(), |g| num(*g))]
    });
    csv_bytes(&header, rows)
}

fn iterates_csv(r: &PicardResult) -> Result<Vec<u8>> {
    let header = ["iter", "sup_diff", "ratio"].map(String::from);
    let rows = r
        .log
        .iter()
        .map(|l| vec![l.iter.to_string(), num(l.sup_diff), l.ratio.map_or(String::new(), num)]);
    csv_bytes(&header, rows)
}
