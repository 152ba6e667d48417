//! Executes one experiment and writes its artifacts and manifest.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use gibbsdiff::bridge::{self, KernelMethod, TransitionKernel};
use gibbsdiff::fk::{self, EstimatorReport, PathFunctional};
use gibbsdiff::measure::{grid_points, normal_pdf, GridMeasure};
use gibbsdiff::{reversal, sde, stats, value};
use gibbsdiff::{Axis, DiffusionModel, FieldGrid, Hamiltonian, TimeGrid};

use crate::acceptance::{self, Tolerances};
use crate::config::{ExperimentConfig, FkMethod, FunctionalKind, Kind, ValueMethod};
use crate::error::{CliError, CliResult};
use crate::presets::{self, BridgeSetup, Initial, Normal, Preset};
use crate::report::{write_checks_csv, ArtifactDir, Check, Manifest};

/// Manifest plus where the artifacts went.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    /// 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.manifest.all_pass() {
            0
        } else {
            1
        }
    }
}

/// Model, Hamiltonian and grids resolved from a preset and overrides.
struct Setup {
    preset: Option<Preset>,
    model: DiffusionModel,
    h: Hamiltonian,
    initial: Initial,
    horizon: f64,
    lo: f64,
    hi: f64,
}

impl Setup {
    fn resolve(cfg: &ExperimentConfig) -> CliResult<Self> {
        let preset = cfg.preset.as_deref().map(presets::find).transpose()?;
        let (model, initial) = match (&cfg.model, &preset) {
            (Some(m), _) => {
                let initial = match m.start_var {
                    Some(var) => Initial::Normal(Normal { mean: m.start, var }),
                    None => Initial::Point(m.start),
                };
                let model = DiffusionModel::linear("custom", vec![m.drift_slope], vec![m.drift_offset], vec![m.sigma], 1)?;
                (model.with_initial(initial.law()), initial)
            }
            (None, Some(p)) => (p.instantiate()?.0, p.initial),
            (None, None) => return Err(CliError::Config("no model source".into())),
        };
        let h = match (&cfg.hamiltonian, &preset) {
            (Some(k), _) => k.build(),
            (None, Some(p)) => p.hamiltonian.build(),
            (None, None) => Hamiltonian::zero(),
        };
        let (plo, phi) = preset.as_ref().map(|p| p.domain).unwrap_or((-6.0, 6.0));
        let horizon = cfg.grid.horizon.or(preset.as_ref().map(|p| p.horizon)).unwrap_or(1.0);
        Ok(Self { preset, model, h, initial, horizon, lo: cfg.grid.lo.unwrap_or(plo), hi: cfg.grid.hi.unwrap_or(phi) })
    }

    fn metadata(&self, key: &str) -> Option<f64> {
        self.preset.as_ref().and_then(|p| p.metadata.get(key).copied())
    }

    fn time(&self, steps: usize) -> CliResult<TimeGrid> {
        Ok(TimeGrid::new(0.0, self.horizon, steps)?)
    }

    fn field(&self, cfg: &ExperimentConfig) -> CliResult<FieldGrid> {
        let (nodes, steps) = self.grid_size(cfg);
        Ok(FieldGrid::uniform_1d(self.lo, self.hi, nodes, self.horizon, steps)?)
    }

    fn axis(&self, cfg: &ExperimentConfig) -> CliResult<Axis> {
        Ok(Axis::new(self.lo, self.hi, self.grid_size(cfg).0)?)
    }

    fn grid_size(&self, cfg: &ExperimentConfig) -> (usize, usize) {
        let (n, k) = self.preset.as_ref().map(|p| p.grid).unwrap_or((401, 400));
        (cfg.grid.nodes.unwrap_or(n), cfg.grid.pde_steps.unwrap_or(k))
    }
}

/// Runs `cfg` and writes `manifest.json` next to the artifacts. Module
/// errors abort the run; failed checks do not.
pub fn run(cfg: &ExperimentConfig, threads: Option<usize>, mut progress: impl FnMut(&str)) -> CliResult<RunOutcome> {
    let kind = cfg.validate()?;
    let seed = cfg.seed.expect("validated");
    let start = Instant::now();
    let out_dir = cfg.out_dir();
    let mut out = ArtifactDir::create(&out_dir)?;
    let checks = match kind {
        Kind::Acceptance => run_acceptance(seed, &cfg.tolerances, &out_dir, &mut progress)?,
        _ => {
            let setup = Setup::resolve(cfg)?;
            let checks = match kind {
                Kind::Simulate => simulate(cfg, &setup, seed, &mut out)?,
                Kind::Value => value_run(cfg, &setup, seed, &mut out)?,
                Kind::Fk => fk_run(cfg, &setup, seed, &mut out)?,
                Kind::Bridge => bridge_run(cfg, &setup, seed, &mut out)?,
                Kind::Reverse => reverse_run(cfg, &setup, seed, &mut out)?,
                Kind::Acceptance => unreachable!(),
            };
            for c in &checks {
                progress(&format!("{}: {} ({})", c.name, if c.pass { "PASS" } else { "FAIL" }, c.value));
            }
            checks
        }
    };
    out.write("checks.csv", |w| write_checks_csv(&checks, w))?;
    let mut artifacts = out.written().to_vec();
    if kind == Kind::Acceptance {
        artifacts = std::fs::read_dir(&out_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        artifacts.sort();
    }
    let all_pass = checks.iter().all(|c| c.pass);
    let manifest = Manifest {
        tool: "gibbsdiff".into(),
        versions: BTreeMap::from([
            ("gibbsdiff".to_string(), gibbsdiff::VERSION.to_string()),
            ("gibbsdiff-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]),
        kind: kind.as_str().into(),
        seed,
        threads,
        config: serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        checks,
        artifacts,
        status: if all_pass { "PASS" } else { "FAIL" }.into(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out_dir.join("manifest.json"), text + "\n")?;
    Ok(RunOutcome { manifest, out_dir })
}

fn run_acceptance(seed: u64, tol: &Tolerances, dir: &std::path::Path, progress: &mut impl FnMut(&str)) -> CliResult<Vec<Check>> {
    let results = acceptance::run_suite(seed, tol, dir, |r| progress(&r.line()))?;
    Ok(results
        .iter()
        .map(|r| {
            let mut c = Check::flag(&format!("criterion_{:02}", r.id), "cli", &r.title, Some(r.seed), r.pass());
            c.target = format!("all checks pass within {:.0} s", r.budget_seconds);
            c
        })
        .collect())
}

fn simulate(cfg: &ExperimentConfig, s: &Setup, seed: u64, out: &mut ArtifactDir) -> CliResult<Vec<Check>> {
    let grid = s.time(cfg.grid.steps)?;
    let ens = sde::simulate_reference(&s.model, &grid, &s.initial.law(), cfg.sampling.paths, seed)?;
    out.write("paths.csv", |w| Ok(ens.write_csv(w)?))?;
    let finite = ens.paths.iter().all(|p| p.states.iter().all(|x| x.is_finite()));
    let mut checks = vec![Check::flag("finite_states", "sde_core", "simulate_reference", Some(seed), finite)];
    if let (Some(m), true) = (s.metadata("terminal_mean"), ens.len() >= 2) {
        let (mean, se) = stats::mean_and_se(&ens.terminal(0));
        checks.push(Check::near("terminal_mean", "sde_core", "simulate_reference", Some(seed), mean, m, cfg.tolerances.sigmas * se));
    }
    Ok(checks)
}

fn value_run(cfg: &ExperimentConfig, s: &Setup, seed: u64, out: &mut ArtifactDir) -> CliResult<Vec<Check>> {
    let (z, t) = (cfg.value.z, cfg.value.s);
    let tol = &cfg.tolerances;
    let at_origin = z == 0.0 && t == 0.0;
    let mut checks = Vec::new();
    match cfg.value.method {
        ValueMethod::Pde => {
            let (_, v) = value::solve_value_pde(&s.model, &s.h, &s.field(cfg)?)?;
            out.write("value_field.csv", |w| Ok(v.write_csv(w)?))?;
            let u = value::optimal_control(&v);
            let (vz, uz) = (v.eval(&[z], t), u.eval_1d(z, t));
            out.write("value_estimate.csv", |w| {
                writeln!(w, "method,z,s,value,control")?;
                writeln!(w, "pde,{z},{t},{vz},{uz}")?;
                Ok(())
            })?;
            checks.push(Check::flag("finite_value", "value_control", "solve_value_pde", None, vz.is_finite()));
            if let (Some(m), true) = (s.metadata("v_0_0"), at_origin) {
                checks.push(Check::near("v_0_0", "value_control", "solve_value_pde", None, vz, m, tol.pde_interior));
            }
            if let Some(m) = s.metadata("u_star_1_0") {
                let u10 = u.eval_1d(1.0, 0.0);
                checks.push(Check::near("u_star_1_0", "value_control", "optimal_control", None, u10, m, tol.control_point));
            }
        }
        ValueMethod::Mc => {
            let est = value::estimate_value_mc(&s.model, &s.h, &[z], t, &s.time(cfg.grid.steps)?, cfg.sampling.paths, seed)?;
            out.write("value_estimate.csv", |w| {
                writeln!(w, "method,z,s,value,std_error,n,seed")?;
                writeln!(w, "mc,{z},{t},{},{},{},{seed}", est.value, est.std_error, est.n_samples)?;
                Ok(())
            })?;
            checks.push(Check::flag("finite_value", "value_control", "estimate_value_mc", Some(seed), est.value.is_finite()));
            if let (Some(m), true) = (s.metadata("v_0_0"), at_origin) {
                let bound = tol.sigmas * est.std_error;
                checks.push(Check::near("v_0_0", "value_control", "estimate_value_mc", Some(seed), est.value, m, bound));
            }
        }
    }
    Ok(checks)
}

fn functional(cfg: &ExperimentConfig) -> PathFunctional {
    match cfg.fk.functional {
        FunctionalKind::One => PathFunctional::one(),
        FunctionalKind::X => PathFunctional::terminal_moment(0, 1),
        FunctionalKind::X2 => PathFunctional::terminal_moment(0, 2),
        FunctionalKind::Indicator => PathFunctional::terminal_indicator(0, cfg.fk.lo, cfg.fk.hi),
    }
}

fn write_reports(out: &mut ArtifactDir, reports: &[EstimatorReport]) -> CliResult<()> {
    out.write("estimates.csv", |w| {
        writeln!(w, "method,estimate,std_error,ess,survivors,n,seed")?;
        for r in reports {
            let ess = r.effective_sample_size.map(|e| e.to_string()).unwrap_or_default();
            let surv = r.survivors.map(|e| e.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{ess},{surv},{},{}", r.method, r.estimate, r.std_error, r.n_paths, r.seed)?;
        }
        Ok(())
    })
}

fn fk_run(cfg: &ExperimentConfig, s: &Setup, seed: u64, out: &mut ArtifactDir) -> CliResult<Vec<Check>> {
    let f = functional(cfg);
    let z = [s.initial.point()];
    let grid = s.time(cfg.grid.steps)?;
    let n = cfg.sampling.paths;
    let control = || -> CliResult<_> {
        let (_, v) = value::solve_value_pde(&s.model, &s.h, &s.field(cfg)?)?;
        Ok(value::optimal_control(&v))
    };
    let mut checks = Vec::new();
    let single = match cfg.fk.method {
        FkMethod::Reweight => Some(fk::fk_reweight(&s.model, &s.h, &f, &z, &grid, n, seed)?),
        FkMethod::Killing => Some(fk::fk_killing(&s.model, &s.h, &f, &z, &grid, n, seed)?),
        FkMethod::Controlled => Some(fk::fk_controlled(&s.model, &control()?, &f, &z, &grid, n, seed)?),
        FkMethod::Compare => None,
    };
    match single {
        Some(r) => {
            write_reports(out, std::slice::from_ref(&r))?;
            checks.push(Check::flag("finite_estimate", "fk_sampler", r.method.as_str(), Some(seed), r.estimate.is_finite()));
            if cfg.fk.functional == FunctionalKind::One && cfg.fk.method == FkMethod::Reweight {
                checks.push(Check::new("reweight_one", "fk_sampler", "fk_reweight", Some(seed), r.estimate, "== 1".into(), r.estimate == 1.0));
            }
        }
        None => {
            let u = control()?;
            let cmp = fk::compare_estimators(&s.model, &s.h, Some(&u), &f, &z, &grid, n, cfg.sampling.repeats, seed)?;
            out.write("comparison.csv", |w| Ok(cmp.write_csv(w)?))?;
            write_reports(out, &cmp.runs)?;
            for p in &cmp.pairs {
                let bound = cfg.tolerances.sigmas * p.combined_se;
                checks.push(Check::new(
                    &format!("{}_vs_{}", p.a, p.b),
                    "fk_sampler",
                    "compare_estimators",
                    Some(seed),
                    p.difference.abs(),
                    format!("<= {bound:e}"),
                    p.difference.abs() <= bound,
                ));
            }
            if cmp.pairs.is_empty() {
                checks.push(Check::flag("estimators_compared", "fk_sampler", "compare_estimators", Some(seed), false));
            }
        }
    }
    Ok(checks)
}

fn gaussian_on(axis: &Axis, n: Normal) -> CliResult<GridMeasure> {
    Ok(GridMeasure::probability_from_density(vec![axis.clone()], |x| normal_pdf(x[0], n.mean, n.var))?)
}

fn bridge_run(cfg: &ExperimentConfig, s: &Setup, seed: u64, out: &mut ArtifactDir) -> CliResult<Vec<Check>> {
    let tol = &cfg.tolerances;
    let setup = s
        .preset
        .as_ref()
        .and_then(|p| p.bridge.clone())
        .ok_or_else(|| CliError::Config("the preset has no bridge marginals".into()))?;
    let mut checks = Vec::new();
    match setup {
        BridgeSetup::TwoState { source, target } => {
            let pts = vec![vec![0.0], vec![1.0]];
            let k = TransitionKernel::from_matrix(pts.clone(), pts.clone(), vec![1.0, 1.0], vec![0.5; 4], s.horizon)?;
            let mu = GridMeasure::atoms(pts.clone(), source.to_vec())?;
            let nu = GridMeasure::atoms(pts, target.to_vec())?;
            let sol = bridge::fortet_iteration(&k, &mu, &nu, cfg.bridge.tol, cfg.bridge.max_iter)?;
            out.write("coupling.csv", |w| {
                writeln!(w, "i,j,pi")?;
                for (ij, p) in sol.coupling.iter().enumerate() {
                    writeln!(w, "{},{},{p}", ij / 2, ij % 2)?;
                }
                Ok(())
            })?;
            let dev = (0..4).map(|ij| (sol.coupling[ij] - source[ij / 2] * target[ij % 2]).abs()).fold(0.0, f64::max);
            checks.push(Check::at_most("tv_residual", "schrodinger", "fortet_iteration", None, sol.residual, tol.bridge_tv));
            checks.push(Check::at_most("product_deviation", "schrodinger", "fortet_iteration", None, dev, tol.product_coupling));
        }
        BridgeSetup::Gaussian { source, target } => {
            let axis = s.axis(cfg)?;
            let (mu, nu) = (gaussian_on(&axis, source)?, gaussian_on(&axis, target)?);
            let k = bridge::build_kernel(&s.model, &grid_points(std::slice::from_ref(&axis)), std::slice::from_ref(&axis), s.horizon, KernelMethod::ClosedFormGaussian)?;
            let sol = bridge::fortet_iteration(&k, &mu, &nu, cfg.bridge.tol, cfg.bridge.max_iter)?;
            let effort = bridge::control_effort(&sol, &k, &mu, &nu);
            write_potentials(out, &axis, &sol)?;
            let nodes = axis.nodes();
            let nt = nodes.len();
            let mut cov = 0.0;
            for (i, x) in nodes.iter().enumerate() {
                for (j, y) in nodes.iter().enumerate() {
                    cov += sol.coupling[i * nt + j] * (x - source.mean) * (y - target.mean);
                }
            }
            checks.push(Check::at_most("tv_residual", "schrodinger", "fortet_iteration", None, sol.residual, tol.bridge_tv));
            checks.push(Check::flag("finite_effort", "schrodinger", "control_effort", None, effort.effort.is_finite()));
            if let Some(c) = s.metadata("cross_covariance") {
                checks.push(Check::near("cross_covariance", "schrodinger", "fortet_iteration", None, cov, c, 1e-3));
            }
        }
        BridgeSetup::Follmer { target } => {
            let axis = s.axis(cfg)?;
            let nu = gaussian_on(&axis, target)?;
            let dirac = GridMeasure::dirac(vec![0.0]);
            let k = bridge::build_kernel(&s.model, &[vec![0.0]], std::slice::from_ref(&axis), s.horizon, KernelMethod::ClosedFormGaussian)?;
            let sol = bridge::fortet_iteration(&k, &dirac, &nu, cfg.bridge.tol, cfg.bridge.max_iter)?;
            let effort = bridge::control_effort(&sol, &k, &dirac, &nu);
            write_potentials(out, &axis, &sol)?;
            let (u, _, _) = bridge::follmer_drift(&nu, &s.field(cfg)?)?;
            let (xs, energy) = bridge::bridge_terminal_and_energy(&s.model, &u, &dirac, &s.time(cfg.grid.steps)?, cfg.sampling.paths, seed)?;
            let x: Vec<f64> = xs.iter().map(|v| v[0]).collect();
            let ks = stats::ks_one_sample(&x, |t| stats::normal_cdf(t, target.mean, target.var));
            let (e, se) = stats::mean_and_se(&energy);
            out.write("terminal.csv", |w| {
                writeln!(w, "path_id,x_T,energy")?;
                for (p, (xt, en)) in x.iter().zip(&energy).enumerate() {
                    writeln!(w, "{p},{xt},{en}")?;
                }
                Ok(())
            })?;
            checks.push(Check::at_most("tv_residual", "schrodinger", "fortet_iteration", None, sol.residual, tol.bridge_tv));
            if let Some(m) = s.metadata("effort") {
                checks.push(Check::near("effort_quadrature", "schrodinger", "control_effort", None, effort.effort, m, tol.follmer_quadrature));
            }
            checks.push(Check::new("energy_mc", "schrodinger", "bridge_terminal_and_energy", Some(seed), e, format!("finite, se {se:e}"), e.is_finite()));
            checks.push(Check::at_least("terminal_ks_p_value", "schrodinger", "bridge_sample", Some(seed), ks.p_value, tol.ks_level));
        }
    }
    Ok(checks)
}

fn write_potentials(out: &mut ArtifactDir, axis: &Axis, sol: &bridge::BridgeSolution) -> CliResult<()> {
    out.write("potentials.csv", |w| {
        writeln!(w, "y,log_b,q")?;
        for (j, (lb, q)) in sol.log_b.iter().zip(sol.q()).enumerate() {
            writeln!(w, "{},{lb},{q}", axis.node(j))?;
        }
        Ok(())
    })?;
    out.write("bridge_history.csv", |w| {
        writeln!(w, "iteration,tv_residual")?;
        for (i, r) in sol.history.iter().enumerate() {
            writeln!(w, "{},{r}", i + 1)?;
        }
        Ok(())
    })
}

fn reverse_run(cfg: &ExperimentConfig, s: &Setup, seed: u64, out: &mut ArtifactDir) -> CliResult<Vec<Check>> {
    let tol = &cfg.tolerances;
    let Initial::Normal(start) = s.initial else {
        return Err(CliError::Config("reversal needs a Gaussian start (set start_var)".into()));
    };
    let grid = s.field(cfg)?;
    let p0 = reversal::density_on_grid(&grid, |x| normal_pdf(x[0], start.mean, start.var));
    let ev = reversal::solve_forward_kolmogorov(&s.model, &p0, &grid)?;
    out.write("density.csv", |w| Ok(ev.density.write_csv(w)?))?;
    let (rev, report) = reversal::simulate_reversal(&s.model, &ev, &s.time(cfg.grid.steps)?, &cfg.reverse.probes, cfg.sampling.paths, seed)?;
    out.write("marginals.csv", |w| Ok(report.write_csv(w)?))?;
    let mut checks: Vec<Check> = report
        .rows
        .iter()
        .map(|r| Check::flag(&format!("marginals_t_{}", r.probe_t), "time_reversal", "simulate_reversal", Some(seed), r.pass))
        .collect();
    if let Some(m) = s.metadata("b_bar_1_0") {
        let b = rev.drift[0].eval(&[1.0], 0.0);
        checks.push(Check::near("b_bar_1_0", "time_reversal", "reversed_drift", None, b, m, tol.reversed_drift));
    }
    if let Some(m) = s.metadata("entropy") {
        let (_, entropy) = reversal::reversal_entropy_check(&s.model, &ev)?;
        checks.push(Check::near("entropy", "time_reversal", "reversal_entropy_check", None, entropy, m, tol.entropy));
    }
    Ok(checks)
}

