//! Euler–Maruyama simulation of the reference and controlled diffusions,
//! Girsanov log-weights and Jacobian flows.
//!
//! The reference scheme is
//!
//! ```text
//! X_{k+1} = X_k + b(X_k, t_k) dt + σ(X_k, t_k) ΔW_k,    ΔW_k ~ N(0, dt I_m)
//! ```
//!
//! and the controlled scheme adds `a(X_k, t_k) u(X_k, t_k) dt`, `a = σσᵀ`.
//! Coefficients are evaluated at the left endpoint so the Girsanov sums below
//! are exact for the realized discretization.

use rayon::prelude::*;

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{DiffusionModel, InitialLaw};
use crate::path::{Path, PathEnsemble};
use crate::rng::{PathStream, Purpose};

/// Knobs for the controlled simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// `|a u| dt` may not exceed this multiple of the domain diameter.
    pub control_cap_multiple: f64,
    /// Diameter used by the guard when the control does not declare one.
    pub domain_diameter: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { control_cap_multiple: 10.0, domain_diameter: None }
    }
}

/// Everything known at the left endpoint of step `k`.
pub struct Step<'a> {
    pub k: usize,
    pub t: f64,
    pub dt: f64,
    pub x: &'a [f64],
    /// `n × m` row-major.
    pub sigma: &'a [f64],
    /// Control value, when a nonzero control is active.
    pub u: Option<&'a [f64]>,
    pub dw: &'a [f64],
}

/// Integrates one path from `x0`, calling `visit` once per step before the
/// update, and returns the terminal state.
#[allow(clippy::too_many_arguments)]
pub fn integrate<F: FnMut(&Step<'_>)>(
    model: &DiffusionModel,
    control: Option<&ControlField>,
    grid: &TimeGrid,
    x0: &[f64],
    seed: u64,
    path_index: usize,
    opts: &SimOptions,
    mut visit: F,
) -> Result<Vec<f64>> {
    let (n, m) = (model.state_dim, model.noise_dim);
    if x0.len() != n {
        return Err(Error::Argument(format!("initial state has dimension {}, model has {n}", x0.len())));
    }
    let control = control.filter(|c| !c.is_zero());
    if let Some(c) = control {
        if c.dim() != n {
            return Err(Error::Argument(format!("control dimension {} differs from state dimension {n}", c.dim())));
        }
    }
    let cap = control
        .and_then(|c| c.domain_diameter())
        .or(opts.domain_diameter)
        .map(|d| d * opts.control_cap_multiple);
    let dt = grid.dt();
    let sqdt = dt.sqrt();
    let mut stream = PathStream::new(seed, path_index, Purpose::Noise);
    let mut x = x0.to_vec();
    let mut b = vec![0.0; n];
    let mut sigma = vec![0.0; n * m];
    let mut dw = vec![0.0; m];
    let mut u = vec![0.0; n];
    let mut au = vec![0.0; n];
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        (model.drift)(&x, t, &mut b);
        (model.diffusion)(&x, t, &mut sigma);
        if b.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Simulation { path: path_index, t, what: "drift or diffusion is not finite".into() });
        }
        stream.fill_normal(&mut dw, sqdt);
        if let Some(c) = control {
            c.eval(&x, t, &mut u);
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Control { path: path_index, t, x: x.clone() });
            }
            // a u = σ (σᵀ u)
            for (i, ai) in au.iter_mut().enumerate() {
                *ai = 0.0;
                for j in 0..m {
                    let stu: f64 = (0..n).map(|r| sigma[r * m + j] * u[r]).sum();
                    *ai += sigma[i * m + j] * stu;
                }
            }
            if let Some(cap) = cap {
                let step = au.iter().map(|v| v * v).sum::<f64>().sqrt() * dt;
                if step > cap {
                    return Err(Error::Stability { path: path_index, t, step, cap });
                }
            }
        }
        visit(&Step { k, t, dt, x: &x, sigma: &sigma, u: control.map(|_| &u[..]), dw: &dw });
        for i in 0..n {
            let noise: f64 = (0..m).map(|j| sigma[i * m + j] * dw[j]).sum();
            let drift = if control.is_some() { b[i] + au[i] } else { b[i] };
            x[i] += drift * dt + noise;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation { path: path_index, t, what: "state became non-finite".into() });
        }
    }
    Ok(x)
}

/// Runs `f` for every path index in parallel and returns results in index
/// order. On failure the error of the lowest failing index is returned.
pub fn par_paths<T: Send>(n_paths: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if n_paths == 0 {
        return Err(Error::Argument("n_paths must be at least 1".into()));
    }
    let results: Vec<Result<T>> = (0..n_paths).into_par_iter().map(f).collect();
    results.into_iter().collect()
}

pub(crate) fn record_path(
    model: &DiffusionModel,
    control: Option<&ControlField>,
    grid: &TimeGrid,
    x0: &[f64],
    seed: u64,
    p: usize,
    opts: &SimOptions,
) -> Result<Path> {
    let (n, m) = (model.state_dim, model.noise_dim);
    let mut states = Vec::with_capacity(grid.n_nodes() * n);
    let mut noise = Vec::with_capacity(grid.n_steps() * m);
    let last = integrate(model, control, grid, x0, seed, p, opts, |s| {
        states.extend_from_slice(s.x);
        noise.extend_from_slice(s.dw);
    })?;
    states.extend_from_slice(&last);
    Ok(Path { grid: *grid, state_dim: n, noise_dim: m, states, noise })
}

/// Initial state of path `p`.
pub fn initial_state(sampler: &crate::model::InitialSampler<'_>, seed: u64, p: usize) -> Vec<f64> {
    sampler.draw(&mut PathStream::new(seed, p, Purpose::Initial))
}

fn simulate(
    model: &DiffusionModel,
    control: Option<&ControlField>,
    grid: &TimeGrid,
    init: &InitialLaw,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    if init.dim() != model.state_dim {
        return Err(Error::Argument("initial law dimension differs from state dimension".into()));
    }
    let sampler = init.sampler();
    let paths = par_paths(n_paths, |p| {
        let x0 = initial_state(&sampler, seed, p);
        record_path(model, control, grid, &x0, seed, p, opts)
    })?;
    Ok(PathEnsemble {
        grid: *grid,
        state_dim: model.state_dim,
        noise_dim: model.noise_dim,
        paths,
        log_weights: None,
        seed,
        model_id: model.name.clone(),
    })
}

/// States of every path at the requested time nodes, without storing whole
/// paths: `out[j][p]` is path `p` at `nodes[j]`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_marginals(
    model: &DiffusionModel,
    control: Option<&ControlField>,
    grid: &TimeGrid,
    init: &InitialLaw,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
    nodes: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    if let Some(&k) = nodes.iter().find(|&&k| k > grid.n_steps()) {
        return Err(Error::Argument(format!("node {k} beyond the last node {}", grid.n_steps())));
    }
    let sampler = init.sampler();
    let per_path = par_paths(n_paths, |p| {
        let x0 = initial_state(&sampler, seed, p);
        let mut snaps = vec![Vec::new(); nodes.len()];
        let last = integrate(model, control, grid, &x0, seed, p, opts, |s| {
            for (j, &k) in nodes.iter().enumerate() {
                if k == s.k {
                    snaps[j] = s.x.to_vec();
                }
            }
        })?;
        for (j, &k) in nodes.iter().enumerate() {
            if k == grid.n_steps() {
                snaps[j] = last.clone();
            }
        }
        Ok(snaps)
    })?;
    Ok((0..nodes.len()).map(|j| per_path.iter().map(|s| s[j].clone()).collect()).collect())
}

/// Girsanov log-weights `Σ uᵀσ ΔW − ½ Σ |σᵀu|² dt` of `control` along
/// reference paths, computed without storing paths.
pub fn girsanov_log_weights(
    model: &DiffusionModel,
    control: &ControlField,
    grid: &TimeGrid,
    init: &InitialLaw,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (n, m) = (model.state_dim, model.noise_dim);
    let sampler = init.sampler();
    let opts = SimOptions::default();
    par_paths(n_paths, |p| {
        let x0 = initial_state(&sampler, seed, p);
        let mut u = vec![0.0; n];
        let mut lw = 0.0;
        let mut bad = None;
        integrate(model, None, grid, &x0, seed, p, &opts, |s| {
            control.eval(s.x, s.t, &mut u);
            if u.iter().any(|v| !v.is_finite()) && bad.is_none() {
                bad = Some((s.t, s.x.to_vec()));
            }
            lw += girsanov_increment(s.sigma, &u, s.dw, s.dt, n, m);
        })?;
        match bad {
            Some((t, x)) => Err(Error::Control { path: p, t, x }),
            None => Ok(lw),
        }
    })
}

/// Reference paths. Path `p` is a function of `(seed, p)` only.
pub fn simulate_reference(
    model: &DiffusionModel,
    grid: &TimeGrid,
    init: &InitialLaw,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate(model, None, grid, init, n_paths, seed, &SimOptions::default())
}

/// Controlled paths; uses the same noise stream as
/// [`simulate_reference`] for equal `(seed, p)`.
pub fn simulate_controlled(
    model: &DiffusionModel,
    control: &ControlField,
    grid: &TimeGrid,
    init: &InitialLaw,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    simulate(model, Some(control), grid, init, n_paths, seed, opts)
}

/// `log Z^u = Σ uᵀσ ΔW − ½ Σ |σᵀu|² dt` along a reference path.
pub fn girsanov_log_weight(path: &Path, model: &DiffusionModel, control: &ControlField) -> Result<f64> {
    if !path.has_noise() {
        return Err(Error::Argument("path carries no noise increments".into()));
    }
    let (n, m) = (model.state_dim, model.noise_dim);
    if path.state_dim != n || path.noise_dim != m {
        return Err(Error::Argument("path dimensions differ from the model".into()));
    }
    let mut sigma = vec![0.0; n * m];
    let mut u = vec![0.0; n];
    let dt = path.grid.dt();
    let mut lw = 0.0;
    for k in 0..path.grid.n_steps() {
        let t = path.grid.time(k);
        let x = path.state(k);
        control.eval(x, t, &mut u);
        (model.diffusion)(x, t, &mut sigma);
        let dw = path.increment(k);
        lw += girsanov_increment(&sigma, &u, dw, dt, n, m);
    }
    Ok(lw)
}

/// Single-step contribution `uᵀσ ΔW − ½|σᵀu|² dt`.
#[inline]
pub fn girsanov_increment(sigma: &[f64], u: &[f64], dw: &[f64], dt: f64, n: usize, m: usize) -> f64 {
    let mut stoch = 0.0;
    let mut quad = 0.0;
    for j in 0..m {
        let stu: f64 = (0..n).map(|r| sigma[r * m + j] * u[r]).sum();
        stoch += stu * dw[j];
        quad += stu * stu;
    }
    stoch - 0.5 * quad * dt
}

/// `½ |σᵀu|²` for one evaluation.
#[inline]
pub fn control_energy_density(sigma: &[f64], u: &[f64], n: usize, m: usize) -> f64 {
    (0..m)
        .map(|j| {
            let stu: f64 = (0..n).map(|r| sigma[r * m + j] * u[r]).sum();
            stu * stu
        })
        .sum::<f64>()
        * 0.5
}

/// Co-simulates `(X, Ψ)` with
/// `Ψ_{k+1} = Ψ_k + (∂b/∂x) Ψ_k dt + Σ_i (∂σ_i/∂x) Ψ_k ΔW^i_k`, `Ψ_0 = I`,
/// calling `visit(k, t_k, X_k, Ψ_k)` at every node including the last.
#[allow(clippy::too_many_arguments)]
pub fn integrate_jacobian<F: FnMut(usize, f64, &[f64], &[f64])>(
    model: &DiffusionModel,
    grid: &TimeGrid,
    z: &[f64],
    seed: u64,
    path_index: usize,
    mut visit: F,
) -> Result<Vec<f64>> {
    let (jb, js) = match (&model.drift_jacobian, &model.diffusion_jacobian) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Capability(format!(
                "model '{}' does not provide coefficient Jacobians",
                model.name
            )))
        }
    };
    let (n, m) = (model.state_dim, model.noise_dim);
    let mut psi = vec![0.0; n * n];
    for i in 0..n {
        psi[i * n + i] = 1.0;
    }
    let mut db = vec![0.0; n * n];
    let mut dsig = vec![0.0; m * n * n];
    let mut next = vec![0.0; n * n];
    let last = integrate(model, None, grid, z, seed, path_index, &SimOptions::default(), |s| {
        visit(s.k, s.t, s.x, &psi);
        jb(s.x, s.t, &mut db);
        js(s.x, s.t, &mut dsig);
        for r in 0..n {
            for c in 0..n {
                let mut v = psi[r * n + c];
                for q in 0..n {
                    let mut coeff = db[r * n + q] * s.dt;
                    for i in 0..m {
                        coeff += dsig[i * n * n + r * n + q] * s.dw[i];
                    }
                    v += coeff * psi[q * n + c];
                }
                next[r * n + c] = v;
            }
        }
        std::mem::swap(&mut psi, &mut next);
    })?;
    visit(grid.n_steps(), grid.t_end(), &last, &psi);
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Simulation { path: path_index, t: grid.t_end(), what: "Jacobian flow diverged".into() });
    }
    Ok(psi)
}

/// State path and Jacobian matrices `Ψ_k` (row-major `n × n`) at every node.
/// Uses the noise of path 0 under `seed`.
pub fn simulate_jacobian_flow(
    model: &DiffusionModel,
    grid: &TimeGrid,
    z: &[f64],
    seed: u64,
) -> Result<(Path, Vec<Vec<f64>>)> {
    let mut states = Vec::with_capacity(grid.n_nodes() * model.state_dim);
    let mut psis = Vec::with_capacity(grid.n_nodes());
    integrate_jacobian(model, grid, z, seed, 0, |_, _, x, psi| {
        states.extend_from_slice(x);
        psis.push(psi.to_vec());
    })?;
    // re-run the plain integrator for the increments (same stream)
    let path = record_path(model, None, grid, z, seed, 0, &SimOptions::default())?;
    debug_assert_eq!(path.states, states);
    Ok((path, psis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn point(z: f64) -> InitialLaw {
        InitialLaw::Point(vec![z])
    }

    #[test]
    fn zero_dynamics_stay_put() {
        let m = DiffusionModel::linear("zero", vec![0.0], vec![0.0], vec![0.0], 1).unwrap();
        let g = TimeGrid::new(0.0, 2.0, 17).unwrap();
        let e = simulate_reference(&m, &g, &point(3.0), 4, 1).unwrap();
        assert!(e.paths.iter().all(|p| p.states.iter().all(|&x| x == 3.0)));
    }

    #[test]
    fn constant_drift_is_exact() {
        let m = DiffusionModel::linear("ode", vec![0.0], vec![1.0], vec![0.0], 1).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let e = simulate_reference(&m, &g, &point(0.0), 1, 1).unwrap();
        assert!((e.paths[0].terminal()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brownian_terminal_moments() {
        let m = DiffusionModel::brownian(1, 1.0);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let n = 100_000;
        let e = simulate_reference(&m, &g, &point(0.0), n, 11).unwrap();
        let xt = e.terminal(0);
        let (mean, _) = stats::mean_and_se(&xt);
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((stats::variance(&xt) - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_control_matches_reference_bitwise() {
        let m = DiffusionModel::ornstein_uhlenbeck(0.5, 0.8);
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let r = simulate_reference(&m, &g, &point(0.3), 20, 5).unwrap();
        let c = simulate_controlled(&m, &ControlField::zero(1), &g, &point(0.3), 20, 5, &SimOptions::default()).unwrap();
        assert_eq!(r, c);
        // a closed-form control that happens to vanish also agrees
        let c2 = simulate_controlled(&m, &ControlField::scalar(|_, _| 0.0), &g, &point(0.3), 20, 5, &SimOptions::default()).unwrap();
        for (a, b) in r.paths.iter().zip(&c2.paths) {
            assert_eq!(a.states, b.states);
        }
    }

    #[test]
    fn degenerate_diffusion_ignores_control() {
        let m = DiffusionModel::linear("det", vec![-1.0], vec![0.5], vec![0.0], 1).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let r = simulate_reference(&m, &g, &point(1.0), 3, 2).unwrap();
        let c = simulate_controlled(&m, &ControlField::scalar(|x, t| x.sin() + t), &g, &point(1.0), 3, 2, &SimOptions::default()).unwrap();
        for (a, b) in r.paths.iter().zip(&c.paths) {
            assert_eq!(a.states, b.states);
        }
    }

    #[test]
    fn case_a_controlled_variance() {
        let m = DiffusionModel::brownian(1, 1.0);
        let g = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let u = ControlField::scalar(|x, t| -x / (2.0 - t));
        let n = 40_000;
        let e = simulate_controlled(&m, &u, &g, &point(0.0), n, 3, &SimOptions::default()).unwrap();
        let xt = e.terminal(0);
        let v = stats::variance(&xt);
        let se = stats::variance_se(&xt);
        assert!((v - 0.5).abs() < 3.0 * se + 2e-3, "var {v} se {se}");
    }

    #[test]
    fn non_finite_coefficients_are_reported() {
        let m = DiffusionModel::scalar("bad", |x, _| if x > 0.5 { f64::NAN } else { 1.0 }, |_, _| 0.0);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let err = simulate_reference(&m, &g, &point(0.0), 2, 0).unwrap_err();
        assert!(matches!(err, Error::Simulation { path: 0, .. }));
        assert!(matches!(simulate_reference(&m, &g, &point(0.0), 0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn control_guard_trips() {
        let m = DiffusionModel::brownian(1, 1.0);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let u = ControlField::scalar(|_, _| 1e6).with_domain_diameter(1.0);
        let err = simulate_controlled(&m, &u, &g, &point(0.0), 1, 0, &SimOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Stability { .. }));
        let bad = ControlField::scalar(|_, _| f64::NAN);
        let err = simulate_controlled(&m, &bad, &g, &point(0.0), 1, 0, &SimOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Control { .. }));
    }

    #[test]
    fn girsanov_constant_control() {
        let m = DiffusionModel::brownian(1, 1.0);
        let g = TimeGrid::new(0.0, 1.0, 64).unwrap();
        let e = simulate_reference(&m, &g, &point(0.0), 50, 9).unwrap();
        let c = 0.7;
        let u = ControlField::scalar(move |_, _| c);
        for p in &e.paths {
            let w_t = p.terminal()[0];
            let lw = girsanov_log_weight(p, &m, &u).unwrap();
            assert!((lw - (c * w_t - 0.5 * c * c)).abs() < 1e-12);
            assert_eq!(girsanov_log_weight(p, &m, &ControlField::zero(1)).unwrap(), 0.0);
        }
    }

    #[test]
    fn girsanov_requires_noise() {
        let m = DiffusionModel::brownian(1, 1.0);
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let mut e = simulate_reference(&m, &g, &point(0.0), 1, 9).unwrap();
        e.paths[0].noise.clear();
        assert!(matches!(
            girsanov_log_weight(&e.paths[0], &m, &ControlField::zero(1)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn jacobian_of_constant_coefficients_is_identity() {
        let m = DiffusionModel::brownian(2, 1.0);
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let (_, psis) = simulate_jacobian_flow(&m, &g, &[0.0, 1.0], 4).unwrap();
        assert!(psis.iter().all(|p| p == &vec![1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn jacobian_of_linear_drift() {
        let m = DiffusionModel::linear("lin", vec![0.7], vec![0.0], vec![0.3], 1).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 10_000).unwrap();
        let (_, psis) = simulate_jacobian_flow(&m, &g, &[1.0], 4).unwrap();
        let psi_t = psis.last().unwrap()[0];
        assert!((psi_t / 0.7f64.exp() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn jacobian_requires_capability() {
        let m = DiffusionModel::scalar("x", |x, _| x, |_, _| 1.0);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        assert!(matches!(simulate_jacobian_flow(&m, &g, &[0.0], 1), Err(Error::Capability(_))));
    }
}
