//! Value function `v(z, s) = -log E exp(-H(s, z, X^{z,s}))`, the optimal
//! control `u* = -∇v`, control costs and the HJB residual.
//!
//! Two independent routes to `v` are provided: direct Monte Carlo over
//! reference paths, and a backward implicit solve of the linear
//! Feynman–Kac equation `∂t ρ + ℒρ - fρ = 0`, `ρ(·,T) = e^{-g}`, followed by
//! `v = -log ρ`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{FieldGrid, TimeGrid};
use crate::linalg::{self, Csr};
use crate::model::{DiffusionModel, InitialLaw};
use crate::path::Path;
use crate::sde::{self, SimOptions};
use crate::stats;

pub type RunningFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type RunningGradFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;
pub type TerminalGradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Path energy `H(X) = ∫ f(X_t, t) dt + g(X_T)`.
#[derive(Clone)]
pub struct Hamiltonian {
    pub name: String,
    pub running: RunningFn,
    pub terminal: TerminalFn,
    pub running_grad: Option<RunningGradFn>,
    pub terminal_grad: Option<TerminalGradFn>,
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("name", &self.name)
            .field("has_gradients", &self.has_gradients())
            .finish()
    }
}

impl Hamiltonian {
    pub fn new(
        name: &str,
        running: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            running: Arc::new(running),
            terminal: Arc::new(terminal),
            running_grad: None,
            terminal_grad: None,
        }
    }

    pub fn with_gradients(
        mut self,
        running: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        terminal: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.running_grad = Some(Arc::new(running));
        self.terminal_grad = Some(Arc::new(terminal));
        self
    }

    /// `f ≡ 0`, `g ≡ 0`.
    pub fn zero() -> Self {
        Self::new("zero", |_, _| 0.0, |_| 0.0).with_gradients(|_, _, o| o.fill(0.0), |_, o| o.fill(0.0))
    }

    /// `f ≡ 0`, `g(x) = c |x|² / 2`.
    pub fn quadratic_terminal(c: f64) -> Self {
        Self::new("quadratic_terminal", |_, _| 0.0, move |x| 0.5 * c * x.iter().map(|v| v * v).sum::<f64>())
            .with_gradients(
                |_, _, o| o.fill(0.0),
                move |x, o| o.iter_mut().zip(x).for_each(|(oi, xi)| *oi = c * xi),
            )
    }

    /// `f ≡ 0`, `g(x) = cᵀ x`.
    pub fn linear_terminal(c: Vec<f64>) -> Self {
        let c2 = c.clone();
        Self::new("linear_terminal", |_, _| 0.0, move |x| c.iter().zip(x).map(|(a, b)| a * b).sum())
            .with_gradients(|_, _, o| o.fill(0.0), move |_, o| o.copy_from_slice(&c2))
    }

    /// `f ≡ c`, `g ≡ 0`.
    pub fn constant_running(c: f64) -> Self {
        Self::new("constant_running", move |_, _| c, |_| 0.0)
            .with_gradients(|_, _, o| o.fill(0.0), |_, o| o.fill(0.0))
    }

    /// `f(x) = c |x|²`, `g ≡ 0`.
    pub fn quadratic_running(c: f64) -> Self {
        Self::new("quadratic_running", move |x, _| c * x.iter().map(|v| v * v).sum::<f64>(), |_| 0.0)
            .with_gradients(
                move |x, _, o| o.iter_mut().zip(x).for_each(|(oi, xi)| *oi = 2.0 * c * xi),
                |_, o| o.fill(0.0),
            )
    }

    pub fn has_gradients(&self) -> bool {
        self.running_grad.is_some() && self.terminal_grad.is_some()
    }

    /// Smallest value of `f` and `g` over the probes; errors on non-finite
    /// values.
    pub fn lower_bound_on(&self, probes: &[(Vec<f64>, f64)]) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for (x, t) in probes {
            let f = (self.running)(x, *t);
            let g = (self.terminal)(x);
            if !(f.is_finite() && g.is_finite()) {
                return Err(Error::Precondition(format!("Hamiltonian '{}' not finite at {x:?}, t = {t}", self.name)));
            }
            lo = lo.min(f).min(g);
        }
        Ok(lo)
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// `Σ_{k ≥ from_step} f(X_k, t_k) dt + g(X_N)` (left Riemann sum).
pub fn hamiltonian_eval(h: &Hamiltonian, path: &Path, from_step: usize) -> Result<f64> {
    let n = path.grid.n_steps();
    if from_step > n {
        return Err(Error::Argument(format!("from_step {from_step} beyond the last node {n}")));
    }
    let dt = path.grid.dt();
    let running: f64 = (from_step..n).map(|k| (h.running)(path.state(k), path.grid.time(k)) * dt).sum();
    Ok(running + (h.terminal)(path.terminal()))
}

fn subgrid(grid: &TimeGrid, s: f64) -> Result<TimeGrid> {
    if s == grid.t_start() {
        Ok(*grid)
    } else {
        grid.restrict_from(s)
    }
}

/// Path energies of reference paths started at `(z, s)`.
fn reference_energies(
    model: &DiffusionModel,
    h: &Hamiltonian,
    z: &[f64],
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let opts = SimOptions::default();
    sde::par_paths(n_samples, |p| {
        let mut acc = 0.0;
        let x_t = sde::integrate(model, None, grid, z, seed, p, &opts, |s| acc += (h.running)(s.x, s.t) * s.dt)?;
        Ok(acc + (h.terminal)(&x_t))
    })
}

/// `-log` of the mean of `exp(-H)`, shifted by `min H`, with a delta-method
/// standard error `sd(e^{-H}) / (mean · √n)`.
pub fn free_energy_from_energies(energies: &[f64]) -> Result<ValueEstimate> {
    let shift = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return Err(Error::Unreliable("no path has finite energy".into()));
    }
    let w: Vec<f64> = energies.iter().map(|e| (-(e - shift)).exp()).collect();
    let (mean, se) = stats::mean_and_se(&w);
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Unreliable("mean of exp(-H) underflowed; increase samples or use a control variate".into()));
    }
    if w.len() > 1 && stats::effective_sample_size(&w) < 2.0 {
        return Err(Error::Unreliable(
            "a single path dominates exp(-H); increase samples or use a control variate".into(),
        ));
    }
    Ok(ValueEstimate { value: shift - mean.ln(), std_error: se / mean, n_samples: energies.len() })
}

/// Monte-Carlo value `v̂(z, s)` from reference paths on `[s, T]`.
pub fn estimate_value_mc(
    model: &DiffusionModel,
    h: &Hamiltonian,
    z: &[f64],
    s: f64,
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<ValueEstimate> {
    let g = subgrid(grid, s)?;
    let energies = reference_energies(model, h, z, &g, n_samples, seed)?;
    free_energy_from_energies(&energies)
}

/// Backward implicit solve of `∂t ρ + ℒρ − fρ = 0`, `ρ(·,T) = e^{-g}`.
///
/// Interior nodes use centered differences; boundary nodes follow the
/// ODE `ρ_t = fρ` from their terminal values. Returns `(ρ, v = −log ρ)`.
/// The truncated box biases nodes near its edges; boxes should extend about
/// six standard deviations of the reference spread beyond the region of
/// interest.
pub fn solve_value_pde(model: &DiffusionModel, h: &Hamiltonian, grid: &FieldGrid) -> Result<(ScalarField, ScalarField)> {
    if model.ellipticity.is_none() {
        return Err(Error::Capability(format!(
            "PDE route needs a uniformly elliptic model, '{}' is not declared so",
            model.name
        )));
    }
    if model.state_dim != grid.dim() {
        return Err(Error::Argument(format!(
            "model dimension {} differs from grid dimension {}",
            model.state_dim,
            grid.dim()
        )));
    }
    let tg = &grid.time;
    let ns = grid.n_space();
    let nt = tg.n_nodes();
    let dt = tg.dt();
    let mut x = vec![0.0; grid.dim()];

    let terminal: Vec<f64> = (0..ns)
        .map(|i| {
            grid.point(i, &mut x);
            (h.terminal)(&x)
        })
        .collect();
    // log-scale shift keeps e^{-g} representable
    let shift = terminal.iter().cloned().fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return Err(Error::Argument("terminal cost is not finite on the grid".into()));
    }
    let mut rho = vec![0.0; ns * nt];
    for i in 0..ns {
        rho[(nt - 1) * ns + i] = (-(terminal[i] - shift)).exp();
    }
    let coeffs = Coefficients::new(model, grid);
    for k in (0..nt - 1).rev() {
        let t = tg.time(k);
        let next = rho[(k + 1) * ns..(k + 2) * ns].to_vec();
        let cur = match grid.dim() {
            1 => step_1d(&coeffs, h, grid, t, dt, &next)?,
            _ => step_2d(&coeffs, h, grid, t, dt, &next)?,
        };
        for (i, &r) in cur.iter().enumerate() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Solver {
                    node: grid.multi_index(i),
                    t,
                    what: format!("rho = {r} is not positive"),
                });
            }
        }
        rho[k * ns..(k + 1) * ns].copy_from_slice(&cur);
    }
    let v: Vec<f64> = rho.iter().map(|r| shift - r.ln()).collect();
    let rho_field = ScalarField::new(grid.clone(), rho.iter().map(|r| r * (-shift).exp()).collect())?;
    Ok((rho_field, ScalarField::new(grid.clone(), v)?))
}

/// Evaluates drift and covariance at grid nodes.
pub(crate) struct Coefficients<'a> {
    model: &'a DiffusionModel,
}

impl<'a> Coefficients<'a> {
    pub(crate) fn new(model: &'a DiffusionModel, _grid: &FieldGrid) -> Self {
        Self { model }
    }

    /// `(b, a)` at `(x, t)`.
    pub(crate) fn at(&self, x: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.model.state_dim;
        let mut b = vec![0.0; n];
        let mut s = vec![0.0; n * self.model.noise_dim];
        let mut a = vec![0.0; n * n];
        (self.model.drift)(x, t, &mut b);
        self.model.covariance(x, t, &mut s, &mut a);
        (b, a)
    }
}

fn step_1d(c: &Coefficients<'_>, h: &Hamiltonian, grid: &FieldGrid, t: f64, dt: f64, next: &[f64]) -> Result<Vec<f64>> {
    let ax = &grid.axes[0];
    let n = ax.n_nodes;
    let hx = ax.step();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        let x = [ax.node(i)];
        let f = (h.running)(&x, t);
        if i == 0 || i + 1 == n {
            diag[i] = 1.0 + dt * f;
            continue;
        }
        let (b, a) = c.at(&x, t);
        let (b, a) = (b[0], a[0]);
        lower[i] = -dt * (0.5 * a / (hx * hx) - 0.5 * b / hx);
        upper[i] = -dt * (0.5 * a / (hx * hx) + 0.5 * b / hx);
        diag[i] = 1.0 + dt * (a / (hx * hx) + f);
    }
    linalg::solve_tridiagonal(&lower, &diag, &upper, next)
}

fn step_2d(c: &Coefficients<'_>, h: &Hamiltonian, grid: &FieldGrid, t: f64, dt: f64, next: &[f64]) -> Result<Vec<f64>> {
    let (a0, a1) = (&grid.axes[0], &grid.axes[1]);
    let (n0, n1) = (a0.n_nodes, a1.n_nodes);
    let (h0, h1) = (a0.step(), a1.step());
    let mut rows = Vec::with_capacity(n0 * n1);
    for i in 0..n0 {
        for j in 0..n1 {
            let idx = i * n1 + j;
            let x = [a0.node(i), a1.node(j)];
            let f = (h.running)(&x, t);
            if i == 0 || j == 0 || i + 1 == n0 || j + 1 == n1 {
                rows.push(vec![(idx, 1.0 + dt * f)]);
                continue;
            }
            let (b, a) = c.at(&x, t);
            let (axx, axy, ayy) = (a[0], a[1], a[3]);
            let mut r = vec![(idx, 1.0 + dt * (axx / (h0 * h0) + ayy / (h1 * h1) + f))];
            r.push((idx - n1, -dt * (0.5 * axx / (h0 * h0) - 0.5 * b[0] / h0)));
            r.push((idx + n1, -dt * (0.5 * axx / (h0 * h0) + 0.5 * b[0] / h0)));
            r.push((idx - 1, -dt * (0.5 * ayy / (h1 * h1) - 0.5 * b[1] / h1)));
            r.push((idx + 1, -dt * (0.5 * ayy / (h1 * h1) + 0.5 * b[1] / h1)));
            if axy != 0.0 {
                let cxy = -dt * axy / (4.0 * h0 * h1);
                r.push((idx + n1 + 1, cxy));
                r.push((idx - n1 - 1, cxy));
                r.push((idx + n1 - 1, -cxy));
                r.push((idx - n1 + 1, -cxy));
            }
            rows.push(r);
        }
    }
    let m = Csr::from_rows(rows);
    let mut sol = next.to_vec();
    linalg::bicgstab(&m, next, &mut sol, 1e-13, 5000)?;
    Ok(sol)
}

/// `u* = −∇v` read from the value field (central differences inside,
/// one-sided on the boundary, clamped outside the box).
pub fn optimal_control(v: &ScalarField) -> ControlField {
    ControlField::neg_gradient(v)
}

/// Pointwise HJB residual
/// `∂t v + b·∇v + ½ tr(a ∇²v) + f − ½ ∇v a ∇vᵀ` from supplied derivatives.
/// `hess` is `n × n` row-major.
pub fn hjb_residual_at(
    model: &DiffusionModel,
    h: &Hamiltonian,
    x: &[f64],
    t: f64,
    v_t: f64,
    grad: &[f64],
    hess: &[f64],
) -> f64 {
    let n = model.state_dim;
    let mut b = vec![0.0; n];
    let mut s = vec![0.0; n * model.noise_dim];
    let mut a = vec![0.0; n * n];
    (model.drift)(x, t, &mut b);
    model.covariance(x, t, &mut s, &mut a);
    let mut r = v_t + (h.running)(x, t);
    for i in 0..n {
        r += b[i] * grad[i];
        for j in 0..n {
            r += 0.5 * a[i * n + j] * (hess[i * n + j] - grad[i] * grad[j]);
        }
    }
    r
}

/// HJB residual of a gridded value function, by central differences in
/// space and time. Nodes on the boundary of the space-time box hold 0.
pub fn hjb_residual(v: &ScalarField, model: &DiffusionModel, h: &Hamiltonian) -> Result<ScalarField> {
    let grid = &v.grid;
    if model.state_dim != grid.dim() {
        return Err(Error::Argument("model and field dimensions differ".into()));
    }
    let dim = grid.dim();
    let ns = grid.n_space();
    let nt = grid.time.n_nodes();
    let dt = grid.time.dt();
    let mut out = vec![0.0; ns * nt];
    let stride: Vec<usize> = if dim == 1 { vec![1] } else { vec![grid.axes[1].n_nodes, 1] };
    let steps: Vec<f64> = grid.axes.iter().map(|a| a.step()).collect();
    let mut x = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut hess = vec![0.0; dim * dim];
    for k in 1..nt.saturating_sub(1) {
        let t = grid.time.time(k);
        let cur = v.slice(k);
        for idx in 0..ns {
            if grid.is_boundary(idx) {
                continue;
            }
            grid.point(idx, &mut x);
            let v_t = (v.at(k + 1, idx) - v.at(k - 1, idx)) / (2.0 * dt);
            for d in 0..dim {
                let (p, m) = (idx + stride[d], idx - stride[d]);
                grad[d] = (cur[p] - cur[m]) / (2.0 * steps[d]);
                hess[d * dim + d] = (cur[p] - 2.0 * cur[idx] + cur[m]) / (steps[d] * steps[d]);
            }
            if dim == 2 {
                let (s0, s1) = (stride[0], stride[1]);
                let cross = (cur[idx + s0 + s1] - cur[idx + s0 - s1] - cur[idx - s0 + s1] + cur[idx - s0 - s1])
                    / (4.0 * steps[0] * steps[1]);
                hess[1] = cross;
                hess[2] = cross;
            }
            out[k * ns + idx] = hjb_residual_at(model, h, &x, t, v_t, &grad, &hess);
        }
    }
    ScalarField::new(grid.clone(), out)
}

/// Largest `|R|` over nodes whose coordinates all lie in `window`
/// (per-axis `[lo, hi]`), excluding the boundary of the space-time box.
pub fn max_abs_in_window(r: &ScalarField, window: &[(f64, f64)]) -> f64 {
    let grid = &r.grid;
    let ns = grid.n_space();
    let nt = grid.time.n_nodes();
    let mut x = vec![0.0; grid.dim()];
    let mut best: f64 = 0.0;
    for k in 1..nt.saturating_sub(1) {
        for idx in 0..ns {
            if grid.is_boundary(idx) {
                continue;
            }
            grid.point(idx, &mut x);
            if x.iter().zip(window).all(|(xi, (lo, hi))| *xi >= *lo && *xi <= *hi) {
                best = best.max(r.at(k, idx).abs());
            }
        }
    }
    best
}

/// `Ĵ(u, z)`: mean over controlled paths of
/// `Σ (f + ½|σᵀu|²) dt + g(X_T)`.
pub fn control_cost_mc(
    model: &DiffusionModel,
    control: &ControlField,
    h: &Hamiltonian,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<ValueEstimate> {
    let costs = control_costs(model, control, h, z, grid, n_paths, seed, &SimOptions::default())?;
    let (value, std_error) = stats::mean_and_se(&costs);
    Ok(ValueEstimate { value, std_error, n_samples: n_paths })
}

/// Per-path control costs; exposed for common-random-number comparisons.
#[allow(clippy::too_many_arguments)]
pub fn control_costs(
    model: &DiffusionModel,
    control: &ControlField,
    h: &Hamiltonian,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<f64>> {
    let (n, m) = (model.state_dim, model.noise_dim);
    sde::par_paths(n_paths, |p| {
        let mut acc = 0.0;
        let x_t = sde::integrate(model, Some(control), grid, z, seed, p, opts, |s| {
            let energy = s.u.map(|u| sde::control_energy_density(s.sigma, u, n, m)).unwrap_or(0.0);
            acc += ((h.running)(s.x, s.t) + energy) * s.dt;
        })?;
        Ok(acc + (h.terminal)(&x_t))
    })
}

/// Per-path `log(dP̃/dP) + H` along controlled paths, where the log-density
/// is `Σ uᵀσ ΔW̃ + ½ Σ |σᵀu|² dt` in terms of the controlled noise. Under the
/// optimal control every entry equals `v(z, 0)` up to discretization error.
pub fn log_density_plus_energy(
    model: &DiffusionModel,
    control: &ControlField,
    h: &Hamiltonian,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (n, m) = (model.state_dim, model.noise_dim);
    let opts = SimOptions::default();
    sde::par_paths(n_paths, |p| {
        let mut acc = 0.0;
        let x_t = sde::integrate(model, Some(control), grid, z, seed, p, &opts, |s| {
            if let Some(u) = s.u {
                // uᵀσ dW̃ + ½|σᵀu|² dt
                acc += sde::girsanov_increment(s.sigma, u, s.dw, s.dt, n, m)
                    + 2.0 * sde::control_energy_density(s.sigma, u, n, m) * s.dt;
            }
            acc += (h.running)(s.x, s.t) * s.dt;
        })?;
        Ok(acc + (h.terminal)(&x_t))
    })
}

/// Monte-Carlo optimal control from the Jacobian flow:
/// `u*(z, s) = −E[ξΘ] / E[Θ]`, `Θ = e^{-H}`,
/// `ξ = Σ (∂f/∂x) Ψ dt + (∂g/∂x) Ψ_T`. Returns estimates and jackknife
/// standard errors per component.
pub fn mc_optimal_control(
    model: &DiffusionModel,
    h: &Hamiltonian,
    z: &[f64],
    s: f64,
    grid: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (fg, gg) = match (&h.running_grad, &h.terminal_grad) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Capability(format!("Hamiltonian '{}' lacks gradients", h.name))),
    };
    let n = model.state_dim;
    let g = subgrid(grid, s)?;
    let dt = g.dt();
    let per_path: Vec<(f64, Vec<f64>)> = sde::par_paths(n_samples, |p| {
        let mut energy = 0.0;
        let mut xi = vec![0.0; n];
        let mut df = vec![0.0; n];
        let last = g.n_steps();
        sde::integrate_jacobian(model, &g, z, seed, p, |k, t, x, psi| {
            if k < last {
                energy += (h.running)(x, t) * dt;
                fg(x, t, &mut df);
                for c in 0..n {
                    xi[c] += dt * (0..n).map(|r| df[r] * psi[r * n + c]).sum::<f64>();
                }
            } else {
                energy += (h.terminal)(x);
                gg(x, &mut df);
                for c in 0..n {
                    xi[c] += (0..n).map(|r| df[r] * psi[r * n + c]).sum::<f64>();
                }
            }
        })?;
        Ok((energy, xi))
    })?;
    let shift = per_path.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let theta: Vec<f64> = per_path.iter().map(|e| (-(e.0 - shift)).exp()).collect();
    if theta.iter().sum::<f64>() <= 0.0 || !shift.is_finite() {
        return Err(Error::Unreliable("E[Θ] underflowed".into()));
    }
    if n_samples > 1 && stats::effective_sample_size(&theta) < 2.0 {
        return Err(Error::Unreliable("a single path dominates E[Θ]".into()));
    }
    let mut est = Vec::with_capacity(n);
    let mut se = Vec::with_capacity(n);
    for c in 0..n {
        let num: Vec<f64> = per_path.iter().zip(&theta).map(|(e, w)| e.1[c] * w).collect();
        let (r, s) = stats::ratio_jackknife(&num, &theta);
        est.push(-r);
        se.push(s);
    }
    Ok((est, se))
}

/// Starting law helper for estimators that begin at a fixed point.
pub fn point(z: &[f64]) -> InitialLaw {
    InitialLaw::Point(z.to_vec())
}
