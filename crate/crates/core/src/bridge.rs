//! Schrödinger bridges on discretized state spaces.
//!
//! Given a reference diffusion with transition density `p(z, y; 0, T)` and
//! endpoint laws `μ`, `μ′`, the bridge coupling is
//! `π(dz, dy) = ν(dz) p(z, y) ν′(y) dy` with `ν`, `ν′` solving the
//! Schrödinger system. The system is solved by alternating (Fortet)
//! projections in the log domain. The bridge itself is the reference
//! process driven by the control `u* = −∇v`, `v = −log E q(X_T)`, `q = ν′`.

use rayon::prelude::*;
use serde::Serialize;

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{Axis, FieldGrid, TimeGrid};
use crate::measure::{normal_pdf, GridMeasure, MeasureKind, Support};
use crate::model::{DiffusionModel, InitialLaw};
use crate::path::PathEnsemble;
use crate::reversal;
use crate::sde::{self, SimOptions};
use crate::stats;
use crate::value::{self, Hamiltonian};

const ROW_MASS_TOLERANCE: f64 = 1e-6;

/// Density of the reference transition from each source point to each
/// target node, stored as logarithms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionKernel {
    pub src: Vec<Vec<f64>>,
    pub tgt: Vec<Vec<f64>>,
    pub tgt_weights: Vec<f64>,
    /// Target grid, when the target is a grid.
    pub tgt_axes: Option<Vec<Axis>>,
    /// `log p(src_i, tgt_j)`, row-major.
    pub log_p: Vec<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMethod {
    /// Exact Gaussian transition of a one-dimensional affine model with
    /// constant noise (Brownian motion, Ornstein–Uhlenbeck).
    ClosedFormGaussian,
    /// Forward Kolmogorov solve from each source point.
    KolmogorovSolve { n_steps: usize },
}

impl TransitionKernel {
    /// Kernel from an explicit density matrix; rows must carry unit mass
    /// under the target weights within `1e-6`.
    pub fn from_matrix(
        src: Vec<Vec<f64>>,
        tgt: Vec<Vec<f64>>,
        tgt_weights: Vec<f64>,
        density: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let (ns, nt) = (src.len(), tgt.len());
        if density.len() != ns * nt || tgt_weights.len() != nt {
            return Err(Error::Argument("kernel matrix dimensions are inconsistent".into()));
        }
        if let Some(k) = density.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::KernelPositivity { row: k / nt, col: k % nt, value: density[k] });
        }
        let kernel = Self { src, tgt, tgt_weights, tgt_axes: None, log_p: density.iter().map(|p| p.ln()).collect(), horizon };
        for i in 0..ns {
            let m = kernel.row_mass(i);
            if (m - 1.0).abs() > ROW_MASS_TOLERANCE {
                return Err(Error::Precondition(format!("kernel row {i} has mass {m}")));
            }
        }
        Ok(kernel)
    }

    pub fn n_src(&self) -> usize {
        self.src.len()
    }

    pub fn n_tgt(&self) -> usize {
        self.tgt.len()
    }

    pub fn log_density(&self, i: usize, j: usize) -> f64 {
        self.log_p[i * self.n_tgt() + j]
    }

    /// `Σ_j p_ij w_j`.
    pub fn row_mass(&self, i: usize) -> f64 {
        let nt = self.n_tgt();
        self.log_p[i * nt..(i + 1) * nt].iter().zip(&self.tgt_weights).map(|(lp, w)| lp.exp() * w).sum()
    }

    /// Target masses of the image of source masses `m`.
    pub fn push_forward(&self, m: &[f64]) -> Vec<f64> {
        let nt = self.n_tgt();
        (0..nt)
            .into_par_iter()
            .map(|j| (0..self.n_src()).map(|i| m[i] * self.log_density(i, j).exp()).sum::<f64>() * self.tgt_weights[j])
            .collect()
    }

    /// Rescales every row to unit quadrature mass.
    fn normalize_rows(&mut self) {
        let nt = self.n_tgt();
        for i in 0..self.n_src() {
            let row = &mut self.log_p[i * nt..(i + 1) * nt];
            let terms: Vec<f64> = row.iter().zip(&self.tgt_weights).map(|(lp, w)| lp + w.ln()).collect();
            let shift = stats::log_sum_exp(&terms);
            row.iter_mut().for_each(|lp| *lp -= shift);
        }
    }
}

/// Mean slope, offset and variance of an affine one-dimensional model with
/// constant noise, found by probing the coefficients.
fn affine_gaussian(model: &DiffusionModel, horizon: f64) -> Result<(f64, f64, f64)> {
    let not_affine = || Error::Capability(format!("closed-form kernel needs a 1D affine model; '{}' is not", model.name));
    if model.state_dim != 1 || model.noise_dim != 1 {
        return Err(not_affine());
    }
    let mut o = [0.0];
    let mut at = |x: f64, t: f64| {
        (model.drift)(&[x], t, &mut o);
        o[0]
    };
    let c = at(0.0, 0.0);
    let slope = at(1.0, 0.0) - c;
    let mut s = [0.0];
    (model.diffusion)(&[0.0], 0.0, &mut s);
    let sigma = s[0];
    for &t in &[0.0, 0.5 * horizon, horizon] {
        for &x in &[-3.0, -1.0, 0.5, 2.0, 7.0] {
            let b = at(x, t);
            let mut sx = [0.0];
            (model.diffusion)(&[x], t, &mut sx);
            if (b - (slope * x + c)).abs() > 1e-12 * (1.0 + b.abs()) || (sx[0] - sigma).abs() > 1e-14 {
                return Err(not_affine());
            }
        }
    }
    let growth = (slope * horizon).exp();
    let (offset, var) = if slope.abs() < 1e-12 {
        (c * horizon, sigma * sigma * horizon)
    } else {
        (c * (growth - 1.0) / slope, sigma * sigma * (growth * growth - 1.0) / (2.0 * slope))
    };
    Ok((growth, offset, var))
}

/// Transition kernel of `model` over `[0, T]` from `src` points to the nodes
/// of `tgt`. Rows are rescaled to exact unit quadrature mass.
pub fn build_kernel(
    model: &DiffusionModel,
    src: &[Vec<f64>],
    tgt: &[Axis],
    horizon: f64,
    method: KernelMethod,
) -> Result<TransitionKernel> {
    if src.is_empty() || !(horizon > 0.0) {
        return Err(Error::Argument("kernel needs source points and a positive horizon".into()));
    }
    if src.iter().any(|z| z.len() != model.state_dim) || tgt.len() != model.state_dim {
        return Err(Error::Argument("kernel grids must match the model dimension".into()));
    }
    let tgt_points = crate::measure::grid_points(tgt);
    let tgt_weights = crate::measure::grid_weights(tgt);
    let nt = tgt_points.len();
    let log_p: Vec<f64> = match method {
        KernelMethod::ClosedFormGaussian => {
            let (growth, offset, var) = affine_gaussian(model, horizon)?;
            src.par_iter()
                .flat_map_iter(|z| {
                    let mean = growth * z[0] + offset;
                    tgt_points
                        .iter()
                        .map(move |y| -(y[0] - mean).powi(2) / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln())
                })
                .collect()
        }
        KernelMethod::KolmogorovSolve { n_steps } => {
            if model.ellipticity.is_none() {
                return Err(Error::Capability(format!("kernel solve needs a uniformly elliptic model, '{}' is not", model.name)));
            }
            let grid = FieldGrid::new(tgt.to_vec(), TimeGrid::new(0.0, horizon, n_steps)?)?;
            let rows: Vec<Vec<f64>> = src
                .par_iter()
                .map(|z| {
                    let p0 = point_mass(tgt, &tgt_weights, z);
                    let ev = reversal::solve_forward_kolmogorov(model, &p0, &grid)?;
                    Ok(ev.terminal().to_vec())
                })
                .collect::<Result<_>>()?;
            let mut out = Vec::with_capacity(src.len() * nt);
            for (i, row) in rows.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    if !(p > 0.0) {
                        return Err(Error::KernelPositivity { row: i, col: j, value: p });
                    }
                    out.push(p.ln());
                }
            }
            out
        }
    };
    let mut kernel = TransitionKernel {
        src: src.to_vec(),
        tgt: tgt_points,
        tgt_weights,
        tgt_axes: Some(tgt.to_vec()),
        log_p,
        horizon,
    };
    kernel.normalize_rows();
    Ok(kernel)
}

/// Unit mass at `z` spread multilinearly over the surrounding nodes, as a
/// density.
fn point_mass(axes: &[Axis], weights: &[f64], z: &[f64]) -> Vec<f64> {
    let n: usize = axes.iter().map(|a| a.n_nodes).product();
    let mut p = vec![0.0; n];
    let loc: Vec<(usize, f64)> = axes.iter().zip(z).map(|(a, &x)| a.locate(x)).collect();
    match axes.len() {
        1 => {
            let (i, f) = loc[0];
            p[i] += (1.0 - f) / weights[i];
            p[i + 1] += f / weights[i + 1];
        }
        _ => {
            let n1 = axes[1].n_nodes;
            let ((i, fx), (j, fy)) = (loc[0], loc[1]);
            for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
                for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
                    let k = (i + di) * n1 + j + dj;
                    p[k] += wx * wy / weights[k];
                }
            }
        }
    }
    p
}

/// Solution of the Schrödinger system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeSolution {
    /// `ν` on the support of `μ` (σ-finite).
    pub nu: GridMeasure,
    /// `ν′` on the target grid (σ-finite); its density is `q`.
    pub nu_prime: GridMeasure,
    /// `log(ν_i w_i)`.
    pub log_a: Vec<f64>,
    /// `log(ν′_j w′_j)`.
    pub log_b: Vec<f64>,
    /// Coupling masses `π_ij`, row-major.
    #[serde(skip_serializing)]
    pub coupling: Vec<f64>,
    pub iterations: usize,
    /// Total variation between the coupling's marginals and `(μ, μ′)`.
    pub residual: f64,
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl BridgeSolution {
    /// `q = dν′/dy` on the target grid.
    pub fn q(&self) -> &[f64] {
        &self.nu_prime.density
    }

    pub fn first_marginal(&self) -> Vec<f64> {
        let nt = self.log_b.len();
        self.coupling.chunks(nt).map(|r| r.iter().sum()).collect()
    }

    pub fn second_marginal(&self) -> Vec<f64> {
        let nt = self.log_b.len();
        let mut out = vec![0.0; nt];
        for row in self.coupling.chunks(nt) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Same coupling with potentials `(c ν, ν′ / c)`.
    pub fn regauge(&self, c: f64) -> Result<Self> {
        let lc = c.ln();
        let log_a: Vec<f64> = self.log_a.iter().map(|a| a + lc).collect();
        let log_b: Vec<f64> = self.log_b.iter().map(|b| b - lc).collect();
        let mut out = self.clone();
        out.nu = potential_measure(&self.nu, &log_a)?;
        out.nu_prime = potential_measure(&self.nu_prime, &log_b)?;
        out.log_a = log_a;
        out.log_b = log_b;
        Ok(out)
    }
}

fn potential_measure(template: &GridMeasure, log_masses: &[f64]) -> Result<GridMeasure> {
    GridMeasure::new(
        template.support.clone(),
        log_masses.iter().zip(&template.weights).map(|(l, w)| l.exp() / w).collect(),
        template.weights.clone(),
        MeasureKind::SigmaFinite,
    )
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn log_or_neg_inf(m: f64) -> f64 {
    if m > 0.0 {
        m.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Alternating projections `ν′ ← μ′ / (image of ν)`, `ν ← μ / (preimage of
/// ν′)` in the log domain until the marginal total variation of the
/// coupling drops below `tol`. The gauge is fixed by `Σ ν_i w_i = 1`.
pub fn fortet_iteration(
    kernel: &TransitionKernel,
    mu: &GridMeasure,
    mu_prime: &GridMeasure,
    tol: f64,
    max_iter: usize,
) -> Result<BridgeSolution> {
    let (ns, nt) = (kernel.n_src(), kernel.n_tgt());
    if mu.len() != ns || mu_prime.len() != nt {
        return Err(Error::Argument(format!(
            "kernel is {ns} × {nt} but the marginals have {} and {} nodes",
            mu.len(),
            mu_prime.len()
        )));
    }
    let m = mu.masses();
    let m_prime = mu_prime.masses();
    let log_m: Vec<f64> = m.iter().map(|&v| log_or_neg_inf(v)).collect();
    let log_mp: Vec<f64> = m_prime.iter().map(|&v| log_or_neg_inf(v)).collect();
    let mut log_a = log_m.clone();
    let mut log_b = vec![0.0; nt];
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        log_b = (0..nt)
            .into_par_iter()
            .map(|j| {
                if log_mp[j] == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let terms: Vec<f64> = (0..ns).map(|i| log_a[i] + kernel.log_density(i, j)).collect();
                log_mp[j] - stats::log_sum_exp(&terms)
            })
            .collect();
        log_a = (0..ns)
            .into_par_iter()
            .map(|i| {
                if log_m[i] == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let terms: Vec<f64> = (0..nt).map(|j| kernel.log_density(i, j) + log_b[j]).collect();
                log_m[i] - stats::log_sum_exp(&terms)
            })
            .collect();
        let coupling = coupling_masses(kernel, &log_a, &log_b);
        residual = marginal_residual(&coupling, &m, &m_prime, nt);
        history.push(residual);
        if residual < tol {
            break;
        }
    }
    if !(residual < tol) {
        return Err(Error::NonConvergence { iterations, last_residual: residual, history });
    }
    let shift = stats::log_sum_exp(&log_a);
    log_a.iter_mut().for_each(|a| *a -= shift);
    log_b.iter_mut().for_each(|b| *b += shift);
    let coupling = coupling_masses(kernel, &log_a, &log_b);
    let nu = potential_measure(&GridMeasure { kind: MeasureKind::SigmaFinite, ..mu.clone() }, &log_a)?;
    let nu_prime = potential_measure(&GridMeasure { kind: MeasureKind::SigmaFinite, ..mu_prime.clone() }, &log_b)?;
    let warnings = coverage_warnings(kernel, &m, mu_prime);
    Ok(BridgeSolution { nu, nu_prime, log_a, log_b, coupling, iterations, residual, history, warnings })
}

fn coupling_masses(kernel: &TransitionKernel, log_a: &[f64], log_b: &[f64]) -> Vec<f64> {
    let nt = kernel.n_tgt();
    (0..kernel.n_src() * nt)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / nt, k % nt);
            let l = log_a[i] + kernel.log_p[k] + log_b[j];
            if l == f64::NEG_INFINITY {
                0.0
            } else {
                l.exp()
            }
        })
        .collect()
}

fn marginal_residual(coupling: &[f64], m: &[f64], m_prime: &[f64], nt: usize) -> f64 {
    let rows: Vec<f64> = coupling.chunks(nt).map(|r| r.iter().sum()).collect();
    let mut cols = vec![0.0; nt];
    for row in coupling.chunks(nt) {
        for (c, v) in cols.iter_mut().zip(row) {
            *c += v;
        }
    }
    total_variation(&rows, m).max(total_variation(&cols, m_prime))
}

/// Warns when the target grid does not hold six standard deviations of
/// `μ′` or of the reference image of `μ` on either side of their means.
fn coverage_warnings(kernel: &TransitionKernel, m: &[f64], mu_prime: &GridMeasure) -> Vec<String> {
    let Some(axes) = &kernel.tgt_axes else {
        return Vec::new();
    };
    let image = kernel.push_forward(m);
    let mut out = Vec::new();
    for (label, masses) in [("target law", mu_prime.masses()), ("reference image of the source law", image)] {
        let total: f64 = masses.iter().sum();
        for (d, axis) in axes.iter().enumerate() {
            let mean: f64 = kernel.tgt.iter().zip(&masses).map(|(y, w)| y[d] * w).sum::<f64>() / total;
            let var: f64 = kernel.tgt.iter().zip(&masses).map(|(y, w)| (y[d] - mean).powi(2) * w).sum::<f64>() / total;
            let sd = var.sqrt();
            if mean - 6.0 * sd < axis.lo || mean + 6.0 * sd > axis.hi {
                out.push(format!(
                    "{label}: mean {mean:.4} ± 6 sd ({sd:.4}) leaves [{}, {}] on axis {d}",
                    axis.lo, axis.hi
                ));
            }
        }
    }
    out
}

/// `D(μ′‖ν̃′) − D(μ‖ν)` with `ν̃′` the kernel image of `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffortReport {
    pub target_entropy: f64,
    pub source_entropy: f64,
    pub effort: f64,
}

/// Minimum control effort `½ E ∫ |σᵀu*|² dt` from the potentials, by grid
/// quadrature. Support violations give `+∞`.
pub fn control_effort(
    solution: &BridgeSolution,
    kernel: &TransitionKernel,
    mu: &GridMeasure,
    mu_prime: &GridMeasure,
) -> EffortReport {
    let nu_masses: Vec<f64> = solution.log_a.iter().map(|a| a.exp()).collect();
    let image = kernel.push_forward(&nu_masses);
    let target_entropy = sigma_finite_entropy(&mu_prime.masses(), &image);
    let source_entropy = sigma_finite_entropy(&mu.masses(), &nu_masses);
    EffortReport { target_entropy, source_entropy, effort: target_entropy - source_entropy }
}

/// `Σ m_i log(m_i / r_i)` over `m_i > 0`; `+∞` if some `r_i = 0` there.
fn sigma_finite_entropy(m: &[f64], r: &[f64]) -> f64 {
    m.iter()
        .zip(r)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| if *b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

/// Bridge control from a positive terminal density `q` on `q_axes`:
/// `v = −log E q(X_T^{x,t})` by the value-function PDE with `f ≡ 0`,
/// `g = −log q` (interpolated in `log q`), and `u* = −∇v`.
pub fn bridge_control(
    model: &DiffusionModel,
    q_axes: &[Axis],
    q: &[f64],
    grid: &FieldGrid,
) -> Result<(ControlField, ScalarField)> {
    if let Some(i) = q.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Support(format!("q is {} at node {i}; it must be strictly positive", q[i])));
    }
    let log_q = ScalarField::stationary(q_axes.to_vec(), q.iter().map(|v| v.ln()).collect())?;
    let h = Hamiltonian::new("bridge", |_, _| 0.0, move |x| -log_q.spatial_interp(0, x));
    let (_, v) = value::solve_value_pde(model, &h, grid)?;
    Ok((ControlField::neg_gradient(&v).with_domain_diameter(grid.diameter()), v))
}

/// Föllmer drift: Brownian reference from the origin and
/// `q = dμ′/dN(0, T·I)` on `μ′`'s grid. Returns the control, `v` and `q`.
pub fn follmer_drift(mu_prime: &GridMeasure, grid: &FieldGrid) -> Result<(ControlField, ScalarField, Vec<f64>)> {
    let axes = mu_prime.axes().ok_or_else(|| Error::Argument("Föllmer target must live on a grid".into()))?.to_vec();
    let horizon = grid.time.t_end();
    let q: Vec<f64> = mu_prime
        .points()
        .iter()
        .zip(&mu_prime.density)
        .enumerate()
        .map(|(i, (y, d))| {
            if *d <= 0.0 {
                return Err(Error::Support(format!("target density vanishes at node {i}")));
            }
            let gamma: f64 = y.iter().map(|yi| normal_pdf(*yi, 0.0, horizon)).product();
            Ok(d / gamma)
        })
        .collect::<Result<_>>()?;
    let model = DiffusionModel::brownian(mu_prime.dim(), 1.0);
    let (u, v) = bridge_control(&model, &axes, &q, grid)?;
    Ok((u, v, q))
}

fn initial_law(mu: &GridMeasure) -> InitialLaw {
    match &mu.support {
        Support::Point(z) => InitialLaw::Point(z.clone()),
        _ => InitialLaw::Grid(mu.clone()),
    }
}

/// Controlled paths started from draws of `μ`.
pub fn bridge_sample(
    model: &DiffusionModel,
    control: &ControlField,
    mu: &GridMeasure,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    sde::simulate_controlled(model, control, grid, &initial_law(mu), n_paths, seed, &SimOptions::default())
}

/// Terminal states and per-path control energies `½ Σ |σᵀu|² dt` of the
/// bridge, without storing paths.
pub fn bridge_terminal_and_energy(
    model: &DiffusionModel,
    control: &ControlField,
    mu: &GridMeasure,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let init = initial_law(mu);
    let sampler = init.sampler();
    let (n, m) = (model.state_dim, model.noise_dim);
    let opts = SimOptions::default();
    let out = sde::par_paths(n_paths, |p| {
        let x0 = sde::initial_state(&sampler, seed, p);
        let mut energy = 0.0;
        let x_t = sde::integrate(model, Some(control), grid, &x0, seed, p, &opts, |s| {
            if let Some(u) = s.u {
                energy += sde::control_energy_density(s.sigma, u, n, m) * s.dt;
            }
        })?;
        Ok((x_t, energy))
    })?;
    Ok(out.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(lo: f64, hi: f64, n: usize) -> Axis {
        Axis::new(lo, hi, n).unwrap()
    }

    fn gaussian(a: &Axis, m: f64, v: f64) -> GridMeasure {
        GridMeasure::probability_from_density(vec![a.clone()], |x| normal_pdf(x[0], m, v)).unwrap()
    }

    #[test]
    fn heat_kernel_rows() {
        let a = axis(-8.0, 8.0, 321);
        let k = build_kernel(&DiffusionModel::brownian(1, 1.0), &crate::measure::grid_points(std::slice::from_ref(&a)), std::slice::from_ref(&a), 1.0, KernelMethod::ClosedFormGaussian).unwrap();
        for i in 0..321 {
            assert!((k.row_mass(i) - 1.0).abs() < 1e-12);
        }
        // interior rows barely needed rescaling
        let i = 160;
        let j = 180;
        let exact = normal_pdf(a.node(j), a.node(i), 1.0);
        assert!((k.log_density(i, j).exp() - exact).abs() < 1e-9);
    }

    #[test]
    fn ou_kernel_matches_transition() {
        let a = axis(-6.0, 6.0, 241);
        let src = vec![vec![-1.0], vec![0.0], vec![2.0]];
        let k = build_kernel(&DiffusionModel::ornstein_uhlenbeck(1.0, 1.0), &src, std::slice::from_ref(&a), 1.0, KernelMethod::ClosedFormGaussian).unwrap();
        let var = (1.0 - (-2.0f64).exp()) / 2.0;
        for (i, z) in src.iter().enumerate() {
            for j in 0..241 {
                let exact = normal_pdf(a.node(j), z[0] * (-1.0f64).exp(), var);
                assert!((k.log_density(i, j).exp() - exact).abs() < 1e-4);
            }
        }
        let solved = build_kernel(&DiffusionModel::ornstein_uhlenbeck(1.0, 1.0), &src, std::slice::from_ref(&a), 1.0, KernelMethod::KolmogorovSolve { n_steps: 400 }).unwrap();
        for i in 0..3 {
            for j in 0..241 {
                assert!((solved.log_density(i, j).exp() - k.log_density(i, j).exp()).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn short_time_concentration() {
        let a = axis(-4.0, 4.0, 801);
        let t = 0.01;
        let k = build_kernel(&DiffusionModel::brownian(1, 1.0), &[vec![0.0]], std::slice::from_ref(&a), t, KernelMethod::ClosedFormGaussian).unwrap();
        let far: f64 = (0..801)
            .filter(|&j| a.node(j).abs() > 5.0 * t.sqrt())
            .map(|j| k.log_density(0, j).exp() * k.tgt_weights[j])
            .sum();
        assert!(far < 1e-6);
    }

    #[test]
    fn non_affine_models_need_the_solver() {
        let m = DiffusionModel::scalar("sin", |x, _| x.sin(), |_, _| 1.0);
        let a = axis(-1.0, 1.0, 11);
        assert!(matches!(build_kernel(&m, &[vec![0.0]], &[a], 1.0, KernelMethod::ClosedFormGaussian), Err(Error::Capability(_))));
    }

    #[test]
    fn no_tilt_needed_for_the_image() {
        let a = axis(-8.0, 8.0, 161);
        let pts = crate::measure::grid_points(std::slice::from_ref(&a));
        let k = build_kernel(&DiffusionModel::brownian(1, 1.0), &pts, std::slice::from_ref(&a), 1.0, KernelMethod::ClosedFormGaussian).unwrap();
        let mu = gaussian(&a, 0.0, 0.5);
        let image = k.push_forward(&mu.masses());
        let mu_prime = GridMeasure::new(mu.support.clone(), image.iter().zip(&mu.weights).map(|(m, w)| m / w).collect(), mu.weights.clone(), MeasureKind::Probability).unwrap();
        let s = fortet_iteration(&k, &mu, &mu_prime, 1e-12, 10).unwrap();
        assert_eq!(s.iterations, 1);
        assert!(s.q().iter().all(|q| (q - 1.0).abs() < 1e-9));
        for (a, b) in s.nu.density.iter().zip(&mu.density) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }
        let e = control_effort(&s, &k, &mu, &mu_prime);
        assert!(e.effort.abs() < 1e-8);
    }

    #[test]
    fn uniform_two_state_kernel_decouples() {
        let pts = vec![vec![0.0], vec![1.0]];
        let k = TransitionKernel::from_matrix(pts.clone(), pts.clone(), vec![1.0, 1.0], vec![0.5; 4], 1.0).unwrap();
        let mu = GridMeasure::atoms(pts.clone(), vec![0.5, 0.5]).unwrap();
        let mu_prime = GridMeasure::atoms(pts, vec![0.3, 0.7]).unwrap();
        let s = fortet_iteration(&k, &mu, &mu_prime, 1e-14, 10).unwrap();
        let expect = [0.15, 0.35, 0.15, 0.35];
        for (a, b) in s.coupling.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_bridge_converges_to_closed_form() {
        let a = axis(-7.0, 8.0, 601);
        let pts = crate::measure::grid_points(std::slice::from_ref(&a));
        let k = build_kernel(&DiffusionModel::brownian(1, 1.0), &pts, std::slice::from_ref(&a), 1.0, KernelMethod::ClosedFormGaussian).unwrap();
        let mu = gaussian(&a, 0.0, 0.25);
        let mu_prime = gaussian(&a, 1.0, 0.25);
        let s = fortet_iteration(&k, &mu, &mu_prime, 1e-10, 200).unwrap();
        assert!(s.iterations < 200);
        let (m1, m2) = (s.first_marginal(), s.second_marginal());
        assert!(total_variation(&m1, &mu.masses()) < 1e-8);
        assert!(total_variation(&m2, &mu_prime.masses()) < 1e-8);
        assert!(s.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15));
        // cross-covariance of the entropic coupling
        let nt = a.n_nodes;
        let mut cov = 0.0;
        for i in 0..nt {
            for j in 0..nt {
                cov += s.coupling[i * nt + j] * a.node(i) * (a.node(j) - 1.0);
            }
        }
        assert!((cov - 0.0590169944).abs() < 1e-4, "{cov}");
        assert!(s.warnings.is_empty(), "{:?}", s.warnings);
    }

    #[test]
    fn gauge_invariance() {
        let a = axis(-5.0, 6.0, 221);
        let pts = crate::measure::grid_points(std::slice::from_ref(&a));
        let k = build_kernel(&DiffusionModel::brownian(1, 1.0), &pts, std::slice::from_ref(&a), 1.0, KernelMethod::ClosedFormGaussian).unwrap();
        let mu = gaussian(&a, 0.0, 0.25);
        let mu_prime = gaussian(&a, 1.0, 0.25);
        let s = fortet_iteration(&k, &mu, &mu_prime, 1e-10, 500).unwrap();
        let r = s.regauge(17.0).unwrap();
        let nt = a.n_nodes;
        let again = coupling_masses(&k, &r.log_a, &r.log_b);
        for (x, y) in s.coupling.iter().zip(&again) {
            assert!((x - y).abs() < 1e-10);
        }
        let (e1, e2) = (control_effort(&s, &k, &mu, &mu_prime), control_effort(&r, &k, &mu, &mu_prime));
        assert!((e1.effort - e2.effort).abs() < 1e-10);
        let grid = FieldGrid::uniform_1d(-5.0, 6.0, nt, 1.0, 50).unwrap();
        let bm = DiffusionModel::brownian(1, 1.0);
        let (u1, _) = bridge_control(&bm, std::slice::from_ref(&a), s.q(), &grid).unwrap();
        let (u2, _) = bridge_control(&bm, std::slice::from_ref(&a), r.q(), &grid).unwrap();
        for x in [-1.0, 0.0, 0.7, 2.0] {
            assert!((u1.eval_1d(x, 0.3) - u2.eval_1d(x, 0.3)).abs() < 1e-10);
        }
    }

    #[test]
    fn nonconvergence_reports_history() {
        let a = axis(-5.0, 6.0, 111);
        let pts = crate::measure::grid_points(std::slice::from_ref(&a));
        let k = build_kernel(&DiffusionModel::brownian(1, 1.0), &pts, std::slice::from_ref(&a), 0.05, KernelMethod::ClosedFormGaussian).unwrap();
        let mu = gaussian(&a, 0.0, 0.25);
        let mu_prime = gaussian(&a, 1.0, 0.25);
        match fortet_iteration(&k, &mu, &mu_prime, 1e-14, 3) {
            Err(Error::NonConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bridge_control_oracles() {
        let a = axis(-8.0, 8.0, 321);
        let grid = FieldGrid::uniform_1d(-8.0, 8.0, 321, 1.0, 200).unwrap();
        let bm = DiffusionModel::brownian(1, 1.0);
        let (u, _) = bridge_control(&bm, std::slice::from_ref(&a), &vec![1.0; 321], &grid).unwrap();
        assert!(u.eval_1d(0.5, 0.5).abs() < 1e-12);
        let q: Vec<f64> = a.nodes().iter().map(|&x| normal_pdf(x, 0.0, 0.5) / normal_pdf(x, 0.0, 1.0)).collect();
        let (u, _) = bridge_control(&bm, std::slice::from_ref(&a), &q, &grid).unwrap();
        for t in [0.0, 0.5, 0.9] {
            for x in [-2.0, -0.5, 0.0, 1.0, 2.5] {
                assert!((u.eval_1d(x, t) + x / (2.0 - t)).abs() < 1e-2, "{x} {t}");
            }
        }
        let q: Vec<f64> = a.nodes().iter().map(|&x| normal_pdf(x, 1.5, 1.0) / normal_pdf(x, 0.0, 1.0)).collect();
        let (u, _) = bridge_control(&bm, std::slice::from_ref(&a), &q, &grid).unwrap();
        for x in [-2.0, 0.0, 2.0] {
            assert!((u.eval_1d(x, 0.2) - 1.5).abs() < 1e-2);
        }
        let mut bad = q.clone();
        bad[3] = 0.0;
        assert!(matches!(bridge_control(&bm, &[a], &bad, &grid), Err(Error::Support(_))));
    }

    #[test]
    fn follmer_oracles() {
        let a = axis(-8.0, 8.0, 321);
        let grid = FieldGrid::uniform_1d(-8.0, 8.0, 321, 1.0, 200).unwrap();
        let (u, _, _) = follmer_drift(&gaussian(&a, 0.0, 1.0), &grid).unwrap();
        assert!(u.eval_1d(1.3, 0.4).abs() < 1e-6);
        let (u, _, _) = follmer_drift(&gaussian(&a, 0.0, 0.5), &grid).unwrap();
        assert!((u.eval_1d(1.0, 0.0) + 0.5).abs() < 1e-2);
        let (u, _, _) = follmer_drift(&gaussian(&a, 1.0, 1.0), &grid).unwrap();
        assert!((u.eval_1d(0.3, 0.0) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn follmer_effort_and_sampling() {
        let a = axis(-8.0, 8.0, 321);
        let target = gaussian(&a, 1.0, 1.0);
        let k = build_kernel(&DiffusionModel::brownian(1, 1.0), &[vec![0.0]], std::slice::from_ref(&a), 1.0, KernelMethod::ClosedFormGaussian).unwrap();
        let mu = GridMeasure::dirac(vec![0.0]);
        let s = fortet_iteration(&k, &mu, &target, 1e-12, 10).unwrap();
        let e = control_effort(&s, &k, &mu, &target);
        assert!((e.effort - 0.5).abs() < 1e-4, "{e:?}");
        let grid = FieldGrid::uniform_1d(-8.0, 8.0, 321, 1.0, 200).unwrap();
        let (u, _, _) = follmer_drift(&target, &grid).unwrap();
        let time = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let (xs, energy) = bridge_terminal_and_energy(&DiffusionModel::brownian(1, 1.0), &u, &mu, &time, 20_000, 4).unwrap();
        let x: Vec<f64> = xs.iter().map(|v| v[0]).collect();
        let (m, se) = stats::mean_and_se(&x);
        assert!((m - 1.0).abs() < 3.0 * se + 1e-2);
        let (j, jse) = stats::mean_and_se(&energy);
        assert!((j - 0.5).abs() < 3.0 * jse + 1e-2, "{j} {jse}");
        let narrow = gaussian(&a, 0.0, 0.5);
        let s = fortet_iteration(&k, &mu, &narrow, 1e-12, 10).unwrap();
        let e = control_effort(&s, &k, &mu, &narrow);
        assert!((e.effort - 0.5 * (2f64.ln() - 0.5)).abs() < 1e-4);
    }
}
