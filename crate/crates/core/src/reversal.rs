//! Time reversal of a diffusion: forward Kolmogorov density evolution, the
//! reversed drift, the reversal Hamiltonian whose value function is
//! `-log p̄`, reversed-process sampling and the differential entropy.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::gibbs::{self, FiniteSpace};
use crate::grid::{FieldGrid, TimeGrid};
use crate::linalg::{self, Csr};
use crate::measure::{GridMeasure, MeasureKind, Support};
use crate::model::{DiffusionModel, InitialLaw};
use crate::sde::{self, SimOptions};
use crate::stats;
use crate::value::{self, Hamiltonian, ValueEstimate};

/// Floor below which `p̄` counts as zero in the reversed drift.
pub const DENSITY_FLOOR: f64 = 1e-30;
const MASS_TOLERANCE: f64 = 1e-3;
const NEGATIVE_TOLERANCE: f64 = -1e-12;
/// Step for finite differences of model coefficients.
const COEFFICIENT_STEP: f64 = 1e-4;

/// `p(x, t)` on a space-time grid with the quadrature mass at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEvolution {
    pub density: ScalarField,
    pub mass: Vec<f64>,
}

impl DensityEvolution {
    pub fn grid(&self) -> &FieldGrid {
        &self.density.grid
    }

    pub fn horizon(&self) -> f64 {
        self.grid().time.t_end()
    }

    pub fn initial(&self) -> &[f64] {
        self.density.slice(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.density.slice(self.grid().time.n_steps())
    }

    /// Density at time node `k` as a probability grid measure.
    pub fn measure_at(&self, k: usize) -> Result<GridMeasure> {
        let grid = self.grid();
        let w = grid.quadrature();
        let d = self.density.slice(k);
        let total: f64 = d.iter().zip(&w).map(|(a, b)| a * b).sum();
        GridMeasure::new(
            Support::Grid(grid.axes.clone()),
            d.iter().map(|v| v / total).collect(),
            w,
            MeasureKind::Probability,
        )
    }
}

/// Node values of `p0` on the grid.
pub fn density_on_grid(grid: &FieldGrid, p0: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.n_space())
        .map(|i| {
            grid.point(i, &mut x);
            p0(&x)
        })
        .collect()
}

/// Solves `∂t p = −Σ ∂i(b_i p) + ½ ΣΣ ∂i∂j(a_ij p)` forward by implicit
/// Euler on a conservative finite-volume discretization with zero-flux
/// walls. Advection is centered where the cell Péclet number allows and
/// upwinded elsewhere. `p0` holds node values and is rescaled to unit mass.
pub fn solve_forward_kolmogorov(model: &DiffusionModel, p0: &[f64], grid: &FieldGrid) -> Result<DensityEvolution> {
    if model.state_dim != grid.dim() {
        return Err(Error::Argument("model and grid dimensions differ".into()));
    }
    let ns = grid.n_space();
    if p0.len() != ns {
        return Err(Error::Argument(format!("initial density has {} values, grid has {ns} nodes", p0.len())));
    }
    if let Some(i) = p0.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Argument(format!("initial density at node {i} is {}", p0[i])));
    }
    let w = grid.quadrature();
    let total: f64 = p0.iter().zip(&w).map(|(a, b)| a * b).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Argument(format!("initial density has mass {total}")));
    }
    let tg = &grid.time;
    let nt = tg.n_nodes();
    let dt = tg.dt();
    let mut values = Vec::with_capacity(ns * nt);
    values.extend(p0.iter().map(|v| v / total));
    let mut mass = vec![1.0];
    for k in 1..nt {
        let t = tg.time(k);
        let prev = values[(k - 1) * ns..k * ns].to_vec();
        let rows = assemble(model, grid, t, dt, &w);
        let mut next = if grid.dim() == 1 {
            let mut lower = vec![0.0; ns];
            let mut diag = vec![0.0; ns];
            let mut upper = vec![0.0; ns];
            for (i, row) in rows.iter().enumerate() {
                for &(c, v) in row {
                    if c + 1 == i {
                        lower[i] += v;
                    } else if c == i {
                        diag[i] += v;
                    } else {
                        upper[i] += v;
                    }
                }
            }
            linalg::solve_tridiagonal(&lower, &diag, &upper, &prev)?
        } else {
            let m = Csr::from_rows(rows);
            let mut sol = prev.clone();
            linalg::bicgstab(&m, &prev, &mut sol, 1e-14, 10_000)?;
            sol
        };
        for (i, v) in next.iter_mut().enumerate() {
            if *v < NEGATIVE_TOLERANCE || !v.is_finite() {
                return Err(Error::Positivity { node: grid.multi_index(i), t, value: *v });
            }
            *v = v.max(0.0);
        }
        let m: f64 = next.iter().zip(&w).map(|(a, b)| a * b).sum();
        if (m - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Conservation { t, drift: m - 1.0 });
        }
        mass.push(m);
        values.extend(next);
    }
    Ok(DensityEvolution { density: ScalarField::new(grid.clone(), values)?, mass })
}

/// Rows of `I + dt · W⁻¹ · (flux divergence)` at time `t`.
fn assemble(model: &DiffusionModel, grid: &FieldGrid, t: f64, dt: f64, w: &[f64]) -> Vec<Vec<(usize, f64)>> {
    let dim = grid.dim();
    let ns = grid.n_space();
    let n = model.state_dim;
    let mut sig = vec![0.0; n * model.noise_dim];
    let mut a_nodes = vec![0.0; ns * n * n];
    let mut x = vec![0.0; dim];
    for i in 0..ns {
        grid.point(i, &mut x);
        model.covariance(&x, t, &mut sig, &mut a_nodes[i * n * n..(i + 1) * n * n]);
    }
    let a_at = |idx: usize, r: usize, c: usize| a_nodes[idx * n * n + r * n + c];
    let strides: Vec<usize> = if dim == 1 { vec![1] } else { vec![grid.axes[1].n_nodes, 1] };
    let mut rows: Vec<Vec<(usize, f64)>> = (0..ns).map(|i| vec![(i, 1.0)]).collect();
    let mut b = vec![0.0; n];
    let widths: Vec<Vec<f64>> = grid.axes.iter().map(|a| a.quadrature()).collect();
    for d in 0..dim {
        let axis = &grid.axes[d];
        let h = axis.step();
        let stride = strides[d];
        for left in 0..ns {
            let md = grid.multi_index(left);
            if md[d] + 1 == axis.n_nodes {
                continue;
            }
            let right = left + stride;
            // face midpoint
            grid.point(left, &mut x);
            x[d] += 0.5 * h;
            (model.drift)(&x, t, &mut b);
            let bf = b[d];
            let (al, ar) = (a_at(left, d, d), a_at(right, d, d));
            // flux through the face, as coefficients on node values
            let mut terms: Vec<(usize, f64)> = Vec::with_capacity(6);
            if bf.abs() * h <= al.min(ar) {
                terms.push((left, 0.5 * bf));
                terms.push((right, 0.5 * bf));
            } else if bf > 0.0 {
                terms.push((left, bf));
            } else {
                terms.push((right, bf));
            }
            terms.push((left, 0.5 * al / h));
            terms.push((right, -0.5 * ar / h));
            if dim == 2 {
                // −½ ∂_e(a_de p) at the face, e the other axis
                let e = 1 - d;
                let ne = grid.axes[e].n_nodes;
                let se = strides[e];
                let j = md[e];
                let (jm, jp) = (j.saturating_sub(1), (j + 1).min(ne - 1));
                if jp > jm {
                    let he = grid.axes[e].step() * (jp - jm) as f64;
                    let c = -0.5 / (2.0 * he);
                    for base in [left, right] {
                        let up = base + (jp - j) * se;
                        let dn = base - (j - jm) * se;
                        terms.push((up, c * a_at(up, d, e)));
                        terms.push((dn, -c * a_at(dn, d, e)));
                    }
                }
            }
            // face length over cell measure for the two neighbours
            let face = if dim == 1 { 1.0 } else { widths[1 - d][md[1 - d]] };
            let (wl, wr) = (w[left] / face, w[right] / face);
            for &(col, v) in &terms {
                rows[left].push((col, dt * v / wl));
                rows[right].push((col, -dt * v / wr));
            }
        }
    }
    rows
}

/// Reversed-time coefficients on the evolution grid, with `t` running in
/// reversed time (`t = 0` corresponds to forward time `T`).
#[derive(Debug, Clone)]
pub struct ReversedModel {
    pub horizon: f64,
    pub floor: f64,
    /// `p̄(x, t) = p(x, T − t)`.
    pub density: ScalarField,
    /// `∇log p̄` components; `p̄ ∇log p̄` is the stencil for `∇p̄`.
    pub score: Vec<ScalarField>,
    /// `b̄` components.
    pub drift: Vec<ScalarField>,
    /// `b̂_i = −b_i(x, T − t) + Σ_j ∂_j ā_ij` components.
    pub drift_hat: Vec<ScalarField>,
    /// `ā` entries, `n × n` row-major.
    pub covariance: Vec<ScalarField>,
    /// Simulable view with drift `b̄`, diffusion `σ(x, T − t)` and initial
    /// law `p(·, T)`.
    pub model: DiffusionModel,
}

impl ReversedModel {
    /// `max |b̄ − b̂ − ā ∇p̄ / p̄|` over nodes with `p̄ ≥ 10 ε`.
    pub fn identity_defect(&self) -> f64 {
        let grad_p: Vec<Vec<f64>> = self
            .score
            .iter()
            .map(|s| s.values.iter().zip(&self.density.values).map(|(a, p)| a * p).collect())
            .collect();
        let n = self.drift.len();
        let mut worst: f64 = 0.0;
        for (idx, &p) in self.density.values.iter().enumerate() {
            if p < 10.0 * self.floor {
                continue;
            }
            for i in 0..n {
                let score: f64 = (0..n).map(|j| self.covariance[i * n + j].values[idx] * grad_p[j][idx]).sum();
                let defect = self.drift[i].values[idx] - self.drift_hat[i].values[idx] - score / p;
                worst = worst.max(defect.abs());
            }
        }
        worst
    }
}

/// Builds `b̄ = −b(x, T−t) + p̄⁻¹ Σ_j ∂_j(ā_ij p̄)` on the grid. Derivatives
/// of products use the discrete Leibniz form `ā Dp̄ + p̄ Dā` so that the
/// split `b̄ = b̂ + ā ∇log p̄` holds node by node; `Dp̄ = p̄ D(log p̄)`, which
/// is exact for Gaussian profiles. Where `p̄ < ε` the density term is
/// dropped.
pub fn reversed_drift(evolution: &DensityEvolution, model: &DiffusionModel) -> Result<ReversedModel> {
    let grid = evolution.grid().clone();
    if grid.time.t_start() != 0.0 {
        return Err(Error::Argument("evolution must start at t = 0".into()));
    }
    require_density_machinery(model)?;
    let horizon = grid.time.t_end();
    let n = model.state_dim;
    let ns = grid.n_space();
    let nt = grid.time.n_nodes();
    let p_bar = evolution.density.time_reversed();
    let mut x = vec![0.0; n];
    let mut sig = vec![0.0; n * model.noise_dim];
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    let mut a_vals = vec![vec![0.0; ns * nt]; n * n];
    let mut minus_b = vec![vec![0.0; ns * nt]; n];
    for k in 0..nt {
        let t_fwd = horizon - grid.time.time(k);
        for idx in 0..ns {
            grid.point(idx, &mut x);
            model.covariance(&x, t_fwd, &mut sig, &mut a);
            (model.drift)(&x, t_fwd, &mut b);
            for e in 0..n * n {
                a_vals[e][k * ns + idx] = a[e];
            }
            for i in 0..n {
                minus_b[i][k * ns + idx] = -b[i];
            }
        }
    }
    let covariance: Vec<ScalarField> =
        a_vals.into_iter().map(|v| ScalarField::new(grid.clone(), v)).collect::<Result<_>>()?;
    let grad_a: Vec<Vec<ScalarField>> = covariance.iter().map(|f| f.gradient()).collect();
    // score ∇log p̄ by central differences of log p̄; Dp̄ := p̄ · score
    let score = p_bar.map(|p| p.max(f64::MIN_POSITIVE).ln())?.gradient();
    let mut drift = Vec::with_capacity(n);
    let mut drift_hat = Vec::with_capacity(n);
    for i in 0..n {
        let mut bar = minus_b[i].clone();
        let mut hat = minus_b[i].clone();
        for idx in 0..ns * nt {
            let div_a: f64 = (0..n).map(|j| grad_a[i * n + j][j].values[idx]).sum();
            hat[idx] += div_a;
            let p = p_bar.values[idx];
            if p >= DENSITY_FLOOR {
                let flux: f64 = (0..n)
                    .map(|j| {
                        let dp = p * score[j].values[idx];
                        covariance[i * n + j].values[idx] * dp + p * grad_a[i * n + j][j].values[idx]
                    })
                    .sum();
                bar[idx] += flux / p;
            }
        }
        drift.push(ScalarField::new(grid.clone(), bar)?);
        drift_hat.push(ScalarField::new(grid.clone(), hat)?);
    }
    let fields = Arc::new(drift.clone());
    let fwd = model.diffusion.clone();
    let reversed = DiffusionModel {
        name: format!("{}_reversed", model.name),
        state_dim: n,
        noise_dim: model.noise_dim,
        drift: Arc::new(move |x, t, out| {
            for (o, f) in out.iter_mut().zip(fields.iter()) {
                *o = f.eval(x, t);
            }
        }),
        diffusion: Arc::new(move |x, t, out| fwd(x, horizon - t, out)),
        drift_jacobian: None,
        diffusion_jacobian: None,
        initial: InitialLaw::Grid(evolution.measure_at(grid.time.n_steps())?),
        ellipticity: model.ellipticity,
    };
    Ok(ReversedModel { horizon, floor: DENSITY_FLOOR, density: p_bar, score, drift, drift_hat, covariance, model: reversed })
}

fn require_density_machinery(model: &DiffusionModel) -> Result<()> {
    match model.ellipticity {
        Some(c) if c > 0.0 => Ok(()),
        _ => Err(Error::Capability(format!(
            "time reversal needs a uniformly elliptic model; '{}' is not declared so",
            model.name
        ))),
    }
}

/// `b̂_i(x, t) = −b_i(x, T − t) + Σ_j ∂_j a_ij(x, T − t)`, derivatives of `a`
/// by central differences.
fn drift_hat_at(model: &DiffusionModel, horizon: f64, x: &[f64], t: f64, out: &mut [f64]) {
    let n = model.state_dim;
    let t_fwd = horizon - t;
    (model.drift)(x, t_fwd, out);
    out.iter_mut().for_each(|v| *v = -*v);
    let mut sig = vec![0.0; n * model.noise_dim];
    let mut ap = vec![0.0; n * n];
    let mut am = vec![0.0; n * n];
    let mut y = x.to_vec();
    for j in 0..n {
        y[j] = x[j] + COEFFICIENT_STEP;
        model.covariance(&y, t_fwd, &mut sig, &mut ap);
        y[j] = x[j] - COEFFICIENT_STEP;
        model.covariance(&y, t_fwd, &mut sig, &mut am);
        y[j] = x[j];
        for (i, o) in out.iter_mut().enumerate() {
            *o += (ap[i * n + j] - am[i * n + j]) / (2.0 * COEFFICIENT_STEP);
        }
    }
}

/// Reference model for the value-function reading of the reversal: drift
/// `b̂`, diffusion `σ(x, T − t)`.
pub fn reversal_reference(model: &DiffusionModel, horizon: f64) -> DiffusionModel {
    let m = model.clone();
    let fwd = model.diffusion.clone();
    DiffusionModel {
        name: format!("{}_reversal_reference", model.name),
        state_dim: model.state_dim,
        noise_dim: model.noise_dim,
        drift: Arc::new(move |x, t, out| drift_hat_at(&m, horizon, x, t, out)),
        diffusion: Arc::new(move |x, t, out| fwd(x, horizon - t, out)),
        drift_jacobian: None,
        diffusion_jacobian: None,
        initial: model.initial.clone(),
        ellipticity: model.ellipticity,
    }
}

/// Hamiltonian with `f = div b̂` and `g = −log p(·, 0)`. `g` interpolates
/// `log p(·, 0)` between grid nodes.
pub fn reversal_hamiltonian(model: &DiffusionModel, evolution: &DensityEvolution) -> Result<Hamiltonian> {
    let grid = evolution.grid().clone();
    let p0 = evolution.initial();
    if let Some(i) = p0.iter().position(|&p| p <= 0.0) {
        return Err(Error::Support(format!("initial density vanishes at node {:?}", grid.multi_index(i))));
    }
    let horizon = evolution.horizon();
    let log_p0 = ScalarField::stationary(grid.axes.clone(), p0.iter().map(|p| p.ln()).collect())?;
    let m = model.clone();
    let n = model.state_dim;
    let running = move |x: &[f64], t: f64| {
        let mut y = x.to_vec();
        let mut bp = vec![0.0; n];
        let mut bm = vec![0.0; n];
        let mut div = 0.0;
        for i in 0..n {
            y[i] = x[i] + COEFFICIENT_STEP;
            drift_hat_at(&m, horizon, &y, t, &mut bp);
            y[i] = x[i] - COEFFICIENT_STEP;
            drift_hat_at(&m, horizon, &y, t, &mut bm);
            y[i] = x[i];
            div += (bp[i] - bm[i]) / (2.0 * COEFFICIENT_STEP);
        }
        div
    };
    let terminal = move |x: &[f64]| -log_p0.spatial_interp(0, x);
    Ok(Hamiltonian::new("reversal", running, terminal))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeValue {
    pub z: Vec<f64>,
    pub t: f64,
    pub minus_log_density: f64,
    pub mc: ValueEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCheck {
    /// Largest `|v + log p̄|` over interior nodes inside the window.
    pub max_discrepancy: f64,
    pub window: Vec<(f64, f64)>,
    pub probes: Vec<ProbeValue>,
}

/// Compares the value function of the reversal Hamiltonian (PDE route on
/// the same grid) with `−log p̄` from the Kolmogorov solve, and checks the
/// Monte-Carlo route at probe points `(z, t)` in reversed time.
#[allow(clippy::too_many_arguments)]
pub fn reversal_value_check(
    model: &DiffusionModel,
    evolution: &DensityEvolution,
    window: &[(f64, f64)],
    probes: &[(Vec<f64>, f64)],
    mc_steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ValueCheck> {
    let grid = evolution.grid();
    let h = reversal_hamiltonian(model, evolution)?;
    let reference = reversal_reference(model, evolution.horizon());
    let (_, v) = value::solve_value_pde(&reference, &h, grid)?;
    let minus_log_p = evolution.density.time_reversed().map(|p| -p.max(f64::MIN_POSITIVE).ln())?;
    let nt = grid.time.n_nodes();
    let mut x = vec![0.0; grid.dim()];
    let mut max_discrepancy: f64 = 0.0;
    for k in 0..nt {
        for idx in 0..grid.n_space() {
            if grid.is_boundary(idx) {
                continue;
            }
            grid.point(idx, &mut x);
            if x.iter().zip(window).all(|(xi, (lo, hi))| xi >= lo && xi <= hi) {
                max_discrepancy = max_discrepancy.max((v.at(k, idx) - minus_log_p.at(k, idx)).abs());
            }
        }
    }
    let mc_grid = TimeGrid::new(0.0, evolution.horizon(), mc_steps)?;
    let probes = probes
        .iter()
        .map(|(z, t)| {
            let mc = value::estimate_value_mc(&reference, &h, z, *t, &mc_grid, n_samples, seed)?;
            Ok(ProbeValue { z: z.clone(), t: *t, minus_log_density: minus_log_p.eval(z, *t), mc })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueCheck { max_discrepancy, window: window.to_vec(), probes })
}

/// One row of the marginal comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub probe_t: f64,
    pub fwd_mean: f64,
    pub fwd_var: f64,
    pub rev_mean: f64,
    pub rev_var: f64,
    pub mean_se: f64,
    pub var_se: f64,
    pub ks_stat: f64,
    pub ks_p_value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub rows: Vec<MarginalRow>,
}

impl MarginalReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// `probe_t,fwd_mean,fwd_var,rev_mean,rev_var,ks_stat,pass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "probe_t,fwd_mean,fwd_var,rev_mean,rev_var,ks_stat,pass")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                r.probe_t, r.fwd_mean, r.fwd_var, r.rev_mean, r.rev_var, r.ks_stat, r.pass
            )?;
        }
        Ok(())
    }
}

/// Simulates the forward process from `p(·, 0)` and the reversed process
/// from `p(·, T)` on `time` and compares the first coordinate of the reversed
/// marginal at each probe `t` with the forward marginal at `T − t`: means and
/// variances within 3 combined standard errors, two-sample KS at level 0.01.
pub fn simulate_reversal(
    model: &DiffusionModel,
    evolution: &DensityEvolution,
    time: &TimeGrid,
    probes: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<(ReversedModel, MarginalReport)> {
    let reversed = reversed_drift(evolution, model)?;
    let horizon = evolution.horizon();
    if (time.t_end() - horizon).abs() > 1e-12 || time.t_start() != 0.0 {
        return Err(Error::Argument("simulation grid must span the evolution horizon".into()));
    }
    let rev_nodes: Vec<usize> = probes.iter().map(|&t| time.nearest_node(t)).collect();
    let fwd_nodes: Vec<usize> = rev_nodes.iter().map(|&k| time.n_steps() - k).collect();
    let init = InitialLaw::Grid(evolution.measure_at(0)?);
    let opts = SimOptions::default();
    let fwd = sde::simulate_marginals(model, None, time, &init, n_paths, seed, &opts, &fwd_nodes)?;
    let rev_seed = crate::rng::derive_seed(seed, 1);
    let rev = sde::simulate_marginals(
        &reversed.model,
        None,
        time,
        &reversed.model.initial,
        n_paths,
        rev_seed,
        &opts,
        &rev_nodes,
    )?;
    let rows = probes
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let f: Vec<f64> = fwd[j].iter().map(|x| x[0]).collect();
            let r: Vec<f64> = rev[j].iter().map(|x| x[0]).collect();
            let (fm, fse) = stats::mean_and_se(&f);
            let (rm, rse) = stats::mean_and_se(&r);
            let (fv, rv) = (stats::variance(&f), stats::variance(&r));
            let mean_se = (fse * fse + rse * rse).sqrt();
            let var_se = (stats::variance_se(&f).powi(2) + stats::variance_se(&r).powi(2)).sqrt();
            let ks = stats::ks_two_sample(&f, &r);
            let pass = (fm - rm).abs() <= 3.0 * mean_se && (fv - rv).abs() <= 3.0 * var_se && ks.passes(0.01);
            MarginalRow {
                probe_t: t,
                fwd_mean: fm,
                fwd_var: fv,
                rev_mean: rm,
                rev_var: rv,
                mean_se,
                var_se,
                ks_stat: ks.statistic,
                ks_p_value: ks.p_value,
                pass,
            }
        })
        .collect();
    Ok((reversed, MarginalReport { rows }))
}

/// Differential entropy `−∫ p(·, T) log p(·, T)` by grid quadrature.
pub fn reversal_free_energy(evolution: &DensityEvolution) -> f64 {
    differential_entropy(evolution.terminal(), &evolution.grid().quadrature())
}

/// `−Σ w p log p` with `0 log 0 = 0`.
pub fn differential_entropy(density: &[f64], weights: &[f64]) -> f64 {
    density.iter().zip(weights).filter(|(p, _)| **p > 0.0).map(|(p, w)| -w * p * p.ln()).sum()
}

/// Free energy of the reversed Gibbs mixture computed by the finite-space
/// variational machinery: energy `v(·, 0)` from the PDE route, initial law
/// `p(·, T)` as both reference and candidate. Returns
/// `(free energy, entropy from the density)`.
pub fn reversal_entropy_check(model: &DiffusionModel, evolution: &DensityEvolution) -> Result<(f64, f64)> {
    let grid = evolution.grid();
    let h = reversal_hamiltonian(model, evolution)?;
    let reference = reversal_reference(model, evolution.horizon());
    let (_, v) = value::solve_value_pde(&reference, &h, grid)?;
    let law = evolution.measure_at(grid.time.n_steps())?.masses();
    let space = FiniteSpace::unlabelled(law.clone(), v.slice(0).to_vec())?;
    let f = gibbs::free_energy(&law, &space)?;
    Ok((f, reversal_free_energy(evolution)))
}
