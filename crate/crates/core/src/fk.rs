//! Feynman–Kac averages `⟨F, P*⟩` under the tilted law `dP* ∝ e^{-H} dP`
//! by three estimators: self-normalized reweighting, killing, and
//! controlled-drift sampling.

use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::DiffusionModel;
use crate::path::Path;
use crate::rng::{derive_seed, PathStream, Purpose};
use crate::sde::{self, SimOptions};
use crate::stats;
use crate::value::Hamiltonian;

/// A real-valued function of a whole path.
#[derive(Clone)]
pub struct PathFunctional {
    pub name: String,
    pub eval: Arc<dyn Fn(&Path) -> f64 + Send + Sync>,
    pub bounded: bool,
}

impl fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathFunctional").field("name", &self.name).field("bounded", &self.bounded).finish()
    }
}

impl PathFunctional {
    pub fn new(name: &str, bounded: bool, f: impl Fn(&Path) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(f), bounded }
    }

    /// `F ≡ 1`.
    pub fn one() -> Self {
        Self::new("one", true, |_| 1.0)
    }

    /// `F = φ(X_T)` for a function of the terminal state.
    pub fn terminal(name: &str, bounded: bool, phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(name, bounded, move |p| phi(p.terminal()))
    }

    /// `F = (X_T)_d^power`.
    pub fn terminal_moment(d: usize, power: i32) -> Self {
        Self::terminal(&format!("x{d}_T^{power}"), false, move |x| x[d].powi(power))
    }

    /// `F = 1{lo ≤ (X_T)_d ≤ hi}`.
    pub fn terminal_indicator(d: usize, lo: f64, hi: f64) -> Self {
        Self::terminal(&format!("1[{lo},{hi}](x{d}_T)"), true, move |x| f64::from(x[d] >= lo && x[d] <= hi))
    }

    fn apply(&self, p: &Path, index: usize) -> Result<f64> {
        let v = (self.eval)(p);
        if !v.is_finite() {
            return Err(Error::Simulation { path: index, t: p.grid.t_end(), what: format!("functional '{}' is not finite", self.name) });
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Reweight,
    Killing,
    Controlled,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Reweight => "reweight",
            Method::Killing => "killing",
            Method::Controlled => "controlled",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub method: Method,
    pub estimate: f64,
    pub std_error: f64,
    /// Kish effective sample size; reweighting only.
    pub effective_sample_size: Option<f64>,
    pub n_paths: usize,
    /// Surviving paths; killing only.
    pub survivors: Option<usize>,
    pub seed: u64,
    /// Seconds; excluded from deterministic artifacts.
    pub wall_time: f64,
}

/// Per-path `(F, H)` over reference paths from `z`.
pub fn functional_and_energy(
    model: &DiffusionModel,
    h: &Hamiltonian,
    functional: &PathFunctional,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let opts = SimOptions::default();
    sde::par_paths(n_paths, |p| {
        let path = sde::record_path(model, None, grid, z, seed, p, &opts)?;
        let f = functional.apply(&path, p)?;
        let e = crate::value::hamiltonian_eval(h, &path, 0)?;
        Ok((f, e))
    })
}

/// Self-normalized reweighting `Σ F e^{-H} / Σ e^{-H}` over reference
/// paths, with a weighted jackknife standard error.
pub fn fk_reweight(
    model: &DiffusionModel,
    h: &Hamiltonian,
    functional: &PathFunctional,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    let start = Instant::now();
    let pairs = functional_and_energy(model, h, functional, z, grid, n_paths, seed)?;
    let shift = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = pairs.iter().map(|p| (-(p.1 - shift)).exp()).collect();
    let ess = stats::effective_sample_size(&w);
    if !shift.is_finite() || ess < 2.0 {
        return Err(Error::DegenerateWeights { ess: if ess.is_finite() { ess } else { 0.0 } });
    }
    let num: Vec<f64> = pairs.iter().zip(&w).map(|(p, wi)| p.0 * wi).collect();
    let (estimate, std_error) = stats::ratio_jackknife(&num, &w);
    Ok(EstimatorReport {
        method: Method::Reweight,
        estimate,
        std_error,
        effective_sample_size: Some(ess),
        n_paths,
        survivors: None,
        seed,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Killing: during step `k` a path survives with probability
/// `exp(-f(X_k, t_k) dt)`; the estimate is the plain mean of `F` over
/// survivors. Requires `f ≥ 0` and `g ≡ 0` on every visited state.
pub fn fk_killing(
    model: &DiffusionModel,
    h: &Hamiltonian,
    functional: &PathFunctional,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    let start = Instant::now();
    let opts = SimOptions::default();
    let outcomes: Vec<Option<f64>> = sde::par_paths(n_paths, |p| {
        let mut stream = PathStream::new(seed, p, Purpose::Killing);
        let mut alive = true;
        let mut negative = None;
        let mut states = Vec::with_capacity(grid.n_nodes() * model.state_dim);
        let mut noise = Vec::with_capacity(grid.n_steps() * model.noise_dim);
        let last = sde::integrate(model, None, grid, z, seed, p, &opts, |s| {
            states.extend_from_slice(s.x);
            noise.extend_from_slice(s.dw);
            let f = (h.running)(s.x, s.t);
            if f < 0.0 && negative.is_none() {
                negative = Some((s.t, f));
            }
            // one uniform per step keeps streams aligned across paths
            let u = stream.uniform();
            if alive && u >= (-f.max(0.0) * s.dt).exp() {
                alive = false;
            }
        })?;
        if let Some((t, f)) = negative {
            return Err(Error::Precondition(format!("killing needs f >= 0, found f = {f} at t = {t} on path {p}")));
        }
        let g = (h.terminal)(&last);
        if g != 0.0 {
            return Err(Error::Precondition(format!("killing needs g = 0, found g = {g} on path {p}")));
        }
        if !alive {
            return Ok(None);
        }
        states.extend_from_slice(&last);
        let path = Path { grid: *grid, state_dim: model.state_dim, noise_dim: model.noise_dim, states, noise };
        Ok(Some(functional.apply(&path, p)?))
    })?;
    let survivors: Vec<f64> = outcomes.into_iter().flatten().collect();
    if survivors.is_empty() {
        return Err(Error::DegenerateSurvival { n_paths });
    }
    let (estimate, std_error) = stats::mean_and_se(&survivors);
    Ok(EstimatorReport {
        method: Method::Killing,
        estimate,
        std_error,
        effective_sample_size: None,
        n_paths,
        survivors: Some(survivors.len()),
        seed,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Per-path values of `F` along controlled paths.
pub fn controlled_values(
    model: &DiffusionModel,
    control: &ControlField,
    functional: &PathFunctional,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let opts = SimOptions::default();
    sde::par_paths(n_paths, |p| {
        let path = sde::record_path(model, Some(control), grid, z, seed, p, &opts)?;
        functional.apply(&path, p)
    })
}

/// Plain ensemble mean of `F` along paths driven by `b + a u*`.
pub fn fk_controlled(
    model: &DiffusionModel,
    control: &ControlField,
    functional: &PathFunctional,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    let start = Instant::now();
    let values = controlled_values(model, control, functional, z, grid, n_paths, seed)?;
    let (estimate, std_error) = stats::mean_and_se(&values);
    Ok(EstimatorReport {
        method: Method::Controlled,
        estimate,
        std_error,
        effective_sample_size: None,
        n_paths,
        survivors: None,
        seed,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Draws `n` values from the reweighted reference ensemble by systematic
/// resampling; used for two-sample law checks against controlled samples.
pub fn resample_weighted(pairs: &[(f64, f64)], n: usize, seed: u64) -> Vec<f64> {
    let shift = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = pairs.iter().map(|p| (-(p.1 - shift)).exp()).collect();
    let u0 = PathStream::new(seed, 0, Purpose::Auxiliary).uniform();
    stats::systematic_resample(&w, n, u0).into_iter().map(|i| pairs[i].0).collect()
}

/// Summary of one method across repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_estimate: f64,
    /// Standard deviation of the estimates across repeats.
    pub empirical_sd: f64,
    pub mean_std_error: f64,
    pub mean_ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub a: Method,
    pub b: Method,
    pub difference: f64,
    pub combined_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<EstimatorReport>,
    pub summaries: Vec<MethodSummary>,
    pub pairs: Vec<PairCheck>,
    /// Methods skipped because their preconditions fail, with the reason.
    pub skipped: Vec<(Method, String)>,
}

impl Comparison {
    pub fn all_pass(&self) -> bool {
        self.pairs.iter().all(|p| p.pass)
    }

    pub fn summary(&self, m: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == m)
    }

    /// One row per run: `method,estimate,std_error,ess,n,seed`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,estimate,std_error,ess,n,seed")?;
        for r in &self.runs {
            let ess = r.effective_sample_size.map(|e| format!("{e:.17e}")).unwrap_or_default();
            writeln!(w, "{},{:.17e},{:.17e},{},{},{}", r.method, r.estimate, r.std_error, ess, r.n_paths, r.seed)?;
        }
        Ok(())
    }
}

/// Runs every applicable estimator `n_repeats` times with derived seeds and
/// checks pairwise agreement of the repeat means within 3 combined standard
/// errors. Killing is attempted and skipped on precondition failure; the
/// controlled estimator runs when `control` is given.
#[allow(clippy::too_many_arguments)]
pub fn compare_estimators(
    model: &DiffusionModel,
    h: &Hamiltonian,
    control: Option<&ControlField>,
    functional: &PathFunctional,
    z: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    n_repeats: usize,
    seed: u64,
) -> Result<Comparison> {
    if n_repeats == 0 {
        return Err(Error::Argument("n_repeats must be at least 1".into()));
    }
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for r in 0..n_repeats {
        let s = derive_seed(seed, r as u64);
        runs.push(fk_reweight(model, h, functional, z, grid, n_paths, s)?);
        if !skipped.iter().any(|(m, _)| *m == Method::Killing) {
            match fk_killing(model, h, functional, z, grid, n_paths, s) {
                Ok(rep) => runs.push(rep),
                Err(Error::Precondition(why)) => skipped.push((Method::Killing, why)),
                Err(e) => return Err(e),
            }
        }
        if let Some(c) = control {
            runs.push(fk_controlled(model, c, functional, z, grid, n_paths, s)?);
        }
    }
    let mut summaries = Vec::new();
    for m in [Method::Reweight, Method::Killing, Method::Controlled] {
        let mine: Vec<&EstimatorReport> = runs.iter().filter(|r| r.method == m).collect();
        if mine.is_empty() {
            continue;
        }
        let est: Vec<f64> = mine.iter().map(|r| r.estimate).collect();
        let (mean_estimate, _) = stats::mean_and_se(&est);
        let ses: Vec<f64> = mine.iter().map(|r| r.std_error).collect();
        let ess: Vec<f64> = mine.iter().filter_map(|r| r.effective_sample_size).collect();
        summaries.push(MethodSummary {
            method: m,
            mean_estimate,
            empirical_sd: if est.len() > 1 { stats::variance(&est).sqrt() } else { 0.0 },
            mean_std_error: stats::mean_and_se(&ses).0,
            mean_ess: (!ess.is_empty()).then(|| stats::mean_and_se(&ess).0),
        });
    }
    let mut pairs = Vec::new();
    let k = n_repeats as f64;
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            let (a, b) = (&summaries[i], &summaries[j]);
            // standard error of each repeat mean; single runs use their own se
            let se = |s: &MethodSummary| if n_repeats > 1 { s.empirical_sd / k.sqrt() } else { s.mean_std_error };
            let combined_se = (se(a).powi(2) + se(b).powi(2)).sqrt();
            let difference = a.mean_estimate - b.mean_estimate;
            pairs.push(PairCheck {
                a: a.method,
                b: b.method,
                difference,
                combined_se,
                pass: difference.abs() <= 3.0 * combined_se,
            });
        }
    }
    Ok(Comparison { runs, summaries, pairs, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case_a_control() -> ControlField {
        ControlField::scalar(|x, t| -x / (2.0 - t))
    }

    fn bm() -> DiffusionModel {
        DiffusionModel::brownian(1, 1.0)
    }

    #[test]
    fn zero_hamiltonian_is_plain_average() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let f = PathFunctional::terminal_moment(0, 2);
        let rw = fk_reweight(&bm(), &Hamiltonian::zero(), &f, &[0.0], &g, 2000, 3).unwrap();
        let plain = controlled_values(&bm(), &ControlField::zero(1), &f, &[0.0], &g, 2000, 3).unwrap();
        let (m, _) = stats::mean_and_se(&plain);
        assert!((rw.estimate - m).abs() < 1e-12);
        assert!((rw.effective_sample_size.unwrap() - 2000.0).abs() < 1e-6);
        let kl = fk_killing(&bm(), &Hamiltonian::zero(), &f, &[0.0], &g, 2000, 3).unwrap();
        assert_eq!(kl.survivors, Some(2000));
        assert!((kl.estimate - m).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_exact() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let h = Hamiltonian::quadratic_terminal(1.0);
        let r = fk_reweight(&bm(), &h, &PathFunctional::one(), &[0.0], &g, 1000, 9).unwrap();
        assert_eq!(r.estimate, 1.0);
    }

    #[test]
    fn reweighting_case_a() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let h = Hamiltonian::quadratic_terminal(1.0);
        let m1 = fk_reweight(&bm(), &h, &PathFunctional::terminal_moment(0, 1), &[0.0], &g, 50_000, 1).unwrap();
        assert!(m1.estimate.abs() < 3.0 * m1.std_error);
        let m2 = fk_reweight(&bm(), &h, &PathFunctional::terminal_moment(0, 2), &[0.0], &g, 50_000, 1).unwrap();
        assert!((m2.estimate - 0.5).abs() < 3.0 * m2.std_error, "{m2:?}");
    }

    #[test]
    fn controlled_case_a() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let m2 = fk_controlled(&bm(), &case_a_control(), &PathFunctional::terminal_moment(0, 2), &[0.0], &g, 50_000, 1).unwrap();
        assert!((m2.estimate - 0.5).abs() < 3.0 * m2.std_error, "{m2:?}");
        let m1 = fk_controlled(&bm(), &case_a_control(), &PathFunctional::terminal_moment(0, 1), &[0.0], &g, 50_000, 1).unwrap();
        assert!(m1.estimate.abs() < 3.0 * m1.std_error);
    }

    #[test]
    fn killing_with_constant_rate_matches_plain_average() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let f = PathFunctional::terminal_indicator(0, -1.0, 1.0);
        let k = fk_killing(&bm(), &Hamiltonian::constant_running(1.0), &f, &[0.0], &g, 40_000, 4).unwrap();
        let plain = fk_reweight(&bm(), &Hamiltonian::zero(), &f, &[0.0], &g, 40_000, 5).unwrap();
        let se = (k.std_error.powi(2) + plain.std_error.powi(2)).sqrt();
        assert!((k.estimate - plain.estimate).abs() < 3.0 * se);
        let alive = k.survivors.unwrap() as f64 / 40_000.0;
        assert!((alive - (-1.0f64).exp()).abs() < 0.01);
    }

    #[test]
    fn killing_agrees_with_reweighting() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let h = Hamiltonian::quadratic_running(1.0);
        let f = PathFunctional::terminal_indicator(0, -1.0, 1.0);
        let k = fk_killing(&bm(), &h, &f, &[0.0], &g, 50_000, 6).unwrap();
        let r = fk_reweight(&bm(), &h, &f, &[0.0], &g, 50_000, 7).unwrap();
        let se = (k.std_error.powi(2) + r.std_error.powi(2)).sqrt();
        assert!((k.estimate - r.estimate).abs() < 3.0 * se, "{k:?} {r:?}");
    }

    #[test]
    fn killing_preconditions() {
        let g = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let f = PathFunctional::one();
        let neg = Hamiltonian::constant_running(-1.0);
        assert!(matches!(fk_killing(&bm(), &neg, &f, &[0.0], &g, 10, 1), Err(Error::Precondition(_))));
        let term = Hamiltonian::quadratic_terminal(1.0);
        assert!(matches!(fk_killing(&bm(), &term, &f, &[0.0], &g, 10, 1), Err(Error::Precondition(_))));
        let huge = Hamiltonian::constant_running(1e4);
        assert!(matches!(fk_killing(&bm(), &huge, &f, &[0.0], &g, 10, 1), Err(Error::DegenerateSurvival { .. })));
    }

    #[test]
    fn tilted_weights_collapse_but_control_does_not() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let h = Hamiltonian::quadratic_terminal(10.0);
        let f = PathFunctional::terminal_moment(0, 2);
        let n = 5000;
        let r = fk_reweight(&bm(), &h, &f, &[3.0], &g, n, 2);
        match r {
            Ok(rep) => assert!(rep.effective_sample_size.unwrap() < 0.05 * n as f64),
            Err(e) => assert!(matches!(e, Error::DegenerateWeights { .. })),
        }
        let u = ControlField::scalar(|x, t| -10.0 * x / (1.0 + 10.0 * (1.0 - t)));
        let c = fk_controlled(&bm(), &u, &f, &[3.0], &g, n, 2).unwrap();
        assert!(c.estimate.is_finite());
    }

    #[test]
    fn comparison_case_a() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let h = Hamiltonian::quadratic_terminal(1.0);
        let u = case_a_control();
        let cmp = compare_estimators(&bm(), &h, Some(&u), &PathFunctional::terminal_moment(0, 2), &[0.0], &g, 5000, 8, 11)
            .unwrap();
        assert_eq!(cmp.skipped.len(), 1);
        assert_eq!(cmp.summaries.len(), 2);
        assert!(cmp.all_pass(), "{:?}", cmp.pairs);
        let mut buf = Vec::new();
        cmp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 16);
        assert!(text.starts_with("method,estimate,std_error,ess,n,seed\n"));
    }

    #[test]
    fn controlled_law_matches_resampled_reference() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let h = Hamiltonian::quadratic_terminal(1.0);
        let f = PathFunctional::terminal_moment(0, 1);
        let pairs = functional_and_energy(&bm(), &h, &f, &[0.0], &g, 20_000, 3).unwrap();
        let resampled = resample_weighted(&pairs, 5_000, 3);
        let ctrl = controlled_values(&bm(), &case_a_control(), &f, &[0.0], &g, 5_000, 4).unwrap();
        assert!(stats::ks_two_sample(&resampled, &ctrl).passes(0.01));
    }
}
