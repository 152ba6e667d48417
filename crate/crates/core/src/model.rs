//! Coefficient bundles for the reference diffusion
//! `dX = b(X,t) dt + σ(X,t) dW`, `X_0 ~ μ`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::GridMeasure;
use crate::rng::PathStream;

/// `(x, t, out)`; writes a vector or a row-major matrix into `out`.
pub type CoefficientFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Law of the initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Point(Vec<f64>),
    /// Independent coordinates with the given means and standard deviations.
    Gaussian { mean: Vec<f64>, std_dev: Vec<f64> },
    Grid(GridMeasure),
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point(z) => z.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Grid(m) => m.dim(),
        }
    }

    /// Sampler with any lookup tables precomputed.
    pub fn sampler(&self) -> InitialSampler<'_> {
        let cdf = match self {
            InitialLaw::Grid(m) => m.cdf(),
            _ => Vec::new(),
        };
        InitialSampler { law: self, cdf }
    }
}

pub struct InitialSampler<'a> {
    law: &'a InitialLaw,
    cdf: Vec<f64>,
}

impl InitialSampler<'_> {
    pub fn draw(&self, stream: &mut PathStream) -> Vec<f64> {
        match self.law {
            InitialLaw::Point(z) => z.clone(),
            InitialLaw::Gaussian { mean, std_dev } => mean
                .iter()
                .zip(std_dev)
                .map(|(m, s)| m + s * stream.normal())
                .collect(),
            InitialLaw::Grid(g) => g.sample(stream, &self.cdf),
        }
    }
}

/// Drift, diffusion and (optionally) their spatial Jacobians.
///
/// `diffusion` fills an `n × m` row-major matrix. `drift_jacobian` fills the
/// `n × n` matrix `∂b/∂x`. `diffusion_jacobian` fills `m` consecutive `n × n`
/// blocks, block `k` holding `∂σ_k/∂x` for column `σ_k` of `σ`.
#[derive(Clone)]
pub struct DiffusionModel {
    pub name: String,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub drift: CoefficientFn,
    pub diffusion: CoefficientFn,
    pub drift_jacobian: Option<CoefficientFn>,
    pub diffusion_jacobian: Option<CoefficientFn>,
    pub initial: InitialLaw,
    /// Declared uniform ellipticity constant `c` in `zᵀ a z ≥ c |z|²`.
    pub ellipticity: Option<f64>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("has_jacobians", &self.has_jacobians())
            .field("initial", &self.initial)
            .field("ellipticity", &self.ellipticity)
            .finish()
    }
}

impl DiffusionModel {
    /// `b(x,t) = B x + c`, `σ` constant, both with exact Jacobians.
    /// `linear` is `n × n` row-major, `sigma` is `n × m` row-major.
    pub fn linear(name: &str, linear: Vec<f64>, offset: Vec<f64>, sigma: Vec<f64>, noise_dim: usize) -> Result<Self> {
        let n = offset.len();
        if linear.len() != n * n || sigma.len() != n * noise_dim || n == 0 || noise_dim == 0 {
            return Err(Error::Argument("inconsistent linear model dimensions".into()));
        }
        let c = ellipticity_of_constant(&sigma, n, noise_dim);
        let b = linear.clone();
        let drift: CoefficientFn = Arc::new(move |x, _t, out| {
            for i in 0..n {
                out[i] = offset[i] + (0..n).map(|j| b[i * n + j] * x[j]).sum::<f64>();
            }
        });
        let s = sigma.clone();
        let diffusion: CoefficientFn = Arc::new(move |_x, _t, out| out.copy_from_slice(&s));
        let jb = linear;
        let drift_jacobian: CoefficientFn = Arc::new(move |_x, _t, out| out.copy_from_slice(&jb));
        let diffusion_jacobian: CoefficientFn = Arc::new(|_x, _t, out| out.fill(0.0));
        Ok(Self {
            name: name.to_string(),
            state_dim: n,
            noise_dim,
            drift,
            diffusion,
            drift_jacobian: Some(drift_jacobian),
            diffusion_jacobian: Some(diffusion_jacobian),
            initial: InitialLaw::Point(vec![0.0; n]),
            ellipticity: c,
        })
    }

    /// Standard `n`-dimensional Brownian motion scaled by `sigma`.
    pub fn brownian(n: usize, sigma: f64) -> Self {
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = sigma;
        }
        Self::linear("brownian", vec![0.0; n * n], vec![0.0; n], s, n).expect("valid dimensions")
    }

    /// One-dimensional Ornstein–Uhlenbeck process `dX = -θ X dt + σ dW`.
    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Self {
        Self::linear("ornstein_uhlenbeck", vec![-theta], vec![0.0], vec![sigma], 1).expect("valid dimensions")
    }

    /// One-dimensional model from closures; Jacobians absent.
    pub fn scalar(
        name: &str,
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            state_dim: 1,
            noise_dim: 1,
            drift: Arc::new(move |x, t, out| out[0] = drift(x[0], t)),
            diffusion: Arc::new(move |x, t, out| out[0] = diffusion(x[0], t)),
            drift_jacobian: None,
            diffusion_jacobian: None,
            initial: InitialLaw::Point(vec![0.0]),
            ellipticity: None,
        }
    }

    pub fn with_initial(mut self, initial: InitialLaw) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_ellipticity(mut self, c: Option<f64>) -> Self {
        self.ellipticity = c;
        self
    }

    pub fn with_jacobians(mut self, drift: CoefficientFn, diffusion: CoefficientFn) -> Self {
        self.drift_jacobian = Some(drift);
        self.diffusion_jacobian = Some(diffusion);
        self
    }

    pub fn has_jacobians(&self) -> bool {
        self.drift_jacobian.is_some() && self.diffusion_jacobian.is_some()
    }

    /// `a = σσᵀ` at `(x, t)`, written into an `n × n` buffer. `sigma` is
    /// scratch space of size `n × m`.
    pub fn covariance(&self, x: &[f64], t: f64, sigma: &mut [f64], out: &mut [f64]) {
        let (n, m) = (self.state_dim, self.noise_dim);
        (self.diffusion)(x, t, sigma);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..m).map(|k| sigma[i * m + k] * sigma[j * m + k]).sum();
            }
        }
    }

    /// Smallest value of `zᵀ a z / |z|²` seen at the probe points (for
    /// `n ≤ 2` this is the exact minimum eigenvalue at each point).
    pub fn min_ellipticity(&self, probes: &[(Vec<f64>, f64)]) -> f64 {
        let n = self.state_dim;
        let mut s = vec![0.0; n * self.noise_dim];
        let mut a = vec![0.0; n * n];
        let mut lo = f64::INFINITY;
        for (x, t) in probes {
            self.covariance(x, *t, &mut s, &mut a);
            lo = lo.min(min_eigen_sym(&a, n));
        }
        lo
    }

    /// Confirms the declared ellipticity constant at the probe points.
    pub fn check_uniform_ellipticity(&self, probes: &[(Vec<f64>, f64)]) -> Result<f64> {
        let c = self
            .ellipticity
            .ok_or_else(|| Error::Capability(format!("model '{}' is not declared uniformly elliptic", self.name)))?;
        let seen = self.min_ellipticity(probes);
        if seen + 1e-12 < c {
            return Err(Error::Precondition(format!(
                "model '{}' declares ellipticity {c} but a probe gives {seen}",
                self.name
            )));
        }
        Ok(seen)
    }
}

fn ellipticity_of_constant(sigma: &[f64], n: usize, m: usize) -> Option<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..m).map(|k| sigma[i * m + k] * sigma[j * m + k]).sum();
        }
    }
    let c = min_eigen_sym(&a, n);
    (c > 1e-12).then_some(c)
}

/// Minimum eigenvalue of a symmetric matrix; exact for `n ≤ 2`, Gershgorin
/// lower bound otherwise.
pub(crate) fn min_eigen_sym(a: &[f64], n: usize) -> f64 {
    match n {
        1 => a[0],
        2 => {
            let (p, q, r) = (a[0], a[1], a[3]);
            let mid = 0.5 * (p + r);
            let rad = (0.25 * (p - r).powi(2) + q * q).sqrt();
            mid - rad
        }
        _ => (0..n)
            .map(|i| a[i * n + i] - (0..n).filter(|&j| j != i).map(|j| a[i * n + j].abs()).sum::<f64>())
            .fold(f64::INFINITY, f64::min),
    }
}
