//! Discrete measures on rectangular grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::rng::PathStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Probability,
    SigmaFinite,
}

/// Where the measure lives: a single atom, a finite list of atoms, or the
/// nodes of a 1D/2D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Point(Vec<f64>),
    Atoms(Vec<Vec<f64>>),
    Grid(Vec<Axis>),
}

/// Nonnegative density values on grid nodes together with quadrature weights;
/// `density[i] * weights[i]` is the mass of node `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub support: Support,
    pub density: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: MeasureKind,
}

const PROBABILITY_SLACK: f64 = 1e-10;

impl GridMeasure {
    pub fn dirac(z: Vec<f64>) -> Self {
        Self {
            support: Support::Point(z),
            density: vec![1.0],
            weights: vec![1.0],
            kind: MeasureKind::Probability,
        }
    }

    /// Probability masses on a finite set of atoms (unit weights).
    pub fn atoms(points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        let w = vec![1.0; masses.len()];
        Self::new(Support::Atoms(points), masses, w, MeasureKind::Probability)
    }

    /// The grid axes, when the support is a grid.
    pub fn axes(&self) -> Option<&[Axis]> {
        match &self.support {
            Support::Grid(a) => Some(a),
            _ => None,
        }
    }

    /// Samples `density` on the nodes of `axes` (last axis fastest).
    pub fn from_density(axes: Vec<Axis>, density: impl Fn(&[f64]) -> f64, kind: MeasureKind) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Capability("grid measures are 1D or 2D".into()));
        }
        let pts = grid_points(&axes);
        let values: Vec<f64> = pts.iter().map(|p| density(p)).collect();
        let weights = grid_weights(&axes);
        Self::new(Support::Grid(axes), values, weights, kind)
    }

    /// Same as [`from_density`](Self::from_density) followed by rescaling to
    /// unit quadrature mass.
    pub fn probability_from_density(axes: Vec<Axis>, density: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut m = Self::from_density(axes, density, MeasureKind::SigmaFinite)?;
        let total = m.total_mass();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Argument(format!("density has total mass {total}")));
        }
        m.density.iter_mut().for_each(|d| *d /= total);
        m.kind = MeasureKind::Probability;
        Ok(m)
    }

    pub fn new(support: Support, density: Vec<f64>, weights: Vec<f64>, kind: MeasureKind) -> Result<Self> {
        let expected = match &support {
            Support::Point(_) => 1,
            Support::Atoms(a) => a.len(),
            Support::Grid(axes) => axes.iter().map(|a| a.n_nodes).product(),
        };
        if density.len() != expected || weights.len() != expected {
            return Err(Error::Argument(format!(
                "measure needs {expected} density values and weights, got {} and {}",
                density.len(),
                weights.len()
            )));
        }
        if let Some(i) = density.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Argument(format!("density at node {i} is {}", density[i])));
        }
        let m = Self { support, density, weights, kind };
        if kind == MeasureKind::Probability {
            let total = m.total_mass();
            if (total - 1.0).abs() > PROBABILITY_SLACK {
                return Err(Error::Argument(format!("probability measure has mass {total}")));
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn dim(&self) -> usize {
        match &self.support {
            Support::Point(z) => z.len(),
            Support::Atoms(a) => a.first().map_or(0, |p| p.len()),
            Support::Grid(axes) => axes.len(),
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        match &self.support {
            Support::Point(z) => vec![z.clone()],
            Support::Atoms(a) => a.clone(),
            Support::Grid(axes) => grid_points(axes),
        }
    }

    pub fn masses(&self) -> Vec<f64> {
        self.density.iter().zip(&self.weights).map(|(d, w)| d * w).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let total = self.total_mass();
        let mut m = vec![0.0; self.dim()];
        for (p, w) in self.points().iter().zip(self.masses()) {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += w * pi / total;
            }
        }
        m
    }

    /// Draws one point: node by inverse CDF on the masses, then uniform
    /// jitter inside the node's cell (clamped to the grid box).
    pub fn sample(&self, stream: &mut PathStream, cdf: &[f64]) -> Vec<f64> {
        match &self.support {
            Support::Point(z) => z.clone(),
            Support::Atoms(a) => {
                let u = stream.uniform() * cdf[cdf.len() - 1];
                a[cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)].clone()
            }
            Support::Grid(axes) => {
                let u = stream.uniform() * cdf[cdf.len() - 1];
                let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let mut x = index_point(axes, idx);
                for (xi, a) in x.iter_mut().zip(axes) {
                    let h = a.step();
                    *xi = a.clamp(*xi + (stream.uniform() - 0.5) * h);
                }
                x
            }
        }
    }

    /// Cumulative masses, the lookup table for [`sample`](Self::sample).
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.masses()
            .into_iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect()
    }
}

/// Node coordinates of a 1D/2D grid, last axis fastest.
pub fn grid_points(axes: &[Axis]) -> Vec<Vec<f64>> {
    let n: usize = axes.iter().map(|a| a.n_nodes).product();
    (0..n).map(|i| index_point(axes, i)).collect()
}

pub(crate) fn index_point(axes: &[Axis], idx: usize) -> Vec<f64> {
    match axes.len() {
        1 => vec![axes[0].node(idx)],
        _ => {
            let n1 = axes[1].n_nodes;
            vec![axes[0].node(idx / n1), axes[1].node(idx % n1)]
        }
    }
}

/// Trapezoid quadrature weights of a 1D/2D grid.
pub fn grid_weights(axes: &[Axis]) -> Vec<f64> {
    match axes.len() {
        1 => axes[0].quadrature(),
        _ => {
            let w0 = axes[0].quadrature();
            let w1 = axes[1].quadrature();
            w0.iter().flat_map(|a| w1.iter().map(move |b| a * b)).collect()
        }
    }
}

/// Normal density with mean `m` and variance `v`.
pub fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    #[test]
    fn probability_normalization() {
        let axis = Axis::new(-8.0, 8.0, 321).unwrap();
        let m = GridMeasure::probability_from_density(vec![axis], |x| normal_pdf(x[0], 1.0, 0.5)).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        assert!((m.mean()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_mass() {
        let axis = Axis::new(0.0, 1.0, 3).unwrap();
        let r = GridMeasure::new(
            Support::Grid(vec![axis]),
            vec![1.0, 1.0, 1.0],
            vec![0.25, 0.5, 0.25],
            MeasureKind::Probability,
        );
        assert!(r.is_ok());
        let axis = Axis::new(0.0, 1.0, 3).unwrap();
        let r = GridMeasure::new(Support::Grid(vec![axis]), vec![2.0, 1.0, 1.0], vec![0.25, 0.5, 0.25], MeasureKind::Probability);
        assert!(r.is_err());
    }

    #[test]
    fn sampling_matches_moments() {
        let axis = Axis::new(-6.0, 6.0, 601).unwrap();
        let m = GridMeasure::probability_from_density(vec![axis], |x| normal_pdf(x[0], 0.5, 1.0)).unwrap();
        let cdf = m.cdf();
        let n = 40_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| m.sample(&mut PathStream::new(3, i, Purpose::Initial), &cdf)[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn dirac_samples_its_atom() {
        let m = GridMeasure::dirac(vec![1.5, -2.0]);
        let cdf = m.cdf();
        assert_eq!(m.sample(&mut PathStream::new(0, 0, Purpose::Initial), &cdf), vec![1.5, -2.0]);
    }
}
