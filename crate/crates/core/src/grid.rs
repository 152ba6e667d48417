use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[t_start, t_end]` into `n_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end <= t_start {
            return Err(Error::Argument(format!(
                "time grid needs t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Argument("time grid needs n_steps >= 1".into()));
        }
        Ok(Self { t_start, t_end, n_steps })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.time(k))
    }

    /// Node index closest to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        let k = ((t - self.t_start) / self.dt()).round();
        k.clamp(0.0, self.n_steps as f64) as usize
    }

    /// Grid covering `[s, t_end]` with (approximately) the same step size.
    pub fn restrict_from(&self, s: f64) -> Result<Self> {
        if s >= self.t_end {
            return Err(Error::Argument(format!(
                "start time {s} must precede t_end = {}",
                self.t_end
            )));
        }
        let n = ((self.t_end - s) / self.dt()).round().max(1.0) as usize;
        Self::new(s, self.t_end, n)
    }
}

/// Uniform nodes on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n_nodes: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n_nodes: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo || n_nodes < 2 {
            return Err(Error::Argument(format!(
                "axis needs lo < hi and >= 2 nodes, got [{lo}, {hi}] with {n_nodes}"
            )));
        }
        Ok(Self { lo, hi, n_nodes })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights: interior nodes own `step`, the two end nodes half.
    pub fn quadrature(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.n_nodes];
        w[0] = 0.5 * h;
        w[self.n_nodes - 1] = 0.5 * h;
        w
    }

    /// Lower cell index and fractional position, with clamping outside.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.step();
        let s = ((x - self.lo) / h).clamp(0.0, (self.n_nodes - 1) as f64);
        let i = (s.floor() as usize).min(self.n_nodes - 2);
        (i, s - i as f64)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Rectangular space-time grid used by the PDE solvers: one or two spatial
/// axes and a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub axes: Vec<Axis>,
    pub time: TimeGrid,
}

impl FieldGrid {
    pub fn new(axes: Vec<Axis>, time: TimeGrid) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Capability(format!(
                "grid solvers support 1 or 2 spatial dimensions, got {}",
                axes.len()
            )));
        }
        Ok(Self { axes, time })
    }

    pub fn uniform_1d(lo: f64, hi: f64, n_nodes: usize, t_end: f64, n_steps: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lo, hi, n_nodes)?], TimeGrid::new(0.0, t_end, n_steps)?)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn n_space(&self) -> usize {
        self.axes.iter().map(|a| a.n_nodes).product()
    }

    /// Coordinates of flat spatial index `idx` (last axis fastest).
    pub fn point(&self, idx: usize, out: &mut [f64]) {
        match self.axes.len() {
            1 => out[0] = self.axes[0].node(idx),
            _ => {
                let n1 = self.axes[1].n_nodes;
                out[0] = self.axes[0].node(idx / n1);
                out[1] = self.axes[1].node(idx % n1);
            }
        }
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        match self.axes.len() {
            1 => vec![idx],
            _ => {
                let n1 = self.axes[1].n_nodes;
                vec![idx / n1, idx % n1]
            }
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| i == 0 || i + 1 == a.n_nodes)
    }

    /// Euclidean diameter of the spatial box.
    pub fn diameter(&self) -> f64 {
        self.axes.iter().map(|a| (a.hi - a.lo).powi(2)).sum::<f64>().sqrt()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step()).product()
    }

    /// Product quadrature weights over the flat spatial index.
    pub fn quadrature(&self) -> Vec<f64> {
        match self.axes.len() {
            1 => self.axes[0].quadrature(),
            _ => {
                let w0 = self.axes[0].quadrature();
                let w1 = self.axes[1].quadrature();
                w0.iter().flat_map(|a| w1.iter().map(move |b| a * b)).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grid_nodes() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.time(4), 1.0);
        assert_eq!(g.times().count(), 5);
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn restrict_keeps_step() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let r = g.restrict_from(0.25).unwrap();
        assert_eq!(r.n_steps(), 75);
        assert!((r.dt() - 0.01).abs() < 1e-15);
        assert!(g.restrict_from(1.0).is_err());
    }

    #[test]
    fn axis_locate_clamps() {
        let a = Axis::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(a.locate(-3.0), (0, 0.0));
        let (i, f) = a.locate(1.0);
        assert_eq!((i, f), (3, 1.0));
        let (i, f) = a.locate(0.25);
        assert_eq!(i, 2);
        assert!((f - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadrature_sums_to_length() {
        let a = Axis::new(-2.0, 3.0, 11).unwrap();
        let s: f64 = a.quadrature().iter().sum();
        assert!((s - 5.0).abs() < 1e-14);
    }
}
