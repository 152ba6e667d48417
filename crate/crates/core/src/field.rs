//! Scalar functions sampled on a rectangular space-time grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::grid::{Axis, FieldGrid, TimeGrid};

/// Values of `v(x, t)` on a [`FieldGrid`], stored time-major with the last
/// spatial axis fastest. Interpolation is multilinear in space and linear in
/// time; queries outside the box are clamped to its boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: FieldGrid,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    kind: String,
    grid: FieldGrid,
}

impl ScalarField {
    pub fn new(grid: FieldGrid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.n_space() * grid.time.n_nodes();
        if values.len() != expected {
            return Err(Error::Argument(format!(
                "field needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("field value {i} is {}", values[i])));
        }
        Ok(Self { grid, values })
    }

    /// Tabulates `f(x, t)` on every grid node.
    pub fn from_fn(grid: FieldGrid, f: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        let ns = grid.n_space();
        let mut x = vec![0.0; grid.dim()];
        let mut values = Vec::with_capacity(ns * grid.time.n_nodes());
        for t in grid.time.times() {
            for i in 0..ns {
                grid.point(i, &mut x);
                values.push(f(&x, t));
            }
        }
        Self::new(grid, values)
    }

    /// Time-independent field on `axes` (stored on a one-step unit time grid).
    pub fn stationary(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let grid = FieldGrid::new(axes, TimeGrid::new(0.0, 1.0, 1)?)?;
        let doubled = values.iter().chain(values.iter()).copied().collect();
        Self::new(grid, doubled)
    }

    pub fn n_space(&self) -> usize {
        self.grid.n_space()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let ns = self.n_space();
        &self.values[k * ns..(k + 1) * ns]
    }

    pub fn at(&self, k: usize, idx: usize) -> f64 {
        self.values[k * self.n_space() + idx]
    }

    /// Multilinear interpolation within time node `k` (clamped to the box).
    pub fn spatial_interp(&self, k: usize, x: &[f64]) -> f64 {
        let s = self.slice(k);
        let axes = &self.grid.axes;
        match axes.len() {
            1 => {
                let (i, f) = axes[0].locate(x[0]);
                s[i] * (1.0 - f) + s[i + 1] * f
            }
            _ => {
                let (i, fx) = axes[0].locate(x[0]);
                let (j, fy) = axes[1].locate(x[1]);
                let n1 = axes[1].n_nodes;
                let v00 = s[i * n1 + j];
                let v01 = s[i * n1 + j + 1];
                let v10 = s[(i + 1) * n1 + j];
                let v11 = s[(i + 1) * n1 + j + 1];
                (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11)
            }
        }
    }

    /// Interpolated value at `(x, t)`.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let tg = &self.grid.time;
        let s = ((t - tg.t_start()) / tg.dt()).clamp(0.0, tg.n_steps() as f64);
        let k = (s.floor() as usize).min(tg.n_steps() - 1);
        let w = s - k as f64;
        let lo = self.spatial_interp(k, x);
        if w == 0.0 {
            return lo;
        }
        let hi = self.spatial_interp(k + 1, x);
        lo * (1.0 - w) + hi * w
    }

    /// Spatial gradient fields, central differences inside and one-sided
    /// differences on the boundary, one field per axis.
    pub fn gradient(&self) -> Vec<ScalarField> {
        let axes = &self.grid.axes;
        let ns = self.n_space();
        let nt = self.grid.time.n_nodes();
        (0..axes.len())
            .map(|d| {
                let h = axes[d].step();
                let n_d = axes[d].n_nodes;
                let stride = if d + 1 == axes.len() { 1 } else { axes[1].n_nodes };
                let mut out = vec![0.0; self.values.len()];
                for k in 0..nt {
                    let s = self.slice(k);
                    for idx in 0..ns {
                        let i = (idx / stride) % n_d;
                        out[k * ns + idx] = if i == 0 {
                            (s[idx + stride] - s[idx]) / h
                        } else if i + 1 == n_d {
                            (s[idx] - s[idx - stride]) / h
                        } else {
                            (s[idx + stride] - s[idx - stride]) / (2.0 * h)
                        };
                    }
                }
                ScalarField { grid: self.grid.clone(), values: out }
            })
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ScalarField> {
        ScalarField::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Field with the time axis reversed: `out(x, t) = self(x, T - t)`.
    pub fn time_reversed(&self) -> ScalarField {
        let ns = self.n_space();
        let nt = self.grid.time.n_nodes();
        let mut values = Vec::with_capacity(self.values.len());
        for k in (0..nt).rev() {
            values.extend_from_slice(&self.values[k * ns..(k + 1) * ns]);
        }
        ScalarField { grid: self.grid.clone(), values }
    }

    /// CSV with header `t,x_1[,x_2],value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.grid.dim();
        let mut header = String::from("t");
        for d in 1..=dim {
            header.push_str(&format!(",x_{d}"));
        }
        writeln!(w, "{header},value")?;
        let mut x = vec![0.0; dim];
        for (k, t) in self.grid.time.times().enumerate() {
            for idx in 0..self.n_space() {
                self.grid.point(idx, &mut x);
                let coords: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{t},{},{}", coords.join(","), self.at(k, idx))?;
            }
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        container::write(w, &FieldHeader { kind: "scalar_field".into(), grid: self.grid.clone() }, &self.values)
    }

    pub fn read_binary<R: std::io::Read>(r: R) -> Result<Self> {
        let (h, values): (FieldHeader, Vec<f64>) = container::read(r)?;
        if h.kind != "scalar_field" {
            return Err(Error::Format(format!("expected scalar_field, found {}", h.kind)));
        }
        Self::new(h.grid, values)
    }
}

/// Convenience for 1D fields.
pub fn grid_1d(lo: f64, hi: f64, n_nodes: usize, time: TimeGrid) -> Result<FieldGrid> {
    FieldGrid::new(vec![Axis::new(lo, hi, n_nodes)?], time)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> FieldGrid {
        grid_1d(-1.0, 1.0, 21, TimeGrid::new(0.0, 1.0, 10).unwrap()).unwrap()
    }

    #[test]
    fn bilinear_is_exact_for_bilinear_functions() {
        let f = ScalarField::from_fn(grid(), |x, t| 2.0 * x[0] + 3.0 * t + 1.0).unwrap();
        assert!((f.eval(&[0.123], 0.456) - (2.0 * 0.123 + 3.0 * 0.456 + 1.0)).abs() < 1e-12);
        // clamped outside the box
        assert!((f.eval(&[5.0], 2.0) - (2.0 + 3.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_quadratic() {
        let f = ScalarField::from_fn(grid(), |x, _| x[0] * x[0]).unwrap();
        let g = &f.gradient()[0];
        // central differences are exact for quadratics
        assert!((g.at(0, 10) - 0.0).abs() < 1e-12);
        assert!((g.at(0, 15) - 2.0 * 0.5).abs() < 1e-12);
        // one-sided at the ends
        assert!((g.at(0, 20) - (1.0 - 0.81) / 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_interp_and_gradient() {
        let g = FieldGrid::new(
            vec![Axis::new(0.0, 1.0, 11).unwrap(), Axis::new(0.0, 2.0, 21).unwrap()],
            TimeGrid::new(0.0, 1.0, 2).unwrap(),
        )
        .unwrap();
        let f = ScalarField::from_fn(g, |x, _| x[0] + 2.0 * x[1]).unwrap();
        assert!((f.eval(&[0.33, 1.27], 0.3) - (0.33 + 2.54)).abs() < 1e-12);
        let grads = f.gradient();
        assert!(grads[0].values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(grads[1].values.iter().all(|v| (v - 2.0).abs() < 1e-9));
    }

    #[test]
    fn binary_round_trip() {
        let f = ScalarField::from_fn(grid(), |x, t| x[0].sin() + t).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let g = ScalarField::read_binary(&buf[..]).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn reversal_flips_time() {
        let f = ScalarField::from_fn(grid(), |_, t| t).unwrap();
        let r = f.time_reversed();
        assert!((r.eval(&[0.0], 0.2) - 0.8).abs() < 1e-12);
    }
}
