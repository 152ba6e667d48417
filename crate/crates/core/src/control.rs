use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// A control rule `(x, t, out)`.
pub type ControlFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Zero,
    Rule(ControlFn),
    /// `scale * ∇field`, read from precomputed gradient fields.
    Gradient { grads: Vec<ScalarField>, scale: f64 },
}

/// Feedback control `u(x, t) ∈ ℝⁿ` added to the drift as `a(x,t) u(x,t)`.
///
/// Field-backed controls evaluate outside their grid at the nearest boundary
/// point. That extension is a bias source when paths leave the box.
#[derive(Clone)]
pub struct ControlField {
    dim: usize,
    kind: Kind,
    domain_diameter: Option<f64>,
}

impl fmt::Debug for ControlField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            Kind::Zero => "zero",
            Kind::Rule(_) => "rule",
            Kind::Gradient { .. } => "gradient",
        };
        f.debug_struct("ControlField")
            .field("dim", &self.dim)
            .field("kind", &kind)
            .field("domain_diameter", &self.domain_diameter)
            .finish()
    }
}

impl ControlField {
    pub fn zero(dim: usize) -> Self {
        Self { dim, kind: Kind::Zero, domain_diameter: None }
    }

    pub fn rule(dim: usize, f: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { dim, kind: Kind::Rule(Arc::new(f)), domain_diameter: None }
    }

    /// One-dimensional closed-form control.
    pub fn scalar(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::rule(1, move |x, t, out| out[0] = f(x[0], t))
    }

    /// `u = -∇v`, the feedback law obtained from a value function.
    pub fn neg_gradient(v: &ScalarField) -> Self {
        Self::scaled_gradient(v, -1.0)
    }

    /// `u = scale · ∇φ`.
    pub fn scaled_gradient(phi: &ScalarField, scale: f64) -> Self {
        Self {
            dim: phi.grid.dim(),
            domain_diameter: Some(phi.grid.diameter()),
            kind: Kind::Gradient { grads: phi.gradient(), scale },
        }
    }

    /// Declares the diameter used by the per-step magnitude guard.
    pub fn with_domain_diameter(mut self, d: f64) -> Self {
        self.domain_diameter = Some(d);
        self
    }

    /// Pointwise sum of two controls.
    pub fn plus(&self, other: &ControlField) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Argument("control dimensions differ".into()));
        }
        let (a, b) = (self.clone(), other.clone());
        let dim = self.dim;
        let mut out = Self::rule(dim, move |x, t, out| {
            let mut tmp = vec![0.0; dim];
            a.eval(x, t, out);
            b.eval(x, t, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, v)| *o += v);
        });
        out.domain_diameter = self.domain_diameter.or(other.domain_diameter);
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, Kind::Zero)
    }

    pub fn domain_diameter(&self) -> Option<f64> {
        self.domain_diameter
    }

    pub fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.kind {
            Kind::Zero => out.fill(0.0),
            Kind::Rule(f) => f(x, t, out),
            Kind::Gradient { grads, scale } => {
                for (o, g) in out.iter_mut().zip(grads) {
                    *o = scale * g.eval(x, t);
                }
            }
        }
    }

    /// Convenience for scalar controls.
    pub fn eval_1d(&self, x: f64, t: f64) -> f64 {
        let mut out = [0.0];
        self.eval(&[x], t, &mut out);
        out[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid_1d;
    use crate::grid::TimeGrid;

    #[test]
    fn gradient_control_clamps_outside() {
        let g = grid_1d(-2.0, 2.0, 41, TimeGrid::new(0.0, 1.0, 4).unwrap()).unwrap();
        let v = ScalarField::from_fn(g, |x, _| 0.5 * x[0] * x[0]).unwrap();
        let u = ControlField::neg_gradient(&v);
        assert!((u.eval_1d(1.0, 0.3) + 1.0).abs() < 1e-12);
        // boundary gradient is one-sided: (2^2 - 1.9^2)/2/0.1 = 1.95
        assert!((u.eval_1d(10.0, 0.3) + 1.95).abs() < 1e-12);
        assert_eq!(u.domain_diameter(), Some(4.0));
    }

    #[test]
    fn sum_of_controls() {
        let a = ControlField::scalar(|x, _| x);
        let b = ControlField::scalar(|_, t| t);
        let c = a.plus(&b).unwrap();
        assert_eq!(c.eval_1d(2.0, 0.5), 2.5);
    }
}
