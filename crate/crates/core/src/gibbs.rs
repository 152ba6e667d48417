//! The Gibbs variational principle on finite spaces.
//!
//! For a reference `p` and energy `H` the free energy of a candidate `p̃` is
//! `F(p̃) = ⟨H, p̃⟩ + D(p̃ ‖ p)`. Its minimum is the equilibrium free energy
//! `i(H) = -log Σ p_i e^{-H_i}`, attained only by `p*_i ∝ p_i e^{-H_i}`, and
//! `F(p̃) - i(H) = D(p̃ ‖ p*)`. Conventions: `0 log 0 = 0` and
//! `+∞ · e^{-∞} = 0`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const MASS_SLACK: f64 = 1e-9;

/// Labelled points with reference masses and energies in `(-∞, +∞]`.
/// In JSON an infinite energy is written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSpace {
    pub points: Vec<String>,
    pub reference: Vec<f64>,
    #[serde(serialize_with = "ser_energy", deserialize_with = "de_energy")]
    pub energy: Vec<f64>,
}

fn ser_energy<S: Serializer>(e: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let v: Vec<Option<f64>> = e.iter().map(|&h| (h != f64::INFINITY).then_some(h)).collect();
    v.serialize(s)
}

fn de_energy<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let v: Vec<Option<f64>> = Vec::deserialize(d)?;
    Ok(v.into_iter().map(|h| h.unwrap_or(f64::INFINITY)).collect())
}

impl FiniteSpace {
    pub fn new(points: Vec<String>, reference: Vec<f64>, energy: Vec<f64>) -> Result<Self> {
        let s = Self { points, reference, energy };
        s.validate()?;
        Ok(s)
    }

    /// Unlabelled space; points are named `0, 1, ...`.
    pub fn unlabelled(reference: Vec<f64>, energy: Vec<f64>) -> Result<Self> {
        let points = (0..reference.len()).map(|i| i.to_string()).collect();
        Self::new(points, reference, energy)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.reference.len() != n || self.energy.len() != n || n == 0 {
            return Err(Error::Argument(format!(
                "finite space needs equal nonzero lengths, got {} points, {} masses, {} energies",
                n,
                self.reference.len(),
                self.energy.len()
            )));
        }
        check_masses(&self.reference)?;
        if self.energy.iter().any(|h| h.is_nan() || *h == f64::NEG_INFINITY) {
            return Err(Error::Argument("energies must lie in (-inf, +inf]".into()));
        }
        if !self.reference.iter().zip(&self.energy).any(|(&p, &h)| p > 0.0 && h < f64::INFINITY) {
            return Err(Error::DegenerateEnergy);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_masses(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Argument("masses must be finite and nonnegative".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > MASS_SLACK {
        return Err(Error::Argument(format!("masses sum to {s}, not 1")));
    }
    Ok(())
}

/// `D(p̃ ‖ p) = Σ p̃_i log(p̃_i / p_i)`; `+∞` when `p̃` is not absolutely
/// continuous with respect to `p`.
pub fn relative_entropy(p_tilde: &[f64], p: &[f64]) -> Result<f64> {
    if p_tilde.len() != p.len() {
        return Err(Error::Argument(format!(
            "relative entropy of masses with lengths {} and {}",
            p_tilde.len(),
            p.len()
        )));
    }
    Ok(relative_entropy_unchecked(p_tilde, p))
}

/// Same sum without length or normalization checks; also used for
/// σ-finite second arguments.
pub fn relative_entropy_unchecked(p_tilde: &[f64], p: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&a, &b) in p_tilde.iter().zip(p) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            d += a * (a / b).ln();
        }
    }
    d
}

/// `i(H) = -log Σ p_i exp(-H_i)`, evaluated with a max-shift.
pub fn equilibrium_free_energy(space: &FiniteSpace) -> Result<f64> {
    space.validate()?;
    Ok(shifted_log_partition(&space.reference, &space.energy))
}

fn shifted_log_partition(p: &[f64], h: &[f64]) -> f64 {
    // exponents -H_i + log p_i over the support
    let terms: Vec<f64> = p
        .iter()
        .zip(h)
        .filter(|(&pi, &hi)| pi > 0.0 && hi < f64::INFINITY)
        .map(|(&pi, &hi)| pi.ln() - hi)
        .collect();
    -crate::stats::log_sum_exp(&terms)
}

/// `p*_i ∝ p_i exp(-H_i)`.
pub fn gibbs_minimizer(space: &FiniteSpace) -> Result<Vec<f64>> {
    let i_h = equilibrium_free_energy(space)?;
    Ok(space
        .reference
        .iter()
        .zip(&space.energy)
        .map(|(&p, &h)| if p > 0.0 && h < f64::INFINITY { (p.ln() - h + i_h).exp() } else { 0.0 })
        .collect())
}

/// `⟨H, p̃⟩` with `0 · ∞ = 0`.
pub fn average_energy(p_tilde: &[f64], energy: &[f64]) -> f64 {
    p_tilde
        .iter()
        .zip(energy)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &h)| if h == f64::INFINITY { f64::INFINITY } else { a * h })
        .sum()
}

pub fn free_energy(p_tilde: &[f64], space: &FiniteSpace) -> Result<f64> {
    Ok(average_energy(p_tilde, &space.energy) + relative_entropy(p_tilde, &space.reference)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyReport {
    pub average_energy: f64,
    pub relative_entropy: f64,
    pub free_energy: f64,
    pub equilibrium: f64,
    pub gap: f64,
}

/// All terms of the variational principle for one candidate.
pub fn free_energy_report(p_tilde: &[f64], space: &FiniteSpace) -> Result<FreeEnergyReport> {
    check_masses(p_tilde)?;
    let average_energy = average_energy(p_tilde, &space.energy);
    let relative_entropy = relative_entropy(p_tilde, &space.reference)?;
    let equilibrium = equilibrium_free_energy(space)?;
    let free_energy = average_energy + relative_entropy;
    Ok(FreeEnergyReport { average_energy, relative_entropy, free_energy, equilibrium, gap: free_energy - equilibrium })
}

/// Masses, reference and energy on a product space `X₀ × X₁`, row-major with
/// rows indexed by the first coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpace {
    pub rows: usize,
    pub cols: usize,
    pub reference: Vec<f64>,
    pub energy: Vec<f64>,
}

/// Split of the free energy along the first coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `D(μ̃ ‖ μ)` between first marginals.
    pub marginal_term: f64,
    /// `F(x₀, P̃^{x₀})`; `None` where `μ̃(x₀) = 0`.
    pub conditional_free_energies: Vec<Option<f64>>,
    /// `D(μ̃‖μ) + Σ μ̃(x₀) F(x₀, P̃^{x₀})`.
    pub recombined: f64,
    /// `F(p̃)` computed directly on the product space.
    pub direct: f64,
    /// `v(x₀) = -log Σ_y e^{-H(x₀,y)} P^{x₀}(y)`; `+∞` off the support of `μ`.
    pub value: Vec<f64>,
    /// Minimizing first marginal `μ_* ∝ μ e^{-v}`.
    pub optimal_marginal: Vec<f64>,
    /// `min_μ̃ ⟨v, μ̃⟩ + D(μ̃ ‖ μ)`, attained at `μ_*`.
    pub mixture_minimum: f64,
    /// `i(H)` on the product space.
    pub equilibrium: f64,
}

pub fn decompose_free_energy(p_tilde: &[f64], joint: &JointSpace) -> Result<Decomposition> {
    let (r, c) = (joint.rows, joint.cols);
    let n = r * c;
    if r == 0 || c == 0 || p_tilde.len() != n || joint.reference.len() != n || joint.energy.len() != n {
        return Err(Error::Argument(format!("arrays do not have product shape {r} x {c}")));
    }
    check_masses(p_tilde)?;
    let flat = FiniteSpace::unlabelled(joint.reference.clone(), joint.energy.clone())?;
    let direct = free_energy(p_tilde, &flat)?;
    let equilibrium = equilibrium_free_energy(&flat)?;

    let row_sum = |m: &[f64], i: usize| m[i * c..(i + 1) * c].iter().sum::<f64>();
    let mu: Vec<f64> = (0..r).map(|i| row_sum(&joint.reference, i)).collect();
    let mu_t: Vec<f64> = (0..r).map(|i| row_sum(p_tilde, i)).collect();
    let marginal_term = relative_entropy_unchecked(&mu_t, &mu);

    let mut conditional_free_energies = Vec::with_capacity(r);
    let mut value = Vec::with_capacity(r);
    let mut recombined = marginal_term;
    for i in 0..r {
        let row = i * c..(i + 1) * c;
        let h = &joint.energy[row.clone()];
        if mu[i] > 0.0 {
            let cond_ref: Vec<f64> = joint.reference[row.clone()].iter().map(|p| p / mu[i]).collect();
            value.push(shifted_log_partition(&cond_ref, h));
            if mu_t[i] > 0.0 {
                let cond: Vec<f64> = p_tilde[row].iter().map(|p| p / mu_t[i]).collect();
                let f = average_energy(&cond, h) + relative_entropy_unchecked(&cond, &cond_ref);
                recombined += mu_t[i] * f;
                conditional_free_energies.push(Some(f));
            } else {
                conditional_free_energies.push(None);
            }
        } else {
            value.push(f64::INFINITY);
            if mu_t[i] > 0.0 {
                recombined = f64::INFINITY;
                conditional_free_energies.push(Some(f64::INFINITY));
            } else {
                conditional_free_energies.push(None);
            }
        }
    }
    let marginal_space = FiniteSpace::unlabelled(mu.clone(), value.clone())?;
    let optimal_marginal = gibbs_minimizer(&marginal_space)?;
    let mixture_minimum = free_energy(&optimal_marginal, &marginal_space)?;
    Ok(Decomposition {
        marginal_term,
        conditional_free_energies,
        recombined,
        direct,
        value,
        optimal_marginal,
        mixture_minimum,
        equilibrium,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn two_point() -> FiniteSpace {
        FiniteSpace::unlabelled(vec![0.5, 0.5], vec![0.0, LN_2]).unwrap()
    }

    #[test]
    fn relative_entropy_examples() {
        let p = [0.25, 0.75];
        assert_eq!(relative_entropy(&p, &p).unwrap(), 0.0);
        let d = relative_entropy(&[0.5, 0.5], &p).unwrap();
        assert!((d - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
        assert!((d - 0.143841).abs() < 1e-6);
        assert_eq!(relative_entropy(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), f64::INFINITY);
        assert!(relative_entropy(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn equilibrium_examples() {
        let flat = FiniteSpace::unlabelled(vec![0.2, 0.8], vec![0.0, 0.0]).unwrap();
        assert!(equilibrium_free_energy(&flat).unwrap().abs() < 1e-15);
        let i = equilibrium_free_energy(&two_point()).unwrap();
        assert!((i - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        let c = FiniteSpace::unlabelled(vec![0.3, 0.7], vec![2.5, 2.5]).unwrap();
        assert!((equilibrium_free_energy(&c).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn infinite_energy_everywhere_is_degenerate() {
        let r = FiniteSpace::unlabelled(vec![0.5, 0.5], vec![f64::INFINITY, f64::INFINITY]);
        assert_eq!(r.unwrap_err(), Error::DegenerateEnergy);
        // mass on +inf is allowed when some finite-energy mass remains
        let s = FiniteSpace::unlabelled(vec![0.5, 0.5], vec![0.0, f64::INFINITY]).unwrap();
        assert_eq!(gibbs_minimizer(&s).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn large_energies_do_not_overflow() {
        let s = FiniteSpace::unlabelled(vec![0.5, 0.5], vec![700.0, 701.0]).unwrap();
        let i = equilibrium_free_energy(&s).unwrap();
        let expected = 700.0 - (0.5 + 0.5 * (-1f64).exp()).ln();
        assert!((i - expected).abs() < 1e-12);
        let n = FiniteSpace::unlabelled(vec![0.5, 0.5], vec![-700.0, -705.0]).unwrap();
        assert!(equilibrium_free_energy(&n).unwrap().is_finite());
    }

    #[test]
    fn minimizer_examples() {
        let flat = FiniteSpace::unlabelled(vec![0.2, 0.8], vec![0.0, 0.0]).unwrap();
        let p = gibbs_minimizer(&flat).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let p = gibbs_minimizer(&two_point()).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn report_examples() {
        let s = two_point();
        let star = gibbs_minimizer(&s).unwrap();
        assert!(free_energy_report(&star, &s).unwrap().gap.abs() < 1e-15);

        let r = free_energy_report(&[0.5, 0.5], &s).unwrap();
        assert!((r.free_energy - 0.5 * LN_2).abs() < 1e-15);
        assert!((r.gap - (0.5 * LN_2 - (4.0f64 / 3.0).ln())).abs() < 1e-15);
        assert!((r.gap - 0.058891).abs() < 1e-6);

        let point = free_energy_report(&[1.0, 0.0], &s).unwrap();
        assert_eq!(point.free_energy, 0.0 + 0.5f64.recip().ln());
        assert!((point.gap - (LN_2 - (4.0f64 / 3.0).ln())).abs() < 1e-15);
    }

    #[test]
    fn decomposition_with_first_coordinate_energy() {
        let joint = JointSpace {
            rows: 2,
            cols: 2,
            reference: vec![0.1, 0.2, 0.3, 0.4],
            energy: vec![1.5, 1.5, -0.5, -0.5],
        };
        let d = decompose_free_energy(&[0.25, 0.25, 0.25, 0.25], &joint).unwrap();
        assert!((d.value[0] - 1.5).abs() < 1e-15 && (d.value[1] + 0.5).abs() < 1e-15);
        // conditional free energy = H(x0) + D(conditional), and p̃'s
        // conditionals here are uniform
        let c0 = 1.5 + relative_entropy(&[0.5, 0.5], &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert!((d.conditional_free_energies[0].unwrap() - c0).abs() < 1e-14);
        assert!((d.recombined - d.direct).abs() < 1e-14);
        assert!((d.mixture_minimum - d.equilibrium).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip_with_infinite_energy() {
        let s = FiniteSpace::new(
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
            vec![0.0, f64::INFINITY],
        )
        .unwrap();
        let txt = serde_json::to_string(&s).unwrap();
        assert!(txt.contains("null"));
        let back: FiniteSpace = serde_json::from_str(&txt).unwrap();
        assert_eq!(s, back);
    }
}
