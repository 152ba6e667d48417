//! Named experiment setups with closed-form reference values.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use gibbsdiff::{oracle, DiffusionModel, Hamiltonian, InitialLaw};

use crate::config::Kind;
use crate::error::{CliError, CliResult};

/// A Gaussian `N(mean, var)` in one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Normal {
    pub mean: f64,
    pub var: f64,
}

/// Marginal pair of a bridge preset.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeSetup {
    /// Brownian reference from the origin to a Gaussian target.
    Follmer { target: Normal },
    /// Gaussian source and target on one grid.
    Gaussian { source: Normal, target: Normal },
    /// Two atoms with a uniform transition kernel.
    TwoState { source: [f64; 2], target: [f64; 2] },
}

/// Catalog entry.
#[derive(Debug, Clone, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub kind: Kind,
    pub model: ModelKind,
    pub hamiltonian: HamiltonianKind,
    /// Start of the forward process: a point, or `N(mean, var)` for reversal.
    pub initial: Initial,
    pub horizon: f64,
    /// Spatial box `[lo, hi]` for grids.
    pub domain: (f64, f64),
    /// Recommended `(nodes, pde_steps)` for grid-based runs.
    pub grid: (usize, usize),
    pub bridge: Option<BridgeSetup>,
    /// Closed-form reference values keyed by name.
    pub metadata: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Brownian { sigma: f64 },
    OrnsteinUhlenbeck { theta: f64, sigma: f64 },
}

/// Built-in Hamiltonians; in a config file a table such as
/// `{ kind = "quadratic_terminal", c = 1.0 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianKind {
    Zero,
    QuadraticTerminal { c: f64 },
    LinearTerminal { c: f64 },
    QuadraticRunning { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    Point(f64),
    Normal(Normal),
}

impl ModelKind {
    pub fn build(self) -> DiffusionModel {
        match self {
            ModelKind::Brownian { sigma } => DiffusionModel::brownian(1, sigma),
            ModelKind::OrnsteinUhlenbeck { theta, sigma } => DiffusionModel::ornstein_uhlenbeck(theta, sigma),
        }
    }
}

impl HamiltonianKind {
    pub fn build(self) -> Hamiltonian {
        match self {
            HamiltonianKind::Zero => Hamiltonian::zero(),
            HamiltonianKind::QuadraticTerminal { c } => Hamiltonian::quadratic_terminal(c),
            HamiltonianKind::LinearTerminal { c } => Hamiltonian::linear_terminal(vec![c]),
            HamiltonianKind::QuadraticRunning { c } => Hamiltonian::quadratic_running(c),
        }
    }
}

impl Initial {
    pub fn law(self) -> InitialLaw {
        match self {
            Initial::Point(z) => InitialLaw::Point(vec![z]),
            Initial::Normal(n) => InitialLaw::Gaussian { mean: vec![n.mean], std_dev: vec![n.var.sqrt()] },
        }
    }

    pub fn point(self) -> f64 {
        match self {
            Initial::Point(z) => z,
            Initial::Normal(n) => n.mean,
        }
    }
}

impl Preset {
    /// Builds every object the preset names, surfacing any construction error.
    pub fn instantiate(&self) -> CliResult<(DiffusionModel, Hamiltonian, InitialLaw)> {
        let model = self.model.build().with_initial(self.initial.law());
        Ok((model, self.hamiltonian.build(), self.initial.law()))
    }
}

fn meta(pairs: &[(&'static str, f64)]) -> BTreeMap<&'static str, f64> {
    pairs.iter().copied().collect()
}

const BM: ModelKind = ModelKind::Brownian { sigma: 1.0 };

/// The full catalog, sorted by name.
pub fn catalog() -> Vec<Preset> {
    let mut out = vec![
        Preset {
            name: "brownian_1d",
            description: "standard Brownian motion from the origin, no tilt",
            kind: Kind::Simulate,
            model: BM,
            hamiltonian: HamiltonianKind::Zero,
            initial: Initial::Point(0.0),
            horizon: 1.0,
            domain: (-6.0, 6.0),
            grid: (401, 400),
            bridge: None,
            metadata: meta(&[("terminal_mean", 0.0), ("terminal_variance", 1.0), ("v_0_0", 0.0)]),
        },
        Preset {
            name: "case_a_quadratic",
            description: "Brownian motion tilted by g(x) = x^2/2 on [0, 1]",
            kind: Kind::Value,
            model: BM,
            hamiltonian: HamiltonianKind::QuadraticTerminal { c: 1.0 },
            initial: Initial::Point(0.0),
            horizon: 1.0,
            domain: (-6.0, 6.0),
            grid: (401, 400),
            bridge: None,
            metadata: meta(&[
                ("v_0_0", 0.5 * LN_2),
                ("u_star_1_0", oracle::quadratic_control(1.0, 0.0, 1.0)),
                ("tilted_terminal_second_moment", 0.5),
                ("uncontrolled_cost", 0.5),
            ]),
        },
        Preset {
            name: "linear_terminal",
            description: "Brownian motion tilted by g(x) = x, optimal drift -1",
            kind: Kind::Value,
            model: BM,
            hamiltonian: HamiltonianKind::LinearTerminal { c: 1.0 },
            initial: Initial::Point(0.0),
            horizon: 1.0,
            domain: (-8.0, 8.0),
            grid: (401, 400),
            bridge: None,
            metadata: meta(&[("v_0_0", -0.5), ("u_star_1_0", -1.0), ("tilted_terminal_mean", -1.0)]),
        },
        Preset {
            name: "killing_quadratic",
            description: "Brownian motion with running cost f(x) = x^2/2 and no terminal cost",
            kind: Kind::Fk,
            model: BM,
            hamiltonian: HamiltonianKind::QuadraticRunning { c: 0.5 },
            initial: Initial::Point(0.0),
            horizon: 1.0,
            domain: (-6.0, 6.0),
            grid: (401, 400),
            bridge: None,
            metadata: meta(&[("v_0_0", 0.5 * 1f64.cosh().ln())]),
        },
        Preset {
            name: "follmer_gaussian",
            description: "Follmer drift from the origin to N(0, 1/2)",
            kind: Kind::Bridge,
            model: BM,
            hamiltonian: HamiltonianKind::Zero,
            initial: Initial::Point(0.0),
            horizon: 1.0,
            domain: (-8.0, 8.0),
            grid: (401, 400),
            bridge: Some(BridgeSetup::Follmer { target: Normal { mean: 0.0, var: 0.5 } }),
            metadata: meta(&[
                ("effort", oracle::gaussian_kl_standard(0.0, 0.5)),
                ("u_star_1_0", -0.5),
                ("terminal_variance", 0.5),
            ]),
        },
        Preset {
            name: "follmer_shift",
            description: "Follmer drift from the origin to N(1, 1), constant drift 1",
            kind: Kind::Bridge,
            model: BM,
            hamiltonian: HamiltonianKind::Zero,
            initial: Initial::Point(0.0),
            horizon: 1.0,
            domain: (-8.0, 8.0),
            grid: (401, 400),
            bridge: Some(BridgeSetup::Follmer { target: Normal { mean: 1.0, var: 1.0 } }),
            metadata: meta(&[("effort", 0.5), ("u_star_1_0", 1.0), ("terminal_mean", 1.0)]),
        },
        Preset {
            name: "gaussian_bridge",
            description: "Brownian bridge between N(0, 1/2) and N(1, 1/2) over unit time",
            kind: Kind::Bridge,
            model: BM,
            hamiltonian: HamiltonianKind::Zero,
            initial: Initial::Normal(Normal { mean: 0.0, var: 0.5 }),
            horizon: 1.0,
            domain: (-7.0, 8.0),
            grid: (401, 400),
            bridge: Some(BridgeSetup::Gaussian {
                source: Normal { mean: 0.0, var: 0.5 },
                target: Normal { mean: 1.0, var: 0.5 },
            }),
            metadata: meta(&[("cross_covariance", oracle::gaussian_bridge_covariance(0.5, 0.5, 1.0))]),
        },
        Preset {
            name: "two_state_bridge",
            description: "two atoms with a uniform kernel; the coupling is the product of the marginals",
            kind: Kind::Bridge,
            model: BM,
            hamiltonian: HamiltonianKind::Zero,
            initial: Initial::Point(0.0),
            horizon: 1.0,
            domain: (0.0, 1.0),
            grid: (401, 400),
            bridge: Some(BridgeSetup::TwoState { source: [0.3, 0.7], target: [0.6, 0.4] }),
            metadata: meta(&[("pi_00", 0.18), ("pi_01", 0.12), ("pi_10", 0.42), ("pi_11", 0.28)]),
        },
        Preset {
            name: "ou_reversal",
            description: "stationary Ornstein-Uhlenbeck process dX = -X dt + dW from N(0, 1/2)",
            kind: Kind::Reverse,
            model: ModelKind::OrnsteinUhlenbeck { theta: 1.0, sigma: 1.0 },
            hamiltonian: HamiltonianKind::Zero,
            initial: Initial::Normal(Normal { mean: 0.0, var: 0.5 }),
            horizon: 1.0,
            domain: (-5.0, 5.0),
            grid: (801, 1600),
            bridge: None,
            metadata: meta(&[("b_bar_1_0", -1.0), ("entropy", oracle::gaussian_entropy(0.5))]),
        },
        Preset {
            name: "brownian_reversal",
            description: "Brownian motion started from N(0, 1), reversed over unit time",
            kind: Kind::Reverse,
            model: BM,
            hamiltonian: HamiltonianKind::Zero,
            initial: Initial::Normal(Normal { mean: 0.0, var: 1.0 }),
            horizon: 1.0,
            domain: (-8.0, 8.0),
            grid: (401, 400),
            bridge: None,
            metadata: meta(&[("b_bar_1_0", -0.5), ("entropy", oracle::gaussian_entropy(2.0))]),
        },
    ];
    out.sort_by_key(|p| p.name);
    out
}

/// Looks a preset up by name.
pub fn find(name: &str) -> CliResult<Preset> {
    catalog().into_iter().find(|p| p.name == name).ok_or_else(|| CliError::UnknownPreset(name.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_large_and_unique() {
        let c = catalog();
        assert!(c.len() >= 6);
        let mut names: Vec<_> = c.iter().map(|p| p.name).collect();
        names.dedup();
        assert_eq!(names.len(), c.len());
    }

    #[test]
    fn every_preset_instantiates() {
        for p in catalog() {
            let (m, _, init) = p.instantiate().unwrap();
            assert_eq!(m.state_dim, init.dim(), "{}", p.name);
        }
    }

    #[test]
    fn case_a_metadata() {
        let p = find("case_a_quadratic").unwrap();
        assert!((p.metadata["v_0_0"] - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(p.metadata["u_star_1_0"], -0.5);
    }

    #[test]
    fn unknown_preset_exits_with_two() {
        let e = find("nope").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
