//! Experiment configuration: a TOML file (or JSON) with top-level keys and
//! one level of sections. See the README for the grammar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acceptance::Tolerances;
use crate::error::{CliError, CliResult};
use crate::presets::{self, HamiltonianKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Simulate,
    Value,
    Fk,
    Bridge,
    Reverse,
    Acceptance,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Value => "value",
            Kind::Fk => "fk",
            Kind::Bridge => "bridge",
            Kind::Reverse => "reverse",
            Kind::Acceptance => "acceptance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ValueMethod {
    Mc,
    Pde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FkMethod {
    Reweight,
    Killing,
    Controlled,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    /// `F ≡ 1`.
    One,
    /// `X_T`.
    X,
    /// `X_T²`.
    X2,
    /// `1{lo ≤ X_T ≤ hi}`.
    Indicator,
}

/// One-dimensional linear model `dX = (a X + b) dt + σ dW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub drift_slope: f64,
    #[serde(default)]
    pub drift_offset: f64,
    pub sigma: f64,
    /// Start point; with `start_var` the start is `N(start, start_var)`.
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub start_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Euler-Maruyama steps.
    pub steps: usize,
    /// Spatial nodes per axis for PDE and Kolmogorov grids; defaults to the
    /// preset's recommendation.
    pub nodes: Option<usize>,
    /// Time steps of PDE and Kolmogorov grids; same default rule.
    pub pde_steps: Option<usize>,
    /// Overrides the preset's spatial box.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Overrides the preset's horizon.
    pub horizon: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { steps: 200, nodes: None, pde_steps: None, lo: None, hi: None, horizon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    pub paths: usize,
    /// Repeats per estimator in `fk` comparisons.
    pub repeats: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self { paths: 1000, repeats: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueSpec {
    pub method: ValueMethod,
    pub z: f64,
    pub s: f64,
}

impl Default for ValueSpec {
    fn default() -> Self {
        Self { method: ValueMethod::Pde, z: 0.0, s: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkSpec {
    pub method: FkMethod,
    pub functional: FunctionalKind,
    pub lo: f64,
    pub hi: f64,
}

impl Default for FkSpec {
    fn default() -> Self {
        Self { method: FkMethod::Compare, functional: FunctionalKind::X2, lo: -0.5, hi: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSpec {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BridgeSpec {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReverseSpec {
    /// Reversed-time probe times in `[0, T]`.
    pub probes: Vec<f64>,
}

impl Default for ReverseSpec {
    fn default() -> Self {
        Self { probes: vec![0.1, 0.3, 0.5, 0.7, 0.9] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub hamiltonian: Option<HamiltonianKind>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub value: ValueSpec,
    #[serde(default)]
    pub fk: FkSpec,
    #[serde(default)]
    pub bridge: BridgeSpec,
    #[serde(default)]
    pub reverse: ReverseSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> CliResult<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks the invariants: kind and seed set, counts at least one, any
    /// named preset present in the catalog, and a model source for every
    /// kind that needs one.
    pub fn validate(&self) -> CliResult<Kind> {
        let kind = self.kind.ok_or_else(|| CliError::Config("experiment kind is not set".into()))?;
        if self.seed.is_none() {
            return Err(CliError::Config("seed is required (there is no clock-based default)".into()));
        }
        if let Some(p) = &self.preset {
            presets::find(p)?;
        }
        for (name, v) in [
            ("grid.steps", self.grid.steps),
            ("grid.pde_steps", self.grid.pde_steps.unwrap_or(1)),
            ("sampling.paths", self.sampling.paths),
            ("sampling.repeats", self.sampling.repeats),
            ("bridge.max_iter", self.bridge.max_iter),
        ] {
            if v < 1 {
                return Err(CliError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.grid.nodes.is_some_and(|n| n < 3) {
            return Err(CliError::Config("grid.nodes must be at least 3".into()));
        }
        let needs_model = kind != Kind::Acceptance;
        if needs_model && self.preset.is_none() && self.model.is_none() {
            return Err(CliError::Config(format!("kind `{}` needs a preset or a [model] table", kind.as_str())));
        }
        if kind == Kind::Bridge && self.preset.is_none() {
            return Err(CliError::Config("kind `bridge` needs a bridge preset".into()));
        }
        Ok(kind)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("gibbsdiff-out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
kind = "value"
preset = "case_a_quadratic"
seed = 7

[grid]
nodes = 201
pde_steps = 100

[value]
method = "mc"
z = 1.0

[tolerances]
sigmas = 4.0
"#;

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.kind, Some(Kind::Value));
        assert_eq!(c.grid.nodes, Some(201));
        assert_eq!(c.grid.steps, 200);
        assert_eq!(c.value.method, ValueMethod::Mc);
        assert_eq!(c.tolerances.sigmas, 4.0);
        assert_eq!(c.tolerances.entropy, 1e-4);
        let back = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn json_is_accepted() {
        let c = ExperimentConfig::parse(r#"{"kind": "simulate", "preset": "brownian_1d", "seed": 3, "sampling": {"paths": 10}}"#).unwrap();
        assert_eq!(c.sampling.paths, 10);
        assert_eq!(c.validate().unwrap(), Kind::Simulate);
    }

    #[test]
    fn hamiltonian_table() {
        let c = ExperimentConfig::parse(
            "kind = \"value\"\nseed = 1\n[model]\nsigma = 1.0\n[hamiltonian]\nkind = \"quadratic_terminal\"\nc = 2.0\n",
        )
        .unwrap();
        assert_eq!(c.hamiltonian, Some(HamiltonianKind::QuadraticTerminal { c: 2.0 }));
        c.validate().unwrap();
    }

    #[test]
    fn invariants() {
        let mut c = ExperimentConfig::parse(SAMPLE).unwrap();
        c.seed = None;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        c.seed = Some(1);
        c.sampling.paths = 0;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        c.sampling.paths = 5;
        c.preset = Some("missing".into());
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        assert!(ExperimentConfig::parse("kind = \"value\"\nbogus = 1\n").is_err());
    }
}
