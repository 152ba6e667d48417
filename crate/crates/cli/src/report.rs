//! Check records, CSV tables and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// One numeric claim together with the operation and seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub module: String,
    pub operation: String,
    pub seed: Option<u64>,
    pub value: f64,
    /// Human-readable acceptance condition, e.g. `<= 5e-3`.
    pub target: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, module: &str, operation: &str, seed: Option<u64>, value: f64, target: String, pass: bool) -> Self {
        Self {
            name: name.into(),
            module: module.into(),
            operation: operation.into(),
            seed,
            value,
            target,
            pass,
        }
    }

    /// `value <= bound`.
    pub fn at_most(name: &str, module: &str, operation: &str, seed: Option<u64>, value: f64, bound: f64) -> Self {
        Self::new(name, module, operation, seed, value, format!("<= {bound:e}"), value <= bound)
    }

    /// `value >= bound`.
    pub fn at_least(name: &str, module: &str, operation: &str, seed: Option<u64>, value: f64, bound: f64) -> Self {
        Self::new(name, module, operation, seed, value, format!(">= {bound:e}"), value >= bound)
    }

    /// `|value - target| <= tol`.
    pub fn near(name: &str, module: &str, operation: &str, seed: Option<u64>, value: f64, target: f64, tol: f64) -> Self {
        let pass = (value - target).abs() <= tol;
        Self::new(name, module, operation, seed, value, format!("{target} +/- {tol:e}"), pass)
    }

    pub fn flag(name: &str, module: &str, operation: &str, seed: Option<u64>, ok: bool) -> Self {
        Self::new(name, module, operation, seed, if ok { 1.0 } else { 0.0 }, "== 1".into(), ok)
    }
}

/// Writes checks as `name,module,operation,seed,value,target,pass`.
pub fn write_checks_csv<W: Write>(checks: &[Check], mut w: W) -> CliResult<()> {
    writeln!(w, "name,module,operation,seed,value,target,pass")?;
    for c in checks {
        let seed = c.seed.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            c.name,
            c.module,
            c.operation,
            seed,
            c.value,
            c.target,
            if c.pass { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(())
}

/// Output directory that remembers which files were written.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    written: Vec<String>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Creates `name`, hands a buffered writer to `f`, and records the file.
    pub fn write<F>(&mut self, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut dyn Write) -> CliResult<()>,
    {
        let path = self.root.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut buf = std::io::BufWriter::new(file);
        f(&mut buf)?;
        buf.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// Everything needed to trace a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub versions: std::collections::BTreeMap<String, String>,
    pub kind: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub wall_time_seconds: f64,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub status: String,
}

impl Manifest {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
