//! Sample paths and ensembles, with CSV and binary serialization.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// One discretized path: states at every node and the Brownian increments
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: TimeGrid,
    pub state_dim: usize,
    pub noise_dim: usize,
    /// `(n_steps + 1) * state_dim` values, node-major.
    pub states: Vec<f64>,
    /// `n_steps * noise_dim` values, step-major.
    pub noise: Vec<f64>,
}

impl Path {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.noise[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.n_steps())
    }

    pub fn has_noise(&self) -> bool {
        self.noise.len() == self.grid.n_steps() * self.noise_dim && !self.noise.is_empty()
    }
}

/// Paths sharing one time grid, optionally carrying natural-log weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub paths: Vec<Path>,
    pub log_weights: Option<Vec<f64>>,
    pub seed: u64,
    pub model_id: String,
}

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    kind: String,
    state_dim: usize,
    noise_dim: usize,
    grid: TimeGrid,
    seed: u64,
    model_id: String,
    n_paths: usize,
    weighted: bool,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Attaches log-weights after checking they are finite.
    pub fn with_log_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.paths.len() {
            return Err(Error::Argument("one log-weight per path required".into()));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("log-weight of path {i} is {}", w[i])));
        }
        self.log_weights = Some(w);
        Ok(self)
    }

    /// Weights `exp(lw - max lw)` rescaled to sum to one.
    pub fn normalized_weights(&self) -> Option<Vec<f64>> {
        self.log_weights.as_ref().map(|lw| crate::stats::normalized_weights(lw))
    }

    /// Coordinate `d` of every path at node `k`.
    pub fn marginal(&self, k: usize, d: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.state(k)[d]).collect()
    }

    pub fn terminal(&self, d: usize) -> Vec<f64> {
        self.marginal(self.grid.n_steps(), d)
    }

    /// Columnar CSV: `path_id,step,t,x_1..x_n,dW_1..dW_m,log_weight`. The
    /// increment columns of the last node and an absent log-weight are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["path_id".to_string(), "step".into(), "t".into()];
        header.extend((1..=self.state_dim).map(|i| format!("x_{i}")));
        header.extend((1..=self.noise_dim).map(|i| format!("dW_{i}")));
        header.push("log_weight".into());
        writeln!(w, "{}", header.join(","))?;
        let n_steps = self.grid.n_steps();
        let mut line = String::new();
        for (pid, p) in self.paths.iter().enumerate() {
            let lw = self.log_weights.as_ref().map(|v| format!("{}", v[pid])).unwrap_or_default();
            for k in 0..=n_steps {
                line.clear();
                line.push_str(&format!("{pid},{k},{}", self.grid.time(k)));
                for x in p.state(k) {
                    line.push_str(&format!(",{x}"));
                }
                for j in 0..self.noise_dim {
                    if k < n_steps {
                        line.push_str(&format!(",{}", p.increment(k)[j]));
                    } else {
                        line.push(',');
                    }
                }
                line.push(',');
                line.push_str(&lw);
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let header = EnsembleHeader {
            kind: "path_ensemble".into(),
            state_dim: self.state_dim,
            noise_dim: self.noise_dim,
            grid: self.grid,
            seed: self.seed,
            model_id: self.model_id.clone(),
            n_paths: self.paths.len(),
            weighted: self.log_weights.is_some(),
        };
        let mut payload = Vec::new();
        for p in &self.paths {
            payload.extend_from_slice(&p.states);
            payload.extend_from_slice(&p.noise);
        }
        if let Some(lw) = &self.log_weights {
            payload.extend_from_slice(lw);
        }
        container::write(w, &header, &payload)
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let (h, payload): (EnsembleHeader, Vec<f64>) = container::read(r)?;
        if h.kind != "path_ensemble" {
            return Err(Error::Format(format!("expected path_ensemble, found {}", h.kind)));
        }
        let ns = h.grid.n_nodes() * h.state_dim;
        let nw = h.grid.n_steps() * h.noise_dim;
        let expected = h.n_paths * (ns + nw) + if h.weighted { h.n_paths } else { 0 };
        if payload.len() != expected {
            return Err(Error::Format(format!("payload has {} values, expected {expected}", payload.len())));
        }
        let mut paths = Vec::with_capacity(h.n_paths);
        let mut off = 0;
        for _ in 0..h.n_paths {
            let states = payload[off..off + ns].to_vec();
            let noise = payload[off + ns..off + ns + nw].to_vec();
            off += ns + nw;
            paths.push(Path { grid: h.grid, state_dim: h.state_dim, noise_dim: h.noise_dim, states, noise });
        }
        let log_weights = h.weighted.then(|| payload[off..].to_vec());
        Ok(Self {
            grid: h.grid,
            state_dim: h.state_dim,
            noise_dim: h.noise_dim,
            paths,
            log_weights,
            seed: h.seed,
            model_id: h.model_id,
        })
    }
}
