use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct SketchManifest {
    pub kind: String,
    pub rows_factor: f64,
    pub rows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverManifest {
    pub atol: f64,
    pub max_iters: usize,
    pub estimate_every: usize,
    pub recycle_threshold: f64,
    pub refine_steps: usize,
    pub compute_true_mu: bool,
    pub theta: String,
}

/// Everything needed to rerun a command and get the same CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub seed: u64,
    pub sketch: Option<SketchManifest>,
    pub solver: Option<SolverManifest>,
    pub output: Option<String>,
    pub version: String,
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<String>, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            inputs,
            seed,
            sketch: None,
            solver: None,
            output: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
