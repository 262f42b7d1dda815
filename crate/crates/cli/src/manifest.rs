//! Run manifests: what produced an output file.
//!
//! The hash covers the tool version, the subcommand, the master seed and the
//! canonical rendering of every resolved config. Output paths, worker counts
//! and timing are recorded in the JSON manifest but never hashed.

use serde::Serialize;
use sha2::{Digest, Sha256};

use chr2_core::analysis::SweepPoint;
use chr2_core::config::Canonical;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub hash: String,
    pub configs: Vec<String>,
    pub outputs: Vec<String>,
    pub threads: Option<usize>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, points: &[SweepPoint]) -> Self {
        let configs: Vec<String> = points.iter().map(|p| Canonical(&p.config).to_string()).collect();
        let mut hasher = Sha256::new();
        hasher.update(format!("chr2sim {VERSION}\ncommand = {command}\nseed = {seed}\n"));
        for (i, c) in configs.iter().enumerate() {
            hasher.update(format!("[point {i}]\n{c}\n"));
        }
        Self {
            tool: "chr2sim",
            version: VERSION,
            command: command.to_string(),
            seed,
            hash: hex::encode(hasher.finalize()),
            configs,
            outputs: Vec::new(),
            threads: None,
            wall_seconds: 0.0,
        }
    }

    /// First line of every CSV this run writes.
    pub fn csv_comment(&self) -> String {
        format!("# manifest={} seed={}\n", self.hash, self.seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }
}
