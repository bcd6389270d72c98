//! Reproducibility block attached to every output.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Manifest {
    pub command_line: Vec<String>,
    pub config_paths: Vec<String>,
    pub seed: Option<u64>,
    pub catalog_source: String,
    pub catalog_sha256: String,
}

impl Manifest {
    pub fn new(catalog_source: String, catalog_text: &str) -> Self {
        let args = std::env::args().skip(1);
        Self {
            command_line: std::iter::once("kvroof".to_string()).chain(args).collect(),
            config_paths: Vec::new(),
            seed: None,
            catalog_source,
            catalog_sha256: hex::encode(Sha256::digest(catalog_text.as_bytes())),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tool": "kvroof",
            "version": env!("CARGO_PKG_VERSION"),
            "command_line": self.command_line,
            "config_paths": self.config_paths,
            "seed": self.seed,
            "catalog": self.catalog_source,
            "catalog_sha256": self.catalog_sha256,
        })
    }

    /// `# key: value` lines for CSV and plain-text outputs.
    pub fn comment_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# kvroof {}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!(
            "# command_line: {}\n",
            self.command_line.join(" ")
        ));
        if !self.config_paths.is_empty() {
            out.push_str(&format!(
                "# config_paths: {}\n",
                self.config_paths.join(" ")
            ));
        }
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed: {seed}\n"));
        }
        out.push_str(&format!("# catalog: {}\n", self.catalog_source));
        out.push_str(&format!("# catalog_sha256: {}\n", self.catalog_sha256));
        out
    }

    /// Single JSON line for line-delimited outputs.
    pub fn jsonl_line(&self) -> String {
        format!("{}\n", json!({ "manifest": self.to_json() }))
    }
}
