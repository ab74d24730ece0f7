use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::{CliError, Command};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(command: Command, cfg: &ExperimentConfig) -> Self {
        let canonical = serde_json::to_string(cfg).expect("config serializes");
        Provenance {
            command: command.name().to_string(),
            config_digest: hex::encode(Sha256::digest(canonical.as_bytes())),
            seed: cfg.seed(),
            version: ftree_core::VERSION.to_string(),
        }
    }

    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("command={}", self.command),
            format!("config_digest={}", self.config_digest),
            format!("seed={}", self.seed),
            format!("version={}", self.version),
        ]
    }
}

#[derive(Serialize)]
struct Record<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

pub fn record_json<T: Serialize>(prov: &Provenance, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Record { provenance: prov, body }).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `text` to `out`, or stdout when no path is given.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// `report.csv` with suffix `annulus` becomes `report.annulus.csv`.
pub fn suffixed(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    out.with_file_name(format!("{stem}.{suffix}.{ext}"))
}
