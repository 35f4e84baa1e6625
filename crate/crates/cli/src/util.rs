//! Atomic output writing and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Validation errors (exit 1) are problems with flags or input files;
/// runtime errors (exit 2) happen after inputs were accepted.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

pub fn validation(err: impl Into<anyhow::Error>) -> CliError {
    CliError::Validation(err.into())
}

pub fn runtime(err: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(err.into())
}

/// Write a primary output atomically: the file appears only once complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|()| fs::rename(&tmp, path))
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(validation)
}

#[derive(Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    created_unix: u64,
    seed: u64,
    config: &'a ptxt_core::TrainConfig,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
}

fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .with_context(|| format!("digesting {}", path.display()))
        .map_err(runtime)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Record what a run consumed and produced, next to its primary output.
/// The manifest is advisory metadata; its timestamp is excluded from any
/// reproducibility comparison.
pub fn write_manifest(
    command: &str,
    cfg: &ptxt_core::TrainConfig,
    inputs: &[&Path],
    outputs: &[&Path],
    primary_out: &Path,
) -> Result<(), CliError> {
    let digests = inputs
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.to_path_buf(),
                sha256: sha256_hex(p)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = Manifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seed: cfg.seed,
        config: cfg,
        inputs: digests,
        outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
    };
    let mut path = primary_out.as_os_str().to_owned();
    path.push(".manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest json");
    write_atomic(Path::new(&path), &json)
}
