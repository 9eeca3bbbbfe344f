//! Experiment manifests: every command records its config snapshot, seeds,
//! input fingerprints and output paths, so a run can be checked for
//! bit-exact reproducibility.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::rng;

use super::CmdError;

#[derive(Serialize)]
pub struct Manifest<C: Serialize> {
    pub command: &'static str,
    pub tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: C,
    /// Input path -> content fingerprint.
    pub inputs: BTreeMap<String, String>,
    /// Paths written by the command, relative to the output directory.
    pub outputs: Vec<String>,
}

pub fn fingerprint_file(path: &Path) -> Result<String, CmdError> {
    let bytes = fs::read(path).map_err(|e| CmdError::runtime("io", format!("{}: {e}", path.display())))?;
    Ok(rng::fingerprint_hex(&bytes))
}

pub fn fingerprint_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>, CmdError> {
    let mut map = BTreeMap::new();
    for p in paths {
        map.insert(p.display().to_string(), fingerprint_file(p)?);
    }
    Ok(map)
}

pub fn write_manifest<C: Serialize>(
    out_dir: &Path,
    manifest: &Manifest<C>,
) -> Result<PathBuf, CmdError> {
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CmdError::runtime("serialize", e.to_string()))?;
    fs::write(&path, json + "\n")
        .map_err(|e| CmdError::runtime("io", format!("{}: {e}", path.display())))?;
    Ok(path)
}
