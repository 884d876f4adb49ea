//! Run manifests: what was run, on which inputs, producing which outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::io::{read_text, sibling, write_text};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(FileHash {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub subcommand: String,
    /// Arguments after the program name, with the seed made explicit.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl RunManifest {
    pub fn path_for(primary_output: &Path) -> std::path::PathBuf {
        sibling(primary_output, "manifest.json")
    }

    pub fn write(&self, primary_output: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_text(&Self::path_for(primary_output), &text)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| CliError::parse(path, e))
    }
}

/// Collects a manifest for one command invocation.
pub struct ManifestBuilder {
    subcommand: String,
    argv: Vec<String>,
    seed: Option<u64>,
    source: Option<String>,
    inputs: Vec<FileHash>,
    outputs: Vec<std::path::PathBuf>,
    config: serde_json::Value,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, argv: &[String]) -> Self {
        ManifestBuilder {
            subcommand: subcommand.into(),
            argv: argv.to_vec(),
            seed: None,
            source: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        if !self.argv.iter().any(|a| a == "--seed" || a.starts_with("--seed=")) {
            self.argv.push("--seed".into());
            self.argv.push(seed.to_string());
        }
        self
    }

    pub fn source(&mut self, source: &str) -> &mut Self {
        self.source = Some(source.into());
        self
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> &mut Self {
        self.config = serde_json::to_value(config).expect("config serializes");
        self
    }

    pub fn input(&mut self, path: &Path) -> CliResult<&mut Self> {
        self.inputs.push(FileHash::of(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Hashes the outputs and writes `<primary>.manifest.json`.
    pub fn finish(&self, primary_output: &Path) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            subcommand: self.subcommand.clone(),
            argv: self.argv.clone(),
            config: self.config.clone(),
            seed: self.seed,
            source: self.source.clone(),
            inputs: self.inputs.clone(),
            outputs: self
                .outputs
                .iter()
                .map(|p| FileHash::of(p))
                .collect::<CliResult<_>>()?,
        };
        manifest.write(primary_output)?;
        Ok(manifest)
    }
}
