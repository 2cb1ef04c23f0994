//! Shared plumbing: config resolution, JSONL I/O, provenance, errors.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use treenlg::example::{parse_records, read_jsonl, write_jsonl, RecordError};
use treenlg::{DomainConfig, Example, ExampleRecord};

pub const DEFAULT_SEED: u64 = 1234;

/// An error with a machine-readable kind, reported as JSON on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub details: Value,
    pub exit_code: i32,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            details: Value::Null,
            exit_code: 1,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    /// Artifacts were written but the report lists errors.
    pub fn reported(kind: &'static str, message: impl Into<String>, details: Value) -> Self {
        CliError {
            kind,
            message: message.into(),
            details,
            exit_code: 2,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut error = json!({ "kind": self.kind, "message": self.message });
        if !self.details.is_null() {
            error["details"] = self.details.clone();
        }
        json!({ "error": error })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

/// `--config` values: builtin names or file paths, matched to records by
/// domain name. A single config applies to every record.
pub struct Configs {
    pub configs: Vec<DomainConfig>,
}

impl Configs {
    pub fn load(specs: &[String]) -> Result<Self> {
        if specs.is_empty() {
            return Err(CliError::new("usage", "at least one --config is required").into());
        }
        let mut configs = Vec::new();
        for spec in specs {
            let cfg = if DomainConfig::builtin_names().contains(&spec.as_str()) && !Path::new(spec).exists() {
                DomainConfig::builtin(spec)?
            } else {
                treenlg::config::load_config(spec).map_err(|e| {
                    CliError::new("config", e.to_string()).with_details(json!({ "config": spec }))
                })?
            };
            configs.push(cfg);
        }
        Ok(Configs { configs })
    }

    pub fn for_domain(&self, domain: &str) -> Result<&DomainConfig> {
        if self.configs.len() == 1 {
            return Ok(&self.configs[0]);
        }
        self.configs
            .iter()
            .find(|c| c.name == domain)
            .ok_or_else(|| CliError::new("config", format!("no config for domain `{domain}`")).into())
    }

    pub fn digests(&self) -> BTreeMap<String, String> {
        self.configs
            .iter()
            .map(|c| (c.name.clone(), sha256_hex(c.to_json_string().as_bytes())))
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_records(path: &Path) -> Result<Vec<ExampleRecord>> {
    read_jsonl_file(path)
}

pub fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| {
        CliError::new("io", format!("cannot open {}: {e}", path.display()))
    })?;
    read_jsonl(BufReader::new(file)).map_err(|e| {
        CliError::new("jsonl", format!("{}: {e}", path.display())).into()
    })
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = create(path)?;
    let mut w = BufWriter::new(file);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

/// Parses records with their domain's config; failures are returned, not
/// dropped.
pub fn parse_all(records: &[ExampleRecord], configs: &Configs) -> Result<(Vec<Example>, Vec<RecordError>)> {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in records {
        let cfg = configs.for_domain(&r.domain)?;
        let (mut a, mut b) = parse_records(std::slice::from_ref(r), cfg);
        ok.append(&mut a);
        failed.append(&mut b);
    }
    Ok((ok, failed))
}

pub fn failures_json(failed: &[RecordError]) -> Value {
    Value::Array(
        failed
            .iter()
            .map(|e| json!({ "id": e.id(), "error": e.to_string() }))
            .collect(),
    )
}

/// Parses every record or fails with the full list of bad ids.
pub fn parse_strict(records: &[ExampleRecord], configs: &Configs) -> Result<Vec<Example>> {
    let (ok, failed) = parse_all(records, configs)?;
    if !failed.is_empty() {
        return Err(CliError::new("parse", format!("{} record(s) failed to parse", failed.len()))
            .with_details(failures_json(&failed))
            .into());
    }
    Ok(ok)
}

/// Inputs, config digests, seed and tool version of one invocation.
/// Contains no timestamps so that reruns are byte-identical.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub inputs: Vec<FileDigest>,
    pub configs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub outputs: Vec<FileDigest>,
    pub parameters: Value,
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance {
            tool: "treenlg",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            inputs: Vec::new(),
            configs: BTreeMap::new(),
            seed: None,
            outputs: Vec::new(),
            parameters: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        });
        Ok(self)
    }

    pub fn configs(&mut self, configs: &Configs) -> &mut Self {
        self.configs = configs.digests();
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn parameters(&mut self, parameters: Value) -> &mut Self {
        self.parameters = parameters;
        self
    }

    /// Records the outputs and writes `<primary>.provenance.json`.
    pub fn finish(&mut self, primary: &Path, outputs: &[&Path]) -> Result<PathBuf> {
        for p in outputs {
            self.outputs.push(FileDigest {
                path: p.display().to_string(),
                sha256: file_digest(p)?,
            });
        }
        let target = provenance_path(primary);
        write_json_file(&target, self)?;
        Ok(target)
    }
}

pub fn provenance_path(primary: &Path) -> PathBuf {
    sibling_path(primary, ".provenance.json")
}

/// `<primary file name><suffix>` in the same directory.
pub fn sibling_path(primary: &Path, suffix: &str) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    primary.with_file_name(name)
}

/// `name=value` pairs; a bare value gets `default_name(value)`.
pub fn split_named(spec: &str, default_name: impl Fn(&str) -> String) -> (String, String) {
    match spec.split_once('=') {
        Some((n, v)) if !n.is_empty() => (n.to_string(), v.to_string()),
        _ => (default_name(spec), spec.to_string()),
    }
}

pub fn file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}
