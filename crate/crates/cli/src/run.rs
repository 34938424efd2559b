//! Artifact writing and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

/// How a command failed; decides the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, flags or missing inputs (exit 2).
    Config(String),
    /// A pipeline stage rejected its input (exit 1).
    Module(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Module(e)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub fn config_err<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Config(msg.into()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: &'a [String],
    seed: u64,
    config_sha256: String,
    config: &'a PipelineConfig,
    inputs: &'a [FileDigest],
    outputs: &'a [FileDigest],
}

/// One command invocation: reads inputs, writes artifacts under the output
/// directory and finally a `<command>.manifest.json` describing the run.
///
/// The manifest leaves out the output directory so that identical runs into
/// different directories produce identical bytes.
pub struct Run {
    command: &'static str,
    args: Vec<String>,
    config: PipelineConfig,
    out_dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Run {
    pub fn new(command: &'static str, config: &PipelineConfig) -> CmdResult<Self> {
        let out_dir = config.out_dir();
        fs::create_dir_all(&out_dir)
            .map_err(|e| Failure::Config(format!("creating output directory {}: {e}", out_dir.display())))?;
        let mut config = config.clone();
        config.paths.out = None;
        Ok(Self {
            command,
            args: Vec::new(),
            config,
            out_dir,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn arg(&mut self, name: &str, value: impl std::fmt::Display) {
        self.args.push(format!("{name}={value}"));
    }

    pub fn arg_path(&mut self, name: &str, path: &Path) {
        let shown = self.show_path(path);
        self.arg(name, shown);
    }

    /// Paths under the output directory are shown relative to it.
    pub fn show_path(&self, path: &Path) -> String {
        path.strip_prefix(&self.out_dir).unwrap_or(path).display().to_string()
    }

    /// Read an input file and record its digest.
    pub fn read(&mut self, path: &Path) -> CmdResult<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(FileDigest {
            path: self.show_path(path),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    /// Write an artifact relative to the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CmdResult {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> CmdResult {
        let mut bytes = serde_json::to_vec_pretty(value).context("serializing")?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> CmdResult {
        let mut bytes = Vec::new();
        for it in items {
            serde_json::to_writer(&mut bytes, it).context("serializing")?;
            bytes.push(b'\n');
        }
        self.write(name, &bytes)
    }

    pub fn finish(self) -> CmdResult {
        let config_json = serde_json::to_vec(&self.config).context("serializing config")?;
        let manifest = Manifest {
            tool: "ribfrac",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            args: &self.args,
            seed: self.config.seed,
            config_sha256: sha256_hex(&config_json),
            config: &self.config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).context("serializing manifest")?;
        bytes.push(b'\n');
        let path = self.out_dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
