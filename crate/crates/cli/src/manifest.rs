//! Per-command run manifest: resolved config, seed, versions and the
//! checksums of every artifact read or written.

use std::path::{Path, PathBuf};

use localdif::config::RunConfig;
use localdif::{Error, Result};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

pub struct Manifest {
    command: &'static str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        let mut h = Sha256::new();
        for e in entries {
            h.update(e.file_name().unwrap_or_default().as_encoded_bytes());
            h.update(digest(&e)?.as_bytes());
        }
        return Ok(hex(&h.finalize()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn display(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Self { command, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    /// Writes `manifests/<command>.toml` under `out`.
    pub fn write(&self, out: &Path, cfg: &RunConfig) -> Result<PathBuf> {
        let mut t = Table::new();
        t.insert("command".into(), Value::String(self.command.into()));
        t.insert("seed".into(), Value::Integer(cfg.training.seed as i64));
        t.insert("threads".into(), Value::Integer(cfg.run.threads as i64));
        let mut versions = Table::new();
        versions.insert("localdif".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
        versions.insert("artifact_format".into(), Value::Integer(1));
        t.insert("versions".into(), Value::Table(versions));
        for (key, list) in [("inputs", &self.inputs), ("outputs", &self.outputs)] {
            let mut files = Table::new();
            for p in list {
                files.insert(display(out, p), Value::String(digest(p)?));
            }
            t.insert(key.into(), Value::Table(files));
        }
        let config = Value::try_from(cfg).map_err(|e| Error::Config(format!("config does not serialize: {e}")))?;
        t.insert("config".into(), config);

        let dir = out.join("manifests");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{}.toml", self.command));
        let text = toml::to_string(&t).map_err(|e| Error::Config(format!("manifest does not serialize: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
