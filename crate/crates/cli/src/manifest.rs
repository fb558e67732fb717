//! `key=value` run manifests. Argument keys are the long flag names, so a
//! manifest can be turned back into a command line.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const ARTIFACT_VERSION: &str = concat!("morphreg ", env!("CARGO_PKG_VERSION"));

/// Keys that describe the run rather than re-create it.
const META_PREFIX: &str = "info.";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub subcommand: String,
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        Manifest { subcommand: subcommand.to_string(), entries: Vec::new() }
    }

    pub fn arg(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    /// Paths are recorded absolute so a rerun works from any directory.
    pub fn path(&mut self, key: &str, p: &Path) -> &mut Self {
        let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        self.arg(key, abs.display())
    }

    pub fn opt_path(&mut self, key: &str, p: Option<&PathBuf>) -> &mut Self {
        if let Some(p) = p {
            self.path(key, p);
        }
        self
    }

    pub fn flag(&mut self, key: &str, on: bool) -> &mut Self {
        if on {
            self.arg(key, "true");
        }
        self
    }

    pub fn info(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.arg(&format!("{META_PREFIX}{key}"), value)
    }

    pub fn render(&self) -> String {
        let mut s = format!("subcommand={}\nartifact_version={ARTIFACT_VERSION}\n", self.subcommand);
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Usage(format!("manifest line {}: expected key=value", n + 1)))?;
            match k {
                "subcommand" => m.subcommand = v.to_string(),
                "artifact_version" => {
                    if v != ARTIFACT_VERSION {
                        eprintln!("warning: manifest written by {v}, running {ARTIFACT_VERSION}");
                    }
                }
                _ => m.entries.push((k.to_string(), v.to_string())),
            }
        }
        if m.subcommand.is_empty() {
            return Err(CliError::Usage("manifest has no subcommand".into()));
        }
        Ok(m)
    }

    /// The command line that reproduces the run.
    pub fn to_args(&self) -> Vec<String> {
        let mut args = vec!["morphreg".to_string(), self.subcommand.clone()];
        for (k, v) in &self.entries {
            if k.starts_with(META_PREFIX) {
                continue;
            }
            args.push(format!("--{k}"));
            if v != "true" {
                args.push(v.clone());
            }
        }
        args
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.render()).map_err(|e| CliError::File { path: path.to_path_buf(), source: e.into() })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::File { path: path.to_path_buf(), source: e.into() })?;
        Self::parse(&text)
    }
}

/// `dir/model.bin` + `"log"` -> `dir/model.log`.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}
