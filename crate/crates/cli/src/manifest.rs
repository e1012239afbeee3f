//! `manifest.txt`: the resolved invocation, written before any result,
//! then the artifact checksums appended once the results exist.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    /// Further resolved settings, in order.
    pub settings: Vec<(String, String)>,
    /// `(file name, sha256 hex)`.
    pub checksums: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Path, seed: u64, out: &Path) -> Self {
        Self {
            command: command.into(),
            config: config.into(),
            seed,
            out: out.into(),
            settings: Vec::new(),
            checksums: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.push((key.into(), value.to_string()));
        self
    }

    fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "config = {}", self.config.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        for (k, v) in &self.settings {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn path(&self) -> PathBuf {
        self.out.join(FILE_NAME)
    }

    /// Creates the output directory and writes the manifest header.
    pub fn write_header(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let path = self.path();
        std::fs::write(&path, self.header()).map_err(|e| CliError::io(&path, e))
    }

    /// Hashes `files` (relative to the output directory) and appends the
    /// checksums.
    pub fn append_checksums(&mut self, files: &[&str]) -> Result<(), CliError> {
        let mut lines = String::new();
        for name in files {
            let p = self.out.join(name);
            let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
            let hex: String = Sha256::digest(&bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            let _ = writeln!(lines, "sha256 {name} = {hex}");
            self.checksums.push(((*name).into(), hex));
        }
        let path = self.path();
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        f.write_all(lines.as_bytes())
            .map_err(|e| CliError::io(&path, e))
    }
}
