//! CSV tables and run manifests.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! '.' as decimal point and '\n' line endings, independent of locale.

use std::io::Write;
use std::path::{Path, PathBuf};

use cbf::SystemConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Table {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Float(x) => fmt_f64(*x),
                    Cell::Int(n) => n.to_string(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Git-style content hash: SHA-256 over `blob <len>\0<content>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// `<path>.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: SystemConfig,
    pub seed: Option<u64>,
    pub settings: serde_json::Value,
    /// Hash of the scenario file as read.
    pub input_file_hash: String,
    /// Hash of the resolved inputs: command, config, seed and settings.
    pub input_hash: String,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: &SystemConfig,
        seed: Option<u64>,
        settings: serde_json::Value,
        raw_input: &[u8],
    ) -> Manifest {
        let resolved = serde_json::json!({
            "command": command,
            "config": config,
            "seed": seed,
            "settings": settings,
        });
        let canonical = serde_json::to_vec(&resolved).expect("manifest inputs serialize");
        Manifest {
            tool: "cbf",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config: config.clone(),
            seed,
            settings,
            input_file_hash: content_hash(raw_input),
            input_hash: content_hash(&canonical),
            outputs: Vec::new(),
        }
    }

    /// Writes the manifest next to the first output (`<out>.manifest.json`)
    /// or to `explicit`; without either it goes to stderr.
    pub fn write(&self, explicit: Option<&Path>) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        let target = explicit
            .map(Path::to_path_buf)
            .or_else(|| self.outputs.first().map(|p| sidecar(p)));
        match target {
            Some(p) => emit(Some(&p), &text),
            None => {
                eprint!("{text}");
                Ok(())
            }
        }
    }
}
