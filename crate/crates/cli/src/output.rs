//! Bit-stable artifact emission: fixed column order, 17 significant digits,
//! and the configuration hash embedded in every CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Shortest form that round-trips: 17 significant digits in scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// CSV table that renders with a `# config-sha256:` comment line and a header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# config-sha256: {config_hash}");
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Output directory plus the hash stamped into every artifact.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Artifacts { dir: dir.to_path_buf(), hash, written: Vec::new() })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let text = table.render(&self.hash);
        self.write(name, &text)
    }

    /// Pretty JSON with the hash as the first member.
    pub fn json(&mut self, name: &str, body: serde_json::Value) -> Result<(), CliError> {
        let mut doc = serde_json::Map::new();
        doc.insert("config_sha256".into(), self.hash.clone().into());
        if let serde_json::Value::Object(map) = body {
            doc.extend(map);
        } else {
            doc.insert("result".into(), body);
        }
        let text =
            serde_json::to_string_pretty(&serde_json::Value::Object(doc)).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }
}
