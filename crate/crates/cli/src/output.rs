//! Output files stamped with the artifact version and the configuration hash.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// SHA-256 over the configuration text and the effective seed.
pub fn config_hash(text: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update(format!("\nseed={seed}\n").as_bytes());
    format!("{:x}", h.finalize())
}

pub struct OutputDir {
    dir: PathBuf,
    hash: String,
    verb: &'static str,
    seed: u64,
    pub format: Format,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, hash: String, verb: &'static str, seed: u64, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(OutputDir { dir: dir.to_path_buf(), hash, verb, seed, format, written: Vec::new() })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn envelope(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("version".into(), Value::from(VERSION));
        m.insert("config_hash".into(), Value::from(self.hash.clone()));
        m.insert("verb".into(), Value::from(self.verb));
        m.insert("seed".into(), Value::from(self.seed));
        m
    }

    /// Pretty JSON object: the envelope followed by `payload` under `key`.
    pub fn json<T: Serialize>(&mut self, name: &str, key: &str, payload: &T) -> Result<(), CliError> {
        let mut m = self.envelope();
        m.insert(key.into(), serde_json::to_value(payload)?);
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &Value::Object(m))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// JSON lines preceded by an envelope line.
    pub fn jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let header = Value::Object(self.envelope());
        let mut w = self.open(name)?;
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for r in rows {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV with a leading `#` comment carrying the version and hash.
    pub fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> projctl::Result<()>,
    ) -> Result<(), CliError> {
        let line = format!("# projctl {VERSION} verb={} seed={} config_sha256={}\n", self.verb, self.seed, self.hash);
        let mut w = self.open(name)?;
        w.write_all(line.as_bytes())?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes a table either as CSV or as a JSON array depending on `--format`.
    pub fn table<T: Serialize>(
        &mut self,
        stem: &str,
        rows: &[T],
        csv_body: impl FnOnce(&mut dyn Write) -> projctl::Result<()>,
    ) -> Result<(), CliError> {
        match self.format {
            Format::Csv => self.csv(&format!("{stem}.csv"), csv_body),
            Format::Json => self.json(&format!("{stem}.json"), "rows", &rows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_text_and_seed() {
        let a = config_hash("seed = 1\n", 1);
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash("seed = 1\n", 1));
        assert_ne!(a, config_hash("seed = 1\n", 2));
        assert_ne!(a, config_hash("seed = 2\n", 1));
    }
}
