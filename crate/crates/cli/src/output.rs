use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Index of a report directory. Holds no timestamps so that identical
/// runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub command: &'a str,
    pub tool_version: &'a str,
    pub seed: Option<u64>,
    pub parameters: serde_json::Value,
    pub dataset_digest: Option<String>,
    pub summary: String,
    pub files: Vec<String>,
}

/// `<parent>/<command>-<UTC timestamp>/`, created on construction.
pub struct ReportDir {
    path: PathBuf,
    command: &'static str,
    files: Vec<String>,
}

impl ReportDir {
    pub fn create(parent: &Path, command: &'static str) -> Result<Self, CliError> {
        fs::create_dir_all(parent)?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
        let mut path = parent.join(format!("{command}-{stamp}"));
        let mut n = 1;
        while path.exists() {
            n += 1;
            path = parent.join(format!("{command}-{stamp}-{n}"));
        }
        fs::create_dir(&path)?;
        Ok(ReportDir {
            path,
            command,
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    ) -> Result<PathBuf, CliError> {
        let path = self.path.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Registers files some other writer put in the directory.
    pub fn adopt(&mut self, paths: &[PathBuf]) {
        for p in paths {
            if let Some(name) = p.file_name() {
                self.files.push(name.to_string_lossy().into_owned());
            }
        }
    }

    /// Writes `manifest.json` and prints the one-line summary.
    pub fn finish(
        mut self,
        seed: Option<u64>,
        parameters: serde_json::Value,
        dataset_digest: Option<String>,
        summary: String,
    ) -> Result<PathBuf, CliError> {
        self.files.sort();
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            parameters,
            dataset_digest,
            summary: summary.clone(),
            files: std::mem::take(&mut self.files),
        };
        let path = self.path.join("manifest.json");
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        println!("{summary} [report: {}]", self.path.display());
        Ok(self.path)
    }
}
