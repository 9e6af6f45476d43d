//! Versioned JSON and CSV writers. Every CSV starts with a
//! `# format_version = N` comment line, which gnuplot skips.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::CliError;
use crate::scenario::FORMAT_VERSION;

pub struct OutputDir {
    pub root: PathBuf,
    pub written: Vec<PathBuf>,
    /// Scenario name recorded in every JSON file.
    pub scenario: Option<String>,
}

impl OutputDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root, written: Vec::new(), scenario: None })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = File::create(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    /// Write an object with `format_version` (and the scenario name) ahead
    /// of its fields.
    pub fn json(&mut self, name: &str, value: Value) -> Result<(), CliError> {
        let mut obj = Map::new();
        obj.insert("format_version".into(), FORMAT_VERSION.into());
        if let Some(s) = &self.scenario {
            obj.insert("scenario".into(), s.clone().into());
        }
        match value {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("data".into(), other);
            }
        }
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &Value::Object(obj)).map_err(std::io::Error::other)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// CSV with a version comment and a header row; values in `%.17e`.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
        let mut w = self.open(name)?;
        writeln!(w, "# format_version = {FORMAT_VERSION}")?;
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV produced by a core writer, behind the version comment.
    pub fn csv_with(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> fdc_core::Result<()>,
    ) -> Result<(), CliError> {
        let mut w = self.open(name)?;
        writeln!(w, "# format_version = {FORMAT_VERSION}")?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Raw bytes, for the binary trajectory cache.
    pub fn bytes(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> fdc_core::Result<()>,
    ) -> Result<(), CliError> {
        let mut w = self.open(name)?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn report(&self, quiet: bool) {
        if quiet {
            return;
        }
        for p in &self.written {
            eprintln!("wrote {}", display(p));
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
