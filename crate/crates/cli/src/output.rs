use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};

/// Text for stdout plus named files, produced without touching the disk so
/// runs can be compared byte for byte.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Output {
    pub stdout: String,
    pub files: Vec<(String, String)>,
    pub code: u8,
}

impl Output {
    pub fn line(&mut self, text: impl AsRef<str>) {
        self.stdout.push_str(text.as_ref());
        self.stdout.push('\n');
    }

    pub fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.file(name, text);
        Ok(())
    }

    /// Writes the files into `dir`, or appends them to stdout when there is none.
    pub fn emit(&self, dir: Option<&Path>) -> Result<String> {
        let mut text = self.stdout.clone();
        match dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                for (name, contents) in &self.files {
                    std::fs::write(dir.join(name), contents)?;
                }
            }
            None => {
                for (name, contents) in &self.files {
                    text.push_str(&format!("== {name} ==\n"));
                    text.push_str(contents);
                }
            }
        }
        Ok(text)
    }
}

/// Shortest round-trip scientific form.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Config(e.to_string()))
}
