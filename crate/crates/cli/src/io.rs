use crate::error::CliError;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Format a float with 17 significant digits so reruns are byte-identical
/// at full double precision.
pub fn float17(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // Integers print exactly either way; keep them readable.
        format!("{v}")
    } else {
        format!("{v:.16e}")
    }
}

/// Incremental CSV writer with a versioned '#' schema header.
pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(schema: &str, columns: &[&str]) -> Self {
        let mut buf = String::new();
        let _ = writeln!(buf, "# {schema}");
        let _ = writeln!(buf, "{}", columns.join(","));
        CsvWriter { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.buf, "{}", fields.join(","));
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.buf)?;
        Ok(())
    }
}

/// Serialize `value` as pretty JSON into `path`.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Create the output directory and return it.
pub fn ensure_out_dir(dir: &str) -> Result<PathBuf, CliError> {
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path)?;
    Ok(path)
}
