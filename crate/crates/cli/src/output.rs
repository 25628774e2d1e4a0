use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

/// `key = value` lines written as `#` comments above a CSV table.
#[derive(Debug, Clone, Default)]
pub struct Header(Vec<(String, String)>);

impl Header {
    pub fn new(command: &str, config_sha256: &str) -> Self {
        Self(vec![("command".into(), command.into()), ("config_sha256".into(), config_sha256.into())])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(source) => source,
        kind => std::io::Error::other(format!("{kind:?}")),
    };
    CliError::io(path, source)
}

/// Writes `rows` as CSV with LF endings below the header comments.
pub fn write_csv<R: Serialize>(
    path: &Path,
    header: &Header,
    columns: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> Result<PathBuf> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (key, value) in &header.0 {
        writeln!(out, "# {key} = {value}").map_err(|e| CliError::io(path, e))?;
    }
    let mut writer =
        csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(columns).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}
