use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::Format;
use crate::CliError;

/// Writes `csv` or the JSON form of `value` to `path`, or stdout when absent.
pub fn write_output<T: Serialize + ?Sized>(
    value: &T,
    csv: impl FnOnce() -> String,
    path: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let mut text = match format {
        Format::Csv => csv(),
        Format::Json => serde_json::to_string_pretty(value).map_err(|e| {
            CliError::Core(earlystop::Error::Numerical(format!(
                "cannot serialize result: {e}"
            )))
        })?,
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))
        }
    }
}
