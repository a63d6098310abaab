use std::io::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

/// One machine-readable diagnostic; written as a JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: u32,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn new(file: impl Into<String>, line: u32, severity: Severity, message: impl Into<String>) -> Self {
        Self {
            file: file.into(),
            line,
            severity,
            message: message.into(),
        }
    }

    pub fn error(file: impl Into<String>, line: u32, message: impl Into<String>) -> Self {
        Self::new(file, line, Severity::Error, message)
    }

    pub fn warning(file: impl Into<String>, line: u32, message: impl Into<String>) -> Self {
        Self::new(file, line, Severity::Warning, message)
    }
}

pub fn write_json_lines<W: Write>(mut out: W, diagnostics: &[Diagnostic]) -> io::Result<()> {
    for d in diagnostics {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
