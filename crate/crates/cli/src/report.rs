//! CSV reports with a JSON metadata header line. Plain CSV keeps the
//! numbers greppable and plottable; the `#`-prefixed first line carries
//! the provenance a bare table loses.

use std::path::Path;

use serde_json::Value;

use crate::CliError;

/// One report file under construction.
pub struct Report {
    metadata: Value,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Fixed-precision rate/score formatting so identical numbers always
/// produce identical bytes.
pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

impl Report {
    /// `metadata` must be a JSON object; the writer adds nothing to it,
    /// so re-runs stay byte-identical (no timestamps, no hostnames).
    pub fn new(metadata: Value, header: &[&str]) -> Self {
        Report {
            metadata,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "report row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        }
        let mut out = String::new();
        out.push_str("# ");
        out.push_str(&serde_json::to_string(&self.metadata).expect("metadata serializes"));
        out.push('\n');
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
    }
}
