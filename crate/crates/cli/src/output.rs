//! CSV emission. Floats are written with 17 significant digits so they read
//! back bit-exact, and every file is written to a temporary sibling first
//! and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Schema tag written into every run's summary.csv.
pub const RUN_SCHEMA: &str = "loadshape-run/1";

/// Schema tag written into experiment summaries.
pub const EXPERIMENT_SCHEMA: &str = "loadshape-experiment/1";

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Rows of string cells, written as one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Output(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Output(format!("missing column {name}")))
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Output(format!("{} is not writable: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Output(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Output root: the flag, else the config, else `$LOADSHAPE_OUT/<command>`,
/// else `loadshape-out/<command>`.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>, env_root: Option<&Path>, command: &str) -> PathBuf {
    flag.or(config)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| env_root.unwrap_or(Path::new("loadshape-out")).join(command))
}
