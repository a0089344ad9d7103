//! Deterministic CSV emission of record series.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::fit::RateFit;
use super::{ConvergenceRecord, Series};
use crate::error::{Error, Result};

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.into())
}

/// Writes `sweep_var,error,<meta keys>` rows and a `# fitted_slope=` footer.
/// An empty list produces the header only.
pub fn emit<W: Write>(records: &[ConvergenceRecord], fit: Option<&RateFit>, out: W) -> Result<()> {
    let keys: Vec<&str> = records
        .first()
        .map(|r| r.meta.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    for r in records {
        if r.meta.len() != keys.len() || r.meta.iter().zip(&keys).any(|((k, _), key)| k != key) {
            return Err(Error::Mismatch(
                "records of one series must share metadata keys".into(),
            ));
        }
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["sweep_var", "error"];
    header.extend(&keys);
    w.write_record(&header).map_err(csv_error)?;
    for r in records {
        let mut row = vec![format!("{:.12e}", r.sweep_var), format!("{:.12e}", r.error)];
        row.extend(r.meta.iter().map(|(_, v)| v.clone()));
        w.write_record(&row).map_err(csv_error)?;
    }
    let mut out = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    if !records.is_empty() {
        match fit {
            Some(f) => writeln!(out, "# fitted_slope={:.6}", f.slope)?,
            None => writeln!(out, "# fitted_slope=none")?,
        }
    }
    out.flush()?;
    Ok(())
}

pub fn emit_to_path(
    records: &[ConvergenceRecord],
    fit: Option<&RateFit>,
    path: &Path,
) -> Result<()> {
    emit(records, fit, BufWriter::new(File::create(path)?))
}

/// `dir/name.csv` with label `a` becomes `dir/name_a.csv`.
pub fn series_path(base: &Path, label: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("series");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_{label}.{ext}"))
}

/// One file per series, suffixed by the series label.
pub fn emit_series(series: &[Series], base: &Path) -> Result<Vec<PathBuf>> {
    series
        .iter()
        .map(|s| {
            let path = series_path(base, &s.label);
            emit_to_path(&s.records, s.fit.as_ref(), &path)?;
            Ok(path)
        })
        .collect()
}
