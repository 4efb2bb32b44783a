//! CSV point-set I/O: one row per point, one numeric column per coordinate.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use gamma_abc::PointSet;

use crate::CliError;

/// Reads a point set; with `header` the first row is skipped.
pub fn read_points(path: &Path, header: bool) -> Result<PointSet, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    CliError::Config(format!(
                        "{}: row {}: '{field}' is not a number",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    PointSet::new(rows).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Writes rows with shortest round-trip formatting, optionally under a header.
pub fn write_rows<'a, W: Write>(
    out: W,
    header: Option<&[String]>,
    rows: impl IntoIterator<Item = &'a [f64]>,
) -> io::Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(out);
    if let Some(names) = header {
        writer.write_record(names)?;
    }
    for row in rows {
        writer.write_record(row.iter().map(f64::to_string))?;
    }
    writer.flush()
}

pub fn write_points(path: &Path, points: &PointSet, header: bool) -> Result<(), CliError> {
    let names: Vec<String> = (0..points.dim()).map(|j| format!("x{j}")).collect();
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_rows(file, header.then_some(names.as_slice()), points.rows())
        .map_err(|e| CliError::io(path, e))
}
