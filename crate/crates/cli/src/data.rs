//! Headerless numeric CSV input: one observation per row.

use std::path::Path;

use spiked_edgeworth::linalg::DataMatrix;

use crate::CliError;

pub fn read_matrix(path: &Path) -> Result<DataMatrix, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        if let Some(first) = rows.first() {
            if record.len() != first.len() {
                return Err(CliError::Data(format!(
                    "row {row}: expected {} fields, found {}",
                    first.len(),
                    record.len()
                )));
            }
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(j, field)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Data(format!(
                    "row {row}, column {}: '{field}' is not a finite number",
                    j + 1
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", path.display())));
    }
    DataMatrix::from_rows(&rows).map_err(|e| CliError::Data(e.to_string()))
}
