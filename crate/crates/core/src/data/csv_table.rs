use std::path::Path;

use super::Split;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a headed numeric CSV. `label_column` names the integer label column;
/// every other column becomes a feature. Rows and columns in error messages
/// are 1-based, counting the header as row 1.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Split> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, format!("missing header row: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::format(path, "missing header row"));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::format(path, format!("no column named {label_column:?}")))?;
    let width = headers.len() - 1;
    if width == 0 {
        return Err(Error::format(path, "no feature columns"));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        for (j, cell) in rec.iter().enumerate() {
            let col = j + 1;
            if j == label_idx {
                let label: usize = cell.parse().map_err(|_| {
                    Error::format(path, format!("row {row}, column {col}: label {cell:?} is not a non-negative integer"))
                })?;
                labels.push(label);
            } else {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| Error::format(path, format!("row {row}, column {col}: {cell:?} is not numeric")))?;
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    Split::new(Tensor::new(vec![labels.len(), width], data)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn reads_features_and_labels() {
        let (_d, p) = write("a,label,b\n1.5,0,2\n-3,2,4e-1\n");
        let s = load_csv(&p, "label").unwrap();
        assert_eq!(s.x.shape(), &[2, 2]);
        assert_eq!(s.x.data(), &[1.5, 2.0, -3.0, 0.4]);
        assert_eq!(s.y, vec![0, 2]);
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let (_d, p) = write("a,label\n1,0\nx,1\n");
        let err = load_csv(&p, "label").unwrap_err().to_string();
        assert!(err.contains("row 3, column 1"), "{err}");
    }

    #[test]
    fn missing_label_column() {
        let (_d, p) = write("a,b\n1,0\n");
        assert!(load_csv(&p, "label").unwrap_err().to_string().contains("label"));
    }
}
