//! CSV datasets: comma separated, mandatory header, numeric features and an
//! optional non-negative integer label column.

use std::io::Read;
use std::path::Path;

use crate::error::{CliError, CliResult, ExitKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    /// Present when the label column exists in the header.
    pub labels: Option<Vec<usize>>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn require_labels(&self, label_column: &str) -> CliResult<&[usize]> {
        self.labels.as_deref().ok_or_else(|| {
            CliError::new(
                ExitKind::Io,
                format!("dataset has no label column '{label_column}'"),
            )
        })
    }
}

fn data_error(msg: String) -> CliError {
    CliError::new(ExitKind::Io, msg)
}

pub fn parse_csv<R: Read>(reader: R, label_column: &str) -> CliResult<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| data_error(format!("unreadable header: {e}")))?
        .clone();
    if header.is_empty() {
        return Err(data_error("empty header".into()));
    }
    let label_idx = header.iter().position(|h| h.trim() == label_column);
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(data_error("no feature columns".into()));
    }
    let mut features = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data_error(format!("row {}: {e}", line + 1)))?;
        if rec.len() != header.len() {
            return Err(data_error(format!(
                "row {}: expected {} fields, found {}",
                line + 1,
                header.len(),
                rec.len()
            )));
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (i, field) in rec.iter().enumerate() {
            let field = field.trim();
            if Some(i) == label_idx {
                let y: usize = field.parse().map_err(|_| {
                    data_error(format!(
                        "row {}: label '{field}' is not a class index",
                        line + 1
                    ))
                })?;
                if let Some(l) = labels.as_mut() {
                    l.push(y);
                }
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    data_error(format!("row {}: '{field}' is not a number", line + 1))
                })?;
                if !v.is_finite() {
                    return Err(data_error(format!("row {}: non-finite value", line + 1)));
                }
                row.push(v);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(data_error("dataset has no rows".into()));
    }
    Ok(RawDataset {
        feature_names,
        features,
        labels,
    })
}

pub fn load_csv(path: &Path, label_column: &str) -> CliResult<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(std::io::BufReader::new(file), label_column)
        .map_err(|e| CliError::io(path, e.message))
}

/// CSV text for features and labels under the given column names.
pub fn to_csv(
    names: &[String],
    label_column: &str,
    features: &[Vec<f64>],
    labels: &[usize],
) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)
        .map_err(|e| data_error(e.to_string()))?;
    for (row, y) in features.iter().zip(labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)
            .map_err(|e| data_error(e.to_string()))?;
    }
    w.into_inner().map_err(|e| data_error(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labels_anywhere() {
        let d = parse_csv("a,label,b\n1.5,0,2\n-3,1,4e-1\n".as_bytes(), "label").unwrap();
        assert_eq!(d.feature_names, vec!["a", "b"]);
        assert_eq!(d.features, vec![vec![1.5, 2.0], vec![-3.0, 0.4]]);
        assert_eq!(d.labels, Some(vec![0, 1]));
    }

    #[test]
    fn missing_label_column_is_unlabeled() {
        let d = parse_csv("a,b\n1,2\n".as_bytes(), "label").unwrap();
        assert!(d.labels.is_none());
        assert!(d.require_labels("label").is_err());
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(parse_csv("a,label\nx,0\n".as_bytes(), "label").is_err());
        assert!(parse_csv("a,label\n1,-1\n".as_bytes(), "label").is_err());
        assert!(parse_csv("a,label\n1\n".as_bytes(), "label").is_err());
        assert!(parse_csv("a,label\n".as_bytes(), "label").is_err());
        assert!(parse_csv("a,label\nNaN,0\n".as_bytes(), "label").is_err());
    }

    #[test]
    fn roundtrip() {
        let names = vec!["x1".to_string(), "x2".to_string()];
        let bytes = to_csv(&names, "y", &[vec![0.1, 2.5]], &[1]).unwrap();
        let d = parse_csv(bytes.as_slice(), "y").unwrap();
        assert_eq!(d.features, vec![vec![0.1, 2.5]]);
        assert_eq!(d.labels, Some(vec![1]));
    }
}
