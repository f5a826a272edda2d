use std::path::Path;

use crate::gdpo::ExternalScores;
use crate::imagecore::Orientation;

use super::HarnessError;

fn csv_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Csv(format!("{}: {e}", path.display()))
}

/// Rows with a fixed column set: leading string key columns followed by
/// finite numeric columns.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<(Vec<String>, Vec<f64>)>,
}

impl MetricsTable {
    pub fn new(key_columns: &[&str], value_columns: &[&str]) -> Self {
        Self {
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            value_columns: value_columns.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, keys: Vec<String>, values: Vec<f64>) -> Result<(), HarnessError> {
        if keys.len() != self.key_columns.len() || values.len() != self.value_columns.len() {
            return Err(HarnessError::Csv(format!(
                "row has {} keys and {} values, table expects {} and {}",
                keys.len(),
                values.len(),
                self.key_columns.len(),
                self.value_columns.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(HarnessError::Csv(format!("non-finite {} = {v} in row {keys:?}", self.value_columns[i])));
        }
        self.rows.push((keys, values));
        Ok(())
    }

    /// Value of `column` in the first row whose keys equal `keys`.
    pub fn get(&self, keys: &[&str], column: &str) -> Option<f64> {
        let c = self.value_columns.iter().position(|n| n == column)?;
        self.rows.iter().find(|(k, _)| k.iter().map(String::as_str).eq(keys.iter().copied())).map(|(_, v)| v[c])
    }

    pub fn column(&self, column: &str) -> Option<Vec<f64>> {
        let c = self.value_columns.iter().position(|n| n == column)?;
        Some(self.rows.iter().map(|(_, v)| v[c]).collect())
    }
}

pub fn write_rows(path: &Path, table: &MetricsTable) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(table.key_columns.iter().chain(&table.value_columns)).map_err(|e| csv_err(path, e))?;
    for (keys, values) in &table.rows {
        let record = keys.iter().cloned().chain(values.iter().map(|v| v.to_string()));
        w.write_record(record).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

/// Reads a table written by [`write_rows`]; the first `n_keys` columns are
/// keys.
pub fn read_rows(path: &Path, n_keys: usize) -> Result<MetricsTable, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    if header.len() < n_keys {
        return Err(csv_err(path, format!("header has {} columns, need at least {n_keys}", header.len())));
    }
    let mut table =
        MetricsTable { key_columns: header[..n_keys].to_vec(), value_columns: header[n_keys..].to_vec(), rows: vec![] };
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let keys = rec.iter().take(n_keys).map(String::from).collect();
        let values = rec
            .iter()
            .skip(n_keys)
            .map(|s| s.parse::<f64>().map_err(|_| csv_err(path, format!("row {}: {s:?} is not a number", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        table.push(keys, values).map_err(|e| csv_err(path, e))?;
    }
    Ok(table)
}

/// Reads `image_id,metric_id,value,orientation` rows.
pub fn load_external_scores(path: &Path) -> Result<ExternalScores, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(|s| s.trim().to_string()).collect();
    if header != ["image_id", "metric_id", "value", "orientation"] {
        return Err(csv_err(
            path,
            format!("expected header image_id,metric_id,value,orientation, got {}", header.join(",")),
        ));
    }
    let mut scores = ExternalScores::default();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = i + 2;
        let field = |k: usize| rec.get(k).map(str::trim).unwrap_or("");
        let value: f64 =
            field(2).parse().map_err(|_| csv_err(path, format!("line {row}: bad value {:?}", field(2))))?;
        let orientation = Orientation::parse(field(3))
            .ok_or_else(|| csv_err(path, format!("line {row}: unknown orientation token {:?}", field(3))))?;
        scores.insert(field(0), field(1), value, orientation).map_err(|e| csv_err(path, format!("line {row}: {e}")))?;
    }
    Ok(scores)
}

pub fn write_external_scores(path: &Path, scores: &ExternalScores) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["image_id", "metric_id", "value", "orientation"]).map_err(|e| csv_err(path, e))?;
    for (image, metric, value, orientation) in scores.iter() {
        w.write_record([image, metric, &value.to_string(), orientation.token()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}
