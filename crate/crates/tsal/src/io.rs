//! On-disk formats: series CSVs, catalog directories, feature CSVs.
//!
//! Row numbers in errors count data rows from 1 (the header is not counted).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tsal_core::features::{feature_codes, FeatureMatrix};
use tsal_core::ingest::{CatalogError, DatasetCatalog, PointRef, TimeSeries};
use tsal_core::{Matrix, N_FEATURES};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: label `{value}` is not 0 or 1")]
    NonBinaryLabel { path: PathBuf, row: usize, value: String },
    #[error("{path}: row {row}: `{value}` in column `{column}` is not a finite number")]
    NonNumericValue { path: PathBuf, row: usize, column: String, value: String },
    #[error("{path}: row {row}: timestamp decreases")]
    DecreasingTimestamp { path: PathBuf, row: usize },
    #[error("{path}: no data rows")]
    EmptySeries { path: PathBuf },
    #[error("{path}: expected {expected} feature columns, found {found}")]
    ColumnCountMismatch { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: row {row}: non-finite value in column `{column}`")]
    NonFiniteValue { path: PathBuf, row: usize, column: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv { path: path.to_path_buf(), source }
}

fn column(headers: &csv::StringRecord, path: &Path, names: &[&str]) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| names.contains(&h.trim()))
        .ok_or_else(|| DataError::MissingColumn { path: path.to_path_buf(), column: names[0].into() })
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_label(path: &Path, row: usize, raw: &str) -> Result<u8, DataError> {
    match raw {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(DataError::NonBinaryLabel { path: path.to_path_buf(), row, value: raw.into() }),
    }
}

fn parse_finite(path: &Path, row: usize, column: &str, raw: &str) -> Result<f64, DataError> {
    raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::NonNumericValue {
        path: path.to_path_buf(),
        row,
        column: column.into(),
        value: raw.into(),
    })
}

/// Reads one `timestamp,value,is_anomaly` CSV; the series id is the file stem.
pub fn parse_series(path: &Path, dataset_id: &str) -> Result<TimeSeries, DataError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let ti = column(&headers, path, &["timestamp"])?;
    let vi = column(&headers, path, &["value"])?;
    let li = column(&headers, path, &["is_anomaly"])?;
    let (mut timestamps, mut values, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(csv_err(path))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let t: i64 = field(ti).parse().map_err(|_| DataError::NonNumericValue {
            path: path.to_path_buf(),
            row,
            column: "timestamp".into(),
            value: field(ti).into(),
        })?;
        if timestamps.last().is_some_and(|&prev| t < prev) {
            return Err(DataError::DecreasingTimestamp { path: path.to_path_buf(), row });
        }
        timestamps.push(t);
        values.push(parse_finite(path, row, "value", field(vi))?);
        labels.push(parse_label(path, row, field(li))?);
    }
    if values.is_empty() {
        return Err(DataError::EmptySeries { path: path.to_path_buf() });
    }
    let series_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    TimeSeries::new(dataset_id, series_id, timestamps, values, labels)
        .map_err(|e| DataError::Invalid { path: path.to_path_buf(), message: e.to_string() })
}

/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_series(series: &TimeSeries, path: &Path) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut out = String::with_capacity(series.len() * 24);
    out.push_str("timestamp,value,is_anomaly\n");
    for i in 0..series.len() {
        out.push_str(&format!("{},{},{}\n", series.timestamps[i], series.values[i], series.labels[i]));
    }
    fs::write(path, out).map_err(io_err(path))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    entries.sort();
    Ok(entries)
}

/// Dataset ids (sub-directory names) under a catalog root.
pub fn dataset_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>, DataError> {
    Ok(sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect())
}

/// Loads `<root>/<dataset_id>/<series_id>.csv`. `only` restricts the datasets
/// read; files are parsed in parallel and merged in sorted order.
pub fn load_catalog(root: &Path, only: Option<&[String]>) -> Result<DatasetCatalog, DataError> {
    let mut catalog = DatasetCatalog::new();
    for (id, dir) in dataset_dirs(root)? {
        if only.is_some_and(|o| !o.iter().any(|x| x == &id)) {
            continue;
        }
        let files: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
            .collect();
        let series = files.par_iter().map(|f| parse_series(f, &id)).collect::<Result<Vec<_>, _>>()?;
        if !series.is_empty() {
            catalog.insert_dataset(&id, series)?;
        }
    }
    Ok(catalog)
}

pub fn write_catalog(catalog: &DatasetCatalog, root: &Path) -> Result<(), DataError> {
    for id in catalog.dataset_ids() {
        for s in catalog.get(id).unwrap_or_default() {
            write_series(s, &root.join(id).join(format!("{}.csv", s.series_id)))?;
        }
    }
    Ok(())
}

pub fn catalog_summary_json(catalog: &DatasetCatalog) -> String {
    serde_json::to_string_pretty(&catalog.summary()).expect("summary serializes")
}

/// `series_id,index,label,<feature columns>`.
pub fn write_features(features: &FeatureMatrix, path: &Path) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    let mut line = String::from("series_id,index,label");
    for c in &features.columns {
        line.push(',');
        line.push_str(c);
    }
    writeln!(w, "{line}").map_err(io_err(path))?;
    for (i, r) in features.refs.iter().enumerate() {
        line.clear();
        line.push_str(&format!("{},{},{}", r.series_id, r.index, features.labels[i]));
        for v in features.data.row(i) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a feature CSV written by [`write_features`] or produced externally
/// (for example with a reference catch22 implementation). Any 24 columns other
/// than `series_id,index,label` are taken as features, in file order.
pub fn load_precomputed(path: &Path) -> Result<FeatureMatrix, DataError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let si = column(&headers, path, &["series_id"])?;
    let ii = column(&headers, path, &["index"])?;
    let li = column(&headers, path, &["label"])?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|c| ![si, ii, li].contains(c)).collect();
    if feature_cols.len() != N_FEATURES {
        return Err(DataError::ColumnCountMismatch {
            path: path.to_path_buf(),
            expected: N_FEATURES,
            found: feature_cols.len(),
        });
    }
    let columns: Vec<String> = feature_cols.iter().map(|&c| headers[c].to_string()).collect();
    let mut refs = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(csv_err(path))?;
        let index: usize = record[ii].parse().map_err(|_| DataError::NonNumericValue {
            path: path.to_path_buf(),
            row,
            column: "index".into(),
            value: record[ii].into(),
        })?;
        refs.push(PointRef::new(&record[si], index));
        labels.push(parse_label(path, row, &record[li])?);
        for (&c, name) in feature_cols.iter().zip(&columns) {
            let raw = &record[c];
            let v: f64 = raw.parse().map_err(|_| DataError::NonNumericValue {
                path: path.to_path_buf(),
                row,
                column: name.clone(),
                value: raw.into(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue { path: path.to_path_buf(), row, column: name.clone() });
            }
            data.push(v);
        }
    }
    let n = refs.len();
    let matrix = Matrix::from_vec(n, N_FEATURES, data).expect("row width checked");
    FeatureMatrix::new(refs, columns, matrix, labels, None)
        .map_err(|e| DataError::Invalid { path: path.to_path_buf(), message: e.to_string() })
}

/// Loads every `<dir>/<dataset_id>.csv` feature file.
pub fn load_precomputed_dir(dir: &Path) -> Result<Vec<(String, FeatureMatrix)>, DataError> {
    sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            load_precomputed(&p).map(|fm| (id, fm))
        })
        .collect()
}

/// Checks that a loaded matrix carries the built-in column codes.
pub fn has_builtin_columns(features: &FeatureMatrix) -> bool {
    features.columns == feature_codes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s1.csv", "timestamp,value,is_anomaly\n1,0.5,0\n2,1.5,1\n2,-3,0\n");
        let s = parse_series(&p, "d").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.series_id, "s1");
        assert!((s.anomaly_fraction() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn schema_errors_carry_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "timestamp,value,is_anomaly\n1,1,0\n2,1,0\n3,1,0\n4,1,1\n5,1,2\n");
        assert!(matches!(parse_series(&p, "d"), Err(DataError::NonBinaryLabel { row: 5, .. })));
        let p = write(dir.path(), "b.csv", "timestamp,value\n1,1\n");
        assert!(matches!(parse_series(&p, "d"), Err(DataError::MissingColumn { column, .. }) if column == "is_anomaly"));
        let p = write(dir.path(), "c.csv", "timestamp,value,is_anomaly\n1,1,0\n2,abc,0\n");
        assert!(matches!(parse_series(&p, "d"), Err(DataError::NonNumericValue { row: 2, .. })));
        let p = write(dir.path(), "e.csv", "timestamp,value,is_anomaly\n5,1,0\n4,1,0\n");
        assert!(matches!(parse_series(&p, "d"), Err(DataError::DecreasingTimestamp { row: 2, .. })));
        let p = write(dir.path(), "f.csv", "timestamp,value,is_anomaly\n1,nan,0\n");
        assert!(matches!(parse_series(&p, "d"), Err(DataError::NonNumericValue { row: 1, .. })));
    }

    #[test]
    fn feature_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut header = String::from("series_id,index,label");
        for c in feature_codes().iter().take(23) {
            header.push(',');
            header.push_str(c);
        }
        let p = write(dir.path(), "x.csv", &format!("{header}\n"));
        assert!(matches!(load_precomputed(&p), Err(DataError::ColumnCountMismatch { found: 23, .. })));
        let header = format!("{header},f24");
        let mut row = String::from("s,0,0");
        for j in 0..24 {
            row.push_str(if j == 7 { ",NaN" } else { ",1.0" });
        }
        let p = write(dir.path(), "y.csv", &format!("{header}\ns,0,0{}\n{row}\n", ",0".repeat(24)));
        assert!(matches!(load_precomputed(&p), Err(DataError::NonFiniteValue { row: 2, column, .. }) if column == "f08"));
    }
}
