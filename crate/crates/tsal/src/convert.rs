//! Converters from public benchmark layouts to the canonical series CSV.
//!
//! NAB: `data/<category>/<name>.csv` with `timestamp,value` (timestamps as
//! `YYYY-MM-DD HH:MM:SS`), labels from `combined_labels.json` (anomalous
//! timestamps) or `combined_windows.json` (`[start, end]` windows, every point
//! inside is labelled 1), keyed by `<category>/<name>.csv`.
//!
//! Yahoo S5: `timestamp|timestamps,value,is_anomaly|anomaly` plus extra columns.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use tsal_core::ingest::TimeSeries;

use crate::io::{write_series, DataError};

const NAB_TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

fn invalid(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Invalid { path: path.to_path_buf(), message: message.into() }
}

fn nab_time(path: &Path, raw: &str) -> Result<i64, DataError> {
    let raw = raw.trim();
    let t = NaiveDateTime::parse_from_str(raw, NAB_TIME_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S%.f"))
        .map_err(|_| invalid(path, format!("bad timestamp `{raw}`")))?;
    Ok(t.and_utc().timestamp())
}

#[derive(Debug, Clone, PartialEq)]
pub enum NabLabels {
    Points(Vec<i64>),
    Windows(Vec<(i64, i64)>),
}

/// Parses a NAB label file into per-file label sets.
pub fn read_nab_labels(path: &Path) -> Result<BTreeMap<String, NabLabels>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let raw: BTreeMap<String, Vec<serde_json::Value>> =
        serde_json::from_str(&text).map_err(|e| invalid(path, e.to_string()))?;
    let mut out = BTreeMap::new();
    for (key, entries) in raw {
        let labels = if entries.iter().all(|e| e.is_string()) {
            NabLabels::Points(entries.iter().map(|e| nab_time(path, e.as_str().unwrap_or(""))).collect::<Result<_, _>>()?)
        } else {
            let windows = entries
                .iter()
                .map(|e| match e.as_array().map(|a| a.as_slice()) {
                    Some([a, b]) => Ok((nab_time(path, a.as_str().unwrap_or(""))?, nab_time(path, b.as_str().unwrap_or(""))?)),
                    _ => Err(invalid(path, format!("bad window entry for {key}"))),
                })
                .collect::<Result<_, _>>()?;
            NabLabels::Windows(windows)
        };
        out.insert(key, labels);
    }
    Ok(out)
}

/// Converts one NAB data file. Files without an entry in `labels` are all-normal.
pub fn convert_nab_file(path: &Path, dataset_id: &str, labels: Option<&NabLabels>) -> Result<TimeSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| DataError::Csv { path: path.to_path_buf(), source })?;
    let (mut timestamps, mut values) = (Vec::new(), Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|source| DataError::Csv { path: path.to_path_buf(), source })?;
        timestamps.push(nab_time(path, record.get(0).unwrap_or(""))?);
        let raw = record.get(1).unwrap_or("");
        values.push(raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::NonNumericValue {
            path: path.to_path_buf(),
            row: r + 1,
            column: "value".into(),
            value: raw.into(),
        })?);
    }
    let flags = timestamps
        .iter()
        .map(|&t| {
            u8::from(match labels {
                Some(NabLabels::Points(p)) => p.contains(&t),
                Some(NabLabels::Windows(w)) => w.iter().any(|&(a, b)| a <= t && t <= b),
                None => false,
            })
        })
        .collect();
    let series_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    TimeSeries::new(dataset_id, series_id, timestamps, values, flags).map_err(|e| invalid(path, e.to_string()))
}

/// Converts every CSV in `<nab_root>/data/<category>` into `<out>/<dataset_id>/`.
pub fn convert_nab(
    nab_root: &Path,
    category: &str,
    labels_file: &Path,
    dataset_id: &str,
    out: &Path,
) -> Result<usize, DataError> {
    let labels = read_nab_labels(labels_file)?;
    let dir = nab_root.join("data").join(category);
    let mut written = 0;
    for path in csv_files(&dir)? {
        let key = format!("{category}/{}", path.file_name().unwrap_or_default().to_string_lossy());
        let series = convert_nab_file(&path, dataset_id, labels.get(&key))?;
        write_series(&series, &out.join(dataset_id).join(format!("{}.csv", series.series_id)))?;
        written += 1;
    }
    Ok(written)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn convert_yahoo_file(path: &Path, dataset_id: &str) -> Result<TimeSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| DataError::Csv { path: path.to_path_buf(), source })?;
    let headers = rdr.headers().map_err(|source| DataError::Csv { path: path.to_path_buf(), source })?.clone();
    let find = |names: &[&str]| {
        headers.iter().position(|h| names.contains(&h)).ok_or_else(|| DataError::MissingColumn {
            path: path.to_path_buf(),
            column: names[0].into(),
        })
    };
    let (ti, vi, li) = (find(&["timestamp", "timestamps"])?, find(&["value"])?, find(&["is_anomaly", "anomaly"])?);
    let (mut timestamps, mut values, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|source| DataError::Csv { path: path.to_path_buf(), source })?;
        let row = r + 1;
        let bad = |column: &str, value: &str| DataError::NonNumericValue {
            path: path.to_path_buf(),
            row,
            column: column.into(),
            value: value.into(),
        };
        let t = &record[ti];
        timestamps.push(t.parse::<f64>().map_err(|_| bad("timestamp", t))? as i64);
        let v = &record[vi];
        values.push(v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("value", v))?);
        let l = &record[li];
        labels.push(match l.parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => return Err(DataError::NonBinaryLabel { path: path.to_path_buf(), row, value: l.into() }),
        });
    }
    let series_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    TimeSeries::new(dataset_id, series_id, timestamps, values, labels).map_err(|e| invalid(path, e.to_string()))
}

/// Converts every CSV in `input` (one Yahoo benchmark directory).
pub fn convert_yahoo(input: &Path, dataset_id: &str, out: &Path) -> Result<usize, DataError> {
    let mut written = 0;
    for path in csv_files(input)? {
        let series = convert_yahoo_file(&path, dataset_id)?;
        write_series(&series, &out.join(dataset_id).join(format!("{}.csv", series.series_id)))?;
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nab_windows_and_points() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data/realAWSCloudwatch");
        fs::create_dir_all(&data).unwrap();
        fs::write(
            data.join("cpu.csv"),
            "timestamp,value\n2014-02-14 14:30:00,1.0\n2014-02-14 14:35:00,2.0\n2014-02-14 14:40:00,9.0\n2014-02-14 14:45:00,1.5\n",
        )
        .unwrap();
        let windows = dir.path().join("windows.json");
        fs::write(&windows, r#"{"realAWSCloudwatch/cpu.csv": [["2014-02-14 14:35:00.000000", "2014-02-14 14:40:00.000000"]]}"#)
            .unwrap();
        let out = dir.path().join("out");
        assert_eq!(convert_nab(dir.path(), "realAWSCloudwatch", &windows, "aws", &out).unwrap(), 1);
        let s = crate::io::parse_series(&out.join("aws/cpu.csv"), "aws").unwrap();
        assert_eq!(s.labels, [0, 1, 1, 0]);
        assert_eq!(s.timestamps[1] - s.timestamps[0], 300);

        let points = dir.path().join("points.json");
        fs::write(&points, r#"{"realAWSCloudwatch/cpu.csv": ["2014-02-14 14:40:00"]}"#).unwrap();
        convert_nab(dir.path(), "realAWSCloudwatch", &points, "aws", &out).unwrap();
        let s = crate::io::parse_series(&out.join("aws/cpu.csv"), "aws").unwrap();
        assert_eq!(s.labels, [0, 0, 1, 0]);
    }

    #[test]
    fn yahoo_variants() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("A3");
        fs::create_dir_all(&input).unwrap();
        fs::write(input.join("A3_1.csv"), "timestamps,value,anomaly,changepoint,trend\n1,0.5,0,0,1\n2,3.5,1,0,1\n").unwrap();
        let out = dir.path().join("out");
        convert_yahoo(&input, "yahoo-a3", &out).unwrap();
        let s = crate::io::parse_series(&out.join("yahoo-a3/A3_1.csv"), "yahoo-a3").unwrap();
        assert_eq!(s.labels, [0, 1]);
        assert_eq!(s.values, [0.5, 3.5]);
    }
}
