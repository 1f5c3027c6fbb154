//! Labelled series, dataset catalogs, "Non-X -> X" transfer pairs and
//! class-preserving subsampling.
//!
//! Parsing from disk lives in the std companion; this module only validates
//! and reshapes data already in memory.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error("series is empty")]
    Empty,
    #[error("length mismatch: {timestamps} timestamps, {values} values, {labels} labels")]
    LengthMismatch { timestamps: usize, values: usize, labels: usize },
    #[error("label {value} at index {index} is not 0 or 1")]
    NonBinaryLabel { index: usize, value: u8 },
    #[error("timestamp at index {index} is smaller than its predecessor")]
    DecreasingTimestamp { index: usize },
    #[error("value at index {index} is not finite")]
    NonFiniteValue { index: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CatalogError {
    #[error("series {series_id} belongs to dataset {found}, not {expected}")]
    DatasetMismatch { expected: String, found: String, series_id: String },
    #[error("duplicate series id {series_id} in dataset {dataset_id}")]
    DuplicateSeries { dataset_id: String, series_id: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("cannot sample from an empty input")]
    EmptyInput,
    #[error("sampling fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransferError {
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("catalog has no dataset other than the target {0}")]
    EmptySource(String),
    #[error("target dataset {0} has no series")]
    EmptyTarget(String),
    #[error("sampling fraction {fraction} for dataset {dataset_id} is outside (0, 1]")]
    InvalidFraction { dataset_id: String, fraction: f64 },
    #[error("sampling of {dataset_id}: {source}")]
    Sampling { dataset_id: String, source: SamplingError },
}

/// One univariate series with binary point labels (1 = anomaly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub dataset_id: String,
    pub series_id: String,
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
}

impl TimeSeries {
    pub fn new(
        dataset_id: impl Into<String>,
        series_id: impl Into<String>,
        timestamps: Vec<i64>,
        values: Vec<f64>,
        labels: Vec<u8>,
    ) -> Result<Self, SeriesError> {
        let ts = Self { dataset_id: dataset_id.into(), series_id: series_id.into(), timestamps, values, labels };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<(), SeriesError> {
        let (t, v, l) = (self.timestamps.len(), self.values.len(), self.labels.len());
        if t != v || v != l {
            return Err(SeriesError::LengthMismatch { timestamps: t, values: v, labels: l });
        }
        if v == 0 {
            return Err(SeriesError::Empty);
        }
        if let Some(index) = self.labels.iter().position(|&x| x > 1) {
            return Err(SeriesError::NonBinaryLabel { index, value: self.labels[index] });
        }
        if let Some(index) = self.values.iter().position(|x| !x.is_finite()) {
            return Err(SeriesError::NonFiniteValue { index });
        }
        if let Some(w) = self.timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(SeriesError::DecreasingTimestamp { index: w + 1 });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn anomaly_fraction(&self) -> f64 {
        self.anomaly_count() as f64 / self.len() as f64
    }

    pub fn point_refs(&self) -> impl Iterator<Item = PointRef> + '_ {
        let id: Arc<str> = Arc::from(self.series_id.as_str());
        (0..self.len()).map(move |index| PointRef { series_id: id.clone(), index })
    }
}

/// A point addressed by series and position within it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PointRef {
    pub series_id: Arc<str>,
    pub index: usize,
}

impl PointRef {
    pub fn new(series_id: &str, index: usize) -> Self {
        Self { series_id: Arc::from(series_id), index }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub points: usize,
    pub anomalies: usize,
    pub anomaly_fraction: f64,
    pub series_count: usize,
    pub mean_length: f64,
}

/// Datasets keyed by id; series within a dataset are kept sorted by series id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetCatalog {
    datasets: BTreeMap<String, Vec<TimeSeries>>,
}

impl DatasetCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, series: TimeSeries) -> Result<(), CatalogError> {
        let list = self.datasets.entry(series.dataset_id.clone()).or_default();
        match list.binary_search_by(|s| s.series_id.cmp(&series.series_id)) {
            Ok(_) => Err(CatalogError::DuplicateSeries {
                dataset_id: series.dataset_id,
                series_id: series.series_id,
            }),
            Err(pos) => {
                list.insert(pos, series);
                Ok(())
            }
        }
    }

    /// Adds a whole dataset, checking every series carries `dataset_id`.
    pub fn insert_dataset(&mut self, dataset_id: &str, series: Vec<TimeSeries>) -> Result<(), CatalogError> {
        for s in series {
            if s.dataset_id != dataset_id {
                return Err(CatalogError::DatasetMismatch {
                    expected: dataset_id.into(),
                    found: s.dataset_id,
                    series_id: s.series_id,
                });
            }
            self.insert(s)?;
        }
        Ok(())
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    pub fn get(&self, dataset_id: &str) -> Option<&[TimeSeries]> {
        self.datasets.get(dataset_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn summary(&self) -> Vec<DatasetSummary> {
        self.datasets.iter().map(|(id, series)| summarize(id, series)).collect()
    }
}

pub fn summarize(dataset_id: &str, series: &[TimeSeries]) -> DatasetSummary {
    let points: usize = series.iter().map(TimeSeries::len).sum();
    let anomalies: usize = series.iter().map(TimeSeries::anomaly_count).sum();
    DatasetSummary {
        dataset_id: dataset_id.into(),
        points,
        anomalies,
        anomaly_fraction: if points == 0 { 0.0 } else { anomalies as f64 / points as f64 },
        series_count: series.len(),
        mean_length: if series.is_empty() { 0.0 } else { points as f64 / series.len() as f64 },
    }
}

fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Indices (ascending) of a class-preserving sample of `labels`.
///
/// Each class contributes `round(fraction * n_class)` points, rounding half
/// up; the majority class is then trimmed or padded so the total is exactly
/// `round(fraction * n)`.
pub fn stratified_indices(labels: &[u8], fraction: f64, seed: u64) -> Result<Vec<usize>, SamplingError> {
    if labels.is_empty() {
        return Err(SamplingError::EmptyInput);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SamplingError::InvalidFraction(fraction));
    }
    let n = labels.len();
    if fraction == 1.0 {
        return Ok((0..n).collect());
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[usize::from(l != 0)].push(i);
    }
    let (major, minor) = if by_class[1].len() > by_class[0].len() { (1, 0) } else { (0, 1) };
    let total = round_half_up(fraction * n as f64).min(n);
    let mut take_minor = round_half_up(fraction * by_class[minor].len() as f64).min(by_class[minor].len());
    let mut take_major = total.saturating_sub(take_minor);
    if take_major > by_class[major].len() {
        take_major = by_class[major].len();
        take_minor = total - take_major;
    }

    let mut rng = rng_from_seed(seed);
    let mut chosen = Vec::with_capacity(total);
    let mut takes = [0usize; 2];
    takes[major] = take_major;
    takes[minor] = take_minor;
    for (class, members) in by_class.iter_mut().enumerate() {
        let (picked, _) = members.partial_shuffle(&mut rng, takes[class]);
        chosen.extend_from_slice(picked);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Class-preserving sample of labelled points; output keeps input order.
pub fn stratified_sample(
    points: &[(PointRef, u8)],
    fraction: f64,
    seed: u64,
) -> Result<Vec<(PointRef, u8)>, SamplingError> {
    let labels: Vec<u8> = points.iter().map(|(_, l)| *l).collect();
    let idx = stratified_indices(&labels, fraction, seed)?;
    Ok(idx.into_iter().map(|i| points[i].clone()).collect())
}

/// Seed used to subsample one source dataset. Shared by series- and
/// feature-level pair construction so both pick the same points.
pub fn source_sampling_seed(seed: u64, dataset_id: &str) -> u64 {
    derive_seed(seed, &format!("source-sample/{dataset_id}"), 0)
}

/// A source series with the subset of point indices retained after sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSeries {
    pub series: TimeSeries,
    /// Ascending positions within `series` that belong to the source set.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferPair {
    pub target_id: String,
    pub target: Vec<TimeSeries>,
    pub source: Vec<SourceSeries>,
    /// Fraction applied to each source dataset (1.0 when not configured).
    pub source_sampling: BTreeMap<String, f64>,
}

impl TransferPair {
    pub fn source_point_count(&self) -> usize {
        self.source.iter().map(|s| s.kept.len()).sum()
    }
}

/// Checks a configured fraction and returns the one to use for `dataset_id`.
pub fn sampling_fraction(sampling: &BTreeMap<String, f64>, dataset_id: &str) -> Result<f64, TransferError> {
    let fraction = sampling.get(dataset_id).copied().unwrap_or(1.0);
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TransferError::InvalidFraction { dataset_id: dataset_id.into(), fraction });
    }
    Ok(fraction)
}

/// Target = `catalog[target_id]`; source = every other dataset, each
/// subsampled per `sampling` (missing entries mean 1.0).
pub fn build_transfer_pair(
    catalog: &DatasetCatalog,
    target_id: &str,
    sampling: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<TransferPair, TransferError> {
    let target = catalog.get(target_id).ok_or_else(|| TransferError::UnknownDataset(target_id.into()))?;
    if target.is_empty() {
        return Err(TransferError::EmptyTarget(target_id.into()));
    }
    let mut source = Vec::new();
    let mut applied = BTreeMap::new();
    for id in catalog.dataset_ids().filter(|id| *id != target_id) {
        let fraction = sampling_fraction(sampling, id)?;
        applied.insert(String::from(id), fraction);
        let series = catalog.get(id).unwrap_or_default();
        if fraction == 1.0 {
            source.extend(series.iter().map(|s| SourceSeries { series: s.clone(), kept: (0..s.len()).collect() }));
            continue;
        }
        let labels: Vec<u8> = series.iter().flat_map(|s| s.labels.iter().copied()).collect();
        let picked = stratified_indices(&labels, fraction, source_sampling_seed(seed, id))
            .map_err(|source| TransferError::Sampling { dataset_id: id.into(), source })?;
        let mut cursor = picked.into_iter().peekable();
        let mut offset = 0;
        for s in series {
            let end = offset + s.len();
            let mut kept = Vec::new();
            while let Some(&i) = cursor.peek() {
                if i >= end {
                    break;
                }
                kept.push(i - offset);
                cursor.next();
            }
            if !kept.is_empty() {
                source.push(SourceSeries { series: s.clone(), kept });
            }
            offset = end;
        }
    }
    if applied.is_empty() {
        return Err(TransferError::EmptySource(target_id.into()));
    }
    Ok(TransferPair { target_id: target_id.into(), target: target.to_vec(), source, source_sampling: applied })
}
