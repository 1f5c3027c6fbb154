//! Per-point feature vectors computed on a trailing window.
//!
//! Row `i` of a series' feature matrix is computed from the `w` values ending
//! at position `i`. Windows that would start before the series are
//! left-padded with the first observed value, so every point gets exactly
//! one row and no row looks at later points.
//!
//! The 24 columns (`f01`..`f24`) are:
//!
//! | code | name | behaviour under `a*x + c`, `a > 0` |
//! |------|------|------------------------------------|
//! | f01 | mean | location |
//! | f02 | standard deviation (population) | scale |
//! | f03 | minimum | location |
//! | f04 | maximum | location |
//! | f05 | skewness | invariant |
//! | f06 | excess kurtosis | invariant |
//! | f07 | lag-1 autocorrelation | invariant |
//! | f08 | lag-2 autocorrelation | invariant |
//! | f09 | lag-3 autocorrelation | invariant |
//! | f10 | first lag where the ACF drops to <= 0 | invariant |
//! | f11 | mean-crossing count | invariant |
//! | f12 | longest run above the mean | invariant |
//! | f13 | longest run below the mean | invariant |
//! | f14 | least-squares slope (per sample) | scale |
//! | f15 | residual std of the linear fit | scale |
//! | f16 | fraction of successive differences > 0 | invariant |
//! | f17 | mean absolute successive difference | scale |
//! | f18 | max absolute successive difference | scale |
//! | f19 | 10th percentile | location |
//! | f20 | 90th percentile | location |
//! | f21 | interquartile range | scale |
//! | f22 | periodogram spectral centroid (cycles/sample) | invariant |
//! | f23 | fraction of spectral power below 1/4 Nyquist | invariant |
//! | f24 | Shannon entropy of a 10-bin value histogram (nats) | invariant |
//!
//! Lag-k autocorrelations are the Pearson correlation between the window and
//! its k-shifted copy. On a constant window (or a constant lagged segment)
//! every correlation, spectral and entropy feature is 0, as are all
//! dispersion features.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ingest::{PointRef, TimeSeries};
use crate::matrix::Matrix;
use crate::N_FEATURES;

pub const DEFAULT_WINDOW: usize = 32;
pub const MIN_WINDOW: usize = 8;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "mean",
    "std",
    "min",
    "max",
    "skewness",
    "kurtosis",
    "acf_lag1",
    "acf_lag2",
    "acf_lag3",
    "acf_first_zero",
    "mean_crossings",
    "longest_run_above_mean",
    "longest_run_below_mean",
    "trend_slope",
    "trend_residual_std",
    "frac_diffs_positive",
    "mean_abs_diff",
    "max_abs_diff",
    "p10",
    "p90",
    "iqr",
    "spectral_centroid",
    "low_freq_power_frac",
    "histogram_entropy",
];

/// How a feature responds to `x -> a*x + c` with `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equivariance {
    /// `f -> a*f + c`
    Location,
    /// `f -> a*f`
    Scale,
    /// `f -> f`
    Invariant,
}

pub const FEATURE_EQUIVARIANCE: [Equivariance; N_FEATURES] = {
    use Equivariance::*;
    [
        Location, Scale, Location, Location, Invariant, Invariant, Invariant, Invariant, Invariant, Invariant,
        Invariant, Invariant, Invariant, Scale, Scale, Invariant, Scale, Scale, Location, Location, Scale,
        Invariant, Invariant, Invariant,
    ]
};

pub fn feature_codes() -> Vec<String> {
    (1..=N_FEATURES).map(|i| format!("f{i:02}")).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("window length {0} is below the minimum of {MIN_WINDOW}")]
    WindowTooSmall(usize),
    #[error("series is empty")]
    EmptySeries,
    #[error("expected {expected} feature columns, found {found}")]
    ColumnCountMismatch { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: String },
    #[error("refs, rows and labels disagree in length ({refs}, {rows}, {labels})")]
    LengthMismatch { refs: usize, rows: usize, labels: usize },
    #[error("duplicate column name {0}")]
    DuplicateColumn(String),
    #[error("label {value} at row {row} is not 0 or 1")]
    NonBinaryLabel { row: usize, value: u8 },
}

/// Feature rows aligned with the points they describe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub refs: Vec<PointRef>,
    pub columns: Vec<String>,
    pub data: Matrix,
    pub labels: Vec<u8>,
    /// `None` for imported matrices whose window is unknown.
    pub window_length: Option<usize>,
}

impl FeatureMatrix {
    pub fn new(
        refs: Vec<PointRef>,
        columns: Vec<String>,
        data: Matrix,
        labels: Vec<u8>,
        window_length: Option<usize>,
    ) -> Result<Self, FeatureError> {
        if data.cols() != columns.len() {
            return Err(FeatureError::ColumnCountMismatch { expected: columns.len(), found: data.cols() });
        }
        if refs.len() != data.rows() || labels.len() != data.rows() {
            return Err(FeatureError::LengthMismatch { refs: refs.len(), rows: data.rows(), labels: labels.len() });
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(FeatureError::DuplicateColumn(c.clone()));
            }
        }
        for (row, r) in data.iter_rows().enumerate() {
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(FeatureError::NonFiniteValue { row, column: columns[j].clone() });
            }
        }
        if let Some(row) = labels.iter().position(|&l| l > 1) {
            return Err(FeatureError::NonBinaryLabel { row, value: labels[row] });
        }
        Ok(Self { refs, columns, data, labels, window_length })
    }

    pub fn empty(columns: Vec<String>, window_length: Option<usize>) -> Self {
        let d = columns.len();
        Self { refs: Vec::new(), columns, data: Matrix::zeros(0, d), labels: Vec::new(), window_length }
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            refs: rows.iter().map(|&i| self.refs[i].clone()).collect(),
            columns: self.columns.clone(),
            data: self.data.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            window_length: self.window_length,
        }
    }

    /// Stacks matrices with identical columns, preserving order.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<Self, FeatureError> {
        let Some(first) = parts.first() else {
            return Ok(Self::empty(feature_codes(), None));
        };
        let d = first.columns.len();
        let total: usize = parts.iter().map(Self::len).sum();
        let mut data = Vec::with_capacity(total * d);
        let mut refs = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        for p in parts {
            if p.columns != first.columns {
                return Err(FeatureError::ColumnCountMismatch { expected: d, found: p.columns.len() });
            }
            data.extend_from_slice(p.data.as_slice());
            refs.extend(p.refs.iter().cloned());
            labels.extend_from_slice(&p.labels);
        }
        let window = if parts.iter().all(|p| p.window_length == first.window_length) { first.window_length } else { None };
        Ok(Self {
            refs,
            columns: first.columns.clone(),
            data: Matrix::from_vec(total, d, data).expect("row-major buffer sized from parts"),
            labels,
            window_length: window,
        })
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// DFT basis for the non-DC frequencies `k = 1..=w/2`.
struct Spectral {
    w: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Spectral {
    fn new(w: usize) -> Self {
        let half = w / 2;
        let mut cos = Vec::with_capacity(half * w);
        let mut sin = Vec::with_capacity(half * w);
        for k in 1..=half {
            for t in 0..w {
                let angle = core::f64::consts::TAU * ((k * t) % w) as f64 / w as f64;
                cos.push(libm::cos(angle));
                sin.push(libm::sin(angle));
            }
        }
        Self { w, cos, sin }
    }

    /// (centroid, low-frequency power fraction) of the centered window.
    fn summarize(&self, centered: &[f64]) -> (f64, f64) {
        let w = self.w;
        let mut total = 0.0;
        let mut weighted = 0.0;
        let mut low = 0.0;
        for k in 1..=w / 2 {
            let c = &self.cos[(k - 1) * w..k * w];
            let s = &self.sin[(k - 1) * w..k * w];
            let mut re = 0.0;
            let mut im = 0.0;
            for ((d, cv), sv) in centered.iter().zip(c).zip(s) {
                re += d * cv;
                im += d * sv;
            }
            let power = re * re + im * im;
            let freq = k as f64 / w as f64;
            total += power;
            weighted += freq * power;
            if freq < 0.125 {
                low += power;
            }
        }
        if total > 0.0 {
            (weighted / total, low / total)
        } else {
            (0.0, 0.0)
        }
    }
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if is_constant(a) || is_constant(b) {
        return 0.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0)
}

/// Linear-interpolated quantile of sorted data (numpy's default rule).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn longest_run(x: &[f64], pred: impl Fn(f64) -> bool) -> usize {
    let mut best = 0;
    let mut cur = 0;
    for &v in x {
        if pred(v) {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

fn window_features(x: &[f64], spectral: &Spectral, centered: &mut Vec<f64>, sorted: &mut Vec<f64>) -> [f64; N_FEATURES] {
    let w = x.len();
    let n = w as f64;
    let mut f = [0.0; N_FEATURES];

    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        f[0] = x[0];
        f[2] = x[0];
        f[3] = x[0];
        f[18] = x[0];
        f[19] = x[0];
        return f;
    }

    let mean = x.iter().sum::<f64>() / n;
    centered.clear();
    centered.extend(x.iter().map(|v| v - mean));
    let m2 = centered.iter().map(|d| d * d).sum::<f64>() / n;
    let m3 = centered.iter().map(|d| d * d * d).sum::<f64>() / n;
    let m4 = centered.iter().map(|d| (d * d) * (d * d)).sum::<f64>() / n;

    f[0] = mean;
    f[1] = libm::sqrt(m2);
    f[2] = min;
    f[3] = max;
    if m2 > 0.0 {
        f[4] = m3 / libm::pow(m2, 1.5);
        f[5] = m4 / (m2 * m2) - 3.0;
    }
    for lag in 1..=3 {
        f[5 + lag] = pearson(&x[..w - lag], &x[lag..]);
    }

    let denom: f64 = centered.iter().map(|d| d * d).sum();
    let mut zero_lag = w;
    for lag in 1..w {
        let r: f64 = centered[..w - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / denom;
        if r <= 0.0 {
            zero_lag = lag;
            break;
        }
    }
    f[9] = zero_lag as f64;

    f[10] = x.windows(2).filter(|p| (p[0] > mean) != (p[1] > mean)).count() as f64;
    f[11] = longest_run(x, |v| v > mean) as f64;
    f[12] = longest_run(x, |v| v < mean) as f64;

    let t_mean = (n - 1.0) / 2.0;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (t, d) in centered.iter().enumerate() {
        let dt = t as f64 - t_mean;
        stt += dt * dt;
        sty += dt * d;
    }
    let slope = sty / stt;
    f[13] = slope;
    let rss: f64 = centered
        .iter()
        .enumerate()
        .map(|(t, d)| {
            let r = d - slope * (t as f64 - t_mean);
            r * r
        })
        .sum();
    f[14] = libm::sqrt(rss / n);

    let mut positive = 0usize;
    let mut abs_sum = 0.0;
    let mut abs_max = 0.0_f64;
    for p in x.windows(2) {
        let d = p[1] - p[0];
        if d > 0.0 {
            positive += 1;
        }
        abs_sum += d.abs();
        abs_max = abs_max.max(d.abs());
    }
    f[15] = positive as f64 / (n - 1.0);
    f[16] = abs_sum / (n - 1.0);
    f[17] = abs_max;

    sorted.clear();
    sorted.extend_from_slice(x);
    sorted.sort_unstable_by(f64::total_cmp);
    f[18] = quantile(sorted, 0.10);
    f[19] = quantile(sorted, 0.90);
    f[20] = quantile(sorted, 0.75) - quantile(sorted, 0.25);

    let (centroid, low) = spectral.summarize(centered);
    f[21] = centroid;
    f[22] = low;

    let mut bins = [0usize; 10];
    let span = max - min;
    for &v in x {
        let b = libm::floor((v - min) / span * 10.0);
        let b = if b < 0.0 { 0 } else { (b as usize).min(9) };
        bins[b] += 1;
    }
    f[23] = -bins
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * libm::log(p)
        })
        .sum::<f64>();
    f
}

/// One feature row per point of `series`.
pub fn extract(series: &TimeSeries, window: usize) -> Result<FeatureMatrix, FeatureError> {
    if window < MIN_WINDOW {
        return Err(FeatureError::WindowTooSmall(window));
    }
    if series.is_empty() {
        return Err(FeatureError::EmptySeries);
    }
    let values = &series.values;
    let n = values.len();
    let spectral = Spectral::new(window);
    let mut buf = vec![values[0]; window];
    let mut centered = Vec::with_capacity(window);
    let mut sorted = Vec::with_capacity(window);
    let mut data = Vec::with_capacity(n * N_FEATURES);
    for i in 0..n {
        // window covers positions i+1-window ..= i
        for (j, slot) in buf.iter_mut().enumerate() {
            let src = (i + j + 1) as isize - window as isize;
            *slot = if src < 0 { values[0] } else { values[src as usize] };
        }
        data.extend_from_slice(&window_features(&buf, &spectral, &mut centered, &mut sorted));
    }
    let data = Matrix::from_vec(n, N_FEATURES, data).expect("one row per point");
    FeatureMatrix::new(series.point_refs().collect(), feature_codes(), data, series.labels.clone(), Some(window))
}

/// Features of several series stacked in the given order.
pub fn extract_all(series: &[TimeSeries], window: usize) -> Result<FeatureMatrix, FeatureError> {
    let parts = series.iter().map(|s| extract(s, window)).collect::<Result<Vec<_>, _>>()?;
    let mut m = FeatureMatrix::concat(&parts)?;
    m.window_length = Some(window);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    fn ts(values: Vec<f64>) -> TimeSeries {
        let n = values.len();
        TimeSeries::new("d", "s", (0..n as i64).collect(), values, vec![0; n]).unwrap()
    }

    fn col(name: &str) -> usize {
        FEATURE_NAMES.iter().position(|n| *n == name).unwrap()
    }

    #[test]
    fn constant_series_is_degenerate() {
        let m = extract(&ts(vec![5.0; 50]), 16).unwrap();
        for r in m.data.iter_rows() {
            assert_eq!(r[col("mean")], 5.0);
            assert_eq!(r[col("p10")], 5.0);
            for (j, eq) in FEATURE_EQUIVARIANCE.iter().enumerate() {
                if *eq != Equivariance::Location {
                    assert_eq!(r[j], 0.0, "{}", FEATURE_NAMES[j]);
                }
            }
        }
    }

    #[test]
    fn alternating_series_lag1_is_minus_one() {
        let v: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = extract(&ts(v), 32).unwrap();
        // rows past the padded prefix see a purely alternating window
        for i in 31..100 {
            let r = m.data.row(i);
            assert!((r[col("acf_lag1")] + 1.0).abs() < 1e-9);
            assert!((r[col("acf_lag2")] - 1.0).abs() < 1e-9);
            assert_eq!(r[col("mean_crossings")], 31.0);
            assert_eq!(r[col("acf_first_zero")], 1.0);
            // all power at Nyquist
            assert!((r[col("spectral_centroid")] - 0.5).abs() < 1e-12);
            assert!(r[col("low_freq_power_frac")] < 1e-12);
        }
    }

    #[test]
    fn one_row_per_point() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        let m = extract(&ts(v), 32).unwrap();
        assert_eq!(m.len(), 100);
        assert_eq!(m.refs[42], PointRef::new("s", 42));
        assert_eq!(m.columns[0], "f01");
        assert_eq!(m.columns[23], "f24");
    }

    #[test]
    fn window_too_small() {
        assert_eq!(extract(&ts(vec![1.0; 10]), 7).unwrap_err(), FeatureError::WindowTooSmall(7));
    }

    #[test]
    fn linear_ramp_has_exact_trend() {
        let v: Vec<f64> = (0..40).map(|i| 3.0 + 0.5 * i as f64).collect();
        let m = extract(&ts(v), 16).unwrap();
        let r = m.data.row(39);
        assert!((r[col("trend_slope")] - 0.5).abs() < 1e-12);
        assert!(r[col("trend_residual_std")] < 1e-12);
        assert_eq!(r[col("frac_diffs_positive")], 1.0);
        assert!((r[col("mean_abs_diff")] - 0.5).abs() < 1e-12);
        assert_eq!(r[col("longest_run_above_mean")], 8.0);
        assert_eq!(r[col("mean_crossings")], 1.0);
        // bin counts 2,1,2,1,2,1,2,1,2,2 over 16 values
        let expected = 0.75 * 8f64.ln() + 0.25 * 16f64.ln();
        assert!((r[col("histogram_entropy")] - expected).abs() < 1e-12);
    }

    #[test]
    fn percentiles_match_numpy_rule() {
        let mut rng = rng_from_seed(5);
        let v: Vec<f64> = (0..64).map(|_| standard_normal(&mut rng)).collect();
        let m = extract(&ts(v.clone()), 20).unwrap();
        let mut w: Vec<f64> = v[44..64].to_vec();
        w.sort_by(f64::total_cmp);
        // pos = 0.1 * 19 = 1.9
        let p10 = w[1] + 0.9 * (w[2] - w[1]);
        assert!((m.data.row(63)[col("p10")] - p10).abs() < 1e-12);
    }

    #[test]
    fn names_and_codes_align() {
        assert_eq!(feature_codes().len(), FEATURE_NAMES.len());
        let mut names = FEATURE_NAMES.to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), N_FEATURES);
    }
}
