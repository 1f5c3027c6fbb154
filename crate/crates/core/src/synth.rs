//! Synthetic fixtures: labelled raw series for catalog-level runs, and a
//! feature-space cross-domain pair for fast end-to-end checks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::features::{feature_codes, FeatureMatrix};
use crate::ingest::{DatasetCatalog, PointRef, TimeSeries};
use crate::matrix::Matrix;
use crate::rng::{child_rng, derive_seed, standard_normal};
use crate::N_FEATURES;

/// Feature-space pair. The target mixes two Gaussian regimes; anomalies are
/// regime points pushed along a fixed direction. The source runs the same
/// generator on another stream, then rotates it and shifts its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairConfig {
    pub n_target: usize,
    pub n_source: usize,
    pub anomaly_rate: f64,
    /// Points per series; rows are spread over consecutive series.
    pub series_len: usize,
    /// Regime block length within a series.
    pub regime_block: usize,
    pub regime_separation: f64,
    pub anomaly_shift: f64,
    /// Givens angle (radians) applied to consecutive coordinate pairs.
    pub rotation: f64,
    pub mean_shift: f64,
    pub seed: u64,
}

impl Default for GaussianPairConfig {
    fn default() -> Self {
        Self {
            n_target: 5000,
            n_source: 5000,
            anomaly_rate: 0.03,
            series_len: 500,
            regime_block: 125,
            regime_separation: 3.0,
            anomaly_shift: 3.5,
            rotation: 0.6,
            mean_shift: 2.0,
            seed: 7,
        }
    }
}

pub struct GaussianPair {
    pub target: FeatureMatrix,
    pub source: FeatureMatrix,
}

struct Generator {
    chol: Matrix,
    means: [Vec<f64>; 2],
    anomaly_dir: Vec<f64>,
}

fn unit_vector(rng: &mut crate::rng::Rng, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

impl Generator {
    fn new(cfg: &GaussianPairConfig) -> Self {
        let d = N_FEATURES;
        let mut rng = child_rng(cfg.seed, "synth/generator", 0);
        let mut chol = Matrix::identity(d);
        for i in 0..d {
            for j in 0..=i {
                chol[(i, j)] += 0.5 * standard_normal(&mut rng) / libm::sqrt(d as f64);
            }
        }
        let dir = unit_vector(&mut rng, d);
        let means = [vec![0.0; d], dir.iter().map(|v| v * cfg.regime_separation).collect()];
        let anomaly_dir = unit_vector(&mut rng, d);
        Self { chol, means, anomaly_dir }
    }

    fn sample(&self, cfg: &GaussianPairConfig, n: usize, stream: &str) -> (Matrix, Vec<u8>) {
        let d = N_FEATURES;
        let mut rng = child_rng(cfg.seed, stream, 0);
        let n_anom = libm::round(cfg.anomaly_rate * n as f64) as usize;
        let mut labels = vec![0u8; n];
        for i in sample(&mut rng, n, n_anom.min(n)) {
            labels[i] = 1;
        }
        let mut x = Matrix::zeros(n, d);
        let mut z = vec![0.0; d];
        for (i, &label) in labels.iter().enumerate() {
            let regime = (i % cfg.series_len) / cfg.regime_block.max(1) % 2;
            z.iter_mut().for_each(|v| *v = standard_normal(&mut rng));
            let row = x.row_mut(i);
            for (r, out) in row.iter_mut().enumerate() {
                let noise: f64 = (0..=r).map(|c| self.chol[(r, c)] * z[c]).sum();
                *out = self.means[regime][r] + noise;
                if label == 1 {
                    *out += cfg.anomaly_shift * self.anomaly_dir[r];
                }
            }
        }
        (x, labels)
    }
}

fn rotate_and_shift(x: &mut Matrix, angle: f64, shift: f64) {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        for pair in row.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = c * a - s * b;
            pair[1] = s * a + c * b;
        }
        row.iter_mut().for_each(|v| *v += shift);
    }
}

fn refs_for(prefix: &str, n: usize, series_len: usize) -> Vec<PointRef> {
    (0..n).map(|i| PointRef::new(&format!("{prefix}-{:03}", i / series_len), i % series_len)).collect()
}

pub fn gaussian_pair(cfg: &GaussianPairConfig) -> GaussianPair {
    let gen = Generator::new(cfg);
    let (xt, yt) = gen.sample(cfg, cfg.n_target, "synth/target");
    let (mut xs, ys) = gen.sample(cfg, cfg.n_source, "synth/source");
    rotate_and_shift(&mut xs, cfg.rotation, cfg.mean_shift);
    let build = |prefix: &str, x: Matrix, y: Vec<u8>| {
        FeatureMatrix::new(refs_for(prefix, x.rows(), cfg.series_len), feature_codes(), x, y, None)
            .expect("generator output is finite and binary")
    };
    GaussianPair { target: build("tgt", xt, yt), source: build("src", xs, ys) }
}

/// Shape of one synthetic raw-series dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesProfile {
    pub dataset_id: String,
    pub n_series: usize,
    pub length: usize,
    pub level: f64,
    pub amplitude: f64,
    pub period: f64,
    pub noise: f64,
    /// AR(1) coefficient of the noise.
    pub phi: f64,
    pub anomaly_rate: f64,
    /// Spike size in noise standard deviations.
    pub spike: f64,
}

impl SeriesProfile {
    pub fn new(dataset_id: &str) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            n_series: 4,
            length: 400,
            level: 10.0,
            amplitude: 2.0,
            period: 48.0,
            noise: 0.5,
            phi: 0.5,
            anomaly_rate: 0.03,
            spike: 6.0,
        }
    }
}

/// Seasonal signal plus AR(1) noise with injected spikes and short level
/// shifts, labelled at the injected positions.
pub fn generate_series(profile: &SeriesProfile, series_index: usize, seed: u64) -> TimeSeries {
    let mut rng = child_rng(derive_seed(seed, &profile.dataset_id, series_index as u64), "synth/series", 0);
    let n = profile.length;
    let mut values = Vec::with_capacity(n);
    let mut labels = vec![0u8; n];
    let mut e = 0.0;
    let phase = rng.gen::<f64>() * core::f64::consts::TAU;
    for i in 0..n {
        e = profile.phi * e + profile.noise * standard_normal(&mut rng);
        let season = profile.amplitude * libm::sin(core::f64::consts::TAU * i as f64 / profile.period + phase);
        values.push(profile.level + season + e);
    }
    let n_anom = libm::round(profile.anomaly_rate * n as f64) as usize;
    let mut placed = 0;
    while placed < n_anom {
        let at = rng.gen_range(0..n);
        if rng.gen_bool(0.25) {
            let len = (n_anom - placed).min(rng.gen_range(2..6)).min(n - at);
            let shift = profile.spike * profile.noise * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for j in at..at + len {
                if labels[j] == 0 {
                    values[j] += shift * 0.6;
                    labels[j] = 1;
                    placed += 1;
                }
            }
        } else if labels[at] == 0 {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            values[at] += sign * profile.spike * profile.noise;
            labels[at] = 1;
            placed += 1;
        }
    }
    let timestamps = (0..n as i64).map(|i| 1_600_000_000 + 300 * i).collect();
    TimeSeries::new(&profile.dataset_id, format!("series-{series_index:03}"), timestamps, values, labels)
        .expect("generated series is valid")
}

/// Default family of dissimilar datasets used by tests and the `synth` command.
pub fn default_profiles(n_datasets: usize) -> Vec<SeriesProfile> {
    (0..n_datasets)
        .map(|i| {
            let mut p = SeriesProfile::new(&format!("syn{}", (b'a' + i as u8) as char));
            let f = i as f64;
            p.level = 10.0 + 15.0 * f;
            p.amplitude = 1.0 + f;
            p.period = 24.0 + 20.0 * f;
            p.noise = 0.3 + 0.25 * f;
            p.phi = 0.2 + 0.15 * (f % 4.0);
            p
        })
        .collect()
}

pub fn series_catalog(profiles: &[SeriesProfile], seed: u64) -> DatasetCatalog {
    let mut catalog = DatasetCatalog::new();
    for p in profiles {
        let series = (0..p.n_series).map(|s| generate_series(p, s, seed)).collect();
        catalog.insert_dataset(&p.dataset_id, series).expect("distinct generated ids");
    }
    catalog
}
