//! Frame-level speaker embeddings.
//!
//! [`Embedder`] is the pluggable interface; [`SpectralEmbedder`] is the
//! deterministic reference implementation built from log-filterbank shape
//! statistics, spectral centroid and an autocorrelation pitch estimate,
//! mapped through a fixed affine projection and normalized to unit length.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{seconds_to_samples, Waveform};
use crate::error::{Error, Result};
use crate::util::atomic_write;

/// Per-frame speaker embeddings, `F x K`, rows of unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    vectors: Vec<f32>,
    dim: usize,
    pub frame_duration_s: f64,
    pub frame_hop_s: f64,
}

impl FrameEmbeddings {
    pub fn new(vectors: Vec<f32>, dim: usize, frame_duration_s: f64, frame_hop_s: f64) -> Result<Self> {
        if dim == 0 || vectors.len() % dim != 0 {
            return Err(Error::shape(format!(
                "{} values do not form rows of {dim}",
                vectors.len()
            )));
        }
        Ok(Self {
            vectors,
            dim,
            frame_duration_s,
            frame_hop_s,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.vectors
    }

    /// Start time of frame `i` in seconds.
    pub fn frame_start_s(&self, i: usize) -> f64 {
        i as f64 * self.frame_hop_s
    }

    /// Keep only the listed frames, in the given order.
    pub fn select(&self, frames: &[usize]) -> FrameEmbeddings {
        let mut vectors = Vec::with_capacity(frames.len() * self.dim);
        for &i in frames {
            vectors.extend_from_slice(self.row(i));
        }
        FrameEmbeddings {
            vectors,
            dim: self.dim,
            frame_duration_s: self.frame_duration_s,
            frame_hop_s: self.frame_hop_s,
        }
    }
}

/// Types holding rows of embedding vectors that must stay unit norm after
/// augmentation.
pub trait EmbeddingRows {
    fn dim(&self) -> usize;
    fn flat_mut(&mut self) -> &mut [f32];
}

impl EmbeddingRows for FrameEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn flat_mut(&mut self) -> &mut [f32] {
        &mut self.vectors
    }
}

pub(crate) fn normalize_row(row: &mut [f32]) {
    let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
    }
}

/// Perturb every component with independent `N(0, sigma^2)` noise, then
/// renormalize each row to unit length. Deterministic for a given seed.
pub fn add_gaussian_noise<E: EmbeddingRows + Clone>(embeddings: &E, sigma: f64, seed: u64) -> Result<E> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = embeddings.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let dim = out.dim();
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in out.flat_mut().chunks_exact_mut(dim) {
        for v in row.iter_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
        normalize_row(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    #[default]
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Embedding dimension K.
    pub dim: usize,
    pub frame_duration_s: f64,
    pub frame_hop_s: f64,
    /// Number of mel-spaced triangular bands.
    pub num_filters: usize,
    pub fft_size: usize,
    /// Seed of the fixed feature projection; part of the embedder identity.
    pub projection_seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Spectral,
            dim: 16,
            frame_duration_s: 0.5,
            frame_hop_s: 0.5,
            num_filters: 20,
            fft_size: 256,
            projection_seed: 0x5eed_f00d,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        if !(self.frame_duration_s > 0.0) || !(self.frame_hop_s > 0.0) {
            return Err(Error::invalid("frame duration and hop must be positive"));
        }
        if self.frame_hop_s > self.frame_duration_s {
            return Err(Error::invalid("frame hop may not exceed frame duration"));
        }
        if self.num_filters < 2 || self.fft_size < 16 || !self.fft_size.is_power_of_two() {
            return Err(Error::invalid(
                "need at least 2 filters and a power-of-two FFT size >= 16",
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        match self.kind {
            EmbedderKind::Spectral => Ok(Box::new(SpectralEmbedder::new(self.clone())?)),
        }
    }
}

/// Anything that maps audio to per-frame speaker embeddings.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_frames(&self, waveform: &Waveform) -> Result<FrameEmbeddings>;
}

/// Extract embeddings with the embedder described by `config`.
pub fn embed_frames(waveform: &Waveform, config: &EmbedderConfig) -> Result<FrameEmbeddings> {
    config.build()?.embed_frames(waveform)
}

/// Frames whose RMS falls below this level are treated as silence.
const ACTIVE_RMS: f64 = 1e-3;
const PITCH_MIN_HZ: f64 = 60.0;
const PITCH_MAX_HZ: f64 = 400.0;
const VOICING_THRESHOLD: f64 = 0.3;

const SHAPE_WEIGHT: f64 = 0.25;
const SPREAD_WEIGHT: f64 = 0.25;
const PITCH_WEIGHT: f64 = 3.0;

pub struct SpectralEmbedder {
    config: EmbedderConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    projection: Vec<f64>,
    bias: Vec<f64>,
}

impl std::fmt::Debug for SpectralEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralEmbedder")
            .field("config", &self.config)
            .finish()
    }
}

impl SpectralEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        let n = config.fft_size;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let feat_dim = Self::feature_dim(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.projection_seed);
        let normal = Normal::new(0.0, 1.0 / (config.dim as f64).sqrt()).unwrap();
        let projection = (0..config.dim * feat_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let mut bias: Vec<f64> = (0..config.dim).map(|_| normal.sample(&mut rng)).collect();
        let norm = bias.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
        bias.iter_mut().for_each(|b| *b *= 0.5 / norm);
        Ok(Self {
            config,
            fft,
            window,
            projection,
            bias,
        })
    }

    fn feature_dim(config: &EmbedderConfig) -> usize {
        2 * config.num_filters + 2
    }

    /// Triangular mel filterbank over the positive-frequency bins.
    fn filterbank(&self, sample_rate: u32) -> Vec<Vec<(usize, f64)>> {
        let n = self.config.fft_size;
        let bins = n / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let (lo, hi) = (mel(80.0_f64.min(nyquist * 0.5)), mel(nyquist * 0.95));
        let nf = self.config.num_filters;
        let edges: Vec<f64> = (0..nf + 2)
            .map(|i| inv(lo + (hi - lo) * i as f64 / (nf + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n as f64;
        (0..nf)
            .map(|b| {
                let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
                let mut taps: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                if taps.is_empty() {
                    // narrow low bands can fall between bins
                    let k = ((c / bin_hz).round() as usize).min(bins - 1);
                    taps.push((k, 1.0));
                }
                taps
            })
            .collect()
    }

    fn features(&self, frame: &[f32], sample_rate: u32, bank: &[Vec<(usize, f64)>]) -> Vec<f64> {
        let n = self.config.fft_size;
        let nf = self.config.num_filters;
        let hop = n / 2;
        let bins = n / 2 + 1;
        let bin_hz = sample_rate as f64 / n as f64;
        let mut shape_sum = vec![0.0; nf];
        let mut shape_sq = vec![0.0; nf];
        let mut centroid_sum = 0.0;
        let mut active = 0usize;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut log_bands = vec![0.0; nf];
        let mut start = 0;
        while start + n <= frame.len() {
            let sub = &frame[start..start + n];
            start += hop;
            let ms = sub.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / n as f64;
            if ms < ACTIVE_RMS * ACTIVE_RMS {
                continue;
            }
            for (b, (&x, &w)) in buf.iter_mut().zip(sub.iter().zip(&self.window)) {
                *b = Complex::new(x as f64 * w, 0.0);
            }
            self.fft.process(&mut buf);
            let power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
            let total: f64 = power.iter().sum();
            let weighted: f64 = power.iter().enumerate().map(|(k, p)| k as f64 * bin_hz * p).sum();
            centroid_sum += weighted / total.max(1e-30);
            for (lb, taps) in log_bands.iter_mut().zip(bank) {
                let e: f64 = taps.iter().map(|&(k, w)| w * power[k]).sum();
                *lb = (e + 1e-10).ln();
            }
            let mean = log_bands.iter().sum::<f64>() / nf as f64;
            for b in 0..nf {
                let v = log_bands[b] - mean;
                shape_sum[b] += v;
                shape_sq[b] += v * v;
            }
            active += 1;
        }
        let mut feat = vec![0.0; Self::feature_dim(&self.config)];
        if active == 0 {
            return feat;
        }
        let a = active as f64;
        for b in 0..nf {
            let m = shape_sum[b] / a;
            let var = (shape_sq[b] / a - m * m).max(0.0);
            feat[b] = SHAPE_WEIGHT * m;
            feat[nf + b] = SPREAD_WEIGHT * var.sqrt();
        }
        feat[2 * nf] = centroid_sum / a / 1000.0 - 1.0;
        if let Some(f0) = pitch_estimate(frame, sample_rate) {
            feat[2 * nf + 1] = PITCH_WEIGHT * (f0 / 150.0).log2();
        }
        feat
    }

    fn project(&self, feat: &[f64]) -> Vec<f32> {
        let fd = feat.len();
        let mut out: Vec<f32> = (0..self.config.dim)
            .map(|k| {
                let row = &self.projection[k * fd..(k + 1) * fd];
                let v: f64 = row.iter().zip(feat).map(|(p, f)| p * f).sum::<f64>() + self.bias[k];
                v as f32
            })
            .collect();
        normalize_row(&mut out);
        out
    }
}

impl Embedder for SpectralEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_frames(&self, waveform: &Waveform) -> Result<FrameEmbeddings> {
        let sr = waveform.sample_rate();
        let frame_len = seconds_to_samples(self.config.frame_duration_s, sr);
        let hop = seconds_to_samples(self.config.frame_hop_s, sr).max(1);
        if frame_len < self.config.fft_size {
            return Err(Error::invalid(format!(
                "embedding frame of {frame_len} samples is shorter than the FFT size"
            )));
        }
        if waveform.len() < frame_len {
            return Err(Error::invalid(format!(
                "waveform of {} samples is shorter than one {}-sample embedding frame",
                waveform.len(),
                frame_len
            )));
        }
        let frames = (waveform.len() - frame_len) / hop + 1;
        let bank = self.filterbank(sr);
        let samples = waveform.samples();
        let mut vectors = Vec::with_capacity(frames * self.config.dim);
        for i in 0..frames {
            let frame = &samples[i * hop..i * hop + frame_len];
            let feat = self.features(frame, sr, &bank);
            vectors.extend(self.project(&feat));
        }
        FrameEmbeddings::new(
            vectors,
            self.config.dim,
            self.config.frame_duration_s,
            self.config.frame_hop_s,
        )
    }
}

/// Frames at least this fraction of the loudest frame's energy count as
/// active when pooling a clean source.
const POOL_ACTIVE_FRACTION: f64 = 0.1;

/// Mean embedding over the active frames of a single-speaker signal, used as
/// the reference identity of a clean source.
pub fn pooled_embedding(waveform: &Waveform, config: &EmbedderConfig) -> Result<Vec<f32>> {
    let emb = embed_frames(waveform, config)?;
    let sr = waveform.sample_rate();
    let frame_len = seconds_to_samples(config.frame_duration_s, sr);
    let hop = seconds_to_samples(config.frame_hop_s, sr).max(1);
    let energies: Vec<f64> = (0..emb.num_frames())
        .map(|i| {
            waveform.samples()[i * hop..i * hop + frame_len]
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
        })
        .collect();
    let max = energies.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Empty("cannot pool an all-silent source".into()));
    }
    let mut acc = vec![0.0f64; emb.dim()];
    let mut count = 0usize;
    for (row, &e) in emb.rows().zip(&energies) {
        if e >= POOL_ACTIVE_FRACTION * max {
            acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
            count += 1;
        }
    }
    Ok(acc.iter().map(|a| (a / count as f64) as f32).collect())
}

/// Fundamental frequency from the normalized autocorrelation peak, or
/// `None` for unvoiced or silent input.
pub(crate) fn pitch_estimate(frame: &[f32], sample_rate: u32) -> Option<f64> {
    let sr = sample_rate as f64;
    let min_lag = (sr / PITCH_MAX_HZ).floor().max(1.0) as usize;
    let max_lag = (sr / PITCH_MIN_HZ).ceil() as usize;
    if frame.len() <= max_lag * 2 {
        return None;
    }
    let x: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy / (x.len() as f64) < ACTIVE_RMS * ACTIVE_RMS {
        return None;
    }
    let corr: Vec<f64> = (min_lag..=max_lag)
        .map(|lag| {
            let n = x.len() - lag;
            let (mut num, mut e0, mut e1) = (0.0, 0.0, 0.0);
            for i in 0..n {
                num += x[i] * x[i + lag];
                e0 += x[i] * x[i];
                e1 += x[i + lag] * x[i + lag];
            }
            num / (e0 * e1).sqrt().max(1e-30)
        })
        .collect();
    let best = corr.iter().cloned().fold(f64::MIN, f64::max);
    if best < VOICING_THRESHOLD {
        return None;
    }
    // shortest lag close to the maximum avoids sub-octave picks
    let idx = (1..corr.len().saturating_sub(1))
        .find(|&i| corr[i] >= 0.9 * best && corr[i] >= corr[i - 1] && corr[i] >= corr[i + 1])
        .unwrap_or_else(|| {
            corr.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap()
        });
    // parabolic interpolation around the peak
    let lag = if idx > 0 && idx + 1 < corr.len() {
        let (a, b, c) = (corr[idx - 1], corr[idx], corr[idx + 1]);
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
        (min_lag + idx) as f64 + delta.clamp(-0.5, 0.5)
    } else {
        (min_lag + idx) as f64
    };
    Some(sr / lag)
}

/// Flat binary layout: `rows` and `dim` as little-endian u32, then
/// `rows * dim` little-endian f32 values.
pub fn encode_matrix(rows: usize, dim: usize, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + values.len() * 4);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 8 {
        return Err(Error::format("embedding dump", "missing header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * dim * 4 {
        return Err(Error::format(
            "embedding dump",
            format!("header says {rows}x{dim} but payload has {} bytes", body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, dim, values))
}

pub fn write_embeddings(embeddings: &FrameEmbeddings, path: &Path) -> Result<()> {
    atomic_write(
        path,
        &encode_matrix(embeddings.num_frames(), embeddings.dim(), embeddings.as_flat()),
    )
}

pub fn read_embeddings(path: &Path, frame_duration_s: f64, frame_hop_s: f64) -> Result<FrameEmbeddings> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, dim, values) = decode_matrix(&bytes)?;
    FrameEmbeddings::new(values, dim, frame_duration_s, frame_hop_s)
}
