//! Audio primitives: the [`Waveform`] buffer, WAV I/O, framing into
//! overlapping encoder segments, overlap-add reconstruction and chunk plans
//! for long recordings.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::atomic_write;

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Mono sample buffer. Samples are nominally in `[-1, 1]` and always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of samples `[start, end)`; `end` is clamped to the length.
    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        let end = end.min(self.len());
        let start = start.min(end);
        Waveform {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncated(&self, len: usize) -> Waveform {
        self.slice(0, len)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn scaled(&self, gain: f32) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Sample-wise sum; lengths must match.
    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        if self.len() != other.len() || self.sample_rate != other.sample_rate {
            return Err(Error::shape(format!(
                "cannot add waveforms of {} @ {} Hz and {} @ {} Hz",
                self.len(),
                self.sample_rate,
                other.len(),
                other.sample_rate
            )));
        }
        Ok(Waveform {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn seconds_to_samples(&self, seconds: f64) -> usize {
        seconds_to_samples(seconds, self.sample_rate)
    }
}

pub fn seconds_to_samples(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64).round().max(0.0) as usize
}

/// Read channel 0 of a WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    read_wav_channel(path, 0)
}

/// Read one channel of a 16/32-bit PCM or 32-bit float WAV file, scaled to
/// `[-1, 1]`.
pub fn read_wav_channel(path: &Path, channel: usize) -> Result<Waveform> {
    let wav_err = |message: String| Error::Wav {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channel >= channels {
        return Err(wav_err(format!(
            "channel {channel} requested but file has {channels}"
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Int, 32) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| (v as f64 / 2147483648.0) as f32))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(wav_err(format!(
                "unsupported encoding: {fmt:?} with {bits} bits per sample"
            )))
        }
    }
    .map_err(|e| wav_err(e.to_string()))?;
    if interleaved.is_empty() {
        return Err(wav_err("zero-length payload".into()));
    }
    let samples: Vec<f32> = interleaved
        .into_iter()
        .skip(channel)
        .step_by(channels)
        .collect();
    Waveform::new(samples, spec.sample_rate).map_err(|e| wav_err(e.to_string()))
}

/// Largest representable positive value of a 16-bit code.
pub const PCM16_MAX: f32 = 1.0 - 1.0 / 32768.0;

/// Quantize one sample to a 16-bit PCM code after clamping to
/// `[-1, 1 - 2^-15]`.
pub fn quantize_pcm16(x: f32) -> i16 {
    let clamped = x.clamp(-1.0, PCM16_MAX);
    (clamped * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encode a waveform as 16-bit PCM mono WAV bytes.
pub fn encode_wav(waveform: &Waveform) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)
            .map_err(|e| Error::format("wav", e.to_string()))?;
        let mut w16 = writer.get_i16_writer(waveform.len() as u32);
        for &s in &waveform.samples {
            w16.write_sample(quantize_pcm16(s));
        }
        w16.flush()
            .map_err(|e| Error::format("wav", e.to_string()))?;
        writer
            .finalize()
            .map_err(|e| Error::format("wav", e.to_string()))?;
    }
    Ok(cursor.into_inner())
}

/// Write a 16-bit PCM mono WAV file atomically.
pub fn write_wav(waveform: &Waveform, path: &Path) -> Result<()> {
    let bytes = encode_wav(waveform)?;
    atomic_write(path, &bytes)
}

/// `T` overlapping frames of `L` samples, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatrix {
    data: Vec<f32>,
    frames: usize,
    frame_len: usize,
    hop: usize,
    origin_length: usize,
}

impl SegmentMatrix {
    pub fn from_parts(
        data: Vec<f32>,
        frame_len: usize,
        hop: usize,
        origin_length: usize,
    ) -> Result<Self> {
        if frame_len == 0 || hop == 0 || hop > frame_len {
            return Err(Error::invalid(format!(
                "need 1 <= hop <= L, got hop={hop}, L={frame_len}"
            )));
        }
        if data.len() % frame_len != 0 {
            return Err(Error::shape(format!(
                "{} values do not form rows of {frame_len}",
                data.len()
            )));
        }
        let frames = data.len() / frame_len;
        if frames != num_frames(origin_length, frame_len, hop) {
            return Err(Error::shape(format!(
                "{frames} frames cannot reconstruct {origin_length} samples at L={frame_len}, hop={hop}"
            )));
        }
        Ok(Self {
            data,
            frames,
            frame_len,
            hop,
            origin_length,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.data[k * self.frame_len..(k + 1) * self.frame_len]
    }
}

/// Number of frames needed to cover `len` samples: `ceil((len - L)/hop) + 1`,
/// and a single frame for inputs no longer than `L`.
pub fn num_frames(len: usize, frame_len: usize, hop: usize) -> usize {
    if len <= frame_len {
        1
    } else {
        (len - frame_len).div_ceil(hop) + 1
    }
}

/// Split a waveform into overlapping frames; the tail is zero-padded.
pub fn segment(waveform: &Waveform, frame_len: usize, hop: usize) -> Result<SegmentMatrix> {
    if waveform.is_empty() {
        return Err(Error::Empty("cannot segment an empty waveform".into()));
    }
    segment_samples(waveform.samples(), frame_len, hop)
}

pub fn segment_samples(samples: &[f32], frame_len: usize, hop: usize) -> Result<SegmentMatrix> {
    if frame_len == 0 || hop == 0 || hop > frame_len {
        return Err(Error::invalid(format!(
            "need 1 <= hop <= L, got hop={hop}, L={frame_len}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Empty("cannot segment an empty signal".into()));
    }
    let frames = num_frames(samples.len(), frame_len, hop);
    let mut data = vec![0.0f32; frames * frame_len];
    for (k, row) in data.chunks_exact_mut(frame_len).enumerate() {
        let start = k * hop;
        let end = (start + frame_len).min(samples.len());
        row[..end - start].copy_from_slice(&samples[start..end]);
    }
    Ok(SegmentMatrix {
        data,
        frames,
        frame_len,
        hop,
        origin_length: samples.len(),
    })
}

/// Sum overlapping frames back into a signal of `origin_length` samples.
///
/// Raw mode adds contributions as-is; normalized mode divides each sample by
/// the number of frames covering it.
pub fn overlap_add(segments: &SegmentMatrix, normalize: bool, sample_rate: u32) -> Waveform {
    let samples = overlap_add_samples(
        &segments.data,
        segments.frame_len,
        segments.hop,
        segments.origin_length,
        normalize,
    );
    Waveform {
        samples,
        sample_rate: sample_rate.max(1),
    }
}

pub(crate) fn overlap_add_samples(
    data: &[f32],
    frame_len: usize,
    hop: usize,
    out_len: usize,
    normalize: bool,
) -> Vec<f32> {
    let mut out = vec![0.0f32; out_len];
    let mut coverage = if normalize {
        vec![0u32; out_len]
    } else {
        Vec::new()
    };
    for (k, row) in data.chunks_exact(frame_len).enumerate() {
        let start = k * hop;
        if start >= out_len {
            break;
        }
        let end = (start + frame_len).min(out_len);
        for (o, &v) in out[start..end].iter_mut().zip(row) {
            *o += v;
        }
        if normalize {
            for c in &mut coverage[start..end] {
                *c += 1;
            }
        }
    }
    if normalize {
        for (o, &c) in out.iter_mut().zip(&coverage) {
            if c > 1 {
                *o /= c as f32;
            }
        }
    }
    out
}

/// Chunk boundaries for processing a long recording piecewise.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPlan {
    pub chunk_length_s: f64,
    pub chunk_overlap_s: f64,
    pub sample_rate: u32,
    pub total_samples: usize,
    /// `(start, end)` sample ranges, end exclusive.
    pub boundaries: Vec<(usize, usize)>,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    pub fn overlap_samples(&self) -> usize {
        seconds_to_samples(self.chunk_overlap_s, self.sample_rate)
    }
}

/// Plan chunks of `chunk_s` seconds advancing by `chunk_s - overlap_s`.
/// The last chunk may be shorter; recordings shorter than a chunk yield one
/// chunk covering everything.
pub fn plan_chunks(waveform: &Waveform, chunk_s: f64, overlap_s: f64) -> Result<ChunkPlan> {
    plan_chunks_for_len(waveform.len(), waveform.sample_rate(), chunk_s, overlap_s)
}

pub fn plan_chunks_for_len(
    total: usize,
    sample_rate: u32,
    chunk_s: f64,
    overlap_s: f64,
) -> Result<ChunkPlan> {
    if !(overlap_s >= 0.0 && chunk_s > overlap_s) {
        return Err(Error::invalid(format!(
            "need chunk_s > overlap_s >= 0, got chunk_s={chunk_s}, overlap_s={overlap_s}"
        )));
    }
    if total == 0 {
        return Err(Error::Empty("cannot plan chunks for an empty recording".into()));
    }
    let chunk = seconds_to_samples(chunk_s, sample_rate).max(1);
    let overlap = seconds_to_samples(overlap_s, sample_rate);
    if overlap >= chunk {
        return Err(Error::invalid("overlap rounds to at least a full chunk"));
    }
    let step = chunk - overlap;
    let mut boundaries = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + chunk).min(total);
        boundaries.push((start, end));
        if end == total {
            break;
        }
        start += step;
    }
    Ok(ChunkPlan {
        chunk_length_s: chunk_s,
        chunk_overlap_s: overlap_s,
        sample_rate,
        total_samples: total,
        boundaries,
    })
}
