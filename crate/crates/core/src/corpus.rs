//! Deterministic synthetic corpora: parametric harmonic "speakers",
//! two-party conversations with a controlled overlap ratio, fully
//! overlapped pairs, and the manifests that index them on disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{quantize_pcm16, read_wav, seconds_to_samples, write_wav, Waveform};
use crate::error::{Error, Result};
use crate::util::{atomic_write, derive_seed, rng_for};

/// Utterances are peak-normalized to this level before mixing.
pub const UTTERANCE_PEAK: f32 = 0.5;
const MIX_PEAK_LIMIT: f32 = 0.99;
/// Floor of the syllabic envelope so a talker stays audible between syllables.
const ENVELOPE_FLOOR: f64 = 0.25;
const EDGE_FADE_S: f64 = 0.01;
/// Minimum relative f0 separation between the two talkers of one mixture.
pub const MIN_PAIR_F0_RATIO: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonator {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    pub id: String,
    pub f0_hz: f64,
    pub vibrato_rate_hz: f64,
    pub vibrato_depth_cents: f64,
    pub formants: Vec<Resonator>,
    pub attack_ms: f64,
    pub syllable_rate_hz: f64,
    pub seed: u64,
}

impl SpeakerSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(60.0..=400.0).contains(&self.f0_hz) {
            return Err(Error::invalid(format!(
                "speaker {}: f0 {} Hz outside [60, 400]",
                self.id, self.f0_hz
            )));
        }
        if !(2..=3).contains(&self.formants.len()) {
            return Err(Error::invalid(format!(
                "speaker {}: need 2 or 3 resonators",
                self.id
            )));
        }
        for r in &self.formants {
            if !(r.center_hz > 0.0 && r.center_hz < nyquist && r.bandwidth_hz > 0.0) {
                return Err(Error::invalid(format!(
                    "speaker {}: resonator {:?} invalid at {} Hz sampling",
                    self.id, r, sample_rate
                )));
            }
        }
        if !(self.vibrato_rate_hz >= 0.0
            && self.vibrato_depth_cents >= 0.0
            && self.attack_ms > 0.0
            && self.syllable_rate_hz > 0.0)
        {
            return Err(Error::invalid(format!(
                "speaker {}: vibrato and envelope parameters must be positive",
                self.id
            )));
        }
        Ok(())
    }

    /// Draw a random speaker suitable for `sample_rate`.
    pub fn sample<R: Rng>(rng: &mut R, id: impl Into<String>, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let f0_hz = (80f64.ln() + rng.gen::<f64>() * (320f64 / 80.0).ln()).exp();
        let mut formants = vec![
            Resonator {
                center_hz: rng.gen_range(300.0..900.0),
                bandwidth_hz: rng.gen_range(60.0..150.0),
            },
            Resonator {
                center_hz: rng.gen_range(1000.0..2400.0_f64.min(0.7 * nyquist)),
                bandwidth_hz: rng.gen_range(80.0..200.0),
            },
        ];
        if rng.gen_bool(0.5) {
            formants.push(Resonator {
                center_hz: rng.gen_range(0.62 * nyquist..0.85 * nyquist),
                bandwidth_hz: rng.gen_range(100.0..250.0),
            });
        }
        Self {
            id: id.into(),
            f0_hz,
            vibrato_rate_hz: rng.gen_range(4.0..7.0),
            vibrato_depth_cents: rng.gen_range(10.0..40.0),
            formants,
            attack_ms: rng.gen_range(10.0..60.0),
            syllable_rate_hz: rng.gen_range(3.0..6.0),
            seed: rng.gen(),
        }
    }

    fn resonance(&self, f: f64) -> f64 {
        self.formants
            .iter()
            .map(|r| {
                let x = (f - r.center_hz) / (0.5 * r.bandwidth_hz);
                1.0 / (1.0 + x * x)
            })
            .sum()
    }
}

/// Harmonic voice at the speaker's f0 with vibrato, formant-shaped
/// harmonics and a syllabic envelope, peak-normalized to 0.5.
pub fn synth_utterance(spec: &SpeakerSpec, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("utterance duration must be positive"));
    }
    let n = seconds_to_samples(duration_s, sample_rate).max(1);
    Waveform::new(synth_samples(spec, n, sample_rate, seed)?, sample_rate)
}

fn synth_samples(spec: &SpeakerSpec, n: usize, sample_rate: u32, seed: u64) -> Result<Vec<f32>> {
    spec.validate(sample_rate)?;
    let sr = sample_rate as f64;
    let mut rng = rng_for(spec.seed, "utterance", seed);
    let two_pi = 2.0 * std::f64::consts::PI;
    let max_f0 = spec.f0_hz * 2f64.powf(spec.vibrato_depth_cents / 1200.0);
    let harmonics = ((0.45 * sr / max_f0).floor() as usize).max(1);

    // The fundamental is left unfiltered so it dominates the spectrum; upper
    // harmonics carry the formant colour at no more than 0.45 of its level.
    let shaped: Vec<f64> = (2..=harmonics).map(|h| spec.resonance(h as f64 * spec.f0_hz)).collect();
    let peak = shaped.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let mut amps = vec![1.0];
    for (i, r) in shaped.iter().enumerate() {
        let h = (i + 2) as f64;
        amps.push(0.45 * (0.15 + 0.85 * r / peak) * h.powf(-0.3));
    }
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen::<f64>() * two_pi).collect();
    let vib_phase = rng.gen::<f64>() * two_pi;
    let envelope = syllable_envelope(spec, n, sr, &mut rng);

    let depth = spec.vibrato_depth_cents / 1200.0;
    let fade = (EDGE_FADE_S * sr).round().max(1.0) as usize;
    let mut phi = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f = spec.f0_hz * 2f64.powf(depth * (two_pi * spec.vibrato_rate_hz * t + vib_phase).sin());
        let mut v = 0.0;
        for (h, (&a, &p)) in amps.iter().zip(&phases).enumerate() {
            v += a * ((h + 1) as f64 * phi + p).sin();
        }
        let edge = ((i.min(n - 1 - i) as f64) / fade as f64).min(1.0);
        out.push(v * envelope[i] * edge);
        phi = (phi + two_pi * f / sr) % (two_pi * 1e6);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { UTTERANCE_PEAK as f64 / peak } else { 0.0 };
    Ok(out.into_iter().map(|v| (v * gain) as f32).collect())
}

fn syllable_envelope(spec: &SpeakerSpec, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut env = vec![ENVELOPE_FLOOR; n];
    let attack = (spec.attack_ms / 1000.0 * sr).max(1.0);
    let mut start = 0usize;
    while start < n {
        let len = ((1.0 / spec.syllable_rate_hz) * rng.gen_range(0.7..1.3) * sr).round().max(2.0) as usize;
        let decay = (0.3 * len as f64).max(1.0);
        for k in 0..len.min(n - start) {
            let kf = k as f64;
            let rise = (kf / attack).min(1.0);
            let fall = ((len as f64 - kf) / decay).min(1.0);
            let shape = 0.5 - 0.5 * (std::f64::consts::PI * rise.min(fall)).cos();
            env[start + k] = ENVELOPE_FLOOR + (1.0 - ENVELOPE_FLOOR) * shape;
        }
        start += len;
    }
    env
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConversationSpec {
    pub duration_s: f64,
    /// Overlapped speech divided by total speech (union) time.
    pub overlap_ratio: f64,
    pub turn_mean_s: f64,
    pub turn_std_s: f64,
    pub pause_mean_s: f64,
    pub pause_std_s: f64,
    pub seed: u64,
}

impl Default for ConversationSpec {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            overlap_ratio: 0.1,
            turn_mean_s: 3.0,
            turn_std_s: 1.0,
            pause_mean_s: 0.4,
            pause_std_s: 0.2,
            seed: 0,
        }
    }
}

/// One speaker's active interval, in samples, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Turn {
    /// 0-based speaker slot (src1 is 0).
    pub speaker: usize,
    pub start: usize,
    pub end: usize,
}

/// Turn layout hitting the requested overlap ratio.
///
/// With pause total `P`, turn total `S` and overlap total `O`, the duration
/// is `D = P + S - O` and the ratio `r = O / (S - O)`, so `S = (1 + r)(D - P)`.
/// Overlap is spread over the junctions flagged as overlapping, each capped
/// at half the shorter adjacent turn so a talker never overlaps itself.
pub fn plan_turns(conv: &ConversationSpec, sample_rate: u32) -> Result<Vec<Turn>> {
    let d = conv.duration_s;
    let r = conv.overlap_ratio;
    if !(d > 0.0) {
        return Err(Error::invalid("conversation duration must be positive"));
    }
    if !(0.0..1.0).contains(&r) {
        return Err(Error::invalid(format!("overlap ratio {r} outside [0, 1)")));
    }
    if !(conv.turn_mean_s > 0.0 && conv.turn_std_s >= 0.0 && conv.pause_mean_s >= 0.0 && conv.pause_std_s >= 0.0) {
        return Err(Error::invalid("turn and pause statistics must be non-negative"));
    }
    let mut rng = rng_for(conv.seed, "turns", 0);
    let turn_dist = Normal::new(conv.turn_mean_s, conv.turn_std_s).unwrap();
    let pause_dist = Normal::new(conv.pause_mean_s, conv.pause_std_s).unwrap();
    let q = if r == 0.0 { 0.0 } else { (6.0 * r / (1.0 + r)).min(1.0) };
    let lead = rng.gen::<f64>() * conv.pause_mean_s;
    let trail = rng.gen::<f64>() * conv.pause_mean_s;

    let n = ((d / conv.turn_mean_s).round() as usize).max(2);
    let mut turns: Vec<f64> = (0..n)
        .map(|_| turn_dist.sample(&mut rng).clamp(0.3 * conv.turn_mean_s, 3.0 * conv.turn_mean_s))
        .collect();
    let mut overlap_flag: Vec<bool> = (0..n - 1).map(|_| r > 0.0 && rng.gen_bool(q)).collect();
    if r > 0.0 && !overlap_flag.iter().any(|&f| f) {
        let j = rng.gen_range(0..n - 1);
        overlap_flag[j] = true;
    }
    let raw_pauses: Vec<f64> = (0..n - 1)
        .map(|_| pause_dist.sample(&mut rng).clamp(0.05, 3.0 * conv.pause_mean_s.max(0.05)))
        .collect();
    let first_speaker = rng.gen_range(0..2usize);

    let (pauses, overlaps) = loop {
        let mut pauses: Vec<f64> = (0..n - 1)
            .map(|j| if overlap_flag[j] { 0.0 } else { raw_pauses[j] })
            .collect();
        let mut p_total = lead + trail + pauses.iter().sum::<f64>();
        if p_total > 0.5 * d {
            let k = 0.5 * d / p_total;
            pauses.iter_mut().for_each(|p| *p *= k);
            p_total *= k;
        }
        let s_total = (1.0 + r) * (d - p_total);
        let raw_sum: f64 = turns.iter().sum();
        turns.iter_mut().for_each(|t| *t *= s_total / raw_sum);
        let o_total = r * s_total / (1.0 + r);
        let caps: Vec<f64> = (0..n - 1)
            .map(|j| if overlap_flag[j] { 0.5 * turns[j].min(turns[j + 1]) } else { 0.0 })
            .collect();
        let cap_total: f64 = caps.iter().sum();
        if cap_total >= o_total {
            let overlaps: Vec<f64> = if o_total > 0.0 {
                caps.iter().map(|c| o_total * c / cap_total).collect()
            } else {
                vec![0.0; n - 1]
            };
            break (pauses, overlaps);
        }
        let free: Vec<usize> = (0..n - 1).filter(|&j| !overlap_flag[j]).collect();
        if free.is_empty() {
            return Err(Error::invalid(format!(
                "overlap ratio {r} is infeasible for mean turn {} s over {d} s",
                conv.turn_mean_s
            )));
        }
        overlap_flag[free[rng.gen_range(0..free.len())]] = true;
    };

    let mut out = Vec::with_capacity(n);
    let mut t = lead;
    for i in 0..n {
        let start = t;
        let end = start + turns[i];
        out.push(Turn {
            speaker: (first_speaker + i) % 2,
            start: (start * sample_rate as f64).round() as usize,
            end: (end * sample_rate as f64).round() as usize,
        });
        if i + 1 < n {
            t = end + pauses[i] - overlaps[i];
        }
    }
    let total = seconds_to_samples(d, sample_rate);
    for turn in out.iter_mut() {
        turn.end = turn.end.min(total);
        turn.start = turn.start.min(turn.end);
    }
    out.retain(|t| t.end > t.start);
    Ok(out)
}

/// Overlapped samples divided by samples where anyone speaks.
pub fn overlap_ratio(turns: &[Turn], total: usize) -> f64 {
    let mut active = vec![0u8; total];
    for t in turns {
        for a in &mut active[t.start.min(total)..t.end.min(total)] {
            *a |= 1 << t.speaker.min(7);
        }
    }
    let union = active.iter().filter(|&&a| a != 0).count();
    let both = active.iter().filter(|&&a| a.count_ones() >= 2).count();
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// A mixture with its ground-truth sources; `mixture == sources[0] + sources[1]`
/// sample-wise and every value lies on the 16-bit PCM grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub turns: Vec<Turn>,
}

fn on_grid(x: f32) -> f32 {
    quantize_pcm16(x) as f32 / 32768.0
}

/// Scale to keep the sum in range, snap sources to the PCM grid and add.
fn finish_mixture(mut a: Vec<f32>, mut b: Vec<f32>, sample_rate: u32, turns: Vec<Turn>) -> Result<Mixture> {
    let peak = a.iter().zip(&b).fold(0.0f32, |m, (x, y)| m.max((x + y).abs()));
    let gain = if peak > MIX_PEAK_LIMIT { MIX_PEAK_LIMIT / peak } else { 1.0 };
    for v in a.iter_mut().chain(b.iter_mut()) {
        *v = on_grid(*v * gain);
    }
    let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    Ok(Mixture {
        mixture: Waveform::new(mix, sample_rate)?,
        sources: vec![Waveform::new(a, sample_rate)?, Waveform::new(b, sample_rate)?],
        turns,
    })
}

pub fn gen_conversation(
    a: &SpeakerSpec,
    b: &SpeakerSpec,
    conv: &ConversationSpec,
    sample_rate: u32,
) -> Result<Mixture> {
    let turns = plan_turns(conv, sample_rate)?;
    let total = seconds_to_samples(conv.duration_s, sample_rate);
    let mut tracks = [vec![0.0f32; total], vec![0.0f32; total]];
    for (i, t) in turns.iter().enumerate() {
        let spec = if t.speaker == 0 { a } else { b };
        let seed = derive_seed(conv.seed, "turn", i as u64);
        let utt = synth_samples(spec, t.end - t.start, sample_rate, seed)?;
        tracks[t.speaker][t.start..t.end].copy_from_slice(&utt);
    }
    let [ta, tb] = tracks;
    finish_mixture(ta, tb, sample_rate, turns)
}

/// Fully overlapped pair with the relative gain (dB, source a over b) used.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapPair {
    pub mix: Mixture,
    pub gain_db: f64,
}

pub fn gen_full_overlap_pair(
    a: &SpeakerSpec,
    b: &SpeakerSpec,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<OverlapPair> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("pair duration must be positive"));
    }
    let mut rng = rng_for(seed, "pair-gain", 0);
    let gain_db = rng.gen_range(-2.5..=2.5);
    let n = seconds_to_samples(duration_s, sample_rate);
    let ga = 10f64.powf(gain_db / 40.0) as f32;
    let gb = 10f64.powf(-gain_db / 40.0) as f32;
    let sa: Vec<f32> = synth_samples(a, n, sample_rate, derive_seed(seed, "pair", 0))?
        .into_iter()
        .map(|v| v * ga)
        .collect();
    let sb: Vec<f32> = synth_samples(b, n, sample_rate, derive_seed(seed, "pair", 1))?
        .into_iter()
        .map(|v| v * gb)
        .collect();
    let turns = vec![
        Turn { speaker: 0, start: 0, end: n },
        Turn { speaker: 1, start: 0, end: n },
    ];
    Ok(OverlapPair {
        mix: finish_mixture(sa, sb, sample_rate, turns)?,
        gain_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    RealStyle,
    FullyOverlapped,
}

impl RecordKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::RealStyle => "real-style",
            RecordKind::FullyOverlapped => "fully-overlapped",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "real-style" => Ok(Self::RealStyle),
            "fully-overlapped" => Ok(Self::FullyOverlapped),
            other => Err(Error::format("manifest", format!("unknown kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    /// Paths are relative to the manifest's directory unless absolute.
    pub mixture: PathBuf,
    pub sources: Vec<PathBuf>,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub kind: RecordKind,
    pub annotation: PathBuf,
}

/// A loaded manifest item.
#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub id: String,
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = write!(out, "id={}\tmixture={}", r.id, r.mixture.display());
            for (i, s) in r.sources.iter().enumerate() {
                let _ = write!(out, "\tsrc{}={}", i + 1, s.display());
            }
            let _ = writeln!(
                out,
                "\tsr={}\tdur_s={}\tkind={}\tannot={}",
                r.sample_rate,
                r.duration_s,
                r.kind.as_str(),
                r.annotation.display()
            );
        }
        out
    }

    pub fn parse(text: &str, dir: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::format("manifest", format!("line {}: {m}", lineno + 1));
            let mut fields = BTreeMap::new();
            for kv in line.split('\t') {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| bad(format!("field '{kv}' is not key=value")))?;
                fields.insert(k.to_string(), v.to_string());
            }
            let mut take = |k: &str| fields.remove(k).ok_or_else(|| bad(format!("missing '{k}'")));
            let id = take("id")?;
            let mixture = PathBuf::from(take("mixture")?);
            let sample_rate = take("sr")?.parse().map_err(|_| bad("bad sr".into()))?;
            let duration_s = take("dur_s")?.parse().map_err(|_| bad("bad dur_s".into()))?;
            let kind = RecordKind::parse(&take("kind")?)?;
            let annotation = PathBuf::from(take("annot")?);
            let mut sources = Vec::new();
            for i in 1.. {
                match fields.remove(&format!("src{i}")) {
                    Some(p) => sources.push(PathBuf::from(p)),
                    None => break,
                }
            }
            if let Some(k) = fields.keys().next() {
                return Err(bad(format!("unknown field '{k}'")));
            }
            if sources.is_empty() {
                return Err(bad("no source paths".into()));
            }
            records.push(ManifestRecord {
                id,
                mixture,
                sources,
                sample_rate,
                duration_s,
                kind,
                annotation,
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            records,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, dir)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }

    pub fn load(&self, index: usize) -> Result<LoadedItem> {
        let r = self
            .records
            .get(index)
            .ok_or_else(|| Error::invalid(format!("manifest has no record {index}")))?;
        let mixture = read_wav(&self.resolve(&r.mixture))?;
        let sources = r
            .sources
            .iter()
            .map(|p| read_wav(&self.resolve(p)))
            .collect::<Result<Vec<_>>>()?;
        if sources.iter().any(|s| s.len() != mixture.len()) {
            return Err(Error::shape(format!("record {}: source lengths differ from mixture", r.id)));
        }
        let turns = read_annotation(&self.resolve(&r.annotation), r.sample_rate)?;
        Ok(LoadedItem {
            id: r.id.clone(),
            mixture,
            sources,
            turns,
        })
    }
}

/// One line per turn: 1-based speaker, start and end in seconds.
pub fn annotation_text(turns: &[Turn], sample_rate: u32) -> String {
    let sr = sample_rate as f64;
    let mut out = String::new();
    for t in turns {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}",
            t.speaker + 1,
            t.start as f64 / sr,
            t.end as f64 / sr
        );
    }
    out
}

pub fn read_annotation(path: &Path, sample_rate: u32) -> Result<Vec<Turn>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sr = sample_rate as f64;
    let mut turns = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parse = || -> Option<Turn> {
            let spk: usize = parts.first()?.parse().ok()?;
            let s: f64 = parts.get(1)?.parse().ok()?;
            let e: f64 = parts.get(2)?.parse().ok()?;
            Some(Turn {
                speaker: spk.checked_sub(1)?,
                start: (s * sr).round() as usize,
                end: (e * sr).round() as usize,
            })
        };
        turns.push(parse().ok_or_else(|| {
            Error::format("annotation", format!("{}: bad line '{line}'", path.display()))
        })?);
    }
    Ok(turns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub num_speakers: usize,
    pub train_conversations: usize,
    pub dev_conversations: usize,
    pub test_conversations: usize,
    pub fully_overlapped: usize,
    pub full_overlap_duration_s: f64,
    pub sample_rate: u32,
    pub conversation: ConversationSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_speakers: 40,
            train_conversations: 200,
            dev_conversations: 20,
            test_conversations: 20,
            fully_overlapped: 200,
            full_overlap_duration_s: 8.0,
            sample_rate: 8000,
            conversation: ConversationSpec::default(),
        }
    }
}

/// Speaker pools per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerInventory {
    pub train: Vec<SpeakerSpec>,
    pub dev: Vec<SpeakerSpec>,
    pub test: Vec<SpeakerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifests {
    pub train_real: Manifest,
    pub train_synthetic: Manifest,
    pub dev_real: Manifest,
    pub test_real: Manifest,
    pub speakers: SpeakerInventory,
}

pub const TRAIN_REAL_MANIFEST: &str = "train_real.tsv";
pub const TRAIN_SYNTHETIC_MANIFEST: &str = "train_synthetic.tsv";
pub const DEV_MANIFEST: &str = "dev_real.tsv";
pub const TEST_MANIFEST: &str = "test_real.tsv";
pub const SPEAKER_INVENTORY: &str = "speakers.json";

fn split_sizes(total: usize) -> (usize, usize, usize) {
    let dev = (total / 10).max(2);
    let test = (total / 10).max(2);
    (total - dev - test, dev, test)
}

fn has_valid_pair(pool: &[SpeakerSpec]) -> bool {
    pool.iter().enumerate().any(|(i, a)| pool[i + 1..].iter().any(|b| f0_ratio(a, b) >= MIN_PAIR_F0_RATIO))
}

fn f0_ratio(a: &SpeakerSpec, b: &SpeakerSpec) -> f64 {
    a.f0_hz.max(b.f0_hz) / a.f0_hz.min(b.f0_hz)
}

/// Draw a speaker pair from the pool whose f0 values differ by at least 20%.
fn pick_pair<'a, R: Rng>(pool: &'a [SpeakerSpec], rng: &mut R) -> (&'a SpeakerSpec, &'a SpeakerSpec) {
    loop {
        let i = rng.gen_range(0..pool.len());
        let j = rng.gen_range(0..pool.len());
        if i != j && f0_ratio(&pool[i], &pool[j]) >= MIN_PAIR_F0_RATIO {
            return (&pool[i], &pool[j]);
        }
    }
}

pub fn sample_speakers(num_speakers: usize, sample_rate: u32, seed: u64) -> Result<SpeakerInventory> {
    if num_speakers < 8 {
        return Err(Error::invalid("need at least 8 speakers to form three splits"));
    }
    let (ntr, ndev, ntest) = split_sizes(num_speakers);
    let mut pools = Vec::new();
    for (name, count) in [("train", ntr), ("dev", ndev), ("test", ntest)] {
        let mut attempt = 0u64;
        loop {
            let mut rng = rng_for(seed, &format!("speakers-{name}"), attempt);
            let pool: Vec<SpeakerSpec> = (0..count)
                .map(|i| SpeakerSpec::sample(&mut rng, format!("{name}-spk{i:02}"), sample_rate))
                .collect();
            if has_valid_pair(&pool) {
                pools.push(pool);
                break;
            }
            attempt += 1;
        }
    }
    let test = pools.pop().unwrap();
    let dev = pools.pop().unwrap();
    let train = pools.pop().unwrap();
    Ok(SpeakerInventory { train, dev, test })
}

fn write_item(dir: &Path, split: &str, id: &str, mix: &Mixture, kind: RecordKind, duration_s: f64) -> Result<ManifestRecord> {
    let sub = dir.join(split);
    std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let rel = |suffix: &str| PathBuf::from(split).join(format!("{id}_{suffix}"));
    let mixture = rel("mix.wav");
    write_wav(&mix.mixture, &dir.join(&mixture))?;
    let mut sources = Vec::new();
    for (i, s) in mix.sources.iter().enumerate() {
        let p = rel(&format!("s{}.wav", i + 1));
        write_wav(s, &dir.join(&p))?;
        sources.push(p);
    }
    let annotation = rel("annot.txt");
    let sr = mix.mixture.sample_rate();
    atomic_write(&dir.join(&annotation), annotation_text(&mix.turns, sr).as_bytes())?;
    Ok(ManifestRecord {
        id: id.to_string(),
        mixture,
        sources,
        sample_rate: sr,
        duration_s,
        kind,
        annotation,
    })
}

/// Generate every split of the synthetic corpus under `out_dir`.
pub fn build_corpus(config: &CorpusConfig, out_dir: &Path, seed: u64) -> Result<CorpusManifests> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let sr = config.sample_rate;
    let speakers = sample_speakers(config.num_speakers, sr, seed)?;

    let conversations = |split: &str, pool: &[SpeakerSpec], count: usize| -> Result<Manifest> {
        let mut rng = rng_for(seed, &format!("pairs-{split}"), 0);
        let mut records = Vec::new();
        for i in 0..count {
            let (a, b) = pick_pair(pool, &mut rng);
            let conv = ConversationSpec {
                seed: derive_seed(seed, &format!("conv-{split}"), i as u64),
                ..config.conversation.clone()
            };
            let mix = gen_conversation(a, b, &conv, sr)?;
            let id = format!("{split}-conv{i:04}");
            records.push(write_item(out_dir, split, &id, &mix, RecordKind::RealStyle, conv.duration_s)?);
        }
        Ok(Manifest {
            dir: out_dir.to_path_buf(),
            records,
        })
    };
    let train_real = conversations("train", &speakers.train, config.train_conversations)?;
    let dev_real = conversations("dev", &speakers.dev, config.dev_conversations)?;
    let test_real = conversations("test", &speakers.test, config.test_conversations)?;

    let mut rng = rng_for(seed, "pairs-full", 0);
    let mut records = Vec::new();
    for i in 0..config.fully_overlapped {
        let (a, b) = pick_pair(&speakers.train, &mut rng);
        let pair = gen_full_overlap_pair(a, b, config.full_overlap_duration_s, sr, derive_seed(seed, "full", i as u64))?;
        let id = format!("train-full{i:04}");
        records.push(write_item(
            out_dir,
            "train",
            &id,
            &pair.mix,
            RecordKind::FullyOverlapped,
            config.full_overlap_duration_s,
        )?);
    }
    let train_synthetic = Manifest {
        dir: out_dir.to_path_buf(),
        records,
    };

    train_real.write(&out_dir.join(TRAIN_REAL_MANIFEST))?;
    train_synthetic.write(&out_dir.join(TRAIN_SYNTHETIC_MANIFEST))?;
    dev_real.write(&out_dir.join(DEV_MANIFEST))?;
    test_real.write(&out_dir.join(TEST_MANIFEST))?;
    let inventory = serde_json::to_vec_pretty(&speakers)
        .map_err(|e| Error::format("speaker inventory", e.to_string()))?;
    atomic_write(&out_dir.join(SPEAKER_INVENTORY), &inventory)?;

    Ok(CorpusManifests {
        train_real,
        train_synthetic,
        dev_real,
        test_real,
        speakers,
    })
}
