//! Overlap-similarity stitching of independently separated chunks, and a
//! Monte Carlo model of how junction errors propagate along a recording.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{ChunkPlan, Waveform};
use crate::error::{Error, Result};
use crate::training::si_sdr;
use crate::util::{permutations, rng_for};

/// Similarity between the overlapping parts of two channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    #[default]
    SiSdr,
    /// Normalized cross-correlation at lag zero.
    CrossCorrelation,
}

impl Similarity {
    fn score(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            // a silent channel carries no evidence either way
            Similarity::SiSdr => si_sdr(b, a).unwrap_or(0.0),
            Similarity::CrossCorrelation => {
                let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
                for (&x, &y) in a.iter().zip(b) {
                    ab += x as f64 * y as f64;
                    aa += (x as f64).powi(2);
                    bb += (y as f64).powi(2);
                }
                if aa == 0.0 || bb == 0.0 {
                    0.0
                } else {
                    ab / (aa * bb).sqrt()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JunctionDecision {
    /// `relative[j]`: channel of the later chunk continuing channel `j` of
    /// the earlier one, both in their native order.
    pub relative: Vec<usize>,
    /// Best score minus the runner-up (infinite with one channel).
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StitchState {
    /// Per chunk, output channel `j` is taken from native channel `perm[j]`.
    pub chunk_permutations: Vec<Vec<usize>>,
    pub junctions: Vec<JunctionDecision>,
}

impl StitchState {
    pub fn current(&self) -> Option<&[usize]> {
        self.chunk_permutations.last().map(|p| p.as_slice())
    }

    /// One line per junction: index, relative permutation, cumulative
    /// permutation of the later chunk, and margin.
    pub fn to_text(&self) -> String {
        let join = |p: &[usize]| p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        for (k, j) in self.junctions.iter().enumerate() {
            let _ = writeln!(
                out,
                "junction={} relative={} cumulative={} margin={:.6}",
                k + 1,
                join(&j.relative),
                join(&self.chunk_permutations[k + 1]),
                j.margin
            );
        }
        out
    }
}

pub fn stitch(chunks: &[Vec<Waveform>], plan: &ChunkPlan) -> Result<(Vec<Waveform>, StitchState)> {
    stitch_with(chunks, plan, Similarity::SiSdr)
}

/// Join chunk outputs left to right. At each junction the permutation of
/// the later chunk maximizing summed similarity over the overlap is chosen
/// (identity wins ties) and composed with the running permutation; the
/// overlap itself is a linear cross-fade.
pub fn stitch_with(
    chunks: &[Vec<Waveform>],
    plan: &ChunkPlan,
    similarity: Similarity,
) -> Result<(Vec<Waveform>, StitchState)> {
    if chunks.len() != plan.len() || chunks.is_empty() {
        return Err(Error::shape(format!("{} chunk outputs for {} planned chunks", chunks.len(), plan.len())));
    }
    if plan.len() > 1 && plan.overlap_samples() == 0 {
        return Err(Error::invalid("stitching needs overlapping chunks; use directed separation for zero overlap"));
    }
    let n = chunks[0].len();
    if n == 0 {
        return Err(Error::Empty("chunks carry no channels".into()));
    }
    for (c, &(s, e)) in chunks.iter().zip(&plan.boundaries) {
        if c.len() != n || c.iter().any(|w| w.len() != e - s) {
            return Err(Error::shape("chunk outputs do not match the plan"));
        }
    }
    let sr = chunks[0][0].sample_rate();
    let perms = permutations(n);
    let identity: Vec<usize> = (0..n).collect();
    let mut state = StitchState {
        chunk_permutations: vec![identity],
        junctions: Vec::new(),
    };
    let mut out = vec![vec![0.0f32; plan.total_samples]; n];
    let (s0, e0) = plan.boundaries[0];
    for (o, w) in out.iter_mut().zip(&chunks[0]) {
        o[s0..e0].copy_from_slice(w.samples());
    }

    for k in 1..chunks.len() {
        let (ps, pe) = plan.boundaries[k - 1];
        let (s, e) = plan.boundaries[k];
        let (lo, hi) = (s, pe.min(e));
        let prev = &chunks[k - 1];
        let next = &chunks[k];
        let mut scores: Vec<(f64, &Vec<usize>)> = Vec::with_capacity(perms.len());
        for p in &perms {
            let total: f64 = (0..n)
                .map(|j| {
                    similarity.score(
                        &prev[j].samples()[lo - ps..hi - ps],
                        &next[p[j]].samples()[lo - s..hi - s],
                    )
                })
                .sum();
            scores.push((total, p));
        }
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i].0 > scores[best].0 {
                best = i;
            }
        }
        let runner_up = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, s)| s.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let relative = scores[best].1.clone();
        let prev_cum = state.chunk_permutations.last().expect("seeded with identity");
        let cum: Vec<usize> = prev_cum.iter().map(|&c| relative[c]).collect();

        let span = (hi - lo) as f64;
        for (j, o) in out.iter_mut().enumerate() {
            let w = next[cum[j]].samples();
            for t in lo..hi {
                let a = (t - lo + 1) as f64 / (span + 1.0);
                o[t] = ((1.0 - a) * o[t] as f64 + a * w[t - s] as f64) as f32;
            }
            o[hi..e].copy_from_slice(&w[hi - s..]);
        }
        state.junctions.push(JunctionDecision {
            relative,
            margin: scores[best].0 - runner_up,
        });
        state.chunk_permutations.push(cum);
    }
    let waves = out
        .into_iter()
        .map(|o| Waveform::new(o, sr))
        .collect::<Result<Vec<_>>>()?;
    Ok((waves, state))
}

/// Attribution accuracy by chunk position, and its mean over positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationCurve {
    pub per_position: Vec<f64>,
    pub mean: f64,
}

impl PropagationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,accuracy\n");
        for (k, a) in self.per_position.iter().enumerate() {
            let _ = writeln!(out, "{k},{a:.6}");
        }
        out
    }
}

/// Expected accuracy of chunk `k` (0-based) when every junction flips
/// independently with probability `p`.
pub fn parity_accuracy(k: usize, p: f64) -> f64 {
    (1.0 + (1.0 - 2.0 * p).powi(k as i32)) / 2.0
}

/// Monte Carlo over independent junction flips for two channels: chunk `k`
/// is correctly attributed iff an even number of the `k` junctions before
/// it flipped.
pub fn simulate_error_propagation(
    num_chunks: usize,
    junction_flip_prob: f64,
    trials: usize,
    seed: u64,
) -> Result<PropagationCurve> {
    if !(0.0..=1.0).contains(&junction_flip_prob) {
        return Err(Error::invalid(format!("flip probability {junction_flip_prob} outside [0, 1]")));
    }
    if num_chunks == 0 || trials == 0 {
        return Err(Error::invalid("need at least one chunk and one trial"));
    }
    let mut correct = vec![0usize; num_chunks];
    let mut rng = rng_for(seed, "stitch-sim", 0);
    for _ in 0..trials {
        let mut flipped = false;
        for (k, c) in correct.iter_mut().enumerate() {
            if k > 0 && rng.gen_bool(junction_flip_prob) {
                flipped = !flipped;
            }
            if !flipped {
                *c += 1;
            }
        }
    }
    let per_position: Vec<f64> = correct.iter().map(|&c| c as f64 / trials as f64).collect();
    let mean = per_position.iter().sum::<f64>() / num_chunks as f64;
    Ok(PropagationCurve { per_position, mean })
}
