//! Pairing discovered profiles with ground-truth sources, and the
//! joint order flip used as augmentation.

use rand::Rng;

use super::assign::hungarian_assign;
use crate::audio::Waveform;
use crate::discovery::SpeakerProfiles;
use crate::embedder::{pooled_embedding, EmbedderConfig};
use crate::error::{Error, Result};
use crate::util::rng_for;

/// Profiles with their targets in matching order: target `j` belongs to
/// profile `j`. `permutation[j]` is the original index of target `j`.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub profiles: SpeakerProfiles,
    pub targets: Vec<Waveform>,
    pub permutation: Vec<usize>,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += (x as f64).powi(2);
        nb += (y as f64).powi(2);
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Assignment of profiles to reference identity vectors by maximum total
/// cosine similarity: entry `j` is the reference matched to profile `j`.
pub fn match_profiles(profiles: &SpeakerProfiles, references: &[Vec<f32>]) -> Result<Vec<usize>> {
    if profiles.len() != references.len() {
        return Err(Error::shape(format!(
            "{} profiles for {} targets",
            profiles.len(),
            references.len()
        )));
    }
    if references.iter().any(|r| r.len() != profiles.dim()) {
        return Err(Error::shape("reference embedding width differs from the profiles"));
    }
    let cost: Vec<Vec<f64>> = (0..profiles.len())
        .map(|i| references.iter().map(|r| -cosine(profiles.profile(i), r)).collect())
        .collect();
    hungarian_assign(&cost)
}

pub fn align_profiles_to_targets(
    profiles: &SpeakerProfiles,
    targets: &[Waveform],
    embedder: &EmbedderConfig,
) -> Result<AlignedPair> {
    let refs = targets
        .iter()
        .map(|t| pooled_embedding(t, embedder))
        .collect::<Result<Vec<_>>>()?;
    let permutation = match_profiles(profiles, &refs)?;
    Ok(AlignedPair {
        profiles: profiles.clone(),
        targets: permutation.iter().map(|&j| targets[j].clone()).collect(),
        permutation,
    })
}

/// With probability `flip_prob`, reverse profiles and targets together.
/// Returns the (possibly) flipped pair and whether it flipped.
pub fn flip_augment(pair: &AlignedPair, flip_prob: f64, seed: u64) -> Result<(AlignedPair, bool)> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::invalid(format!("flip probability {flip_prob} outside [0, 1]")));
    }
    let flip = rng_for(seed, "flip", 0).gen_bool(flip_prob);
    if !flip {
        return Ok((pair.clone(), false));
    }
    let n = pair.targets.len();
    let reverse: Vec<usize> = (0..n).rev().collect();
    Ok((
        AlignedPair {
            profiles: pair.profiles.permuted(&reverse),
            targets: pair.targets.iter().rev().cloned().collect(),
            permutation: pair.permutation.iter().rev().cloned().collect(),
        },
        true,
    ))
}
