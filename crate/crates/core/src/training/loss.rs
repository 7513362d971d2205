//! SI-SDR metric and the two training objectives built on it.

use crate::audio::Waveform;
use crate::autodiff::{Real, SiSdrParts};
use crate::error::{Error, Result};
use crate::util::permutations;

/// Scale-invariant SDR in dB of `estimate` against `reference`.
pub fn si_sdr<A: Real, B: Real>(estimate: &[A], reference: &[B]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape(format!(
            "si-sdr of {} samples against {}",
            estimate.len(),
            reference.len()
        )));
    }
    Ok(SiSdrParts::compute(estimate, reference)?.si_sdr())
}

pub fn si_sdr_waveform(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    si_sdr(estimate.samples(), reference.samples())
}

fn check_counts(estimates: &[Waveform], references: &[Waveform]) -> Result<()> {
    if estimates.len() != references.len() || estimates.is_empty() {
        return Err(Error::shape(format!(
            "{} estimates for {} references",
            estimates.len(),
            references.len()
        )));
    }
    Ok(())
}

/// Mean negative SI-SDR with estimate `j` scored against reference `j`.
pub fn ordered_loss(estimates: &[Waveform], references: &[Waveform]) -> Result<f64> {
    check_counts(estimates, references)?;
    let mut total = 0.0;
    for (e, r) in estimates.iter().zip(references) {
        total -= si_sdr_waveform(e, r)?;
    }
    Ok(total / estimates.len() as f64)
}

/// Loss of every permutation, `perm[j]` being the reference paired with
/// estimate `j`, in lexicographic permutation order.
pub(crate) fn permutation_losses(
    estimates: &[Waveform],
    references: &[Waveform],
) -> Result<Vec<(Vec<usize>, f64)>> {
    check_counts(estimates, references)?;
    let n = estimates.len();
    let mut table = vec![vec![0.0; n]; n];
    for (i, e) in estimates.iter().enumerate() {
        for (j, r) in references.iter().enumerate() {
            table[i][j] = -si_sdr_waveform(e, r)?;
        }
    }
    Ok(permutations(n)
        .into_iter()
        .map(|p| {
            let l = p.iter().enumerate().map(|(i, &j)| table[i][j]).sum::<f64>() / n as f64;
            (p, l)
        })
        .collect())
}

/// Permutation-invariant loss: the minimum ordered loss over all pairings,
/// with the permutation achieving it (identity wins ties).
pub fn pit_loss(estimates: &[Waveform], references: &[Waveform]) -> Result<(f64, Vec<usize>)> {
    let all = permutation_losses(estimates, references)?;
    let mut best = all[0].clone();
    for (p, l) in all.into_iter().skip(1) {
        if l < best.1 {
            best = (p, l);
        }
    }
    Ok((best.1, best.0))
}
