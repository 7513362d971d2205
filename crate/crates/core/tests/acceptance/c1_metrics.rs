use dss_core::autodiff::SI_SDR_EPS;
use dss_core::training::{ordered_loss, pit_loss, si_sdr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{all_permutations, ensure, ok, random_signal, waveform, Outcome};

/// Independent SI-SDR with the same stabilizer as the library.
fn oracle_si_sdr(est: &[f64], reference: &[f64]) -> f64 {
    let dot: f64 = est.iter().zip(reference).map(|(a, b)| a * b).sum();
    let rr: f64 = reference.iter().map(|x| x * x).sum();
    let ee: f64 = est.iter().map(|x| x * x).sum();
    let alpha = dot / rr;
    let target: f64 = alpha * alpha * rr;
    let err: f64 = est.iter().zip(reference).map(|(e, r)| (e - alpha * r).powi(2)).sum();
    let guard = SI_SDR_EPS * ee + f64::MIN_POSITIVE;
    10.0 * ((target + guard) / (err + guard)).log10()
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // scale invariance, including the perfect-estimate case
    let mut worst_scale = 0.0f64;
    for trial in 0..200 {
        let r = random_signal(&mut rng, 256);
        let e = if trial % 10 == 0 {
            r.clone()
        } else {
            let noise = random_signal(&mut rng, 256);
            r.iter().zip(&noise).map(|(a, b)| a + rng.gen_range(0.0..2.0) * b).collect()
        };
        let base = ok(si_sdr(&e, &r), "si_sdr")?;
        for c in [0.1, 2.0, 10.0] {
            let scaled: Vec<f64> = e.iter().map(|x| c * x).collect();
            worst_scale = worst_scale.max((ok(si_sdr(&scaled, &r), "si_sdr")? - base).abs());
        }
    }
    ensure(worst_scale < 1e-9, || format!("scale invariance off by {worst_scale:e} dB"))?;

    let a = [1.0f64, 0.0, 0.0, 0.0];
    let b = [1.0f64, 1.0, 0.0, 0.0];
    let worked = [ok(si_sdr(&a, &b), "si_sdr")?, ok(si_sdr(&b, &a), "si_sdr")?];
    ensure(worked.iter().all(|v| v.abs() <= 1e-9), || format!("worked example gives {worked:?}"))?;

    // library against the oracle on random pairs
    let mut worst_oracle = 0.0f64;
    for _ in 0..500 {
        let r = random_signal(&mut rng, 64);
        let e = random_signal(&mut rng, 64);
        worst_oracle = worst_oracle.max((ok(si_sdr(&e, &r), "si_sdr")? - oracle_si_sdr(&e, &r)).abs());
    }
    ensure(worst_oracle < 1e-9, || format!("si_sdr differs from the oracle by {worst_oracle:e}"))?;

    // PIT never above the ordered loss, and equal to the brute-force minimum
    let mut worst_pit = 0.0f64;
    for trial in 0..1000 {
        let n = 2 + trial % 3;
        let refs: Vec<Vec<f64>> = (0..n).map(|_| random_signal(&mut rng, 64)).collect();
        // estimates loosely tied to a random permutation of the references
        let perm = &all_permutations(n)[rng.gen_range(0..(1..=n).product::<usize>())];
        let ests: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let noise = random_signal(&mut rng, 64);
                refs[perm[j]].iter().zip(&noise).map(|(r, z)| r + 1.5 * z).collect()
            })
            .collect();
        let ew: Vec<_> = ests.iter().map(|v| waveform(v)).collect();
        let rw: Vec<_> = refs.iter().map(|v| waveform(v)).collect();
        let (pit, best) = ok(pit_loss(&ew, &rw), "pit_loss")?;
        let ordered = ok(ordered_loss(&ew, &rw), "ordered_loss")?;
        ensure(pit <= ordered + 1e-12, || format!("pit {pit} above ordered {ordered}"))?;

        let as64 = |w: &dss_core::audio::Waveform| w.samples().iter().map(|&x| x as f64).collect::<Vec<_>>();
        let (e64, r64): (Vec<_>, Vec<_>) = (ew.iter().map(as64).collect(), rw.iter().map(as64).collect());
        let brute = all_permutations(n)
            .iter()
            .map(|p| -(0..n).map(|j| oracle_si_sdr(&e64[j], &r64[p[j]])).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        worst_pit = worst_pit.max((pit - brute).abs());
        let at_best = -(0..n).map(|j| oracle_si_sdr(&e64[j], &r64[best[j]])).sum::<f64>() / n as f64;
        ensure((at_best - brute).abs() < 1e-9, || format!("returned permutation {best:?} is not optimal"))?;
    }
    ensure(worst_pit < 1e-9, || format!("pit_loss differs from brute force by {worst_pit:e}"))?;

    Ok(format!(
        "scale |d|max {worst_scale:.1e}; worked example {:.1e} dB; oracle |d|max {worst_oracle:.1e}; \
         1000 PIT instances (N=2..4), brute-force |d|max {worst_pit:.1e}",
        worked[0].abs().max(worked[1].abs())
    ))
}
