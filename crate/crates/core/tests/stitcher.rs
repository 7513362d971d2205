use dss_core::audio::{plan_chunks_for_len, Waveform};
use dss_core::stitcher::{parity_accuracy, simulate_error_propagation, stitch};
use dss_core::util::rng_for;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Plain re-implementation of SI-SDR for the junction oracle.
fn sisdr(est: &[f32], r: &[f32]) -> f64 {
    let dot: f64 = est.iter().zip(r).map(|(a, b)| *a as f64 * *b as f64).sum();
    let rr: f64 = r.iter().map(|b| (*b as f64).powi(2)).sum();
    let a = dot / rr;
    let t = a * a * rr;
    let n: f64 = est.iter().zip(r).map(|(e, b)| (*e as f64 - a * *b as f64).powi(2)).sum();
    10.0 * (t / n).log10()
}

#[test]
fn junction_errors_match_reimplemented_argmax() {
    let junctions = 50;
    let trials = 200;
    let sr = 8000;
    let plan = plan_chunks_for_len(51 * 64 + 8, sr, 72.0 / 8000.0, 8.0 / 8000.0).unwrap();
    assert_eq!(plan.len(), junctions + 1);
    let (mut stitched_errors, mut oracle_errors, mut agree) = (0usize, 0usize, 0usize);
    for trial in 0..trials {
        let mut rng = rng_for(99, "stitch-mc", trial);
        let src: Vec<Vec<f32>> = (0..2)
            .map(|_| (0..plan.total_samples).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        // 5 dB SNR: noise power = signal power / 10^0.5
        let noise = Normal::new(0.0, (10f64.powf(-0.5)).sqrt()).unwrap();
        let swaps: Vec<bool> = (0..plan.len()).map(|_| rng.gen_bool(0.5)).collect();
        let chunks: Vec<Vec<Waveform>> = plan
            .boundaries
            .iter()
            .zip(&swaps)
            .map(|(&(s, e), &swap)| {
                let mut ch: Vec<Waveform> = src
                    .iter()
                    .map(|x| {
                        let v = x[s..e].iter().map(|&v| v + noise.sample(&mut rng) as f32).collect();
                        Waveform::new(v, sr).unwrap()
                    })
                    .collect();
                if swap {
                    ch.reverse();
                }
                ch
            })
            .collect();
        let (_, state) = stitch(&chunks, &plan).unwrap();
        for k in 1..plan.len() {
            let truth_swap = swaps[k] != swaps[k - 1];
            let got_swap = state.junctions[k - 1].relative == vec![1, 0];
            let (ps, pe) = plan.boundaries[k - 1];
            let (s, _) = plan.boundaries[k];
            let a = |c: usize| &chunks[k - 1][c].samples()[s - ps..pe - ps];
            let b = |c: usize| &chunks[k][c].samples()[..pe - s];
            let keep = sisdr(b(0), a(0)) + sisdr(b(1), a(1));
            let swap = sisdr(b(1), a(0)) + sisdr(b(0), a(1));
            let oracle_swap = swap > keep;
            stitched_errors += (got_swap != truth_swap) as usize;
            oracle_errors += (oracle_swap != truth_swap) as usize;
            agree += (oracle_swap == got_swap) as usize;
        }
    }
    let total = (junctions * trials as usize) as f64;
    let (r1, r2) = (stitched_errors as f64 / total, oracle_errors as f64 / total);
    assert!(r1 > 0.0, "the setting should produce some junction errors");
    assert!((r1 - r2).abs() <= 0.01, "{r1} vs {r2}");
    assert!(agree as f64 / total >= 0.99);
}

#[test]
fn parity_curve_matches_closed_form() {
    let trials = 10_000;
    let p = 0.05;
    let c = simulate_error_propagation(60, p, trials, 3).unwrap();
    for (k, &a) in c.per_position.iter().enumerate() {
        let want = parity_accuracy(k, p);
        let sigma = (want * (1.0 - want) / trials as f64).sqrt();
        assert!((a - want).abs() <= 3.0 * sigma + 1e-12, "k={k}: {a} vs {want}");
    }
}
