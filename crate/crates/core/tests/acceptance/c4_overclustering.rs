use dss_core::corpus::{gen_conversation, sample_speakers, ConversationSpec, MIN_PAIR_F0_RATIO};
use dss_core::discovery::DiscoveryConfig;
use dss_core::embedder::EmbedderConfig;
use dss_core::evaluation::purity_by_max_clusters;
use dss_core::util::{derive_seed, rng_for};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::common::{ensure, ok, Outcome};

const RECORDINGS: usize = 100;

/// Paired one-sided test of purity(M=3) > purity(M=2) on 60 s toy
/// conversations at the default 10% overlap.
pub fn run() -> Outcome {
    let inv = ok(sample_speakers(40, 8000, 17), "speakers")?;
    let pool = [inv.train, inv.dev, inv.test].concat();
    let emb = EmbedderConfig::default();
    let disc = DiscoveryConfig::default();
    let mut rng = rng_for(17, "purity-pairs", 0);
    let (mut p2, mut p3) = (Vec::new(), Vec::new());
    while p2.len() < RECORDINGS {
        let (i, j) = (rng.gen_range(0..pool.len()), rng.gen_range(0..pool.len()));
        let (a, b) = (&pool[i], &pool[j]);
        if i == j || a.f0_hz.max(b.f0_hz) / a.f0_hz.min(b.f0_hz) < MIN_PAIR_F0_RATIO {
            continue;
        }
        let k = p2.len() as u64;
        let conv = ConversationSpec {
            duration_s: 60.0,
            seed: derive_seed(17, "purity-conv", k),
            ..Default::default()
        };
        let mix = ok(gen_conversation(a, b, &conv, 8000), "conversation")?;
        let p = ok(purity_by_max_clusters(&mix.mixture, &mix.sources, &emb, &disc, &[2, 3], k), "purity")?;
        p2.push(p[0]);
        p3.push(p[1]);
    }
    let n = RECORDINGS as f64;
    let diffs: Vec<f64> = p3.iter().zip(&p2).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (t, p_value) = if sd == 0.0 {
        (0.0, 1.0)
    } else {
        let t = mean / (sd / n.sqrt());
        (t, 1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t))
    };
    let m2 = p2.iter().sum::<f64>() / n;
    let m3 = p3.iter().sum::<f64>() / n;
    let detail = format!(
        "{RECORDINGS} recordings: purity M=2 {m2:.5}, M=3 {m3:.5}; paired t = {t:.3}, one-sided p = {p_value:.4}; \
         {} better, {} worse",
        diffs.iter().filter(|d| **d > 0.0).count(),
        diffs.iter().filter(|d| **d < 0.0).count()
    );
    ensure(m3 >= m2 && p_value < 0.05, || detail.clone())?;
    Ok(detail)
}
