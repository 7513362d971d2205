use dss_core::discovery::{discover_from_embeddings, DiscoveryConfig};
use dss_core::training::hungarian_assign;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{adjusted_rand_index, all_permutations, blobs, ensure, ok, Outcome};

fn bounds(rng: &mut ChaCha8Rng, sets: usize) -> Result<(), String> {
    for t in 0..sets {
        let centers = rng.gen_range(1..=5);
        let sizes: Vec<usize> = (0..centers).map(|_| rng.gen_range(2..=20)).collect();
        let sigma = rng.gen_range(0.02..1.0);
        let (emb, _) = blobs(rng, &sizes, 16, sigma);
        let f = emb.num_frames();
        let m = rng.gen_range(1..=6usize).min(f);
        let n = rng.gen_range(1..=m.min(3));
        let cfg = DiscoveryConfig {
            max_clusters: m,
            kmeans_restarts: 10,
            ..Default::default()
        };
        let (clusters, profiles) = ok(discover_from_embeddings(&emb, n, &cfg, t as u64), "discovery")?;
        let c = clusters.num_clusters;
        ensure(n <= c && c <= m, || format!("set {t}: C={c} outside [{n}, {m}]"))?;
        ensure(profiles.len() == n, || format!("set {t}: {} profiles for N={n}", profiles.len()))?;
        ensure(clusters.cardinalities.iter().sum::<usize>() == f, || format!("set {t}: cardinalities"))?;
    }
    Ok(())
}

fn planted(rng: &mut ChaCha8Rng, k: usize, trials: usize) -> Result<f64, String> {
    let mut worst = 1.0f64;
    for t in 0..trials {
        let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(10..=30)).collect();
        let (emb, truth) = blobs(rng, &sizes, 16, 0.05);
        let (clusters, _) = ok(discover_from_embeddings(&emb, 2, &DiscoveryConfig::default(), t as u64), "discovery")?;
        ensure(clusters.num_clusters == k, || format!("{k}-blob trial {t}: found {} clusters", clusters.num_clusters))?;
        worst = worst.min(adjusted_rand_index(&clusters.labels, &truth));
    }
    Ok(worst)
}

fn hungarian(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Result<(), String> {
    let perms = all_permutations(n);
    for t in 0..count {
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
        // lexicographically first optimum
        let mut best = &perms[0];
        for p in &perms {
            if total(p) < total(best) - 1e-12 {
                best = p;
            }
        }
        let got = ok(hungarian_assign(&cost), "hungarian_assign")?;
        ensure(&got == best, || format!("{n}x{n} matrix {t}: {got:?} vs exhaustive {best:?}"))?;
    }
    Ok(())
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    bounds(&mut rng, 1000)?;
    let ari2 = planted(&mut rng, 2, 25)?;
    let ari3 = planted(&mut rng, 3, 25)?;
    ensure(ari2 == 1.0 && ari3 == 1.0, || format!("planted recovery ARI {ari2} / {ari3}"))?;
    hungarian(&mut rng, 4, 1000)?;
    hungarian(&mut rng, 5, 1000)?;
    Ok("N <= C <= M on 1000 random sets; planted 2- and 3-blob ARI 1.0 (25 each); \
        hungarian = exhaustive on 1000 4x4 + 1000 5x5"
        .into())
}
