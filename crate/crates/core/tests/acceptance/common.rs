use dss_core::audio::Waveform;
use dss_core::embedder::FrameEmbeddings;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `Ok(detail)` on pass, `Err(reason)` on failure.
pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn ok<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

pub fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn waveform(v: &[f64]) -> Waveform {
    Waveform::new(v.iter().map(|&x| x as f32).collect(), 8000).unwrap()
}

/// Every permutation of `0..n`, lexicographic.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Gaussian blobs around well-separated unit centers; returns embeddings
/// and the true blob of every frame.
pub fn blobs(rng: &mut ChaCha8Rng, sizes: &[usize], dim: usize, sigma: f64) -> (FrameEmbeddings, Vec<usize>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut centers: Vec<Vec<f64>> = Vec::new();
    while centers.len() < sizes.len() {
        let mut c: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.iter_mut().for_each(|x| *x /= n);
        if centers.iter().all(|o| o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() < 0.3) {
            centers.push(c);
        }
    }
    let mut values = Vec::new();
    let mut truth = Vec::new();
    // interleave so cluster identity is not tied to frame position
    let total: usize = sizes.iter().sum();
    let mut left = sizes.to_vec();
    for _ in 0..total {
        let c = loop {
            let c = rng.gen_range(0..sizes.len());
            if left[c] > 0 {
                break c;
            }
        };
        left[c] -= 1;
        values.extend(centers[c].iter().map(|x| (x + sigma * normal.sample(rng)) as f32));
        truth.push(c);
    }
    (FrameEmbeddings::new(values, dim, 0.5, 0.5).unwrap(), truth)
}

/// Adjusted Rand index of two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
    let sum_rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max = (sum_rows + sum_cols) / 2.0;
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}
