//! Speaker discovery: spectral clustering of frame embeddings with an
//! eigengap estimate of the cluster count, then mean pooling of the largest
//! clusters into recording-level speaker profiles.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::embedder::{
    decode_matrix, embed_frames, encode_matrix, normalize_row, EmbedderConfig, EmbeddingRows,
    FrameEmbeddings,
};
use crate::error::{Error, Result};
use crate::util::{atomic_write, rng_for};

pub const DEFAULT_MAX_CLUSTERS: usize = 6;

const SYMMETRY_TOL: f64 = 1e-12;
const KMEANS_TOL: f64 = 1e-6;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    /// Upper bound M on the detected cluster count.
    pub max_clusters: usize,
    /// Row-thresholding percentile applied before building the Laplacian.
    pub threshold_percentile: f64,
    pub symmetrize: Symmetrize,
    pub kmeans_restarts: usize,
}

/// How the row-thresholded affinity is made symmetric again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetrize {
    /// Keep an edge kept by either endpoint.
    Max,
    /// Keep only mutual edges.
    Min,
    /// Average, so one-sided edges count half.
    #[default]
    Mean,
}

/// Affinity refinement applied before the Laplacian is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub percentile: f64,
    pub symmetrize: Symmetrize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            percentile: 50.0,
            symmetrize: Symmetrize::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn refinement(&self) -> Refinement {
        Refinement {
            percentile: self.threshold_percentile,
            symmetrize: self.symmetrize,
        }
    }
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            max_clusters: DEFAULT_MAX_CLUSTERS,
            threshold_percentile: 50.0,
            symmetrize: Symmetrize::default(),
            kmeans_restarts: 50,
        }
    }
}

/// Symmetric cosine-similarity matrix between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    matrix: DMatrix<f64>,
}

impl Affinity {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::shape("affinity must be square"));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in i + 1..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!(
                        "affinity is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

pub fn affinity_matrix(embeddings: &FrameEmbeddings) -> Result<Affinity> {
    let f = embeddings.num_frames();
    if f < 2 {
        return Err(Error::invalid(format!("need at least 2 frames, got {f}")));
    }
    let rows: Vec<Vec<f64>> = embeddings
        .rows()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter().map(|x| x / n).collect()
            } else {
                v
            }
        })
        .collect();
    let mut m = DMatrix::zeros(f, f);
    for i in 0..f {
        m[(i, i)] = if rows[i].iter().any(|&x| x != 0.0) { 1.0 } else { 0.0 };
        for j in i + 1..f {
            let c: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let c = c.clamp(-1.0, 1.0);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    Ok(Affinity { matrix: m })
}

/// Zero entries below each row's percentile, drop negative similarities
/// and symmetrize.
fn refine(affinity: &Affinity, refinement: Refinement) -> DMatrix<f64> {
    let percentile = refinement.percentile;
    let a = &affinity.matrix;
    let n = a.nrows();
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row: Vec<f64> = a.row(i).iter().cloned().collect();
        row.sort_by(f64::total_cmp);
        let rank = ((percentile / 100.0) * (n - 1) as f64).floor() as usize;
        let cut = row[rank.min(n - 1)];
        for j in 0..n {
            let v = a[(i, j)];
            if v >= cut {
                t[(i, j)] = v.max(0.0);
            }
        }
    }
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (t[(i, j)], t[(j, i)]);
            s[(i, j)] = match refinement.symmetrize {
                Symmetrize::Max => a.max(b),
                Symmetrize::Min => a.min(b),
                Symmetrize::Mean => 0.5 * (a + b),
            };
        }
    }
    s
}

/// Eigen-decomposition of the symmetric normalized Laplacian, eigenvalues
/// ascending with matching eigenvector columns.
fn laplacian_spectrum(affinity: &Affinity, refinement: Refinement) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let a = refine(affinity, refinement);
    let n = a.nrows();
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut lap = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = -a[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
            lap[(i, j)] = if i == j { 1.0 + v } else { v };
        }
    }
    let eig = SymmetricEigen::try_new(lap, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("Laplacian eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Laplacian eigenvalue".into()));
    }
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Cluster count from the largest eigengap, constrained to `[n, m]`.
///
/// The gap `lambda_{k+1} - lambda_k` is maximized over `k` in
/// `1..=min(m, F-1)` (earliest wins ties) and the result raised to `n`, so a
/// recording with one dominant cluster still yields `n` clusters.
pub fn estimate_num_clusters(
    affinity: &Affinity,
    n: usize,
    m: usize,
    refinement: Refinement,
) -> Result<(usize, Vec<f64>)> {
    if n < 1 || m < n {
        return Err(Error::invalid(format!("need 1 <= N <= M, got N={n} M={m}")));
    }
    let f = affinity.size();
    if f < m {
        return Err(Error::invalid(format!("{f} frames cannot host up to {m} clusters")));
    }
    Affinity::from_matrix(affinity.matrix.clone())?;
    let (values, _) = laplacian_spectrum(affinity, refinement)?;
    let kmax = m.min(f - 1);
    let gaps: Vec<f64> = (1..=kmax).map(|k| values[k] - values[k - 1]).collect();
    let mut best = 1;
    for k in 2..=kmax {
        if gaps[k - 1] > gaps[best - 1] {
            best = k;
        }
    }
    let c = best.max(n).min(m);
    assert!(n <= c && c <= m);
    Ok((c, gaps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster index per frame; 0 is the largest cluster.
    pub labels: Vec<usize>,
    pub num_clusters: usize,
    /// Frames per cluster, non-increasing.
    pub cardinalities: Vec<usize>,
    pub eigengaps: Vec<f64>,
}

pub fn spectral_cluster(
    affinity: &Affinity,
    c: usize,
    seed: u64,
    config: &DiscoveryConfig,
) -> Result<ClusterResult> {
    let f = affinity.size();
    if c < 1 || c > f {
        return Err(Error::invalid(format!("cluster count {c} outside 1..={f}")));
    }
    let (_, vectors) = laplacian_spectrum(affinity, config.refinement())?;
    let points: Vec<Vec<f64>> = (0..f)
        .map(|i| {
            let mut row: Vec<f64> = (0..c).map(|j| vectors[(i, j)]).collect();
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
            row
        })
        .collect();
    let raw = kmeans(&points, c, config.kmeans_restarts.max(1), seed);
    Ok(relabel_by_size(&raw, c))
}

/// Relabel so clusters are ordered by descending size, ties by lower
/// original index.
fn relabel_by_size(labels: &[usize], c: usize) -> ClusterResult {
    let mut counts = vec![0usize; c];
    for &l in labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut map = vec![0; c];
    for (new, &old) in order.iter().enumerate() {
        map[old] = new;
    }
    ClusterResult {
        labels: labels.iter().map(|&l| map[l]).collect(),
        num_clusters: c,
        cardinalities: order.iter().map(|&o| counts[o]).collect(),
        eigengaps: Vec::new(),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest
/// inertia wins.
pub(crate) fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts {
        let mut rng = rng_for(seed, "kmeans", r as u64);
        let (inertia, labels) = kmeans_once(points, k, &mut rng);
        if best.as_ref().map_or(true, |(b, _)| inertia < *b - 1e-12) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

fn kmeans_once<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (f64, Vec<usize>) {
    let n = points.len();
    let dim = points[0].len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut labels = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITER {
        let mut new_inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (mut bl, mut bd) = (0, f64::INFINITY);
            for (c, ctr) in centers.iter().enumerate() {
                let d = sq_dist(p, ctr);
                if d < bd {
                    bd = d;
                    bl = c;
                }
            }
            labels[i] = bl;
            new_inertia += bd;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the worst-fit point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]])
                            .total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let converged = (inertia - new_inertia).abs() <= KMEANS_TOL * inertia.abs().max(1e-12);
        inertia = new_inertia;
        if converged {
            break;
        }
    }
    (inertia, labels)
}

/// Ordered recording-level speaker profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfiles {
    values: Vec<f32>,
    dim: usize,
    pub cardinalities: Vec<usize>,
}

impl SpeakerProfiles {
    pub fn new(values: Vec<f32>, dim: usize, cardinalities: Vec<usize>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::shape("profile values do not form whole rows"));
        }
        if cardinalities.len() != values.len() / dim {
            return Err(Error::shape("one cardinality per profile required"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite profile value".into()));
        }
        Ok(Self {
            values,
            dim,
            cardinalities,
        })
    }

    /// Profiles from explicit vectors, each with cardinality 1.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("profile rows differ in length"));
        }
        Self::new(rows.concat(), dim, vec![1; rows.len()])
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn profile(&self, j: usize) -> &[f32] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.values
    }

    /// Copy with every profile scaled to unit norm.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for row in out.values.chunks_exact_mut(self.dim) {
            normalize_row(row);
        }
        out
    }

    /// Profiles reordered by `perm`: output slot `j` holds profile `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        let mut cards = Vec::with_capacity(perm.len());
        for &p in perm {
            values.extend_from_slice(self.profile(p));
            cards.push(self.cardinalities[p]);
        }
        Self {
            values,
            dim: self.dim,
            cardinalities: cards,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_matrix(self.len(), self.dim, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (rows, dim, values) = decode_matrix(bytes)?;
        Self::new(values, dim, vec![1; rows])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl EmbeddingRows for SpeakerProfiles {
    fn dim(&self) -> usize {
        self.dim
    }

    fn flat_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

/// Mean of the frame embeddings in each of the `n` largest clusters.
pub fn pool_top_n(
    embeddings: &FrameEmbeddings,
    clusters: &ClusterResult,
    n: usize,
) -> Result<SpeakerProfiles> {
    if clusters.num_clusters < n {
        return Err(Error::invalid(format!(
            "{} clusters cannot supply {n} profiles",
            clusters.num_clusters
        )));
    }
    if clusters.labels.len() != embeddings.num_frames() {
        return Err(Error::shape("one label per frame required"));
    }
    let dim = embeddings.dim();
    let mut sums = vec![vec![0.0f64; dim]; n];
    let mut counts = vec![0usize; n];
    for (row, &l) in embeddings.rows().zip(&clusters.labels) {
        if l < n {
            counts[l] += 1;
            sums[l].iter_mut().zip(row).for_each(|(s, &x)| *s += x as f64);
        }
    }
    let mut values = Vec::with_capacity(n * dim);
    for (s, &c) in sums.iter().zip(&counts) {
        if c == 0 {
            return Err(Error::Empty("cluster selected for pooling has no frames".into()));
        }
        values.extend(s.iter().map(|v| (v / c as f64) as f32));
    }
    SpeakerProfiles::new(values, dim, counts)
}

/// Everything discovery produced for one recording.
#[derive(Debug, Clone)]
pub struct Discovery {
    pub embeddings: FrameEmbeddings,
    pub clusters: ClusterResult,
    pub profiles: SpeakerProfiles,
}

impl Discovery {
    /// Human-readable cluster summary.
    pub fn summary(&self) -> String {
        let c = &self.clusters;
        let gaps: Vec<String> = c.eigengaps.iter().map(|g| format!("{g:.6}")).collect();
        let cards: Vec<String> = c.cardinalities.iter().map(|n| n.to_string()).collect();
        format!(
            "frames {}\nclusters {}\ncardinalities {}\neigengaps {}\nprofiles {}x{}\n",
            self.embeddings.num_frames(),
            c.num_clusters,
            cards.join(" "),
            gaps.join(" "),
            self.profiles.len(),
            self.profiles.dim()
        )
    }
}

pub fn discover_from_embeddings(
    embeddings: &FrameEmbeddings,
    n: usize,
    config: &DiscoveryConfig,
    seed: u64,
) -> Result<(ClusterResult, SpeakerProfiles)> {
    let affinity = affinity_matrix(embeddings)?;
    let (c, gaps) =
        estimate_num_clusters(&affinity, n, config.max_clusters, config.refinement())?;
    let mut clusters = spectral_cluster(&affinity, c, seed, config)?;
    clusters.eigengaps = gaps;
    let profiles = pool_top_n(embeddings, &clusters, n)?;
    Ok((clusters, profiles))
}

/// Embed, cluster and pool one recording into `n` speaker profiles.
pub fn discover(
    waveform: &Waveform,
    embedder: &EmbedderConfig,
    n: usize,
    config: &DiscoveryConfig,
    seed: u64,
) -> Result<Discovery> {
    let embeddings = embed_frames(waveform, embedder)?;
    let (clusters, profiles) = discover_from_embeddings(&embeddings, n, config, seed)?;
    Ok(Discovery {
        embeddings,
        clusters,
        profiles,
    })
}
