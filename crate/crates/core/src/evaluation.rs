//! Chunk-level and recording-level SI-SDR, channel attribution and the
//! over-clustering ablation.
//!
//! A [`SeparationSystem`] turns a recording into `N` channels. Chunk-level
//! scores resolve the channel permutation per chunk; recording-level scores
//! fix one permutation per recording, which is what exposes stitching
//! errors on long inputs.

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{plan_chunks, seconds_to_samples, ChunkPlan, Waveform};
use crate::corpus::Manifest;
use crate::discovery::{discover, DiscoveryConfig, SpeakerProfiles};
use crate::embedder::{pooled_embedding, EmbedderConfig};
use crate::error::{Error, Result};
use crate::separator::SeparatorModel;
use crate::stitcher::{stitch_with, Similarity};
use crate::training::{match_profiles, si_sdr};
use crate::util::{derive_seed, permutations, rng_for, sha256_hex};

/// What a system knows about one recording besides its mixture. Only the
/// oracle-style systems look at `sources`.
#[derive(Debug, Clone, Copy)]
pub struct ItemContext<'a> {
    pub sources: &'a [Waveform],
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SystemOutput {
    pub channels: Vec<Waveform>,
    /// Source index each channel is meant to carry, when the system commits
    /// to an order up front (DSS via its profiles).
    pub expected_order: Option<Vec<usize>>,
}

pub trait SeparationSystem {
    fn name(&self) -> String;

    /// Recording-level channels, each as long as the mixture.
    fn separate(&self, mixture: &Waveform, ctx: &ItemContext) -> Result<SystemOutput>;

    /// Per-chunk channels on a non-overlapping plan. By default the
    /// recording-level output sliced at the chunk boundaries.
    fn separate_chunks(&self, mixture: &Waveform, plan: &ChunkPlan, ctx: &ItemContext) -> Result<Vec<Vec<Waveform>>> {
        let out = self.separate(mixture, ctx)?;
        Ok(plan
            .boundaries
            .iter()
            .map(|&(s, e)| out.channels.iter().map(|c| c.slice(s, e)).collect())
            .collect())
    }
}

/// Ground truth passed through.
#[derive(Debug, Clone, Default)]
pub struct OracleSystem;

impl SeparationSystem for OracleSystem {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn separate(&self, _mixture: &Waveform, ctx: &ItemContext) -> Result<SystemOutput> {
        Ok(SystemOutput {
            channels: ctx.sources.to_vec(),
            expected_order: Some((0..ctx.sources.len()).collect()),
        })
    }
}

/// The unprocessed mixture on every channel.
#[derive(Debug, Clone)]
pub struct MixtureSystem {
    pub num_speakers: usize,
}

impl SeparationSystem for MixtureSystem {
    fn name(&self) -> String {
        "mixture".into()
    }

    fn separate(&self, mixture: &Waveform, _ctx: &ItemContext) -> Result<SystemOutput> {
        Ok(SystemOutput {
            channels: vec![mixture.clone(); self.num_speakers],
            expected_order: None,
        })
    }
}

/// Discover profiles on the whole recording, then separate fixed-length
/// chunks in profile order.
#[derive(Debug, Clone)]
pub struct DssSystem {
    pub model: SeparatorModel,
    pub embedder: EmbedderConfig,
    pub discovery: DiscoveryConfig,
    pub chunk_s: f64,
    pub overlap_s: f64,
}

impl DssSystem {
    pub fn new(model: SeparatorModel, embedder: EmbedderConfig, discovery: DiscoveryConfig) -> Self {
        Self {
            model,
            embedder,
            discovery,
            chunk_s: 8.0,
            overlap_s: 0.0,
        }
    }
}

impl SeparationSystem for DssSystem {
    fn name(&self) -> String {
        format!("dss-m{}", self.discovery.max_clusters)
    }

    fn separate(&self, mixture: &Waveform, ctx: &ItemContext) -> Result<SystemOutput> {
        let plan = plan_chunks(mixture, self.chunk_s, self.overlap_s)?;
        let (channels, found) = self
            .model
            .separate_recording(mixture, &self.embedder, &self.discovery, &plan, ctx.seed)?;
        // the order the profiles commit to, judged from the clean sources
        let expected_order = if ctx.sources.is_empty() {
            None
        } else {
            let refs = ctx
                .sources
                .iter()
                .map(|s| pooled_embedding(s, &self.embedder))
                .collect::<Result<Vec<_>>>();
            match refs {
                Ok(refs) => Some(match_profiles(&found.profiles, &refs)?),
                Err(_) => None,
            }
        };
        Ok(SystemOutput {
            channels,
            expected_order,
        })
    }
}

/// Permutation-invariant separator applied chunk by chunk and stitched
/// through overlapping regions. Optional white noise at a fixed SNR is
/// added to every chunk output before stitching.
#[derive(Debug, Clone)]
pub struct UssSystem {
    pub model: SeparatorModel,
    pub chunk_s: f64,
    pub overlap_s: f64,
    pub chunk_noise_snr_db: Option<f64>,
    pub similarity: Similarity,
}

impl UssSystem {
    pub fn new(model: SeparatorModel) -> Self {
        Self {
            model,
            chunk_s: 8.0,
            overlap_s: 4.0,
            chunk_noise_snr_db: None,
            similarity: Similarity::SiSdr,
        }
    }

    fn chunk_outputs(&self, mixture: &Waveform, plan: &ChunkPlan, seed: u64) -> Result<Vec<Vec<Waveform>>> {
        let mut out = Vec::with_capacity(plan.len());
        for (k, &(s, e)) in plan.boundaries.iter().enumerate() {
            let mut chans = self.model.forward_chunk(&mixture.slice(s, e), None)?;
            if let Some(snr) = self.chunk_noise_snr_db {
                let mut rng = rng_for(seed, "chunk-noise", k as u64);
                for c in chans.iter_mut() {
                    add_noise_at_snr(c, snr, &mut rng);
                }
            }
            out.push(chans);
        }
        Ok(out)
    }
}

/// Add white Gaussian noise at `snr_db` relative to the channel's power.
fn add_noise_at_snr<R: Rng>(w: &mut Waveform, snr_db: f64, rng: &mut R) {
    let power = w.energy() / w.len().max(1) as f64;
    if power <= 0.0 {
        return;
    }
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    for v in w.samples_mut() {
        *v += normal.sample(rng) as f32;
    }
}

impl SeparationSystem for UssSystem {
    fn name(&self) -> String {
        match self.chunk_noise_snr_db {
            Some(snr) => format!("uss-stitch-snr{snr}"),
            None => "uss-stitch".into(),
        }
    }

    fn separate(&self, mixture: &Waveform, ctx: &ItemContext) -> Result<SystemOutput> {
        let plan = plan_chunks(mixture, self.chunk_s, self.overlap_s)?;
        let chunks = self.chunk_outputs(mixture, &plan, ctx.seed)?;
        let channels = if plan.len() == 1 {
            chunks.into_iter().next().expect("one chunk")
        } else {
            stitch_with(&chunks, &plan, self.similarity)?.0
        };
        Ok(SystemOutput {
            channels,
            expected_order: None,
        })
    }

    fn separate_chunks(&self, mixture: &Waveform, plan: &ChunkPlan, ctx: &ItemContext) -> Result<Vec<Vec<Waveform>>> {
        self.chunk_outputs(mixture, plan, ctx.seed)
    }
}

/// Ground-truth chunks whose channel order flips at each junction with a
/// fixed probability: the error mechanism of stitching in isolation.
#[derive(Debug, Clone)]
pub struct SimulatedFlipSystem {
    pub chunk_s: f64,
    pub flip_prob: f64,
}

impl SeparationSystem for SimulatedFlipSystem {
    fn name(&self) -> String {
        format!("sim-flip-p{}", self.flip_prob)
    }

    fn separate(&self, mixture: &Waveform, ctx: &ItemContext) -> Result<SystemOutput> {
        let plan = plan_chunks(mixture, self.chunk_s, 0.0)?;
        let n = ctx.sources.len();
        let mut rng = rng_for(ctx.seed, "sim-flip", 0);
        let mut out = vec![vec![0.0f32; mixture.len()]; n];
        let mut shift = 0usize;
        for (k, &(s, e)) in plan.boundaries.iter().enumerate() {
            if k > 0 && rng.gen_bool(self.flip_prob) {
                shift = (shift + 1) % n;
            }
            for (j, o) in out.iter_mut().enumerate() {
                o[s..e].copy_from_slice(&ctx.sources[(j + shift) % n].samples()[s..e]);
            }
        }
        Ok(SystemOutput {
            channels: out
                .into_iter()
                .map(|o| Waveform::new(o, mixture.sample_rate()))
                .collect::<Result<Vec<_>>>()?,
            expected_order: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub chunk_s: f64,
    /// Recording-level durations in seconds.
    pub durations: Vec<f64>,
    /// Chunks in which some source carries less than this fraction of the
    /// mixture energy are not scored.
    pub min_source_energy_ratio: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            chunk_s: 8.0,
            durations: vec![20.0, 100.0, 300.0, 600.0],
            min_source_energy_ratio: 0.05,
            seed: 0,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.chunk_s > 0.0) {
            return Err(Error::invalid("chunk_s must be positive"));
        }
        if self.durations.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("durations must be positive"));
        }
        if self.durations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("durations must be strictly ascending"));
        }
        Ok(())
    }
}

fn item_seed(opts: &EvalOptions, index: usize) -> u64 {
    derive_seed(opts.seed, "eval-item", index as u64)
}

fn chunk_active(mix: &Waveform, refs: &[Waveform], ratio: f64) -> bool {
    let me = mix.energy();
    me > 0.0 && refs.iter().all(|r| r.energy() > 0.0 && r.energy() >= ratio * me)
}

/// Mean SI-SDR over channels with `perm[j]` the reference of channel `j`.
fn mean_sisdr(est: &[Waveform], refs: &[Waveform], perm: &[usize]) -> Result<f64> {
    let mut s = 0.0;
    for (j, &r) in perm.iter().enumerate() {
        s += si_sdr(est[j].samples(), refs[r].samples())?;
    }
    Ok(s / perm.len() as f64)
}

/// Best permutation by mean SI-SDR; identity wins ties.
fn best_permutation(est: &[Waveform], refs: &[Waveform]) -> Result<(f64, Vec<usize>)> {
    if est.len() != refs.len() {
        return Err(Error::shape(format!("{} channels for {} sources", est.len(), refs.len())));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(refs.len()) {
        let v = mean_sisdr(est, refs, &p)?;
        if best.as_ref().map_or(true, |b| v > b.0) {
            best = Some((v, p));
        }
    }
    Ok(best.expect("at least one permutation"))
}

fn load_checked(manifest: &Manifest, i: usize) -> Result<crate::corpus::LoadedItem> {
    let item = manifest.load(i)?;
    if item.sources.is_empty() {
        return Err(Error::invalid(format!("record {} has no ground truth", item.id)));
    }
    Ok(item)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkScores {
    /// Mean best-permutation SI-SDR.
    pub sisdr: f64,
    /// Mean improvement over scoring the mixture itself.
    pub improvement: f64,
    pub chunks: usize,
}

/// Per-chunk best-permutation SI-SDR, averaged over the chunks of each
/// recording and then over recordings.
pub fn eval_chunk_sisdr(system: &dyn SeparationSystem, manifest: &Manifest, opts: &EvalOptions) -> Result<ChunkScores> {
    let (mut rec_sisdr, mut rec_imp, mut total) = (Vec::new(), Vec::new(), 0usize);
    for i in 0..manifest.len() {
        let item = load_checked(manifest, i)?;
        let plan = plan_chunks(&item.mixture, opts.chunk_s, 0.0)?;
        let ctx = ItemContext {
            sources: &item.sources,
            seed: item_seed(opts, i),
        };
        let chunks = system.separate_chunks(&item.mixture, &plan, &ctx)?;
        let (mut s, mut imp, mut n) = (0.0, 0.0, 0usize);
        for (est, &(a, b)) in chunks.iter().zip(&plan.boundaries) {
            let mix = item.mixture.slice(a, b);
            let refs: Vec<Waveform> = item.sources.iter().map(|w| w.slice(a, b)).collect();
            if !chunk_active(&mix, &refs, opts.min_source_energy_ratio) {
                continue;
            }
            let (v, _) = best_permutation(est, &refs)?;
            let identity: Vec<usize> = (0..refs.len()).collect();
            let base = mean_sisdr(&vec![mix; refs.len()], &refs, &identity)?;
            s += v;
            imp += v - base;
            n += 1;
        }
        if n > 0 {
            rec_sisdr.push(s / n as f64);
            rec_imp.push(imp / n as f64);
            total += n;
        }
    }
    if total == 0 {
        return Err(Error::Empty("no chunk with every source audible".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ChunkScores {
        sisdr: mean(&rec_sisdr),
        improvement: mean(&rec_imp),
        chunks: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationScore {
    pub duration_s: f64,
    pub sisdr: f64,
    pub recordings: usize,
}

/// Truncate every recording to each duration, run the full pipeline and
/// score it under one permutation per recording.
pub fn eval_recording_sisdr(
    system: &dyn SeparationSystem,
    manifest: &Manifest,
    opts: &EvalOptions,
) -> Result<Vec<DurationScore>> {
    opts.validate()?;
    let items = (0..manifest.len()).map(|i| load_checked(manifest, i)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for &d in &opts.durations {
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, item) in items.iter().enumerate() {
            let len = seconds_to_samples(d, item.mixture.sample_rate());
            if item.mixture.len() < len {
                log::info!("{}: shorter than {d} s, skipped", item.id);
                continue;
            }
            let mix = item.mixture.truncated(len);
            let refs: Vec<Waveform> = item.sources.iter().map(|s| s.truncated(len)).collect();
            if refs.iter().any(|r| r.energy() == 0.0) {
                log::info!("{}: a source is silent in the first {d} s, skipped", item.id);
                continue;
            }
            let ctx = ItemContext {
                sources: &refs,
                seed: item_seed(opts, i),
            };
            let est = system.separate(&mix, &ctx)?;
            sum += best_permutation(&est.channels, &refs)?.0;
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty(format!("no recording is at least {d} s long")));
        }
        out.push(DurationScore {
            duration_s: d,
            sisdr: sum / count as f64,
            recordings: count,
        });
    }
    Ok(out)
}

/// Fraction of scored chunks whose per-channel best-matching sources equal
/// `expected` (`expected[j]`: source of channel `j`).
pub fn chunk_attribution(
    channels: &[Waveform],
    sources: &[Waveform],
    plan: &ChunkPlan,
    expected: &[usize],
    mixture: &Waveform,
    min_source_energy_ratio: f64,
) -> Result<(usize, usize)> {
    let (mut hit, mut n) = (0usize, 0usize);
    for &(a, b) in &plan.boundaries {
        let refs: Vec<Waveform> = sources.iter().map(|w| w.slice(a, b)).collect();
        if !chunk_active(&mixture.slice(a, b), &refs, min_source_energy_ratio) {
            continue;
        }
        let mut ok = true;
        for (j, c) in channels.iter().enumerate() {
            let est = c.slice(a, b);
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (r, w) in refs.iter().enumerate() {
                let v = si_sdr(est.samples(), w.samples())?;
                if v > best.0 {
                    best = (v, r);
                }
            }
            ok &= best.1 == expected[j];
        }
        hit += ok as usize;
        n += 1;
    }
    Ok((hit, n))
}

/// Chunk attribution against the order the system commits to: the
/// profile order for DSS, otherwise the best recording-level permutation.
pub fn attribution_accuracy(system: &dyn SeparationSystem, manifest: &Manifest, opts: &EvalOptions) -> Result<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for i in 0..manifest.len() {
        let item = load_checked(manifest, i)?;
        let ctx = ItemContext {
            sources: &item.sources,
            seed: item_seed(opts, i),
        };
        let out = system.separate(&item.mixture, &ctx)?;
        let expected = match out.expected_order.clone() {
            Some(e) => e,
            None => best_permutation(&out.channels, &item.sources)?.1,
        };
        let plan = plan_chunks(&item.mixture, opts.chunk_s, 0.0)?;
        let (h, c) = chunk_attribution(
            &out.channels,
            &item.sources,
            &plan,
            &expected,
            &item.mixture,
            opts.min_source_energy_ratio,
        )?;
        hit += h;
        n += c;
    }
    if n == 0 {
        return Err(Error::Empty("no chunk with every source audible".into()));
    }
    Ok(hit as f64 / n as f64)
}

/// Mean cosine between each discovered profile and the pooled embedding of
/// the clean source it is matched to.
pub fn profile_purity(profiles: &SpeakerProfiles, sources: &[Waveform], embedder: &EmbedderConfig) -> Result<f64> {
    let refs = sources
        .iter()
        .map(|s| pooled_embedding(s, embedder))
        .collect::<Result<Vec<_>>>()?;
    let perm = match_profiles(profiles, &refs)?;
    let mut s = 0.0;
    for (j, &r) in perm.iter().enumerate() {
        let (p, q) = (profiles.profile(j), &refs[r]);
        let dot: f64 = p.iter().zip(q).map(|(a, b)| *a as f64 * *b as f64).sum();
        let np: f64 = p.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        let nq: f64 = q.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        s += if np > 0.0 && nq > 0.0 { dot / (np * nq) } else { 0.0 };
    }
    Ok(s / perm.len() as f64)
}

/// Profile purity of one recording at each maximum cluster count.
pub fn purity_by_max_clusters(
    mixture: &Waveform,
    sources: &[Waveform],
    embedder: &EmbedderConfig,
    discovery: &DiscoveryConfig,
    m_values: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    let n = sources.len();
    let embeddings = crate::embedder::embed_frames(mixture, embedder)?;
    m_values
        .iter()
        .map(|&m| {
            if m < n {
                return Err(Error::invalid(format!("max clusters {m} below speaker count {n}")));
            }
            let cfg = DiscoveryConfig {
                max_clusters: m,
                ..discovery.clone()
            };
            let (_, profiles) = crate::discovery::discover_from_embeddings(&embeddings, n, &cfg, seed)?;
            profile_purity(&profiles, sources, embedder)
        })
        .collect()
}

/// One report row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub system: String,
    pub max_clusters: Option<usize>,
    pub chunk_sisdr: f64,
    pub chunk_improvement: f64,
    /// One value per report duration.
    pub recording_sisdr: Vec<f64>,
    pub attribution: f64,
    pub purity: Option<f64>,
}

/// Run every measurement for one system.
pub fn evaluate_system(system: &dyn SeparationSystem, manifest: &Manifest, opts: &EvalOptions) -> Result<EvalRow> {
    let chunk = eval_chunk_sisdr(system, manifest, opts)?;
    let rec = eval_recording_sisdr(system, manifest, opts)?;
    Ok(EvalRow {
        system: system.name(),
        max_clusters: None,
        chunk_sisdr: chunk.sisdr,
        chunk_improvement: chunk.improvement,
        recording_sisdr: rec.iter().map(|d| d.sisdr).collect(),
        attribution: attribution_accuracy(system, manifest, opts)?,
        purity: None,
    })
}

/// Rerun discovery and separation for each maximum cluster count, keeping
/// everything else fixed.
pub fn ablate_over_clustering(
    model: &SeparatorModel,
    embedder: &EmbedderConfig,
    discovery: &DiscoveryConfig,
    manifest: &Manifest,
    m_values: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<EvalRow>> {
    let n = model.config.num_speakers;
    let mut rows = Vec::new();
    for &m in m_values {
        if m < n {
            return Err(Error::invalid(format!("max clusters {m} below speaker count {n}")));
        }
        let sys = DssSystem::new(
            model.clone(),
            embedder.clone(),
            DiscoveryConfig {
                max_clusters: m,
                ..discovery.clone()
            },
        );
        let mut row = evaluate_system(&sys, manifest, opts)?;
        let mut purity = 0.0;
        for i in 0..manifest.len() {
            let item = load_checked(manifest, i)?;
            let found = discover(&item.mixture, embedder, n, &sys.discovery, item_seed(opts, i))?;
            purity += profile_purity(&found.profiles, &item.sources, embedder)?;
        }
        row.max_clusters = Some(m);
        row.purity = Some(purity / manifest.len().max(1) as f64);
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub corpus_id: String,
    pub config_hash: String,
    pub durations: Vec<f64>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// `config_text` is hashed for provenance.
    pub fn new(corpus_id: impl Into<String>, config_text: &str, durations: Vec<f64>, rows: Vec<EvalRow>) -> Result<Self> {
        if durations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("report durations must be ascending"));
        }
        for r in &rows {
            let vals = [r.chunk_sisdr, r.chunk_improvement, r.attribution]
                .into_iter()
                .chain(r.recording_sisdr.iter().copied())
                .chain(r.purity);
            if vals.into_iter().any(|v| !v.is_finite()) || r.recording_sisdr.len() != durations.len() {
                return Err(Error::Numerical(format!("row {} has non-finite or missing values", r.system)));
            }
        }
        Ok(Self {
            corpus_id: corpus_id.into(),
            config_hash: sha256_hex(config_text.as_bytes()),
            durations,
            rows,
        })
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["system", "M", "chunk_sisdr", "chunk_sisdri"].iter().map(|s| s.to_string()).collect();
        h.extend(self.durations.iter().map(|d| format!("rec_{d}s")));
        h.push("attribution".into());
        h.push("purity".into());
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut c = vec![
                    r.system.clone(),
                    r.max_clusters.map_or("-".into(), |m| m.to_string()),
                    format!("{:.3}", r.chunk_sisdr),
                    format!("{:.3}", r.chunk_improvement),
                ];
                c.extend(r.recording_sisdr.iter().map(|v| format!("{v:.3}")));
                c.push(format!("{:.4}", r.attribution));
                c.push(r.purity.map_or("-".into(), |p| format!("{p:.4}")));
                c
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let header = self.header();
        let cells = self.cells();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| cells.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |row: &[String]| {
            row.iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = format!("# corpus {}  config {}\n", self.corpus_id, self.config_hash);
        out.push_str(&line(&header));
        out.push('\n');
        for r in &cells {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# corpus={},config={}\n", self.corpus_id, self.config_hash);
        out.push_str(&self.header().join(","));
        out.push('\n');
        for r in self.cells() {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }
}
