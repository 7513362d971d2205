//! Losses, profile alignment, RealSynMix batching and the DSS/USS training
//! loops.
//!
//! Both loops share one driver: items are drawn by [`RealSynMix`], a chunk
//! with both sources audible is cut from each, gradients are averaged over
//! the batch, clipped, and applied with Adam. The DSS loop additionally
//! discovers (and caches) recording-level profiles, aligns them to the
//! targets, and perturbs them with noise and order flips.

mod align;
mod assign;
mod loss;
mod sampler;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use align::{align_profiles_to_targets, flip_augment, match_profiles, AlignedPair};
pub use assign::hungarian_assign;
pub use loss::{ordered_loss, pit_loss, si_sdr, si_sdr_waveform};
pub use sampler::{BatchItem, Pool, RealSynMix};

use crate::audio::{seconds_to_samples, Waveform};
use crate::autodiff::{AdamState, Gradients, Graph};
use crate::corpus::{LoadedItem, Manifest};
use crate::discovery::{discover, DiscoveryConfig, SpeakerProfiles};
use crate::embedder::{add_gaussian_noise, pooled_embedding, EmbedderConfig};
use crate::error::{Error, Result};
use crate::separator::{SeparatorConfig, SeparatorModel};
use crate::util::{atomic_write, derive_seed, rng_for};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_HISTORY_FILE: &str = "loss_history.txt";

/// Where the profiles of a training item come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileSource {
    /// Speaker discovery on the mixture, aligned to the targets.
    Discovered,
    /// Pooled embeddings of the clean sources.
    Clean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub chunk_s: f64,
    /// Real items per synthetic item; `inf` for real only.
    pub sampling_coefficient: f64,
    pub flip_prob: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Batches per epoch; 0 means one pass worth of items.
    pub steps_per_epoch: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// A chunk is usable when every source carries at least this fraction
    /// of the mixture energy.
    pub min_source_energy_ratio: f64,
    pub real_profiles: ProfileSource,
    pub synthetic_profiles: ProfileSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-3,
            epochs: 30,
            chunk_s: 8.0,
            sampling_coefficient: 6.0,
            flip_prob: 0.5,
            noise_sigma: 0.05,
            seed: 0,
            steps_per_epoch: 0,
            grad_clip: 5.0,
            min_source_energy_ratio: 0.05,
            real_profiles: ProfileSource::Discovered,
            synthetic_profiles: ProfileSource::Clean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip_prob must lie in [0, 1]"));
        }
        if !(self.lr > 0.0) || !(self.chunk_s > 0.0) {
            return Err(Error::invalid("lr and chunk_s must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.grad_clip >= 0.0) || !(self.min_source_energy_ratio >= 0.0) {
            return Err(Error::invalid("noise_sigma, grad_clip and min_source_energy_ratio must be >= 0"));
        }
        if self.sampling_coefficient.is_nan() || self.sampling_coefficient < 0.0 {
            return Err(Error::invalid("sampling_coefficient must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEntry {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Per-step mean batch loss, serialized one `epoch step loss` line per step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub entries: Vec<LossEntry>,
}

impl LossHistory {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {:.9e}", e.epoch, e.step, e.loss);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::format("loss history", format!("line {}", n + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            entries.push(LossEntry {
                epoch: f[0].parse().map_err(|_| bad())?,
                step: f[1].parse().map_err(|_| bad())?,
                loss: f[2].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { entries })
    }

    /// Mean loss per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for e in &self.entries {
            let s = acc.entry(e.epoch).or_default();
            s.0 += e.loss;
            s.1 += 1;
        }
        acc.values().map(|(s, n)| s / *n as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SeparatorModel,
    pub history: LossHistory,
    /// PIT permutation counts (USS only).
    pub permutation_counts: BTreeMap<Vec<usize>, usize>,
    /// Items dropped because no chunk had every source audible.
    pub skipped_items: usize,
}

/// A loaded item plus, for DSS, its aligned profiles: slot `j` of
/// `profiles` belongs to `sources[perm[j]]`.
struct Prepared {
    item: LoadedItem,
    profiles: Option<(SpeakerProfiles, Vec<usize>)>,
}

enum Mode<'a> {
    Directed {
        embedder: &'a EmbedderConfig,
        discovery: &'a DiscoveryConfig,
    },
    Undirected,
}

struct Trainer<'a> {
    real: &'a Manifest,
    synthetic: &'a Manifest,
    config: &'a TrainConfig,
    mode: Mode<'a>,
    num_speakers: usize,
    cache: HashMap<(Pool, usize), Rc<Prepared>>,
}

/// Profiles from the clean sources, in source order.
fn clean_profiles(sources: &[Waveform], embedder: &EmbedderConfig) -> Result<SpeakerProfiles> {
    let rows = sources
        .iter()
        .map(|s| pooled_embedding(s, embedder))
        .collect::<Result<Vec<_>>>()?;
    SpeakerProfiles::from_rows(&rows)
}

fn aligned_profiles(
    item: &LoadedItem,
    source: ProfileSource,
    embedder: &EmbedderConfig,
    discovery: &DiscoveryConfig,
    n: usize,
    seed: u64,
) -> Result<(SpeakerProfiles, Vec<usize>)> {
    let identity: Vec<usize> = (0..n).collect();
    if source == ProfileSource::Clean {
        return Ok((clean_profiles(&item.sources, embedder)?, identity));
    }
    match discover(&item.mixture, embedder, n, discovery, seed) {
        Ok(found) => {
            let pair = align_profiles_to_targets(&found.profiles, &item.sources, embedder)?;
            Ok((pair.profiles, pair.permutation))
        }
        Err(e) => {
            log::warn!("discovery failed on {} ({e}); using clean-source profiles", item.id);
            Ok((clean_profiles(&item.sources, embedder)?, identity))
        }
    }
}

/// Pick a chunk start at which every source is audible; `None` when no
/// candidate qualifies and some source would be entirely silent.
fn pick_chunk(item: &LoadedItem, len: usize, ratio: f64, key: u64, seed: u64) -> Option<usize> {
    let total = item.mixture.len();
    let span = total - len;
    let mut rng = rng_for(seed, "chunk", key);
    let score = |start: usize| {
        let mix = item.mixture.slice(start, start + len).energy().max(f64::MIN_POSITIVE);
        item.sources
            .iter()
            .map(|s| s.slice(start, start + len).energy() / mix)
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = (0usize, -1.0f64);
    for _ in 0..16 {
        let start = if span == 0 { 0 } else { rng.gen_range(0..=span) };
        let s = score(start);
        if s >= ratio {
            return Some(start);
        }
        if s > best.1 {
            best = (start, s);
        }
    }
    (best.1 > 0.0).then_some(best.0)
}

impl<'a> Trainer<'a> {
    fn prepared(&mut self, item: BatchItem) -> Result<Rc<Prepared>> {
        if let Some(p) = self.cache.get(&(item.pool, item.index)) {
            return Ok(p.clone());
        }
        let manifest = match item.pool {
            Pool::Real => self.real,
            Pool::Synthetic => self.synthetic,
        };
        let loaded = manifest.load(item.index)?;
        if loaded.sources.len() != self.num_speakers {
            return Err(Error::shape(format!(
                "record {} has {} sources, the model separates {}",
                loaded.id,
                loaded.sources.len(),
                self.num_speakers
            )));
        }
        let profiles = match self.mode {
            Mode::Directed { embedder, discovery } => {
                let source = match item.pool {
                    Pool::Real => self.config.real_profiles,
                    Pool::Synthetic => self.config.synthetic_profiles,
                };
                let pool_tag = matches!(item.pool, Pool::Synthetic) as u64;
                let seed = derive_seed(self.config.seed, "discover", (pool_tag << 32) | item.index as u64);
                Some(aligned_profiles(&loaded, source, embedder, discovery, self.num_speakers, seed)?)
            }
            Mode::Undirected => None,
        };
        let p = Rc::new(Prepared { item: loaded, profiles });
        self.cache.insert((item.pool, item.index), p.clone());
        Ok(p)
    }

    /// Loss and gradients of one item; `None` when the item is skipped.
    fn item_gradients(
        &mut self,
        model: &SeparatorModel,
        item: BatchItem,
        key: u64,
    ) -> Result<Option<(f64, Gradients, Option<Vec<usize>>)>> {
        let prep = self.prepared(item)?;
        let cfg = self.config;
        let sr = prep.item.mixture.sample_rate();
        let len = seconds_to_samples(cfg.chunk_s, sr).min(prep.item.mixture.len());
        let Some(start) = pick_chunk(&prep.item, len, cfg.min_source_energy_ratio, key, cfg.seed) else {
            return Ok(None);
        };
        let mixture = prep.item.mixture.slice(start, start + len);
        let chunk_sources: Vec<Waveform> = prep.item.sources.iter().map(|s| s.slice(start, start + len)).collect();

        let (profiles, targets) = match &prep.profiles {
            Some((profiles, perm)) => {
                let noisy = add_gaussian_noise(profiles, cfg.noise_sigma, derive_seed(cfg.seed, "noise", key))?;
                let pair = AlignedPair {
                    profiles: noisy,
                    targets: perm.iter().map(|&j| chunk_sources[j].clone()).collect(),
                    permutation: perm.clone(),
                };
                let (pair, _) = flip_augment(&pair, cfg.flip_prob, derive_seed(cfg.seed, "flip", key))?;
                (Some(pair.profiles), pair.targets)
            }
            None => (None, chunk_sources),
        };

        let mut g = Graph::<f32>::new();
        let params = g.bind(&model.params);
        let outs = model.forward_graph(&mut g, &params, mixture.samples(), profiles.as_ref())?;
        let perm = match self.mode {
            Mode::Undirected => {
                let est = outs
                    .iter()
                    .map(|&o| Waveform::new(g.value(o).to_vec(), sr))
                    .collect::<Result<Vec<_>>>()?;
                Some(pit_loss(&est, &targets)?.1)
            }
            Mode::Directed { .. } => None,
        };
        let mut total = None;
        for (j, &o) in outs.iter().enumerate() {
            let r = perm.as_ref().map_or(j, |p| p[j]);
            let l = g.neg_si_sdr(o, targets[r].samples())?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let loss = g.scale(total.expect("at least one output"), 1.0 / outs.len() as f64);
        let value = g.scalar(loss).expect("scalar loss");
        let grads = g.backward(loss)?;
        Ok(Some((value, grads, perm)))
    }

    fn run(&mut self, mut model: SeparatorModel, out_dir: Option<&Path>) -> Result<TrainOutcome> {
        let cfg = self.config;
        cfg.validate()?;
        let sampler = RealSynMix::new(
            self.real.len(),
            self.synthetic.len(),
            cfg.batch_size,
            cfg.sampling_coefficient,
            cfg.seed,
        )?;
        let steps = if cfg.steps_per_epoch > 0 {
            cfg.steps_per_epoch
        } else {
            let used = if sampler.real_share() >= 1.0 {
                self.real.len()
            } else if sampler.real_share() <= 0.0 {
                self.synthetic.len()
            } else {
                self.real.len() + self.synthetic.len()
            };
            used.div_ceil(cfg.batch_size).max(1)
        };
        let mut adam = AdamState::new(&model.params, cfg.lr);
        let mut history = LossHistory::default();
        let mut perms = BTreeMap::new();
        let mut skipped = 0usize;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }

        for epoch in 0..cfg.epochs {
            for step in 0..steps {
                model.params.zero_grads();
                let mut sum = 0.0;
                let mut used = 0usize;
                for (k, item) in sampler.batch(epoch, step).into_iter().enumerate() {
                    let key = derive_seed(cfg.seed, "item", ((epoch as u64) << 32) | step as u64) ^ k as u64;
                    let Some((loss, grads, perm)) = self.item_gradients(&model, item, key)? else {
                        skipped += 1;
                        continue;
                    };
                    if !loss.is_finite() {
                        return Err(Error::Diverged { epoch, step, loss });
                    }
                    model.params.accumulate(&grads)?;
                    if let Some(p) = perm {
                        *perms.entry(p).or_insert(0) += 1;
                    }
                    sum += loss;
                    used += 1;
                }
                if used == 0 {
                    log::warn!("epoch {epoch} step {step}: every item skipped");
                    continue;
                }
                model.params.scale_grads(1.0 / used as f32);
                let norm = model.params.grad_norm();
                if !norm.is_finite() {
                    return Err(Error::Diverged { epoch, step, loss: norm });
                }
                if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                    model.params.scale_grads((cfg.grad_clip / norm) as f32);
                }
                adam.step(&mut model.params)?;
                history.entries.push(LossEntry {
                    epoch,
                    step,
                    loss: sum / used as f64,
                });
            }
            let mean = history.epoch_means().last().copied().unwrap_or(f64::NAN);
            log::info!("epoch {epoch}: mean loss {mean:.4}");
            if let Some(dir) = out_dir {
                model.save(&dir.join(CHECKPOINT_FILE))?;
                atomic_write(&dir.join(LOSS_HISTORY_FILE), history.to_text().as_bytes())?;
            }
        }
        Ok(TrainOutcome {
            model,
            history,
            permutation_counts: perms,
            skipped_items: skipped,
        })
    }
}

/// Train a conditioned separator with the order-consistent loss.
pub fn train_dss(
    model: SeparatorModel,
    real: &Manifest,
    synthetic: &Manifest,
    embedder: &EmbedderConfig,
    discovery: &DiscoveryConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if !model.config.conditioned {
        return Err(Error::invalid("directed training needs a conditioned model"));
    }
    embedder.validate()?;
    if embedder.dim != model.config.embed_dim {
        return Err(Error::shape(format!(
            "embedder width {} differs from the model's {}",
            embedder.dim, model.config.embed_dim
        )));
    }
    Trainer {
        real,
        synthetic,
        config,
        mode: Mode::Directed { embedder, discovery },
        num_speakers: model.config.num_speakers,
        cache: HashMap::new(),
    }
    .run(model, out_dir)
}

/// Train an unconditioned separator with the permutation-invariant loss.
pub fn train_uss(
    model: SeparatorModel,
    real: &Manifest,
    synthetic: &Manifest,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if model.config.conditioned {
        return Err(Error::invalid("undirected training needs an unconditioned model"));
    }
    Trainer {
        real,
        synthetic,
        config,
        mode: Mode::Undirected,
        num_speakers: model.config.num_speakers,
        cache: HashMap::new(),
    }
    .run(model, out_dir)
}

/// Mean loss over the non-overlapping chunks of every dev recording in
/// which all sources are audible: ordered loss against discovered and
/// aligned profiles for DSS, PIT loss for USS.
pub fn dev_loss(
    model: &SeparatorModel,
    dev: &Manifest,
    embedder: &EmbedderConfig,
    discovery: &DiscoveryConfig,
    chunk_s: f64,
    min_source_energy_ratio: f64,
    seed: u64,
) -> Result<f64> {
    let n = model.config.num_speakers;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..dev.len() {
        let item = dev.load(i)?;
        let aligned = if model.config.conditioned {
            let s = derive_seed(seed, "dev-discover", i as u64);
            Some(aligned_profiles(&item, ProfileSource::Discovered, embedder, discovery, n, s)?)
        } else {
            None
        };
        let len = seconds_to_samples(chunk_s, item.mixture.sample_rate()).min(item.mixture.len());
        let mut start = 0;
        while start + len <= item.mixture.len() {
            let mix = item.mixture.slice(start, start + len);
            let refs: Vec<Waveform> = item.sources.iter().map(|s| s.slice(start, start + len)).collect();
            let me = mix.energy();
            if me > 0.0 && refs.iter().all(|r| r.energy() >= min_source_energy_ratio * me && r.energy() > 0.0) {
                let l = match &aligned {
                    Some((profiles, perm)) => {
                        let est = model.forward_chunk(&mix, Some(profiles))?;
                        let targets: Vec<Waveform> = perm.iter().map(|&j| refs[j].clone()).collect();
                        ordered_loss(&est, &targets)?
                    }
                    None => pit_loss(&model.forward_chunk(&mix, None)?, &refs)?.0,
                };
                sum += l;
                count += 1;
            }
            start += len;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no dev chunk has every source audible".into()));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub coefficient: f64,
    pub dev_loss: f64,
}

/// Train one DSS model from scratch per candidate coefficient and score it
/// on the dev set. Rows come back sorted by coefficient.
#[allow(clippy::too_many_arguments)]
pub fn coefficient_search(
    candidates: &[f64],
    real: &Manifest,
    synthetic: &Manifest,
    dev: &Manifest,
    model_config: &SeparatorConfig,
    embedder: &EmbedderConfig,
    discovery: &DiscoveryConfig,
    config: &TrainConfig,
) -> Result<Vec<CoefficientRow>> {
    let mut rows = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let cfg = TrainConfig {
            sampling_coefficient: c,
            ..config.clone()
        };
        let model = SeparatorModel::new(model_config.clone(), derive_seed(config.seed, "model", 0))?;
        let out = train_dss(model, real, synthetic, embedder, discovery, &cfg, None)?;
        let dev_loss = dev_loss(
            &out.model,
            dev,
            embedder,
            discovery,
            cfg.chunk_s,
            cfg.min_source_energy_ratio,
            cfg.seed,
        )?;
        rows.push(CoefficientRow { coefficient: c, dev_loss });
    }
    rows.sort_by(|a, b| a.coefficient.total_cmp(&b.coefficient));
    Ok(rows)
}

/// Aligned table with the best (lowest-loss) row starred.
pub fn format_coefficient_table(rows: &[CoefficientRow]) -> String {
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.dev_loss.total_cmp(&b.1.dev_loss))
        .map(|(i, _)| i);
    let mut out = format!("{:>12}  {:>14}\n", "coefficient", "dev_neg_sisdr");
    for (i, r) in rows.iter().enumerate() {
        let mark = if Some(i) == best { " *" } else { "" };
        let _ = writeln!(out, "{:>12}  {:>14.4}{mark}", r.coefficient, r.dev_loss);
    }
    out
}
