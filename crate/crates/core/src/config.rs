//! One TOML file configuring a whole run.
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! are rejected. A single root `seed` drives all randomness, so the
//! per-section seed fields must be left at zero.
//!
//! ```toml
//! seed = 7
//!
//! [corpus]
//! num_speakers = 40
//!
//! [discovery]
//! num_speakers = 2
//! max_clusters = 6
//!
//! [evaluation]
//! durations = [20.0, 100.0, 300.0, 600.0]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::discovery::{DiscoveryConfig, Symmetrize};
use crate::embedder::EmbedderConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalOptions;
use crate::separator::SeparatorConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoverySection {
    /// Target speaker count N.
    pub num_speakers: usize,
    /// Cluster cap M.
    pub max_clusters: usize,
    pub threshold_percentile: f64,
    pub symmetrize: Symmetrize,
    pub kmeans_restarts: usize,
}

impl Default for DiscoverySection {
    fn default() -> Self {
        let d = DiscoveryConfig::default();
        Self {
            num_speakers: 2,
            max_clusters: d.max_clusters,
            threshold_percentile: d.threshold_percentile,
            symmetrize: d.symmetrize,
            kmeans_restarts: d.kmeans_restarts,
        }
    }
}

impl DiscoverySection {
    pub fn to_config(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            max_clusters: self.max_clusters,
            threshold_percentile: self.threshold_percentile,
            symmetrize: self.symmetrize,
            kmeans_restarts: self.kmeans_restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub embedder: EmbedderConfig,
    pub separator: SeparatorConfig,
    pub training: TrainConfig,
    pub discovery: DiscoverySection,
    pub evaluation: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            embedder: EmbedderConfig::default(),
            separator: SeparatorConfig::default(),
            training: TrainConfig::default(),
            discovery: DiscoverySection::default(),
            evaluation: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::format("run config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("run config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.training.seed != 0 || self.evaluation.seed != 0 {
            return Err(Error::invalid(
                "section seeds are derived from the root seed; set `seed` at the top level",
            ));
        }
        self.embedder.validate()?;
        self.separator.validate()?;
        self.training.validate()?;
        self.evaluation.validate()?;
        let n = self.discovery.num_speakers;
        if n < 1 || self.discovery.max_clusters < n {
            return Err(Error::invalid(format!(
                "need 1 <= N <= M, got N={n} M={}",
                self.discovery.max_clusters
            )));
        }
        if self.separator.num_speakers != n {
            return Err(Error::invalid(format!(
                "separator has {} outputs but discovery targets {n} speakers",
                self.separator.num_speakers
            )));
        }
        if self.separator.embed_dim != self.embedder.dim {
            return Err(Error::invalid(format!(
                "separator expects {}-dimensional profiles, embedder produces {}",
                self.separator.embed_dim, self.embedder.dim
            )));
        }
        Ok(())
    }

    /// Separator config for the chosen system.
    pub fn separator_for(&self, directed: bool) -> SeparatorConfig {
        SeparatorConfig {
            conditioned: directed,
            ..self.separator.clone()
        }
    }

    pub fn training_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            seed: self.seed,
            ..self.evaluation.clone()
        }
    }
}
