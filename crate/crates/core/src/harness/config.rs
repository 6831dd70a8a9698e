//! Experiment configuration and the four built-in presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{ConceptMap, N_DIGITS};
use crate::driftdetect::{ComponentCount, DetectorConfig};
use crate::error::{Error, Result};
use crate::model::TrainConfig;

/// Preset warm-up. The first global updates move the model from its random
/// initialization and dwarf every later update; with them in storage the
/// normal two-cluster split is the warm-up itself.
pub const DEFAULT_WARMUP_ROUNDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PartitionMode {
    /// Node `i` holds only digit `i`.
    SingleDigit { samples_per_node: usize },
    /// Every (node, digit) count drawn uniformly from `min..=max`.
    RandomMix { min_per_digit: usize, max_per_digit: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx { images: PathBuf, labels: PathBuf },
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    /// `synthetic` or `idx:IMAGES,LABELS`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            return Ok(DataSource::Synthetic);
        }
        let paths = s
            .strip_prefix("idx:")
            .ok_or_else(|| Error::Config(format!("unknown data source `{s}`")))?;
        match paths.split_once(',') {
            Some((images, labels)) if !images.is_empty() && !labels.is_empty() => Ok(DataSource::Idx {
                images: images.into(),
                labels: labels.into(),
            }),
            _ => Err(Error::Config(format!("expected idx:IMAGES,LABELS, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub n_nodes: usize,
    pub n_training_rounds: usize,
    /// Leading training rounds kept out of each node's normal storage.
    pub normal_warmup_rounds: usize,
    pub detection_interval: usize,
    /// Number of detection checks per node; one check takes `detection_interval` rounds.
    pub detection_checks: usize,
    pub partition_mode: PartitionMode,
    /// Size of each node's fresh detection-phase data. `None` repeats the
    /// node's training composition exactly.
    pub detection_samples_per_node: Option<usize>,
    pub drifted_node_count: usize,
    pub drifted_node_ids: Option<Vec<usize>>,
    pub threshold_multiplier: f64,
    pub n_components: ComponentCount,
    pub seed: u64,
    pub data_source: DataSource,
    pub train: TrainConfig,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
}

impl ExperimentConfig {
    fn base(id: &str, seed: u64, partition_mode: PartitionMode, drifted: Vec<usize>) -> Self {
        Self {
            experiment_id: id.to_string(),
            n_nodes: 10,
            n_training_rounds: 100,
            normal_warmup_rounds: DEFAULT_WARMUP_ROUNDS,
            detection_interval: 10,
            detection_checks: 1,
            partition_mode,
            detection_samples_per_node: None,
            drifted_node_count: drifted.len(),
            drifted_node_ids: Some(drifted),
            threshold_multiplier: 3.0,
            n_components: ComponentCount::Auto,
            seed,
            data_source: DataSource::Synthetic,
            train: TrainConfig { seed, ..TrainConfig::default() },
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
        }
    }

    /// Built-in experiments 1-4.
    pub fn preset(experiment: u8, seed: u64) -> Result<Self> {
        let mix = PartitionMode::RandomMix {
            min_per_digit: 100,
            max_per_digit: 500,
        };
        Ok(match experiment {
            1 => Self::base("1", seed, PartitionMode::SingleDigit { samples_per_node: 1000 }, vec![6]),
            2 => Self::base("2", seed, mix, vec![7]),
            3 => Self::base("3", seed, mix, vec![6, 9]),
            4 => Self::base("4", seed, mix, vec![1, 3, 4, 5]),
            other => return Err(Error::Config(format!("no preset for experiment {other}"))),
        })
    }

    /// Same setup as `preset` with no drift injected.
    pub fn drift_free(experiment: u8, seed: u64) -> Result<Self> {
        let mut cfg = Self::preset(experiment, seed)?;
        cfg.experiment_id = format!("{}-clean", cfg.experiment_id);
        cfg.drifted_node_count = 0;
        cfg.drifted_node_ids = Some(Vec::new());
        Ok(cfg)
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            n_components: self.n_components,
            detection_interval: self.detection_interval,
            threshold_multiplier: self.threshold_multiplier,
            kmeans_restarts: self.kmeans_restarts,
            kmeans_max_iter: self.kmeans_max_iter,
            warmup_rounds: self.normal_warmup_rounds,
            seed: self.seed,
        }
    }

    /// Training updates each node keeps for PCA and normal clustering.
    pub fn stored_training_rounds(&self) -> usize {
        self.n_training_rounds.saturating_sub(self.normal_warmup_rounds)
    }

    pub fn detection_rounds(&self) -> usize {
        self.detection_interval * self.detection_checks
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_nodes < 2 {
            return bad(format!("need at least 2 nodes for normal statistics, got {}", self.n_nodes));
        }
        if self.stored_training_rounds() < 2 {
            return bad(format!(
                "{} training rounds after a warm-up of {} leave fewer than 2 updates to fit PCA",
                self.n_training_rounds, self.normal_warmup_rounds
            ));
        }
        if self.detection_checks == 0 {
            return bad("detection_checks must be at least 1".into());
        }
        if self.drifted_node_count > self.n_nodes {
            return bad(format!(
                "drifted_node_count {} exceeds n_nodes {}",
                self.drifted_node_count, self.n_nodes
            ));
        }
        if let ComponentCount::Fixed(k) = self.n_components {
            if k > self.stored_training_rounds() {
                return bad(format!("{k} components need at least {k} stored training updates"));
            }
        }
        self.detector().validate()?;
        self.train.validate()?;

        if let Some(ids) = &self.drifted_node_ids {
            if ids.len() != self.drifted_node_count {
                return bad(format!(
                    "drifted_node_ids lists {} nodes but drifted_node_count is {}",
                    ids.len(),
                    self.drifted_node_count
                ));
            }
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != ids.len() {
                return bad("drifted_node_ids contains duplicates".into());
            }
            if let Some(id) = ids.iter().find(|&&id| id >= self.n_nodes) {
                return bad(format!("drifted node {id} is not a node id"));
            }
        }

        match self.partition_mode {
            PartitionMode::SingleDigit { samples_per_node } => {
                if self.n_nodes > N_DIGITS {
                    return bad(format!("single-digit mode supports at most {N_DIGITS} nodes"));
                }
                if samples_per_node == 0 {
                    return bad("samples_per_node must be at least 1".into());
                }
                if self.drifted_node_count > 1 {
                    return bad("single-digit mode relabels one digit, so at most one node can drift".into());
                }
                if let Some(ids) = &self.drifted_node_ids {
                    let normal = ConceptMap::normal();
                    if let Some(id) = ids.iter().find(|&&id| normal.class_of(id as u8) != 1) {
                        return bad(format!(
                            "node {id} holds digit {id}, which is not in the second class and cannot drift"
                        ));
                    }
                }
            }
            PartitionMode::RandomMix { min_per_digit, max_per_digit } => {
                if min_per_digit > max_per_digit {
                    return bad(format!("min_per_digit {min_per_digit} exceeds max_per_digit {max_per_digit}"));
                }
                if max_per_digit == 0 {
                    return bad("max_per_digit must be at least 1".into());
                }
            }
        }
        if self.detection_samples_per_node == Some(0) {
            return bad("detection_samples_per_node must be at least 1".into());
        }
        Ok(())
    }
}
