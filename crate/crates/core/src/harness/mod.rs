//! End-to-end experiment runner.
//!
//! A run has two phases. System training: `n_training_rounds` drift-free
//! federated rounds, after which every node fits its PCA projector on the
//! updates it kept (all but the first `normal_warmup_rounds`), clusters its
//! own reduced updates and reports one normal cluster distance; the
//! aggregator pools those into the threshold statistics. Active detection:
//! every node receives fresh data (relabeled with the drifted concept on the
//! drifted nodes) and rounds continue until each node has produced
//! `detection_checks` verdicts or has raised an alert.

mod config;
mod report;

use std::collections::BTreeSet;

use rand::seq::index::sample;
use serde::Serialize;

use crate::dataset::{
    self, draw_partitions, generate_synthetic, relabel, ConceptMap, DigitPool, DigitSample, N_DIGITS,
};
use crate::driftdetect::{
    elbow_components, ClusterSummary, ComponentCount, DetectionRecord, NormalStatistics,
    ReducedUpdate, Verdict, MAX_AUTO_COMPONENTS,
};
use crate::error::{Error, Result};
use crate::federation::{run_round, AggregatorState, FederatedNode, Phase, RoundReport};
use crate::metrics::{self, CommSizes};
use crate::model::{ModelParams, N_WEIGHTS};
use crate::rng;

pub use config::{DataSource, ExperimentConfig, PartitionMode, DEFAULT_WARMUP_ROUNDS};
pub use report::{emit_report, REPORT_FILES};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl Confusion {
    fn tally(n_nodes: usize, injected: &BTreeSet<usize>, detected: &BTreeSet<usize>) -> Self {
        let mut c = Confusion::default();
        for node in 0..n_nodes {
            match (injected.contains(&node), detected.contains(&node)) {
                (true, true) => c.true_positives += 1,
                (true, false) => c.false_negatives += 1,
                (false, true) => c.false_positives += 1,
                (false, false) => c.true_negatives += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct NodeResult {
    pub node_id: usize,
    pub n_training_samples: usize,
    pub n_detection_samples: usize,
    pub normal_distance: f64,
    /// Leading explained-variance ratios of this node's updates.
    pub spectrum: Vec<f64>,
    pub normal_points: Vec<ReducedUpdate>,
    pub active_points: Vec<ReducedUpdate>,
    pub records: Vec<DetectionRecord>,
    /// Clustering behind the last reported distance (normal-only when no check ran).
    pub clustering: ClusterSummary,
    pub final_verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub drifted_digit: Option<u8>,
    pub injected: BTreeSet<usize>,
    pub detected: BTreeSet<usize>,
    pub n_components: usize,
    pub reduction_ratio: f64,
    pub mean_spectrum: Vec<f64>,
    pub stats: NormalStatistics,
    pub nodes: Vec<NodeResult>,
    pub rounds: Vec<RoundReport>,
    pub confusion: Confusion,
    pub alpha: f64,
    pub beta: f64,
    pub final_params: ModelParams,
}

impl ExperimentReport {
    /// Detected set equals injected set.
    pub fn exact_recovery(&self) -> bool {
        self.injected == self.detected
    }
}

/// Largest-remainder scaling of a node's training composition to `total` samples.
fn scaled_counts(train: &[usize; N_DIGITS], total: usize) -> [usize; N_DIGITS] {
    let sum: usize = train.iter().sum();
    let mut out = [0usize; N_DIGITS];
    let mut remainders = Vec::with_capacity(N_DIGITS);
    for d in 0..N_DIGITS {
        let exact = train[d] * total;
        out[d] = exact / sum;
        remainders.push((exact % sum, d));
    }
    let short = total - out.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, d) in remainders.iter().take(short) {
        out[d] += 1;
    }
    out
}

fn load_samples(cfg: &ExperimentConfig, demand: &[usize; N_DIGITS]) -> Result<Vec<DigitSample>> {
    match &cfg.data_source {
        DataSource::Synthetic => {
            let n = demand.iter().copied().max().unwrap_or(0).max(1);
            Ok(generate_synthetic(n, cfg.seed))
        }
        DataSource::Idx { images, labels } => dataset::load_idx(images, labels),
    }
}

fn choose_drifted(cfg: &ExperimentConfig) -> BTreeSet<usize> {
    if let Some(ids) = &cfg.drifted_node_ids {
        return ids.iter().copied().collect();
    }
    let mut rng = rng::rng_for(cfg.seed, &[rng::stream::DRIFTED_NODES]);
    match cfg.partition_mode {
        // only nodes holding a second-class digit can drift
        PartitionMode::SingleDigit { .. } => {
            let normal = ConceptMap::normal();
            let eligible: Vec<usize> = (0..cfg.n_nodes)
                .filter(|&n| normal.class_of(n as u8) == 1)
                .collect();
            sample(&mut rng, eligible.len(), cfg.drifted_node_count.min(eligible.len()))
                .into_iter()
                .map(|i| eligible[i])
                .collect()
        }
        PartitionMode::RandomMix { .. } => sample(&mut rng, cfg.n_nodes, cfg.drifted_node_count)
            .into_iter()
            .collect(),
    }
}

/// Runs both phases of one experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;

    let train_counts = match cfg.partition_mode {
        PartitionMode::SingleDigit { samples_per_node } => {
            dataset::partition::single_digit_counts(cfg.n_nodes, samples_per_node)?
        }
        PartitionMode::RandomMix { min_per_digit, max_per_digit } => {
            dataset::partition::random_mix_counts(cfg.n_nodes, min_per_digit, max_per_digit, cfg.seed)?
        }
    };
    let detect_counts: Vec<[usize; N_DIGITS]> = match cfg.detection_samples_per_node {
        None => train_counts.clone(),
        Some(total) => train_counts.iter().map(|c| scaled_counts(c, total)).collect(),
    };
    let mut demand = [0usize; N_DIGITS];
    for row in train_counts.iter().chain(&detect_counts) {
        for d in 0..N_DIGITS {
            demand[d] += row[d];
        }
    }

    let samples = load_samples(cfg, &demand)?;
    let mut pool = DigitPool::new(&samples, cfg.seed);
    drop(samples);
    let train_parts = draw_partitions(&mut pool, &train_counts)?;
    let detect_parts = draw_partitions(&mut pool, &detect_counts)?;
    drop(pool);

    let injected = choose_drifted(cfg);
    let normal = ConceptMap::normal();
    let (drifted_concept, drifted_digit) = if injected.is_empty() {
        (normal, None)
    } else {
        match cfg.partition_mode {
            // the drifted node's own digit is the one that changes class
            PartitionMode::SingleDigit { .. } => {
                let digit = *injected.iter().next().expect("non-empty") as u8;
                (normal.with_digit_moved(digit)?, Some(digit))
            }
            PartitionMode::RandomMix { .. } => {
                let (concept, digit) = dataset::inject_drift(&normal, cfg.seed)?;
                (concept, Some(digit))
            }
        }
    };

    let detector_cfg = cfg.detector();
    let mut nodes: Vec<FederatedNode> = train_parts
        .into_iter()
        .map(|p| FederatedNode::new(p.node_id, p.samples, cfg.train, detector_cfg))
        .collect();
    let n_training_samples: Vec<usize> = nodes.iter().map(|n| n.data.len()).collect();
    let mut state = AggregatorState::new(ModelParams::init(cfg.seed), nodes.iter().map(|n| n.id));
    let mut rounds = Vec::with_capacity(cfg.n_training_rounds + cfg.detection_rounds());

    for _ in 0..cfg.n_training_rounds {
        rounds.push(run_round(&mut state, &mut nodes, Phase::Training)?);
    }

    // Every node fits a wide projector first so the elbow can be read off
    // the mean spectrum; the chosen k is then shared by all nodes.
    let auto_cap = MAX_AUTO_COMPONENTS.min(cfg.stored_training_rounds());
    let wide = match cfg.n_components {
        ComponentCount::Fixed(k) => k.max(auto_cap),
        ComponentCount::Auto => auto_cap,
    };
    let projectors = nodes
        .iter()
        .map(|n| {
            let rows: Vec<&[f64]> = n.detector.training_updates().iter().map(|u| u.delta.as_slice()).collect();
            crate::driftdetect::fit_rows(&rows, wide)
        })
        .collect::<Result<Vec<_>>>()?;
    let spectra: Vec<Vec<f64>> = projectors.iter().map(|p| p.explained_variance_ratio.clone()).collect();
    let mean_spectrum: Vec<f64> = (0..wide)
        .map(|j| spectra.iter().map(|s| s[j]).sum::<f64>() / spectra.len() as f64)
        .collect();
    let k = match cfg.n_components {
        ComponentCount::Fixed(k) => k,
        ComponentCount::Auto => elbow_components(&mean_spectrum).min(wide),
    };
    let mut normal_distances = Vec::with_capacity(nodes.len());
    for (node, projector) in nodes.iter_mut().zip(&projectors) {
        node.detector.install_projector(projector.truncated(k)?)?;
        normal_distances.push(node.detector.normal_distance()?);
    }
    let stats = state.collect_normal_stats(&normal_distances)?;

    for (node, part) in nodes.iter_mut().zip(detect_parts) {
        node.detector.set_stats(stats);
        let concept = if injected.contains(&node.id) { drifted_concept } else { normal };
        node.data = relabel(&part.samples, &concept);
    }
    for _ in 0..cfg.detection_rounds() {
        rounds.push(run_round(&mut state, &mut nodes, Phase::Detection)?);
    }

    let detected = state.drifted_nodes.clone();
    let sizes = CommSizes::simulator();
    let alpha = metrics::alpha(cfg.n_training_rounds, &sizes)?;
    let beta = metrics::beta(cfg.n_nodes, detected.len(), &sizes)?;

    let node_results = nodes
        .iter()
        .zip(&normal_distances)
        .zip(spectra)
        .zip(&n_training_samples)
        .map(|(((node, &normal_distance), spectrum), &n_train)| {
            let det = &node.detector;
            let clustering = det
                .last_summary()
                .or(det.normal_summary())
                .cloned()
                .ok_or_else(|| Error::Precondition(format!("node {} never clustered", node.id)))?;
            Ok(NodeResult {
                node_id: node.id,
                n_training_samples: n_train,
                n_detection_samples: node.data.len(),
                normal_distance,
                spectrum,
                normal_points: det.normal_points().to_vec(),
                active_points: det.active_points().to_vec(),
                records: det.records().to_vec(),
                clustering,
                final_verdict: det.latest_verdict().unwrap_or(Verdict::Pending),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ExperimentReport {
        config: cfg.clone(),
        drifted_digit,
        confusion: Confusion::tally(cfg.n_nodes, &injected, &detected),
        injected,
        detected,
        n_components: k,
        reduction_ratio: 1.0 - k as f64 / N_WEIGHTS as f64,
        mean_spectrum,
        stats,
        nodes: node_results,
        rounds,
        alpha,
        beta,
        final_params: state.global_params,
    })
}
