//! Federated rounds and FedAvg aggregation.
//!
//! The simulation is synchronous: each round every active node trains on its
//! local data starting from the current global model and sends either its
//! update or a drift alert. Node work runs in parallel; messages are then
//! merged in ascending node id order so the floating-point summation order
//! never depends on scheduling.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DigitSample;
use crate::driftdetect::{DetectorConfig, NodeDetector, NormalStatistics, Verdict};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams, TrainConfig, WeightUpdate, N_CLASSES, N_PARAMS};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Detection,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Detection => "detection",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Update {
        update: WeightUpdate,
        bias_delta: [f64; N_CLASSES],
        n_samples: usize,
    },
    DriftAlert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMessage {
    pub node_id: usize,
    pub round: usize,
    pub payload: Payload,
}

/// A federated node: local data plus its own drift detector.
#[derive(Debug, Clone)]
pub struct FederatedNode {
    pub id: usize,
    pub data: Vec<DigitSample>,
    pub detector: NodeDetector,
    pub train: TrainConfig,
}

impl FederatedNode {
    pub fn new(id: usize, data: Vec<DigitSample>, train: TrainConfig, detector: DetectorConfig) -> Self {
        Self {
            id,
            data,
            detector: NodeDetector::new(id, detector),
            train,
        }
    }

    /// Trains locally for one round and produces the message for the aggregator.
    pub fn step(&mut self, global: &ModelParams, round: usize, phase: Phase) -> Result<NodeMessage> {
        let cfg = TrainConfig {
            seed: rng::derive_seed(self.train.seed, &[rng::stream::TRAIN, self.id as u64, round as u64]),
            ..self.train
        };
        let result = model::train_local(global, &self.data, &cfg, self.id, round)?;
        let alert = match phase {
            Phase::Training => {
                self.detector.record_training_update(result.update.clone())?;
                false
            }
            Phase::Detection => self.detector.observe(&result.update)? == Verdict::Drifted,
        };
        let payload = if alert {
            Payload::DriftAlert
        } else {
            Payload::Update {
                update: result.update,
                bias_delta: result.bias_delta,
                n_samples: result.n_samples,
            }
        };
        Ok(NodeMessage {
            node_id: self.id,
            round,
            payload,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AggregatorState {
    pub global_params: ModelParams,
    pub round: usize,
    pub normal_stats: Option<NormalStatistics>,
    pub drifted_nodes: BTreeSet<usize>,
    pub known_nodes: BTreeSet<usize>,
}

impl AggregatorState {
    pub fn new(global_params: ModelParams, node_ids: impl IntoIterator<Item = usize>) -> Self {
        Self {
            global_params,
            round: 0,
            normal_stats: None,
            drifted_nodes: BTreeSet::new(),
            known_nodes: node_ids.into_iter().collect(),
        }
    }

    /// Pools per-node normal cluster distances into the threshold statistics.
    pub fn collect_normal_stats(&mut self, distances: &[f64]) -> Result<NormalStatistics> {
        let stats = collect_normal_stats(distances)?;
        self.normal_stats = Some(stats);
        Ok(stats)
    }
}

/// One row of the round report CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub phase: Phase,
    pub n_updates: usize,
    pub n_alerts: usize,
    pub global_train_accuracy: f64,
    /// Every node had drifted, so the global model was left as is.
    pub aggregation_skipped: bool,
}

pub fn collect_normal_stats(distances: &[f64]) -> Result<NormalStatistics> {
    NormalStatistics::from_distances(distances)
}

/// `global + Σ_i (n_i / Σ_j n_j) · delta_i` over the full parameter vector.
pub fn fed_avg(global: &ModelParams, updates: &[(Vec<f64>, usize)]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::Aggregation("no updates to aggregate".into()));
    }
    if let Some((bad, _)) = updates.iter().find(|(d, _)| d.len() != N_PARAMS) {
        return Err(Error::Shape {
            expected: N_PARAMS,
            actual: bad.len(),
        });
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Aggregation("updates carry zero samples in total".into()));
    }
    let mut flat = global.flat().to_vec();
    for (delta, n) in updates {
        let w = *n as f64 / total as f64;
        flat.iter_mut().zip(delta).for_each(|(p, d)| *p += w * d);
    }
    ModelParams::from_flat(flat)
}

/// Runs one synchronous round over every node that has not raised an alert.
pub fn run_round(
    state: &mut AggregatorState,
    nodes: &mut [FederatedNode],
    phase: Phase,
) -> Result<RoundReport> {
    if nodes.is_empty() {
        return Err(Error::Precondition("a round needs at least one node".into()));
    }
    if let Some(unknown) = nodes.iter().find(|n| !state.known_nodes.contains(&n.id)) {
        return Err(Error::Precondition(format!("node {} is not registered", unknown.id)));
    }
    let round = state.round;
    let global = &state.global_params;
    let excluded = &state.drifted_nodes;
    let mut messages = nodes
        .par_iter_mut()
        .filter(|n| !excluded.contains(&n.id))
        .map(|n| n.step(global, round, phase))
        .collect::<Result<Vec<_>>>()?;
    messages.sort_by_key(|m| m.node_id);

    let mut updates = Vec::with_capacity(messages.len());
    let mut n_alerts = 0;
    for msg in messages {
        match msg.payload {
            Payload::DriftAlert => {
                n_alerts += 1;
                state.drifted_nodes.insert(msg.node_id);
            }
            Payload::Update { update, bias_delta, n_samples } => {
                let mut full = update.delta;
                full.extend(bias_delta);
                updates.push((full, n_samples));
            }
        }
    }
    let n_updates = updates.len();
    let aggregation_skipped = updates.is_empty();
    if !aggregation_skipped {
        state.global_params = fed_avg(&state.global_params, &updates)?;
    }
    state.round += 1;

    let eval: Vec<&FederatedNode> = {
        let active: Vec<&FederatedNode> = nodes
            .iter()
            .filter(|n| !state.drifted_nodes.contains(&n.id))
            .collect();
        if active.is_empty() { nodes.iter().collect() } else { active }
    };
    let global_train_accuracy = global_accuracy(&state.global_params, &eval);

    Ok(RoundReport {
        round,
        phase,
        n_updates,
        n_alerts,
        global_train_accuracy,
        aggregation_skipped,
    })
}

fn global_accuracy(params: &ModelParams, nodes: &[&FederatedNode]) -> f64 {
    let (hits, total) = nodes
        .par_iter()
        .map(|n| {
            let hits = n
                .data
                .iter()
                .filter(|s| model::predict(params, s) == s.class_label)
                .count();
            (hits, n.data.len())
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 { 0.0 } else { hits as f64 / total as f64 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, partition_single_digit};
    use crate::driftdetect::ComponentCount;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_with(value: f64) -> Vec<f64> {
        vec![value; N_PARAMS]
    }

    #[test]
    fn single_update_is_applied_whole() {
        let global = ModelParams::init(1);
        let d: Vec<f64> = (0..N_PARAMS).map(|i| i as f64 * 1e-3).collect();
        let out = fed_avg(&global, &[(d.clone(), 5)]).unwrap();
        for ((o, g), di) in out.flat().iter().zip(global.flat()).zip(&d) {
            assert!((o - (g + di)).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_counts_average_evenly() {
        let global = ModelParams::zeros();
        let out = fed_avg(&global, &[(flat_with(1.0), 3), (flat_with(3.0), 3)]).unwrap();
        assert!(out.flat().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn weighted_by_sample_counts() {
        let global = ModelParams::zeros();
        let out = fed_avg(&global, &[(flat_with(6.0), 1), (flat_with(6.0), 2), (flat_with(6.0), 3)]).unwrap();
        assert!(out.flat().iter().all(|&v| (v - 6.0).abs() < 1e-12));
        let out = fed_avg(&global, &[(flat_with(6.0), 1), (flat_with(0.0), 2), (flat_with(12.0), 3)]).unwrap();
        // 6/6 + 0 + 36/6 = 7
        assert!(out.flat().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn aggregation_errors() {
        let global = ModelParams::zeros();
        assert!(matches!(fed_avg(&global, &[]), Err(Error::Aggregation(_))));
        assert!(matches!(fed_avg(&global, &[(vec![0.0; 3], 1)]), Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn fed_avg_matches_weighted_mean_and_is_permutation_invariant(
            seed in any::<u64>(), k in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let global = ModelParams::from_flat((0..N_PARAMS).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let updates: Vec<(Vec<f64>, usize)> = (0..k)
                .map(|_| ((0..N_PARAMS).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(1..500)))
                .collect();
            let out = fed_avg(&global, &updates).unwrap();
            let total: usize = updates.iter().map(|u| u.1).sum();
            let weights: Vec<f64> = updates.iter().map(|u| u.1 as f64 / total as f64).collect();
            prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in (0..N_PARAMS).step_by(97) {
                let oracle = global.flat()[j] + updates.iter().zip(&weights).map(|(u, w)| w * u.0[j]).sum::<f64>();
                prop_assert!((out.flat()[j] - oracle).abs() < 1e-12);
            }
            let mut reversed = updates.clone();
            reversed.reverse();
            let back = fed_avg(&global, &reversed).unwrap();
            for (a, b) in out.flat().iter().zip(back.flat()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // identical deltas: sample counts do not matter
            let same: Vec<(Vec<f64>, usize)> = updates.iter().map(|u| (updates[0].0.clone(), u.1)).collect();
            let out = fed_avg(&global, &same).unwrap();
            for j in (0..N_PARAMS).step_by(101) {
                prop_assert!((out.flat()[j] - (global.flat()[j] + updates[0].0[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normal_stats_examples() {
        let s = collect_normal_stats(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mu_norm, s.sigma_norm), (5.0, 0.0));
        let s = collect_normal_stats(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mu_norm, s.sigma_norm), (2.0, 1.0));
        assert!(matches!(collect_normal_stats(&[2.0]), Err(Error::Statistics(_))));
    }

    #[test]
    fn normal_stats_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mean = d.iter().sum::<f64>() / 10.0;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 10.0;
        let s = collect_normal_stats(&d).unwrap();
        assert!((s.mu_norm - mean).abs() < 1e-12);
        assert!((s.sigma_norm - var.sqrt()).abs() < 1e-12);
    }

    fn small_federation(n_nodes: usize) -> (AggregatorState, Vec<FederatedNode>) {
        let pool = generate_synthetic(40, 3);
        let parts = partition_single_digit(&pool, n_nodes, 40, 3).unwrap();
        let det = DetectorConfig { n_components: ComponentCount::Fixed(2), ..DetectorConfig::default() };
        let nodes: Vec<_> = parts
            .into_iter()
            .map(|p| FederatedNode::new(p.node_id, p.samples, TrainConfig::default(), det))
            .collect();
        let state = AggregatorState::new(ModelParams::init(3), nodes.iter().map(|n| n.id));
        (state, nodes)
    }

    #[test]
    fn clean_round_aggregates_every_node() {
        let (mut state, mut nodes) = small_federation(10);
        let report = run_round(&mut state, &mut nodes, Phase::Training).unwrap();
        assert_eq!(report.n_updates, 10);
        assert_eq!(report.n_alerts, 0);
        assert_eq!(state.round, 1);
        assert!(!report.aggregation_skipped);
        assert!(nodes.iter().all(|n| n.detector.training_updates().len() == 1));
    }

    #[test]
    fn drifted_nodes_never_contribute() {
        let (mut state, mut nodes) = small_federation(10);
        state.drifted_nodes.insert(6);
        let before = state.global_params.clone();
        let report = run_round(&mut state, &mut nodes, Phase::Training).unwrap();
        assert_eq!(report.n_updates, 9);
        assert!(nodes[6].detector.training_updates().is_empty());
        assert_eq!(state.drifted_nodes, BTreeSet::from([6]));

        // the aggregate equals FedAvg over the nine other nodes alone
        let mut others: Vec<FederatedNode> = small_federation(10).1;
        others.remove(6);
        let mut fresh = AggregatorState::new(before, others.iter().map(|n| n.id));
        run_round(&mut fresh, &mut others, Phase::Training).unwrap();
        assert_eq!(fresh.global_params, state.global_params);
    }

    #[test]
    fn all_drifted_skips_aggregation() {
        let (mut state, mut nodes) = small_federation(3);
        state.drifted_nodes.extend([0, 1, 2]);
        let before = state.global_params.clone();
        let report = run_round(&mut state, &mut nodes, Phase::Training).unwrap();
        assert!(report.aggregation_skipped);
        assert_eq!(report.n_updates, 0);
        assert_eq!(state.global_params, before);
        assert_eq!(state.round, 1);
    }

    #[test]
    fn empty_round_is_rejected() {
        let (mut state, _) = small_federation(2);
        assert!(matches!(run_round(&mut state, &mut [], Phase::Training), Err(Error::Precondition(_))));
    }

    #[test]
    fn alerts_exclude_sender_from_aggregation() {
        let (mut state, mut nodes) = small_federation(4);
        for _ in 0..12 {
            run_round(&mut state, &mut nodes, Phase::Training).unwrap();
        }
        let mut distances = Vec::new();
        for n in nodes.iter_mut() {
            n.detector.fit().unwrap();
            distances.push(n.detector.normal_distance().unwrap());
        }
        // a zero-width band around an impossible mean makes every check an alert
        let impossible = NormalStatistics::new(-1.0, 0.0).unwrap();
        for n in nodes.iter_mut() {
            n.detector.set_stats(impossible);
        }
        state.normal_stats = Some(impossible);
        let mut last = None;
        for _ in 0..10 {
            last = Some(run_round(&mut state, &mut nodes, Phase::Detection).unwrap());
        }
        let last = last.unwrap();
        assert_eq!(last.n_alerts, 4);
        assert!(last.aggregation_skipped);
        assert_eq!(state.drifted_nodes.len(), 4);
        let after = run_round(&mut state, &mut nodes, Phase::Detection).unwrap();
        assert_eq!((after.n_updates, after.n_alerts), (0, 0));
        assert!(distances.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn rounds_are_deterministic() {
        let (mut a, mut na) = small_federation(5);
        let (mut b, mut nb) = small_federation(5);
        for _ in 0..3 {
            run_round(&mut a, &mut na, Phase::Training).unwrap();
            run_round(&mut b, &mut nb, Phase::Training).unwrap();
        }
        assert_eq!(a.global_params, b.global_params);
    }
}
