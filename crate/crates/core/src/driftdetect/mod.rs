//! Per-node drift detection over weight updates.
//!
//! During system training a node stores its raw updates. At the end of that
//! phase it fits a PCA projector (frozen afterwards), reduces the stored
//! updates, clusters them into two groups and reports the distance between
//! the two centers. The aggregator pools those distances into
//! [`NormalStatistics`].
//!
//! During active detection every new update is reduced with the frozen
//! projector and appended to an active buffer. Each time the buffer length
//! reaches a multiple of the detection interval the node clusters the union
//! of normal and active points and tests the resulting center distance
//! against `mu ± m·sigma`.

mod kmeans;
mod pca;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WeightUpdate;
use crate::rng;

pub use kmeans::{kmeans2, lloyd, wcss, ClusterSummary, KMeansConfig};
pub use pca::{
    elbow_components, fit_pca, fit_rows, ComponentCount, PcaProjector, ELBOW_GAIN_FRACTION,
    MAX_AUTO_COMPONENTS, MIN_AUTO_COMPONENTS,
};

/// Euclidean distance between two cluster centers.
pub fn cluster_distance(c1: &[f64], c2: &[f64]) -> Result<f64> {
    if c1.len() != c2.len() {
        return Err(Error::Shape {
            expected: c1.len(),
            actual: c2.len(),
        });
    }
    Ok(c1
        .iter()
        .zip(c2)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt())
}

/// Mean and population standard deviation of drift-free cluster distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalStatistics {
    pub mu_norm: f64,
    pub sigma_norm: f64,
}

impl NormalStatistics {
    pub fn new(mu_norm: f64, sigma_norm: f64) -> Result<Self> {
        if !mu_norm.is_finite() || !sigma_norm.is_finite() || sigma_norm < 0.0 {
            return Err(Error::Statistics(format!(
                "invalid statistics mu={mu_norm} sigma={sigma_norm}"
            )));
        }
        Ok(Self { mu_norm, sigma_norm })
    }

    /// Two-pass mean and population variance (divide by N).
    pub fn from_distances(distances: &[f64]) -> Result<Self> {
        if distances.len() < 2 {
            return Err(Error::Statistics(format!(
                "need at least 2 distances, got {}",
                distances.len()
            )));
        }
        let n = distances.len() as f64;
        let mu = distances.iter().sum::<f64>() / n;
        let var = distances.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n;
        Self::new(mu, var.sqrt())
    }

    pub fn bounds(&self, multiplier: f64) -> (f64, f64) {
        let half = multiplier * self.sigma_norm;
        (self.mu_norm - half, self.mu_norm + half)
    }
}

/// True iff `c_dist` lies strictly outside `[mu − m·sigma, mu + m·sigma]`.
pub fn is_drifted(c_dist: f64, stats: &NormalStatistics, multiplier: f64) -> bool {
    let (lo, hi) = stats.bounds(multiplier);
    c_dist < lo || hi < c_dist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pending,
    Normal,
    Drifted,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pending => "pending",
            Verdict::Normal => "normal",
            Verdict::Drifted => "drifted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub n_components: ComponentCount,
    pub detection_interval: usize,
    pub threshold_multiplier: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    /// Training updates from rounds before this one are not stored; they take
    /// no part in the PCA fit or the normal clustering.
    pub warmup_rounds: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            n_components: ComponentCount::Auto,
            detection_interval: 10,
            threshold_multiplier: 3.0,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            warmup_rounds: 0,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.detection_interval == 0 {
            return Err(Error::Config("detection_interval must be at least 1".into()));
        }
        if !(self.threshold_multiplier > 0.0 && self.threshold_multiplier.is_finite()) {
            return Err(Error::Config("threshold_multiplier must be positive".into()));
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 {
            return Err(Error::Config("k-means restarts and iterations must be at least 1".into()));
        }
        if self.n_components == ComponentCount::Fixed(0) {
            return Err(Error::Config("n_components must be positive".into()));
        }
        Ok(())
    }

    fn kmeans(&self, coords: &[u64]) -> KMeansConfig {
        KMeansConfig {
            restarts: self.kmeans_restarts,
            max_iter: self.kmeans_max_iter,
            tol: 1e-9,
            seed: rng::derive_seed(self.seed, coords),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedUpdate {
    pub node_id: usize,
    pub round: usize,
    pub coords: Vec<f64>,
}

pub fn project(projector: &PcaProjector, update: &WeightUpdate) -> Result<ReducedUpdate> {
    Ok(ReducedUpdate {
        node_id: update.node_id,
        round: update.round,
        coords: projector.project_vec(&update.delta)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub verdict: Verdict,
    /// Present whenever clustering ran.
    pub summary: Option<ClusterSummary>,
}

/// Runs one detection step for a node.
///
/// Pending unless the active buffer is non-empty and its length is a multiple
/// of the detection interval; otherwise clusters `normal ∪ active` and
/// thresholds the center distance.
pub fn detect(
    normal: &[ReducedUpdate],
    active: &[ReducedUpdate],
    stats: Option<&NormalStatistics>,
    cfg: &DetectorConfig,
) -> Result<Detection> {
    cfg.validate()?;
    let stats = stats.ok_or_else(|| Error::Config("normal statistics are not available".into()))?;
    if active.is_empty() || !active.len().is_multiple_of(cfg.detection_interval) {
        return Ok(Detection {
            verdict: Verdict::Pending,
            summary: None,
        });
    }
    let points: Vec<Vec<f64>> = normal
        .iter()
        .chain(active)
        .map(|r| r.coords.clone())
        .collect();
    let node = normal.first().or(active.first()).map_or(0, |r| r.node_id) as u64;
    let summary = kmeans2(&points, &cfg.kmeans(&[node, active.len() as u64]))?;
    let verdict = if is_drifted(summary.distance, stats, cfg.threshold_multiplier) {
        Verdict::Drifted
    } else {
        Verdict::Normal
    };
    Ok(Detection {
        verdict,
        summary: Some(summary),
    })
}

/// One detection check as written to the per-node CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub node_id: usize,
    pub round: usize,
    pub c_dist: f64,
    pub mu_norm: f64,
    pub sigma_norm: f64,
    pub verdict: Verdict,
}

/// Drift detector state owned by a single node.
#[derive(Debug, Clone)]
pub struct NodeDetector {
    pub node_id: usize,
    cfg: DetectorConfig,
    training_updates: Vec<WeightUpdate>,
    projector: Option<PcaProjector>,
    normal: Vec<ReducedUpdate>,
    active: Vec<ReducedUpdate>,
    stats: Option<NormalStatistics>,
    normal_summary: Option<ClusterSummary>,
    last_summary: Option<ClusterSummary>,
    records: Vec<DetectionRecord>,
}

impl NodeDetector {
    pub fn new(node_id: usize, cfg: DetectorConfig) -> Self {
        Self {
            node_id,
            cfg,
            training_updates: Vec::new(),
            projector: None,
            normal: Vec::new(),
            active: Vec::new(),
            stats: None,
            normal_summary: None,
            last_summary: None,
            records: Vec::new(),
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Stores a drift-free update until the projector is fitted. Returns
    /// whether the update was kept (warm-up rounds are skipped).
    pub fn record_training_update(&mut self, update: WeightUpdate) -> Result<bool> {
        if self.projector.is_some() {
            return Err(Error::Precondition(
                "projector already fitted; training updates are closed".into(),
            ));
        }
        if update.round < self.cfg.warmup_rounds {
            return Ok(false);
        }
        self.training_updates.push(update);
        Ok(true)
    }

    pub fn training_updates(&self) -> &[WeightUpdate] {
        &self.training_updates
    }

    /// Fits a projector on the stored training updates using the configured
    /// component count.
    pub fn fit(&mut self) -> Result<&PcaProjector> {
        let projector = fit_pca(&self.training_updates, self.cfg.n_components)?;
        self.install_projector(projector)
    }

    /// Installs an externally fitted projector and reduces the stored updates.
    /// The raw updates are dropped; only reduced coordinates are kept.
    pub fn install_projector(&mut self, projector: PcaProjector) -> Result<&PcaProjector> {
        let normal = self
            .training_updates
            .iter()
            .map(|u| project(&projector, u))
            .collect::<Result<Vec<_>>>()?;
        self.normal = normal;
        self.training_updates = Vec::new();
        self.projector = Some(projector);
        Ok(self.projector.as_ref().expect("just installed"))
    }

    pub fn projector(&self) -> Option<&PcaProjector> {
        self.projector.as_ref()
    }

    /// Clusters the reduced training updates and returns the center distance.
    pub fn normal_distance(&mut self) -> Result<f64> {
        if self.projector.is_none() {
            return Err(Error::Precondition("projector not fitted".into()));
        }
        let points: Vec<Vec<f64>> = self.normal.iter().map(|r| r.coords.clone()).collect();
        let summary = kmeans2(&points, &self.cfg.kmeans(&[self.node_id as u64, 0]))?;
        let d = summary.distance;
        self.normal_summary = Some(summary);
        Ok(d)
    }

    pub fn set_stats(&mut self, stats: NormalStatistics) {
        self.stats = Some(stats);
    }

    /// Reduces an active-phase update, buffers it and runs a detection step.
    pub fn observe(&mut self, update: &WeightUpdate) -> Result<Verdict> {
        let projector = self
            .projector
            .as_ref()
            .ok_or_else(|| Error::Config("projector not fitted".into()))?;
        if self.stats.is_none() {
            return Err(Error::Config("normal statistics are not available".into()));
        }
        self.active.push(project(projector, update)?);
        let detection = detect(&self.normal, &self.active, self.stats.as_ref(), &self.cfg)?;
        if let (Some(summary), Some(stats)) = (detection.summary, self.stats) {
            self.records.push(DetectionRecord {
                node_id: self.node_id,
                round: update.round,
                c_dist: summary.distance,
                mu_norm: stats.mu_norm,
                sigma_norm: stats.sigma_norm,
                verdict: detection.verdict,
            });
            self.last_summary = Some(summary);
        }
        Ok(detection.verdict)
    }

    pub fn normal_points(&self) -> &[ReducedUpdate] {
        &self.normal
    }

    pub fn active_points(&self) -> &[ReducedUpdate] {
        &self.active
    }

    pub fn normal_summary(&self) -> Option<&ClusterSummary> {
        self.normal_summary.as_ref()
    }

    /// Clustering from the most recent detection check.
    pub fn last_summary(&self) -> Option<&ClusterSummary> {
        self.last_summary.as_ref()
    }

    pub fn records(&self) -> &[DetectionRecord] {
        &self.records
    }

    /// Latest non-pending verdict, if any check has run.
    pub fn latest_verdict(&self) -> Option<Verdict> {
        self.records.last().map(|r| r.verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(mu: f64, sigma: f64) -> NormalStatistics {
        NormalStatistics::new(mu, sigma).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(cluster_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cluster_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(cluster_distance(&[0.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn threshold_boundary_is_not_drift() {
        let s = stats(10.0, 1.0);
        assert!(!is_drifted(10.0, &s, 3.0));
        assert!(!is_drifted(13.0, &s, 3.0));
        assert!(is_drifted(13.01, &s, 3.0));
        assert!(!is_drifted(7.0, &s, 3.0));
        assert!(is_drifted(6.5, &s, 3.0));
    }

    #[test]
    fn zero_sigma_flags_any_departure() {
        let s = stats(5.0, 0.0);
        assert!(!is_drifted(5.0, &s, 3.0));
        assert!(is_drifted(5.0 + 1e-12, &s, 3.0));
        assert!(is_drifted(4.999, &s, 3.0));
    }

    #[test]
    fn stats_examples() {
        let s = NormalStatistics::from_distances(&[5.0; 4]).unwrap();
        assert_eq!((s.mu_norm, s.sigma_norm), (5.0, 0.0));
        let s = NormalStatistics::from_distances(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mu_norm, s.sigma_norm), (2.0, 1.0));
        assert!(matches!(NormalStatistics::from_distances(&[1.0]), Err(Error::Statistics(_))));
        assert!(NormalStatistics::new(1.0, -0.5).is_err());
    }

    #[test]
    fn detect_without_stats_is_a_config_error() {
        let err = detect(&[], &[], None, &DetectorConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn detect_is_pending_before_the_interval() {
        let r = |round| ReducedUpdate { node_id: 0, round, coords: vec![round as f64, 0.0] };
        let normal: Vec<_> = (0..20).map(r).collect();
        let active: Vec<_> = (20..29).map(r).collect();
        let out = detect(&normal, &active, Some(&stats(1.0, 1.0)), &DetectorConfig::default()).unwrap();
        assert_eq!(out.verdict, Verdict::Pending);
        assert!(out.summary.is_none());
        let active: Vec<_> = (20..30).map(r).collect();
        let out = detect(&normal, &active, Some(&stats(1.0, 1.0)), &DetectorConfig::default()).unwrap();
        assert_ne!(out.verdict, Verdict::Pending);
    }

    #[test]
    fn detector_flags_a_shifted_cloud_and_passes_a_matching_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 30;
        let line: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let make = |rng: &mut ChaCha8Rng, round: usize, offset: f64| WeightUpdate {
            node_id: 2,
            round,
            delta: line
                .iter()
                .map(|l| l * (rng.gen_range(-1.0..1.0) + offset) + rng.gen_range(-0.01..0.01))
                .collect(),
        };
        let cfg = DetectorConfig { n_components: ComponentCount::Fixed(2), ..DetectorConfig::default() };
        let mut det = NodeDetector::new(2, cfg);
        for round in 0..100 {
            det.record_training_update(make(&mut rng, round, 0.0)).unwrap();
        }
        det.fit().unwrap();
        let d = det.normal_distance().unwrap();
        det.set_stats(stats(d, 0.1 * d));
        let mut verdicts = Vec::new();
        for round in 100..110 {
            verdicts.push(det.observe(&make(&mut rng, round, 8.0)).unwrap());
        }
        assert!(verdicts[..9].iter().all(|v| *v == Verdict::Pending));
        assert_eq!(verdicts[9], Verdict::Drifted);
        assert_eq!(det.records().len(), 1);
        assert_eq!(det.active_points().len(), 10);
        assert_eq!(det.last_summary().unwrap().assignments.len(), 110);
    }

    #[test]
    fn observe_before_fit_is_rejected() {
        let mut det = NodeDetector::new(0, DetectorConfig::default());
        let u = WeightUpdate { node_id: 0, round: 0, delta: vec![0.0; 4] };
        assert!(det.observe(&u).is_err());
        assert!(det.normal_distance().is_err());
    }

    #[test]
    fn training_distances_fall_inside_their_own_threshold() {
        // with population sigma over N values no value is more than sqrt(N-1) sigma from the mean
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let d: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..5.0)).collect();
            let s = NormalStatistics::from_distances(&d).unwrap();
            assert!(d.iter().all(|&x| !is_drifted(x, &s, 3.0)));
        }
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            c in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let ab = cluster_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, cluster_distance(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(cluster_distance(&a, &a).unwrap(), 0.0);
            if a != b { prop_assert!(ab > 0.0); }
            let bc = cluster_distance(&b, &c).unwrap();
            let ac = cluster_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn verdict_is_monotone_in_distance_from_mean(
            mu in -5.0f64..5.0, sigma in 0.0f64..3.0, m in 0.5f64..4.0,
            off in 0.0f64..20.0, extra in 0.0f64..20.0, up in any::<bool>(),
        ) {
            let s = stats(mu, sigma);
            let sign = if up { 1.0 } else { -1.0 };
            if is_drifted(mu + sign * off, &s, m) {
                prop_assert!(is_drifted(mu + sign * (off + extra), &s, m));
            }
        }

        #[test]
        fn values_within_band_are_never_drift(mu in -5.0f64..5.0, sigma in 0.0f64..3.0, m in 0.5f64..4.0, t in -1.0f64..1.0) {
            prop_assert!(!is_drifted(mu + t * m * sigma, &stats(mu, sigma), m));
        }
    }
}
