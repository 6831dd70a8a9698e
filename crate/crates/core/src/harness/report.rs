//! CSV and config artifacts for a finished experiment.
//!
//! All CSVs carry a header row, comma delimiters and LF line endings. Floats
//! use Rust's shortest round-trip formatting, so identical runs produce
//! identical bytes.

use std::fs;
use std::path::Path;

use super::ExperimentReport;
use crate::error::{Error, Result};

pub const REPORT_FILES: [&str; 6] = [
    "summary.csv",
    "per_node_distances.csv",
    "elbow.csv",
    "clusters.csv",
    "rounds.csv",
    "config.echo",
];

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn join_ids(ids: impl IntoIterator<Item = usize>) -> String {
    ids.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes the report files into `out_dir`, creating it if needed.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_summary(report, &out_dir.join("summary.csv"))?;
    write_distances(report, &out_dir.join("per_node_distances.csv"))?;
    write_elbow(report, &out_dir.join("elbow.csv"))?;
    write_clusters(report, &out_dir.join("clusters.csv"))?;
    write_rounds(report, &out_dir.join("rounds.csv"))?;
    let echo = out_dir.join("config.echo");
    let text = serde_json::to_string_pretty(&report.config)
        .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    fs::write(&echo, text + "\n").map_err(|e| Error::io(&echo, e))?;
    Ok(())
}

fn write_summary(r: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "experiment_id",
        "alpha",
        "beta",
        "n_drifted",
        "seed",
        "n_components",
        "reduction_ratio",
        "mu_norm",
        "sigma_norm",
        "drifted_digit",
        "injected_nodes",
        "detected_nodes",
        "true_positives",
        "false_positives",
        "true_negatives",
        "false_negatives",
    ])?;
    let c = r.confusion;
    w.write_record([
        r.config.experiment_id.clone(),
        r.alpha.to_string(),
        r.beta.to_string(),
        r.detected.len().to_string(),
        r.config.seed.to_string(),
        r.n_components.to_string(),
        r.reduction_ratio.to_string(),
        r.stats.mu_norm.to_string(),
        r.stats.sigma_norm.to_string(),
        r.drifted_digit.map(|d| d.to_string()).unwrap_or_default(),
        join_ids(r.injected.iter().copied()),
        join_ids(r.detected.iter().copied()),
        c.true_positives.to_string(),
        c.false_positives.to_string(),
        c.true_negatives.to_string(),
        c.false_negatives.to_string(),
    ])?;
    finish(w, path)
}

/// One `training` row per node (its normal distance) followed by one row per detection check.
fn write_distances(r: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node_id", "round", "c_dist", "mu_norm", "sigma_norm", "verdict"])?;
    let last_training_round = r.config.n_training_rounds - 1;
    for n in &r.nodes {
        w.write_record([
            n.node_id.to_string(),
            last_training_round.to_string(),
            n.normal_distance.to_string(),
            r.stats.mu_norm.to_string(),
            r.stats.sigma_norm.to_string(),
            "training".to_string(),
        ])?;
    }
    for n in &r.nodes {
        for rec in &n.records {
            w.write_record([
                rec.node_id.to_string(),
                rec.round.to_string(),
                rec.c_dist.to_string(),
                rec.mu_norm.to_string(),
                rec.sigma_norm.to_string(),
                rec.verdict.as_str().to_string(),
            ])?;
        }
    }
    finish(w, path)
}

/// Per-node spectra plus their mean (node_id `mean`).
fn write_elbow(r: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node_id", "component", "explained_variance_ratio"])?;
    for n in &r.nodes {
        for (j, ratio) in n.spectrum.iter().enumerate() {
            w.write_record([n.node_id.to_string(), (j + 1).to_string(), ratio.to_string()])?;
        }
    }
    for (j, ratio) in r.mean_spectrum.iter().enumerate() {
        w.write_record(["mean".to_string(), (j + 1).to_string(), ratio.to_string()])?;
    }
    finish(w, path)
}

fn write_clusters(r: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["node_id".to_string(), "round".into(), "phase".into(), "cluster".into()];
    header.extend((1..=r.n_components).map(|j| format!("pc{j}")));
    w.write_record(&header)?;
    for n in &r.nodes {
        let points = n
            .normal_points
            .iter()
            .map(|p| (p, "normal"))
            .chain(n.active_points.iter().map(|p| (p, "active")));
        // a node that never reached a check was clustered on its normal points only
        let labelled = n.clustering.assignments.len();
        for (i, (p, phase)) in points.enumerate() {
            let cluster = if i < labelled {
                n.clustering.assignments[i].to_string()
            } else {
                String::new()
            };
            let mut row = vec![n.node_id.to_string(), p.round.to_string(), phase.to_string(), cluster];
            row.extend(p.coords.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
    }
    finish(w, path)
}

fn write_rounds(r: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["round", "phase", "n_updates", "n_alerts", "global_train_accuracy"])?;
    for rr in &r.rounds {
        w.write_record([
            rr.round.to_string(),
            rr.phase.as_str().to_string(),
            rr.n_updates.to_string(),
            rr.n_alerts.to_string(),
            rr.global_train_accuracy.to_string(),
        ])?;
    }
    finish(w, path)
}
