//! Command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedrift::driftdetect::ComponentCount;
use fedrift::harness::{emit_report, run_experiment, DataSource, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fedrift", version, about = "Federated drift-detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the built-in experiments and write its CSV artifacts.
    Run {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        experiment: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// `synthetic` or `idx:IMAGES,LABELS`
        #[arg(long, default_value = "synthetic")]
        data: DataSource,
        /// Detection interval in rounds
        #[arg(long)]
        interval: Option<usize>,
        /// `auto` or a fixed number of principal components
        #[arg(long)]
        components: Option<ComponentCount>,
        /// Threshold width in standard deviations
        #[arg(long)]
        multiplier: Option<f64>,
        /// Number of detection checks per node
        #[arg(long)]
        checks: Option<usize>,
        /// Leading training rounds kept out of normal storage
        #[arg(long)]
        warmup: Option<usize>,
        /// Run the preset without injecting drift
        #[arg(long)]
        no_drift: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        experiment,
        seed,
        out,
        data,
        interval,
        components,
        multiplier,
        checks,
        warmup,
        no_drift,
    } = Cli::parse().command;

    let preset = if no_drift {
        ExperimentConfig::drift_free(experiment, seed)
    } else {
        ExperimentConfig::preset(experiment, seed)
    };
    let mut cfg = match preset {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    cfg.data_source = data;
    if let Some(v) = interval {
        cfg.detection_interval = v;
    }
    if let Some(v) = components {
        cfg.n_components = v;
    }
    if let Some(v) = multiplier {
        cfg.threshold_multiplier = v;
    }
    if let Some(v) = checks {
        cfg.detection_checks = v;
    }
    if let Some(v) = warmup {
        cfg.normal_warmup_rounds = v;
    }

    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = emit_report(&report, &out) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }

    println!(
        "experiment {} seed {}: k={} (reduction {:.4}%), mu_norm={:.6} sigma_norm={:.6}",
        cfg.experiment_id,
        cfg.seed,
        report.n_components,
        100.0 * report.reduction_ratio,
        report.stats.mu_norm,
        report.stats.sigma_norm
    );
    for node in &report.nodes {
        let c_dist = node.records.last().map(|r| r.c_dist);
        println!(
            "  node {:>2}: normal {:.6}  detect {}  {}{}",
            node.node_id,
            node.normal_distance,
            c_dist.map_or("-".to_string(), |d| format!("{d:.6}")),
            node.final_verdict.as_str(),
            if report.injected.contains(&node.node_id) { "  (injected)" } else { "" }
        );
    }
    println!(
        "  injected {:?} detected {:?}  alpha={:.7} beta={:.4}",
        report.injected, report.detected, report.alpha, report.beta
    );
    println!("  artifacts written to {}", out.display());
    ExitCode::SUCCESS
}
