use std::path::Path;

use serde::{Deserialize, Serialize};

use semhawkes::eval::{temporal_rmse, write_plot_csv, PlotRow, TimingPair};
use semhawkes::predict::{predict_test_window, write_predictions};
use semhawkes::{CategoryAssignment, RmseMode};

use super::{apply_missing_strategy, configure_threads, derive_seed, features_of, posterior_under, Stream};
use crate::artifacts::{load_logs, read_bytes, write_json, write_with, Checkpoint, InputFingerprint, ManifestBuilder};
use crate::config::{MissingStrategy, RunConfig};
use crate::error::{CliError, Context};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "plot.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub test_events: usize,
    pub predictions: usize,
    /// Predictions that hit the horizon without an accepted event.
    pub censored: usize,
    pub rmse_mode: RmseMode,
    /// Absent when nothing could be predicted.
    pub rmse_hours: Option<f64>,
}

/// Predicts every test check-in from the history before it and scores the timestamps.
///
/// Latent training categories are handled by the checkpoint's missing-category
/// strategy: sampled and set to their posterior mode, filled at random with
/// the training fill, or dropped.
pub fn cmd_predict(
    checkpoint: &Path,
    train: &Path,
    test: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> Result<PredictionReport, CliError> {
    cfg.validate()?;
    configure_threads(cfg.threads);
    let mut manifest = ManifestBuilder::start("predict");
    let ck = Checkpoint::load(checkpoint)?;
    let loaded = load_logs(&[("train", train), ("test", test)], Some(&ck.vocabulary), cfg)?;
    manifest.inputs = loaded.inputs;
    manifest
        .inputs
        .push(InputFingerprint::of("checkpoint", checkpoint, &read_bytes(checkpoint)?));
    let mut logs = loaded.logs.into_iter();
    let (train_log, test_log) = (logs.next().expect("train"), logs.next().expect("test"));

    let history = apply_missing_strategy(&train_log, cfg.data.missing, cfg.seed)?;
    let features = features_of(&history);
    let assignment = match cfg.data.missing {
        MissingStrategy::Infer if history.n_latent() > 0 => posterior_under(&history, &features, &ck.params, cfg)?
            .mode(&history)
            .context("posterior mode")?,
        _ => CategoryAssignment::empty(),
    };
    let sim_seed = derive_seed(cfg.seed, Stream::Predict);
    manifest.seeds.insert("master".into(), cfg.seed);
    manifest.seeds.insert("predict".into(), sim_seed);
    manifest.seeds.insert("gibbs".into(), derive_seed(cfg.seed, Stream::Gibbs));

    let preds = predict_test_window(
        &ck.params,
        &history,
        &assignment,
        &test_log,
        &features,
        &cfg.simulation_config(sim_seed),
    )
    .context("prediction")?;

    let pairs: Vec<TimingPair> = preds
        .iter()
        .map(|p| TimingPair {
            user: p.checkin.user,
            predicted: p.checkin.timestamp,
            actual: test_log.event(p.predicted_for).timestamp,
        })
        .collect();
    let rmse_hours = if pairs.is_empty() {
        None
    } else {
        Some(temporal_rmse(&pairs, cfg.prediction.rmse).context("rmse")?)
    };
    let report = PredictionReport {
        test_events: test_log.len(),
        predictions: preds.len(),
        censored: preds.iter().filter(|p| p.censored).count(),
        rmse_mode: cfg.prediction.rmse,
        rmse_hours,
    };
    let plot: Vec<PlotRow> = preds
        .iter()
        .map(|p| {
            let actual = test_log.event(p.predicted_for);
            PlotRow {
                predicted_for: p.predicted_for,
                user_id: test_log.users()[actual.user].clone(),
                actual_timestamp: actual.timestamp,
                predicted_timestamp: p.checkin.timestamp,
                actual_lat: actual.location.lat,
                actual_lon: actual.location.lon,
                predicted_lat: p.checkin.location.lat,
                predicted_lon: p.checkin.location.lon,
            }
        })
        .collect();

    write_with(&out.join(PREDICTIONS_FILE), |w| write_predictions(&history, &preds, w))?;
    write_with(&out.join(PLOT_FILE), |w| write_plot_csv(&plot, w))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    manifest.artifacts = vec![PREDICTIONS_FILE.into(), PLOT_FILE.into(), REPORT_FILE.into()];
    manifest.finish(cfg, out)?;
    Ok(report)
}
