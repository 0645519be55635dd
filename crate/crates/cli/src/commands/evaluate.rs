use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semhawkes::eval::{temporal_rmse, write_plot_csv, PlotRow, TimingPair};
use semhawkes::predict::read_predictions;
use semhawkes::{AnnotationEvaluand, CategoryAssignment, CategoryPosterior, EventLog64, MetricsReport};

use super::configure_threads;
use crate::artifacts::{load_logs, read_bytes, write_atomic, write_json, write_with, InputFingerprint, ManifestBuilder};
use crate::config::RunConfig;
use crate::error::{CliError, Context};

pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_TABLE_FILE: &str = "metrics.txt";
const PLOT_FILE: &str = "plot.csv";

/// One row of a truth CSV: the true category of a masked check-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub event_pos: usize,
    pub category: String,
}

/// Files consumed by `evaluate`. Annotation metrics need `data`, `posterior`
/// and `truth`; timing metrics need `predictions` and `test` (plus `data`
/// when the two files share a calendar clock).
#[derive(Debug, Clone, Default)]
pub struct EvaluateInputs {
    pub data: Option<PathBuf>,
    pub posterior: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

pub fn cmd_evaluate(inputs: &EvaluateInputs, out: &Path, cfg: &RunConfig) -> Result<MetricsReport, CliError> {
    cfg.validate()?;
    configure_threads(cfg.threads);
    let mut manifest = ManifestBuilder::start("evaluate");
    let annotating = inputs.posterior.is_some() || inputs.truth.is_some();
    let timing = inputs.predictions.is_some() || inputs.test.is_some();
    if !annotating && !timing {
        return Err(CliError::Input("nothing to evaluate: give a posterior and truth, or predictions and a test set".into()));
    }

    let mut files: Vec<(&str, &Path)> = Vec::new();
    if let Some(d) = &inputs.data {
        files.push(("data", d));
    }
    if timing {
        let test = inputs
            .test
            .as_deref()
            .ok_or_else(|| CliError::Input("timing metrics need --test".into()))?;
        files.push(("test", test));
    }
    if files.is_empty() {
        return Err(CliError::Input("annotation metrics need --data".into()));
    }
    let loaded = load_logs(&files, None, cfg)?;
    manifest.inputs = loaded.inputs;
    let mut logs = loaded.logs.into_iter();
    let data_log = inputs.data.as_ref().map(|_| logs.next().expect("data log"));
    let test_log = if timing { logs.next() } else { None };

    let mut report = match (annotating, &data_log) {
        (true, Some(log)) => {
            let posterior_path = need(&inputs.posterior, "--posterior")?;
            let truth_path = need(&inputs.truth, "--truth")?;
            let posterior_bytes = read_bytes(posterior_path)?;
            manifest.inputs.push(InputFingerprint::of("posterior", posterior_path, &posterior_bytes));
            let posterior = CategoryPosterior::read_csv(posterior_bytes.as_slice())
                .context(format!("reading {}", posterior_path.display()))?;
            let truth_bytes = read_bytes(truth_path)?;
            manifest.inputs.push(InputFingerprint::of("truth", truth_path, &truth_bytes));
            let truth = read_truth(log, truth_path, &truth_bytes)?;
            check_rows(&posterior, &truth, log)?;
            let ev = AnnotationEvaluand::new(log, &posterior, &truth).context("pairing posterior and truth")?;
            MetricsReport::annotation(&ev, &cfg.evaluation.ks, cfg.evaluation.threshold)
        }
        (true, None) => return Err(CliError::Input("annotation metrics need --data".into())),
        _ => MetricsReport::default(),
    };

    let mut artifacts = vec![METRICS_FILE.to_string(), METRICS_TABLE_FILE.to_string()];
    if let Some(test) = &test_log {
        let path = need(&inputs.predictions, "--predictions")?;
        let bytes = read_bytes(path)?;
        manifest.inputs.push(InputFingerprint::of("predictions", path, &bytes));
        let records = read_predictions(bytes.as_slice()).context(format!("reading {}", path.display()))?;
        let mut pairs = Vec::with_capacity(records.len());
        let mut plot = Vec::with_capacity(records.len());
        for r in &records {
            if r.predicted_for >= test.len() {
                return Err(CliError::Input(format!(
                    "{}: prediction for test row {} but the test set has {} check-ins",
                    path.display(),
                    r.predicted_for,
                    test.len()
                )));
            }
            let actual = test.event(r.predicted_for);
            let user_id = &test.users()[actual.user];
            if &r.user_id != user_id {
                return Err(CliError::Input(format!(
                    "{}: prediction for test row {} names user `{}`, the test set `{user_id}`",
                    path.display(),
                    r.predicted_for,
                    r.user_id
                )));
            }
            pairs.push(TimingPair {
                user: actual.user,
                predicted: r.timestamp,
                actual: actual.timestamp,
            });
            plot.push(PlotRow {
                predicted_for: r.predicted_for,
                user_id: user_id.clone(),
                actual_timestamp: actual.timestamp,
                predicted_timestamp: r.timestamp,
                actual_lat: actual.location.lat,
                actual_lon: actual.location.lon,
                predicted_lat: r.lat,
                predicted_lon: r.lon,
            });
        }
        report.predictions = pairs.len();
        report.rmse_hours = if pairs.is_empty() {
            None
        } else {
            Some(temporal_rmse(&pairs, cfg.prediction.rmse).context("rmse")?)
        };
        write_with(&out.join(PLOT_FILE), |w| write_plot_csv(&plot, w))?;
        artifacts.push(PLOT_FILE.into());
    }

    write_json(&out.join(METRICS_FILE), &report)?;
    write_atomic(&out.join(METRICS_TABLE_FILE), report.to_table().as_bytes())?;
    manifest.artifacts = artifacts;
    manifest.finish(cfg, out)?;
    Ok(report)
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Input(format!("annotation metrics need {flag}")))
}

fn read_truth(log: &EventLog64, path: &Path, bytes: &[u8]) -> Result<CategoryAssignment, CliError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut rows: Vec<TruthRecord> = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        rows.push(rec.map_err(|e| CliError::Input(format!("{} row {}: {e}", path.display(), i + 2)))?);
    }
    if rows.len() != log.n_latent() {
        return Err(CliError::Input(format!(
            "{} has {} rows but the dataset has {} check-ins without a category",
            path.display(),
            rows.len(),
            log.n_latent()
        )));
    }
    rows.sort_by_key(|r| r.event_pos);
    let mut values = Vec::with_capacity(rows.len());
    for (r, &pos) in rows.iter().zip(log.latent_index()) {
        if r.event_pos != pos {
            return Err(CliError::Input(format!(
                "{}: row for event {} does not match latent event {pos}",
                path.display(),
                r.event_pos
            )));
        }
        let c = log.categories().iter().position(|c| c == &r.category).ok_or_else(|| {
            CliError::Input(format!("{}: unknown category `{}`", path.display(), r.category))
        })?;
        values.push(c);
    }
    CategoryAssignment::for_log(log, values).context("truth")
}

fn check_rows(posterior: &CategoryPosterior, truth: &CategoryAssignment, log: &EventLog64) -> Result<(), CliError> {
    if posterior.positions().len() != truth.len() {
        return Err(CliError::Input(format!(
            "posterior has {} rows, truth {}",
            posterior.positions().len(),
            truth.len()
        )));
    }
    if posterior.n_categories() != log.n_categories() {
        return Err(CliError::Input(format!(
            "posterior has {} category columns, the dataset {} categories",
            posterior.n_categories(),
            log.n_categories()
        )));
    }
    Ok(())
}
