use std::path::Path;

use semhawkes::{inject_missingness, temporal_split, write_csv, TrainSpan, VocabularyManifest};

use super::{derive_seed, simulate::write_truth, Stream};
use crate::artifacts::{load_logs, write_sidecar, write_with, ManifestBuilder};
use crate::config::RunConfig;
use crate::error::{CliError, Context};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrepareOptions {
    /// Training weeks from the start of the log; `None` trains on everything.
    pub train_weeks: Option<u32>,
    pub test_weeks: u32,
    /// Share of training check-ins whose category is removed.
    pub missing_fraction: Option<f64>,
}

/// Splits a fully labelled log into training and test windows and optionally
/// masks training categories. Writes `train.csv`, `test.csv`, their vocabulary
/// sidecars, and `truth.csv` when masking.
pub fn cmd_prepare(data: &Path, out: &Path, opts: &PrepareOptions, cfg: &RunConfig) -> Result<(usize, usize), CliError> {
    cfg.validate()?;
    let mut manifest = ManifestBuilder::start("prepare");
    let loaded = load_logs(&[("data", data)], None, cfg)?;
    manifest.inputs = loaded.inputs;
    let log = loaded.logs.into_iter().next().expect("one log");
    let span = opts.train_weeks.map_or(TrainSpan::All, TrainSpan::Weeks);
    let (train, test) = temporal_split(&log, span, opts.test_weeks).context("splitting")?;
    let vocab = VocabularyManifest::of(&log);
    let mut artifacts = vec![TRAIN_FILE, TEST_FILE];

    let train = match opts.missing_fraction {
        Some(fraction) => {
            let seed = derive_seed(cfg.seed, Stream::Mask);
            manifest.seeds.insert("mask".into(), seed);
            let (masked, truth) = inject_missingness(&train, fraction, seed).context("masking")?;
            write_truth(&out.join(TRUTH_FILE), &masked, &truth)?;
            artifacts.push(TRUTH_FILE);
            masked
        }
        None => train,
    };
    for (name, part) in [(TRAIN_FILE, &train), (TEST_FILE, &test)] {
        let path = out.join(name);
        write_with(&path, |w| write_csv(part, w))?;
        write_sidecar(&path, &vocab)?;
    }
    manifest.seeds.insert("master".into(), cfg.seed);
    manifest.artifacts = artifacts.into_iter().map(String::from).collect();
    manifest.notes.insert("train_events".into(), train.len().into());
    manifest.notes.insert("test_events".into(), test.len().into());
    manifest.finish(cfg, out)?;
    Ok((train.len(), test.len()))
}
