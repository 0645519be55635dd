use std::path::Path;

use super::{configure_threads, derive_seed, features_of, posterior_under, Stream, POSTERIOR_FILE};
use crate::artifacts::{load_logs, write_with, Checkpoint, ManifestBuilder};
use crate::config::RunConfig;
use crate::error::CliError;

pub const ANNOTATIONS_FILE: &str = "annotations.csv";

/// Samples the missing categories of `data` under the checkpoint's parameters.
///
/// Writes `annotations.csv` (one row per latent check-in: identifiers, the
/// sampled-category histogram and its argmax), the raw `posterior.csv`, and a
/// manifest. Returns the number of annotated check-ins.
pub fn cmd_annotate(checkpoint: &Path, data: &Path, out: &Path, cfg: &RunConfig) -> Result<usize, CliError> {
    cfg.validate()?;
    configure_threads(cfg.threads);
    let mut manifest = ManifestBuilder::start("annotate");
    let ck = Checkpoint::load(checkpoint)?;
    let loaded = load_logs(&[("data", data)], Some(&ck.vocabulary), cfg)?;
    manifest.inputs = loaded.inputs;
    manifest.inputs.push(crate::artifacts::InputFingerprint::of(
        "checkpoint",
        checkpoint,
        &crate::artifacts::read_bytes(checkpoint)?,
    ));
    let log = loaded.logs.into_iter().next().expect("one log");
    let features = features_of(&log);
    let posterior = posterior_under(&log, &features, &ck.params, cfg)?;
    manifest.seeds.insert("master".into(), cfg.seed);
    manifest.seeds.insert("gibbs".into(), derive_seed(cfg.seed, Stream::Gibbs));

    let argmax = posterior.argmax();
    write_with(&out.join(ANNOTATIONS_FILE), |sink| {
        let mut w = csv::Writer::from_writer(sink);
        let mut header: Vec<String> = ["event_pos", "user_id", "venue_id", "timestamp"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(log.categories().iter().map(|c| format!("count_{c}")));
        header.push("argmax".into());
        w.write_record(&header)?;
        for ((&pos, hist), &best) in posterior.positions().iter().zip(posterior.histogram()).zip(&argmax) {
            let e = log.event(pos);
            let mut row = vec![
                pos.to_string(),
                log.users()[e.user].clone(),
                log.venues()[e.venue].id.clone(),
                e.timestamp.to_string(),
            ];
            row.extend(hist.iter().map(|c| c.to_string()));
            row.push(log.categories()[best].clone());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_with(&out.join(POSTERIOR_FILE), |w| posterior.write_csv(w))?;
    manifest.artifacts = vec![ANNOTATIONS_FILE.into(), POSTERIOR_FILE.into()];
    manifest.finish(cfg, out)?;
    Ok(posterior.positions().len())
}
