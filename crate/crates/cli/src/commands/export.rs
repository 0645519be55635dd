use std::path::Path;

use crate::artifacts::{read_bytes, write_atomic, Checkpoint, InputFingerprint, ManifestBuilder};
use crate::error::CliError;

pub const ALPHA_FILE: &str = "alpha.csv";

/// Writes the learned excitation matrix as `out/alpha.csv`: a header of
/// category labels, then one labelled row per influenced category `i` holding
/// `alpha[i][j]` for every influencing category `j`.
pub fn cmd_export_alpha(checkpoint: &Path, out: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut manifest = ManifestBuilder::start("export-alpha");
    let ck = Checkpoint::load(checkpoint)?;
    manifest
        .inputs
        .push(InputFingerprint::of("checkpoint", checkpoint, &read_bytes(checkpoint)?));
    let labels = &ck.vocabulary.categories;
    let mut w = csv::Writer::from_writer(Vec::new());
    let write_err = |e: csv::Error| CliError::Input(e.to_string());
    let mut header = vec!["category".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(write_err)?;
    for (label, row) in labels.iter().zip(&ck.params.alpha) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|a| a.to_string()));
        w.write_record(&rec).map_err(write_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    write_atomic(&out.join(ALPHA_FILE), &bytes)?;
    manifest.artifacts = vec![ALPHA_FILE.into()];
    manifest.seeds.insert("master".into(), ck.seed);
    manifest.finish(&ck.config, out)?;
    Ok(ck.params.alpha)
}
