//! Files shared by all commands: atomic writes, dataset loading, manifests and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use semhawkes::{ingest_many, CsvSchema, EventLog64, ModelParameters64, VocabularyManifest};

use crate::config::RunConfig;
use crate::error::{CliError, Context};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_FORMAT: u32 = 1;

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

/// Renders an artifact into memory with a core writer, then writes it atomically.
pub fn write_with(
    path: &Path,
    render: impl FnOnce(&mut Vec<u8>) -> semhawkes::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    render(&mut buf).context(format!("rendering {}", path.display()))?;
    write_atomic(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serialises");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Sidecar holding the vocabulary of `X.csv`: `X.vocab.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("vocab.json")
}

pub fn write_sidecar(csv: &Path, vocab: &VocabularyManifest) -> Result<(), CliError> {
    write_json(&sidecar_path(csv), vocab)
}

fn read_sidecar(csv: &Path) -> Result<Option<VocabularyManifest>, CliError> {
    let path = sidecar_path(csv);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = read_bytes(&path)?;
    serde_json::from_slice(&bytes)
        .map(Some)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Content hash and size of one input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub role: String,
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl InputFingerprint {
    pub fn of(role: &str, path: &Path, bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        Self {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            bytes: bytes.len() as u64,
        }
    }
}

/// Logs read together, sharing vocabularies, with the fingerprints of their files.
pub struct Loaded {
    pub logs: Vec<EventLog64>,
    pub inputs: Vec<InputFingerprint>,
}

/// Reads one or more CSV files of the same dataset.
///
/// The vocabulary is pinned by `vocab` when given, else by the sidecar of the
/// first file, else built from the data with the configured clock origin.
pub fn load_logs(
    files: &[(&str, &Path)],
    vocab: Option<&VocabularyManifest>,
    cfg: &RunConfig,
) -> Result<Loaded, CliError> {
    let mut contents = Vec::with_capacity(files.len());
    let mut inputs = Vec::with_capacity(files.len());
    for (role, path) in files {
        let bytes = read_bytes(path)?;
        inputs.push(InputFingerprint::of(role, path, &bytes));
        contents.push(bytes);
    }
    let sidecar = match vocab {
        Some(v) => Some(v.clone()),
        None => match files.first() {
            Some((_, p)) => read_sidecar(p)?,
            None => None,
        },
    };
    let schema = match &sidecar {
        Some(v) => CsvSchema::with_manifest(v),
        None => CsvSchema {
            origin: Some(cfg.data.origin()),
            ..CsvSchema::default()
        },
    };
    let names: Vec<String> = files.iter().map(|(_, p)| p.display().to_string()).collect();
    let logs = ingest_many(contents.iter().map(|b| b.as_slice()).collect(), &schema)
        .context(format!("reading {}", names.join(", ")))?;
    Ok(Loaded { logs, inputs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub time: String,
    pub space: String,
    pub eta: String,
    pub h: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            time: "hours".into(),
            space: "degrees".into(),
            eta: "1/hour".into(),
            h: "degrees".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_secs: u64,
    pub elapsed_secs: f64,
}

/// Provenance of one command run. Every output directory holds one; the
/// checkpoint refers to it by file name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputFingerprint>,
    pub artifacts: Vec<String>,
    pub units: Units,
    pub timing: Timing,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    command: String,
    started: Instant,
    started_unix: u64,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputFingerprint>,
    pub artifacts: Vec<String>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn finish(self, config: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds: self.seeds,
            inputs: self.inputs,
            artifacts: self.artifacts,
            units: Units::default(),
            timing: Timing {
                started_unix_secs: self.started_unix,
                elapsed_secs: self.started.elapsed().as_secs_f64(),
            },
            notes: self.notes,
        };
        write_json(&out.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

/// Fitted parameters with everything needed to reuse them. Holds no timing,
/// so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub version: String,
    pub params: ModelParameters64,
    pub vocabulary: VocabularyManifest,
    pub config: RunConfig,
    pub seed: u64,
    pub converged: bool,
    /// File name of the manifest of the run that produced this checkpoint.
    pub manifest: String,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = read_bytes(path)?;
        let ck: Self = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Input(format!("{}: not a checkpoint: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CliError::Input(format!(
                "{}: checkpoint format {} is not supported",
                path.display(),
                ck.format
            )));
        }
        ck.params
            .validate()
            .context(format!("checkpoint {}", path.display()))?;
        if ck.params.n_categories() != ck.vocabulary.categories.len() {
            return Err(CliError::Input(format!(
                "{}: parameters cover {} categories, the vocabulary {}",
                path.display(),
                ck.params.n_categories(),
                ck.vocabulary.categories.len()
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn fingerprint_is_sha256() {
        let f = InputFingerprint::of("data", Path::new("x"), b"abc");
        assert_eq!(f.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(f.bytes, 3);
    }

    #[test]
    fn sidecar_sits_next_to_the_csv() {
        assert_eq!(sidecar_path(Path::new("d/train.csv")), PathBuf::from("d/train.vocab.json"));
    }
}
