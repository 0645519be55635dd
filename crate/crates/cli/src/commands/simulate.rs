use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semhawkes::{
    inject_missingness, simulate_dataset, write_csv, DistanceMetric, DomainBounds, Location, ModelParameters64,
    SyntheticDomain, TimeOrigin, Venue, VenueFeatureTable, VenueFeatures, VocabularyManifest,
};

use super::{derive_seed, evaluate::TruthRecord, Stream};
use crate::artifacts::{read_bytes, write_atomic, write_sidecar, write_with, InputFingerprint, ManifestBuilder};
use crate::config::RunConfig;
use crate::error::{CliError, Context};

pub const SIMULATED_FILE: &str = "data.csv";
pub const MASKED_FILE: &str = "masked.csv";

/// Generator description read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub seed: u64,
    pub users: usize,
    /// Length of the window in hours.
    pub hours: f64,
    pub categories: Vec<String>,
    #[serde(default)]
    pub origin_weekday: u8,
    #[serde(default)]
    pub origin_hour: f64,
    /// When set, also writes a copy with this share of categories removed.
    #[serde(default)]
    pub mask_fraction: Option<f64>,
    pub venues: VenueSpec,
    pub params: ParamSpec,
}

/// Either a `grid × grid` lattice over the box or a CSV `venue_id,lat,lon`
/// with optional feature columns `d0..d6,h0..h3`. Without feature columns
/// every venue gets uniform weekday and hour profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VenueSpec {
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Spatial box in degrees; defaults to the unit square for grids and the
    /// venue extent for files.
    #[serde(default)]
    pub lat_min: Option<f64>,
    #[serde(default)]
    pub lat_max: Option<f64>,
    #[serde(default)]
    pub lon_min: Option<f64>,
    #[serde(default)]
    pub lon_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub eta: f64,
    pub h: f64,
    /// K rows of 7 weekday weights.
    pub w_day: Vec<Vec<f64>>,
    /// K rows of 4 hour-bin weights.
    pub w_hour: Vec<Vec<f64>>,
    /// K × K excitation matrix.
    pub alpha: Vec<Vec<f64>>,
    #[serde(default)]
    pub distance: DistanceMetric,
}

impl SimulationSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn parameters(&self) -> Result<ModelParameters64, CliError> {
        let k = self.categories.len();
        let p = &self.params;
        let shape = |name: &str, m: &Vec<Vec<f64>>, cols: usize| {
            if m.len() != k || m.iter().any(|r| r.len() != cols) {
                Err(CliError::Input(format!("params.{name} must be {k} rows of {cols} values")))
            } else {
                Ok(())
            }
        };
        shape("w_day", &p.w_day, 7)?;
        shape("w_hour", &p.w_hour, 4)?;
        shape("alpha", &p.alpha, k)?;
        let mut out = ModelParameters64::zeros(k, p.eta, p.h);
        for c in 0..k {
            out.w_day[c].copy_from_slice(&p.w_day[c]);
            out.w_hour[c].copy_from_slice(&p.w_hour[c]);
        }
        out.alpha = p.alpha.clone();
        out.distance = p.distance;
        out.validate().context("simulation parameters")?;
        Ok(out)
    }

    /// Builds the venue set, features and domain; `base` resolves a relative venue file.
    pub fn domain(&self, base: &Path) -> Result<SyntheticDomain<f64>, CliError> {
        if self.categories.is_empty() || self.users == 0 {
            return Err(CliError::Input("a simulation needs at least one category and one user".into()));
        }
        if !(self.hours >= 0.0 && self.hours.is_finite()) {
            return Err(CliError::Input(format!("hours = {} must be a finite non-negative number", self.hours)));
        }
        let v = &self.venues;
        let (venues, features, default_box) = match (v.grid, &v.file) {
            (Some(n), None) if n > 0 => {
                let (a0, a1) = (v.lat_min.unwrap_or(0.0), v.lat_max.unwrap_or(1.0));
                let (b0, b1) = (v.lon_min.unwrap_or(0.0), v.lon_max.unwrap_or(1.0));
                let venues: Vec<Venue<f64>> = (0..n * n)
                    .map(|i| Venue {
                        id: format!("v{i}"),
                        location: Location::new(
                            a0 + (a1 - a0) * ((i / n) as f64 + 0.5) / n as f64,
                            b0 + (b1 - b0) * ((i % n) as f64 + 0.5) / n as f64,
                        ),
                    })
                    .collect();
                let f = vec![VenueFeatures::uniform(); venues.len()];
                (venues, f, (0.0, 1.0, 0.0, 1.0))
            }
            (None, Some(file)) => {
                let path = if file.is_absolute() { file.clone() } else { base.join(file) };
                let (venues, f) = read_venues(&path)?;
                let ext = |sel: fn(&Location<f64>) -> f64| {
                    let it = venues.iter().map(|v| sel(&v.location));
                    (it.clone().fold(f64::INFINITY, f64::min), it.fold(f64::NEG_INFINITY, f64::max))
                };
                let (a, b) = (ext(|l| l.lat), ext(|l| l.lon));
                (venues, f, (a.0, a.1, b.0, b.1))
            }
            _ => {
                return Err(CliError::Input(
                    "venues needs exactly one of `grid` (> 0) or `file`".into(),
                ))
            }
        };
        let bounds = DomainBounds {
            t_min: 0.0,
            t_max: self.hours,
            x_min: v.lat_min.unwrap_or(default_box.0),
            x_max: v.lat_max.unwrap_or(default_box.1),
            y_min: v.lon_min.unwrap_or(default_box.2),
            y_max: v.lon_max.unwrap_or(default_box.3),
        };
        if venues.iter().any(|u| {
            u.location.lat < bounds.x_min
                || u.location.lat > bounds.x_max
                || u.location.lon < bounds.y_min
                || u.location.lon > bounds.y_max
        }) {
            return Err(CliError::Input("venues fall outside the spatial box".into()));
        }
        Ok(SyntheticDomain {
            categories: self.categories.clone(),
            users: (0..self.users).map(|u| format!("u{u}")).collect(),
            venues,
            features: VenueFeatureTable::from_rows(features),
            bounds,
            origin: TimeOrigin {
                weekday: self.origin_weekday,
                hour_of_day: self.origin_hour,
            },
        })
    }
}

fn read_venues(path: &Path) -> Result<(Vec<Venue<f64>>, Vec<VenueFeatures<f64>>), CliError> {
    let bytes = read_bytes(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let bad = |m: String| CliError::Input(format!("{}: {m}", path.display()));
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ci, cx, cy) = match (col("venue_id"), col("lat"), col("lon")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad("expected columns venue_id, lat, lon".into())),
    };
    let feature_cols: Option<Vec<usize>> = (0..7)
        .map(|d| format!("d{d}"))
        .chain((0..4).map(|h| format!("h{h}")))
        .map(|n| col(&n))
        .collect();
    let (mut venues, mut features) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |c: usize| {
            rec[c]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: `{}` is not a number", i + 2, &rec[c])))
        };
        venues.push(Venue {
            id: rec[ci].to_string(),
            location: Location::new(num(cx)?, num(cy)?),
        });
        features.push(match &feature_cols {
            Some(cols) => {
                let mut f = VenueFeatures::zeros();
                for (j, &c) in cols.iter().enumerate() {
                    if j < 7 {
                        f.day[j] = num(c)?;
                    } else {
                        f.hour[j - 7] = num(c)?;
                    }
                }
                f
            }
            None => VenueFeatures::uniform(),
        });
    }
    if venues.is_empty() {
        return Err(bad("no venues".into()));
    }
    Ok((venues, features))
}

/// Draws a labelled check-in log from the spec and writes it to `out/data.csv`
/// with its vocabulary sidecar; with `mask_fraction` also `masked.csv` and
/// `truth.csv`. Returns the number of generated check-ins.
pub fn cmd_simulate(spec_path: &Path, out: &Path) -> Result<usize, CliError> {
    let mut manifest = ManifestBuilder::start("simulate");
    let spec_bytes = read_bytes(spec_path)?;
    manifest.inputs.push(InputFingerprint::of("spec", spec_path, &spec_bytes));
    let spec = SimulationSpec::load(spec_path)?;
    let params = spec.parameters()?;
    let domain = spec.domain(spec_path.parent().unwrap_or(Path::new(".")))?;
    let log = simulate_dataset(&params, &domain, spec.seed).context("simulation")?;
    log::info!("simulated {} check-ins for {} users", log.len(), spec.users);

    let data_path = out.join(SIMULATED_FILE);
    write_with(&data_path, |w| write_csv(&log, w))?;
    let vocab = VocabularyManifest::of(&log);
    write_sidecar(&data_path, &vocab)?;
    manifest.artifacts = vec![SIMULATED_FILE.into(), "data.vocab.json".into()];
    manifest.seeds.insert("simulate".into(), spec.seed);

    if let Some(fraction) = spec.mask_fraction {
        let seed = derive_seed(spec.seed, Stream::Mask);
        let (masked, truth) = inject_missingness(&log, fraction, seed).context("masking")?;
        let masked_path = out.join(MASKED_FILE);
        write_with(&masked_path, |w| write_csv(&masked, w))?;
        write_sidecar(&masked_path, &vocab)?;
        write_truth(&out.join(super::TRUTH_FILE), &masked, &truth)?;
        manifest.seeds.insert("mask".into(), seed);
        manifest
            .artifacts
            .extend([MASKED_FILE.into(), "masked.vocab.json".into(), super::TRUTH_FILE.into()]);
    }
    let mut snapshot = RunConfig {
        seed: spec.seed,
        ..RunConfig::default()
    };
    snapshot.model.eta = spec.params.eta;
    snapshot.model.h = spec.params.h;
    snapshot.model.distance = spec.params.distance;
    manifest
        .notes
        .insert("spec".into(), serde_json::to_value(&spec).expect("spec serialises"));
    manifest.finish(&snapshot, out)?;
    Ok(log.len())
}

pub(crate) fn write_truth(
    path: &Path,
    log: &semhawkes::EventLog64,
    truth: &semhawkes::CategoryAssignment,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (pos, c) in truth.iter() {
        w.serialize(TruthRecord {
            event_pos: pos,
            category: log.categories()[c].clone(),
        })
        .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    write_atomic(path, &bytes)
}
