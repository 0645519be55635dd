//! Run configuration: one TOML file with a section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semhawkes::{
    DistanceMetric, EmConfig, GibbsConfig, IntensityBound, L2Weights, LatentInit, MStepConfig, RmseMode,
    SimulationConfig, TimeOrigin,
};

use crate::error::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "SEMHAWKES_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of a run is derived from it.
    pub seed: u64,
    /// Worker threads; 0 lets the thread pool decide.
    pub threads: usize,
    pub data: DataSection,
    pub model: ModelSection,
    pub em: EmSection,
    pub gibbs: GibbsSection,
    pub prediction: PredictionSection,
    pub evaluation: EvaluationSection,
    pub grid: GridSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            data: DataSection::default(),
            model: ModelSection::default(),
            em: EmSection::default(),
            gibbs: GibbsSection::default(),
            prediction: PredictionSection::default(),
            evaluation: EvaluationSection::default(),
            grid: GridSection::default(),
        }
    }
}

/// What training does with check-ins whose category is missing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingStrategy {
    /// Treat them as latent and infer them with EM.
    #[default]
    Infer,
    /// Fill them with uniformly random categories, then fit.
    Random,
    /// Drop them, then fit.
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Clock at t = 0 for numeric timestamps when no vocabulary sidecar is present.
    pub origin_weekday: u8,
    pub origin_hour: f64,
    pub missing: MissingStrategy,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            origin_weekday: 0,
            origin_hour: 0.0,
            missing: MissingStrategy::Infer,
        }
    }
}

impl DataSection {
    pub fn origin(&self) -> TimeOrigin {
        TimeOrigin {
            weekday: self.origin_weekday,
            hour_of_day: self.origin_hour,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Temporal decay per hour.
    pub eta: f64,
    /// Spatial bandwidth in degrees.
    pub h: f64,
    pub distance: DistanceMetric,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            eta: 0.5,
            h: 0.05,
            distance: DistanceMetric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub step_tol: f64,
    pub l2_day: f64,
    pub l2_hour: f64,
    pub l2_alpha: f64,
    pub init: LatentInit,
}

impl Default for EmSection {
    fn default() -> Self {
        let em = EmConfig::default();
        Self {
            max_iters: em.max_em_iters,
            rel_tol: em.rel_tol,
            learning_rate: em.m_step.learning_rate,
            max_steps: em.m_step.max_steps,
            step_tol: em.m_step.tol,
            l2_day: em.m_step.l2.day,
            l2_hour: em.m_step.l2.hour,
            l2_alpha: em.m_step.l2.alpha,
            init: em.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSection {
    pub total_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for GibbsSection {
    fn default() -> Self {
        let g = GibbsConfig::default();
        Self {
            total_iters: g.total_iters,
            burn_in: g.burn_in,
            thin: g.thin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionSection {
    pub horizon: f64,
    pub proposal_sd: Option<f64>,
    pub lookahead: usize,
    pub draws: usize,
    pub bound: IntensityBound,
    pub rmse: RmseMode,
}

impl Default for PredictionSection {
    fn default() -> Self {
        let s = SimulationConfig::default();
        Self {
            horizon: s.horizon,
            proposal_sd: s.proposal_sd,
            lookahead: s.lookahead,
            draws: s.draws,
            bound: s.bound,
            rmse: RmseMode::PerEvent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Cut-offs for event Acc@k and venue top-k accuracy.
    pub ks: Vec<usize>,
    /// A venue predicts category c when c holds more than this share of its
    /// sampled labels. Zero keeps every sampled category.
    pub threshold: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 3],
            threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Candidate decay rates; empty keeps `model.eta`.
    pub eta: Vec<f64>,
    /// Candidate bandwidths; empty keeps `model.h`.
    pub h: Vec<f64>,
    /// Trailing share of the training window scored by held-out log-likelihood.
    pub holdout_fraction: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            eta: Vec::new(),
            h: Vec::new(),
            holdout_fraction: 0.2,
        }
    }
}

impl GridSection {
    pub fn is_active(&self) -> bool {
        !self.eta.is_empty() || !self.h.is_empty()
    }

    /// Parses `eta=0.1,0.5` or `h=0.01,0.05`; several pairs may be joined by `;`.
    pub fn apply_spec(&mut self, spec: &str) -> Result<(), CliError> {
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, values) = part
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("grid spec `{part}` is not name=v1,v2,...")))?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Input(format!("grid spec `{part}` has a non-numeric value")))?;
            match name.trim() {
                "eta" => self.eta = values,
                "h" => self.h = values,
                other => return Err(CliError::Input(format!("unknown grid parameter `{other}`"))),
            }
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Explicit path, else the path in [`CONFIG_ENV`], else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, CliError> {
        match config_path(explicit) {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn gibbs_config(&self, seed: u64) -> GibbsConfig {
        GibbsConfig {
            total_iters: self.gibbs.total_iters,
            burn_in: self.gibbs.burn_in,
            thin: self.gibbs.thin,
            seed,
        }
    }

    pub fn em_config(&self, seed: u64) -> EmConfig {
        EmConfig {
            max_em_iters: self.em.max_iters,
            rel_tol: self.em.rel_tol,
            m_step: MStepConfig {
                learning_rate: self.em.learning_rate,
                max_steps: self.em.max_steps,
                l2: L2Weights {
                    day: self.em.l2_day,
                    hour: self.em.l2_hour,
                    alpha: self.em.l2_alpha,
                },
                tol: self.em.step_tol,
            },
            gibbs: self.gibbs_config(seed),
            init: self.em.init,
        }
    }

    pub fn simulation_config(&self, seed: u64) -> SimulationConfig {
        SimulationConfig {
            horizon: self.prediction.horizon,
            proposal_sd: self.prediction.proposal_sd,
            lookahead: self.prediction.lookahead,
            seed,
            draws: self.prediction.draws,
            bound: self.prediction.bound,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(format!("invalid configuration: {m}")));
        if !(self.model.eta > 0.0 && self.model.h > 0.0) {
            return bad(format!("eta = {} and h = {} must be > 0", self.model.eta, self.model.h));
        }
        if self.data.origin_weekday > 6 || !(0.0..24.0).contains(&self.data.origin_hour) {
            return bad("origin_weekday must be 0..=6 and origin_hour in [0, 24)".into());
        }
        if self.grid.eta.iter().chain(&self.grid.h).any(|v| !(*v > 0.0)) {
            return bad("grid values must be > 0".into());
        }
        if !(self.grid.holdout_fraction > 0.0 && self.grid.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction = {} must be in (0, 1)", self.grid.holdout_fraction));
        }
        if self.evaluation.ks.iter().any(|&k| k == 0) {
            return bad("evaluation ks must be >= 1".into());
        }
        self.em_config(0).validate().map_err(|e| CliError::Input(e.to_string()))?;
        self.simulation_config(0).validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(())
    }
}

pub fn config_path(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[model]\neta = 1.5\n[gibbs]\nthin = 5\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.eta, 1.5);
        assert_eq!(cfg.model.h, ModelSection::default().h);
        assert_eq!(cfg.gibbs.thin, 5);
        assert_eq!(cfg.gibbs.total_iters, 1000);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[model]\nbandwidth = 1.0\n").is_err());
    }

    #[test]
    fn grid_spec_parsing() {
        let mut g = GridSection::default();
        g.apply_spec("eta=0.1,0.5;h=0.01").unwrap();
        assert_eq!(g.eta, vec![0.1, 0.5]);
        assert_eq!(g.h, vec![0.01]);
        assert!(g.apply_spec("beta=1").is_err());
        assert!(g.apply_spec("eta=x").is_err());
    }
}
