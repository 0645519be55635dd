mod annotate;
mod evaluate;
mod export;
mod predict;
mod prepare;
mod simulate;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semhawkes::em::initial_assignment;
use semhawkes::gibbs::e_step;
use semhawkes::{
    build_features, CategoryAssignment, CategoryPosterior, EventLog64, ModelParameters64, VenueFeatureTable,
};

use crate::config::{MissingStrategy, RunConfig};
use crate::error::{CliError, Context};

pub use annotate::{cmd_annotate, ANNOTATIONS_FILE};
pub use evaluate::{cmd_evaluate, EvaluateInputs, TruthRecord, METRICS_FILE, METRICS_TABLE_FILE};
pub use export::{cmd_export_alpha, ALPHA_FILE};
pub use predict::{cmd_predict, PredictionReport, PLOT_FILE, PREDICTIONS_FILE, REPORT_FILE};
pub use prepare::{cmd_prepare, PrepareOptions, TEST_FILE, TRAIN_FILE, TRUTH_FILE};
pub use simulate::{cmd_simulate, SimulationSpec, MASKED_FILE, SIMULATED_FILE};
pub use train::{cmd_train, GridRow, TrainSummary, GRID_FILE, POSTERIOR_FILE, TRACE_FILE};

/// Independent random streams of one run, derived from the master seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    ParamInit = 1,
    Gibbs = 2,
    Fill = 3,
    Predict = 4,
    Mask = 5,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::ParamInit => "param_init",
            Stream::Gibbs => "gibbs",
            Stream::Fill => "fill",
            Stream::Predict => "predict",
            Stream::Mask => "mask",
        }
    }
}

/// SplitMix64 of the master seed offset by the stream id.
pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    let mut z = master.wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sets the global worker count once; later calls keep the first setting.
pub fn configure_threads(threads: usize) {
    if threads == 0 {
        return;
    }
    if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
        log::debug!("thread pool already initialised; keeping its size");
    }
}

/// The training log after the missing-category strategy has been applied.
pub(crate) fn apply_missing_strategy(
    log: &EventLog64,
    strategy: MissingStrategy,
    seed: u64,
) -> Result<EventLog64, CliError> {
    match strategy {
        MissingStrategy::Infer => Ok(log.clone()),
        MissingStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Fill));
            let fill = CategoryAssignment::uniform_random(log, &mut rng);
            log.with_categories(&fill).context("filling missing categories")
        }
        MissingStrategy::Remove => Ok(log.without_latent()),
    }
}

pub(crate) fn features_of(log: &EventLog64) -> VenueFeatureTable<f64> {
    build_features(log, log.origin())
}

/// Gibbs posterior over the latent categories of `log` under fixed parameters.
pub(crate) fn posterior_under(
    log: &EventLog64,
    features: &VenueFeatureTable<f64>,
    params: &ModelParameters64,
    cfg: &RunConfig,
) -> Result<CategoryPosterior, CliError> {
    let seed = derive_seed(cfg.seed, Stream::Gibbs);
    let init = initial_assignment(log, cfg.em.init, &mut ChaCha8Rng::seed_from_u64(seed));
    e_step(log, features, params, &init, &cfg.gibbs_config(seed)).context("sampling latent categories")
}

pub(crate) fn require_categories(log: &EventLog64) -> Result<(), CliError> {
    if log.n_categories() == 0 {
        return Err(CliError::Input(
            "the dataset has no observed category and no vocabulary sidecar".into(),
        ));
    }
    Ok(())
}
