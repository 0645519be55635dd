//! Latent-mark multivariate spatio-temporal Hawkes process for check-in streams.
//!
//! The crate infers missing check-in categories with a Gibbs-sampling EM loop
//! ([`em`]) and predicts or simulates future check-ins by thinning
//! ([`predict`], [`simulate`]). All numerics are generic over [`Scalar`];
//! the `*64` / `*32` aliases below fix the scalar type.

pub mod data;
pub mod em;
pub mod error;
pub mod eval;
pub mod features;
pub mod gibbs;
pub mod intensity;
pub mod likelihood;
pub mod params;
pub mod predict;
pub mod scalar;
pub mod simulate;

pub use data::{
    ingest, ingest_many, inject_missingness, temporal_split, write_csv, CategoryAssignment, CheckinEvent,
    CsvSchema, DomainBounds, EventLog, Location, TimeOrigin, TrainSpan, Venue,
    VocabularyManifest,
};
pub use em::{run_em, EmConfig, EmResult, LatentInit, MStepConfig};
pub use error::{Error, Result};
pub use eval::{AnnotationEvaluand, MetricsReport, PrfScores, RmseMode, TopK};
pub use features::{build_features, VenueFeatureTable, VenueFeatures};
pub use gibbs::{CategoryPosterior, GibbsConfig};
pub use likelihood::{LikelihoodBreakdown, L2Weights};
pub use params::{DistanceMetric, ModelParameters};
pub use predict::{AlignedPrediction, IntensityBound, PredictedCheckin, SimulationConfig};
pub use scalar::Scalar;
pub use simulate::{simulate_dataset, SyntheticDomain};

pub type EventLog64 = EventLog<f64>;
pub type EventLog32 = EventLog<f32>;
pub type CheckinEvent64 = CheckinEvent<f64>;
pub type ModelParameters64 = ModelParameters<f64>;
pub type ModelParameters32 = ModelParameters<f32>;
pub type VenueFeatureTable64 = VenueFeatureTable<f64>;
pub type VenueFeatureTable32 = VenueFeatureTable<f32>;
pub type LikelihoodBreakdown64 = LikelihoodBreakdown<f64>;
pub type EmResult64 = EmResult<f64>;
pub type SyntheticDomain64 = SyntheticDomain<f64>;
pub type AlignedPrediction64 = AlignedPrediction<f64>;
