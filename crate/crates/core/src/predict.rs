//! Next-check-in prediction by thinning over the discrete venue set.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryAssignment, EventLog, Location, Venue};
use crate::error::{Error, Result};
use crate::features::VenueFeatureTable;
use crate::gibbs::draw_categorical;
use crate::intensity::{base_rate, spatial_kernel, temporal_kernel, HistoryView};
use crate::params::ModelParameters;
use crate::scalar::{ksum, Scalar};

/// Where the thinning bound `λ*` is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityBound {
    /// Total intensity at the current point. Not a true bound once the
    /// location moves; the acceptance ratio is clamped to one.
    #[default]
    CurrentPoint,
    /// Total intensity at the proposed venue, taken before the time advance.
    /// Exact, since the intensity only decays between events.
    ProposedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Hours after the anchor event beyond which a draw is abandoned.
    pub horizon: f64,
    /// Standard deviation of the location proposal; `None` uses `h`.
    pub proposal_sd: Option<f64>,
    pub lookahead: usize,
    pub seed: u64,
    /// Independent draws per prediction; the one whose timestamp is nearest
    /// the mean of all draws is reported.
    pub draws: usize,
    pub bound: IntensityBound,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: 168.0,
            proposal_sd: None,
            lookahead: 1,
            seed: 0,
            draws: 1,
            bound: IntensityBound::CurrentPoint,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon = {} must be > 0", self.horizon)));
        }
        if let Some(sd) = self.proposal_sd {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::InvalidConfig(format!("proposal_sd = {sd} must be >= 0")));
            }
        }
        if self.lookahead == 0 || self.draws == 0 {
            return Err(Error::InvalidConfig("lookahead and draws must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedCheckin<F> {
    pub user: usize,
    pub timestamp: F,
    pub venue: usize,
    pub location: Location<F>,
    pub category: usize,
}

/// Result of one thinning run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw<F> {
    Event(PredictedCheckin<F>),
    /// No proposal was accepted within the horizon.
    HorizonExceeded,
}

/// Index of the venue nearest to `loc` (Euclidean degrees, ties to the lowest index).
pub fn snap<F: Scalar>(loc: &Location<F>, venues: &[Venue<F>]) -> Result<usize> {
    let mut best: Option<(usize, F)> = None;
    for (i, v) in venues.iter().enumerate() {
        let d = v.location.distance(loc);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyVenues)
}

/// `λ_c(t, l)` for every category, counting history entries with `t_k ≤ t`
/// (the right limit at an event time).
pub fn intensity_vector<F: Scalar>(
    t: F,
    location: &Location<F>,
    venue: usize,
    history: &HistoryView<F>,
    assignment: &CategoryAssignment,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
) -> Result<Vec<F>> {
    let vf = features.get(venue)?;
    let k = params.n_categories();
    let mut kernels = Vec::with_capacity(history.entries().len());
    for e in history.entries().iter().filter(|e| e.t <= t) {
        let w = temporal_kernel(t - e.t, params.eta)
            * spatial_kernel(params.distance.distance(location, &e.location), params.h);
        kernels.push((e.mark.resolve(assignment)?, w));
    }
    Ok((0..k)
        .map(|c| base_rate(c, vf, params) + ksum(kernels.iter().map(|&(ck, w)| params.alpha[c][ck] * w)))
        .collect())
}

/// One draw of the user's next check-in after the last entry of `history`.
///
/// Locations are proposed from a Gaussian around the last check-in and snapped
/// to the nearest venue; waiting times are exponential in the bound `λ*`.
/// A rejected proposal still moves the current time and point.
#[allow(clippy::too_many_arguments)]
pub fn next_event<F: Scalar, R: Rng>(
    user: usize,
    history: &HistoryView<F>,
    assignment: &CategoryAssignment,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
    venues: &[Venue<F>],
    cfg: &SimulationConfig,
    rng: &mut R,
) -> Result<Draw<F>> {
    if venues.is_empty() {
        return Err(Error::EmptyVenues);
    }
    let anchor = *history.last().ok_or(Error::NoHistory(user))?;
    let sd = cfg.proposal_sd.unwrap_or(params.h.as_f64());
    let jitter = Normal::new(0.0, sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let limit = anchor.t.as_f64() + cfg.horizon;

    let mut t = anchor.t;
    let mut venue = snap(&anchor.location, venues)?;
    let mut here = anchor.location;
    loop {
        let proposal = Location::new(
            anchor.location.lat + F::of(jitter.sample(rng)),
            anchor.location.lon + F::of(jitter.sample(rng)),
        );
        let next_venue = snap(&proposal, venues)?;
        let next_loc = venues[next_venue].location;
        let bound: F = match cfg.bound {
            IntensityBound::CurrentPoint => {
                ksum(intensity_vector(t, &here, venue, history, assignment, features, params)?)
            }
            IntensityBound::ProposedPoint => {
                ksum(intensity_vector(t, &next_loc, next_venue, history, assignment, features, params)?)
            }
        };
        if !(bound > F::zero() && bound.is_finite()) {
            return Err(Error::NonFinite { group: "intensity" });
        }
        let wait = Exp::new(bound.as_f64())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .sample(rng);
        t = t + F::of(wait);
        if t.as_f64() > limit {
            return Ok(Draw::HorizonExceeded);
        }
        let rates = intensity_vector(t, &next_loc, next_venue, history, assignment, features, params)?;
        let total = ksum(rates.iter().copied());
        let u: f64 = rng.random();
        if F::of(u) * bound < total {
            let probs: Vec<F> = rates.iter().map(|r| *r / total).collect();
            return Ok(Draw::Event(PredictedCheckin {
                user,
                timestamp: t,
                venue: next_venue,
                location: next_loc,
                category: draw_categorical(&probs, rng),
            }));
        }
        here = next_loc;
        venue = next_venue;
    }
}

/// A prediction aligned to one actual event of the test log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPrediction<F> {
    /// Row of the test log this prediction is compared against.
    pub predicted_for: usize,
    pub checkin: PredictedCheckin<F>,
    /// True when the horizon was hit; the timestamp is then the horizon end.
    pub censored: bool,
}

/// `cfg.lookahead` steps of thinning from `history`, each accepted event
/// appended to the conditioning history. Returns the last step.
#[allow(clippy::too_many_arguments)]
fn rollout<F: Scalar, R: Rng>(
    user: usize,
    mut history: HistoryView<F>,
    assignment: &CategoryAssignment,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
    venues: &[Venue<F>],
    cfg: &SimulationConfig,
    rng: &mut R,
) -> Result<(PredictedCheckin<F>, bool)> {
    let mut last = None;
    for _ in 0..cfg.lookahead {
        let anchor = *history.last().ok_or(Error::NoHistory(user))?;
        match next_event(user, &history, assignment, features, params, venues, cfg, rng)? {
            Draw::Event(p) => {
                history.push(crate::intensity::HistoryEntry {
                    t: p.timestamp,
                    location: p.location,
                    mark: crate::intensity::Mark::Observed(p.category),
                });
                last = Some(p);
            }
            Draw::HorizonExceeded => {
                let venue = snap(&anchor.location, venues)?;
                let p = PredictedCheckin {
                    user,
                    timestamp: anchor.t + F::of(cfg.horizon),
                    venue,
                    location: venues[venue].location,
                    category: 0,
                };
                return Ok((p, true));
            }
        }
    }
    Ok((last.expect("lookahead >= 1"), false))
}

/// Lookahead prediction for every event of `test` whose user has training history.
///
/// Each test event is predicted from the true history before it (training
/// events with `assignment` filling their latent categories, plus earlier test
/// events). Users without training events are skipped with a warning.
pub fn predict_test_window<F: Scalar>(
    params: &ModelParameters<F>,
    train: &EventLog<F>,
    assignment: &CategoryAssignment,
    test: &EventLog<F>,
    features: &VenueFeatureTable<F>,
    cfg: &SimulationConfig,
) -> Result<Vec<AlignedPrediction<F>>> {
    cfg.validate()?;
    params.validate()?;
    train.check_assignment(assignment)?;
    if test.n_latent() > 0 {
        return Err(Error::Invalid(format!(
            "the test log has {} events without a category",
            test.n_latent()
        )));
    }
    if test.is_empty() {
        return Ok(Vec::new());
    }
    if let (Some(a), Some(b)) = (train.events().last(), test.events().first()) {
        if b.timestamp < a.timestamp {
            return Err(Error::Invalid("the test window starts before the training window ends".into()));
        }
    }
    let combined = train.concat(test)?;
    let offset = train.len();
    let venues = combined.venues();

    let users: Vec<usize> = (0..combined.n_users())
        .filter(|&u| !test.user_events(u).is_empty())
        .collect();
    for &u in &users {
        if train.user_events(u).is_empty() {
            log::warn!("user {} has no training history; its test events are skipped", combined.users()[u]);
        }
    }
    let per_user: Vec<Vec<AlignedPrediction<F>>> = users
        .par_iter()
        .filter(|&&u| !train.user_events(u).is_empty())
        .map(|&u| {
            let mut rng = ChaCha8Rng::seed_from_u64(user_seed(cfg.seed, u));
            let mut out = Vec::new();
            for &pos in combined.user_events(u).iter().filter(|&&p| p >= offset) {
                let t = combined.event(pos).timestamp;
                let full = HistoryView::for_user(&combined, u, t);
                let keep = full.entries().len().saturating_sub(cfg.lookahead - 1);
                if keep == 0 {
                    continue;
                }
                let history = HistoryView::new(full.entries()[..keep].to_vec());
                let mut draws = Vec::with_capacity(cfg.draws);
                for _ in 0..cfg.draws {
                    draws.push(rollout(u, history.clone(), assignment, features, params, venues, cfg, &mut rng)?);
                }
                let mean = draws.iter().map(|(p, _)| p.timestamp.as_f64()).sum::<f64>() / draws.len() as f64;
                let (checkin, censored) = *draws
                    .iter()
                    .min_by(|a, b| {
                        let da = (a.0.timestamp.as_f64() - mean).abs();
                        let db = (b.0.timestamp.as_f64() - mean).abs();
                        da.total_cmp(&db)
                    })
                    .expect("draws >= 1");
                out.push(AlignedPrediction {
                    predicted_for: pos - offset,
                    checkin,
                    censored,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<_> = per_user.into_iter().flatten().collect();
    all.sort_by_key(|p| p.predicted_for);
    Ok(all)
}

pub(crate) fn user_seed(seed: u64, user: usize) -> u64 {
    seed ^ (user as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// One row of a predictions CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub user_id: String,
    pub venue_id: String,
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    pub category: String,
    pub predicted_for: usize,
}

/// Predictions in the ingestion schema plus `predicted_for`.
pub fn write_predictions<F: Scalar, W: Write>(
    log: &EventLog<F>,
    predictions: &[AlignedPrediction<F>],
    sink: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    if predictions.is_empty() {
        w.write_record(["user_id", "venue_id", "timestamp", "lat", "lon", "category", "predicted_for"])?;
    }
    for p in predictions {
        let c = &p.checkin;
        w.serialize(PredictionRecord {
            user_id: log.users()[c.user].clone(),
            venue_id: log.venues()[c.venue].id.clone(),
            timestamp: c.timestamp.as_f64(),
            lat: c.location.lat.as_f64(),
            lon: c.location.lon.as_f64(),
            category: log.categories()[c.category].clone(),
            predicted_for: p.predicted_for,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(source: R) -> Result<Vec<PredictionRecord>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        out.push(row.map_err(|e| Error::MalformedRow {
            row: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
