//! Synthetic check-in logs drawn from the model itself.
//!
//! Each user's trajectory is an exact Ogata thinning of the spatially
//! integrated rate `Σ_c [μ_c(avg)·X·Y + Σ_k α[c][c_k]·8πh²·exp(−η(t − t_k))]`.
//! Immigrant check-ins land on a venue drawn proportionally to `μ_c(v)`;
//! offspring are displaced from their parent by the spatial kernel and
//! snapped to the nearest venue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rayon::prelude::*;

use crate::data::{CheckinEvent, DomainBounds, EventLog, Location, TimeOrigin, Venue};
use crate::error::{Error, Result};
use crate::features::VenueFeatureTable;
use crate::gibbs::draw_categorical;
use crate::intensity::base_rate;
use crate::params::ModelParameters;
use crate::predict::{snap, user_seed};
use crate::scalar::Scalar;

/// Vocabularies and domain of a synthetic log.
#[derive(Debug, Clone)]
pub struct SyntheticDomain<F> {
    pub categories: Vec<String>,
    pub users: Vec<String>,
    pub venues: Vec<Venue<F>>,
    pub features: VenueFeatureTable<F>,
    /// Time window and spatial box; the box area scales the immigrant rate.
    pub bounds: DomainBounds<F>,
    pub origin: TimeOrigin,
}

/// Generates a fully labelled log. Refuses parameters whose largest branching
/// row sum `max_i Σ_j α[i][j]·8πh²/η` is at least one.
pub fn simulate_dataset<F: Scalar>(
    params: &ModelParameters<F>,
    domain: &SyntheticDomain<F>,
    seed: u64,
) -> Result<EventLog<F>> {
    params.validate()?;
    if params.n_categories() != domain.categories.len() {
        return Err(Error::InvalidParameters(format!(
            "parameters have {} categories, the domain {}",
            params.n_categories(),
            domain.categories.len()
        )));
    }
    let rho = params.max_branching_row_sum();
    if rho >= F::one() {
        return Err(Error::Supercritical(rho.as_f64()));
    }
    if domain.venues.is_empty() {
        return Err(Error::EmptyVenues);
    }
    if domain.features.len() < domain.venues.len() {
        return Err(Error::UnknownVenue(domain.features.len()));
    }
    let events: Vec<CheckinEvent<F>> = (0..domain.users.len())
        .into_par_iter()
        .map(|u| {
            let mut rng = ChaCha8Rng::seed_from_u64(user_seed(seed, u));
            trajectory(u, params, domain, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    EventLog::new(
        events,
        domain.categories.clone(),
        domain.users.clone(),
        domain.venues.clone(),
        Some(domain.bounds),
        domain.origin,
    )
}

fn trajectory<F: Scalar, R: Rng>(
    user: usize,
    params: &ModelParameters<F>,
    domain: &SyntheticDomain<F>,
    rng: &mut R,
) -> Result<Vec<CheckinEvent<F>>> {
    let k = params.n_categories();
    let b = &domain.bounds;
    let (t_end, area) = (b.t_max.as_f64(), b.area().as_f64());
    let mass = params.spatial_mass().as_f64();
    let eta = params.eta.as_f64();
    let alpha: Vec<Vec<f64>> = params.alpha.iter().map(|r| r.iter().map(|a| a.as_f64()).collect()).collect();
    let immigrant: Vec<f64> = (0..k)
        .map(|c| base_rate(c, domain.features.average(), params).as_f64() * area)
        .collect();
    // Venue weights for immigrants of each category.
    let venue_rates: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            domain.features.rows()[..domain.venues.len()]
                .iter()
                .map(|f| base_rate(c, f, params).as_f64())
                .collect()
        })
        .collect();
    let radius = Gamma::new(2.0, 2.0 * params.h.as_f64()).map_err(|e| Error::InvalidParameters(e.to_string()))?;

    let mut t = b.t_min.as_f64();
    let mut out: Vec<CheckinEvent<F>> = Vec::new();
    // decay[j] = Σ over past category-j events of exp(−η (t − t_k)), at time t.
    let mut decay = vec![0.0f64; k];
    let rates = |decay: &[f64]| -> Vec<f64> {
        let mut r = immigrant.clone();
        for c in 0..k {
            for j in 0..k {
                r.push(alpha[c][j] * mass * decay[j]);
            }
        }
        r
    };
    loop {
        let bound: f64 = rates(&decay).iter().sum();
        if !(bound > 0.0) {
            break;
        }
        let wait = Exp::new(bound).map_err(|e| Error::InvalidParameters(e.to_string()))?.sample(rng);
        if !(t + wait <= t_end) {
            break;
        }
        t += wait;
        let shrink = (-eta * wait).exp();
        decay.iter_mut().for_each(|d| *d *= shrink);
        let comps = rates(&decay);
        let total: f64 = comps.iter().sum();
        if rng.random::<f64>() * bound >= total {
            continue;
        }
        let pick = draw_categorical(&comps.iter().map(|c| c / total).collect::<Vec<_>>(), rng);
        let (category, venue) = if pick < k {
            let w = &venue_rates[pick];
            let s: f64 = w.iter().sum();
            let v = draw_categorical(&w.iter().map(|x| x / s).collect::<Vec<_>>(), rng);
            (pick, v)
        } else {
            let (c, j) = ((pick - k) / k, (pick - k) % k);
            let weights: Vec<f64> = out
                .iter()
                .map(|e| {
                    if e.category == Some(j) {
                        (-eta * (t - e.timestamp.as_f64())).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let s: f64 = weights.iter().sum();
            let parent = &out[draw_categorical(&weights.iter().map(|x| x / s).collect::<Vec<_>>(), rng)];
            let r = radius.sample(rng);
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let spot = Location::new(
                parent.location.lat + F::of(r * theta.cos()),
                parent.location.lon + F::of(r * theta.sin()),
            );
            (c, snap(&spot, &domain.venues)?)
        };
        decay[category] += 1.0;
        out.push(CheckinEvent {
            user,
            venue,
            timestamp: F::of(t),
            location: domain.venues[venue].location,
            category: Some(category),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::VenueFeatures;
    use crate::intensity::{compensator, HistoryView};
    use crate::CategoryAssignment;

    fn domain(t_max: f64, users: usize) -> SyntheticDomain<f64> {
        let venues: Vec<Venue<f64>> = (0..4)
            .map(|i| Venue {
                id: format!("v{i}"),
                location: Location::new(0.1 * (i % 2) as f64, 0.1 * (i / 2) as f64),
            })
            .collect();
        SyntheticDomain {
            categories: vec!["a".into(), "b".into()],
            users: (0..users).map(|u| format!("u{u}")).collect(),
            venues,
            features: VenueFeatureTable::from_rows(vec![VenueFeatures::uniform(); 4]),
            bounds: DomainBounds {
                t_min: 0.0,
                t_max,
                x_min: 0.0,
                x_max: 1.0,
                y_min: 0.0,
                y_max: 1.0,
            },
            origin: TimeOrigin::default(),
        }
    }

    #[test]
    fn deterministic_and_empty_window() {
        let p = ModelParameters::zeros(2, 0.5, 0.02);
        let a = simulate_dataset(&p, &domain(50.0, 3), 7).unwrap();
        let b = simulate_dataset(&p, &domain(50.0, 3), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.len() > 0);
        assert!(a.latent_index().is_empty());
        assert!(simulate_dataset(&p, &domain(0.0, 3), 7).unwrap().is_empty());
    }

    #[test]
    fn supercritical_is_refused() {
        let mut p = ModelParameters::zeros(2, 0.5, 0.1);
        // branching = α · 8π · 0.01 / 0.5 ≈ 0.503 α
        p.alpha = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        assert!(matches!(
            simulate_dataset(&p, &domain(10.0, 1), 0),
            Err(Error::Supercritical(_))
        ));
    }

    #[test]
    fn poisson_counts_without_excitation() {
        // Base rate 2 per category per unit area per hour.
        let p = ModelParameters::zeros(2, 0.5, 0.02);
        let log = simulate_dataset(&p, &domain(100.0, 20), 3).unwrap();
        let expected = 2.0 * 100.0 * 20.0;
        for c in 0..2 {
            let n = log.events().iter().filter(|e| e.category == Some(c)).count() as f64;
            assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n} vs {expected}");
        }
    }

    #[test]
    fn counts_match_compensator_with_excitation() {
        let mut p = ModelParameters::zeros(2, 0.5, 0.05);
        p.w_day = vec![[-1.0; 7], [-2.0; 7]];
        p.w_hour = vec![[-1.0; 4], [-2.0; 4]];
        p.alpha = vec![vec![2.0, 0.5], vec![0.0, 1.5]];
        let dom = domain(200.0, 10);
        let log = simulate_dataset(&p, &dom, 11).unwrap();
        let none = CategoryAssignment::empty();
        for c in 0..2 {
            let expected: f64 = (0..log.n_users())
                .map(|u| {
                    let h = HistoryView::for_user(&log, u, f64::INFINITY);
                    compensator(c, 0.0, 200.0, &h, &none, dom.features.average(), 1.0, &p).unwrap()
                })
                .sum();
            let n = log.events().iter().filter(|e| e.category == Some(c)).count() as f64;
            assert!((n - expected).abs() < 3.0 * expected.sqrt(), "category {c}: {n} vs {expected}");
        }
    }
}
