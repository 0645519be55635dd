//! Triggering kernels, base intensity, conditional intensity and its integral.
//!
//! For user `u` and category `c`,
//!
//! ```text
//! λ_c^u(t, l) = μ_c(v) + Σ_{t_k < t, u_k = u} α[c][c_k] · exp(−η (t − t_k)) · exp(−‖l − l_k‖ / 2h)
//! μ_c(v)      = exp(w_day[c] · x_day(v)) + exp(w_hour[c] · x_hour(v))
//! ```
//!
//! Latent history entries use the category held by the current
//! [`CategoryAssignment`]; once resolved they contribute exactly like observed ones.

use crate::data::{CategoryAssignment, EventLog, Location};
use crate::error::{Error, Result};
use crate::features::{VenueFeatureTable, VenueFeatures};
use crate::params::ModelParameters;
use crate::scalar::{ksum, Scalar};

/// `exp(−η · dt)`. Panics on negative `dt`.
#[inline]
pub fn temporal_kernel<F: Scalar>(dt: F, eta: F) -> F {
    assert!(dt >= F::zero(), "temporal kernel called with negative lag {dt}");
    (-eta * dt).exp()
}

/// `exp(−d / 2h)`.
#[inline]
pub fn spatial_kernel<F: Scalar>(d: F, h: F) -> F {
    debug_assert!(d >= F::zero());
    (-d / (F::of(2.0) * h)).exp()
}

/// The two exponential terms of `μ_c`, day part first.
#[inline]
pub fn base_terms<F: Scalar>(
    category: usize,
    features: &VenueFeatures<F>,
    params: &ModelParameters<F>,
) -> (F, F) {
    let dot_day = ksum(
        params.w_day[category]
            .iter()
            .zip(&features.day)
            .map(|(w, x)| *w * *x),
    );
    let dot_hour = ksum(
        params.w_hour[category]
            .iter()
            .zip(&features.hour)
            .map(|(w, x)| *w * *x),
    );
    (dot_day.exp(), dot_hour.exp())
}

/// `μ_c` for a venue's feature vectors.
#[inline]
pub fn base_rate<F: Scalar>(
    category: usize,
    features: &VenueFeatures<F>,
    params: &ModelParameters<F>,
) -> F {
    let (d, h) = base_terms(category, features, params);
    d + h
}

/// `μ_c` at a venue of the feature table.
pub fn base_intensity<F: Scalar>(
    category: usize,
    venue: usize,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
) -> Result<F> {
    Ok(base_rate(category, features.get(venue)?, params))
}

/// Category of a history entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Observed(usize),
    /// Latent event, identified by its position in the log.
    Latent(usize),
}

impl Mark {
    pub fn resolve(&self, assignment: &CategoryAssignment) -> Result<usize> {
        match *self {
            Mark::Observed(c) => Ok(c),
            Mark::Latent(pos) => assignment.get(pos).ok_or(Error::UnresolvedLatent(pos)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry<F> {
    pub t: F,
    pub location: Location<F>,
    pub mark: Mark,
}

/// One user's past check-ins, all strictly before the query time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HistoryView<F> {
    entries: Vec<HistoryEntry<F>>,
}

impl<F: Scalar> HistoryView<F> {
    pub fn new(mut entries: Vec<HistoryEntry<F>>) -> Self {
        entries.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        Self { entries }
    }

    /// Events of `user` in `log` with timestamp strictly before `before`.
    pub fn for_user(log: &EventLog<F>, user: usize, before: F) -> Self {
        let entries = log
            .user_events(user)
            .iter()
            .map(|&p| (p, log.event(p)))
            .take_while(|(_, e)| e.timestamp < before)
            .map(|(p, e)| HistoryEntry {
                t: e.timestamp,
                location: e.location,
                mark: match e.category {
                    Some(c) => Mark::Observed(c),
                    None => Mark::Latent(p),
                },
            })
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[HistoryEntry<F>] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryEntry<F>> {
        self.entries.last()
    }

    pub fn push(&mut self, entry: HistoryEntry<F>) {
        if let Some(last) = self.entries.last() {
            assert!(entry.t >= last.t, "history entries must be appended in time order");
        }
        self.entries.push(entry);
    }
}

/// Self-excitation part of `λ_c(t, l)`: the sum over history entries with `t_k < t`.
pub fn excitation<F: Scalar>(
    category: usize,
    t: F,
    location: &Location<F>,
    history: &HistoryView<F>,
    assignment: &CategoryAssignment,
    params: &ModelParameters<F>,
) -> Result<F> {
    let mut terms = Vec::with_capacity(history.entries.len());
    for e in history.entries.iter().filter(|e| e.t < t) {
        let ck = e.mark.resolve(assignment)?;
        let k = temporal_kernel(t - e.t, params.eta)
            * spatial_kernel(params.distance.distance(location, &e.location), params.h);
        terms.push(params.alpha[category][ck] * k);
    }
    Ok(ksum(terms))
}

/// `λ_c(t, l)` for a check-in at a venue with the given features.
pub fn conditional_intensity<F: Scalar>(
    category: usize,
    t: F,
    location: &Location<F>,
    venue_features: &VenueFeatures<F>,
    history: &HistoryView<F>,
    assignment: &CategoryAssignment,
    params: &ModelParameters<F>,
) -> Result<F> {
    Ok(base_rate(category, venue_features, params)
        + excitation(category, t, location, history, assignment, params)?)
}

/// `λ_c` evaluated at event `pos` of `log`, with its own history.
pub fn event_intensity<F: Scalar>(
    log: &EventLog<F>,
    pos: usize,
    category: usize,
    assignment: &CategoryAssignment,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
) -> Result<F> {
    let e = log.event(pos);
    let history = HistoryView::for_user(log, e.user, e.timestamp);
    conditional_intensity(
        category,
        e.timestamp,
        &e.location,
        features.get(e.venue)?,
        &history,
        assignment,
        params,
    )
}

/// Time integral of `exp(−η (t − t_k))` over `[t_a, t_b] ∩ [t_k, ∞)`.
#[inline]
pub fn decay_integral<F: Scalar>(t_k: F, t_a: F, t_b: F, eta: F) -> F {
    if t_k >= t_b {
        return F::zero();
    }
    let lo = (t_a - t_k).max(F::zero());
    let hi = t_b - t_k;
    // exp(−η lo) − exp(−η hi) = exp(−η lo) · (1 − exp(−η (hi − lo)))
    (-eta * lo).exp() * -(-eta * (hi - lo)).exp_m1() / eta
}

/// Integral of `λ_c^u` over `[t_a, t_b]` and the spatial domain.
///
/// The base rate is evaluated at `context` (normally the table's average venue)
/// and integrated over an area `area = X·Y`; each history entry's kernel is
/// integrated over the whole plane, giving `8πh²`.
#[allow(clippy::too_many_arguments)]
pub fn compensator<F: Scalar>(
    category: usize,
    t_a: F,
    t_b: F,
    history: &HistoryView<F>,
    assignment: &CategoryAssignment,
    context: &VenueFeatures<F>,
    area: F,
    params: &ModelParameters<F>,
) -> Result<F> {
    assert!(t_a <= t_b, "compensator window is reversed");
    if t_a == t_b {
        return Ok(F::zero());
    }
    let base = base_rate(category, context, params) * (t_b - t_a) * area;
    let mass = params.spatial_mass();
    let mut terms = vec![base];
    for e in history.entries.iter().filter(|e| e.t < t_b) {
        let ck = e.mark.resolve(assignment)?;
        terms.push(params.alpha[category][ck] * mass * decay_integral(e.t, t_a, t_b, params.eta));
    }
    Ok(ksum(terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn entry(t: f64, lat: f64, lon: f64, c: usize) -> HistoryEntry<f64> {
        HistoryEntry {
            t,
            location: Location::new(lat, lon),
            mark: Mark::Observed(c),
        }
    }

    #[test]
    fn kernels_at_landmarks() {
        assert_eq!(temporal_kernel(0.0, 0.7), 1.0);
        assert_relative_eq!(temporal_kernel(1.0 / 0.7, 0.7), (-1.0f64).exp(), max_relative = 1e-15);
        assert_eq!(spatial_kernel(0.0, 0.3), 1.0);
        assert_relative_eq!(spatial_kernel(0.6, 0.3), (-1.0f64).exp(), max_relative = 1e-15);
        let grid: Vec<f64> = (0..50).map(|i| temporal_kernel(i as f64 * 0.1, 0.9)).collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    #[should_panic]
    fn negative_lag_is_rejected() {
        temporal_kernel(-1e-9, 1.0);
    }

    #[test]
    fn base_rate_degenerate_cases() {
        let mut p = ModelParameters::<f64>::zeros(2, 1.0, 0.1);
        let f = VenueFeatures {
            day: [0.1, 0.2, 0.0, 0.3, 0.1, 0.2, 0.1],
            hour: [0.4, 0.1, 0.2, 0.3],
        };
        assert_eq!(base_rate(1, &f, &p), 2.0);
        p.w_day[1] = [3.0, -1.0, 2.0, 0.5, 1.0, 4.0, -2.0];
        p.w_hour[1] = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(base_rate(1, &VenueFeatures::zeros(), &p), 2.0);
        // direct evaluation
        let dd: f64 = p.w_day[1].iter().zip(&f.day).map(|(a, b)| a * b).sum();
        let dh: f64 = p.w_hour[1].iter().zip(&f.hour).map(|(a, b)| a * b).sum();
        assert_relative_eq!(base_rate(1, &f, &p), dd.exp() + dh.exp(), max_relative = 1e-14);
    }

    #[test]
    fn two_event_history_by_hand() {
        let mut p = ModelParameters::<f64>::zeros(2, 0.5, 0.2);
        p.alpha = vec![vec![0.3, 1.2], vec![0.7, 0.1]];
        let f = VenueFeatures::zeros();
        let hist = HistoryView::new(vec![entry(1.0, 0.0, 0.0, 0), entry(2.5, 0.3, 0.4, 1)]);
        let at = Location::new(0.0, 0.0);
        let got =
            conditional_intensity(0, 4.0, &at, &f, &hist, &CategoryAssignment::empty(), &p).unwrap();
        // 2 + 0.3·e^{−1.5}·1 + 1.2·e^{−0.75}·e^{−0.5/0.4}
        let want = 2.0 + 0.3 * (-1.5f64).exp() + 1.2 * (-0.75f64).exp() * (-1.25f64).exp();
        assert_relative_eq!(got, want, max_relative = 1e-14);
    }

    #[test]
    fn empty_and_zero_alpha_history_give_base() {
        let p = ModelParameters::<f64>::zeros(1, 1.0, 0.1);
        let f = VenueFeatures::uniform();
        let a = CategoryAssignment::empty();
        let at = Location::new(0.0, 0.0);
        let mu = base_rate(0, &f, &p);
        assert_eq!(
            conditional_intensity(0, 3.0, &at, &f, &HistoryView::default(), &a, &p).unwrap(),
            mu
        );
        let hist = HistoryView::new(vec![entry(1.0, 0.0, 0.0, 0)]);
        assert_eq!(conditional_intensity(0, 3.0, &at, &f, &hist, &a, &p).unwrap(), mu);
    }

    #[test]
    fn unresolved_latent_errors() {
        let p = ModelParameters::<f64>::zeros(1, 1.0, 0.1);
        let hist = HistoryView::new(vec![HistoryEntry {
            t: 0.0,
            location: Location::new(0.0, 0.0),
            mark: Mark::Latent(4),
        }]);
        let r = excitation(0, 1.0, &Location::new(0.0, 0.0), &hist, &CategoryAssignment::empty(), &p);
        assert!(matches!(r, Err(Error::UnresolvedLatent(4))));
    }

    #[test]
    fn compensator_degenerate_windows() {
        let mut p = ModelParameters::<f64>::zeros(1, 1.0, 0.1);
        let f = VenueFeatures::uniform();
        let a = CategoryAssignment::empty();
        let none = HistoryView::default();
        let c = compensator(0, 2.0, 5.0, &none, &a, &f, 0.5, &p).unwrap();
        assert_relative_eq!(c, 2.0 * 3.0 * 0.5, max_relative = 1e-14);
        p.alpha[0][0] = 3.0;
        let hist = HistoryView::new(vec![entry(1.0, 0.0, 0.0, 0)]);
        assert_eq!(compensator(0, 4.0, 4.0, &hist, &a, &f, 0.5, &p).unwrap(), 0.0);
    }

    #[test]
    fn decay_integral_cases() {
        let eta = 0.8;
        // event before the window
        let v = decay_integral(1.0, 2.0, 5.0, eta);
        assert_relative_eq!(v, ((-0.8f64).exp() - (-3.2f64).exp()) / eta, max_relative = 1e-14);
        // event inside the window
        let v = decay_integral(3.0, 2.0, 5.0, eta);
        assert_relative_eq!(v, (1.0 - (-1.6f64).exp()) / eta, max_relative = 1e-14);
        assert_eq!(decay_integral(6.0, 2.0, 5.0, eta), 0.0);
    }
}
