//! Log-likelihood of a check-in log given a category assignment, the log prior
//! over latent categories, and analytic gradients of the Monte-Carlo expected
//! log joint likelihood.
//!
//! Kernels depend only on `η`, `h` and the event geometry, so they are tabulated
//! once per log ([`KernelCache`]). For a fixed assignment every event then
//! reduces to a K-vector of summed kernel values by history category, which
//! makes the objective and its gradient linear in the number of events.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryAssignment, EventLog};
use crate::error::{Error, Result};
use crate::features::{VenueFeatureTable, VenueFeatures, DAY_BINS, HOUR_BINS};
use crate::intensity::{
    base_terms, compensator, conditional_intensity, decay_integral, spatial_kernel,
    temporal_kernel, HistoryView,
};
use crate::params::ModelParameters;
use crate::scalar::{ksum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodBreakdown<F> {
    /// `Σ_n log λ_n`.
    pub log_events: F,
    /// Total integrated intensity over all users and categories.
    pub log_compensator: F,
    /// `Σ_i log p(z_i)`.
    pub log_prior: F,
    /// `log_events − log_compensator + log_prior`.
    pub total: F,
}

/// Kernel values between same-user event pairs and each event's integrated kernel mass.
#[derive(Debug, Clone)]
pub struct KernelCache<F> {
    /// For each event, `(k, kernel(n, k))` over same-user predecessors with `t_k < t_n`.
    pub(crate) parents: Vec<Vec<(usize, F)>>,
    /// For each event, `(n, kernel(n, k))` over same-user successors with `t_n > t_k`.
    pub(crate) children: Vec<Vec<(usize, F)>>,
    /// `8πh² ∫_{t_k}^{T_max} exp(−η (t − t_k)) dt` per event.
    pub(crate) tail_mass: Vec<F>,
    eta: F,
    h: F,
}

impl<F: Scalar> KernelCache<F> {
    pub fn new(log: &EventLog<F>, params: &ModelParameters<F>) -> Self {
        let n = log.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for u in 0..log.n_users() {
            let evs = log.user_events(u);
            for (i, &pn) in evs.iter().enumerate() {
                let en = log.event(pn);
                for &pk in &evs[..i] {
                    let ek = log.event(pk);
                    if ek.timestamp >= en.timestamp {
                        continue;
                    }
                    let k = temporal_kernel(en.timestamp - ek.timestamp, params.eta)
                        * spatial_kernel(
                            params.distance.distance(&en.location, &ek.location),
                            params.h,
                        );
                    parents[pn].push((pk, k));
                    children[pk].push((pn, k));
                }
            }
        }
        let b = log.bounds();
        let mass = params.spatial_mass();
        let tail_mass = log
            .events()
            .iter()
            .map(|e| mass * decay_integral(e.timestamp, b.t_min, b.t_max, params.eta))
            .collect();
        Self {
            parents,
            children,
            tail_mass,
            eta: params.eta,
            h: params.h,
        }
    }

    pub(crate) fn matches(&self, params: &ModelParameters<F>) -> bool {
        self.eta == params.eta && self.h == params.h
    }
}

/// Assignment-dependent summaries of a log.
#[derive(Debug, Clone)]
pub struct AssignmentStats<F> {
    categories: Vec<usize>,
    /// Row-major `N × K`: summed parent kernels grouped by parent category.
    excitation: Vec<F>,
    /// Per category `j`: `Σ_{k: c_k = j} tail_mass_k`.
    tail_by_category: Vec<F>,
    latent_categories: Vec<usize>,
}

impl<F: Scalar> AssignmentStats<F> {
    pub fn new(
        log: &EventLog<F>,
        cache: &KernelCache<F>,
        assignment: &CategoryAssignment,
    ) -> Result<Self> {
        log.check_assignment(assignment)?;
        let k = log.n_categories();
        let categories: Vec<usize> = (0..log.len())
            .map(|p| log.category_of(p, assignment))
            .collect::<Result<_>>()?;
        let mut excitation = vec![F::zero(); log.len() * k];
        for (n, parents) in cache.parents.iter().enumerate() {
            let row = &mut excitation[n * k..(n + 1) * k];
            for &(p, kv) in parents {
                row[categories[p]] = row[categories[p]] + kv;
            }
        }
        let mut tail_by_category = vec![F::zero(); k];
        for (n, &c) in categories.iter().enumerate() {
            tail_by_category[c] = tail_by_category[c] + cache.tail_mass[n];
        }
        Ok(Self {
            categories,
            excitation,
            tail_by_category,
            latent_categories: assignment.values().to_vec(),
        })
    }
}

/// `Σ_i log p(z_i)`, floored at `log(1e-12)` per term.
pub fn log_prior<F: Scalar>(assignment: &CategoryAssignment, prior: &[F]) -> F {
    ksum(assignment.values().iter().map(|&z| prior[z].floored_ln()))
}

/// L2 regularisation weights per parameter group. The penalty is `½ λ ‖θ‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Weights<F> {
    pub day: F,
    pub hour: F,
    pub alpha: F,
}

impl<F: Scalar> Default for L2Weights<F> {
    fn default() -> Self {
        Self {
            day: F::of(1e-2),
            hour: F::of(1e-2),
            alpha: F::of(1e-2),
        }
    }
}

impl<F: Scalar> L2Weights<F> {
    pub fn zero() -> Self {
        Self {
            day: F::zero(),
            hour: F::zero(),
            alpha: F::zero(),
        }
    }

    pub fn penalty(&self, p: &ModelParameters<F>) -> F {
        let sq = |it: &mut dyn Iterator<Item = &F>| ksum(it.map(|x| *x * *x));
        let half = F::of(0.5);
        half * self.day * sq(&mut p.w_day.iter().flatten())
            + half * self.hour * sq(&mut p.w_hour.iter().flatten())
            + half * self.alpha * sq(&mut p.alpha.iter().flatten())
    }
}

/// Gradient over the learnable groups (`η`, `h` and the prior are fixed).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient<F> {
    pub w_day: Vec<[F; DAY_BINS]>,
    pub w_hour: Vec<[F; HOUR_BINS]>,
    pub alpha: Vec<Vec<F>>,
    /// `true` where `α = 0` and the gradient points out of the feasible set;
    /// a projected ascent step leaves those entries at zero.
    pub alpha_at_bound: Vec<Vec<bool>>,
}

impl<F: Scalar> ParamGradient<F> {
    pub fn zeros(k: usize) -> Self {
        Self {
            w_day: vec![[F::zero(); DAY_BINS]; k],
            w_hour: vec![[F::zero(); HOUR_BINS]; k],
            alpha: vec![vec![F::zero(); k]; k],
            alpha_at_bound: vec![vec![false; k]; k],
        }
    }

    /// Gradient with bound-active `α` components zeroed.
    pub fn projected(&self) -> Self {
        let mut g = self.clone();
        for (row, mask) in g.alpha.iter_mut().zip(&self.alpha_at_bound) {
            for (a, &m) in row.iter_mut().zip(mask) {
                if m {
                    *a = F::zero();
                }
            }
        }
        g
    }

    /// Flattened view, in the order w_day, w_hour, alpha.
    pub fn to_vec(&self) -> Vec<F> {
        self.w_day
            .iter()
            .flatten()
            .chain(self.w_hour.iter().flatten())
            .chain(self.alpha.iter().flatten())
            .copied()
            .collect()
    }

    pub fn dot(&self, other: &Self) -> F {
        ksum(self.to_vec().into_iter().zip(other.to_vec()).map(|(a, b)| a * b))
    }

    fn add_scaled(&mut self, other: &Self, s: F) {
        for (a, b) in self.w_day.iter_mut().zip(&other.w_day) {
            for i in 0..DAY_BINS {
                a[i] = a[i] + s * b[i];
            }
        }
        for (a, b) in self.w_hour.iter_mut().zip(&other.w_hour) {
            for i in 0..HOUR_BINS {
                a[i] = a[i] + s * b[i];
            }
        }
        for (a, b) in self.alpha.iter_mut().zip(&other.alpha) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + s * *y;
            }
        }
    }
}

/// Monte-Carlo expected log joint likelihood over a set of assignments,
/// minus the L2 penalty, with its analytic gradient.
pub struct ExpectedObjective<'a, F> {
    log: &'a EventLog<F>,
    features: &'a VenueFeatureTable<F>,
    cache: KernelCache<F>,
    samples: Vec<AssignmentStats<F>>,
    l2: L2Weights<F>,
}

struct SampleValue<F> {
    log_events: F,
    excitation_mass: F,
    log_prior: F,
}

impl<'a, F: Scalar> ExpectedObjective<'a, F> {
    pub fn new(
        log: &'a EventLog<F>,
        features: &'a VenueFeatureTable<F>,
        samples: &[CategoryAssignment],
        params: &ModelParameters<F>,
        l2: L2Weights<F>,
    ) -> Result<Self> {
        Self::with_cache(log, features, KernelCache::new(log, params), samples, l2)
    }

    pub fn with_cache(
        log: &'a EventLog<F>,
        features: &'a VenueFeatureTable<F>,
        cache: KernelCache<F>,
        samples: &[CategoryAssignment],
        l2: L2Weights<F>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("the sample set is empty".into()));
        }
        if features.len() < log.venues().len() {
            return Err(Error::UnknownVenue(features.len()));
        }
        let samples = samples
            .par_iter()
            .map(|a| AssignmentStats::new(log, &cache, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            log,
            features,
            cache,
            samples,
            l2,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn l2(&self) -> L2Weights<F> {
        self.l2
    }

    fn venue_features(&self, pos: usize) -> &VenueFeatures<F> {
        &self.features.rows()[self.log.event(pos).venue]
    }

    /// `M · T · X · Y · Σ_c μ_c(average venue)`.
    fn base_mass(&self, params: &ModelParameters<F>) -> F {
        let b = self.log.bounds();
        let scale = F::of(self.log.n_users() as f64) * b.duration() * b.area();
        let avg = self.features.average();
        scale
            * ksum((0..params.n_categories()).map(|c| {
                let (d, h) = base_terms(c, avg, params);
                d + h
            }))
    }

    fn intensity(&self, s: &AssignmentStats<F>, pos: usize, params: &ModelParameters<F>) -> F {
        let k = params.n_categories();
        let c = s.categories[pos];
        let (d, h) = base_terms(c, self.venue_features(pos), params);
        let row = &s.excitation[pos * k..(pos + 1) * k];
        d + h + ksum(params.alpha[c].iter().zip(row).map(|(a, e)| *a * *e))
    }

    fn sample_value(&self, s: &AssignmentStats<F>, params: &ModelParameters<F>) -> SampleValue<F> {
        let log_events = ksum((0..self.log.len()).map(|n| self.intensity(s, n, params).floored_ln()));
        let excitation_mass = ksum(params.alpha.iter().flat_map(|row| {
            row.iter()
                .zip(&s.tail_by_category)
                .map(|(a, m)| *a * *m)
        }));
        let log_prior = ksum(s.latent_categories.iter().map(|&z| params.prior[z].floored_ln()));
        SampleValue {
            log_events,
            excitation_mass,
            log_prior,
        }
    }

    /// Likelihood decomposition for one retained sample.
    pub fn breakdown(&self, sample: usize, params: &ModelParameters<F>) -> LikelihoodBreakdown<F> {
        let v = self.sample_value(&self.samples[sample], params);
        let log_compensator = self.base_mass(params) + v.excitation_mass;
        LikelihoodBreakdown {
            log_events: v.log_events,
            log_compensator,
            log_prior: v.log_prior,
            total: v.log_events - log_compensator + v.log_prior,
        }
    }

    /// Per-sample log joint likelihood (unregularised).
    pub fn sample_values(&self, params: &ModelParameters<F>) -> Vec<F> {
        let base = self.base_mass(params);
        self.samples
            .par_iter()
            .map(|s| {
                let v = self.sample_value(s, params);
                v.log_events - base - v.excitation_mass + v.log_prior
            })
            .collect()
    }

    /// `(1/S) Σ_s [log p(E | z^s) + log p(z^s)] − penalty`.
    pub fn value(&self, params: &ModelParameters<F>) -> F {
        debug_assert!(self.cache.matches(params));
        let vals = self.sample_values(params);
        ksum(vals) / F::of(self.samples.len() as f64) - self.l2.penalty(params)
    }

    fn sample_gradient(&self, s: &AssignmentStats<F>, params: &ModelParameters<F>) -> ParamGradient<F> {
        let k = params.n_categories();
        let mut g = ParamGradient::zeros(k);
        for n in 0..self.log.len() {
            let lambda = self.intensity(s, n, params);
            if lambda < F::log_floor() {
                continue;
            }
            let inv = lambda.recip();
            let c = s.categories[n];
            let f = self.venue_features(n);
            let (d, h) = base_terms(c, f, params);
            for i in 0..DAY_BINS {
                g.w_day[c][i] = g.w_day[c][i] + d * f.day[i] * inv;
            }
            for i in 0..HOUR_BINS {
                g.w_hour[c][i] = g.w_hour[c][i] + h * f.hour[i] * inv;
            }
            let row = &s.excitation[n * k..(n + 1) * k];
            for j in 0..k {
                g.alpha[c][j] = g.alpha[c][j] + row[j] * inv;
            }
        }
        for c in 0..k {
            for j in 0..k {
                g.alpha[c][j] = g.alpha[c][j] - s.tail_by_category[j];
            }
        }
        g
    }

    /// Objective value and its gradient.
    pub fn value_and_gradient(&self, params: &ModelParameters<F>) -> (F, ParamGradient<F>) {
        debug_assert!(self.cache.matches(params));
        let k = params.n_categories();
        let grads: Vec<ParamGradient<F>> = self
            .samples
            .par_iter()
            .map(|s| self.sample_gradient(s, params))
            .collect();
        let inv_s = F::one() / F::of(self.samples.len() as f64);
        let mut g = ParamGradient::zeros(k);
        for sg in &grads {
            g.add_scaled(sg, inv_s);
        }

        // Base mass: M·T·XY·Σ_c (exp(w_day·x̄_day) + exp(w_hour·x̄_hour)).
        let b = self.log.bounds();
        let scale = F::of(self.log.n_users() as f64) * b.duration() * b.area();
        let avg = self.features.average();
        for c in 0..k {
            let (d, h) = base_terms(c, avg, params);
            for i in 0..DAY_BINS {
                g.w_day[c][i] = g.w_day[c][i] - scale * d * avg.day[i];
            }
            for i in 0..HOUR_BINS {
                g.w_hour[c][i] = g.w_hour[c][i] - scale * h * avg.hour[i];
            }
        }

        for c in 0..k {
            for i in 0..DAY_BINS {
                g.w_day[c][i] = g.w_day[c][i] - self.l2.day * params.w_day[c][i];
            }
            for i in 0..HOUR_BINS {
                g.w_hour[c][i] = g.w_hour[c][i] - self.l2.hour * params.w_hour[c][i];
            }
            for j in 0..k {
                g.alpha[c][j] = g.alpha[c][j] - self.l2.alpha * params.alpha[c][j];
                g.alpha_at_bound[c][j] =
                    params.alpha[c][j] <= F::zero() && g.alpha[c][j] < F::zero();
            }
        }
        (self.value(params), g)
    }
}

/// Log-likelihood breakdown of `log` under one assignment.
pub fn log_likelihood<F: Scalar>(
    log: &EventLog<F>,
    assignment: &CategoryAssignment,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
) -> Result<LikelihoodBreakdown<F>> {
    let obj = ExpectedObjective::new(
        log,
        features,
        std::slice::from_ref(assignment),
        params,
        L2Weights::zero(),
    )?;
    Ok(obj.breakdown(0, params))
}

/// Gradient of the averaged log joint likelihood over `samples`, minus the L2 terms.
pub fn gradient<F: Scalar>(
    log: &EventLog<F>,
    samples: &[CategoryAssignment],
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
    l2: L2Weights<F>,
) -> Result<ParamGradient<F>> {
    let obj = ExpectedObjective::new(log, features, samples, params, l2)?;
    Ok(obj.value_and_gradient(params).1)
}

/// Log-likelihood of the events in `[t_a, t_b)` conditioned on everything before
/// them, with the compensator taken over the same window. Evaluated directly from
/// history views; used for held-out scoring.
pub fn log_likelihood_window<F: Scalar>(
    log: &EventLog<F>,
    assignment: &CategoryAssignment,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
    t_a: F,
    t_b: F,
) -> Result<LikelihoodBreakdown<F>> {
    log.check_assignment(assignment)?;
    let mut log_events = Vec::new();
    let mut log_prior_terms = Vec::new();
    for (pos, e) in log.events().iter().enumerate() {
        if e.timestamp < t_a || e.timestamp >= t_b {
            continue;
        }
        let c = log.category_of(pos, assignment)?;
        let hist = HistoryView::for_user(log, e.user, e.timestamp);
        let lambda = conditional_intensity(
            c,
            e.timestamp,
            &e.location,
            features.get(e.venue)?,
            &hist,
            assignment,
            params,
        )?;
        log_events.push(lambda.floored_ln());
        if e.category.is_none() {
            log_prior_terms.push(params.prior[c].floored_ln());
        }
    }
    let area = log.bounds().area();
    let mut comp = Vec::new();
    for u in 0..log.n_users() {
        let hist = HistoryView::for_user(log, u, t_b);
        for c in 0..params.n_categories() {
            comp.push(compensator(
                c,
                t_a,
                t_b,
                &hist,
                assignment,
                features.average(),
                area,
                params,
            )?);
        }
    }
    let log_events = ksum(log_events);
    let log_compensator = ksum(comp);
    let log_prior = ksum(log_prior_terms);
    Ok(LikelihoodBreakdown {
        log_events,
        log_compensator,
        log_prior,
        total: log_events - log_compensator + log_prior,
    })
}
