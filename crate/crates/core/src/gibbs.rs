//! Gibbs sampling over latent categories and the retained-sample posterior.
//!
//! The full conditional of a latent category only involves factors that change
//! with it: the event's own intensity, the intensities of the same user's later
//! events, the event's share of the compensator, and the prior. [`GibbsState`]
//! keeps per-event excitation vectors up to date so that each update costs
//! `O(K · later events of the user)`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryAssignment, EventLog};
use crate::error::{Error, Result};
use crate::features::VenueFeatureTable;
use crate::intensity::base_rate;
use crate::likelihood::KernelCache;
use crate::params::ModelParameters;
use crate::scalar::{ksum, normalize_log_weights, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub total_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            total_iters: 1000,
            burn_in: 750,
            thin: 3,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_iters {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be below total_iters ({})",
                self.burn_in, self.total_iters
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of sweeps kept: `⌊(total_iters − burn_in) / thin⌋`.
    pub fn retained(&self) -> usize {
        (self.total_iters - self.burn_in) / self.thin
    }

    fn keeps(&self, sweep: usize) -> bool {
        sweep > self.burn_in && (sweep - self.burn_in) % self.thin == 0
    }
}

/// Mutable sampler state for one chain.
pub struct GibbsState<'a, F> {
    log: &'a EventLog<F>,
    params: &'a ModelParameters<F>,
    cache: &'a KernelCache<F>,
    assignment: CategoryAssignment,
    categories: Vec<usize>,
    /// `N × K`: summed parent kernels by parent category.
    excitation: Vec<F>,
    /// `N × K`: `μ_k` at each event's venue.
    base: Vec<F>,
}

impl<'a, F: Scalar> GibbsState<'a, F> {
    pub fn new(
        log: &'a EventLog<F>,
        features: &VenueFeatureTable<F>,
        params: &'a ModelParameters<F>,
        cache: &'a KernelCache<F>,
        assignment: CategoryAssignment,
    ) -> Result<Self> {
        log.check_assignment(&assignment)?;
        if !cache.matches(params) {
            return Err(Error::Invalid("kernel cache built for other η, h".into()));
        }
        let k = log.n_categories();
        let categories: Vec<usize> = (0..log.len())
            .map(|p| log.category_of(p, &assignment))
            .collect::<Result<_>>()?;
        let mut excitation = vec![F::zero(); log.len() * k];
        for (n, parents) in cache.parents.iter().enumerate() {
            for &(p, kv) in parents {
                let ix = n * k + categories[p];
                excitation[ix] = excitation[ix] + kv;
            }
        }
        let mut base = Vec::with_capacity(log.len() * k);
        for e in log.events() {
            let f = features.get(e.venue)?;
            base.extend((0..k).map(|c| base_rate(c, f, params)));
        }
        Ok(Self {
            log,
            params,
            cache,
            assignment,
            categories,
            excitation,
            base,
        })
    }

    pub fn assignment(&self) -> &CategoryAssignment {
        &self.assignment
    }

    pub fn into_assignment(self) -> CategoryAssignment {
        self.assignment
    }

    fn intensity_with(&self, pos: usize, c: usize) -> F {
        let k = self.params.n_categories();
        let row = &self.excitation[pos * k..(pos + 1) * k];
        self.base[pos * k + c] + ksum(self.params.alpha[c].iter().zip(row).map(|(a, e)| *a * *e))
    }

    /// Unnormalised log conditional weights for the latent event of the given rank.
    pub fn log_weights(&self, rank: usize) -> Vec<F> {
        let k = self.params.n_categories();
        let pos = self.log.latent_index()[rank];
        let current = self.categories[pos];
        let alpha = &self.params.alpha;
        // Later events' intensities without this event's contribution.
        let children: Vec<(usize, F, F)> = self.cache.children[pos]
            .iter()
            .map(|&(m, kv)| {
                let cm = self.categories[m];
                (cm, kv, self.intensity_with(m, cm) - alpha[cm][current] * kv)
            })
            .collect();
        let tail = self.cache.tail_mass[pos];
        (0..k)
            .map(|cand| {
                let own = self.intensity_with(pos, cand).floored_ln();
                let later =
                    ksum(children.iter().map(|&(cm, kv, rest)| (rest + alpha[cm][cand] * kv).floored_ln()));
                let comp = ksum((0..k).map(|c| alpha[c][cand])) * tail;
                own + later - comp + self.params.prior[cand].floored_ln()
            })
            .collect()
    }

    /// Full conditional distribution of the latent event of the given rank.
    pub fn conditional(&self, rank: usize) -> Vec<F> {
        normalize_log_weights(&self.log_weights(rank))
    }

    /// Sets a latent category and updates the dependent excitation vectors.
    pub fn set(&mut self, rank: usize, category: usize) {
        let k = self.params.n_categories();
        let pos = self.log.latent_index()[rank];
        let old = self.categories[pos];
        if old == category {
            return;
        }
        for &(m, kv) in &self.cache.children[pos] {
            self.excitation[m * k + old] = self.excitation[m * k + old] - kv;
            self.excitation[m * k + category] = self.excitation[m * k + category] + kv;
        }
        self.categories[pos] = category;
        self.assignment.set_rank(rank, category);
    }

    /// Resamples every latent category once, in event order.
    pub fn sweep<R: Rng>(&mut self, rng: &mut R) {
        for rank in 0..self.log.n_latent() {
            let p = self.conditional(rank);
            let c = draw_categorical(&p, rng);
            self.set(rank, c);
        }
    }

    #[cfg(test)]
    pub(crate) fn excitation(&self) -> &[F] {
        &self.excitation
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn draw_categorical<F: Scalar, R: Rng>(probs: &[F], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the total; take the last category with mass.
    probs
        .iter()
        .rposition(|p| *p > F::zero())
        .unwrap_or(probs.len() - 1)
}

/// Full conditional of the latent event at position `pos` given all other latent values.
pub fn gibbs_conditional<F: Scalar>(
    pos: usize,
    current: &CategoryAssignment,
    log: &EventLog<F>,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
) -> Result<Vec<F>> {
    let rank = log.latent_rank(pos).ok_or(Error::NotLatent(pos))?;
    let cache = KernelCache::new(log, params);
    let state = GibbsState::new(log, features, params, &cache, current.clone())?;
    Ok(state.conditional(rank))
}

/// One Gibbs sweep from `state`.
pub fn gibbs_sweep<F: Scalar, R: Rng>(
    state: &CategoryAssignment,
    log: &EventLog<F>,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
    rng: &mut R,
) -> Result<CategoryAssignment> {
    let cache = KernelCache::new(log, params);
    let mut s = GibbsState::new(log, features, params, &cache, state.clone())?;
    s.sweep(rng);
    Ok(s.into_assignment())
}

/// Retained Gibbs samples and their per-event category counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPosterior {
    n_categories: usize,
    positions: Vec<usize>,
    samples: Vec<CategoryAssignment>,
    histogram: Vec<Vec<u32>>,
}

impl CategoryPosterior {
    pub fn from_samples(
        positions: Vec<usize>,
        n_categories: usize,
        samples: Vec<CategoryAssignment>,
    ) -> Self {
        let mut histogram = vec![vec![0u32; n_categories]; positions.len()];
        for s in &samples {
            debug_assert_eq!(s.positions(), positions.as_slice());
            for (rank, &v) in s.values().iter().enumerate() {
                histogram[rank][v] += 1;
            }
        }
        Self {
            n_categories,
            positions,
            samples,
            histogram,
        }
    }

    /// Posterior known only through counts (e.g. read back from CSV).
    pub fn from_histogram(positions: Vec<usize>, n_categories: usize, histogram: Vec<Vec<u32>>) -> Self {
        Self {
            n_categories,
            positions,
            samples: Vec::new(),
            histogram,
        }
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    /// Latent event positions, aligned with [`Self::histogram`] rows.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn samples(&self) -> &[CategoryAssignment] {
        &self.samples
    }

    pub fn histogram(&self) -> &[Vec<u32>] {
        &self.histogram
    }

    /// Number of retained samples, as seen in the counts.
    pub fn sample_count(&self) -> u32 {
        self.histogram.first().map(|h| h.iter().sum()).unwrap_or(0)
    }

    /// Most frequent category per latent event (ties: lowest index).
    pub fn argmax(&self) -> Vec<usize> {
        self.histogram
            .iter()
            .map(|h| {
                h.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Assignment holding every event's modal category.
    pub fn mode<F: Scalar>(&self, log: &EventLog<F>) -> Result<CategoryAssignment> {
        if self.positions != log.latent_index() {
            return Err(Error::AssignmentMismatch(
                "posterior rows do not match the log's latent events".into(),
            ));
        }
        CategoryAssignment::for_log(log, self.argmax())
    }

    /// Merges another chain's samples by histogram union.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.positions != self.positions || other.n_categories != self.n_categories {
            return Err(Error::AssignmentMismatch("posteriors cover different events".into()));
        }
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.samples.extend(other.samples.iter().cloned());
        Ok(())
    }

    /// CSV `event_pos,cat_0_count,...,cat_{K-1}_count`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["event_pos".to_string()];
        header.extend((0..self.n_categories).map(|c| format!("cat_{c}_count")));
        w.write_record(&header)?;
        for (pos, h) in self.positions.iter().zip(&self.histogram) {
            let mut row = vec![pos.to_string()];
            row.extend(h.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(source);
        let k = rdr.headers()?.len().saturating_sub(1);
        let mut positions = Vec::new();
        let mut histogram = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::MalformedRow {
                row: i + 2,
                reason: what.to_string(),
            };
            let nums: Vec<u64> = rec
                .iter()
                .map(|s| s.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("non-integer field"))?;
            positions.push(nums[0] as usize);
            histogram.push(nums[1..].iter().map(|&c| c as u32).collect());
        }
        Ok(Self::from_histogram(positions, k, histogram))
    }
}

/// Runs `cfg.total_iters` sweeps from `init` and keeps every `thin`-th sweep after burn-in.
pub fn e_step<F: Scalar>(
    log: &EventLog<F>,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
    init: &CategoryAssignment,
    cfg: &GibbsConfig,
) -> Result<CategoryPosterior> {
    let cache = KernelCache::new(log, params);
    e_step_cached(log, features, params, &cache, init, cfg)
}

pub(crate) fn e_step_cached<F: Scalar>(
    log: &EventLog<F>,
    features: &VenueFeatureTable<F>,
    params: &ModelParameters<F>,
    cache: &KernelCache<F>,
    init: &CategoryAssignment,
    cfg: &GibbsConfig,
) -> Result<CategoryPosterior> {
    cfg.validate()?;
    let positions = log.latent_index().to_vec();
    if log.n_latent() == 0 {
        log.check_assignment(init)?;
        return Ok(CategoryPosterior::from_samples(positions, log.n_categories(), Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = GibbsState::new(log, features, params, cache, init.clone())?;
    let mut samples = Vec::with_capacity(cfg.retained());
    for sweep in 1..=cfg.total_iters {
        state.sweep(&mut rng);
        if cfg.keeps(sweep) {
            samples.push(state.assignment().clone());
        }
    }
    Ok(CategoryPosterior::from_samples(positions, log.n_categories(), samples))
}
