//! Stochastic EM: a Gibbs E-step over latent categories alternating with a
//! projected gradient-ascent M-step on the Monte-Carlo expected log joint
//! likelihood. `η` and `h` are held fixed throughout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryAssignment, EventLog};
use crate::error::{Error, Result};
use crate::features::{VenueFeatureTable, DAY_BINS, HOUR_BINS};
use crate::gibbs::{e_step_cached, CategoryPosterior, GibbsConfig};
use crate::likelihood::{ExpectedObjective, KernelCache, L2Weights, ParamGradient};
use crate::params::ModelParameters;
use crate::scalar::{ksum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStepConfig {
    /// Initial step size; adapted by backtracking and growth.
    pub learning_rate: f64,
    pub max_steps: usize,
    pub l2: L2Weights<f64>,
    /// Stop when the relative objective gain of a step falls below this.
    pub tol: f64,
}

impl Default for MStepConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_steps: 50,
            l2: L2Weights::default(),
            tol: 1e-12,
        }
    }
}

/// Initial values for the latent categories of each E-step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    #[default]
    Random,
    MostFrequent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_em_iters: usize,
    pub rel_tol: f64,
    pub m_step: MStepConfig,
    pub gibbs: GibbsConfig,
    pub init: LatentInit,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_em_iters: 20,
            rel_tol: 1e-10,
            m_step: MStepConfig::default(),
            gibbs: GibbsConfig::default(),
            init: LatentInit::Random,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("rel_tol must be > 0".into()));
        }
        if !(self.m_step.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        self.gibbs.validate()
    }
}

/// One EM iteration's objective, evaluated on that iteration's samples after the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Regularised Monte-Carlo expected log joint likelihood.
    pub objective: f64,
    /// Standard error of the sample mean of the per-sample log joint.
    pub std_error: f64,
    pub m_steps: usize,
}

#[derive(Debug, Clone)]
pub struct EmResult<F> {
    pub params: ModelParameters<F>,
    pub posterior: CategoryPosterior,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
}

fn group_of<F: Scalar>(g: &ParamGradient<F>, p: &ModelParameters<F>) -> &'static str {
    fn bad<'x, F: Scalar + 'x>(it: impl IntoIterator<Item = &'x F>) -> bool {
        it.into_iter().any(|x| !x.is_finite())
    }
    if bad(p.w_day.iter().flatten()) || bad(g.w_day.iter().flatten()) {
        "w_day"
    } else if bad(p.w_hour.iter().flatten()) || bad(g.w_hour.iter().flatten()) {
        "w_hour"
    } else if bad(p.alpha.iter().flatten()) || bad(g.alpha.iter().flatten()) {
        "alpha"
    } else {
        "likelihood"
    }
}

/// `P(θ + step · g)` with `α` clamped at zero.
fn ascent_point<F: Scalar>(p: &ModelParameters<F>, g: &ParamGradient<F>, step: F) -> ModelParameters<F> {
    let mut q = p.clone();
    for c in 0..p.n_categories() {
        for i in 0..DAY_BINS {
            q.w_day[c][i] = p.w_day[c][i] + step * g.w_day[c][i];
        }
        for i in 0..HOUR_BINS {
            q.w_hour[c][i] = p.w_hour[c][i] + step * g.w_hour[c][i];
        }
        for j in 0..p.n_categories() {
            q.alpha[c][j] = (p.alpha[c][j] + step * g.alpha[c][j]).max(F::zero());
        }
    }
    q
}

/// `Σ g · (q − p)` over all learnable coordinates.
fn directional<F: Scalar>(p: &ModelParameters<F>, q: &ModelParameters<F>, g: &ParamGradient<F>) -> F {
    let diff = |a: &[F], b: &[F], gg: &[F]| ksum(a.iter().zip(b).zip(gg).map(|((x, y), z)| (*y - *x) * *z));
    let mut total = F::zero();
    for c in 0..p.n_categories() {
        total = total + diff(&p.w_day[c], &q.w_day[c], &g.w_day[c]);
        total = total + diff(&p.w_hour[c], &q.w_hour[c], &g.w_hour[c]);
        total = total + diff(&p.alpha[c], &q.alpha[c], &g.alpha[c]);
    }
    total
}

fn run_ascent<F: Scalar>(
    obj: &ExpectedObjective<'_, F>,
    init: &ModelParameters<F>,
    cfg: &MStepConfig,
) -> Result<(ModelParameters<F>, usize)> {
    let mut p = init.clone();
    let (mut f, mut g) = obj.value_and_gradient(&p);
    if !f.is_finite() || g.to_vec().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            group: group_of(&g, &p),
        });
    }
    let mut lr = F::of(cfg.learning_rate);
    let armijo = F::of(1e-4);
    let mut steps = 0;
    if lr <= F::zero() {
        return Ok((p, 0));
    }
    for _ in 0..cfg.max_steps {
        let mut accepted = None;
        for _ in 0..60 {
            let q = ascent_point(&p, &g, lr);
            let fq = obj.value(&q);
            let gain = directional(&p, &q, &g);
            if fq.is_finite() && fq >= f + armijo * gain && fq >= f {
                accepted = Some((q, fq));
                break;
            }
            lr = lr * F::of(0.5);
        }
        let Some((q, fq)) = accepted else { break };
        let rel = (fq - f).abs() / f.abs().max(F::one());
        p = q;
        f = fq;
        steps += 1;
        if rel < F::of(cfg.tol) {
            break;
        }
        g = obj.value_and_gradient(&p).1;
        lr = lr * F::of(2.0);
    }
    Ok((p, steps))
}

/// Sample set used by the M-step: the posterior's samples, or the single empty
/// assignment when the log has no latent events.
fn sample_set<F: Scalar>(log: &EventLog<F>, posterior: &CategoryPosterior) -> Result<Vec<CategoryAssignment>> {
    if log.n_latent() == 0 {
        return Ok(vec![CategoryAssignment::empty()]);
    }
    if posterior.samples().is_empty() {
        return Err(Error::Invalid("posterior holds no samples".into()));
    }
    Ok(posterior.samples().to_vec())
}

/// Projected gradient ascent on the expected log joint likelihood under `posterior`.
///
/// Each accepted step satisfies an Armijo condition, so the returned parameters
/// never score below `params_init`.
pub fn m_step<F: Scalar>(
    log: &EventLog<F>,
    features: &VenueFeatureTable<F>,
    posterior: &CategoryPosterior,
    params_init: &ModelParameters<F>,
    cfg: &MStepConfig,
) -> Result<ModelParameters<F>> {
    params_init.validate()?;
    let samples = sample_set(log, posterior)?;
    let obj = ExpectedObjective::new(log, features, &samples, params_init, l2_of(cfg))?;
    Ok(run_ascent(&obj, params_init, cfg)?.0)
}

fn l2_of<F: Scalar>(cfg: &MStepConfig) -> L2Weights<F> {
    L2Weights {
        day: F::of(cfg.l2.day),
        hour: F::of(cfg.l2.hour),
        alpha: F::of(cfg.l2.alpha),
    }
}

/// Starting values for the latent categories of an E-step.
pub fn initial_assignment<F: Scalar>(log: &EventLog<F>, init: LatentInit, rng: &mut ChaCha8Rng) -> CategoryAssignment {
    match init {
        LatentInit::Random => CategoryAssignment::uniform_random(log, rng),
        LatentInit::MostFrequent => CategoryAssignment::most_frequent(log),
    }
}

/// Mixes the iteration number into the chain seed.
fn chain_seed(seed: u64, iteration: usize) -> u64 {
    seed ^ (iteration as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Alternates E- and M-steps until the 3-iteration moving average of the
/// objective changes by less than `rel_tol` (relative), or `max_em_iters`.
pub fn run_em<F: Scalar>(
    log: &EventLog<F>,
    features: &VenueFeatureTable<F>,
    cfg: &EmConfig,
    init_params: &ModelParameters<F>,
) -> Result<EmResult<F>> {
    cfg.validate()?;
    init_params.validate()?;
    if init_params.n_categories() != log.n_categories() {
        return Err(Error::InvalidParameters(format!(
            "parameters have {} categories, the log {}",
            init_params.n_categories(),
            log.n_categories()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.gibbs.seed);
    let cache = KernelCache::new(log, init_params);
    let mut params = init_params.clone();
    let l2 = l2_of::<F>(&cfg.m_step);

    let first = initial_assignment(log, cfg.init, &mut rng);
    let mut posterior = if log.n_latent() == 0 {
        CategoryPosterior::from_samples(Vec::new(), log.n_categories(), Vec::new())
    } else {
        CategoryPosterior::from_samples(log.latent_index().to_vec(), log.n_categories(), vec![first])
    };
    let mut trace = Vec::new();
    let mut averages: Vec<f64> = Vec::new();
    let mut converged = false;

    for it in 0..cfg.max_em_iters {
        let init = if it == 0 {
            posterior
                .samples()
                .first()
                .cloned()
                .unwrap_or_else(CategoryAssignment::empty)
        } else {
            initial_assignment(log, cfg.init, &mut rng)
        };
        let gcfg = GibbsConfig {
            seed: chain_seed(cfg.gibbs.seed, it),
            ..cfg.gibbs
        };
        posterior = e_step_cached(log, features, &params, &cache, &init, &gcfg)?;
        let samples = sample_set(log, &posterior)?;
        let obj = ExpectedObjective::with_cache(log, features, cache.clone(), &samples, l2)?;
        let (next, m_steps) = run_ascent(&obj, &params, &cfg.m_step)?;
        params = next;
        warn_if_diverging(&params, it);

        let values: Vec<f64> = obj.sample_values(&params).iter().map(|v| v.as_f64()).collect();
        let objective = obj.value(&params).as_f64();
        let std_error = std_error(&values);
        log::debug!("em iteration {it}: objective {objective:.6} (se {std_error:.3e}, {m_steps} ascent steps)");
        trace.push(TraceEntry {
            iteration: it,
            objective,
            std_error,
            m_steps,
        });

        let window = &trace[trace.len().saturating_sub(3)..];
        averages.push(window.iter().map(|t| t.objective).sum::<f64>() / window.len() as f64);
        if trace.len() > 3 {
            let (prev, cur) = (averages[averages.len() - 2], averages[averages.len() - 1]);
            if ((cur - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < cfg.rel_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(EmResult {
        params,
        posterior,
        trace,
        converged,
    })
}

/// Feature weights beyond this magnitude usually mean the base-rate terms are
/// running away and the L2 weights on `w_day`/`w_hour` are too small.
const WEIGHT_WARN: f64 = 50.0;

fn warn_if_diverging<F: Scalar>(params: &ModelParameters<F>, iteration: usize) {
    let largest = params
        .w_day
        .iter()
        .flatten()
        .chain(params.w_hour.iter().flatten())
        .map(|w| w.as_f64().abs())
        .fold(0.0, f64::max);
    if largest > WEIGHT_WARN {
        log::warn!(
            "em iteration {iteration}: feature weight magnitude {largest:.1}; consider stronger l2 on w_day/w_hour"
        );
    }
}

fn std_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CheckinEvent, Location, TimeOrigin, Venue};
    use crate::features::build_features;

    fn log_with(latent_every: usize) -> EventLog<f64> {
        let events = (0..24)
            .map(|i| CheckinEvent {
                user: i % 3,
                venue: i % 4,
                timestamp: 0.5 + 1.3 * i as f64,
                location: Location::new(0.05 * (i % 4) as f64, 0.02 * (i % 4) as f64),
                category: if latent_every > 0 && i % latent_every == 0 {
                    None
                } else {
                    Some(i % 2)
                },
            })
            .collect();
        let venues = (0..4)
            .map(|i| Venue {
                id: format!("v{i}"),
                location: Location::new(0.05 * i as f64, 0.02 * i as f64),
            })
            .collect();
        EventLog::new(
            events,
            vec!["a".into(), "b".into()],
            vec!["u0".into(), "u1".into(), "u2".into()],
            venues,
            None,
            TimeOrigin::default(),
        )
        .unwrap()
    }

    fn quick() -> EmConfig {
        EmConfig {
            max_em_iters: 3,
            gibbs: GibbsConfig {
                total_iters: 40,
                burn_in: 20,
                thin: 2,
                seed: 5,
            },
            ..EmConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let log = log_with(5);
        let f = build_features(&log, TimeOrigin::default());
        let p = ModelParameters::random_init(2, 0.3, 0.05, &mut ChaCha8Rng::seed_from_u64(1));
        let post = crate::gibbs::e_step(&log, &f, &p, &CategoryAssignment::for_log(&log, vec![0; 5]).unwrap(), &quick().gibbs).unwrap();
        let cfg = MStepConfig { learning_rate: 0.0, ..MStepConfig::default() };
        assert_eq!(m_step(&log, &f, &post, &p, &cfg).unwrap(), p);
        let cfg = MStepConfig { max_steps: 0, ..MStepConfig::default() };
        assert_eq!(m_step(&log, &f, &post, &p, &cfg).unwrap(), p);
    }

    #[test]
    fn m_step_never_decreases_objective() {
        let log = log_with(4);
        let f = build_features(&log, TimeOrigin::default());
        for seed in 0..5 {
            let p = ModelParameters::random_init(2, 0.3, 0.05, &mut ChaCha8Rng::seed_from_u64(seed));
            let init = CategoryAssignment::uniform_random(&log, &mut ChaCha8Rng::seed_from_u64(seed));
            let post = crate::gibbs::e_step(&log, &f, &p, &init, &quick().gibbs).unwrap();
            let cfg = MStepConfig::default();
            let q = m_step(&log, &f, &post, &p, &cfg).unwrap();
            let obj = ExpectedObjective::new(&log, &f, post.samples(), &p, l2_of(&cfg)).unwrap();
            assert!(obj.value(&q) >= obj.value(&p));
            assert!(q.alpha.iter().flatten().all(|a| *a >= 0.0));
            assert_eq!((q.eta, q.h), (p.eta, p.h));
        }
    }

    #[test]
    fn zero_iterations_return_init() {
        let log = log_with(5);
        let f = build_features(&log, TimeOrigin::default());
        let p = ModelParameters::random_init(2, 0.3, 0.05, &mut ChaCha8Rng::seed_from_u64(2));
        let r = run_em(&log, &f, &EmConfig { max_em_iters: 0, ..quick() }, &p).unwrap();
        assert_eq!(r.params, p);
        assert!(r.trace.is_empty());
        assert_eq!(r.posterior.samples().len(), 1);
        assert_eq!(r.posterior.positions(), log.latent_index());
    }

    #[test]
    fn no_latent_events_is_plain_mle() {
        let log = log_with(0);
        let f = build_features(&log, TimeOrigin::default());
        let p = ModelParameters::random_init(2, 0.3, 0.05, &mut ChaCha8Rng::seed_from_u64(2));
        let r = run_em(&log, &f, &quick(), &p).unwrap();
        assert!(r.posterior.histogram().is_empty());
        assert_eq!(r.trace.len(), 3);
        assert!(r.trace.windows(2).all(|w| w[1].objective >= w[0].objective));
    }

    #[test]
    fn run_em_is_deterministic() {
        let log = log_with(4);
        let f = build_features(&log, TimeOrigin::default());
        let p = ModelParameters::random_init(2, 0.3, 0.05, &mut ChaCha8Rng::seed_from_u64(3));
        let a = run_em(&log, &f, &quick(), &p).unwrap();
        let b = run_em(&log, &f, &quick(), &p).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.posterior, b.posterior);
    }

    #[test]
    fn non_finite_start_is_reported() {
        let log = log_with(0);
        let f = build_features(&log, TimeOrigin::default());
        let mut p = ModelParameters::zeros(2, 0.3, 0.05);
        p.w_day[0][0] = f64::INFINITY;
        let post = CategoryPosterior::from_samples(Vec::new(), 2, Vec::new());
        let err = m_step(&log, &f, &post, &p, &MStepConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { group: "w_day" }), "{err:?}");
    }
}
