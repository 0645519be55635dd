use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use semhawkes::likelihood::log_likelihood_window;
use semhawkes::{run_em, CategoryAssignment, DomainBounds, EmResult64, EventLog64, ModelParameters};

use super::{apply_missing_strategy, configure_threads, derive_seed, features_of, posterior_under, require_categories, Stream};
use crate::artifacts::{
    load_logs, write_json, write_with, Checkpoint, ManifestBuilder, CHECKPOINT_FILE, CHECKPOINT_FORMAT, MANIFEST_FILE,
};
use crate::config::RunConfig;
use crate::error::{CliError, Context};

pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const GRID_FILE: &str = "grid.csv";

/// Held-out score of one (eta, h) candidate. `heldout_ll` is NaN when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub eta: f64,
    pub h: f64,
    pub heldout_ll: f64,
    pub heldout_events: usize,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub events: usize,
    pub latent_events: usize,
    pub em_iterations: usize,
    pub grid: Vec<GridRow>,
}

/// Fits the model to `data` and writes checkpoint, posterior, trace and manifest into `out`.
pub fn cmd_train(data: &Path, cfg: &RunConfig, out: &Path) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    configure_threads(cfg.threads);
    let mut manifest = ManifestBuilder::start("train");
    let loaded = load_logs(&[("data", data)], None, cfg)?;
    manifest.inputs = loaded.inputs;
    let log = loaded.logs.into_iter().next().expect("one log");
    if log.is_empty() {
        return Err(CliError::Input(format!("{}: no check-ins", data.display())));
    }
    require_categories(&log)?;
    let latent_events = log.n_latent();
    let prepared = apply_missing_strategy(&log, cfg.data.missing, cfg.seed)?;
    log::info!(
        "{} check-ins, {} users, {} venues, {} categories, {} missing ({:?})",
        log.len(),
        log.n_users(),
        log.venues().len(),
        log.n_categories(),
        latent_events,
        cfg.data.missing
    );

    let mut final_cfg = cfg.clone();
    let grid = if cfg.grid.is_active() {
        let rows = grid_search(&prepared, cfg)?;
        let best = rows
            .iter()
            .filter(|r| r.heldout_ll.is_finite())
            .max_by(|a, b| a.heldout_ll.total_cmp(&b.heldout_ll))
            .ok_or_else(|| CliError::Numerical("every grid candidate failed to fit".into()))?;
        log::info!("grid search picked eta = {}, h = {} (held-out LL {:.4})", best.eta, best.h, best.heldout_ll);
        final_cfg.model.eta = best.eta;
        final_cfg.model.h = best.h;
        rows
    } else {
        Vec::new()
    };

    let em = fit(&prepared, &final_cfg, final_cfg.model.eta, final_cfg.model.h).context("training")?;
    for (name, stream) in [("param_init", Stream::ParamInit), ("gibbs", Stream::Gibbs), ("fill", Stream::Fill)] {
        manifest.seeds.insert(name.into(), derive_seed(cfg.seed, stream));
    }
    manifest.seeds.insert("master".into(), cfg.seed);

    write_with(&out.join(POSTERIOR_FILE), |w| em.posterior.write_csv(w))?;
    write_with(&out.join(TRACE_FILE), |w| {
        let mut t = csv::Writer::from_writer(w);
        for entry in &em.trace {
            t.serialize(entry)?;
        }
        t.flush()?;
        Ok(())
    })?;
    let mut artifacts = vec![CHECKPOINT_FILE, POSTERIOR_FILE, TRACE_FILE];
    if !grid.is_empty() {
        write_with(&out.join(GRID_FILE), |w| {
            let mut t = csv::Writer::from_writer(w);
            for row in &grid {
                t.serialize(row)?;
            }
            t.flush()?;
            Ok(())
        })?;
        artifacts.push(GRID_FILE);
    }
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT,
        version: env!("CARGO_PKG_VERSION").to_string(),
        params: em.params.clone(),
        vocabulary: semhawkes::VocabularyManifest::of(&log),
        config: final_cfg.clone(),
        seed: cfg.seed,
        converged: em.converged,
        manifest: MANIFEST_FILE.to_string(),
    };
    write_json(&out.join(CHECKPOINT_FILE), &checkpoint)?;
    manifest.artifacts = artifacts.into_iter().map(String::from).collect();
    manifest.notes.insert("converged".into(), em.converged.into());
    manifest.notes.insert("em_iterations".into(), em.trace.len().into());
    if let Some(last) = em.trace.last() {
        manifest.notes.insert("final_objective".into(), last.objective.into());
    }
    manifest.finish(&final_cfg, out)?;
    if !em.converged {
        log::warn!("EM stopped after {} iterations without meeting rel_tol", em.trace.len());
    }
    Ok(TrainSummary {
        checkpoint,
        events: log.len(),
        latent_events,
        em_iterations: em.trace.len(),
        grid,
    })
}

fn fit(log: &EventLog64, cfg: &RunConfig, eta: f64, h: f64) -> semhawkes::Result<EmResult64> {
    let features = features_of(log);
    let k = log.n_categories();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::ParamInit));
    let mut init = ModelParameters::random_init(k, eta, h, &mut rng);
    init.distance = cfg.model.distance;
    run_em(log, &features, &cfg.em_config(derive_seed(cfg.seed, Stream::Gibbs)), &init)
}

/// Fits every candidate on the leading part of the window and scores the
/// trailing `holdout_fraction` by its log-likelihood given the past. Latent
/// held-out events take their posterior mode under the candidate's parameters.
fn grid_search(log: &EventLog64, cfg: &RunConfig) -> Result<Vec<GridRow>, CliError> {
    let b = *log.bounds();
    let boundary = b.t_min + (1.0 - cfg.grid.holdout_fraction) * b.duration();
    let early: Vec<_> = log.events().iter().filter(|e| e.timestamp < boundary).cloned().collect();
    let heldout_events = log.len() - early.len();
    if early.is_empty() || heldout_events == 0 {
        return Err(CliError::Input(format!(
            "grid search needs check-ins on both sides of t = {boundary:.3} h"
        )));
    }
    let fit_log = log
        .rebuild(early, DomainBounds { t_max: boundary, ..b })
        .context("splitting the held-out window")?;
    let fit_features = features_of(&fit_log);
    // The window is half-open, so nudge its end past the last event.
    let t_end = b.t_max + 1e-9 * b.t_max.abs().max(1.0);
    let etas = if cfg.grid.eta.is_empty() { vec![cfg.model.eta] } else { cfg.grid.eta.clone() };
    let hs = if cfg.grid.h.is_empty() { vec![cfg.model.h] } else { cfg.grid.h.clone() };

    let mut rows = Vec::new();
    for &eta in &etas {
        for &h in &hs {
            let score = (|| -> Result<f64, CliError> {
                let params = fit(&fit_log, cfg, eta, h).context("grid fit")?.params;
                let z = if log.n_latent() > 0 {
                    posterior_under(log, &fit_features, &params, cfg)?
                        .mode(log)
                        .context("held-out assignment")?
                } else {
                    CategoryAssignment::empty()
                };
                let ll = log_likelihood_window(log, &z, &fit_features, &params, boundary, t_end)
                    .context("held-out likelihood")?;
                Ok(ll.log_events - ll.log_compensator)
            })();
            let heldout_ll = match score {
                Ok(v) => v,
                Err(e) if e.exit_code() == crate::error::EXIT_NUMERICAL => {
                    log::warn!("grid candidate eta = {eta}, h = {h} failed: {e}");
                    f64::NAN
                }
                Err(e) => return Err(e),
            };
            log::info!("grid eta = {eta}, h = {h}: held-out LL {heldout_ll:.4}");
            rows.push(GridRow {
                eta,
                h,
                heldout_ll,
                heldout_events,
            });
        }
    }
    Ok(rows)
}
