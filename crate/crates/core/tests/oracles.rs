use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semhawkes::likelihood::{gradient, log_likelihood, log_likelihood_window};
use semhawkes::{
    build_features, CategoryAssignment, CheckinEvent, EventLog, L2Weights, Location, ModelParameters,
    TimeOrigin, Venue, VenueFeatureTable,
};

fn random_log(rng: &mut ChaCha8Rng, n: usize, k: usize, users: usize) -> EventLog<f64> {
    let venues: Vec<Venue<f64>> = (0..5)
        .map(|i| Venue {
            id: format!("v{i}"),
            location: Location::new(rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)),
        })
        .collect();
    let events = (0..n)
        .map(|_| {
            let v = rng.random_range(0..venues.len());
            CheckinEvent {
                user: rng.random_range(0..users),
                venue: v,
                timestamp: rng.random_range(0.0..200.0),
                location: venues[v].location,
                category: if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..k)) },
            }
        })
        .collect();
    EventLog::new(
        events,
        (0..k).map(|c| format!("c{c}")).collect(),
        (0..users).map(|u| format!("u{u}")).collect(),
        venues,
        None,
        TimeOrigin::default(),
    )
    .unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, k: usize) -> ModelParameters<f64> {
    let mut p = ModelParameters::zeros(k, rng.random_range(0.1..1.0), rng.random_range(0.02..0.2));
    for c in 0..k {
        p.w_day[c].iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        p.w_hour[c].iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        p.alpha[c].iter_mut().for_each(|a| *a = rng.random_range(0.0..3.0));
    }
    p
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Log joint likelihood written out term by term from the model definition.
fn brute_force(
    log: &EventLog<f64>,
    z: &CategoryAssignment,
    f: &VenueFeatureTable<f64>,
    p: &ModelParameters<f64>,
) -> f64 {
    let cat = |i: usize| log.events()[i].category.or_else(|| z.get(i)).unwrap();
    let mu = |c: usize, day: &[f64], hour: &[f64]| dot(&p.w_day[c], day).exp() + dot(&p.w_hour[c], hour).exp();
    let b = log.bounds();
    let mut total = 0.0;
    for (n, e) in log.events().iter().enumerate() {
        let vf = f.get(e.venue).unwrap();
        let mut lam = mu(cat(n), &vf.day, &vf.hour);
        for (k, o) in log.events().iter().enumerate() {
            if o.user == e.user && o.timestamp < e.timestamp {
                let d = ((e.location.lat - o.location.lat).powi(2) + (e.location.lon - o.location.lon).powi(2)).sqrt();
                lam += p.alpha[cat(n)][cat(k)] * (-p.eta * (e.timestamp - o.timestamp)).exp() * (-d / (2.0 * p.h)).exp();
            }
        }
        total += lam.max(1e-12).ln();
    }
    let avg = f.average();
    let area = (b.x_max - b.x_min) * (b.y_max - b.y_min);
    let t_span = b.t_max - b.t_min;
    for c in 0..p.n_categories() {
        total -= log.n_users() as f64 * t_span * area * mu(c, &avg.day, &avg.hour);
        for (k, o) in log.events().iter().enumerate() {
            let mass = 8.0 * std::f64::consts::PI * p.h * p.h;
            total -= p.alpha[c][cat(k)] * mass * (1.0 - (-p.eta * (b.t_max - o.timestamp)).exp()) / p.eta;
        }
    }
    for &pos in log.latent_index() {
        total += p.prior[z.get(pos).unwrap()].ln();
    }
    total
}

#[test]
fn likelihood_matches_term_by_term_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..25 {
        let k = rng.random_range(1..4);
        let (n, users) = (rng.random_range(1..25), rng.random_range(1..4));
        let log = random_log(&mut rng, n, k, users);
        let f = build_features(&log, TimeOrigin::default());
        let p = random_params(&mut rng, k);
        let z = CategoryAssignment::uniform_random(&log, &mut rng);
        let got = log_likelihood(&log, &z, &f, &p).unwrap().total;
        let want = brute_force(&log, &z, &f, &p);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn full_window_equals_whole_log() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let log = random_log(&mut rng, 20, 2, 3);
        // the window is half-open, so extend the domain past the last event
        let mut b = *log.bounds();
        b.t_max = 250.0;
        let log = log.rebuild(log.events().to_vec(), b).unwrap();
        let f = build_features(&log, TimeOrigin::default());
        let p = random_params(&mut rng, 2);
        let z = CategoryAssignment::uniform_random(&log, &mut rng);
        let whole = log_likelihood(&log, &z, &f, &p).unwrap();
        let win = log_likelihood_window(&log, &z, &f, &p, b.t_min, b.t_max).unwrap();
        assert!((whole.log_events - win.log_events).abs() < 1e-9 * whole.log_events.abs().max(1.0));
        assert!((whole.log_compensator - win.log_compensator).abs() < 1e-9 * whole.log_compensator.abs().max(1.0));
    }
}

#[test]
fn single_precision_tracks_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let log = random_log(&mut rng, 20, 2, 2);
    let f = build_features(&log, TimeOrigin::default());
    let p = random_params(&mut rng, 2);
    let z = CategoryAssignment::uniform_random(&log, &mut rng);
    let want = log_likelihood(&log, &z, &f, &p).unwrap().total;

    let events = log
        .events()
        .iter()
        .map(|e| CheckinEvent {
            user: e.user,
            venue: e.venue,
            timestamp: e.timestamp as f32,
            location: Location::new(e.location.lat as f32, e.location.lon as f32),
            category: e.category,
        })
        .collect();
    let venues = log
        .venues()
        .iter()
        .map(|v| Venue {
            id: v.id.clone(),
            location: Location::new(v.location.lat as f32, v.location.lon as f32),
        })
        .collect();
    let log32 = EventLog::new(
        events,
        log.categories().to_vec(),
        log.users().to_vec(),
        venues,
        None,
        TimeOrigin::default(),
    )
    .unwrap();
    let f32_table = build_features(&log32, TimeOrigin::default());
    let got = log_likelihood(&log32, &z, &f32_table, &p.cast::<f32>()).unwrap().total as f64;
    assert!((got - want).abs() < 1e-3 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let log = random_log(&mut rng, 10, 2, 2);
        let f = build_features(&log, TimeOrigin::default());
        let mut p = random_params(&mut rng, 2);
        p.alpha.iter_mut().flatten().for_each(|a| *a += 0.5);
        let samples: Vec<CategoryAssignment> =
            (0..3).map(|_| CategoryAssignment::uniform_random(&log, &mut rng)).collect();
        let l2 = L2Weights { day: 0.1, hour: 0.2, alpha: 0.3 };
        let g = gradient(&log, &samples, &f, &p, l2).unwrap().to_vec();
        let objective = |q: &ModelParameters<f64>| {
            let ll: f64 = samples.iter().map(|z| log_likelihood(&log, z, &f, q).unwrap().total).sum::<f64>()
                / samples.len() as f64;
            ll - l2.penalty(q)
        };
        let eps = 1e-5;
        let mut idx = 0;
        let mut check = |bump: &dyn Fn(&mut ModelParameters<f64>, f64)| {
            let (mut a, mut b) = (p.clone(), p.clone());
            bump(&mut a, eps);
            bump(&mut b, -eps);
            let fd = (objective(&a) - objective(&b)) / (2.0 * eps);
            assert!((fd - g[idx]).abs() <= 1e-4 * fd.abs().max(1.0), "coordinate {idx}: {fd} vs {}", g[idx]);
            idx += 1;
        };
        for c in 0..2 {
            for i in 0..7 {
                check(&|q, d| q.w_day[c][i] += d);
            }
        }
        for c in 0..2 {
            for i in 0..4 {
                check(&|q, d| q.w_hour[c][i] += d);
            }
        }
        for c in 0..2 {
            for j in 0..2 {
                check(&|q, d| q.alpha[c][j] += d);
            }
        }
    }
}
