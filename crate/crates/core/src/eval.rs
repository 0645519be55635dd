//! Annotation and prediction metrics.
//!
//! Venue-centric scores are computed over unseen venues only: venues that host
//! latent check-ins and no check-in with an observed category.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{CategoryAssignment, EventLog};
use crate::error::{Error, Result};
use crate::gibbs::CategoryPosterior;
use crate::scalar::Scalar;

/// One latent check-in: its sampled-category histogram and true category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEvaluand {
    pub venue: usize,
    pub truth: usize,
    pub histogram: Vec<u32>,
}

/// Aggregate over the latent check-ins of one venue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VenueEvaluand {
    pub venue: usize,
    /// Summed histograms of the venue's latent check-ins.
    pub predicted: Vec<u32>,
    pub truth: BTreeSet<usize>,
    pub unseen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvaluand {
    pub n_categories: usize,
    pub events: Vec<EventEvaluand>,
    pub venues: Vec<VenueEvaluand>,
}

impl AnnotationEvaluand {
    /// Pairs `posterior` with the true categories of `log`'s latent events.
    pub fn new<F: Scalar>(
        log: &EventLog<F>,
        posterior: &CategoryPosterior,
        truth: &CategoryAssignment,
    ) -> Result<Self> {
        log.check_assignment(truth)?;
        if posterior.positions() != log.latent_index() {
            return Err(Error::AssignmentMismatch(format!(
                "posterior covers {} events, the log has {} latent events",
                posterior.positions().len(),
                log.n_latent()
            )));
        }
        let mut observed = vec![false; log.venues().len()];
        for e in log.events().iter().filter(|e| e.category.is_some()) {
            observed[e.venue] = true;
        }
        let events = log
            .latent_index()
            .iter()
            .zip(posterior.histogram())
            .zip(truth.values())
            .map(|((&pos, hist), &t)| EventEvaluand {
                venue: log.event(pos).venue,
                truth: t,
                histogram: hist.clone(),
            })
            .collect();
        let unseen: BTreeSet<usize> = (0..observed.len()).filter(|&v| !observed[v]).collect();
        Ok(Self::from_events(posterior.n_categories(), events, &unseen))
    }

    /// Builds venue aggregates from per-event records; `unseen` flags venues.
    pub fn from_events(n_categories: usize, events: Vec<EventEvaluand>, unseen: &BTreeSet<usize>) -> Self {
        let mut by_venue: BTreeMap<usize, VenueEvaluand> = BTreeMap::new();
        for e in &events {
            let v = by_venue.entry(e.venue).or_insert_with(|| VenueEvaluand {
                venue: e.venue,
                predicted: vec![0; n_categories],
                truth: BTreeSet::new(),
                unseen: unseen.contains(&e.venue),
            });
            for (acc, c) in v.predicted.iter_mut().zip(&e.histogram) {
                *acc += c;
            }
            v.truth.insert(e.truth);
        }
        Self {
            n_categories,
            events,
            venues: by_venue.into_values().collect(),
        }
    }

    pub fn unseen_venues(&self) -> impl Iterator<Item = &VenueEvaluand> {
        self.venues.iter().filter(|v| v.unseen)
    }
}

/// Categories with a positive count, most frequent first, ties by index.
pub fn ranked(histogram: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..histogram.len()).filter(|&c| histogram[c] > 0).collect();
    order.sort_by(|&a, &b| histogram[b].cmp(&histogram[a]).then(a.cmp(&b)));
    order
}

/// Size of a venue's prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopK {
    K(usize),
    All,
}

impl TopK {
    fn take(self, histogram: &[u32]) -> Vec<usize> {
        let r = ranked(histogram);
        match self {
            TopK::K(k) => r.into_iter().take(k).collect(),
            TopK::All => r,
        }
    }
}

/// Fraction of latent events whose true category is among the `k` most
/// frequently sampled ones. `None` when there are no latent events.
pub fn event_acc_at_k(ev: &AnnotationEvaluand, k: usize) -> Option<f64> {
    assert!(k >= 1, "k must be at least 1");
    if ev.events.is_empty() {
        return None;
    }
    let hits = ev
        .events
        .iter()
        .filter(|e| ranked(&e.histogram).iter().take(k).any(|&c| c == e.truth))
        .count();
    Some(hits as f64 / ev.events.len() as f64)
}

/// Share of unseen venues where the top-k set hits at least one true category.
/// `None` when there are no unseen venues.
pub fn venue_topk_accuracy(ev: &AnnotationEvaluand, k: TopK) -> Option<f64> {
    if let TopK::K(0) = k {
        panic!("k must be at least 1");
    }
    let venues: Vec<&VenueEvaluand> = ev.unseen_venues().collect();
    if venues.is_empty() {
        return None;
    }
    let hits = venues
        .iter()
        .filter(|v| k.take(&v.predicted).iter().any(|c| v.truth.contains(c)))
        .count();
    Some(hits as f64 / venues.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-category true positive, false positive and false negative counts.
pub fn confusion_counts(ev: &AnnotationEvaluand, threshold: f64) -> Vec<(u64, u64, u64)> {
    let mut counts = vec![(0u64, 0u64, 0u64); ev.n_categories];
    for v in ev.unseen_venues() {
        let total: u64 = v.predicted.iter().map(|&c| c as u64).sum();
        let predicted: BTreeSet<usize> = (0..ev.n_categories)
            .filter(|&c| v.predicted[c] > 0 && v.predicted[c] as f64 >= threshold * total as f64)
            .collect();
        for (c, slot) in counts.iter_mut().enumerate() {
            match (predicted.contains(&c), v.truth.contains(&c)) {
                (true, true) => slot.0 += 1,
                (true, false) => slot.1 += 1,
                (false, true) => slot.2 += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

/// Micro and macro precision/recall/F1 over unseen venues.
///
/// A venue predicts every category whose share of its aggregated samples is at
/// least `threshold` (0 keeps every sampled category). Per-category ratios with
/// a zero denominator count as 0; macro F1 is the harmonic mean of macro
/// precision and macro recall.
pub fn venue_prf(ev: &AnnotationEvaluand, threshold: f64) -> PrfScores {
    let counts = confusion_counts(ev, threshold);
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let micro_precision = ratio(tp, tp + fp);
    let micro_recall = ratio(tp, tp + fn_);
    let k = counts.len().max(1) as f64;
    let macro_precision = counts.iter().map(|c| ratio(c.0, c.0 + c.1)).sum::<f64>() / k;
    let macro_recall = counts.iter().map(|c| ratio(c.0, c.0 + c.2)).sum::<f64>() / k;
    PrfScores {
        micro_precision,
        micro_recall,
        micro_f1: harmonic(micro_precision, micro_recall),
        macro_precision,
        macro_recall,
        macro_f1: harmonic(macro_precision, macro_recall),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseMode {
    #[default]
    PerEvent,
    /// Mean over users of each user's RMSE.
    PerUserMean,
}

/// A predicted timestamp and the actual one it is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPair {
    pub user: usize,
    pub predicted: f64,
    pub actual: f64,
}

/// Root mean squared timestamp error in hours.
pub fn temporal_rmse(pairs: &[TimingPair], mode: RmseMode) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no aligned predictions to score".into()));
    }
    let rmse = |it: &mut dyn Iterator<Item = &TimingPair>| {
        let (mut sum, mut n) = (0.0, 0usize);
        for p in it {
            sum += (p.predicted - p.actual).powi(2);
            n += 1;
        }
        (sum / n as f64).sqrt()
    };
    Ok(match mode {
        RmseMode::PerEvent => rmse(&mut pairs.iter()),
        RmseMode::PerUserMean => {
            let users: BTreeSet<usize> = pairs.iter().map(|p| p.user).collect();
            users
                .iter()
                .map(|&u| rmse(&mut pairs.iter().filter(|p| p.user == u)))
                .sum::<f64>()
                / users.len() as f64
        }
    })
}

/// Everything `evaluate` reports. Absent entries could not be computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub latent_events: usize,
    pub unseen_venues: usize,
    /// `(k, Acc@k)` for event-centric accuracy.
    pub event_accuracy: Vec<(usize, Option<f64>)>,
    /// `(label, accuracy)` for venue-centric top-k accuracy.
    pub venue_accuracy: Vec<(String, Option<f64>)>,
    pub prf: Option<PrfScores>,
    pub rmse_hours: Option<f64>,
    pub predictions: usize,
}

impl MetricsReport {
    pub fn annotation(ev: &AnnotationEvaluand, ks: &[usize], threshold: f64) -> Self {
        let unseen = ev.unseen_venues().count();
        let mut venue_accuracy: Vec<(String, Option<f64>)> = ks
            .iter()
            .map(|&k| (format!("top-{k}"), venue_topk_accuracy(ev, TopK::K(k))))
            .collect();
        venue_accuracy.push(("all".into(), venue_topk_accuracy(ev, TopK::All)));
        Self {
            latent_events: ev.events.len(),
            unseen_venues: unseen,
            event_accuracy: ks.iter().map(|&k| (k, event_acc_at_k(ev, k))).collect(),
            venue_accuracy,
            prf: (unseen > 0).then(|| venue_prf(ev, threshold)),
            ..Self::default()
        }
    }

    /// Aligned two-column text table.
    pub fn to_table(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.4}", v));
        let mut rows: Vec<(String, String)> = vec![
            ("latent events".into(), self.latent_events.to_string()),
            ("unseen venues".into(), self.unseen_venues.to_string()),
        ];
        if let Some(p) = &self.prf {
            for (name, v) in [
                ("micro precision", p.micro_precision),
                ("micro recall", p.micro_recall),
                ("micro F1", p.micro_f1),
                ("macro precision", p.macro_precision),
                ("macro recall", p.macro_recall),
                ("macro F1", p.macro_f1),
            ] {
                rows.push((name.into(), fmt(Some(v))));
            }
        }
        for (label, v) in &self.venue_accuracy {
            rows.push((format!("venue accuracy {label}"), fmt(*v)));
        }
        for (k, v) in &self.event_accuracy {
            rows.push((format!("event Acc@{k}"), fmt(*v)));
        }
        if self.predictions > 0 || self.rmse_hours.is_some() {
            rows.push(("predictions".into(), self.predictions.to_string()));
            rows.push(("RMSE (hours)".into(), fmt(self.rmse_hours)));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<width$}  {value:>10}");
        }
        out
    }
}

/// One point pair for an actual-versus-predicted scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub predicted_for: usize,
    pub user_id: String,
    pub actual_timestamp: f64,
    pub predicted_timestamp: f64,
    pub actual_lat: f64,
    pub actual_lon: f64,
    pub predicted_lat: f64,
    pub predicted_lon: f64,
}

pub fn write_plot_csv<W: Write>(rows: &[PlotRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(n_categories: usize, rows: &[(usize, usize, &[u32])], unseen: &[usize]) -> AnnotationEvaluand {
        let events = rows
            .iter()
            .map(|&(venue, truth, h)| EventEvaluand {
                venue,
                truth,
                histogram: h.to_vec(),
            })
            .collect();
        AnnotationEvaluand::from_events(n_categories, events, &unseen.iter().copied().collect())
    }

    #[test]
    fn ranking_ties_go_to_lower_index() {
        assert_eq!(ranked(&[2, 5, 2, 0]), vec![1, 0, 2]);
    }

    #[test]
    fn acc_at_k_hand_count() {
        let e = ev(3, &[(0, 0, &[5, 3, 0]), (1, 1, &[5, 3, 0]), (2, 2, &[5, 3, 0]), (3, 2, &[0, 0, 1])], &[]);
        assert_eq!(event_acc_at_k(&e, 1), Some(0.5));
        assert_eq!(event_acc_at_k(&e, 2), Some(0.75));
        // category 2 was never sampled for the third event
        assert_eq!(event_acc_at_k(&e, 3), Some(0.75));
        assert_eq!(event_acc_at_k(&ev(3, &[], &[]), 1), None);
    }

    #[test]
    fn two_category_counts() {
        // TP = (1, 2), FP = (1, 0), FN = (0, 1)
        let e = ev(
            2,
            &[(0, 0, &[1, 0]), (1, 1, &[0, 4]), (2, 1, &[0, 2]), (3, 1, &[3, 0])],
            &[0, 1, 2, 3],
        );
        assert_eq!(confusion_counts(&e, 0.0), vec![(1, 1, 0), (2, 0, 1)]);
        let s = venue_prf(&e, 0.0);
        assert_eq!(s.micro_precision, 0.75);
        assert_eq!(s.micro_recall, 0.75);
        assert_eq!(s.macro_precision, 0.75);
        assert!((s.macro_recall - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let e = ev(2, &[(0, 0, &[0, 0])], &[0]);
        let s = venue_prf(&e, 0.0);
        assert_eq!((s.micro_precision, s.micro_recall, s.macro_f1), (0.0, 0.0, 0.0));
        assert_eq!(venue_topk_accuracy(&e, TopK::All), Some(0.0));
    }

    #[test]
    fn seen_venues_are_excluded() {
        let e = ev(2, &[(0, 0, &[3, 0]), (1, 1, &[3, 0])], &[0]);
        assert_eq!(venue_topk_accuracy(&e, TopK::K(1)), Some(1.0));
        assert_eq!(venue_topk_accuracy(&ev(2, &[(0, 0, &[1, 0])], &[]), TopK::All), None);
    }

    #[test]
    fn threshold_drops_rare_categories() {
        let e = ev(2, &[(0, 0, &[9, 1])], &[0]);
        assert_eq!(venue_prf(&e, 0.0).micro_precision, 0.5);
        assert_eq!(venue_prf(&e, 0.2).micro_precision, 1.0);
    }

    #[test]
    fn rmse_modes() {
        let p = |user, predicted, actual| TimingPair { user, predicted, actual };
        assert_eq!(temporal_rmse(&[p(0, 2.0, 1.0), p(0, 0.0, 1.0)], RmseMode::PerEvent).unwrap(), 1.0);
        let pairs = [p(0, 3.0, 1.0), p(1, 1.0, 1.0), p(1, 1.0, 1.0)];
        assert!((temporal_rmse(&pairs, RmseMode::PerEvent).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(temporal_rmse(&pairs, RmseMode::PerUserMean).unwrap(), 1.0);
        assert!(temporal_rmse(&[], RmseMode::PerEvent).is_err());
    }

    #[test]
    fn report_renders() {
        let e = ev(2, &[(0, 0, &[3, 0])], &[0]);
        let r = MetricsReport::annotation(&e, &[1, 2], 0.0);
        let table = r.to_table();
        assert!(table.contains("micro F1"));
        assert!(table.contains("event Acc@2"));
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
