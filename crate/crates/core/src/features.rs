//! Per-venue day-of-week and hour-bin check-in distributions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{EventLog, TimeOrigin};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DAY_BINS: usize = 7;
pub const HOUR_BINS: usize = 4;

/// Hour bin of an hour-of-day: `[0,6)`, `[6,12)`, `[12,18)`, `[18,24)`.
pub fn hour_bin(hour: f64) -> usize {
    ((hour / 6.0).floor() as usize).min(HOUR_BINS - 1)
}

/// Normalised feature vectors of one venue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VenueFeatures<F> {
    pub day: [F; DAY_BINS],
    pub hour: [F; HOUR_BINS],
}

impl<F: Scalar> VenueFeatures<F> {
    pub fn zeros() -> Self {
        Self {
            day: [F::zero(); DAY_BINS],
            hour: [F::zero(); HOUR_BINS],
        }
    }

    pub fn uniform() -> Self {
        Self {
            day: [F::one() / F::of(DAY_BINS as f64); DAY_BINS],
            hour: [F::one() / F::of(HOUR_BINS as f64); HOUR_BINS],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.day.iter().chain(self.hour.iter()).all(|x| x.is_zero())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VenueFeatureTable<F> {
    venues: Vec<VenueFeatures<F>>,
    average: VenueFeatures<F>,
}

impl<F: Scalar> VenueFeatureTable<F> {
    /// Table from explicit per-venue features; the average is taken over non-zero rows.
    pub fn from_rows(venues: Vec<VenueFeatures<F>>) -> Self {
        let active: Vec<&VenueFeatures<F>> = venues.iter().filter(|v| !v.is_zero()).collect();
        let mut average = VenueFeatures::zeros();
        if !active.is_empty() {
            let n = F::of(active.len() as f64);
            for v in &active {
                for d in 0..DAY_BINS {
                    average.day[d] = average.day[d] + v.day[d] / n;
                }
                for h in 0..HOUR_BINS {
                    average.hour[h] = average.hour[h] + v.hour[h] / n;
                }
            }
        }
        Self { venues, average }
    }

    pub fn get(&self, venue: usize) -> Result<&VenueFeatures<F>> {
        self.venues.get(venue).ok_or(Error::UnknownVenue(venue))
    }

    pub fn len(&self) -> usize {
        self.venues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.venues.is_empty()
    }

    pub fn rows(&self) -> &[VenueFeatures<F>] {
        &self.venues
    }

    /// Mean feature vector over venues with at least one check-in. Stands in for
    /// the venue when the base rate is integrated over the whole domain.
    pub fn average(&self) -> &VenueFeatures<F> {
        &self.average
    }

    /// Inspection dump: `venue_id,d0..d6,h0..h3`.
    pub fn write_csv<W: Write>(&self, log: &EventLog<F>, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["venue_id".to_string()];
        header.extend((0..DAY_BINS).map(|d| format!("d{d}")));
        header.extend((0..HOUR_BINS).map(|h| format!("h{h}")));
        w.write_record(&header)?;
        for (v, f) in self.venues.iter().enumerate() {
            let mut row = vec![log.venues()[v].id.clone()];
            row.extend(f.day.iter().chain(f.hour.iter()).map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts check-ins per weekday and hour bin at every venue of `log` and
/// normalises each histogram. Latent and observed events count alike.
pub fn build_features<F: Scalar>(log: &EventLog<F>, origin: TimeOrigin) -> VenueFeatureTable<F> {
    let mut day = vec![[0u64; DAY_BINS]; log.venues().len()];
    let mut hour = vec![[0u64; HOUR_BINS]; log.venues().len()];
    for e in log.events() {
        let (wd, h) = origin.clock(e.timestamp.as_f64());
        day[e.venue][wd] += 1;
        hour[e.venue][hour_bin(h)] += 1;
    }
    let rows = day
        .iter()
        .zip(&hour)
        .map(|(d, h)| {
            let mut f = VenueFeatures::zeros();
            let total: u64 = d.iter().sum();
            if total > 0 {
                let n = F::of(total as f64);
                for i in 0..DAY_BINS {
                    f.day[i] = F::of(d[i] as f64) / n;
                }
                for i in 0..HOUR_BINS {
                    f.hour[i] = F::of(h[i] as f64) / n;
                }
            }
            f
        })
        .collect();
    VenueFeatureTable::from_rows(rows)
}
