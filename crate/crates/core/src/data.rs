//! Check-in events, the event log, and the dataset plumbing around them:
//! CSV ingestion/serialisation, temporal splitting and missingness injection.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hours in one week.
pub const HOURS_PER_WEEK: f64 = 168.0;

/// A point in degree space: latitude (x) and longitude (y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location<F> {
    pub lat: F,
    pub lon: F,
}

impl<F: Scalar> Location<F> {
    pub fn new(lat: F, lon: F) -> Self {
        Self { lat, lon }
    }

    /// Euclidean distance in degree space.
    pub fn distance(&self, other: &Self) -> F {
        (self.lat - other.lat).hypot(self.lon - other.lon)
    }

    fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && self.lat.abs() <= F::of(90.0)
            && self.lon.abs() <= F::of(180.0)
    }
}

/// One check-in. `user`, `venue` and `category` index the owning log's vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckinEvent<F> {
    pub user: usize,
    pub venue: usize,
    /// Hours since the dataset epoch.
    pub timestamp: F,
    pub location: Location<F>,
    pub category: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Venue<F> {
    pub id: String,
    pub location: Location<F>,
}

/// Observation window `[t_min, t_max] x [x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBounds<F> {
    pub t_min: F,
    pub t_max: F,
    pub x_min: F,
    pub x_max: F,
    pub y_min: F,
    pub y_max: F,
}

impl<F: Scalar> DomainBounds<F> {
    pub fn empty() -> Self {
        let z = F::zero();
        Self {
            t_min: z,
            t_max: z,
            x_min: z,
            x_max: z,
            y_min: z,
            y_max: z,
        }
    }

    pub fn duration(&self) -> F {
        self.t_max - self.t_min
    }

    /// Spatial area `X * Y` in squared degrees.
    pub fn area(&self) -> F {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    fn covers(&self, t: F, l: &Location<F>) -> bool {
        t >= self.t_min
            && t <= self.t_max
            && l.lat >= self.x_min
            && l.lat <= self.x_max
            && l.lon >= self.y_min
            && l.lon <= self.y_max
    }

    fn from_extents<'a>(
        events: impl Iterator<Item = &'a CheckinEvent<F>>,
        venues: &[Venue<F>],
    ) -> Self {
        let mut b: Option<Self> = None;
        let mut grow = |t: Option<F>, l: &Location<F>| {
            let bb = b.get_or_insert(Self {
                t_min: t.unwrap_or(F::infinity()),
                t_max: t.unwrap_or(F::neg_infinity()),
                x_min: l.lat,
                x_max: l.lat,
                y_min: l.lon,
                y_max: l.lon,
            });
            if let Some(t) = t {
                bb.t_min = bb.t_min.min(t);
                bb.t_max = bb.t_max.max(t);
            }
            bb.x_min = bb.x_min.min(l.lat);
            bb.x_max = bb.x_max.max(l.lat);
            bb.y_min = bb.y_min.min(l.lon);
            bb.y_max = bb.y_max.max(l.lon);
        };
        for e in events {
            grow(Some(e.timestamp), &e.location);
        }
        for v in venues {
            grow(None, &v.location);
        }
        let mut b = b.unwrap_or_else(Self::empty);
        if !b.t_min.is_finite() {
            b.t_min = F::zero();
            b.t_max = F::zero();
        }
        b
    }
}

/// Wall-clock reading at `t = 0`, used to derive weekday and hour-of-day features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeOrigin {
    /// 0 = Monday .. 6 = Sunday.
    pub weekday: u8,
    /// Hour of day in `[0, 24)`.
    pub hour_of_day: f64,
}

impl Default for TimeOrigin {
    fn default() -> Self {
        Self {
            weekday: 0,
            hour_of_day: 0.0,
        }
    }
}

impl TimeOrigin {
    /// Weekday (0 = Monday) and hour-of-day at `t` hours after the origin.
    pub fn clock(&self, t: f64) -> (usize, f64) {
        let abs = t + self.hour_of_day;
        let days = (abs / 24.0).floor();
        let hour = abs - days * 24.0;
        let weekday = (self.weekday as i64 + days as i64).rem_euclid(7) as usize;
        (weekday, hour.clamp(0.0, 24.0 - 1e-9))
    }
}

/// Time-sorted check-in log with vocabularies and the latent-category partition.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog<F> {
    events: Vec<CheckinEvent<F>>,
    categories: Vec<String>,
    users: Vec<String>,
    venues: Vec<Venue<F>>,
    latent_index: Vec<usize>,
    latent_rank: Vec<Option<usize>>,
    user_events: Vec<Vec<usize>>,
    bounds: DomainBounds<F>,
    origin: TimeOrigin,
}

impl<F: Scalar> EventLog<F> {
    /// Builds a log from unsorted events. Events are stably sorted by timestamp.
    ///
    /// When `bounds` is `None` the domain is the extent of the events and venues.
    pub fn new(
        mut events: Vec<CheckinEvent<F>>,
        categories: Vec<String>,
        users: Vec<String>,
        venues: Vec<Venue<F>>,
        bounds: Option<DomainBounds<F>>,
        origin: TimeOrigin,
    ) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !e.timestamp.is_finite() || e.timestamp < F::zero() {
                return Err(Error::Invalid(format!(
                    "event {i}: timestamp {} is not a finite non-negative number",
                    e.timestamp
                )));
            }
            if !e.location.is_valid() {
                return Err(Error::Invalid(format!(
                    "event {i}: location ({}, {}) out of range",
                    e.location.lat, e.location.lon
                )));
            }
            if e.user >= users.len() {
                return Err(Error::Invalid(format!("event {i}: unknown user {}", e.user)));
            }
            if e.venue >= venues.len() {
                return Err(Error::UnknownVenue(e.venue));
            }
            if let Some(c) = e.category {
                if c >= categories.len() {
                    return Err(Error::Invalid(format!("event {i}: unknown category {c}")));
                }
            }
        }
        events.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());

        let bounds = match bounds {
            Some(b) => {
                if let Some((i, _)) = events
                    .iter()
                    .enumerate()
                    .find(|(_, e)| !b.covers(e.timestamp, &e.location))
                {
                    return Err(Error::Invalid(format!(
                        "event {i} lies outside the declared domain bounds"
                    )));
                }
                b
            }
            None => DomainBounds::from_extents(events.iter(), &venues),
        };

        let mut latent_index = Vec::new();
        let mut latent_rank = vec![None; events.len()];
        let mut user_events = vec![Vec::new(); users.len()];
        for (pos, e) in events.iter().enumerate() {
            if e.category.is_none() {
                latent_rank[pos] = Some(latent_index.len());
                latent_index.push(pos);
            }
            user_events[e.user].push(pos);
        }

        Ok(Self {
            events,
            categories,
            users,
            venues,
            latent_index,
            latent_rank,
            user_events,
            bounds,
            origin,
        })
    }

    pub fn events(&self) -> &[CheckinEvent<F>] {
        &self.events
    }

    pub fn event(&self, pos: usize) -> &CheckinEvent<F> {
        &self.events[pos]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn venues(&self) -> &[Venue<F>] {
        &self.venues
    }

    /// Positions (into `events`) of check-ins with a missing category, ascending.
    pub fn latent_index(&self) -> &[usize] {
        &self.latent_index
    }

    pub fn n_latent(&self) -> usize {
        self.latent_index.len()
    }

    /// Rank of `pos` within `latent_index`, if the event is latent.
    pub fn latent_rank(&self, pos: usize) -> Option<usize> {
        self.latent_rank[pos]
    }

    /// Time-ordered event positions of one user.
    pub fn user_events(&self, user: usize) -> &[usize] {
        &self.user_events[user]
    }

    pub fn bounds(&self) -> &DomainBounds<F> {
        &self.bounds
    }

    pub fn origin(&self) -> TimeOrigin {
        self.origin
    }

    /// Observed category, or the assigned one for a latent event.
    pub fn category_of(&self, pos: usize, assignment: &CategoryAssignment) -> Result<usize> {
        match self.events[pos].category {
            Some(c) => Ok(c),
            None => {
                let rank = self.latent_rank[pos].expect("latent event has a rank");
                assignment
                    .values
                    .get(rank)
                    .copied()
                    .ok_or(Error::UnresolvedLatent(pos))
            }
        }
    }

    /// Checks that `assignment` covers exactly this log's latent events.
    pub fn check_assignment(&self, assignment: &CategoryAssignment) -> Result<()> {
        if assignment.positions != self.latent_index {
            return Err(Error::AssignmentMismatch(format!(
                "assignment has {} keys, log has {} latent events",
                assignment.positions.len(),
                self.latent_index.len()
            )));
        }
        if let Some(v) = assignment
            .values
            .iter()
            .find(|&&v| v >= self.n_categories())
        {
            return Err(Error::AssignmentMismatch(format!("category {v} out of range")));
        }
        Ok(())
    }

    /// Copy of the log with every latent category filled in from `assignment`.
    pub fn with_categories(&self, assignment: &CategoryAssignment) -> Result<Self> {
        self.check_assignment(assignment)?;
        let events = self
            .events
            .iter()
            .enumerate()
            .map(|(pos, e)| {
                let mut e = e.clone();
                e.category = Some(self.category_of(pos, assignment).unwrap());
                e
            })
            .collect();
        self.rebuild(events, self.bounds)
    }

    /// Copy of the log with latent events dropped.
    pub fn without_latent(&self) -> Self {
        let events = self
            .events
            .iter()
            .filter(|e| e.category.is_some())
            .cloned()
            .collect();
        self.rebuild(events, self.bounds).expect("subset of a valid log")
    }

    /// Appends the events of `later`, which must share this log's vocabularies.
    pub fn concat(&self, later: &Self) -> Result<Self> {
        if self.categories != later.categories
            || self.users != later.users
            || self.venues != later.venues
        {
            return Err(Error::VocabularyMismatch(
                "logs do not share vocabularies".into(),
            ));
        }
        let mut events = self.events.clone();
        events.extend(later.events.iter().cloned());
        let b = &self.bounds;
        let l = &later.bounds;
        let bounds = if later.is_empty() {
            *b
        } else {
            DomainBounds {
                t_min: b.t_min.min(l.t_min),
                t_max: b.t_max.max(l.t_max),
                x_min: b.x_min.min(l.x_min),
                x_max: b.x_max.max(l.x_max),
                y_min: b.y_min.min(l.y_min),
                y_max: b.y_max.max(l.y_max),
            }
        };
        self.rebuild(events, bounds)
    }

    /// Same vocabularies and origin, different events.
    pub fn rebuild(&self, events: Vec<CheckinEvent<F>>, bounds: DomainBounds<F>) -> Result<Self> {
        Self::new(
            events,
            self.categories.clone(),
            self.users.clone(),
            self.venues.clone(),
            Some(bounds),
            self.origin,
        )
    }
}

/// Values for the latent categories of a log, keyed by event position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CategoryAssignment {
    positions: Vec<usize>,
    values: Vec<usize>,
}

impl CategoryAssignment {
    /// Pairs `values` with the latent positions of `log`, in order.
    pub fn for_log<F: Scalar>(log: &EventLog<F>, values: Vec<usize>) -> Result<Self> {
        let a = Self {
            positions: log.latent_index().to_vec(),
            values,
        };
        if a.positions.len() != a.values.len() {
            return Err(Error::AssignmentMismatch(format!(
                "{} values for {} latent events",
                a.values.len(),
                a.positions.len()
            )));
        }
        log.check_assignment(&a)?;
        Ok(a)
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Independent uniform draws over the `K` categories.
    pub fn uniform_random<F: Scalar, R: rand::Rng>(log: &EventLog<F>, rng: &mut R) -> Self {
        let k = log.n_categories().max(1);
        let values = (0..log.n_latent()).map(|_| rng.random_range(0..k)).collect();
        Self {
            positions: log.latent_index().to_vec(),
            values,
        }
    }

    /// Every latent event set to the most frequent observed category (ties: lowest index).
    pub fn most_frequent<F: Scalar>(log: &EventLog<F>) -> Self {
        let mut counts = vec![0usize; log.n_categories().max(1)];
        for e in log.events() {
            if let Some(c) = e.category {
                counts[c] += 1;
            }
        }
        let best = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Self {
            positions: log.latent_index().to_vec(),
            values: vec![best; log.n_latent()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    /// Value for the event at `pos`, if it is a key.
    pub fn get(&self, pos: usize) -> Option<usize> {
        self.positions
            .binary_search(&pos)
            .ok()
            .map(|i| self.values[i])
    }

    /// Value at a latent rank.
    pub fn at_rank(&self, rank: usize) -> usize {
        self.values[rank]
    }

    pub fn set_rank(&mut self, rank: usize, category: usize) {
        self.values[rank] = category;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positions.iter().copied().zip(self.values.iter().copied())
    }
}

/// Column names of the check-in CSV, plus an optional pinned category vocabulary.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub user: String,
    pub venue: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub category: String,
    /// Fixes category indices; unknown names become an error.
    pub categories: Option<Vec<String>>,
    /// Clock at `t = 0` for numeric timestamps. ISO timestamps set their own.
    pub origin: Option<TimeOrigin>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            user: "user_id".into(),
            venue: "venue_id".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            category: "category".into(),
            categories: None,
            origin: None,
        }
    }
}

impl CsvSchema {
    pub fn with_manifest(manifest: &VocabularyManifest) -> Self {
        Self {
            categories: Some(manifest.categories.clone()),
            origin: Some(manifest.origin),
            ..Self::default()
        }
    }
}

/// Sidecar describing the category order and clock origin of a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyManifest {
    pub categories: Vec<String>,
    pub origin: TimeOrigin,
}

impl VocabularyManifest {
    pub fn of<F: Scalar>(log: &EventLog<F>) -> Self {
        Self {
            categories: log.categories().to_vec(),
            origin: log.origin(),
        }
    }
}

enum RawTime {
    Hours(f64),
    Absolute(NaiveDateTime),
}

fn parse_time(row: usize, s: &str) -> Result<RawTime> {
    let s = s.trim();
    if let Ok(h) = s.parse::<f64>() {
        return Ok(RawTime::Hours(h));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(RawTime::Absolute(dt.naive_utc()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(RawTime::Absolute(dt));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(RawTime::Absolute(d.and_hms_opt(0, 0, 0).unwrap()));
    }
    Err(Error::BadTimestamp {
        row,
        value: s.to_string(),
    })
}

struct RawRow {
    user: String,
    venue: String,
    time: RawTime,
    lat: f64,
    lon: f64,
    category: Option<String>,
}

/// Reads a check-in CSV into a sorted [`EventLog`].
///
/// Rows with an empty category become latent events. Vocabularies are built in
/// first-appearance order after sorting, so writing a log and reading it back
/// reproduces the same indices.
pub fn ingest<F: Scalar, R: Read>(source: R, schema: &CsvSchema) -> Result<EventLog<F>> {
    let mut logs = ingest_many(vec![source], schema)?;
    Ok(logs.pop().expect("one source"))
}

/// Reads several CSV files that belong to one dataset (for example a training
/// and a test window) into logs sharing vocabularies and clock origin.
///
/// Calendar timestamps are measured from the earliest one across all sources.
/// Vocabularies follow first appearance in the time-sorted union.
pub fn ingest_many<F: Scalar, R: Read>(sources: Vec<R>, schema: &CsvSchema) -> Result<Vec<EventLog<F>>> {
    let n_parts = sources.len();
    let mut raw = Vec::new();
    for (part, source) in sources.into_iter().enumerate() {
        raw.extend(read_rows(source, schema)?.into_iter().map(|(row, r)| (part, row, r)));
    }
    assemble(raw, n_parts, schema)
}

fn read_rows<R: Read>(source: R, schema: &CsvSchema) -> Result<Vec<(usize, RawRow)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow {
                row: 1,
                reason: format!("missing column `{name}`"),
            })
    };
    let (cu, cv, ct, cx, cy, cc) = (
        col(&schema.user)?,
        col(&schema.venue)?,
        col(&schema.timestamp)?,
        col(&schema.lat)?,
        col(&schema.lon)?,
        col(&schema.category)?,
    );

    let mut raw = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let num = |c: usize, what: &str| -> Result<f64> {
            rec[c].parse::<f64>().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("{what} `{}` is not a number", &rec[c]),
            })
        };
        if rec[cu].is_empty() || rec[cv].is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "empty user or venue id".into(),
            });
        }
        let lat = num(cx, "latitude")?;
        let lon = num(cy, "longitude")?;
        if !(lat.abs() <= 90.0 && lon.abs() <= 180.0) {
            return Err(Error::MalformedRow {
                row,
                reason: format!("coordinates ({lat}, {lon}) out of range"),
            });
        }
        let cat = &rec[cc];
        raw.push((
            row,
            RawRow {
                user: rec[cu].to_string(),
                venue: rec[cv].to_string(),
                time: parse_time(row, &rec[ct])?,
                lat,
                lon,
                category: (!cat.is_empty()).then(|| cat.to_string()),
            },
        ));
    }
    Ok(raw)
}

fn assemble<F: Scalar>(
    raw: Vec<(usize, usize, RawRow)>,
    n_parts: usize,
    schema: &CsvSchema,
) -> Result<Vec<EventLog<F>>> {
    // Resolve timestamps to hours.
    let mut origin = schema.origin.unwrap_or_default();
    let absolute = raw
        .first()
        .is_some_and(|(_, _, r)| matches!(r.time, RawTime::Absolute(_)));
    let epoch = raw
        .iter()
        .filter_map(|(_, _, r)| match r.time {
            RawTime::Absolute(dt) => Some(dt),
            RawTime::Hours(_) => None,
        })
        .min();
    if absolute {
        let e = epoch.expect("first row is absolute");
        origin = TimeOrigin {
            weekday: e.weekday().num_days_from_monday() as u8,
            hour_of_day: e.num_seconds_from_midnight() as f64 / 3600.0
                + e.nanosecond() as f64 / 3.6e12,
        };
    }
    let mut hours = Vec::with_capacity(raw.len());
    for (_, row, r) in &raw {
        let h = match (&r.time, absolute) {
            (RawTime::Hours(h), false) => *h,
            (RawTime::Absolute(dt), true) => {
                let d = *dt - epoch.unwrap();
                d.num_milliseconds() as f64 / 3.6e6
            }
            _ => {
                return Err(Error::BadTimestamp {
                    row: *row,
                    value: "mixed numeric and calendar timestamps".into(),
                })
            }
        };
        if !h.is_finite() || h < 0.0 {
            return Err(Error::BadTimestamp {
                row: *row,
                value: h.to_string(),
            });
        }
        hours.push(h);
    }

    // Stable sort, then build vocabularies in first-appearance order.
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| hours[a].partial_cmp(&hours[b]).unwrap());

    let mut categories: Vec<String> = schema.categories.clone().unwrap_or_default();
    let mut cat_ix: HashMap<String, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();
    let pinned = schema.categories.is_some();
    let mut users = Vec::new();
    let mut user_ix = HashMap::new();
    let mut venues: Vec<Venue<F>> = Vec::new();
    let mut venue_ix = HashMap::new();
    let mut events: Vec<Vec<CheckinEvent<F>>> = (0..n_parts).map(|_| Vec::new()).collect();

    for &i in &order {
        let (part, row, r) = &raw[i];
        let user = *user_ix.entry(r.user.clone()).or_insert_with(|| {
            users.push(r.user.clone());
            users.len() - 1
        });
        let loc = Location::new(F::of(r.lat), F::of(r.lon));
        let venue = match venue_ix.get(&r.venue) {
            Some(&v) => {
                let known: &Venue<F> = &venues[v];
                if known.location != loc {
                    log::warn!(
                        "row {row}: venue `{}` seen with coordinates ({}, {}); keeping ({}, {})",
                        r.venue,
                        r.lat,
                        r.lon,
                        known.location.lat,
                        known.location.lon
                    );
                }
                v
            }
            None => {
                venues.push(Venue {
                    id: r.venue.clone(),
                    location: loc,
                });
                venue_ix.insert(r.venue.clone(), venues.len() - 1);
                venues.len() - 1
            }
        };
        let category = match &r.category {
            None => None,
            Some(name) => Some(match cat_ix.get(name) {
                Some(&c) => c,
                None if pinned => {
                    return Err(Error::VocabularyMismatch(format!(
                        "row {row}: category `{name}` is not in the pinned vocabulary"
                    )))
                }
                None => {
                    categories.push(name.clone());
                    cat_ix.insert(name.clone(), categories.len() - 1);
                    categories.len() - 1
                }
            }),
        };
        events[*part].push(CheckinEvent {
            user,
            venue,
            timestamp: F::of(hours[i]),
            location: venues[venue].location,
            category,
        });
    }

    events
        .into_iter()
        .map(|ev| EventLog::new(ev, categories.clone(), users.clone(), venues.clone(), None, origin))
        .collect()
}

/// Writes `log` in the ingestion CSV schema with timestamps as float hours.
pub fn write_csv<F: Scalar, W: Write>(log: &EventLog<F>, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["user_id", "venue_id", "timestamp", "lat", "lon", "category"])?;
    for e in log.events() {
        w.write_record([
            log.users()[e.user].as_str(),
            log.venues()[e.venue].id.as_str(),
            &e.timestamp.as_f64().to_string(),
            &e.location.lat.as_f64().to_string(),
            &e.location.lon.as_f64().to_string(),
            e.category
                .map(|c| log.categories()[c].as_str())
                .unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Length of the training part of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainSpan {
    Weeks(u32),
    /// The whole log; the test part must then be zero weeks.
    All,
}

/// Splits the window `[t_min, t_min + (train + test) weeks]` at `t_min + train weeks`.
///
/// The first log holds events strictly before the boundary, the second the rest
/// of the window. Both keep the full vocabularies.
pub fn temporal_split<F: Scalar>(
    log: &EventLog<F>,
    train: TrainSpan,
    test_weeks: u32,
) -> Result<(EventLog<F>, EventLog<F>)> {
    let b = *log.bounds();
    let train_weeks = match train {
        TrainSpan::All if test_weeks == 0 => {
            let empty = log.rebuild(Vec::new(), DomainBounds { t_min: b.t_max, ..b })?;
            return Ok((log.clone(), empty));
        }
        TrainSpan::All => {
            return Err(Error::Invalid(
                "a split training on the whole log cannot have test weeks".into(),
            ))
        }
        TrainSpan::Weeks(w) => w,
    };
    let boundary = b.t_min + F::of(train_weeks as f64 * HOURS_PER_WEEK);
    let end = b.t_min + F::of((train_weeks + test_weeks) as f64 * HOURS_PER_WEEK);
    let slack = F::of(1e-9) * (F::one() + b.t_max.abs());
    if end > b.t_max + slack {
        return Err(Error::WindowExceedsData {
            requested: (end - b.t_min).as_f64(),
            available: b.duration().as_f64(),
        });
    }
    let (mut train_ev, mut test_ev) = (Vec::new(), Vec::new());
    for e in log.events() {
        if e.timestamp < boundary {
            train_ev.push(e.clone());
        } else if e.timestamp <= end {
            test_ev.push(e.clone());
        }
    }
    let train = log.rebuild(train_ev, DomainBounds { t_max: boundary, ..b })?;
    let test = log.rebuild(
        test_ev,
        DomainBounds {
            t_min: boundary,
            t_max: end,
            ..b
        },
    )?;
    Ok((train, test))
}

/// Removes the category from `round(fraction * N)` uniformly chosen events.
///
/// Returns the masked log and the true categories of the masked events.
pub fn inject_missingness<F: Scalar>(
    log: &EventLog<F>,
    fraction: f64,
    seed: u64,
) -> Result<(EventLog<F>, CategoryAssignment)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::BadFraction(fraction));
    }
    if log.n_latent() > 0 {
        return Err(Error::AlreadyMasked(log.n_latent()));
    }
    let n = log.len();
    let count = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();

    let mut events = log.events().to_vec();
    let mut truth = Vec::with_capacity(count);
    for &pos in &chosen {
        truth.push(events[pos].category.take().expect("fully observed log"));
    }
    let masked = log.rebuild(events, *log.bounds())?;
    // Sorting is stable and timestamps are untouched, so positions are preserved.
    debug_assert_eq!(masked.latent_index(), chosen.as_slice());
    let truth = CategoryAssignment::for_log(&masked, truth)?;
    Ok((masked, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "user_id,venue_id,timestamp,lat,lon,category\n";

    fn read(body: &str) -> Result<EventLog<f64>> {
        ingest(format!("{HEADER}{body}").as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn empty_stream() {
        let log = read("").unwrap();
        assert_eq!(log.len(), 0);
        assert!(log.categories().is_empty() && log.users().is_empty() && log.venues().is_empty());
        assert_eq!(log.n_latent(), 0);
    }

    #[test]
    fn parts_share_vocabulary_and_epoch() {
        let a = format!("{HEADER}u1,v1,2024-01-01T10:00:00,0,0,Food\n");
        let b = format!("{HEADER}u2,v2,2024-01-01T12:30:00,1,1,Shop\nu1,v1,2024-01-01T11:00:00,0,0,\n");
        let logs: Vec<EventLog<f64>> = ingest_many(vec![a.as_bytes(), b.as_bytes()], &CsvSchema::default()).unwrap();
        assert_eq!(logs[0].users(), logs[1].users());
        assert_eq!(logs[0].venues(), logs[1].venues());
        assert_eq!(logs[0].categories(), logs[1].categories());
        assert_eq!(logs[0].events()[0].timestamp, 0.0);
        let ts: Vec<f64> = logs[1].events().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![1.0, 2.5]);
        assert_eq!(logs[1].events()[0].user, logs[0].events()[0].user);
        assert_eq!(logs[1].origin().hour_of_day, 10.0);
    }

    #[test]
    fn empty_category_is_latent() {
        let log = read("a,v1,1.0,10,20,Food\na,v2,2.0,10.5,20,\nb,v1,3.0,10,20,Shop\n").unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.n_latent(), 1);
        assert_eq!(log.latent_index(), &[1]);
        assert_eq!(log.categories(), &["Food".to_string(), "Shop".to_string()]);
    }

    #[test]
    fn out_of_order_rows_are_sorted_stably() {
        let rows = [
            ("a", 5.0),
            ("b", 1.0),
            ("c", 3.0),
            ("d", 1.0),
            ("e", 0.5),
        ];
        let body: String = rows
            .iter()
            .map(|(u, t)| format!("{u},v,{t},0,0,X\n"))
            .collect();
        let log = read(&body).unwrap();
        let mut reference = rows.to_vec();
        reference.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let got: Vec<(&str, f64)> = log
            .events()
            .iter()
            .map(|e| (log.users()[e.user].as_str(), e.timestamp))
            .collect();
        assert_eq!(got, reference);
    }

    #[test]
    fn malformed_rows_report_row_number() {
        match read("a,v,1.0,0,0,X\na,v,oops,0,0,X\n") {
            Err(Error::BadTimestamp { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        match read("a,v,1.0,0,0,X\na,v,2.0,north,0,X\n") {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read("a,v,1.0,0,0\n"),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn duplicate_user_timestamps_are_accepted_in_input_order() {
        let log = read("a,v1,1.0,0,0,X\na,v2,1.0,0,1,Y\n").unwrap();
        assert_eq!(log.venues()[log.event(0).venue].id, "v1");
        assert_eq!(log.venues()[log.event(1).venue].id, "v2");
    }

    #[test]
    fn conflicting_venue_coordinates_keep_first() {
        let log = read("a,v,1.0,1,1,X\nb,v,2.0,5,5,X\n").unwrap();
        assert_eq!(log.venues().len(), 1);
        assert_eq!(log.event(1).location, Location::new(1.0, 1.0));
    }

    #[test]
    fn iso_timestamps_become_hours_from_earliest() {
        let log = read(
            "a,v,2010-01-05T08:30:00Z,0,0,X\na,v,2010-01-04T06:00:00,0,0,X\n",
        )
        .unwrap();
        // 2010-01-04 is a Monday.
        assert_eq!(log.origin().weekday, 0);
        assert!((log.origin().hour_of_day - 6.0).abs() < 1e-12);
        assert_eq!(log.event(0).timestamp, 0.0);
        assert!((log.event(1).timestamp - 26.5).abs() < 1e-12);
    }

    #[test]
    fn pinned_vocabulary_fixes_indices() {
        let schema = CsvSchema {
            categories: Some(vec!["Y".into(), "X".into()]),
            ..CsvSchema::default()
        };
        let log: EventLog<f64> =
            ingest(format!("{HEADER}a,v,1,0,0,X\n").as_bytes(), &schema).unwrap();
        assert_eq!(log.event(0).category, Some(1));
        assert!(ingest::<f64, _>(format!("{HEADER}a,v,1,0,0,Z\n").as_bytes(), &schema).is_err());
    }

    #[test]
    fn clock_wraps_weeks() {
        let o = TimeOrigin {
            weekday: 6,
            hour_of_day: 23.0,
        };
        assert_eq!(o.clock(0.0), (6, 23.0));
        assert_eq!(o.clock(1.0), (0, 0.0));
        assert_eq!(o.clock(25.5).0, 1);
    }

    fn weekly_log(weeks: f64, n: usize) -> EventLog<f64> {
        let events = (0..n)
            .map(|i| CheckinEvent {
                user: 0,
                venue: 0,
                timestamp: weeks * HOURS_PER_WEEK * i as f64 / (n - 1) as f64,
                location: Location::new(0.0, 0.0),
                category: Some(0),
            })
            .collect();
        EventLog::new(
            events,
            vec!["c".into()],
            vec!["u".into()],
            vec![Venue {
                id: "v".into(),
                location: Location::new(0.0, 0.0),
            }],
            None,
            TimeOrigin::default(),
        )
        .unwrap()
    }

    #[test]
    fn split_boundary_at_eight_weeks() {
        let log = weekly_log(12.0, 1201);
        let (train, test) = temporal_split(&log, TrainSpan::Weeks(8), 4).unwrap();
        assert_eq!(train.bounds().t_max, 1344.0);
        assert_eq!(test.bounds().t_min, 1344.0);
        assert!(train.events().iter().all(|e| e.timestamp < 1344.0));
        assert!(test.events().iter().all(|e| e.timestamp >= 1344.0));
        assert_eq!(train.len() + test.len(), log.len());
        // uniform spacing: 2/3 of events fall before the boundary
        let direct = log.events().iter().filter(|e| e.timestamp < 1344.0).count();
        assert_eq!(train.len(), direct);
        assert!((train.len() as f64 / log.len() as f64 - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn split_all_zero() {
        let log = weekly_log(3.0, 10);
        let (train, test) = temporal_split(&log, TrainSpan::All, 0).unwrap();
        assert_eq!(train, log);
        assert!(test.is_empty());
        assert_eq!(train.categories(), test.categories());
    }

    #[test]
    fn split_rejects_oversized_window() {
        let log = weekly_log(10.0, 10);
        assert!(matches!(
            temporal_split(&log, TrainSpan::Weeks(8), 4),
            Err(Error::WindowExceedsData { .. })
        ));
    }

    #[test]
    fn missingness_counts_and_inverse() {
        let log = weekly_log(1.0, 100);
        let (masked, truth) = inject_missingness(&log, 0.1, 7).unwrap();
        assert_eq!(masked.n_latent(), 10);
        assert_eq!(truth.positions(), masked.latent_index());
        assert_eq!(masked.with_categories(&truth).unwrap(), log);

        let (again, _) = inject_missingness(&log, 0.1, 7).unwrap();
        assert_eq!(again.latent_index(), masked.latent_index());

        assert!(matches!(
            inject_missingness(&log, 1.0, 0),
            Err(Error::BadFraction(_))
        ));
        assert!(matches!(
            inject_missingness(&masked, 0.2, 0),
            Err(Error::AlreadyMasked(10))
        ));
    }
}
