//! Sessions, ratings, CSV ingestion, length filtering, label attachment and
//! the chronological per-subject split.
//!
//! On-disk schemas (UTF-8, comma separated, header row required):
//!
//! ```text
//! keypresses.csv  subject_id,session_id,timestamp_ms,duration_ms,time_since_last_ms,dx_keys,dy_keys
//! accel.csv       subject_id,session_id,timestamp_ms,ax_g,ay_g,az_g
//! labels.csv      subject_id,assessment_date,hdrs,ymrs,diagnosis
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};
use log::warn;

use crate::error::{Error, Result};

pub const KEYPRESS_COLUMNS: [&str; 7] = [
    "subject_id",
    "session_id",
    "timestamp_ms",
    "duration_ms",
    "time_since_last_ms",
    "dx_keys",
    "dy_keys",
];
pub const ACCEL_COLUMNS: [&str; 6] = ["subject_id", "session_id", "timestamp_ms", "ax_g", "ay_g", "az_g"];
pub const LABEL_COLUMNS: [&str; 5] = ["subject_id", "assessment_date", "hdrs", "ymrs", "diagnosis"];

pub const KEYPRESS_FILE: &str = "keypresses.csv";
pub const ACCEL_FILE: &str = "accel.csv";
pub const LABEL_FILE: &str = "labels.csv";

/// Minimum and maximum alphanumeric keypresses per session.
pub const MIN_KEYPRESSES: usize = 10;
pub const MAX_KEYPRESSES: usize = 100;

/// Sessions farther than this from every rating are not labeled.
pub const LABEL_WINDOW_DAYS: i64 = 7;

const MS_PER_HOUR: f64 = 3_600_000.0;

/// Metadata of one alphanumeric keypress. Distances are signed key-grid units.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypressEvent {
    pub timestamp_ms: i64,
    pub duration_ms: f64,
    pub time_since_last_ms: f64,
    pub dx: f64,
    pub dy: f64,
}

impl KeypressEvent {
    /// `[duration, time_since_last, dx, dy]`
    pub fn features(&self) -> [f64; 4] {
        [self.duration_ms, self.time_since_last_ms, self.dx, self.dy]
    }
}

/// Accelerometer reading in g.
#[derive(Clone, Debug, PartialEq)]
pub struct AccelSample {
    pub timestamp_ms: i64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl AccelSample {
    pub fn features(&self) -> [f64; 3] {
        [self.ax, self.ay, self.az]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSession {
    pub subject_id: String,
    pub session_id: String,
    pub keypresses: Vec<KeypressEvent>,
    pub accel: Vec<AccelSample>,
    /// Earliest timestamp in either stream.
    pub start_ms: i64,
    /// Hours since the start of the subject's earliest session.
    pub t0_hours: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Diagnosis {
    Control,
    BipolarI,
    BipolarII,
}

impl Diagnosis {
    pub fn is_bipolar(self) -> bool {
        !matches!(self, Diagnosis::Control)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::Control => "control",
            Diagnosis::BipolarI => "bipolar1",
            Diagnosis::BipolarII => "bipolar2",
        }
    }
}

impl FromStr for Diagnosis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "control" => Ok(Diagnosis::Control),
            "bipolar1" => Ok(Diagnosis::BipolarI),
            "bipolar2" => Ok(Diagnosis::BipolarII),
            other => Err(Error::invalid(format!("unknown diagnosis `{other}`"))),
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weekly clinician rating.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRecord {
    pub subject_id: String,
    pub assessment_date: NaiveDate,
    pub hdrs: u32,
    pub ymrs: u32,
    pub diagnosis: Diagnosis,
}

/// Regression target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Target {
    Hdrs,
    Ymrs,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Hdrs => "hdrs",
            Target::Ymrs => "ymrs",
        }
    }

    fn pick(self, r: &LabelRecord) -> f64 {
        match self {
            Target::Hdrs => r.hdrs as f64,
            Target::Ymrs => r.ymrs as f64,
        }
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hdrs" => Ok(Target::Hdrs),
            "ymrs" => Ok(Target::Ymrs),
            other => Err(Error::invalid(format!("unknown target `{other}` (expected hdrs|ymrs)"))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which subjects take part in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cohort {
    /// Bipolar and control subjects.
    All,
    /// Control subjects dropped before splitting.
    Bipolar,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::All => "all",
            Cohort::Bipolar => "bipolar",
        }
    }

    pub fn admits(self, d: Diagnosis) -> bool {
        match self {
            Cohort::All => true,
            Cohort::Bipolar => d.is_bipolar(),
        }
    }
}

impl FromStr for Cohort {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "with-controls" => Ok(Cohort::All),
            "bipolar" | "bipolar-only" => Ok(Cohort::Bipolar),
            other => Err(Error::invalid(format!("unknown cohort `{other}` (expected all|bipolar)"))),
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSession {
    pub session: RawSession,
    pub label: f64,
    pub diagnosis: Diagnosis,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    /// Sorted by subject, then start time, then session id.
    pub sessions: Vec<RawSession>,
    pub labels: Vec<LabelRecord>,
}

impl Dataset {
    pub fn subjects(&self) -> BTreeSet<&str> {
        self.sessions.iter().map(|s| s.subject_id.as_str()).collect()
    }

    /// Diagnosis per subject, taken from the rating table.
    pub fn diagnoses(&self) -> BTreeMap<String, Diagnosis> {
        self.labels
            .iter()
            .map(|l| (l.subject_id.clone(), l.diagnosis))
            .collect()
    }
}

/// Row counts that did not make it into a [`Dataset`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub malformed_keypress_rows: usize,
    pub malformed_accel_rows: usize,
    pub malformed_label_rows: usize,
    /// Sessions with keypresses but no accelerometer rows.
    pub dropped_without_accel: usize,
}

impl LoadReport {
    pub fn malformed_rows(&self) -> usize {
        self.malformed_keypress_rows + self.malformed_accel_rows + self.malformed_label_rows
    }
}

/// A parsed row keyed by its session.
#[derive(Clone, Debug, PartialEq)]
pub struct Keyed<T> {
    pub subject_id: String,
    pub session_id: String,
    pub row: T,
}

/// Rows accepted from one CSV source plus the number rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub malformed: usize,
}

fn column_index(headers: &csv::ByteRecord, required: &[&str]) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|&name| {
            headers
                .iter()
                .position(|h| trim_bytes(h) == name.as_bytes())
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        })
        .collect()
}

fn trim_bytes(b: &[u8]) -> &[u8] {
    let b = b.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(b);
    let start = b.iter().position(|c| !c.is_ascii_whitespace()).unwrap_or(b.len());
    let end = b.iter().rposition(|c| !c.is_ascii_whitespace()).map_or(start, |e| e + 1);
    &b[start..end]
}

fn field<'a>(rec: &'a csv::ByteRecord, idx: usize) -> Option<&'a str> {
    std::str::from_utf8(trim_bytes(rec.get(idx)?)).ok()
}

fn parse_timestamp(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().or_else(|| {
        let v = s.parse::<f64>().ok()?;
        (v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15).then_some(v as i64)
    })
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn read_csv<R: Read, T>(
    reader: R,
    columns: &[&str],
    mut parse_row: impl FnMut(&[&str]) -> Option<T>,
) -> Result<Parsed<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.byte_headers()?.clone();
    let idx = column_index(&headers, columns)?;
    let mut rows = Vec::new();
    let mut malformed = 0;
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
            Err(_) => {
                malformed += 1;
                continue;
            }
        }
        let mut fields: Vec<&str> = Vec::with_capacity(idx.len());
        let mut ok = true;
        for &i in &idx {
            match field(&rec, i) {
                Some(f) => fields.push(f),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        match ok.then(|| parse_row(&fields)).flatten() {
            Some(row) => rows.push(row),
            None => malformed += 1,
        }
    }
    Ok(Parsed { rows, malformed })
}

/// Parse `keypresses.csv` content. Rows with unparseable or out-of-range
/// values are counted as malformed.
pub fn parse_keypresses<R: Read>(reader: R) -> Result<Parsed<Keyed<KeypressEvent>>> {
    read_csv(reader, &KEYPRESS_COLUMNS, |f| {
        let ev = KeypressEvent {
            timestamp_ms: parse_timestamp(f[2])?,
            duration_ms: parse_finite(f[3]).filter(|v| *v >= 0.0)?,
            time_since_last_ms: parse_finite(f[4]).filter(|v| *v >= 0.0)?,
            dx: parse_finite(f[5])?,
            dy: parse_finite(f[6])?,
        };
        (!f[0].is_empty() && !f[1].is_empty()).then(|| Keyed {
            subject_id: f[0].to_string(),
            session_id: f[1].to_string(),
            row: ev,
        })
    })
}

pub fn parse_accel<R: Read>(reader: R) -> Result<Parsed<Keyed<AccelSample>>> {
    read_csv(reader, &ACCEL_COLUMNS, |f| {
        let s = AccelSample {
            timestamp_ms: parse_timestamp(f[2])?,
            ax: parse_finite(f[3])?,
            ay: parse_finite(f[4])?,
            az: parse_finite(f[5])?,
        };
        (!f[0].is_empty() && !f[1].is_empty()).then(|| Keyed {
            subject_id: f[0].to_string(),
            session_id: f[1].to_string(),
            row: s,
        })
    })
}

pub fn parse_labels<R: Read>(reader: R) -> Result<Parsed<LabelRecord>> {
    read_csv(reader, &LABEL_COLUMNS, |f| {
        (!f[0].is_empty()).then_some(())?;
        Some(LabelRecord {
            subject_id: f[0].to_string(),
            assessment_date: NaiveDate::parse_from_str(f[1], "%Y-%m-%d").ok()?,
            hdrs: f[2].parse().ok()?,
            ymrs: f[3].parse().ok()?,
            diagnosis: f[4].parse().ok()?,
        })
    })
}

fn cmp_keypress(a: &KeypressEvent, b: &KeypressEvent) -> std::cmp::Ordering {
    a.timestamp_ms
        .cmp(&b.timestamp_ms)
        .then(a.duration_ms.total_cmp(&b.duration_ms))
        .then(a.time_since_last_ms.total_cmp(&b.time_since_last_ms))
        .then(a.dx.total_cmp(&b.dx))
        .then(a.dy.total_cmp(&b.dy))
}

fn cmp_accel(a: &AccelSample, b: &AccelSample) -> std::cmp::Ordering {
    a.timestamp_ms
        .cmp(&b.timestamp_ms)
        .then(a.ax.total_cmp(&b.ax))
        .then(a.ay.total_cmp(&b.ay))
        .then(a.az.total_cmp(&b.az))
}

fn cmp_label(a: &LabelRecord, b: &LabelRecord) -> std::cmp::Ordering {
    a.subject_id
        .cmp(&b.subject_id)
        .then(a.assessment_date.cmp(&b.assessment_date))
        .then(a.hdrs.cmp(&b.hdrs))
        .then(a.ymrs.cmp(&b.ymrs))
        .then(a.diagnosis.cmp(&b.diagnosis))
}

/// Group parsed rows into sessions. The result does not depend on row order.
pub fn assemble(
    keypresses: Vec<Keyed<KeypressEvent>>,
    accel: Vec<Keyed<AccelSample>>,
    mut labels: Vec<LabelRecord>,
) -> (Dataset, usize) {
    type Streams = (Vec<KeypressEvent>, Vec<AccelSample>);
    let mut groups: BTreeMap<(String, String), Streams> = BTreeMap::new();
    for k in keypresses {
        groups.entry((k.subject_id, k.session_id)).or_default().0.push(k.row);
    }
    for a in accel {
        groups.entry((a.subject_id, a.session_id)).or_default().1.push(a.row);
    }

    let mut dropped = 0;
    let mut sessions = Vec::with_capacity(groups.len());
    for ((subject_id, session_id), (mut kp, mut ac)) in groups {
        if !kp.is_empty() && ac.is_empty() {
            warn!("session {subject_id}/{session_id} has keypresses but no accelerometer rows; dropped");
            dropped += 1;
            continue;
        }
        kp.sort_by(cmp_keypress);
        ac.sort_by(cmp_accel);
        let start_ms = kp
            .first()
            .map(|k| k.timestamp_ms)
            .into_iter()
            .chain(ac.first().map(|a| a.timestamp_ms))
            .min()
            .unwrap_or(0);
        sessions.push(RawSession {
            subject_id,
            session_id,
            keypresses: kp,
            accel: ac,
            start_ms,
            t0_hours: 0.0,
        });
    }
    sessions.sort_by(|a, b| {
        a.subject_id
            .cmp(&b.subject_id)
            .then(a.start_ms.cmp(&b.start_ms))
            .then(a.session_id.cmp(&b.session_id))
    });
    assign_t0(&mut sessions);
    labels.sort_by(cmp_label);
    (Dataset { sessions, labels }, dropped)
}

/// Set `t0_hours` relative to each subject's earliest session start.
pub fn assign_t0(sessions: &mut [RawSession]) {
    let mut earliest: BTreeMap<&str, i64> = BTreeMap::new();
    for s in sessions.iter() {
        let e = earliest.entry(s.subject_id.as_str()).or_insert(s.start_ms);
        *e = (*e).min(s.start_ms);
    }
    let earliest: BTreeMap<String, i64> = earliest.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for s in sessions.iter_mut() {
        s.t0_hours = (s.start_ms - earliest[&s.subject_id]) as f64 / MS_PER_HOUR;
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Read the three CSV files into a dataset.
pub fn load_dataset(keypress_path: &Path, accel_path: &Path, label_path: &Path) -> Result<(Dataset, LoadReport)> {
    let kp = parse_keypresses(open(keypress_path)?)?;
    let ac = parse_accel(open(accel_path)?)?;
    let lb = parse_labels(open(label_path)?)?;
    let mut report = LoadReport {
        malformed_keypress_rows: kp.malformed,
        malformed_accel_rows: ac.malformed,
        malformed_label_rows: lb.malformed,
        dropped_without_accel: 0,
    };
    if report.malformed_rows() > 0 {
        warn!(
            "skipped malformed rows: {} keypress, {} accel, {} label",
            kp.malformed, ac.malformed, lb.malformed
        );
    }
    let (ds, dropped) = assemble(kp.rows, ac.rows, lb.rows);
    report.dropped_without_accel = dropped;
    Ok((ds, report))
}

/// Load `keypresses.csv`, `accel.csv` and `labels.csv` from a directory.
pub fn load_dir(dir: &Path) -> Result<(Dataset, LoadReport)> {
    load_dataset(&dir.join(KEYPRESS_FILE), &dir.join(ACCEL_FILE), &dir.join(LABEL_FILE))
}

pub fn write_keypresses<W: Write>(w: W, sessions: &[RawSession]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(KEYPRESS_COLUMNS)?;
    for s in sessions {
        for k in &s.keypresses {
            w.write_record([
                s.subject_id.clone(),
                s.session_id.clone(),
                k.timestamp_ms.to_string(),
                k.duration_ms.to_string(),
                k.time_since_last_ms.to_string(),
                k.dx.to_string(),
                k.dy.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_accel<W: Write>(w: W, sessions: &[RawSession]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(ACCEL_COLUMNS)?;
    for s in sessions {
        for a in &s.accel {
            w.write_record([
                s.subject_id.clone(),
                s.session_id.clone(),
                a.timestamp_ms.to_string(),
                a.ax.to_string(),
                a.ay.to_string(),
                a.az.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels<W: Write>(w: W, labels: &[LabelRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(LABEL_COLUMNS)?;
    for l in labels {
        w.write_record([
            l.subject_id.clone(),
            l.assessment_date.format("%Y-%m-%d").to_string(),
            l.hdrs.to_string(),
            l.ymrs.to_string(),
            l.diagnosis.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write the three CSV files into `dir` (created if missing).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_keypresses(BufWriter::new(File::create(dir.join(KEYPRESS_FILE))?), &ds.sessions)?;
    write_accel(BufWriter::new(File::create(dir.join(ACCEL_FILE))?), &ds.sessions)?;
    write_labels(BufWriter::new(File::create(dir.join(LABEL_FILE))?), &ds.labels)?;
    Ok(())
}

/// Drop sessions with fewer than 10 keypresses and truncate longer than 100
/// to the earliest 100.
pub fn filter_sessions(ds: &Dataset) -> Dataset {
    filter_sessions_with(ds, MIN_KEYPRESSES, MAX_KEYPRESSES)
}

/// Length filter with explicit bounds. Truncation also drops accelerometer
/// rows stamped after the last kept keypress; a session left without
/// accelerometer rows is removed.
pub fn filter_sessions_with(ds: &Dataset, min_len: usize, max_len: usize) -> Dataset {
    let mut sessions = Vec::with_capacity(ds.sessions.len());
    for s in &ds.sessions {
        let n = s.keypresses.len();
        if n < min_len {
            continue;
        }
        if n <= max_len {
            sessions.push(s.clone());
            continue;
        }
        let keypresses = s.keypresses[..max_len].to_vec();
        let cutoff = keypresses[max_len - 1].timestamp_ms;
        let accel: Vec<AccelSample> = s.accel.iter().filter(|a| a.timestamp_ms <= cutoff).cloned().collect();
        if accel.is_empty() {
            continue;
        }
        sessions.push(RawSession {
            keypresses,
            accel,
            ..s.clone()
        });
    }
    Dataset {
        sessions,
        labels: ds.labels.clone(),
    }
}

/// UTC calendar date of a millisecond timestamp.
pub fn date_of(ms: i64) -> NaiveDate {
    DateTime::from_timestamp_millis(ms)
        .map(|d| d.date_naive())
        .unwrap_or_default()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttachReport {
    /// Sessions farther than the window from every rating of their subject.
    pub dropped_far: usize,
    /// Subjects that have sessions but no rating.
    pub unrated_subjects: Vec<String>,
}

/// Give each session the rating of its subject whose date is nearest to the
/// session's start date; ties go to the earlier rating.
pub fn attach_labels(ds: &Dataset, target: Target) -> (Vec<LabeledSession>, AttachReport) {
    let mut by_subject: BTreeMap<&str, Vec<&LabelRecord>> = BTreeMap::new();
    for l in &ds.labels {
        by_subject.entry(l.subject_id.as_str()).or_default().push(l);
    }
    for v in by_subject.values_mut() {
        v.sort_by_key(|l| l.assessment_date);
    }

    let mut report = AttachReport::default();
    let mut out = Vec::with_capacity(ds.sessions.len());
    for s in &ds.sessions {
        let Some(ratings) = by_subject.get(s.subject_id.as_str()) else {
            if report.unrated_subjects.last() != Some(&s.subject_id) {
                warn!("subject {} has sessions but no ratings; skipped", s.subject_id);
                report.unrated_subjects.push(s.subject_id.clone());
            }
            continue;
        };
        let day = date_of(s.start_ms);
        // sorted ascending, strict `<` keeps the earlier rating on ties
        let mut best: Option<(i64, &LabelRecord)> = None;
        for r in ratings {
            let dist = (r.assessment_date - day).num_days().abs();
            if best.is_none_or(|(b, _)| dist < b) {
                best = Some((dist, r));
            }
        }
        match best {
            Some((dist, r)) if dist <= LABEL_WINDOW_DAYS => out.push(LabeledSession {
                session: s.clone(),
                label: target.pick(r),
                diagnosis: r.diagnosis,
            }),
            _ => report.dropped_far += 1,
        }
    }
    if report.dropped_far > 0 {
        warn!(
            "{} sessions farther than {LABEL_WINDOW_DAYS} days from any rating were dropped",
            report.dropped_far
        );
    }
    (out, report)
}

pub fn filter_cohort(sessions: Vec<LabeledSession>, cohort: Cohort) -> Vec<LabeledSession> {
    sessions.into_iter().filter(|s| cohort.admits(s.diagnosis)).collect()
}

/// Number of training sessions for `n` sessions: `floor(fraction * n)`,
/// kept within `1..n` so both sides are non-empty.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).floor() as usize).clamp(1, n.saturating_sub(1).max(1))
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("train fraction must be in (0, 1), got {fraction}")))
    }
}

/// Earliest `floor(fraction * N)` sessions of one subject for training, the
/// rest for testing.
pub fn chrono_split(
    sessions: &[LabeledSession],
    fraction: f64,
) -> Result<(Vec<LabeledSession>, Vec<LabeledSession>)> {
    check_fraction(fraction)?;
    if sessions.len() < 2 {
        return Err(Error::invalid(format!(
            "chronological split needs at least 2 sessions, got {}",
            sessions.len()
        )));
    }
    let mut sorted = sessions.to_vec();
    sorted.sort_by(|a, b| a.session.t0_hours.total_cmp(&b.session.t0_hours));
    let k = train_count(sorted.len(), fraction);
    let test = sorted.split_off(k);
    Ok((sorted, test))
}

/// Per-subject chronological split over a whole labeled set. Subjects with
/// fewer than two sessions are left out with a warning.
pub fn split_by_subject(
    sessions: &[LabeledSession],
    fraction: f64,
) -> Result<(Vec<LabeledSession>, Vec<LabeledSession>)> {
    check_fraction(fraction)?;
    let mut groups: BTreeMap<&str, Vec<LabeledSession>> = BTreeMap::new();
    for s in sessions {
        groups.entry(s.session.subject_id.as_str()).or_default().push(s.clone());
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (subject, group) in groups {
        if group.len() < 2 {
            warn!("subject {subject} has {} labeled session(s); left out of the split", group.len());
            continue;
        }
        let (a, b) = chrono_split(&group, fraction)?;
        train.extend(a);
        test.extend(b);
    }
    Ok((train, test))
}
