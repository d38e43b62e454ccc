//! Deterministic synthetic cohort with planted per-subject calibration.
//!
//! Every subject has a weekly latent level whose sign follows the diagnosis
//! (positive for controls, negative for bipolar subjects). The level shifts
//! the mean of the accelerometer X axis, so a session's hidden score
//! `x = w . (feature means - reference)` carries the same sign. The weekly
//! HDRS rating is `mean x * (alpha sin(beta t0 + gamma) + delta) + noise`,
//! clipped at zero and rounded, with `t0` the rating time in hours since the
//! subject's first session. Because `|delta| > alpha` and `delta` shares the
//! sign of `x`, ratings are positive before noise.
//!
//! Independently of the labels, keypress duration follows a 24-hour cosine
//! that is slowest at 03:00, and `ay`/`az` move in opposite directions over
//! the day.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::config::Config;
use crate::datamodel::{
    assign_t0, AccelSample, Dataset, Diagnosis, KeypressEvent, LabelRecord, RawSession,
};
use crate::error::{Error, Result};
use crate::modelzoo::CalibrationParams;

const MS_PER_HOUR: i64 = 3_600_000;
const MS_PER_DAY: i64 = 24 * MS_PER_HOUR;

pub const TRUTH_FILE: &str = "truth.csv";
pub const TRUTH_COLUMNS: [&str; 6] = ["subject_id", "alpha", "beta", "gamma", "delta", "diagnosis"];

/// Reference point of the hidden score, in fused feature order.
pub const SCORE_REFERENCE: [f64; 7] = [110.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
/// Hidden-score weights before the per-subject perturbation.
pub const BASE_WEIGHTS: [f64; 7] = [0.01, 0.0, 0.0, 0.0, 25.0, 0.0, 0.0];

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub n_control: usize,
    pub n_bipolar1: usize,
    pub n_bipolar2: usize,
    pub sessions_per_subject: usize,
    pub weeks: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Session keypress count is `min_keys + Exp(mean_extra_keys)`, capped
    /// at `max_keys`.
    pub min_keys: usize,
    pub max_keys: usize,
    pub mean_extra_keys: f64,
    /// Mean inter-key gap in ms (shifted exponential above 60 ms).
    pub mean_gap_ms: f64,
    pub accel_period_ms: i64,
    pub accel_jitter_ms: i64,
    /// Mean duration at the circadian midpoint, and the cosine amplitude.
    pub duration_base_ms: f64,
    pub duration_amp_ms: f64,
    /// Shift of mean `ax` per unit of latent level, in g.
    pub ax_per_level: f64,
    /// Midnight UTC of the first day.
    pub start_date: NaiveDate,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_control: 8,
            n_bipolar1: 7,
            n_bipolar2: 5,
            sessions_per_subject: 200,
            weeks: 4,
            noise_sigma: 0.5,
            seed: 1234,
            min_keys: 10,
            max_keys: 100,
            mean_extra_keys: 20.0,
            mean_gap_ms: 220.0,
            accel_period_ms: 60,
            accel_jitter_ms: 5,
            duration_base_ms: 110.0,
            duration_amp_ms: 15.0,
            ax_per_level: 0.3,
            start_date: NaiveDate::from_ymd_opt(2017, 1, 2).expect("valid date"),
        }
    }
}

impl GenConfig {
    pub const KEYS: [&'static str; 17] = [
        "n_control",
        "n_bipolar1",
        "n_bipolar2",
        "sessions_per_subject",
        "weeks",
        "noise_sigma",
        "seed",
        "min_keys",
        "max_keys",
        "mean_extra_keys",
        "mean_gap_ms",
        "accel_period_ms",
        "accel_jitter_ms",
        "duration_base_ms",
        "duration_amp_ms",
        "ax_per_level",
        "start_date",
    ];

    /// Overwrite fields named in `cfg`; other keys are ignored.
    pub fn apply(&mut self, cfg: &Config) -> Result<()> {
        cfg.read_into("n_control", &mut self.n_control)?;
        cfg.read_into("n_bipolar1", &mut self.n_bipolar1)?;
        cfg.read_into("n_bipolar2", &mut self.n_bipolar2)?;
        cfg.read_into("sessions_per_subject", &mut self.sessions_per_subject)?;
        cfg.read_into("weeks", &mut self.weeks)?;
        cfg.read_into("noise_sigma", &mut self.noise_sigma)?;
        cfg.read_into("seed", &mut self.seed)?;
        cfg.read_into("min_keys", &mut self.min_keys)?;
        cfg.read_into("max_keys", &mut self.max_keys)?;
        cfg.read_into("mean_extra_keys", &mut self.mean_extra_keys)?;
        cfg.read_into("mean_gap_ms", &mut self.mean_gap_ms)?;
        cfg.read_into("accel_period_ms", &mut self.accel_period_ms)?;
        cfg.read_into("accel_jitter_ms", &mut self.accel_jitter_ms)?;
        cfg.read_into("duration_base_ms", &mut self.duration_base_ms)?;
        cfg.read_into("duration_amp_ms", &mut self.duration_amp_ms)?;
        cfg.read_into("ax_per_level", &mut self.ax_per_level)?;
        cfg.read_into("start_date", &mut self.start_date)?;
        self.validate()
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        let pairs: [(&str, String); 17] = [
            ("n_control", self.n_control.to_string()),
            ("n_bipolar1", self.n_bipolar1.to_string()),
            ("n_bipolar2", self.n_bipolar2.to_string()),
            ("sessions_per_subject", self.sessions_per_subject.to_string()),
            ("weeks", self.weeks.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("seed", self.seed.to_string()),
            ("min_keys", self.min_keys.to_string()),
            ("max_keys", self.max_keys.to_string()),
            ("mean_extra_keys", self.mean_extra_keys.to_string()),
            ("mean_gap_ms", self.mean_gap_ms.to_string()),
            ("accel_period_ms", self.accel_period_ms.to_string()),
            ("accel_jitter_ms", self.accel_jitter_ms.to_string()),
            ("duration_base_ms", self.duration_base_ms.to_string()),
            ("duration_amp_ms", self.duration_amp_ms.to_string()),
            ("ax_per_level", self.ax_per_level.to_string()),
            ("start_date", self.start_date.to_string()),
        ];
        for (k, v) in pairs {
            c.set(k, v).expect("static key");
        }
        c
    }

    pub fn n_subjects(&self) -> usize {
        self.n_control + self.n_bipolar1 + self.n_bipolar2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("`{key}` {why}")));
        if self.n_subjects() == 0 {
            return bad("n_control", "and the bipolar counts are all zero");
        }
        if self.sessions_per_subject == 0 {
            return bad("sessions_per_subject", "must be at least 1");
        }
        if self.weeks == 0 {
            return bad("weeks", "must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be finite and >= 0");
        }
        if self.min_keys == 0 || self.min_keys > self.max_keys {
            return bad("min_keys", "must be in 1..=max_keys");
        }
        if !(self.mean_extra_keys >= 0.0 && self.mean_extra_keys.is_finite()) {
            return bad("mean_extra_keys", "must be finite and >= 0");
        }
        if !(self.mean_gap_ms > 60.0 && self.mean_gap_ms.is_finite()) {
            return bad("mean_gap_ms", "must exceed 60");
        }
        if self.accel_period_ms <= 0 || self.accel_jitter_ms < 0 || 2 * self.accel_jitter_ms >= self.accel_period_ms {
            return bad("accel_jitter_ms", "must be >= 0 and below half of accel_period_ms");
        }
        if !(self.duration_base_ms > self.duration_amp_ms.abs() + 20.0) {
            return bad("duration_base_ms", "must exceed |duration_amp_ms| + 20");
        }
        if !self.ax_per_level.is_finite() {
            return bad("ax_per_level", "must be finite");
        }
        Ok(())
    }
}

/// What the generator planted for one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    pub calibration: CalibrationParams,
    /// Hidden-score weights in fused feature order.
    pub weights: [f64; 7],
    /// Latent level per week, sign fixed by diagnosis.
    pub weekly_levels: Vec<f64>,
    pub duration_amp_ms: f64,
    /// Hour of the slowest keypresses.
    pub duration_peak_hour: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlantedTruth {
    pub subjects: Vec<SubjectTruth>,
}

impl PlantedTruth {
    pub fn calibrations(&self) -> BTreeMap<String, CalibrationParams> {
        self.subjects
            .iter()
            .map(|s| (s.subject_id.clone(), s.calibration))
            .collect()
    }

    pub fn diagnoses(&self) -> BTreeMap<String, Diagnosis> {
        self.subjects.iter().map(|s| (s.subject_id.clone(), s.diagnosis)).collect()
    }
}

pub fn subject_id(index: usize) -> String {
    format!("u{:02}", index + 1)
}

fn diagnosis_of(cfg: &GenConfig, index: usize) -> Diagnosis {
    if index < cfg.n_control {
        Diagnosis::Control
    } else if index < cfg.n_control + cfg.n_bipolar1 {
        Diagnosis::BipolarI
    } else {
        Diagnosis::BipolarII
    }
}

/// Planted mean keypress duration at a given hour of day.
pub fn planted_duration_ms(cfg: &GenConfig, hour: f64) -> f64 {
    cfg.duration_base_ms + cfg.duration_amp_ms * (2.0 * PI * (hour - 3.0) / 24.0).cos()
}

/// Relative weight of session starts by hour: a quarter at night.
pub fn hour_weight(hour: u32) -> f64 {
    if hour < 6 {
        0.25
    } else {
        1.0
    }
}

fn draw_hour(rng: &mut ChaCha8Rng) -> u32 {
    let total: f64 = (0..24).map(hour_weight).sum();
    let mut u = rng.random_range(0.0..total);
    for h in 0..24 {
        u -= hour_weight(h);
        if u < 0.0 {
            return h;
        }
    }
    23
}

fn round_to(v: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (v * p).round() / p
}

/// Hidden score of a session: weights dotted with the offset feature means.
pub fn hidden_score(session: &RawSession, weights: &[f64; 7]) -> f64 {
    let nk = session.keypresses.len().max(1) as f64;
    let na = session.accel.len().max(1) as f64;
    let mut means = [0.0; 7];
    for k in &session.keypresses {
        for (c, v) in k.features().into_iter().enumerate() {
            means[c] += v / nk;
        }
    }
    for a in &session.accel {
        for (c, v) in a.features().into_iter().enumerate() {
            means[4 + c] += v / na;
        }
    }
    (0..7).map(|c| weights[c] * (means[c] - SCORE_REFERENCE[c])).sum()
}

struct SubjectData {
    truth: SubjectTruth,
    sessions: Vec<RawSession>,
    labels: Vec<LabelRecord>,
}

fn generate_subject(cfg: &GenConfig, index: usize) -> Result<SubjectData> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let id = subject_id(index);
    let diagnosis = diagnosis_of(cfg, index);
    let sign = if diagnosis == Diagnosis::Control { 1.0 } else { -1.0 };

    let alpha = rng.random_range(0.3..1.0);
    let calibration = CalibrationParams {
        alpha,
        beta: rng.random_range(0.8..1.2) * 2.0 * PI / 24.0,
        gamma: rng.random_range(0.0..2.0 * PI),
        delta: sign * rng.random_range(1.2..2.0),
    };
    let mut weights = BASE_WEIGHTS;
    for w in &mut weights {
        *w *= rng.random_range(0.9..1.1);
    }
    let weekly_levels: Vec<f64> = (0..cfg.weeks).map(|_| sign * rng.random_range(0.5..1.5)).collect();

    let origin_ms = cfg
        .start_date
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
        .and_utc()
        .timestamp_millis();
    let days = 7 * cfg.weeks as i64;
    let extra_keys = Exp::new(1.0 / cfg.mean_extra_keys.max(1e-9)).map_err(|e| Error::invalid(e.to_string()))?;
    let gap = Exp::new(1.0 / (cfg.mean_gap_ms - 60.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut sessions = Vec::with_capacity(cfg.sessions_per_subject);
    for j in 0..cfg.sessions_per_subject {
        let day = rng.random_range(0..days);
        let hour = draw_hour(&mut rng);
        let offset_ms = rng.random_range(0..MS_PER_HOUR);
        let start_ms = origin_ms + day * MS_PER_DAY + hour as i64 * MS_PER_HOUR + offset_ms;
        let level = weekly_levels[(day / 7) as usize];
        let hour_f = hour as f64 + offset_ms as f64 / MS_PER_HOUR as f64;

        let extra = if cfg.mean_extra_keys > 0.0 { extra_keys.sample(&mut rng).floor() as usize } else { 0 };
        let n_keys = (cfg.min_keys + extra).min(cfg.max_keys);
        let mean_duration = planted_duration_ms(cfg, hour_f);
        let mut t = start_ms;
        let mut keypresses = Vec::with_capacity(n_keys);
        for i in 0..n_keys {
            let g = if i == 0 { 0.0 } else { (60.0 + gap.sample(&mut rng)).round() };
            t += g as i64;
            let duration = (mean_duration + 15.0 * unit.sample(&mut rng)).round().max(20.0);
            keypresses.push(KeypressEvent {
                timestamp_ms: t,
                duration_ms: duration,
                time_since_last_ms: g,
                dx: rng.random_range(-4..=4) as f64,
                dy: rng.random_range(-2..=2) as f64,
            });
        }
        let end_ms = t + 300;
        let day_phase = (2.0 * PI * hour_f / 24.0).cos();
        let mut accel = Vec::new();
        let mut k = 0i64;
        loop {
            let jitter = if cfg.accel_jitter_ms > 0 {
                rng.random_range(-cfg.accel_jitter_ms..=cfg.accel_jitter_ms)
            } else {
                0
            };
            let ts = start_ms + k * cfg.accel_period_ms + jitter;
            if ts > end_ms {
                break;
            }
            let shared = 0.05 * unit.sample(&mut rng);
            accel.push(AccelSample {
                timestamp_ms: ts,
                ax: round_to(cfg.ax_per_level * level + 0.1 * unit.sample(&mut rng), 4),
                ay: round_to(-0.6 - 0.2 * day_phase + shared + 0.03 * unit.sample(&mut rng), 4),
                az: round_to(0.7 + 0.2 * day_phase - shared + 0.03 * unit.sample(&mut rng), 4),
            });
            k += 1;
        }
        let session_start = keypresses
            .first()
            .map(|kp| kp.timestamp_ms)
            .unwrap_or(start_ms)
            .min(accel.first().map(|a| a.timestamp_ms).unwrap_or(start_ms));
        sessions.push(RawSession {
            subject_id: id.clone(),
            session_id: format!("{id}-s{:04}", j + 1),
            keypresses,
            accel,
            start_ms: session_start,
            t0_hours: 0.0,
        });
    }
    sessions.sort_by(|a, b| a.start_ms.cmp(&b.start_ms).then(a.session_id.cmp(&b.session_id)));
    assign_t0(&mut sessions);
    let first_ms = sessions.iter().map(|s| s.start_ms).min().unwrap_or(origin_ms);

    // one rating per week, on its fourth day, so every session of the week
    // is nearer to it than to any other rating
    let mut labels = Vec::with_capacity(cfg.weeks);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    for week in 0..cfg.weeks as i64 {
        let in_week: Vec<&RawSession> = sessions
            .iter()
            .filter(|s| (s.start_ms - origin_ms).div_euclid(MS_PER_DAY) / 7 == week)
            .collect();
        if in_week.is_empty() {
            continue;
        }
        let mean_x = in_week.iter().map(|s| hidden_score(s, &weights)).sum::<f64>() / in_week.len() as f64;
        let rating_ms = origin_ms + (7 * week + 3) * MS_PER_DAY + 12 * MS_PER_HOUR;
        let t0 = (rating_ms - first_ms) as f64 / MS_PER_HOUR as f64;
        let raw = mean_x * calibration.factor(t0);
        let hdrs = (raw + noise.sample(&mut rng)).max(0.0).round() as u32;
        let ymrs = (0.5 * mean_x.abs() + noise.sample(&mut rng)).max(0.0).round() as u32;
        labels.push(LabelRecord {
            subject_id: id.clone(),
            assessment_date: cfg.start_date + Duration::days(7 * week + 3),
            hdrs,
            ymrs,
            diagnosis,
        });
    }

    Ok(SubjectData {
        truth: SubjectTruth {
            subject_id: id,
            diagnosis,
            calibration,
            weights,
            weekly_levels,
            duration_amp_ms: cfg.duration_amp_ms,
            duration_peak_hour: 3.0,
        },
        sessions,
        labels,
    })
}

/// Generate the cohort. Subjects use independent streams of the seeded
/// generator, so the output does not depend on thread scheduling.
pub fn generate_dataset(cfg: &GenConfig) -> Result<(Dataset, PlantedTruth)> {
    cfg.validate()?;
    let parts = (0..cfg.n_subjects())
        .into_par_iter()
        .map(|i| generate_subject(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::default();
    let mut truth = PlantedTruth::default();
    for p in parts {
        ds.sessions.extend(p.sessions);
        ds.labels.extend(p.labels);
        truth.subjects.push(p.truth);
    }
    Ok((ds, truth))
}

pub fn write_truth<W: Write>(w: W, truth: &PlantedTruth) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRUTH_COLUMNS)?;
    for s in &truth.subjects {
        let c = &s.calibration;
        out.write_record([
            s.subject_id.clone(),
            c.alpha.to_string(),
            c.beta.to_string(),
            c.gamma.to_string(),
            c.delta.to_string(),
            s.diagnosis.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Truth rows as read back from `truth.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthRow {
    pub subject_id: String,
    pub calibration: CalibrationParams,
    pub diagnosis: Diagnosis,
}

/// Parse `truth.csv`. Unlike the data files, any bad row is an error.
pub fn parse_truth<R: Read>(r: R) -> Result<Vec<TruthRow>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let idx: Vec<usize> = TRUTH_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).map(str::trim).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(format!("truth row {}: bad {}", line + 2, TRUTH_COLUMNS[i])))
        };
        let subject_id = field(0).to_string();
        if subject_id.is_empty() {
            return Err(Error::invalid(format!("truth row {}: empty subject_id", line + 2)));
        }
        rows.push(TruthRow {
            subject_id,
            calibration: CalibrationParams {
                alpha: num(1)?,
                beta: num(2)?,
                gamma: num(3)?,
                delta: num(4)?,
            },
            diagnosis: field(5).parse()?,
        });
    }
    Ok(rows)
}

/// Write the three data files and `truth.csv` into `dir`.
pub fn save_generated(ds: &Dataset, truth: &PlantedTruth, dir: &Path) -> Result<()> {
    crate::datamodel::save_dataset(ds, dir)?;
    let f = std::fs::File::create(dir.join(TRUTH_FILE))?;
    write_truth(std::io::BufWriter::new(f), truth)
}

/// Hours in the week-long grid used to compare calibration curves.
pub const CURVE_GRID_HOURS: usize = 168;

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecovery {
    pub subject_id: String,
    pub diagnosis: Option<Diagnosis>,
    pub learned: CalibrationParams,
    pub truth: CalibrationParams,
    pub sign_agrees: bool,
    /// `|2 pi / beta_learned - 2 pi / beta_true|` in hours.
    pub period_error_hours: f64,
    /// RMS difference of the two factors over hours `0..168`.
    pub curve_rms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecoveryReport {
    pub subjects: Vec<SubjectRecovery>,
    pub missing_learned: Vec<String>,
    pub missing_truth: Vec<String>,
}

impl RecoveryReport {
    pub fn sign_agreements(&self) -> usize {
        self.subjects.iter().filter(|s| s.sign_agrees).count()
    }

    /// Agreement count restricted to subjects whose diagnosis passes `keep`.
    pub fn sign_agreements_where(&self, keep: impl Fn(Diagnosis) -> bool) -> (usize, usize) {
        let sel: Vec<_> = self
            .subjects
            .iter()
            .filter(|s| s.diagnosis.is_some_and(&keep))
            .collect();
        (sel.iter().filter(|s| s.sign_agrees).count(), sel.len())
    }

    /// `subject_id,diagnosis,delta_true,delta_learned,sign_agrees,period_error_hours,curve_rms`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "subject_id",
            "diagnosis",
            "delta_true",
            "delta_learned",
            "sign_agrees",
            "period_error_hours",
            "curve_rms",
        ])?;
        for s in &self.subjects {
            out.write_record([
                s.subject_id.clone(),
                s.diagnosis.map(|d| d.to_string()).unwrap_or_default(),
                s.truth.delta.to_string(),
                s.learned.delta.to_string(),
                s.sign_agrees.to_string(),
                s.period_error_hours.to_string(),
                s.curve_rms.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn period_hours(beta: f64) -> f64 {
    if beta == 0.0 {
        f64::INFINITY
    } else {
        2.0 * PI / beta.abs()
    }
}

/// Compare learned calibrations with the planted ones subject by subject.
/// Curves are compared as functions, which makes the `(-alpha, gamma + pi)`
/// reparameterization invisible.
pub fn recovery_report(
    learned: &BTreeMap<String, CalibrationParams>,
    truth: &[TruthRow],
) -> RecoveryReport {
    let truth_map: BTreeMap<&str, &TruthRow> = truth.iter().map(|t| (t.subject_id.as_str(), t)).collect();
    let mut report = RecoveryReport::default();
    for (id, t) in &truth_map {
        let Some(l) = learned.get(*id) else {
            report.missing_learned.push(id.to_string());
            continue;
        };
        let tc = &t.calibration;
        let ms = (0..CURVE_GRID_HOURS)
            .map(|h| (l.factor(h as f64) - tc.factor(h as f64)).powi(2))
            .sum::<f64>()
            / CURVE_GRID_HOURS as f64;
        let (pl, pt) = (period_hours(l.beta), period_hours(tc.beta));
        report.subjects.push(SubjectRecovery {
            subject_id: id.to_string(),
            diagnosis: Some(t.diagnosis),
            learned: *l,
            truth: *tc,
            sign_agrees: l.delta.signum() == tc.delta.signum() && l.delta != 0.0,
            period_error_hours: if pl == pt { 0.0 } else { (pl - pt).abs() },
            curve_rms: ms.sqrt(),
        });
    }
    report.missing_truth = learned
        .keys()
        .filter(|k| !truth_map.contains_key(k.as_str()))
        .cloned()
        .collect();
    report
}

pub fn truth_rows(truth: &PlantedTruth) -> Vec<TruthRow> {
    truth
        .subjects
        .iter()
        .map(|s| TruthRow {
            subject_id: s.subject_id.clone(),
            calibration: s.calibration,
            diagnosis: s.diagnosis,
        })
        .collect()
}
