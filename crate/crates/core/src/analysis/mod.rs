//! Exploratory statistics: hour-of-day and day-of-week feature aggregates,
//! the day x hour usage histogram, and subject-pair Welch t-tests.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Timelike};
use log::warn;
use rayon::prelude::*;

use crate::datamodel::{Dataset, RawSession};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Feature {
    Duration,
    TimeSinceLast,
    Ax,
    Ay,
    Az,
}

impl Feature {
    pub const ALL: [Feature; 5] = [Feature::Duration, Feature::TimeSinceLast, Feature::Ax, Feature::Ay, Feature::Az];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Duration => "duration",
            Feature::TimeSinceLast => "time_since_last",
            Feature::Ax => "ax",
            Feature::Ay => "ay",
            Feature::Az => "az",
        }
    }

    /// Per-event values of this feature in one session.
    pub fn values(self, s: &RawSession) -> Vec<f64> {
        match self {
            Feature::Duration => s.keypresses.iter().map(|k| k.duration_ms).collect(),
            Feature::TimeSinceLast => s.keypresses.iter().map(|k| k.time_since_last_ms).collect(),
            Feature::Ax => s.accel.iter().map(|a| a.ax).collect(),
            Feature::Ay => s.accel.iter().map(|a| a.ay).collect(),
            Feature::Az => s.accel.iter().map(|a| a.az).collect(),
        }
    }
}

impl FromStr for Feature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| Error::UnknownFeature(s.to_string()))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean and population standard deviation of one bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketStat {
    /// Hour 0..24 or weekday 0..7 (Monday = 0).
    pub bucket: usize,
    pub feature: Feature,
    /// `None` for an empty bucket.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

fn start_time(s: &RawSession) -> DateTime<chrono::Utc> {
    DateTime::from_timestamp_millis(s.start_ms).unwrap_or_default()
}

/// UTC hour of the session start.
pub fn start_hour(s: &RawSession) -> usize {
    start_time(s).hour() as usize
}

/// Weekday of the session start, Monday = 0.
pub fn start_weekday(s: &RawSession) -> usize {
    start_time(s).weekday().num_days_from_monday() as usize
}

fn bucket_stats(ds: &Dataset, feature: Feature, n: usize, key: impl Fn(&RawSession) -> usize) -> Vec<BucketStat> {
    // two-pass per bucket keeps the variance accurate for large offsets
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
    for s in &ds.sessions {
        values[key(s)].extend(feature.values(s));
    }
    values
        .into_iter()
        .enumerate()
        .map(|(bucket, v)| {
            let (mean, std) = if v.is_empty() {
                (None, None)
            } else {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
                (Some(m), Some(var.sqrt()))
            };
            BucketStat {
                bucket,
                feature,
                mean,
                std,
                count: v.len(),
            }
        })
        .collect()
}

/// 24 buckets by hour of session start.
pub fn hourly_stats(ds: &Dataset, feature: Feature) -> Vec<BucketStat> {
    bucket_stats(ds, feature, 24, start_hour)
}

/// 7 buckets by weekday of session start, Monday = 0.
pub fn dayofweek_stats(ds: &Dataset, feature: Feature) -> Vec<BucketStat> {
    bucket_stats(ds, feature, 7, start_weekday)
}

/// Session starts per (weekday, hour).
pub fn usage_histogram(ds: &Dataset) -> [[u64; 24]; 7] {
    let mut h = [[0u64; 24]; 7];
    for s in &ds.sessions {
        h[start_weekday(s)][start_hour(s)] += 1;
    }
    h
}

/// `<label>,feature,mean,std,count`; empty buckets leave mean and std blank.
pub fn write_bucket_csv<W: Write>(w: W, label: &str, stats: &[BucketStat]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([label, "feature", "mean", "std", "count"])?;
    for s in stats {
        out.write_record([
            s.bucket.to_string(),
            s.feature.to_string(),
            s.mean.map(|v| v.to_string()).unwrap_or_default(),
            s.std.map(|v| v.to_string()).unwrap_or_default(),
            s.count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `day,hour,count`
pub fn write_histogram_csv<W: Write>(w: W, h: &[[u64; 24]; 7]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["day", "hour", "count"])?;
    for (d, row) in h.iter().enumerate() {
        for (hr, c) in row.iter().enumerate() {
            out.write_record([d.to_string(), hr.to_string(), c.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9), for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // the fraction converges fast on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / (df + t * t), 0.5 * df, 0.5).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    pub p: f64,
    /// Both samples constant but different: `t` is infinite and `p` is 0.
    pub degenerate: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance two-sided t-test.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-test samples must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TTest { t: 0.0, df: na + nb - 2.0, p: 1.0, degenerate: false }
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            TTest { t, df: na + nb - 2.0, p: 0.0, degenerate: true }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df),
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseTestGrid {
    pub feature: Feature,
    pub subjects: Vec<String>,
    /// `t[i][j]` compares subject i against subject j; `t[j][i] = -t[i][j]`.
    pub t: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub degenerate: Vec<Vec<bool>>,
    /// Subjects with fewer than two values.
    pub excluded: Vec<String>,
}

/// Welch t-test between every pair of subjects' per-event values.
pub fn pairwise_grid(ds: &Dataset, feature: Feature) -> Result<PairwiseTestGrid> {
    let mut values: std::collections::BTreeMap<&str, Vec<f64>> = std::collections::BTreeMap::new();
    for s in &ds.sessions {
        values.entry(s.subject_id.as_str()).or_default().extend(feature.values(s));
    }
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for (id, v) in values {
        if v.len() < 2 {
            warn!("subject {id} has {} {feature} value(s); excluded from the t-test grid", v.len());
            excluded.push(id.to_string());
        } else {
            kept.push((id.to_string(), v));
        }
    }
    let n = kept.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "pairwise t-tests need at least 2 subjects with data, got {n}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let tests = pairs
        .par_iter()
        .map(|&(i, j)| welch_ttest(&kept[i].1, &kept[j].1))
        .collect::<Result<Vec<_>>>()?;
    let mut t = vec![vec![0.0; n]; n];
    let mut p = vec![vec![1.0; n]; n];
    let mut degenerate = vec![vec![false; n]; n];
    for (&(i, j), r) in pairs.iter().zip(tests) {
        t[i][j] = r.t;
        t[j][i] = -r.t;
        p[i][j] = r.p;
        p[j][i] = r.p;
        degenerate[i][j] = r.degenerate;
        degenerate[j][i] = r.degenerate;
    }
    Ok(PairwiseTestGrid {
        feature,
        subjects: kept.into_iter().map(|(id, _)| id).collect(),
        t,
        p,
        degenerate,
        excluded,
    })
}

impl PairwiseTestGrid {
    /// `subject_i,subject_j,t,p` over every ordered pair including the
    /// diagonal.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["subject_i", "subject_j", "t", "p"])?;
        for (i, si) in self.subjects.iter().enumerate() {
            for (j, sj) in self.subjects.iter().enumerate() {
                out.write_record([si.clone(), sj.clone(), self.t[i][j].to_string(), self.p[i][j].to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
