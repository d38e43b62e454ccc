//! Early fusion of the keypress and accelerometer streams into one 7-wide
//! sequence, and the two-view packaging used by late-fusion models.

use std::io::Write;

use crate::datamodel::RawSession;
use crate::diffengine::Array;
use crate::error::{Error, Result};

/// Features per fused row: duration, time since last, dx, dy, ax, ay, az.
pub const FUSED_WIDTH: usize = 7;
pub const KEYPRESS_WIDTH: usize = 4;
pub const ACCEL_WIDTH: usize = 3;

pub const FUSED_COLUMNS: [&str; 8] = [
    "row_timestamp_ms",
    "duration_ms",
    "time_since_last_ms",
    "dx_keys",
    "dy_keys",
    "ax_g",
    "ay_g",
    "az_g",
];

/// How the two streams are combined before the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionKind {
    /// Separate networks per stream, outputs concatenated.
    Late,
    /// One row per accelerometer sample, unmatched keypress slots zeroed.
    FillNa,
    /// One row per keypress, unmatched accelerometer rows discarded.
    DropNa,
}

impl FusionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Late => "late",
            FusionKind::FillNa => "ef-fillna",
            FusionKind::DropNa => "ef-dropna",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedSequence {
    pub rows: Vec<[f64; FUSED_WIDTH]>,
    pub row_timestamps: Vec<i64>,
    /// Keypresses that lost their accelerometer row to a later keypress.
    /// Always zero for drop-na fusion.
    pub collisions: usize,
}

impl FusedSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Channels-first `[7, len]` matrix.
    pub fn to_array(&self) -> Array {
        let n = self.rows.len();
        Array::from_fn(&[FUSED_WIDTH, n], |i| self.rows[i % n][i / n])
    }

    /// Debug dump: timestamp followed by the 7 features.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(FUSED_COLUMNS)?;
        for (ts, row) in self.row_timestamps.iter().zip(&self.rows) {
            let mut rec = Vec::with_capacity(FUSED_COLUMNS.len());
            rec.push(ts.to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The two raw streams of a session as `[L_k, 4]` and `[L_a, 3]` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub alphanumeric: Array,
    pub accelerometer: Array,
}

/// For each keypress timestamp, the index of the accelerometer sample with
/// the smallest absolute time difference; ties go to the earlier sample.
/// Both inputs must be sorted ascending.
pub fn align_nearest(keypress_ts: &[i64], accel_ts: &[i64]) -> Result<Vec<usize>> {
    if accel_ts.is_empty() {
        return Err(Error::Empty("accelerometer stream"));
    }
    let n = accel_ts.len();
    let mut out = Vec::with_capacity(keypress_ts.len());
    // `below` counts samples at or before t; `first` is the first index of
    // the latest such timestamp, so duplicate timestamps resolve earliest
    let mut below = 0;
    let mut first = 0;
    for &t in keypress_ts {
        while below < n && accel_ts[below] <= t {
            if below == 0 || accel_ts[below] != accel_ts[below - 1] {
                first = below;
            }
            below += 1;
        }
        let j = if below == 0 {
            0
        } else if below < n && accel_ts[below] - t < t - accel_ts[first] {
            below
        } else {
            first
        };
        out.push(j);
    }
    Ok(out)
}

fn keypress_ts(s: &RawSession) -> Vec<i64> {
    s.keypresses.iter().map(|k| k.timestamp_ms).collect()
}

fn accel_ts(s: &RawSession) -> Vec<i64> {
    s.accel.iter().map(|a| a.timestamp_ms).collect()
}

fn join(k: [f64; 4], a: [f64; 3]) -> [f64; FUSED_WIDTH] {
    [k[0], k[1], k[2], k[3], a[0], a[1], a[2]]
}

/// One row per keypress, joined with its nearest accelerometer sample.
pub fn ef_dropna(session: &RawSession) -> Result<FusedSequence> {
    let kts = keypress_ts(session);
    let map = align_nearest(&kts, &accel_ts(session))?;
    let rows = session
        .keypresses
        .iter()
        .zip(&map)
        .map(|(k, &j)| join(k.features(), session.accel[j].features()))
        .collect();
    Ok(FusedSequence {
        rows,
        row_timestamps: kts,
        collisions: 0,
    })
}

/// One row per accelerometer sample. Rows matched by a keypress carry its
/// features; when several keypresses share a row the latest one wins.
pub fn ef_fillna(session: &RawSession) -> Result<FusedSequence> {
    let ats = accel_ts(session);
    let map = align_nearest(&keypress_ts(session), &ats)?;
    let mut rows: Vec<[f64; FUSED_WIDTH]> = session.accel.iter().map(|a| join([0.0; 4], a.features())).collect();
    let mut taken = vec![false; rows.len()];
    let mut collisions = 0;
    for (k, &j) in session.keypresses.iter().zip(&map) {
        if taken[j] {
            collisions += 1;
        }
        taken[j] = true;
        rows[j][..KEYPRESS_WIDTH].copy_from_slice(&k.features());
    }
    Ok(FusedSequence {
        rows,
        row_timestamps: ats,
        collisions,
    })
}

/// Early fusion of the requested kind; `Late` is rejected.
pub fn fuse(session: &RawSession, kind: FusionKind) -> Result<FusedSequence> {
    match kind {
        FusionKind::FillNa => ef_fillna(session),
        FusionKind::DropNa => ef_dropna(session),
        FusionKind::Late => Err(Error::invalid("late fusion has no single fused sequence")),
    }
}

pub fn late_fusion_views(session: &RawSession) -> ViewPair {
    let k: Vec<f64> = session.keypresses.iter().flat_map(|k| k.features()).collect();
    let a: Vec<f64> = session.accel.iter().flat_map(|a| a.features()).collect();
    ViewPair {
        alphanumeric: view(session.keypresses.len(), KEYPRESS_WIDTH, k),
        accelerometer: view(session.accel.len(), ACCEL_WIDTH, a),
    }
}

fn view(rows: usize, width: usize, data: Vec<f64>) -> Array {
    if rows == 0 {
        // zero-length streams still need a valid array; callers check lengths
        return Array::zeros(&[1, width]);
    }
    Array::matrix(rows, width, data).expect("row-major view has consistent length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{AccelSample, KeypressEvent};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(t: i64, accel: &[i64]) -> usize {
        let mut best = 0;
        for (j, &a) in accel.iter().enumerate() {
            if (a - t).abs() < (accel[best] - t).abs() {
                best = j;
            }
        }
        best
    }

    fn make_session(kts: &[i64], ats: &[i64]) -> RawSession {
        RawSession {
            subject_id: "u".into(),
            session_id: "s".into(),
            keypresses: kts
                .iter()
                .enumerate()
                .map(|(i, &t)| KeypressEvent {
                    timestamp_ms: t,
                    duration_ms: 50.0 + i as f64,
                    time_since_last_ms: 100.0 + i as f64,
                    dx: 1.0 + i as f64,
                    dy: -1.0 - i as f64,
                })
                .collect(),
            accel: ats
                .iter()
                .enumerate()
                .map(|(j, &t)| AccelSample {
                    timestamp_ms: t,
                    ax: 0.01 * j as f64,
                    ay: 0.5 + j as f64,
                    az: -0.9,
                })
                .collect(),
            start_ms: kts.first().copied().unwrap_or(0).min(ats.first().copied().unwrap_or(0)),
            t0_hours: 0.0,
        }
    }

    #[test]
    fn nearest_prefers_smaller_gap() {
        assert_eq!(align_nearest(&[100], &[60, 180]).unwrap(), vec![0]);
        assert_eq!(align_nearest(&[100], &[60, 130]).unwrap(), vec![1]);
    }

    #[test]
    fn exact_tie_goes_to_earlier_sample() {
        assert_eq!(align_nearest(&[100], &[50, 150]).unwrap(), vec![0]);
    }

    #[test]
    fn single_accel_sample_takes_everything() {
        assert_eq!(align_nearest(&[1, 50, 900], &[400]).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn identical_timestamps_map_to_identity() {
        let ts = [3, 10, 20, 21, 50];
        assert_eq!(align_nearest(&ts, &ts).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_accel_rejected() {
        assert!(matches!(align_nearest(&[1], &[]), Err(Error::Empty(_))));
        let s = make_session(&[1, 2], &[]);
        assert!(ef_dropna(&s).is_err());
        assert!(ef_fillna(&s).is_err());
    }

    #[test]
    fn linear_scan_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let mut kts: Vec<i64> = (0..rng.random_range(1..40)).map(|_| rng.random_range(0..5000)).collect();
            let mut ats: Vec<i64> = (0..rng.random_range(1..80)).map(|_| rng.random_range(0..5000)).collect();
            kts.sort_unstable();
            ats.sort_unstable();
            let got = align_nearest(&kts, &ats).unwrap();
            let expected: Vec<usize> = kts.iter().map(|&t| brute_nearest(t, &ats)).collect();
            assert_eq!(got, expected, "k={kts:?} a={ats:?}");
        }
    }

    #[test]
    fn dropna_lengths_and_shared_rows() {
        let kts: Vec<i64> = (0..10).map(|i| 1000 + 37 * i).collect();
        let ats: Vec<i64> = (0..50).map(|j| 60 * j).collect();
        let s = make_session(&kts, &ats);
        let f = ef_dropna(&s).unwrap();
        assert_eq!(f.len(), 10);
        assert_eq!(f.row_timestamps, kts);
        for (i, row) in f.rows.iter().enumerate() {
            let j = brute_nearest(kts[i], &ats);
            let expected = join(s.keypresses[i].features(), s.accel[j].features());
            assert_eq!(row, &expected);
        }
        // keypresses at 1000 and 1037 both sit nearest to accel 1020
        assert_eq!(f.rows[0][4..], f.rows[1][4..]);
    }

    #[test]
    fn dropna_on_coinciding_timestamps_is_plain_concat() {
        let ts = [0, 60, 120, 180];
        let s = make_session(&ts, &ts);
        let f = ef_dropna(&s).unwrap();
        for (i, row) in f.rows.iter().enumerate() {
            assert_eq!(row, &join(s.keypresses[i].features(), s.accel[i].features()));
        }
    }

    #[test]
    fn fillna_counts_rows() {
        let kts: Vec<i64> = (0..10).map(|i| 300 * i).collect();
        let ats: Vec<i64> = (0..50).map(|j| 60 * j).collect();
        let s = make_session(&kts, &ats);
        let f = ef_fillna(&s).unwrap();
        assert_eq!(f.len(), 50);
        assert_eq!(f.collisions, 0);
        let filled = f.rows.iter().filter(|r| r[..4].iter().any(|&v| v != 0.0)).count();
        assert_eq!(filled, 10);
        // the tail after the last keypress (t=2700, row 45) stays empty
        assert!(f.rows[46..].iter().all(|r| r[..4] == [0.0; 4]));
        for (j, row) in f.rows.iter().enumerate() {
            assert_eq!(row[4..], s.accel[j].features());
        }
    }

    #[test]
    fn fillna_collision_latest_wins() {
        let kts: Vec<i64> = (0..10).map(|i| i * 3).collect();
        let ats = [0, 1000, 2000];
        let s = make_session(&kts, &ats);
        let f = ef_fillna(&s).unwrap();
        assert_eq!(f.collisions, 9);
        assert_eq!(f.rows[0][..4], s.keypresses[9].features());
        assert!(f.rows[1..].iter().all(|r| r[..4] == [0.0; 4]));
    }

    #[test]
    fn late_views_shapes_and_order() {
        let kts: Vec<i64> = (0..12).map(|i| 100 * i).collect();
        let ats: Vec<i64> = (0..200).map(|j| 7 * j).collect();
        let s = make_session(&kts, &ats);
        let v = late_fusion_views(&s);
        assert_eq!(v.alphanumeric.shape(), &[12, 4]);
        assert_eq!(v.accelerometer.shape(), &[200, 3]);
        // duration, time since last, dx, dy
        assert_eq!(v.alphanumeric.at(2, 0), s.keypresses[2].duration_ms);
        assert_eq!(v.alphanumeric.at(2, 1), s.keypresses[2].time_since_last_ms);
        assert_eq!(v.alphanumeric.at(2, 2), s.keypresses[2].dx);
        assert_eq!(v.alphanumeric.at(2, 3), s.keypresses[2].dy);
        for (i, k) in s.keypresses.iter().enumerate() {
            assert_eq!(&v.alphanumeric.data()[i * 4..i * 4 + 4], &k.features());
        }
        for (j, a) in s.accel.iter().enumerate() {
            assert_eq!(&v.accelerometer.data()[j * 3..j * 3 + 3], &a.features());
        }
    }

    #[test]
    fn channels_first_layout() {
        let s = make_session(&[0, 60], &[0, 60, 120]);
        let f = ef_fillna(&s).unwrap();
        let a = f.to_array();
        assert_eq!(a.shape(), &[7, 3]);
        for (j, row) in f.rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_eq!(a.at(c, j), *v);
            }
        }
    }

    #[test]
    fn fused_csv_dump() {
        let s = make_session(&[0, 60], &[0, 60]);
        let mut buf = Vec::new();
        ef_dropna(&s).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], FUSED_COLUMNS.join(","));
        assert!(lines[2].starts_with("60,51,101,2,-2,0.01,1.5,"));
    }

    proptest! {
        #[test]
        fn fusion_length_laws(
            mut kts in prop::collection::vec(0i64..10_000, 1..60),
            mut ats in prop::collection::vec(0i64..10_000, 1..120),
        ) {
            kts.sort_unstable();
            ats.sort_unstable();
            let s = make_session(&kts, &ats);
            let d = ef_dropna(&s).unwrap();
            let f = ef_fillna(&s).unwrap();
            prop_assert_eq!(d.len(), kts.len());
            prop_assert_eq!(f.len(), ats.len());
            prop_assert!(d.row_timestamps.windows(2).all(|w| w[0] <= w[1]));
            let filled = f.rows.iter().filter(|r| r[..4].iter().any(|&v| v != 0.0)).count();
            prop_assert_eq!(filled + f.collisions, kts.len());
        }
    }
}
