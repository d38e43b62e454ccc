use crate::datamodel::{LabeledSession, RawSession};
use crate::diffengine::Array;
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionKind, ACCEL_WIDTH, FUSED_WIDTH, KEYPRESS_WIDTH};

/// Per-feature standardization fitted on training events, in fused column
/// order. Applied before fusion so zero fill means "at the mean".
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: [f64; FUSED_WIDTH],
    pub std: [f64; FUSED_WIDTH],
}

impl Default for Scaler {
    fn default() -> Self {
        Scaler {
            mean: [0.0; FUSED_WIDTH],
            std: [1.0; FUSED_WIDTH],
        }
    }
}

impl Scaler {
    /// Mean and population standard deviation of every keypress and
    /// accelerometer feature. Constant features get unit scale.
    pub fn fit<'a>(sessions: impl IntoIterator<Item = &'a RawSession>) -> Self {
        let mut sum = [0.0; FUSED_WIDTH];
        let mut sq = [0.0; FUSED_WIDTH];
        let (mut nk, mut na) = (0usize, 0usize);
        for s in sessions {
            for k in &s.keypresses {
                for (c, v) in k.features().into_iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                nk += 1;
            }
            for a in &s.accel {
                for (c, v) in a.features().into_iter().enumerate() {
                    sum[KEYPRESS_WIDTH + c] += v;
                    sq[KEYPRESS_WIDTH + c] += v * v;
                }
                na += 1;
            }
        }
        let mut out = Scaler::default();
        for c in 0..FUSED_WIDTH {
            let n = if c < KEYPRESS_WIDTH { nk } else { na };
            if n == 0 {
                continue;
            }
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            out.mean[c] = mean;
            out.std[c] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        out
    }

    pub fn apply(&self, column: usize, v: f64) -> f64 {
        (v - self.mean[column]) / self.std[column]
    }

    /// Copy of `session` with every feature standardized.
    pub fn transform(&self, session: &RawSession) -> RawSession {
        let mut s = session.clone();
        for k in &mut s.keypresses {
            k.duration_ms = self.apply(0, k.duration_ms);
            k.time_since_last_ms = self.apply(1, k.time_since_last_ms);
            k.dx = self.apply(2, k.dx);
            k.dy = self.apply(3, k.dy);
        }
        for a in &mut s.accel {
            a.ax = self.apply(4, a.ax);
            a.ay = self.apply(5, a.ay);
            a.az = self.apply(6, a.az);
        }
        s
    }
}

/// Network input for one session: either the fused `[7, L]` sequence or
/// the two channels-first views `[4, L_k]` and `[3, L_a]`.
#[derive(Clone, Debug, PartialEq)]
pub enum SessionInput {
    Fused(Array),
    Views(Array, Array),
}

impl SessionInput {
    pub fn branches(&self) -> Vec<&Array> {
        match self {
            SessionInput::Fused(a) => vec![a],
            SessionInput::Views(k, a) => vec![k, a],
        }
    }
}

/// A session ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSession {
    pub subject_id: String,
    pub t0_hours: f64,
    pub label: f64,
    pub input: SessionInput,
}

/// Right-pad `[c, l]` with zero columns up to `min_len`.
pub fn pad_to(a: Array, min_len: usize) -> Array {
    let (rows, cols) = (a.rows(), a.cols());
    if cols >= min_len {
        return a;
    }
    let src = a.data();
    Array::from_fn(&[rows, min_len], |i| {
        let (r, c) = (i / min_len, i % min_len);
        if c < cols {
            src[r * cols + c]
        } else {
            0.0
        }
    })
}

fn channels_first(rows: usize, width: usize, values: impl Iterator<Item = f64>) -> Array {
    let v: Vec<f64> = values.collect();
    Array::from_fn(&[width, rows], |i| v[(i % rows) * width + i / rows])
}

/// Standardize, fuse or split, and pad one session.
pub fn prepare_session(
    session: &LabeledSession,
    scaler: &Scaler,
    fusion: FusionKind,
    min_len: usize,
) -> Result<PreparedSession> {
    let raw = &session.session;
    if raw.keypresses.is_empty() {
        return Err(Error::Empty("keypress stream"));
    }
    if raw.accel.is_empty() {
        return Err(Error::Empty("accelerometer stream"));
    }
    let scaled = scaler.transform(raw);
    let input = match fusion {
        FusionKind::Late => {
            let k = channels_first(
                scaled.keypresses.len(),
                KEYPRESS_WIDTH,
                scaled.keypresses.iter().flat_map(|k| k.features()),
            );
            let a = channels_first(
                scaled.accel.len(),
                ACCEL_WIDTH,
                scaled.accel.iter().flat_map(|a| a.features()),
            );
            SessionInput::Views(pad_to(k, min_len), pad_to(a, min_len))
        }
        kind => SessionInput::Fused(pad_to(fuse(&scaled, kind)?.to_array(), min_len)),
    };
    Ok(PreparedSession {
        subject_id: raw.subject_id.clone(),
        t0_hours: raw.t0_hours,
        label: session.label,
        input,
    })
}
