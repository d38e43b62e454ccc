use std::f64::consts::PI;

use crate::diffengine::{Array, Tape, Var};
use crate::error::Result;

/// Parameters of the sine calibration `alpha * sin(beta * t0 + gamma) + delta`,
/// with `beta` in radians per hour.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for CalibrationParams {
    /// Near-identity start with a 24-hour period.
    fn default() -> Self {
        CalibrationParams {
            alpha: 0.1,
            beta: 2.0 * PI / 24.0,
            gamma: 0.0,
            delta: 1.0,
        }
    }
}

impl CalibrationParams {
    pub const IDENTITY: CalibrationParams = CalibrationParams {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        delta: 1.0,
    };

    pub fn factor(&self, t0_hours: f64) -> f64 {
        self.alpha * (self.beta * t0_hours + self.gamma).sin() + self.delta
    }

    /// Period in hours, infinite for `beta == 0`.
    pub fn period_hours(&self) -> f64 {
        2.0 * PI / self.beta.abs()
    }

    /// `[4, 1]` column in the order alpha, beta, gamma, delta.
    pub fn to_array(&self) -> Array {
        Array::column(vec![self.alpha, self.beta, self.gamma, self.delta])
    }

    /// Reads the first four entries of `a`.
    pub fn from_array(a: &Array) -> Self {
        let d = a.data();
        CalibrationParams {
            alpha: d[0],
            beta: d[1],
            gamma: d[2],
            delta: d[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.alpha, self.beta, self.gamma, self.delta].iter().all(|v| v.is_finite())
    }
}

/// `s = x * (alpha * sin(beta * t0 + gamma) + delta)`.
pub fn calibrate(x: f64, t0_hours: f64, p: &CalibrationParams) -> f64 {
    x * p.factor(t0_hours)
}

/// Tape version of [`calibrate`]; `params` is a `[4, 1]` column and `x` a
/// `[1, 1]` value.
pub fn calibrate_var(tape: &mut Tape, x: Var, t0_hours: f64, params: Var) -> Result<Var> {
    let alpha = tape.slice(params, 0, 0, 1)?;
    let beta = tape.slice(params, 0, 1, 1)?;
    let gamma = tape.slice(params, 0, 2, 1)?;
    let delta = tape.slice(params, 0, 3, 1)?;
    let phase = tape.scale(beta, t0_hours);
    let phase = tape.add(phase, gamma)?;
    let wave = tape.sin(phase);
    let wave = tape.mul(alpha, wave)?;
    let factor = tape.add(wave, delta)?;
    tape.mul(x, factor)
}

/// Batched [`calibrate_var`]: `x` is `[1, B]`, `params` is `[4, B]` with
/// one column per prediction and `t0_hours` has `B` entries.
pub fn calibrate_cols(tape: &mut Tape, x: Var, t0_hours: &[f64], params: Var) -> Result<Var> {
    let alpha = tape.slice(params, 0, 0, 1)?;
    let beta = tape.slice(params, 0, 1, 1)?;
    let gamma = tape.slice(params, 0, 2, 1)?;
    let delta = tape.slice(params, 0, 3, 1)?;
    let t0 = tape.constant(Array::from_parts(vec![1, t0_hours.len()], t0_hours.to_vec()));
    let phase = tape.mul(beta, t0)?;
    let phase = tape.add(phase, gamma)?;
    let wave = tape.sin(phase);
    let wave = tape.mul(alpha, wave)?;
    let factor = tape.add(wave, delta)?;
    tape.mul(x, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::{grad_check, ParamStore};
    use proptest::prelude::*;

    #[test]
    fn identity_calibration() {
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(calibrate(x, 17.0, &CalibrationParams::IDENTITY), x);
        }
    }

    #[test]
    fn quarter_phase() {
        let p = CalibrationParams {
            alpha: 1.0,
            beta: 0.0,
            gamma: PI / 2.0,
            delta: 0.0,
        };
        assert_eq!(calibrate(2.0, 123.0, &p), 2.0);
    }

    #[test]
    fn daily_period_peak_at_six() {
        let p = CalibrationParams {
            alpha: 0.5,
            beta: 2.0 * PI / 24.0,
            gamma: 0.0,
            delta: 1.0,
        };
        assert!((calibrate(1.0, 6.0, &p) - 1.5).abs() <= 1e-15);
    }

    #[test]
    fn tape_matches_scalar_and_differentiates() {
        let mut store = ParamStore::new();
        let p = CalibrationParams {
            alpha: 0.7,
            beta: 0.3,
            gamma: -0.4,
            delta: 1.9,
        };
        let pid = store.add("calib", p.to_array());
        let xid = store.add("x", Array::matrix(1, 1, vec![2.3]).unwrap());
        let mut t = Tape::new();
        let pv = t.param(&store, pid);
        let xv = t.param(&store, xid);
        let s = calibrate_var(&mut t, xv, 5.5, pv).unwrap();
        assert!((t.value(s).item() - calibrate(2.3, 5.5, &p)).abs() <= 1e-14);

        let report = grad_check(&mut store, &[pid, xid], 1e-5, |t, s| {
            let pv = t.param(s, pid);
            let xv = t.param(s, xid);
            calibrate_var(t, xv, 5.5, pv)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-8, "{report:?}");
    }

    #[test]
    fn column_version_matches_scalar() {
        let ps = [
            CalibrationParams { alpha: 0.7, beta: 0.3, gamma: -0.4, delta: 1.9 },
            CalibrationParams::IDENTITY,
            CalibrationParams::default(),
        ];
        let xs = [2.3, -1.0, 0.5];
        let t0 = [5.5, 100.0, 13.25];
        let mut t = Tape::new();
        let cols: Vec<Var> = ps.iter().map(|p| t.constant(p.to_array())).collect();
        let params = t.concat(&cols, 1).unwrap();
        let x = t.constant(Array::from_parts(vec![1, 3], xs.to_vec()));
        let y = calibrate_cols(&mut t, x, &t0, params).unwrap();
        for i in 0..3 {
            let one = calibrate(xs[i], t0[i], &ps[i]);
            assert!((t.value(y).data()[i] - one).abs() <= 1e-14);
        }
    }

    proptest! {
        #[test]
        fn periodic_in_t0(
            alpha in -2.0f64..2.0,
            beta in prop_oneof![-1.5f64..-0.05, 0.05f64..1.5],
            gamma in 0.0f64..6.3,
            delta in -2.0f64..2.0,
            t0 in 0.0f64..500.0,
        ) {
            let p = CalibrationParams { alpha, beta, gamma, delta };
            let a = calibrate(1.7, t0, &p);
            let b = calibrate(1.7, t0 + 2.0 * PI / beta, &p);
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }

        #[test]
        fn sign_flip_with_half_turn_is_same_curve(
            alpha in -2.0f64..2.0, beta in 0.1f64..1.0, gamma in 0.0f64..6.3, delta in -2.0f64..2.0, t0 in 0.0f64..200.0,
        ) {
            let p = CalibrationParams { alpha, beta, gamma, delta };
            let q = CalibrationParams { alpha: -alpha, gamma: gamma + PI, ..p };
            prop_assert!((p.factor(t0) - q.factor(t0)).abs() <= 1e-12);
        }
    }
}
