use super::*;
use crate::datamodel::{AccelSample, KeypressEvent};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

// 2017-01-02 00:00 UTC, a Monday
const MONDAY_MS: i64 = 1_483_315_200_000;
const HOUR_MS: i64 = 3_600_000;

fn session(subject: &str, start_ms: i64, durations: &[f64], ax: &[f64]) -> RawSession {
    RawSession {
        subject_id: subject.to_string(),
        session_id: format!("{subject}-{start_ms}"),
        keypresses: durations
            .iter()
            .enumerate()
            .map(|(i, &d)| KeypressEvent {
                timestamp_ms: start_ms + i as i64 * 200,
                duration_ms: d,
                time_since_last_ms: 200.0,
                dx: 0.0,
                dy: 0.0,
            })
            .collect(),
        accel: ax
            .iter()
            .enumerate()
            .map(|(i, &a)| AccelSample {
                timestamp_ms: start_ms + i as i64 * 60,
                ax: a,
                ay: 0.0,
                az: 1.0,
            })
            .collect(),
        start_ms,
        t0_hours: 0.0,
    }
}

fn dataset(sessions: Vec<RawSession>) -> Dataset {
    Dataset {
        sessions,
        labels: Vec::new(),
    }
}

/// Two-sided t tail by quadrature over the angle form:
/// p = int_{theta0}^{pi/2} cos^{v-1} / int_0^{pi/2} cos^{v-1},
/// theta0 = atan(|t| / sqrt(v)). No gamma functions involved.
fn quadrature_t_tail(t: f64, v: f64) -> f64 {
    let f = |th: f64| th.cos().max(0.0).powf(v - 1.0);
    let theta0 = (t.abs() / v.sqrt()).atan();
    adaptive_simpson(&f, theta0, PI / 2.0, 1e-13) / adaptive_simpson(&f, 0.0, PI / 2.0, 1e-13)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1) + rec(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 60)
}

#[test]
fn ln_gamma_known_values() {
    for (x, g) in [(1.0, 1.0f64), (2.0, 1.0), (5.0, 24.0), (10.0, 362_880.0), (0.5, PI.sqrt()), (1.5, PI.sqrt() / 2.0)] {
        assert!((ln_gamma(x) - g.ln()).abs() <= 1e-13, "{x}");
    }
    // reflection branch: Gamma(0.25) = 3.625609908221908...
    assert!((ln_gamma(0.25) - 3.625_609_908_221_908_3f64.ln()).abs() <= 1e-13);
}

#[test]
fn incomplete_beta_closed_forms() {
    for x in [0.0f64, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0] {
        assert!((incomplete_beta(x, 1.0, 1.0) - x).abs() <= 1e-14);
        assert!((incomplete_beta(x, 3.0, 1.0) - x.powi(3)).abs() <= 1e-14);
        assert!((incomplete_beta(x, 1.0, 4.0) - (1.0 - (1.0 - x).powi(4))).abs() <= 1e-14);
    }
    // I_{1/2}(a, a) = 1/2
    for a in [0.5, 2.0, 7.5, 40.0] {
        let e = (incomplete_beta(0.5, a, a) - 0.5).abs();
        assert!(e <= 1e-13, "a = {a}: {e:e}");
    }
}

#[test]
fn t_tail_closed_forms() {
    for t in [0.0f64, 0.3, 1.0, 2.5, 12.0, -4.0] {
        // df = 1 is Cauchy, df = 2 has an algebraic tail
        let cauchy = 1.0 - 2.0 / PI * t.abs().atan();
        assert!((student_t_two_sided(t, 1.0) - cauchy).abs() <= 1e-13, "t = {t}");
        let two = 1.0 - t.abs() / (2.0 + t * t).sqrt();
        assert!((student_t_two_sided(t, 2.0) - two).abs() <= 1e-13, "t = {t}");
    }
    assert_eq!(student_t_two_sided(f64::INFINITY, 5.0), 0.0);
    assert!(student_t_two_sided(f64::NAN, 5.0).is_nan());
}

#[test]
fn quadrature_oracle_on_twenty_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let t = rng.random_range(-6.0..6.0);
        let df = rng.random_range(1.0..60.0);
        let (got, want) = (student_t_two_sided(t, df), quadrature_t_tail(t, df));
        assert!((got - want).abs() <= 1e-6, "t {t} df {df}: {got} vs {want}");
    }
}

#[test]
fn welch_reference_values() {
    let r = welch_ttest(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap();
    assert!((r.t - -2.251_436_323_159_369_5).abs() <= 1e-12);
    assert!((r.df - 5.520_787_746_170_677).abs() <= 1e-10);
    assert!((r.p - 0.069_133_593_192_392_36).abs() <= 1e-9);
    let r = welch_ttest(&[12.1, 14.3, 11.8, 15.0, 13.3, 12.9], &[10.2, 9.8, 11.5, 10.9]).unwrap();
    assert!((r.t - 4.170_041_356_511_723).abs() <= 1e-12);
    assert!((r.df - 7.986_710_889_709_302).abs() <= 1e-10);
    assert!((r.p - 0.003_133_357_076_788_361).abs() <= 1e-9);
    assert!(!r.degenerate);
}

#[test]
fn welch_edge_cases() {
    assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
    assert!(welch_ttest(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    let same = welch_ttest(&[3.0, 3.0, 3.0], &[3.0, 3.0]).unwrap();
    assert_eq!((same.t, same.p, same.degenerate), (0.0, 1.0, false));
    let apart = welch_ttest(&[1.0, 1.0], &[2.0, 2.0, 2.0]).unwrap();
    assert_eq!((apart.t, apart.p, apart.degenerate), (f64::NEG_INFINITY, 0.0, true));
}

#[test]
fn feature_names_parse() {
    for f in Feature::ALL {
        assert_eq!(f.as_str().parse::<Feature>().unwrap(), f);
    }
    assert!(matches!("pressure".parse::<Feature>(), Err(Error::UnknownFeature(_))));
}

#[test]
fn hourly_stats_by_hand() {
    let ds = dataset(vec![
        session("a", MONDAY_MS + 3 * HOUR_MS, &[100.0, 140.0], &[0.1]),
        session("a", MONDAY_MS + 3 * HOUR_MS + 1_000, &[120.0], &[]),
        session("b", MONDAY_MS + 24 * HOUR_MS + 17 * HOUR_MS, &[90.0, 90.0], &[0.5, -0.5]),
    ]);
    let h = hourly_stats(&ds, Feature::Duration);
    assert_eq!(h.len(), 24);
    assert_eq!(h[3].count, 3);
    assert!((h[3].mean.unwrap() - 120.0).abs() <= 1e-12);
    // population standard deviation of 100, 140, 120
    assert!((h[3].std.unwrap() - (800.0f64 / 3.0).sqrt()).abs() <= 1e-12);
    assert_eq!((h[17].mean, h[17].std, h[17].count), (Some(90.0), Some(0.0), 2));
    assert_eq!((h[0].mean, h[0].std, h[0].count), (None, None, 0));

    let d = dayofweek_stats(&ds, Feature::Ax);
    assert_eq!(d.len(), 7);
    assert_eq!((d[0].mean, d[0].count), (Some(0.1), 1));
    assert_eq!((d[1].mean, d[1].std, d[1].count), (Some(0.0), Some(0.5), 2));
}

#[test]
fn histogram_counts_sessions() {
    let ds = dataset(vec![
        session("a", MONDAY_MS + 3 * HOUR_MS, &[1.0], &[]),
        session("a", MONDAY_MS + 3 * HOUR_MS + 5, &[1.0], &[]),
        session("a", MONDAY_MS + 6 * 24 * HOUR_MS + 23 * HOUR_MS, &[1.0], &[]),
    ]);
    let h = usage_histogram(&ds);
    assert_eq!(h[0][3], 2);
    assert_eq!(h[6][23], 1);
    assert_eq!(h.iter().flatten().sum::<u64>(), 3);
    let mut buf = Vec::new();
    write_histogram_csv(&mut buf, &h).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 7 * 24);
}

#[test]
fn pairwise_grid_shape_and_exclusion() {
    let ds = dataset(vec![
        session("a", MONDAY_MS, &[100.0, 110.0, 120.0], &[]),
        session("b", MONDAY_MS, &[130.0, 150.0, 170.0, 160.0], &[]),
        session("c", MONDAY_MS, &[90.0, 95.0], &[]),
        session("d", MONDAY_MS, &[100.0], &[]),
    ]);
    let g = pairwise_grid(&ds, Feature::Duration).unwrap();
    assert_eq!(g.subjects, ["a", "b", "c"]);
    assert_eq!(g.excluded, ["d"]);
    for i in 0..3 {
        assert_eq!(g.p[i][i], 1.0);
        assert_eq!(g.t[i][i], 0.0);
        for j in 0..3 {
            assert_eq!(g.p[i][j], g.p[j][i]);
            assert_eq!(g.t[i][j], -g.t[j][i]);
        }
    }
    let direct = welch_ttest(&[100.0, 110.0, 120.0], &[130.0, 150.0, 170.0, 160.0]).unwrap();
    assert_eq!((g.t[0][1], g.p[0][1]), (direct.t, direct.p));

    let mut buf = Vec::new();
    g.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 9);

    let lonely = dataset(vec![session("a", MONDAY_MS, &[1.0, 2.0], &[])]);
    assert!(pairwise_grid(&lonely, Feature::Duration).is_err());
}

proptest! {
    #[test]
    fn incomplete_beta_symmetry(x in 0.0f64..=1.0, a in 0.05f64..50.0, b in 0.05f64..50.0) {
        let lhs = incomplete_beta(x, a, b);
        let rhs = 1.0 - incomplete_beta(1.0 - x, b, a);
        prop_assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
        prop_assert!((0.0..=1.0).contains(&lhs));
    }

    #[test]
    fn t_tail_is_monotone_in_t(t in 0.0f64..20.0, dt in 0.001f64..5.0, df in 1.0f64..200.0) {
        prop_assert!(student_t_two_sided(t + dt, df) <= student_t_two_sided(t, df));
    }

    #[test]
    fn welch_is_antisymmetric(
        a in proptest::collection::vec(-100.0f64..100.0, 2..30),
        b in proptest::collection::vec(-100.0f64..100.0, 2..30),
    ) {
        let ab = welch_ttest(&a, &b).unwrap();
        let ba = welch_ttest(&b, &a).unwrap();
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert_eq!(ab.p, ba.p);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }
}
