//! Finite-difference checks of every layer and of whole models on a short
//! session, with dropout off and batch normalization in inference mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_model, calibrate_var, CalibrationParams, Model, ModelConfig, PreparedSession, Variant};
use crate::datamodel::{AccelSample, Diagnosis, KeypressEvent, LabeledSession, RawSession};
use crate::diffengine::{grad_check, Array, GradCheckReport, ParamStore, Tape, Var};
use crate::error::Result;
use crate::layers::{bigru_forward, dropout, BatchNorm1d, ConvBlock, Gru, Linear, Mode, RnnCell};

/// Finite-difference step.
pub const GRAD_EPS: f64 = 1e-5;

/// Prediction error of the probe session in whole-model checks.
pub const PROBE_RESIDUAL: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct GradSuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn squared_sum(t: &mut Tape, y: Var, weights: &Array) -> Result<Var> {
    let w = t.constant(weights.clone());
    let p = t.mul(y, w)?;
    let s = t.square(p);
    Ok(t.mean(s))
}

fn entry(name: &str, report: GradCheckReport) -> GradSuiteEntry {
    GradSuiteEntry {
        name: name.to_string(),
        report,
    }
}

/// Gradient checks of the individual layers.
pub fn layer_checks(seed: u64) -> Result<Vec<GradSuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    {
        let mut store = ParamStore::new();
        let block = ConvBlock::new(&mut store, "conv", 7, 10, 3, 2, &mut rng)?;
        // inference statistics away from the identity
        let mut block = block;
        block.bn.running_mean = (0..10).map(|i| 0.1 * i as f64 - 0.4).collect();
        block.bn.running_var = (0..10).map(|i| 0.5 + 0.1 * i as f64).collect();
        let x = random(&mut rng, &[7, 10]);
        let w = random(&mut rng, &[10, 4]);
        let ids: Vec<_> = store.ids().collect();
        let r = grad_check(&mut store, &ids, GRAD_EPS, |t, s| {
            let xv = t.constant(x.clone());
            let (y, _) = block.forward_one(t, s, xv, Mode::Eval)?;
            squared_sum(t, y, &w)
        })?;
        out.push(entry("conv_block", r));
    }
    {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 5);
        let xs = [random(&mut rng, &[5, 6]), random(&mut rng, &[5, 9])];
        let (w1, w2) = (random(&mut rng, &[5, 6]), random(&mut rng, &[5, 9]));
        let ids: Vec<_> = store.ids().collect();
        let r = grad_check(&mut store, &ids, GRAD_EPS, |t, s| {
            let a = t.constant(xs[0].clone());
            let b = t.constant(xs[1].clone());
            let (y, _) = bn.forward(t, s, &[a, b], Mode::Train)?;
            let l1 = squared_sum(t, y[0], &w1)?;
            let l2 = squared_sum(t, y[1], &w2)?;
            t.add(l1, l2)
        })?;
        out.push(entry("batch_norm_train", r));
    }
    {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", 4, 5, &mut rng);
        let h0 = store.add("h0", random(&mut rng, &[5, 1]));
        let x = random(&mut rng, &[4, 1]);
        let w = random(&mut rng, &[5, 1]);
        let ids: Vec<_> = store.ids().collect();
        let r = grad_check(&mut store, &ids, GRAD_EPS, |t, s| {
            let xv = t.constant(x.clone());
            let h = t.param(s, h0);
            let y = gru.step(t, s, xv, h)?;
            squared_sum(t, y, &w)
        })?;
        out.push(entry("gru_step", r));
    }
    {
        let mut store = ParamStore::new();
        let f = Gru::new(&mut store, "fwd", 3, 4, &mut rng);
        let b = Gru::new(&mut store, "bwd", 3, 4, &mut rng);
        let seq = store.add("seq", random(&mut rng, &[3, 6]));
        let w = random(&mut rng, &[8, 1]);
        let ids: Vec<_> = store.ids().collect();
        let r = grad_check(&mut store, &ids, GRAD_EPS, |t, s| {
            let x = t.param(s, seq);
            let y = bigru_forward(t, s, &f, &b, x)?;
            squared_sum(t, y, &w)
        })?;
        out.push(entry("bigru", r));
    }
    {
        let mut store = ParamStore::new();
        let cell = RnnCell::new(&mut store, "rnn", 3, 4, &mut rng);
        let x = random(&mut rng, &[3, 1]);
        let h = random(&mut rng, &[4, 1]);
        let w = random(&mut rng, &[4, 1]);
        let ids: Vec<_> = store.ids().collect();
        let r = grad_check(&mut store, &ids, GRAD_EPS, |t, s| {
            let xv = t.constant(x.clone());
            let hv = t.constant(h.clone());
            let y = cell.step(t, s, xv, hv)?;
            squared_sum(t, y, &w)
        })?;
        out.push(entry("rnn_step", r));
    }
    {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "linear", 6, 2, &mut rng);
        let x = random(&mut rng, &[6, 1]);
        let w = random(&mut rng, &[2, 1]);
        let ids: Vec<_> = store.ids().collect();
        let r = grad_check(&mut store, &ids, GRAD_EPS, |t, s| {
            let xv = t.constant(x.clone());
            // eval-mode dropout is the identity and must stay transparent
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let xv = dropout(t, xv, 0.1, Mode::Eval, &mut unused)?;
            let y = lin.forward(t, s, xv)?;
            squared_sum(t, y, &w)
        })?;
        out.push(entry("linear", r));
    }
    {
        let mut store = ParamStore::new();
        let p = CalibrationParams {
            alpha: rng.random_range(0.3..1.0),
            beta: rng.random_range(0.2..0.3),
            gamma: rng.random_range(0.0..6.0),
            delta: rng.random_range(-2.0..2.0),
        };
        let pid = store.add("calibration", p.to_array());
        let xid = store.add("x", random(&mut rng, &[1, 1]));
        let r = grad_check(&mut store, &[pid, xid], GRAD_EPS, |t, s| {
            let pv = t.param(s, pid);
            let xv = t.param(s, xid);
            let y = calibrate_var(t, xv, 13.5, pv)?;
            Ok(t.square(y))
        })?;
        out.push(entry("calibration", r));
    }
    Ok(out)
}

/// Session whose fused sequence has length 10 under both early fusions:
/// 10 keypresses, each 20 ms after one of 10 accelerometer samples.
pub fn probe_session(rng: &mut impl Rng, subject: &str) -> LabeledSession {
    let keypresses = (0..10)
        .map(|i| KeypressEvent {
            timestamp_ms: 60 * i + 20,
            duration_ms: rng.random_range(40.0..160.0),
            time_since_last_ms: if i == 0 { 0.0 } else { rng.random_range(80.0..300.0) },
            dx: rng.random_range(-4..=4) as f64,
            dy: rng.random_range(-2..=2) as f64,
        })
        .collect();
    let accel = (0..10)
        .map(|j| AccelSample {
            timestamp_ms: 60 * j,
            ax: rng.random_range(-0.3..0.3),
            ay: rng.random_range(-1.0..0.0),
            az: rng.random_range(-1.0..1.0),
        })
        .collect();
    LabeledSession {
        session: RawSession {
            subject_id: subject.to_string(),
            session_id: "probe".into(),
            keypresses,
            accel,
            start_ms: 0,
            t0_hours: 7.25,
        },
        label: 9.0,
        diagnosis: Diagnosis::BipolarI,
    }
}

/// Check every parameter of a freshly built `variant` on a length-10 session
/// with squared-error loss.
pub fn model_grad_check(variant: Variant, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let session = probe_session(&mut rng, "probe");
    let mut model = build_model(variant, ["probe"], ModelConfig::default(), &mut rng)?;
    model.scaler = super::Scaler::fit([&session.session]);
    for block in model.branches.iter_mut().flat_map(|b| b.blocks.iter_mut()) {
        let c = block.bn.channels;
        block.bn.running_mean = (0..c).map(|_| rng.random_range(-0.2..0.2)).collect();
        block.bn.running_var = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
    }
    let mut prepared = model.prepare(&session)?;
    // a small residual keeps the loss, and with it the absolute roundoff of
    // the central difference, far below the size of the smallest gradients
    prepared.label = model.predict_one(&prepared)? + PROBE_RESIDUAL;
    check_model(&mut model, &prepared)
}

fn check_model(model: &mut Model, session: &PreparedSession) -> Result<GradCheckReport> {
    let ids: Vec<_> = model.store.ids().collect();
    let mut store = std::mem::take(&mut model.store);
    let frozen = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let report = grad_check(&mut store, &ids, GRAD_EPS, |t, s| {
        let (preds, _) = frozen.forward_batch_with(t, s, &[session], Mode::Eval, &mut rng)?;
        let err = t.add_scalar(preds, -session.label);
        Ok(t.square(err))
    });
    model.store = store;
    report
}

/// All layer checks followed by whole-model checks of both dpMood variants.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradSuiteEntry>> {
    let mut out = layer_checks(seed)?;
    for v in [Variant::DpMoodFillNa, Variant::DpMoodDropNa] {
        out.push(entry(v.tag(), model_grad_check(v, seed)?));
    }
    Ok(out)
}
