//! RMSProp training loop, RMSE evaluation and the train-ratio sweep.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::datamodel::{
    attach_labels, filter_cohort, filter_sessions_with, split_by_subject, Cohort, Dataset, LabeledSession, Target,
};
use crate::diffengine::{Array, Gradients, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::modelzoo::{build_model, Model, ModelConfig, PreparedSession, Scaler, Variant};

/// Optimizer and protocol settings. Defaults are the published
/// hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub min_seq: usize,
    pub max_seq: usize,
    pub gru_hidden: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub target: Target,
    pub cohort: Cohort,
    pub rho: f64,
    pub rms_eps: f64,
    /// Fill the `seconds` column of metrics.csv. Off by default so that the
    /// file is byte-identical across runs.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 256,
            epochs: 200,
            dropout: 0.1,
            min_seq: 10,
            max_seq: 100,
            gru_hidden: 20,
            seed: 1234,
            train_fraction: 0.8,
            target: Target::Hdrs,
            cohort: Cohort::All,
            rho: 0.99,
            rms_eps: 1e-8,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 14] = [
        "learning_rate",
        "batch_size",
        "epochs",
        "dropout",
        "min_seq",
        "max_seq",
        "gru_hidden",
        "seed",
        "train_fraction",
        "target",
        "cohort",
        "rho",
        "rms_eps",
        "record_time",
    ];

    /// Overwrite every field named in `cfg`; other keys are ignored.
    pub fn apply(&mut self, cfg: &Config) -> Result<()> {
        cfg.read_into("learning_rate", &mut self.learning_rate)?;
        cfg.read_into("batch_size", &mut self.batch_size)?;
        cfg.read_into("epochs", &mut self.epochs)?;
        cfg.read_into("dropout", &mut self.dropout)?;
        cfg.read_into("min_seq", &mut self.min_seq)?;
        cfg.read_into("max_seq", &mut self.max_seq)?;
        cfg.read_into("gru_hidden", &mut self.gru_hidden)?;
        cfg.read_into("seed", &mut self.seed)?;
        cfg.read_into("train_fraction", &mut self.train_fraction)?;
        cfg.read_into("target", &mut self.target)?;
        cfg.read_into("cohort", &mut self.cohort)?;
        cfg.read_into("rho", &mut self.rho)?;
        cfg.read_into("rms_eps", &mut self.rms_eps)?;
        cfg.read_into("record_time", &mut self.record_time)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("`{key}` {why}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must be in [0, 1)");
        }
        if self.min_seq == 0 || self.min_seq > self.max_seq {
            return bad("min_seq", "must be in 1..=max_seq");
        }
        if self.gru_hidden == 0 {
            return bad("gru_hidden", "must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction", "must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho", "must be in [0, 1)");
        }
        if !(self.rms_eps > 0.0) {
            return bad("rms_eps", "must be positive");
        }
        Ok(())
    }

    /// Every field as config text, for run manifests.
    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        let pairs: [(&str, String); 14] = [
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("dropout", self.dropout.to_string()),
            ("min_seq", self.min_seq.to_string()),
            ("max_seq", self.max_seq.to_string()),
            ("gru_hidden", self.gru_hidden.to_string()),
            ("seed", self.seed.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("target", self.target.to_string()),
            ("cohort", self.cohort.to_string()),
            ("rho", self.rho.to_string()),
            ("rms_eps", self.rms_eps.to_string()),
            ("record_time", self.record_time.to_string()),
        ];
        for (k, v) in pairs {
            c.set(k, v).expect("static key");
        }
        c
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            gru_hidden: self.gru_hidden,
            dropout: self.dropout,
        }
    }
}

/// Running mean of squared gradients, one array per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct RmspropState {
    pub v: Vec<Array>,
    pub rho: f64,
    pub eps: f64,
    /// Parameter updates skipped because of a non-finite gradient.
    pub rejected: usize,
}

impl RmspropState {
    pub fn new(store: &ParamStore, rho: f64, eps: f64) -> Self {
        RmspropState {
            v: store.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect(),
            rho,
            eps,
            rejected: 0,
        }
    }
}

/// `v <- rho v + (1 - rho) g^2; theta <- theta - lr g / (sqrt(v) + eps)`.
///
/// A parameter whose gradient has a non-finite entry is left untouched for
/// this step and counted in `state.rejected`. Returns how many were skipped.
pub fn rmsprop_step(store: &mut ParamStore, grads: &Gradients, state: &mut RmspropState, lr: f64) -> Result<usize> {
    if grads.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::invalid(format!(
            "optimizer sees {} gradients and {} accumulators for {} parameters",
            grads.len(),
            state.v.len(),
            store.len()
        )));
    }
    let mut skipped = 0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id);
        let v = &mut state.v[id.index()];
        if g.shape() != store.get(id).shape() || v.shape() != g.shape() {
            return Err(Error::Shape {
                op: "rmsprop_step",
                lhs: store.get(id).shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            warn!("non-finite gradient for `{}`; update skipped", store.name(id));
            skipped += 1;
            continue;
        }
        let theta = store.get_mut(id).data_mut();
        for ((t, vi), &gi) in theta.iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = state.rho * *vi + (1.0 - state.rho) * gi * gi;
            *t -= lr * gi / (vi.sqrt() + state.eps);
        }
    }
    state.rejected += skipped;
    Ok(skipped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Inference-mode RMSE over the training sessions after the epoch.
    pub train_rmse: f64,
    /// `None` when there are no test sessions.
    pub test_rmse: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub rejected_updates: usize,
}

impl History {
    /// Epoch with the lowest test RMSE; earliest wins ties.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .filter(|r| r.test_rmse.is_some())
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.test_rmse <= r.test_rmse => Some(b),
                _ => Some(r),
            })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `epoch,train_rmse,test_rmse,seconds`; `seconds` is left empty unless
    /// `with_time`.
    pub fn write_csv<W: Write>(&self, w: W, with_time: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_rmse", "test_rmse", "seconds"])?;
        for r in &self.records {
            out.write_record([
                r.epoch.to_string(),
                r.train_rmse.to_string(),
                r.test_rmse.map(|v| v.to_string()).unwrap_or_default(),
                if with_time { format!("{:.3}", r.seconds) } else { String::new() },
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Labeled, filtered and split sessions ready for training.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<LabeledSession>,
    pub test: Vec<LabeledSession>,
}

/// Length filter, label attachment, cohort filter, then the per-subject
/// chronological split.
pub fn labeled_sessions(ds: &Dataset, cfg: &TrainConfig) -> Vec<LabeledSession> {
    let filtered = filter_sessions_with(ds, cfg.min_seq, cfg.max_seq);
    let (labeled, report) = attach_labels(&filtered, cfg.target);
    if report.dropped_far > 0 {
        info!("{} session(s) had no rating within the label window", report.dropped_far);
    }
    filter_cohort(labeled, cfg.cohort)
}

pub fn split_dataset(ds: &Dataset, cfg: &TrainConfig) -> Result<Split> {
    let sessions = labeled_sessions(ds, cfg);
    let (train, test) = split_by_subject(&sessions, cfg.train_fraction)?;
    Ok(Split { train, test })
}

/// Root-mean-square of the labels, used as the fixed output scale.
fn label_rms(sessions: &[LabeledSession]) -> f64 {
    let ms = sessions.iter().map(|s| s.label * s.label).sum::<f64>() / sessions.len() as f64;
    if ms > 0.0 {
        ms.sqrt()
    } else {
        1.0
    }
}

/// Inference-mode RMSE.
pub fn evaluate(model: &Model, sessions: &[PreparedSession]) -> Result<f64> {
    if sessions.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let preds = model.predict(sessions)?;
    Ok(rmse(&preds, sessions.iter().map(|s| s.label)))
}

pub fn evaluate_labeled(model: &Model, sessions: &[LabeledSession]) -> Result<f64> {
    evaluate(model, &model.prepare_all(sessions)?)
}

/// `sqrt(mean((p - y)^2))`, summed in input order.
pub fn rmse(preds: &[f64], labels: impl IntoIterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    for (p, y) in preds.iter().zip(labels) {
        sum += (p - y) * (p - y);
        n += 1;
    }
    (sum / n as f64).sqrt()
}

/// Mean squared error of one batch and its gradients; folds the batch
/// normalization statistics into the running estimates.
pub fn batch_step(
    model: &mut Model,
    batch: &[&PreparedSession],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let (preds, stats) = model.forward_batch(&mut tape, batch, Mode::Train, rng)?;
    let labels: Vec<f64> = batch.iter().map(|s| s.label).collect();
    let y = tape.constant(Array::from_parts(vec![1, labels.len()], labels));
    let err = tape.sub(preds, y)?;
    let sq = tape.square(err);
    let loss = tape.mean(sq);
    let grads = tape.backward(loss, &model.store)?;
    let value = tape.value(loss).item();
    model.apply_batch_stats(&stats);
    Ok((value, grads))
}

/// Train `variant` from scratch. The scaler and label scale are fitted on
/// `train`; `test` is evaluated after every epoch.
pub fn train(
    variant: Variant,
    train: &[LabeledSession],
    test: &[LabeledSession],
    cfg: &TrainConfig,
) -> Result<(Model, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let subjects = train.iter().map(|s| s.session.subject_id.as_str());
    let mut model = build_model(variant, subjects, cfg.model_config(), &mut rng)?;
    model.scaler = Scaler::fit(train.iter().map(|s| &s.session));
    model.label_scale = label_rms(train);

    let train_set = model.prepare_all(train)?;
    let test_set = model.prepare_all(test)?;
    let mut state = RmspropState::new(&model.store, cfg.rho, cfg.rms_eps);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSession> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (_, grads) = batch_step(&mut model, &batch, &mut rng)?;
            rmsprop_step(&mut model.store, &grads, &mut state, cfg.learning_rate)?;
        }
        let train_rmse = evaluate(&model, &train_set)?;
        let test_rmse = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, &test_set)?)
        };
        history.records.push(EpochRecord {
            epoch,
            train_rmse,
            test_rmse,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    history.rejected_updates = state.rejected;
    Ok((model, history))
}

/// Flat `key = value` summary of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub variant: Variant,
    pub target: Target,
    pub cohort: Cohort,
    pub seed: u64,
    pub epochs: usize,
    pub final_train_rmse: Option<f64>,
    pub final_test_rmse: Option<f64>,
    pub best_test_rmse: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl RunSummary {
    pub fn new(variant: Variant, cfg: &TrainConfig, history: &History) -> Self {
        let best = history.best();
        RunSummary {
            variant,
            target: cfg.target,
            cohort: cfg.cohort,
            seed: cfg.seed,
            epochs: history.records.len(),
            final_train_rmse: history.last().map(|r| r.train_rmse),
            final_test_rmse: history.last().and_then(|r| r.test_rmse),
            best_test_rmse: best.and_then(|r| r.test_rmse),
            best_epoch: best.map(|r| r.epoch),
        }
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_else(|| "none".into())
        }
        writeln!(f, "variant = {}", self.variant)?;
        writeln!(f, "target = {}", self.target)?;
        writeln!(f, "cohort = {}", self.cohort)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "final_train_rmse = {}", opt(&self.final_train_rmse))?;
        writeln!(f, "final_test_rmse = {}", opt(&self.final_test_rmse))?;
        writeln!(f, "best_test_rmse = {}", opt(&self.best_test_rmse))?;
        writeln!(f, "best_epoch = {}", opt(&self.best_epoch))
    }
}

pub const SWEEP_FRACTIONS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub train_sessions: usize,
    pub test_sessions: usize,
    /// Test RMSE after the last epoch.
    pub test_rmse: f64,
}

/// Retrain `variant` once per train fraction with the same seed and report
/// final test RMSE.
pub fn ratio_sweep(
    variant: Variant,
    sessions: &[LabeledSession],
    fractions: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let (train_part, test_part) = split_by_subject(sessions, fraction)?;
        if test_part.is_empty() {
            return Err(Error::Empty("test split"));
        }
        let mut c = cfg.clone();
        c.train_fraction = fraction;
        let (model, _) = train(variant, &train_part, &test_part, &c)?;
        rows.push(SweepRow {
            fraction,
            train_sessions: train_part.len(),
            test_sessions: test_part.len(),
            test_rmse: evaluate_labeled(&model, &test_part)?,
        });
        info!("sweep {variant} fraction {fraction}: test RMSE {:.4}", rows.last().expect("pushed").test_rmse);
    }
    Ok(rows)
}

/// `fraction,train_sessions,test_sessions,test_rmse`.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fraction", "train_sessions", "test_sessions", "test_rmse"])?;
    for r in rows {
        out.write_record([
            r.fraction.to_string(),
            r.train_sessions.to_string(),
            r.test_sessions.to_string(),
            r.test_rmse.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
