//! The nine model variants: dpMood (early fusion, conv blocks, BiGRU and a
//! per-subject sine calibration), its ablations and the late-fusion
//! baselines.

mod calibration;
mod checkpoint;
mod gradsuite;
mod input;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datamodel::LabeledSession;
use crate::diffengine::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{FusionKind, ACCEL_WIDTH, FUSED_WIDTH, KEYPRESS_WIDTH};
use crate::layers::{bigru_forward_batch, conv_output_len, dropout, BatchStats, ConvBlock, Gru, Linear, Mode};

pub use calibration::{calibrate, calibrate_cols, calibrate_var, CalibrationParams};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use gradsuite::{gradient_suite, model_grad_check, GradSuiteEntry};
pub use input::{pad_to, prepare_session, PreparedSession, Scaler, SessionInput};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
/// Kernels per block on the dpMood path.
pub const CONV_CHANNELS: [usize; 2] = [10, 20];
/// Kernels per block on the CNN baseline.
pub const CNN_CHANNELS: [usize; 3] = [10, 20, 30];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Rnn,
    Cnn,
    CnnRnn,
    CnnRnnCr,
    CnnRnnPsCr,
    CnnRnnFillNa,
    CnnRnnDropNa,
    DpMoodFillNa,
    DpMoodDropNa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CalibrationMode {
    None,
    Shared,
    PerSubject,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Rnn,
        Variant::Cnn,
        Variant::CnnRnn,
        Variant::CnnRnnCr,
        Variant::CnnRnnPsCr,
        Variant::CnnRnnFillNa,
        Variant::CnnRnnDropNa,
        Variant::DpMoodFillNa,
        Variant::DpMoodDropNa,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Rnn => "RNN",
            Variant::Cnn => "CNN",
            Variant::CnnRnn => "CNNRNN",
            Variant::CnnRnnCr => "CNNRNN-Cr",
            Variant::CnnRnnPsCr => "CNNRNN-PsCr",
            Variant::CnnRnnFillNa => "CNNRNN-fillna",
            Variant::CnnRnnDropNa => "CNNRNN-dropna",
            Variant::DpMoodFillNa => "dpMood-fillna",
            Variant::DpMoodDropNa => "dpMood-dropna",
        }
    }

    pub fn fusion(self) -> FusionKind {
        match self {
            Variant::CnnRnnFillNa | Variant::DpMoodFillNa => FusionKind::FillNa,
            Variant::CnnRnnDropNa | Variant::DpMoodDropNa => FusionKind::DropNa,
            _ => FusionKind::Late,
        }
    }

    pub fn calibration(self) -> CalibrationMode {
        match self {
            Variant::CnnRnnCr => CalibrationMode::Shared,
            Variant::CnnRnnPsCr | Variant::DpMoodFillNa | Variant::DpMoodDropNa => CalibrationMode::PerSubject,
            _ => CalibrationMode::None,
        }
    }

    fn conv_channels(self) -> &'static [usize] {
        match self {
            Variant::Rnn => &[],
            Variant::Cnn => &CNN_CHANNELS,
            _ => &CONV_CHANNELS,
        }
    }

    fn has_gru(self) -> bool {
        self != Variant::Cnn
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Size settings shared by every variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub gru_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gru_hidden: 20,
            dropout: 0.1,
        }
    }
}

/// One input stream's network: conv blocks, then either a BiGRU or a
/// per-channel max over time.
#[derive(Clone, Debug)]
pub struct Branch {
    pub name: String,
    pub blocks: Vec<ConvBlock>,
    pub gru: Option<(Gru, Gru)>,
}

impl Branch {
    fn build(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        channels: &[usize],
        gru_hidden: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(channels.len());
        let mut c_in = in_channels;
        for (i, &c) in channels.iter().enumerate() {
            blocks.push(ConvBlock::new(store, &format!("{name}.block{}", i + 1), c_in, c, KERNEL, STRIDE, rng)?);
            c_in = c;
        }
        let gru = gru_hidden.map(|h| {
            (
                Gru::new(store, &format!("{name}.gru_fwd"), c_in, h, rng),
                Gru::new(store, &format!("{name}.gru_bwd"), c_in, h, rng),
            )
        });
        Ok(Branch {
            name: name.to_string(),
            blocks,
            gru,
        })
    }

    pub fn output_dim(&self) -> usize {
        match &self.gru {
            Some((f, _)) => 2 * f.hidden,
            None => self.blocks.last().map_or(0, |b| b.conv.out_channels),
        }
    }

    /// Shortest input that survives every conv block.
    pub fn min_len(&self) -> usize {
        self.blocks.iter().fold(1, |l, _| (l - 1) * STRIDE + KERNEL)
    }

    /// Temporal length after the conv blocks.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        self.blocks
            .iter()
            .try_fold(len, |l, _| conv_output_len(l, KERNEL, STRIDE))
    }

    /// `[output_dim, B]`, one column per input.
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: Vec<Var>,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let mut xs = inputs;
        for block in &self.blocks {
            let (ys, s) = block.forward(tape, store, &xs, mode)?;
            stats.extend(s);
            xs = ys;
        }
        match &self.gru {
            Some((f, b)) => bigru_forward_batch(tape, store, f, b, &xs),
            None => {
                let cols = xs.into_iter().map(|x| tape.max_cols(x)).collect::<Result<Vec<_>>>()?;
                if cols.len() == 1 {
                    Ok(cols[0])
                } else {
                    tape.concat(&cols, 1)
                }
            }
        }
    }
}

/// Calibration parameters per subject, or a single shared set.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationTable {
    pub mode: CalibrationMode,
    /// Subject id to parameter; the shared set is keyed by [`SHARED_KEY`].
    pub entries: BTreeMap<String, ParamId>,
}

pub const SHARED_KEY: &str = "*";
const CALIB_PREFIX: &str = "calib.";

impl CalibrationTable {
    pub fn learned(&self, store: &ParamStore) -> BTreeMap<String, CalibrationParams> {
        self.entries
            .iter()
            .map(|(k, &id)| (k.clone(), CalibrationParams::from_array(store.get(id))))
            .collect()
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str).filter(|k| *k != SHARED_KEY)
    }
}

/// Where a forward pass takes its calibration from.
enum CalibSource {
    None,
    Param(ParamId),
    Fallback(Array),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub variant: Variant,
    pub config: ModelConfig,
    pub store: ParamStore,
    pub branches: Vec<Branch>,
    pub head: Linear,
    pub calibration: CalibrationTable,
    pub scaler: Scaler,
    /// Fixed multiplier on the head output so the network works at unit
    /// scale while predicting raw rating points.
    pub label_scale: f64,
}

/// Create a model with freshly initialized weights; per-subject variants get
/// one calibration entry per listed subject.
pub fn build_model<'a>(
    variant: Variant,
    subjects: impl IntoIterator<Item = &'a str>,
    config: ModelConfig,
    rng: &mut impl Rng,
) -> Result<Model> {
    if config.gru_hidden == 0 {
        return Err(Error::invalid("gru_hidden must be >= 1"));
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::invalid(format!("dropout must be in [0, 1), got {}", config.dropout)));
    }
    let mut store = ParamStore::new();
    let hidden = variant.has_gru().then_some(config.gru_hidden);
    let channels = variant.conv_channels();
    let branches = match variant.fusion() {
        FusionKind::Late => vec![
            Branch::build(&mut store, "key", KEYPRESS_WIDTH, channels, hidden, rng)?,
            Branch::build(&mut store, "acc", ACCEL_WIDTH, channels, hidden, rng)?,
        ],
        _ => vec![Branch::build(&mut store, "fused", FUSED_WIDTH, channels, hidden, rng)?],
    };
    let feat: usize = branches.iter().map(Branch::output_dim).sum();
    let head = Linear::new(&mut store, "head", feat, 1, rng);

    let mode = variant.calibration();
    let mut entries = BTreeMap::new();
    let init = CalibrationParams::default().to_array();
    match mode {
        CalibrationMode::None => {}
        CalibrationMode::Shared => {
            entries.insert(SHARED_KEY.to_string(), store.add(format!("{CALIB_PREFIX}{SHARED_KEY}"), init));
        }
        CalibrationMode::PerSubject => {
            let unique: BTreeSet<&str> = subjects.into_iter().collect();
            if unique.is_empty() {
                return Err(Error::invalid("per-subject calibration needs at least one subject"));
            }
            for s in unique {
                entries.insert(s.to_string(), store.add(format!("{CALIB_PREFIX}{s}"), init.clone()));
            }
        }
    }
    Ok(Model {
        variant,
        config,
        store,
        branches,
        head,
        calibration: CalibrationTable { mode, entries },
        scaler: Scaler::default(),
        label_scale: 1.0,
    })
}

/// Parameter counts grouped by component.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Census {
    pub conv: usize,
    pub batch_norm: usize,
    pub gru: usize,
    pub head: usize,
    pub calibration: usize,
}

impl Census {
    pub fn total(&self) -> usize {
        self.conv + self.batch_norm + self.gru + self.head + self.calibration
    }
}

impl Model {
    pub fn fusion(&self) -> FusionKind {
        self.variant.fusion()
    }

    /// Inputs shorter than this are zero padded on the right.
    pub fn min_input_len(&self) -> usize {
        self.branches.iter().map(Branch::min_len).max().unwrap_or(1)
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for (_, name, a) in self.store.iter() {
            let slot = if name.starts_with(CALIB_PREFIX) {
                &mut c.calibration
            } else if name.starts_with("head.") {
                &mut c.head
            } else if name.contains(".gru_") {
                &mut c.gru
            } else if name.contains(".bn.") {
                &mut c.batch_norm
            } else {
                &mut c.conv
            };
            *slot += a.len();
        }
        c
    }

    pub fn prepare(&self, session: &LabeledSession) -> Result<PreparedSession> {
        prepare_session(session, &self.scaler, self.fusion(), self.min_input_len())
    }

    /// [`Model::prepare`] over many sessions, in input order.
    pub fn prepare_all(&self, sessions: &[LabeledSession]) -> Result<Vec<PreparedSession>> {
        sessions.par_iter().map(|s| self.prepare(s)).collect()
    }

    /// Mean of all per-subject calibration vectors.
    pub fn fallback_calibration(&self) -> Array {
        self.fallback_from(&self.store)
    }

    fn fallback_from(&self, store: &ParamStore) -> Array {
        let n = self.calibration.entries.len().max(1) as f64;
        let mut acc = vec![0.0; 4];
        for &id in self.calibration.entries.values() {
            for (a, v) in acc.iter_mut().zip(store.get(id).data()) {
                *a += v / n;
            }
        }
        Array::column(acc)
    }

    fn calib_source(&self, store: &ParamStore, subject: &str) -> CalibSource {
        match self.calibration.mode {
            CalibrationMode::None => CalibSource::None,
            CalibrationMode::Shared => CalibSource::Param(self.calibration.entries[SHARED_KEY]),
            CalibrationMode::PerSubject => match self.calibration.entries.get(subject) {
                Some(&id) => CalibSource::Param(id),
                None => CalibSource::Fallback(self.fallback_from(store)),
            },
        }
    }

    /// Subjects a per-subject model has no calibration for.
    pub fn unseen_subjects<'a>(&self, sessions: impl IntoIterator<Item = &'a PreparedSession>) -> BTreeSet<String> {
        if self.calibration.mode != CalibrationMode::PerSubject {
            return BTreeSet::new();
        }
        sessions
            .into_iter()
            .filter(|s| !self.calibration.entries.contains_key(&s.subject_id))
            .map(|s| s.subject_id.clone())
            .collect()
    }

    /// Forward pass over a batch on one tape, giving a `[1, B]` row of
    /// predictions. In train mode batch normalization pools its statistics
    /// over the whole batch; they are returned in block order for
    /// [`Model::apply_batch_stats`]. In eval mode each column depends only
    /// on its own session.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        batch: &[&PreparedSession],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Var, Vec<BatchStats>)> {
        self.forward_batch_with(tape, &self.store, batch, mode, rng)
    }

    /// [`Model::forward_batch`] reading weights from `store`, which must
    /// have this model's layout.
    pub fn forward_batch_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[&PreparedSession],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Var, Vec<BatchStats>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut stats = Vec::new();
        let mut features = Vec::with_capacity(self.branches.len());
        for (b, branch) in self.branches.iter().enumerate() {
            let inputs = batch
                .iter()
                .map(|s| {
                    let arrays = s.input.branches();
                    let a = arrays.get(b).ok_or_else(|| {
                        Error::invalid(format!("{} expects {} input views", self.variant, self.branches.len()))
                    })?;
                    Ok(tape.constant((*a).clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            features.push(branch.forward(tape, store, inputs, mode, &mut stats)?);
        }
        let joined = if features.len() == 1 { features[0] } else { tape.concat(&features, 0)? };
        let dropped = dropout(tape, joined, self.config.dropout, mode, rng)?;
        let x = self.head.forward(tape, store, dropped)?;
        let x = tape.scale(x, self.label_scale);
        if self.calibration.mode == CalibrationMode::None {
            return Ok((x, stats));
        }
        // distinct calibration columns, then one gather to [4, B]
        let mut columns: Vec<Var> = Vec::new();
        let mut seen: BTreeMap<Option<ParamId>, usize> = BTreeMap::new();
        let mut index = Vec::with_capacity(batch.len());
        for s in batch {
            let (key, source) = match self.calib_source(store, &s.subject_id) {
                CalibSource::Param(id) => (Some(id), CalibSource::Param(id)),
                other => (None, other),
            };
            let col = match seen.get(&key) {
                Some(&c) => c,
                None => {
                    let v = match source {
                        CalibSource::Param(id) => tape.param(store, id),
                        CalibSource::Fallback(a) => tape.constant(a),
                        CalibSource::None => unreachable!("calibrated model"),
                    };
                    columns.push(v);
                    seen.insert(key, columns.len() - 1);
                    columns.len() - 1
                }
            };
            index.push(col);
        }
        let table = if columns.len() == 1 { columns[0] } else { tape.concat(&columns, 1)? };
        let params = tape.gather_cols(table, &index)?;
        let t0: Vec<f64> = batch.iter().map(|s| s.t0_hours).collect();
        Ok((calibrate_cols(tape, x, &t0, params)?, stats))
    }

    /// Fold train-mode statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        let blocks = self.branches.iter_mut().flat_map(|b| b.blocks.iter_mut());
        for (block, s) in blocks.zip(stats) {
            block.bn.apply_stats(s);
        }
    }

    /// Inference-mode prediction for one session.
    pub fn predict_one(&self, session: &PreparedSession) -> Result<f64> {
        Ok(self.predict_chunk(&[session])?[0])
    }

    fn predict_chunk(&self, sessions: &[&PreparedSession]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        // eval mode never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (p, _) = self.forward_batch(&mut tape, sessions, Mode::Eval, &mut rng)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Inference-mode predictions in input order. Sessions are evaluated in
    /// parallel chunks of [`PREDICT_CHUNK`]; the result does not depend on
    /// the chunking. Subjects without a calibration entry use the mean
    /// entry, with a warning.
    pub fn predict(&self, sessions: &[PreparedSession]) -> Result<Vec<f64>> {
        let unseen = self.unseen_subjects(sessions);
        if !unseen.is_empty() {
            warn!(
                "no calibration learned for subject(s) {}; using the mean calibration",
                unseen.into_iter().collect::<Vec<_>>().join(", ")
            );
        }
        let refs: Vec<&PreparedSession> = sessions.iter().collect();
        let chunks = refs
            .par_chunks(PREDICT_CHUNK)
            .map(|c| self.predict_chunk(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.concat())
    }
}

/// Sessions per tape in [`Model::predict`].
pub const PREDICT_CHUNK: usize = 64;
