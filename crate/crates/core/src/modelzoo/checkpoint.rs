//! `DPMOOD1` container: magic, variant tag, string metadata and named `f64`
//! arrays, all little-endian.
//!
//! ```text
//! magic   7 bytes "DPMOOD1"
//! str     u32 length + UTF-8 bytes
//! variant str
//! meta    u32 count, then (key str, value str) pairs
//! arrays  u32 count, then (name str, u32 rank, rank x u64 dims, f64 data)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_model, CalibrationMode, Model, ModelConfig, Scaler, Variant, CALIB_PREFIX, SHARED_KEY};
use crate::diffengine::Array;
use crate::error::{Error, Result};
use crate::fusion::FUSED_WIDTH;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"DPMOOD1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: String,
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Array)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_str(&mut out, &c.variant);
    out.extend_from_slice(&(c.meta.len() as u32).to_le_bytes());
    for (k, v) in &c.meta {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    out.extend_from_slice(&(c.arrays.len() as u32).to_le_bytes());
    for (name, a) in &c.arrays {
        put_str(&mut out, name);
        out.extend_from_slice(&(a.shape().len() as u32).to_le_bytes());
        for &d in a.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in a.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

/// Parse a checkpoint, validating every length against the input size.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, expected DPMOOD1".into()));
    }
    let variant = r.str("variant")?;
    let n_meta = r.u32("metadata count")? as usize;
    let mut meta = BTreeMap::new();
    for _ in 0..n_meta {
        let k = r.str("metadata key")?;
        let v = r.str("metadata value")?;
        if meta.insert(k.clone(), v).is_some() {
            return Err(Error::Checkpoint(format!("duplicate metadata key `{k}`")));
        }
    }
    let n_arrays = r.u32("array count")? as usize;
    let mut arrays = Vec::with_capacity(n_arrays.min(r.remaining() / 8));
    for _ in 0..n_arrays {
        let name = r.str("array name")?;
        let rank = r.u32("array rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("array `{name}` has unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64("array dims")?).ok().filter(|&d| d > 0);
            let d = d.ok_or_else(|| Error::Checkpoint(format!("array `{name}` has an invalid dimension")))?;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n <= r.remaining() / 8)
                .ok_or_else(|| Error::Checkpoint(format!("array `{name}` is larger than the file")))?;
            shape.push(d);
        }
        let raw = r.take(numel * 8, "array data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push((name, Array::new(&shape, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { variant, meta, arrays })
}

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";

fn meta_f64(meta: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    meta.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("metadata `{key}` is not a number")))
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("gru_hidden".to_string(), self.config.gru_hidden.to_string());
        meta.insert("dropout".to_string(), self.config.dropout.to_string());
        meta.insert("label_scale".to_string(), self.label_scale.to_string());
        let mut arrays: Vec<(String, Array)> = self
            .store
            .iter()
            .map(|(_, name, a)| (name.to_string(), a.clone()))
            .collect();
        for branch in &self.branches {
            for (i, block) in branch.blocks.iter().enumerate() {
                let base = format!("{}.block{}.bn", branch.name, i + 1);
                arrays.push((format!("{base}{RUNNING_MEAN}"), Array::column(block.bn.running_mean.clone())));
                arrays.push((format!("{base}{RUNNING_VAR}"), Array::column(block.bn.running_var.clone())));
            }
        }
        arrays.push(("scaler.mean".into(), Array::column(self.scaler.mean.to_vec())));
        arrays.push(("scaler.std".into(), Array::column(self.scaler.std.to_vec())));
        Checkpoint {
            variant: self.variant.tag().to_string(),
            meta,
            arrays,
        }
    }

    /// Rebuild a model; every stored array must match the architecture.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Model> {
        let variant: Variant = c.variant.parse()?;
        let hidden = meta_f64(&c.meta, "gru_hidden")?;
        if !(hidden >= 1.0 && hidden <= 4096.0 && hidden.fract() == 0.0) {
            return Err(Error::Checkpoint(format!("invalid gru_hidden {hidden}")));
        }
        let config = ModelConfig {
            gru_hidden: hidden as usize,
            dropout: meta_f64(&c.meta, "dropout")?,
        };
        let label_scale = meta_f64(&c.meta, "label_scale")?;
        let subjects: Vec<&str> = c
            .arrays
            .iter()
            .filter_map(|(n, _)| n.strip_prefix(CALIB_PREFIX))
            .filter(|s| *s != SHARED_KEY)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = build_model(variant, subjects, config, &mut rng)
            .map_err(|e| Error::Checkpoint(format!("cannot rebuild {variant}: {e}")))?;
        model.label_scale = label_scale;

        let arrays: BTreeMap<&str, &Array> = c.arrays.iter().map(|(n, a)| (n.as_str(), a)).collect();
        if arrays.len() != c.arrays.len() {
            return Err(Error::Checkpoint("duplicate array names".into()));
        }
        let fetch = |name: &str, shape: &[usize]| -> Result<Array> {
            let a = arrays
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))?;
            if a.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "array `{name}` has shape {:?}, expected {shape:?}",
                    a.shape()
                )));
            }
            Ok((*a).clone())
        };
        let mut expected = 0;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let shape = model.store.get(id).shape().to_vec();
            *model.store.get_mut(id) = fetch(&name, &shape)?;
            expected += 1;
        }
        for branch in &mut model.branches {
            for (i, block) in branch.blocks.iter_mut().enumerate() {
                let base = format!("{}.block{}.bn", branch.name, i + 1);
                let ch = block.bn.channels;
                block.bn.running_mean = fetch(&format!("{base}{RUNNING_MEAN}"), &[ch, 1])?.into_data();
                block.bn.running_var = fetch(&format!("{base}{RUNNING_VAR}"), &[ch, 1])?.into_data();
                expected += 2;
            }
        }
        let mean = fetch("scaler.mean", &[FUSED_WIDTH, 1])?.into_data();
        let std = fetch("scaler.std", &[FUSED_WIDTH, 1])?.into_data();
        model.scaler = Scaler {
            mean: mean.try_into().expect("length checked"),
            std: std.try_into().expect("length checked"),
        };
        expected += 2;
        if expected != arrays.len() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected arrays for {variant}",
                arrays.len() - expected
            )));
        }
        if model.calibration.mode == CalibrationMode::PerSubject && model.calibration.entries.is_empty() {
            return Err(Error::Checkpoint("per-subject model without calibration".into()));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(&self.to_checkpoint())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        Model::from_checkpoint(&decode_checkpoint(bytes)?)
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Model::from_bytes(&bytes)
    }
}
