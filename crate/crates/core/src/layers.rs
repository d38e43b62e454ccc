//! Network building blocks: strided 1-D convolution block with batch
//! normalization, GRU and bidirectional GRU, a vanilla tanh RNN cell,
//! affine output layer and inverted dropout.
//!
//! Sequences are laid out channels-first, `[channels, time]`, so a GRU input
//! sequence is `[D_in, T]` and a hidden state is a column `[H, 1]`.

use rand::Rng;

use crate::diffengine::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Uniform in `±1/sqrt(fan_in)`.
pub fn init_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Array {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// `floor((l - k) / d) + 1`, or `None` when `l < k`.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel && stride > 0).then(|| (len - kernel) / stride + 1)
}

/// Strided 1-D convolution, weights `[m, n, k]`, bias `[m, 1]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid(format!(
                "conv {name}: channels, kernel and stride must be >= 1"
            )));
        }
        let fan_in = in_channels * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            init_uniform(rng, &[out_channels, in_channels, kernel], fan_in),
        );
        let bias = store.add(
            format!("{name}.bias"),
            init_uniform(rng, &[out_channels, 1], fan_in),
        );
        Ok(Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias,
        })
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        conv_output_len(len, self.kernel, self.stride).ok_or(Error::TooShort {
            len,
            min: self.kernel,
        })
    }

    /// Convolution plus bias, `[n, l] -> [m, floor((l-k)/d)+1]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let s = tape.shape(input);
        if s.len() != 2 || s[0] != self.in_channels {
            return Err(Error::Shape {
                op: "conv_block",
                lhs: s.to_vec(),
                rhs: vec![self.in_channels],
            });
        }
        self.output_len(s[1])?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.conv1d(input, w, self.stride)?;
        tape.add(y, b)
    }
}

/// Per-channel statistics of one train-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (population variance when only one position).
    pub var: Vec<f64>,
    pub count: usize,
}

/// Batch normalization over the temporal axis with a learned per-channel
/// affine map. Running statistics are kept outside the tape.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let scale = store.add(format!("{name}.scale"), Array::full(&[channels, 1], 1.0));
        let shift = store.add(format!("{name}.shift"), Array::zeros(&[channels, 1]));
        BatchNorm1d {
            channels,
            scale,
            shift,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// Normalize every `[m, l_i]` input. In train mode the statistics are
    /// pooled over the time axis of all inputs together and returned so the
    /// caller can fold them into the running estimates.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        mode: Mode,
    ) -> Result<(Vec<Var>, Option<BatchStats>)> {
        if inputs.is_empty() {
            return Err(Error::Empty("batch norm input"));
        }
        for &x in inputs {
            let s = tape.shape(x);
            if s.len() != 2 || s[0] != self.channels {
                return Err(Error::Shape {
                    op: "batch_norm",
                    lhs: s.to_vec(),
                    rhs: vec![self.channels],
                });
            }
        }
        let scale = tape.param(store, self.scale);
        let shift = tape.param(store, self.shift);
        match mode {
            Mode::Eval => {
                let mean = tape.constant(Array::column(self.running_mean.clone()));
                let inv = tape.constant(Array::column(
                    self.running_var
                        .iter()
                        .map(|v| 1.0 / (v + self.eps).sqrt())
                        .collect(),
                ));
                let mut out = Vec::with_capacity(inputs.len());
                for &x in inputs {
                    let y = tape.sub(x, mean)?;
                    let y = tape.mul(y, inv)?;
                    let y = tape.mul(y, scale)?;
                    out.push(tape.add(y, shift)?);
                }
                Ok((out, None))
            }
            Mode::Train => {
                let lens: Vec<usize> = inputs.iter().map(|&x| tape.shape(x)[1]).collect();
                let joined = if inputs.len() == 1 {
                    inputs[0]
                } else {
                    tape.concat(inputs, 1)?
                };
                let mean = tape.mean_cols(joined)?;
                let centered = tape.sub(joined, mean)?;
                let sq = tape.square(centered);
                let var = tape.mean_cols(sq)?;
                let var_eps = tape.add_scalar(var, self.eps);
                let inv = tape.powf(var_eps, -0.5);
                let normed = tape.mul(centered, inv)?;
                let y = tape.mul(normed, scale)?;
                let y = tape.add(y, shift)?;

                let n: usize = lens.iter().sum();
                let stats = BatchStats {
                    mean: tape.value(mean).data().to_vec(),
                    var: tape
                        .value(var)
                        .data()
                        .iter()
                        .map(|v| if n > 1 { v * n as f64 / (n - 1) as f64 } else { *v })
                        .collect(),
                    count: n,
                };
                let out = if inputs.len() == 1 {
                    vec![y]
                } else {
                    let mut out = Vec::with_capacity(inputs.len());
                    let mut start = 0;
                    for len in lens {
                        out.push(tape.slice(y, 1, start, len)?);
                        start += len;
                    }
                    out
                };
                Ok((out, Some(stats)))
            }
        }
    }

    /// Exponential moving average update of the running statistics.
    pub fn apply_stats(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Convolution, batch normalization, relu.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv = Conv1d::new(
            store,
            &format!("{name}.conv"),
            in_channels,
            out_channels,
            kernel,
            stride,
            rng,
        )?;
        let bn = BatchNorm1d::new(store, &format!("{name}.bn"), out_channels);
        Ok(ConvBlock { conv, bn })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        mode: Mode,
    ) -> Result<(Vec<Var>, Option<BatchStats>)> {
        let conv = inputs
            .iter()
            .map(|&x| self.conv.forward(tape, store, x))
            .collect::<Result<Vec<_>>>()?;
        let (normed, stats) = self.bn.forward(tape, store, &conv, mode)?;
        Ok((normed.into_iter().map(|y| tape.relu(y)).collect(), stats))
    }

    /// Single-sequence convenience wrapper.
    pub fn forward_one(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (out, stats) = self.forward(tape, store, &[input], mode)?;
        Ok((out[0], stats))
    }
}

/// GRU cell weights. The initial hidden state is fixed at zero.
#[derive(Clone, Debug)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_r: ParamId,
    pub w_z: ParamId,
    pub w_h: ParamId,
    pub u_r: ParamId,
    pub u_z: ParamId,
    pub u_h: ParamId,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = |suffix: &str, cols: usize, fan_in: usize| {
            store.add(
                format!("{name}.{suffix}"),
                init_uniform(rng, &[hidden, cols], fan_in),
            )
        };
        let w_r = w("w_r", input_dim, input_dim);
        let w_z = w("w_z", input_dim, input_dim);
        let w_h = w("w_h", input_dim, input_dim);
        let u_r = w("u_r", hidden, hidden);
        let u_z = w("u_z", hidden, hidden);
        let u_h = w("u_h", hidden, hidden);
        Gru {
            input_dim,
            hidden,
            w_r,
            w_z,
            w_h,
            u_r,
            u_z,
            u_h,
        }
    }

    fn check(&self, tape: &Tape, x: Var, rows: usize, cols: Option<usize>) -> Result<()> {
        let s = tape.shape(x);
        let ok = s.len() == 2 && s[0] == rows && cols.is_none_or(|c| s[1] == c);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                op: "gru",
                lhs: s.to_vec(),
                rhs: vec![rows, cols.unwrap_or(0)],
            })
        }
    }

    pub fn initial_state(&self, tape: &mut Tape) -> Var {
        tape.constant(Array::zeros(&[self.hidden, 1]))
    }

    /// One step:
    /// `r = σ(W_r x + U_r h)`, `z = σ(W_z x + U_z h)`,
    /// `h~ = tanh(W x + U (r ⊙ h))`, `h' = z ⊙ h + (1 - z) ⊙ h~`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        self.check(tape, x, self.input_dim, Some(1))?;
        let wr = tape.param(store, self.w_r);
        let wz = tape.param(store, self.w_z);
        let wh = tape.param(store, self.w_h);
        let xr = tape.matmul(wr, x)?;
        let xz = tape.matmul(wz, x)?;
        let xh = tape.matmul(wh, x)?;
        self.step_projected(tape, store, xr, xz, xh, h)
    }

    fn step_projected(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xr: Var,
        xz: Var,
        xh: Var,
        h: Var,
    ) -> Result<Var> {
        let batch = tape.shape(xr)[1];
        self.check(tape, h, self.hidden, Some(batch))?;
        let ur = tape.param(store, self.u_r);
        let uz = tape.param(store, self.u_z);
        let uh = tape.param(store, self.u_h);

        let a = tape.matmul(ur, h)?;
        let a = tape.add(xr, a)?;
        let r = tape.sigmoid(a);

        let a = tape.matmul(uz, h)?;
        let a = tape.add(xz, a)?;
        let z = tape.sigmoid(a);

        let rh = tape.mul(r, h)?;
        let a = tape.matmul(uh, rh)?;
        let a = tape.add(xh, a)?;
        let cand = tape.tanh(a);

        // z ⊙ h + (1 - z) ⊙ h~  ==  h~ + z ⊙ (h - h~)
        let diff = tape.sub(h, cand)?;
        let gated = tape.mul(z, diff)?;
        tape.add(cand, gated)
    }

    /// Final hidden state after consuming the columns of `seq [D_in, T]`,
    /// in reverse column order when `reverse` is set.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, seq: Var, reverse: bool) -> Result<Var> {
        self.check(tape, seq, self.input_dim, None)?;
        let steps = tape.shape(seq)[1];
        let wr = tape.param(store, self.w_r);
        let wz = tape.param(store, self.w_z);
        let wh = tape.param(store, self.w_h);
        let pr = tape.matmul(wr, seq)?;
        let pz = tape.matmul(wz, seq)?;
        let ph = tape.matmul(wh, seq)?;
        let mut h = self.initial_state(tape);
        for i in 0..steps {
            let t = if reverse { steps - 1 - i } else { i };
            let xr = tape.slice(pr, 1, t, 1)?;
            let xz = tape.slice(pz, 1, t, 1)?;
            let xh = tape.slice(ph, 1, t, 1)?;
            h = self.step_projected(tape, store, xr, xz, xh, h)?;
        }
        Ok(h)
    }
}

/// Final hidden states of several sequences processed side by side, one
/// column per sequence. `packed` is `[D_in, sum of lengths]` with sequence
/// `i` occupying columns `offsets[i]..offsets[i] + lens[i]`.
pub struct PackedSeqs<'a> {
    pub packed: Var,
    pub offsets: &'a [usize],
    pub lens: &'a [usize],
    /// Sequence indices by decreasing length (stable).
    pub order: &'a [usize],
}

impl Gru {
    /// Batched [`Gru::run`]: returns `[H, B]` with columns in sequence order.
    /// At step `t` only the sequences longer than `t` advance, so each column
    /// equals the single-sequence result exactly.
    pub fn run_batch(&self, tape: &mut Tape, store: &ParamStore, seqs: &PackedSeqs, reverse: bool) -> Result<Var> {
        self.check(tape, seqs.packed, self.input_dim, None)?;
        let b = seqs.lens.len();
        let wr = tape.param(store, self.w_r);
        let wz = tape.param(store, self.w_z);
        let wh = tape.param(store, self.w_h);
        let pr = tape.matmul(wr, seqs.packed)?;
        let pz = tape.matmul(wz, seqs.packed)?;
        let ph = tape.matmul(wh, seqs.packed)?;
        let max_len = seqs.order.first().map_or(0, |&i| seqs.lens[i]);
        let mut h = tape.constant(Array::zeros(&[self.hidden, b]));
        let mut active = b;
        // finished columns, in the order they leave the batch
        let mut done: Vec<Var> = Vec::new();
        let mut done_order: Vec<usize> = Vec::with_capacity(b);
        let mut cols = Vec::with_capacity(b);
        for t in 0..max_len {
            let still = seqs.order[..active].iter().take_while(|&&i| seqs.lens[i] > t).count();
            if still < active {
                done.push(tape.slice(h, 1, still, active - still)?);
                done_order.extend_from_slice(&seqs.order[still..active]);
                h = tape.slice(h, 1, 0, still)?;
                active = still;
            }
            cols.clear();
            cols.extend(seqs.order[..active].iter().map(|&i| {
                let step = if reverse { seqs.lens[i] - 1 - t } else { t };
                seqs.offsets[i] + step
            }));
            let xr = tape.gather_cols(pr, &cols)?;
            let xz = tape.gather_cols(pz, &cols)?;
            let xh = tape.gather_cols(ph, &cols)?;
            h = self.step_projected(tape, store, xr, xz, xh, h)?;
        }
        if active > 0 {
            done.push(h);
            done_order.extend_from_slice(&seqs.order[..active]);
        }
        // `done_order[k]` is the sequence held in column `k` of the concatenation
        let mut position = vec![0; b];
        for (col, &seq) in done_order.iter().enumerate() {
            position[seq] = col;
        }
        let all = if done.len() == 1 { done[0] } else { tape.concat(&done, 1)? };
        tape.gather_cols(all, &position)
    }
}

/// Batched [`bigru_forward`]: `[2H, B]`, one column per sequence, each equal
/// to the single-sequence result.
pub fn bigru_forward_batch(
    tape: &mut Tape,
    store: &ParamStore,
    fwd: &Gru,
    bwd: &Gru,
    seqs: &[Var],
) -> Result<Var> {
    if seqs.is_empty() {
        return Err(Error::Empty("bidirectional GRU batch"));
    }
    let mut lens = Vec::with_capacity(seqs.len());
    let mut offsets = Vec::with_capacity(seqs.len());
    let mut total = 0;
    for &s in seqs {
        let sh = tape.shape(s);
        if sh.len() != 2 || sh[1] == 0 {
            return Err(Error::Empty("bidirectional GRU sequence"));
        }
        offsets.push(total);
        lens.push(sh[1]);
        total += sh[1];
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by(|&a, &b| lens[b].cmp(&lens[a]));
    let packed = if seqs.len() == 1 { seqs[0] } else { tape.concat(seqs, 1)? };
    let p = PackedSeqs {
        packed,
        offsets: &offsets,
        lens: &lens,
        order: &order,
    };
    let hf = fwd.run_batch(tape, store, &p, false)?;
    let hb = bwd.run_batch(tape, store, &p, true)?;
    tape.concat(&[hf, hb], 0)
}

/// Concatenation `[2H, 1]` of the last hidden states of a forward pass over
/// `seq` and a forward pass over the reversed sequence.
pub fn bigru_forward(
    tape: &mut Tape,
    store: &ParamStore,
    fwd: &Gru,
    bwd: &Gru,
    seq: Var,
) -> Result<Var> {
    let s = tape.shape(seq);
    if s.len() != 2 || s[1] == 0 {
        return Err(Error::Empty("bidirectional GRU sequence"));
    }
    let hf = fwd.run(tape, store, seq, false)?;
    let hb = bwd.run(tape, store, seq, true)?;
    tape.concat(&[hf, hb], 0)
}

/// `h' = tanh(W x + U h + b)`.
#[derive(Clone, Debug)]
pub struct RnnCell {
    pub input_dim: usize,
    pub hidden: usize,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

impl RnnCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init_uniform(rng, &[hidden, input_dim], input_dim));
        let u = store.add(format!("{name}.u"), init_uniform(rng, &[hidden, hidden], hidden));
        let b = store.add(format!("{name}.b"), init_uniform(rng, &[hidden, 1], hidden));
        RnnCell {
            input_dim,
            hidden,
            w,
            u,
            b,
        }
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let u = tape.param(store, self.u);
        let b = tape.param(store, self.b);
        let a = tape.matmul(w, x)?;
        let c = tape.matmul(u, h)?;
        let a = tape.add(a, c)?;
        let a = tape.add(a, b)?;
        Ok(tape.tanh(a))
    }
}

/// Affine map `[in, 1] -> [out, 1]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_uniform(rng, &[out_dim, in_dim], in_dim),
        );
        let bias = store.add(format!("{name}.bias"), init_uniform(rng, &[out_dim, 1], in_dim));
        Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(w, x)?;
        tape.add(y, b)
    }
}

/// Inverted dropout: in train mode each entry is zeroed with probability
/// `ratio` and survivors are scaled by `1 / (1 - ratio)`; identity otherwise.
pub fn dropout(
    tape: &mut Tape,
    x: Var,
    ratio: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!("dropout ratio must be in [0, 1), got {ratio}")));
    }
    if mode == Mode::Eval || ratio == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - ratio);
    let mask = Array::from_fn(tape.shape(x), |_| {
        if rng.random::<f64>() < ratio {
            0.0
        } else {
            keep
        }
    });
    let m = tape.constant(mask);
    tape.mul(x, m)
}
