//! Recurrent language models used as frozen domain priors and as external
//! scorers for perplexity.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::batch_iter;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{lstm_step, LstmParams, LstmVars, Sequence, BOS, EOS, PAD};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl LmConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
        }
    }
}

/// Single-layer LSTM language model.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub config: LmConfig,
    /// `[V, E]`
    pub embed: Tensor,
    pub lstm: LstmParams,
    /// `[H, V]`
    pub out_w: Tensor,
    pub out_b: Tensor,
    /// Set once training ends; frozen models are bound as constants.
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LmVars {
    pub embed: Var,
    pub lstm: LstmVars,
    pub out_w: Var,
    pub out_b: Var,
    pub hidden_dim: usize,
}

impl LmParams {
    pub fn init(config: LmConfig, rng: &mut Rng) -> Self {
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let embed = Tensor::new(vec![v, e], (0..v * e).map(|_| rng.normal()).collect()).expect("positive extents");
        let lstm = LstmParams::init(e, h, rng);
        let s = 1.0 / math::sqrt(h as f64);
        Self {
            config,
            embed,
            lstm,
            out_w: Tensor::uniform(vec![h, v], s, rng),
            out_b: Tensor::uniform(vec![v], s, rng),
            frozen: false,
        }
    }

    pub fn zeros(config: LmConfig) -> Self {
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        Self {
            config,
            embed: Tensor::zeros(vec![v, e]),
            lstm: LstmParams::zeros(e, h),
            out_w: Tensor::zeros(vec![h, v]),
            out_b: Tensor::zeros(vec![v]),
            frozen: false,
        }
    }

    /// Binds parameters; frozen models never receive gradients.
    pub fn bind(&self, tape: &mut Tape) -> LmVars {
        let trainable = !self.frozen;
        LmVars {
            embed: tape.leaf(&self.embed, trainable),
            lstm: self.lstm.bind(tape, trainable),
            out_w: tape.leaf(&self.out_w, trainable),
            out_b: tape.leaf(&self.out_b, trainable),
            hidden_dim: self.config.hidden_dim,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![(String::from("embed"), &self.embed)];
        self.lstm.named("lstm", &mut out);
        out.push((String::from("out_w"), &self.out_w));
        out.push((String::from("out_b"), &self.out_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed];
        self.lstm.tensors_mut(&mut out);
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    /// Order-sensitive FNV-1a digest of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.named() {
            for &x in t.data() {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }
}

impl LmVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embed];
        out.extend(self.lstm.vars());
        out.extend([self.out_w, self.out_b]);
        out
    }
}

/// Sequences scored by a language model.
#[derive(Debug, Clone, Copy)]
pub enum LmInput<'a> {
    /// Token ids without EOS; EOS is scored after each row.
    Ids(&'a [&'a [usize]]),
    /// Per-step `[B, V]` one-hot rows and the number of scored steps per row.
    OneHot { steps: &'a [Var], lens: &'a [usize] },
}

/// `log p(seq)` per row as `[B]`. One-hot inputs keep the score
/// differentiable with respect to the rows themselves.
pub fn lm_log_prob_batch(tape: &mut Tape, lm: &LmVars, input: LmInput<'_>) -> Result<Var> {
    let (b, steps) = match input {
        LmInput::Ids(ids) => (ids.len(), ids.iter().map(|s| s.len()).max().unwrap_or(0) + 1),
        LmInput::OneHot { steps, lens } => {
            if steps.is_empty() || lens.iter().any(|&n| n > steps.len()) {
                return Err(Error::Empty("lm input steps"));
            }
            (lens.len(), *lens.iter().max().unwrap_or(&0))
        }
    };
    if b == 0 {
        return Err(Error::Empty("lm batch"));
    }
    let hd = lm.hidden_dim;
    let mut h = tape.input(vec![b, hd], vec![0.0; b * hd])?;
    let mut c = h;
    let mut x = tape.embedding(lm.embed, &vec![BOS; b])?;
    let mut total: Option<Var> = None;
    for t in 0..steps {
        let (hn, cn) = lstm_step(tape, &lm.lstm, x, h, c)?;
        h = hn;
        c = cn;
        let logits = tape.affine(h, lm.out_w, lm.out_b)?;
        let term = match input {
            LmInput::Ids(ids) => {
                let mut targets = Vec::with_capacity(b);
                let mut weights = Vec::with_capacity(b);
                for s in ids {
                    let (id, w) = match t.cmp(&s.len()) {
                        core::cmp::Ordering::Less => (s[t], 1.0),
                        core::cmp::Ordering::Equal => (EOS, 1.0),
                        core::cmp::Ordering::Greater => (PAD, 0.0),
                    };
                    targets.push(id);
                    weights.push(w);
                }
                let nll = tape.cross_entropy(logits, &targets, &weights)?;
                if t + 1 < steps {
                    x = tape.embedding(lm.embed, &targets)?;
                }
                tape.scale(nll, -1.0)?
            }
            LmInput::OneHot { steps: ys, lens } => {
                let lsm = tape.log_softmax(logits)?;
                let picked = tape.mul(ys[t], lsm)?;
                let per_row = tape.sum_cols(picked)?;
                let mask = tape.input(vec![b], lens.iter().map(|&n| if t < n { 1.0 } else { 0.0 }).collect())?;
                if t + 1 < steps {
                    x = tape.matmul(ys[t], lm.embed)?;
                }
                tape.mul(per_row, mask)?
            }
        };
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one step"))
}

/// `log p(seq)` including EOS, as a `[1]` tape value.
pub fn lm_log_prob(tape: &mut Tape, lm: &LmVars, seq: &Sequence) -> Result<Var> {
    let s: [&[usize]; 1] = [&seq.ids];
    lm_log_prob_batch(tape, lm, LmInput::Ids(&s))
}

/// Log-probabilities of a batch of id sequences as plain values.
pub fn score_batch(lm: &LmParams, seqs: &[&[usize]]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut frozen = lm.clone();
    frozen.frozen = true;
    let vars = frozen.bind(&mut tape);
    let out = lm_log_prob_batch(&mut tape, &vars, LmInput::Ids(seqs))?;
    Ok(tape.value(out).to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub sort_buffer: usize,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            sort_buffer: 16,
        }
    }
}

/// Maximum-likelihood training of a fresh model; returns it frozen together
/// with the mean per-token training NLL of every epoch.
pub fn pretrain_lm(corpus: &[Sequence], lm_config: LmConfig, config: &LmTrainConfig, rng: &mut Rng) -> Result<(LmParams, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut lm = LmParams::init(lm_config, rng);
    let sizes: Vec<usize> = lm.named().iter().map(|(_, t)| t.len()).collect();
    let mut opt = Adam::new(config.optimizer, &sizes);
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (mut nll, mut tokens) = (0.0, 0usize);
        for batch in batch_iter(corpus, config.batch_size, rng, config.sort_buffer)? {
            let seqs: Vec<&[usize]> = batch.indices.iter().map(|&i| corpus[i].ids.as_slice()).collect();
            let n: usize = seqs.iter().map(|s| s.len() + 1).sum();
            let mut tape = Tape::new();
            let vars = lm.bind(&mut tape);
            let lp = lm_log_prob_batch(&mut tape, &vars, LmInput::Ids(&seqs))?;
            let total = tape.sum(lp)?;
            let loss = tape.scale(total, -1.0 / n as f64)?;
            if !tape.item(loss).is_finite() {
                return Err(Error::NonFinite { term: "language model loss" });
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = vars.vars().iter().map(|&v| tape.grad_or_zeros(v)).collect();
            nll -= tape.item(total);
            tokens += n;
            opt.step(&mut lm.tensors_mut(), &grads)?;
        }
        trace.push(nll / tokens as f64);
    }
    lm.frozen = true;
    Ok((lm, trace))
}

/// `exp(total NLL / predicted tokens)` with EOS counted as a predicted token.
pub fn perplexity(lm: &LmParams, corpus: &[Sequence]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let (mut nll, mut tokens) = (0.0, 0usize);
    for chunk in corpus.chunks(64) {
        let seqs: Vec<&[usize]> = chunk.iter().map(|s| s.ids.as_slice()).collect();
        nll -= score_batch(lm, &seqs)?.iter().sum::<f64>();
        tokens += seqs.iter().map(|s| s.len() + 1).sum::<usize>();
    }
    Ok(math::exp(nll / tokens as f64))
}

/// Ancestral sample terminated by EOS or after `max_len` tokens.
pub fn lm_sample(lm: &LmParams, rng: &mut Rng, max_len: usize) -> Result<Sequence> {
    if max_len == 0 {
        return Err(Error::NonPositive {
            what: "max_len",
            value: 0.0,
        });
    }
    let mut tape = Tape::new();
    let mut frozen = lm.clone();
    frozen.frozen = true;
    let vars = frozen.bind(&mut tape);
    let hd = vars.hidden_dim;
    let mut h = tape.input(vec![1, hd], vec![0.0; hd])?;
    let mut c = h;
    let mut prev = BOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let x = tape.embedding(vars.embed, &[prev])?;
        let (hn, cn) = lstm_step(&mut tape, &vars.lstm, x, h, c)?;
        h = hn;
        c = cn;
        let logits = tape.affine(h, vars.out_w, vars.out_b)?;
        let p = crate::tensor::softmax(tape.value(logits), 1.0);
        let id = rng.categorical(&p);
        if id == EOS {
            break;
        }
        out.push(id);
        prev = id;
    }
    Ok(Sequence::new(out))
}

/// Next-token distribution after `prefix` (BOS implied).
pub fn next_token_distribution(lm: &LmParams, prefix: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut frozen = lm.clone();
    frozen.frozen = true;
    let vars = frozen.bind(&mut tape);
    let hd = vars.hidden_dim;
    let mut h = tape.input(vec![1, hd], vec![0.0; hd])?;
    let mut c = h;
    for &id in core::iter::once(&BOS).chain(prefix) {
        let x = tape.embedding(vars.embed, &[id])?;
        let (hn, cn) = lstm_step(&mut tape, &vars.lstm, x, h, c)?;
        h = hn;
        c = cn;
    }
    let logits = tape.affine(h, vars.out_w, vars.out_b)?;
    Ok(crate::tensor::softmax(tape.value(logits), 1.0))
}
