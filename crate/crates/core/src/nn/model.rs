use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::lstm::{lstm_step, LstmParams, LstmVars};
use super::vocab::{Domain, Sequence, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Architecture hyperparameters of the shared encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Max-pooling window over encoder states; 1 is plain attention.
    pub pool_window: usize,
    /// Dropout rate on the readout during training.
    pub dropout: f64,
    /// Feed the previous attention context into the next decoder input.
    pub input_feeding: bool,
}

impl ModelConfig {
    /// Desk-scale defaults for a vocabulary of `vocab_size` ids.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            pool_window: 1,
            dropout: 0.3,
            input_feeding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("pool_window", self.pool_window),
        ] {
            if v == 0 {
                return Err(Error::NonPositive { what, value: 0.0 });
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::OutOfRange {
                what: "dropout",
                range: "[0, 1)",
                value: self.dropout,
            });
        }
        Ok(())
    }

    fn decoder_input_dim(&self) -> usize {
        2 * self.embed_dim + if self.input_feeding { self.hidden_dim } else { 0 }
    }
}

/// Parameters of the single encoder and single decoder shared by both
/// transfer directions. The direction is selected by a domain embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `[V, E]`
    pub embed: Tensor,
    /// `[2, E]`, one row per domain.
    pub domains: Tensor,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    /// `[H, H]` map from the final encoder state to the initial decoder state.
    pub bridge_w: Tensor,
    pub bridge_b: Tensor,
    /// `[2H, V]` readout over `[decoder state; attention context]`.
    pub readout_w: Tensor,
    pub readout_b: Tensor,
}

/// [`ModelParams`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub config: ModelConfig,
    pub embed: Var,
    pub domains: Var,
    pub encoder: LstmVars,
    pub decoder: LstmVars,
    pub bridge_w: Var,
    pub bridge_b: Var,
    pub readout_w: Var,
    pub readout_b: Var,
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let normal = |shape: Vec<usize>, rng: &mut Rng| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("positive extents")
        };
        let embed = normal(vec![v, e], rng);
        let domains = normal(vec![2, e], rng);
        let encoder = LstmParams::init(e, h, rng);
        let decoder = LstmParams::init(config.decoder_input_dim(), h, rng);
        let s_bridge = 1.0 / math::sqrt(h as f64);
        let s_out = 1.0 / math::sqrt(2.0 * h as f64);
        Ok(Self {
            embed,
            domains,
            encoder,
            decoder,
            bridge_w: Tensor::uniform(vec![h, h], s_bridge, rng),
            bridge_b: Tensor::uniform(vec![h], s_bridge, rng),
            readout_w: Tensor::uniform(vec![2 * h, v], s_out, rng),
            readout_b: Tensor::uniform(vec![v], s_out, rng),
            config,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        Ok(Self {
            embed: Tensor::zeros(vec![v, e]),
            domains: Tensor::zeros(vec![2, e]),
            encoder: LstmParams::zeros(e, h),
            decoder: LstmParams::zeros(config.decoder_input_dim(), h),
            bridge_w: Tensor::zeros(vec![h, h]),
            bridge_b: Tensor::zeros(vec![h]),
            readout_w: Tensor::zeros(vec![2 * h, v]),
            readout_b: Tensor::zeros(vec![v]),
            config,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        ModelVars {
            config: self.config.clone(),
            embed: tape.leaf(&self.embed, trainable),
            domains: tape.leaf(&self.domains, trainable),
            encoder: self.encoder.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
            bridge_w: tape.leaf(&self.bridge_w, trainable),
            bridge_b: tape.leaf(&self.bridge_b, trainable),
            readout_w: tape.leaf(&self.readout_w, trainable),
            readout_b: tape.leaf(&self.readout_b, trainable),
        }
    }

    /// Tensors with stable names, in the order used by [`ModelVars::vars`].
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (String::from("embed"), &self.embed),
            (String::from("domains"), &self.domains),
        ];
        self.encoder.named("encoder", &mut out);
        self.decoder.named("decoder", &mut out);
        out.push((String::from("bridge_w"), &self.bridge_w));
        out.push((String::from("bridge_b"), &self.bridge_b));
        out.push((String::from("readout_w"), &self.readout_w));
        out.push((String::from("readout_b"), &self.readout_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed, &mut self.domains];
        self.encoder.tensors_mut(&mut out);
        self.decoder.tensors_mut(&mut out);
        out.push(&mut self.bridge_w);
        out.push(&mut self.bridge_b);
        out.push(&mut self.readout_w);
        out.push(&mut self.readout_b);
        out
    }
}

impl ModelVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embed, self.domains];
        out.extend(self.encoder.vars());
        out.extend(self.decoder.vars());
        out.extend([self.bridge_w, self.bridge_b, self.readout_w, self.readout_b]);
        out
    }
}

/// Encoder input for a batch.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// Token ids without EOS; the encoder appends EOS to each row.
    Ids(&'a [&'a [usize]]),
    /// Per-step `[B, V]` (possibly straight-through) one-hot rows with the
    /// number of valid steps per row, EOS included where present.
    OneHot { steps: &'a [Var], lens: &'a [usize] },
}

impl Source<'_> {
    pub fn batch_size(&self, tape: &Tape) -> usize {
        match self {
            Source::Ids(ids) => ids.len(),
            Source::OneHot { steps, .. } => steps.first().map_or(0, |&s| tape.shape(s)[0]),
        }
    }
}

/// Encoder output for a batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[B, T, H]`, with padded positions carrying the last valid state.
    pub states: Var,
    pub lens: Vec<usize>,
    /// `[B, M, H]` max-pooled states, used as attention keys and values.
    pub memory: Var,
    pub memory_lens: Vec<usize>,
    /// `[B, H]` state after each row's last valid step.
    pub final_h: Var,
}

/// Runs the shared, domain-blind encoder.
pub fn encode(tape: &mut Tape, m: &ModelVars, src: Source<'_>) -> Result<Encoded> {
    let b = src.batch_size(tape);
    if b == 0 {
        return Err(Error::Empty("source batch"));
    }
    let hidden = m.config.hidden_dim;
    let lens: Vec<usize> = match src {
        Source::Ids(ids) => ids.iter().map(|s| s.len() + 1).collect(),
        Source::OneHot { steps, lens } => {
            if lens.len() != b || lens.iter().any(|&n| n == 0 || n > steps.len()) {
                return Err(Error::Shape {
                    op: "encode",
                    lhs: vec![b, steps.len()],
                    rhs: lens.to_vec(),
                });
            }
            lens.to_vec()
        }
    };
    let t_max = *lens.iter().max().expect("non-empty batch");
    let mut h = tape.input(vec![b, hidden], vec![0.0; b * hidden])?;
    let mut c = h;
    let mut states = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let x = match src {
            Source::Ids(ids) => {
                let step: Vec<usize> = ids
                    .iter()
                    .map(|s| match t.cmp(&s.len()) {
                        core::cmp::Ordering::Less => s[t],
                        core::cmp::Ordering::Equal => EOS,
                        core::cmp::Ordering::Greater => PAD,
                    })
                    .collect();
                tape.embedding(m.embed, &step)?
            }
            Source::OneHot { steps, .. } => tape.matmul(steps[t], m.embed)?,
        };
        let (hn, cn) = lstm_step(tape, &m.encoder, x, h, c)?;
        if lens.iter().all(|&n| t < n) {
            h = hn;
            c = cn;
        } else {
            let keep: Vec<bool> = lens.iter().map(|&n| t < n).collect();
            h = tape.select_rows(&keep, hn, h)?;
            c = tape.select_rows(&keep, cn, c)?;
        }
        states.push(h);
    }
    let stacked = tape.stack(&states)?;
    let (memory, memory_lens) = tape.max_pool(stacked, &lens, m.config.pool_window)?;
    Ok(Encoded {
        states: stacked,
        lens,
        memory,
        memory_lens,
        final_h: h,
    })
}

/// Dot-product attention of `query` `[B, H]` over `memory` `[B, M, H]`.
/// Returns the `[B, H]` context and `[B, M]` weights.
pub fn attention(tape: &mut Tape, query: Var, memory: Var, lens: &[usize]) -> Result<(Var, Var)> {
    let scores = tape.scores(query, memory, lens)?;
    let weights = tape.masked_softmax(scores, lens)?;
    let ctx = tape.weighted_sum(weights, memory)?;
    Ok((ctx, weights))
}

/// Recurrent decoder state for a batch.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub ctx: Var,
    pub memory: Var,
    pub memory_lens: Vec<usize>,
    /// `[B, E]` domain embedding rows.
    pub domain: Var,
}

pub fn start_decoder(tape: &mut Tape, m: &ModelVars, enc: &Encoded, domain: Domain) -> Result<DecoderState> {
    let b = enc.lens.len();
    let hidden = m.config.hidden_dim;
    let h = tape.affine(enc.final_h, m.bridge_w, m.bridge_b)?;
    let zeros = tape.input(vec![b, hidden], vec![0.0; b * hidden])?;
    let dom = tape.embedding(m.domains, &vec![domain.index(); b])?;
    Ok(DecoderState {
        h,
        c: zeros,
        ctx: zeros,
        memory: enc.memory,
        memory_lens: enc.memory_lens.clone(),
        domain: dom,
    })
}

/// One decoder step from `[B, E]` input embeddings to `[B, V]` logits.
///
/// Readout dropout is applied when `dropout` supplies a generator.
pub fn decoder_step(
    tape: &mut Tape,
    m: &ModelVars,
    st: &mut DecoderState,
    input: Var,
    dropout: Option<&mut Rng>,
) -> Result<(Var, Var)> {
    let x = if m.config.input_feeding {
        tape.concat(&[input, st.domain, st.ctx])?
    } else {
        tape.concat(&[input, st.domain])?
    };
    let (h, c) = lstm_step(tape, &m.decoder, x, st.h, st.c)?;
    let (ctx, weights) = attention(tape, h, st.memory, &st.memory_lens)?;
    st.h = h;
    st.c = c;
    st.ctx = ctx;
    let mut r = tape.concat(&[h, ctx])?;
    if let Some(rng) = dropout {
        let p = m.config.dropout;
        if p > 0.0 {
            let shape = tape.shape(r).to_vec();
            let n = tape.value(r).len();
            let keep = 1.0 / (1.0 - p);
            let mask = (0..n).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect();
            let mask = tape.input(shape, mask)?;
            r = tape.mul(r, mask)?;
        }
    }
    let logits = tape.affine(r, m.readout_w, m.readout_b)?;
    Ok((logits, weights))
}

/// Teacher-forced `log p(tgt | src, domain)` per row, EOS included, as `[B]`.
pub fn teacher_forced(
    tape: &mut Tape,
    m: &ModelVars,
    src: Source<'_>,
    tgts: &[&[usize]],
    domain: Domain,
    mut dropout: Option<&mut Rng>,
) -> Result<Var> {
    let enc = encode(tape, m, src)?;
    if tgts.len() != enc.lens.len() {
        return Err(Error::Shape {
            op: "teacher_forced",
            lhs: vec![enc.lens.len()],
            rhs: vec![tgts.len()],
        });
    }
    let mut st = start_decoder(tape, m, &enc, domain)?;
    let b = tgts.len();
    let steps = tgts.iter().map(|t| t.len()).max().unwrap_or(0) + 1;
    let mut prev = vec![BOS; b];
    let mut total: Option<Var> = None;
    for t in 0..steps {
        let input = tape.embedding(m.embed, &prev)?;
        let (logits, _) = decoder_step(tape, m, &mut st, input, dropout.as_deref_mut())?;
        let mut targets = Vec::with_capacity(b);
        let mut weights = Vec::with_capacity(b);
        for tgt in tgts {
            let (id, w) = match t.cmp(&tgt.len()) {
                core::cmp::Ordering::Less => (tgt[t], 1.0),
                core::cmp::Ordering::Equal => (EOS, 1.0),
                core::cmp::Ordering::Greater => (PAD, 0.0),
            };
            targets.push(id);
            weights.push(w);
        }
        let nll = tape.cross_entropy(logits, &targets, &weights)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, nll)?,
            None => nll,
        });
        prev = targets;
    }
    tape.scale(total.expect("at least one step"), -1.0)
}

/// Single-pair `log p(tgt | src, direction)` as a `[1]` tape value.
pub fn decode_logprob(
    tape: &mut Tape,
    m: &ModelVars,
    src: &Sequence,
    tgt: &Sequence,
    direction: Domain,
    dropout: Option<&mut Rng>,
) -> Result<Var> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Empty("sequence"));
    }
    let s: [&[usize]; 1] = [&src.ids];
    let t: [&[usize]; 1] = [&tgt.ids];
    teacher_forced(tape, m, Source::Ids(&s), &t, direction, dropout)
}

/// How each output token is chosen during free-running decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    /// Ancestral sampling from `softmax(logits / temperature)`.
    Sample { temperature: f64 },
    /// Straight-through Gumbel-softmax samples kept on the tape.
    GumbelSt { temperature: f64 },
}

/// Result of free-running decoding for a batch.
#[derive(Debug, Clone)]
pub struct Decoded {
    /// Emitted tokens per row, EOS excluded.
    pub seqs: Vec<Vec<usize>>,
    /// Whether each row stopped on EOS rather than on its length limit.
    pub terminated: Vec<bool>,
    /// `[B, V]` one-hot rows per step (straight-through mode only).
    pub steps: Vec<Var>,
    /// Number of scored steps per row, EOS included when emitted.
    pub step_lens: Vec<usize>,
    /// `[B]` log-probability of each row's sample (straight-through mode only).
    pub log_q: Option<Var>,
}

impl Decoded {
    /// Encoder input reproducing the decoded rows on the tape. Rows that hit
    /// their length limit get an appended constant EOS step, so every row
    /// ends in EOS as id inputs do.
    pub fn as_source_steps(&self, tape: &mut Tape, vocab_size: usize) -> Result<(Vec<Var>, Vec<usize>)> {
        let b = self.seqs.len();
        let mut steps = self.steps.clone();
        let mut lens = self.step_lens.clone();
        if self.terminated.iter().any(|&t| !t) {
            let need = self
                .step_lens
                .iter()
                .zip(&self.terminated)
                .filter(|(_, &t)| !t)
                .map(|(&n, _)| n + 1)
                .max()
                .unwrap_or(0);
            while steps.len() < need {
                let pad = tape.input(vec![b, vocab_size], vec![0.0; b * vocab_size])?;
                steps.push(pad);
            }
            for r in 0..b {
                if self.terminated[r] {
                    continue;
                }
                let t = self.step_lens[r];
                let mut data = vec![0.0; b * vocab_size];
                data[r * vocab_size + EOS] = 1.0;
                let mask: Vec<bool> = (0..b).map(|k| k == r).collect();
                let eos = tape.input(vec![b, vocab_size], data)?;
                steps[t] = tape.select_rows(&mask, eos, steps[t])?;
                lens[r] += 1;
            }
        }
        Ok((steps, lens))
    }
}

/// Free-running decoding into `domain`, at most `max_lens[r]` steps per row.
///
/// `rng` drives sampling and, when `train` is set, readout dropout.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    tape: &mut Tape,
    m: &ModelVars,
    src: Source<'_>,
    domain: Domain,
    max_lens: &[usize],
    mode: DecodeMode,
    rng: &mut Rng,
    train: bool,
) -> Result<Decoded> {
    let enc = encode(tape, m, src)?;
    let b = enc.lens.len();
    if max_lens.len() != b {
        return Err(Error::Shape {
            op: "generate",
            lhs: vec![b],
            rhs: vec![max_lens.len()],
        });
    }
    if max_lens.iter().any(|&n| n == 0) {
        return Err(Error::NonPositive {
            what: "max_len",
            value: 0.0,
        });
    }
    match mode {
        DecodeMode::Sample { temperature } | DecodeMode::GumbelSt { temperature } if !(temperature > 0.0) => {
            return Err(Error::NonPositive {
                what: "temperature",
                value: temperature,
            })
        }
        _ => {}
    }
    let v = m.config.vocab_size;
    let mut st = start_decoder(tape, m, &enc, domain)?;
    let mut out = Decoded {
        seqs: vec![Vec::new(); b],
        terminated: vec![false; b],
        steps: Vec::new(),
        step_lens: vec![0; b],
        log_q: None,
    };
    let mut alive = vec![true; b];
    let mut input = tape.embedding(m.embed, &vec![BOS; b])?;
    let limit = *max_lens.iter().max().expect("non-empty batch");
    for _ in 0..limit {
        let (logits, _) = decoder_step(tape, m, &mut st, input, if train { Some(&mut *rng) } else { None })?;
        let lv = tape.value(logits).to_vec();
        let mut ids = Vec::with_capacity(b);
        let mut onehot = None;
        match mode {
            DecodeMode::Greedy => {
                for r in 0..b {
                    ids.push(math::argmax(&lv[r * v..(r + 1) * v]));
                }
            }
            DecodeMode::Sample { temperature } => {
                for r in 0..b {
                    let p = crate::tensor::softmax(&lv[r * v..(r + 1) * v], temperature);
                    ids.push(rng.categorical(&p));
                }
            }
            DecodeMode::GumbelSt { temperature } => {
                let noise: Vec<f64> = (0..b * v).map(|_| rng.gumbel()).collect();
                let y = tape.gumbel_st(logits, &noise, temperature)?;
                let yv = tape.value(y);
                for r in 0..b {
                    ids.push(math::argmax(&yv[r * v..(r + 1) * v]));
                }
                let lsm = tape.log_softmax(logits)?;
                let picked = tape.mul(y, lsm)?;
                let per_row = tape.sum_cols(picked)?;
                let mask = tape.input(vec![b], alive.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect())?;
                let contrib = tape.mul(per_row, mask)?;
                out.log_q = Some(match out.log_q {
                    Some(acc) => tape.add(acc, contrib)?,
                    None => contrib,
                });
                out.steps.push(y);
                onehot = Some(y);
            }
        }
        for r in 0..b {
            if !alive[r] {
                continue;
            }
            out.step_lens[r] += 1;
            if ids[r] == EOS {
                out.terminated[r] = true;
                alive[r] = false;
            } else {
                out.seqs[r].push(ids[r]);
                if out.step_lens[r] >= max_lens[r] {
                    alive[r] = false;
                }
            }
        }
        if alive.iter().all(|a| !a) {
            break;
        }
        input = match onehot {
            Some(y) => tape.matmul(y, m.embed)?,
            None => tape.embedding(m.embed, &ids)?,
        };
    }
    Ok(out)
}

/// Default decoding length limit for a source of `src_len` tokens.
pub fn default_max_len(src_len: usize) -> usize {
    2 * src_len + 5
}

/// Greedy decoding of a batch on a private tape; no gradients are recorded.
pub fn greedy_decode_batch(params: &ModelParams, srcs: &[&[usize]], domain: Domain, max_lens: &[usize]) -> Result<Decoded> {
    let mut tape = Tape::new();
    let m = params.bind(&mut tape, false);
    let mut rng = Rng::seed(0);
    generate(&mut tape, &m, Source::Ids(srcs), domain, max_lens, DecodeMode::Greedy, &mut rng, false)
}

/// Greedy decoding of one sequence. The result carries `direction` as its domain.
pub fn greedy_decode(params: &ModelParams, src: &Sequence, direction: Domain, max_len: usize) -> Result<Sequence> {
    let s: [&[usize]; 1] = [&src.ids];
    let d = greedy_decode_batch(params, &s, direction, &[max_len])?;
    Ok(Sequence::in_domain(d.seqs.into_iter().next().expect("one row"), direction))
}

/// Ancestral sampling of one sequence at `temperature`.
pub fn sample_decode(
    params: &ModelParams,
    src: &Sequence,
    direction: Domain,
    temperature: f64,
    max_len: usize,
    rng: &mut Rng,
) -> Result<Sequence> {
    let mut tape = Tape::new();
    let m = params.bind(&mut tape, false);
    let s: [&[usize]; 1] = [&src.ids];
    let d = generate(
        &mut tape,
        &m,
        Source::Ids(&s),
        direction,
        &[max_len],
        DecodeMode::Sample { temperature },
        rng,
        false,
    )?;
    Ok(Sequence::in_domain(d.seqs.into_iter().next().expect("one row"), direction))
}

/// Encoder states of one sequence as a `[T + 1, H]` tensor (EOS appended).
pub fn encode_sequence(params: &ModelParams, seq: &Sequence) -> Result<Tensor> {
    let mut tape = Tape::new();
    let m = params.bind(&mut tape, false);
    let s: [&[usize]; 1] = [&seq.ids];
    let enc = encode(&mut tape, &m, Source::Ids(&s))?;
    let t = tape.tensor(enc.states);
    Tensor::new(vec![enc.lens[0], params.config.hidden_dim], t.data().to_vec())
}

/// Pooled attention of one query over `[T, H]` states.
pub fn attention_context(query: &[f64], states: &Tensor, pool_window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (t, h) = states.dims2();
    if query.len() != h {
        return Err(Error::Shape {
            op: "attention_context",
            lhs: vec![query.len()],
            rhs: states.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let q = tape.input(vec![1, h], query.to_vec())?;
    let s = tape.input(vec![1, t, h], states.data().to_vec())?;
    let (pooled, lens) = tape.max_pool(s, &[t], pool_window)?;
    let (ctx, w) = attention(&mut tape, q, pooled, &lens)?;
    Ok((tape.value(ctx).to_vec(), tape.value(w)[..lens[0]].to_vec()))
}
