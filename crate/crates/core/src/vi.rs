//! Variational training: the evidence lower bound with its KL decomposition,
//! self-reconstruction annealing, gradient estimators for the discrete
//! latent path, the backtranslation ablations, and the training loop.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::batch_iter;
use crate::error::{Error, Result};
use crate::latent::{LatentModel, LatentPosterior, LatentVars, Priors};
use crate::lm::{lm_log_prob_batch, LmInput, LmVars};
use crate::math;
use crate::nn::{default_max_len, generate, teacher_forced, DecodeMode, Decoded, Domain, ModelConfig, ModelVars, Sequence, Source};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::tensor::{Tape, Var};

/// How gradients from the reconstruction term reach the inference network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Greedy latents decoded without recording gradients.
    StopGradient,
    /// Straight-through Gumbel-softmax latents.
    GumbelSt,
    /// Score-function gradient with the per-example ELBO as reward.
    Reinforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Elbo,
    /// Backtranslation plus prior NLL: the KL estimate without its `log q` term.
    BtNll,
    /// Backtranslation plus a denoising autoencoder, with no prior.
    Unmt,
}

/// How reconstruction latents are produced from the inference network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconDecoding {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Epochs over which the self-reconstruction weight decays to zero.
    pub anneal_epochs: usize,
    pub estimator: Estimator,
    pub objective: Objective,
    pub recon_decoding: ReconDecoding,
    /// Reuse the KL sample as the reconstruction latent.
    pub share_kl_sample: bool,
    pub gumbel_temperature: f64,
    pub noise_drop: f64,
    pub noise_shuffle: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sort_buffer: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub pool_window: usize,
    pub dropout: f64,
    pub input_feeding: bool,
    pub tie_parameters: bool,
    /// EMA decay of the score-function baseline.
    pub baseline_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.03,
            anneal_epochs: 2,
            estimator: Estimator::StopGradient,
            objective: Objective::Elbo,
            recon_decoding: ReconDecoding::Greedy,
            share_kl_sample: false,
            gumbel_temperature: 1.0,
            noise_drop: 0.1,
            noise_shuffle: 3,
            optimizer: AdamConfig::default(),
            seed: 0,
            epochs: 30,
            batch_size: 32,
            sort_buffer: 16,
            embed_dim: 32,
            hidden_dim: 64,
            pool_window: 1,
            dropout: 0.3,
            input_feeding: true,
            tie_parameters: true,
            baseline_decay: 0.95,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::OutOfRange {
                what: "lambda",
                range: "[0, inf)",
                value: self.lambda,
            });
        }
        if !(0.0..1.0).contains(&self.noise_drop) {
            return Err(Error::OutOfRange {
                what: "noise_drop",
                range: "[0, 1)",
                value: self.noise_drop,
            });
        }
        if !(self.gumbel_temperature > 0.0) {
            return Err(Error::NonPositive {
                what: "gumbel_temperature",
                value: self.gumbel_temperature,
            });
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::NonPositive {
                what: "learning rate",
                value: self.optimizer.lr,
            });
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::OutOfRange {
                what: "baseline_decay",
                range: "[0, 1)",
                value: self.baseline_decay,
            });
        }
        for (what, v) in [
            ("batch_size", self.batch_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("pool_window", self.pool_window),
        ] {
            if v == 0 {
                return Err(Error::NonPositive { what, value: 0.0 });
            }
        }
        self.model_config(1).validate()
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            pool_window: self.pool_window,
            dropout: self.dropout,
            input_feeding: self.input_feeding,
        }
    }
}

/// `KL = neg_entropy + prior_xent` for one direction, summed over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KlTerm {
    /// `Σ log q(ŷ)`, the single-sample estimate of `−H_q`.
    pub neg_entropy: f64,
    /// `−Σ log p_D(ŷ)`.
    pub prior_xent: f64,
}

impl KlTerm {
    pub fn value(&self) -> f64 {
        self.neg_entropy + self.prior_xent
    }
}

/// Per-batch record of the bound's terms; sums over sentences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboBreakdown {
    pub reconstruction_x: f64,
    pub reconstruction_y: f64,
    pub kl_x: KlTerm,
    pub kl_y: KlTerm,
    pub lambda: f64,
    pub total: f64,
    /// Observed tokens including one EOS per sentence.
    pub tokens: usize,
}

impl ElboBreakdown {
    pub fn new(reconstruction_x: f64, reconstruction_y: f64, kl_x: KlTerm, kl_y: KlTerm, lambda: f64, tokens: usize) -> Self {
        let total = reconstruction_x + reconstruction_y - lambda * (kl_x.value() + kl_y.value());
        Self {
            reconstruction_x,
            reconstruction_y,
            kl_x,
            kl_y,
            lambda,
            total,
            tokens,
        }
    }

    pub fn per_word(&self) -> f64 {
        self.total / self.tokens.max(1) as f64
    }

    /// Sum of two records with equal `lambda`.
    pub fn merge(&self, other: &Self) -> Self {
        let add = |a: KlTerm, b: KlTerm| KlTerm {
            neg_entropy: a.neg_entropy + b.neg_entropy,
            prior_xent: a.prior_xent + b.prior_xent,
        };
        Self::new(
            self.reconstruction_x + other.reconstruction_x,
            self.reconstruction_y + other.reconstruction_y,
            add(self.kl_x, other.kl_x),
            add(self.kl_y, other.kl_y),
            self.lambda,
            self.tokens + other.tokens,
        )
    }
}

/// Self-reconstruction weight: `max(0, 1 − step / (k · steps_per_epoch))`, zero when `k = 0`.
pub fn alpha_schedule(step: u64, steps_per_epoch: u64, k: usize) -> f64 {
    let horizon = k as u64 * steps_per_epoch;
    if horizon == 0 {
        return 0.0;
    }
    (1.0 - step as f64 / horizon as f64).max(0.0)
}

/// Drops tokens with probability `drop_prob`, then permutes the rest so no
/// token moves more than `shuffle_k` positions. At least one token survives.
pub fn noise_fn(seq: &[usize], drop_prob: f64, shuffle_k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(seq.len());
    for &t in seq {
        if drop_prob == 0.0 || rng.uniform() >= drop_prob {
            kept.push(t);
        }
    }
    if kept.is_empty() && !seq.is_empty() {
        kept.push(seq[0]);
    }
    if shuffle_k == 0 || kept.len() < 2 {
        return kept;
    }
    let mut keyed: Vec<(f64, usize)> = kept
        .iter()
        .enumerate()
        .map(|(i, &t)| (i as f64 + rng.uniform() * (shuffle_k as f64 + 1.0), t))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// `H = −Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy_exact(probs: &[f64]) -> Result<f64> {
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || probs.iter().any(|&p| p < 0.0) {
        return Err(Error::Unnormalized(total));
    }
    Ok(-probs.iter().filter(|&&p| p > 0.0).map(|&p| p * math::ln(p)).sum::<f64>())
}

/// Entropy of a normalized latent table.
pub fn posterior_entropy(q: &LatentPosterior) -> Result<f64> {
    entropy_exact(&q.probs())
}

/// Single Gumbel straight-through sample `ŷ ~ q(·|input)` with its
/// `log q(ŷ|input)` and `log p_D(ŷ)` per row, both differentiable through
/// the relaxation.
pub struct KlSample {
    pub decoded: Decoded,
    pub log_q: Var,
    pub log_prior: Var,
}

impl KlSample {
    /// `log q − log p_D` per row.
    pub fn kl(&self, tape: &mut Tape) -> Result<Var> {
        tape.sub(self.log_q, self.log_prior)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kl_single_sample(
    tape: &mut Tape,
    q: &ModelVars,
    prior: &LmVars,
    input: &[&[usize]],
    direction: Domain,
    max_lens: &[usize],
    temperature: f64,
    rng: &mut Rng,
    train: bool,
) -> Result<KlSample> {
    let decoded = generate(
        tape,
        q,
        Source::Ids(input),
        direction,
        max_lens,
        DecodeMode::GumbelSt { temperature },
        rng,
        train,
    )?;
    let log_q = decoded.log_q.expect("straight-through decoding records log q");
    let log_prior = lm_log_prob_batch(
        tape,
        prior,
        LmInput::OneHot {
            steps: &decoded.steps,
            lens: &decoded.step_lens,
        },
    )?;
    Ok(KlSample {
        decoded,
        log_q,
        log_prior,
    })
}

/// Exponential moving average of rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub value: Option<f64>,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Self { value: None, decay }
    }

    /// Current value; the first batch uses its own mean reward.
    pub fn current(&self, batch_mean: f64) -> f64 {
        self.value.unwrap_or(batch_mean)
    }

    pub fn update(&mut self, batch_mean: f64) {
        self.value = Some(match self.value {
            Some(b) => self.decay * b + (1.0 - self.decay) * batch_mean,
            None => batch_mean,
        });
    }
}

/// Score-function surrogate `−Σ (reward − b) · log q`; rewards are constants.
/// Updates the baseline with the batch mean reward afterwards.
pub fn reinforce_loss(tape: &mut Tape, log_q: Var, rewards: &[f64], baseline: &mut Baseline) -> Result<Var> {
    if rewards.is_empty() {
        return Err(Error::Empty("rewards"));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let b = baseline.current(mean);
    let adv = tape.input(vec![rewards.len()], rewards.iter().map(|r| -(r - b)).collect())?;
    let weighted = tape.mul(adv, log_q)?;
    let out = tape.sum(weighted)?;
    baseline.update(mean);
    Ok(out)
}

/// Terms of one observed batch.
struct SideTerms {
    loss: Option<Var>,
    recon: f64,
    kl: KlTerm,
    self_recon: f64,
    tokens: usize,
}

/// Everything a step needs besides the batch itself.
pub struct StepContext<'a> {
    pub model: &'a LatentModel,
    pub vars: &'a LatentVars,
    pub priors: &'a [LmVars; 2],
    pub config: &'a TrainConfig,
    pub alpha: f64,
    /// Training mode: dropout on and losses recorded for backpropagation.
    pub train: bool,
}

fn add_opt(tape: &mut Tape, acc: Option<Var>, x: Var) -> Result<Option<Var>> {
    Ok(Some(match acc {
        Some(a) => tape.add(a, x)?,
        None => x,
    }))
}

fn latents_without_grad(
    model: &LatentModel,
    obs: &[&[usize]],
    latent_domain: Domain,
    mode: ReconDecoding,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let mut scratch = Tape::new();
    let q = model.q().bind(&mut scratch, false);
    let max_lens: Vec<usize> = obs.iter().map(|s| default_max_len(s.len())).collect();
    let mode = match mode {
        ReconDecoding::Greedy => DecodeMode::Greedy,
        ReconDecoding::Sample => DecodeMode::Sample { temperature: 1.0 },
    };
    Ok(generate(&mut scratch, &q, Source::Ids(obs), latent_domain, &max_lens, mode, rng, false)?.seqs)
}

fn side_terms(
    tape: &mut Tape,
    ctx: &StepContext<'_>,
    obs: &[&[usize]],
    side: Domain,
    rng: &mut Rng,
    baseline: &mut Baseline,
) -> Result<SideTerms> {
    let cfg = ctx.config;
    let gen = &ctx.vars.generative;
    let q = ctx.vars.q();
    let latent_domain = side.other();
    let prior = &ctx.priors[latent_domain.index()];
    let tokens = obs.iter().map(|s| s.len() + 1).sum();
    let mut loss = None;
    let mut self_recon = 0.0;

    let denoise_weight = match cfg.objective {
        Objective::Unmt => 1.0,
        _ => ctx.alpha,
    };
    if denoise_weight > 0.0 {
        let noisy: Vec<Vec<usize>> = obs
            .iter()
            .map(|s| noise_fn(s, cfg.noise_drop, cfg.noise_shuffle, rng))
            .collect();
        let noisy_refs: Vec<&[usize]> = noisy.iter().map(|s| s.as_slice()).collect();
        let dropout = if ctx.train { Some(&mut *rng) } else { None };
        let lp = teacher_forced(tape, gen, Source::Ids(&noisy_refs), obs, side, dropout)?;
        let total = tape.sum(lp)?;
        self_recon = -tape.item(total);
        let term = tape.scale(total, -denoise_weight)?;
        loss = add_opt(tape, loss, term)?;
    }

    let max_lens: Vec<usize> = obs.iter().map(|s| default_max_len(s.len())).collect();
    let kl_sample = match cfg.objective {
        Objective::Unmt => None,
        _ => Some(kl_single_sample(
            tape,
            q,
            prior,
            obs,
            latent_domain,
            &max_lens,
            cfg.gumbel_temperature,
            rng,
            ctx.train,
        )?),
    };

    // Reconstruction latents and, for the score-function estimator, their
    // differentiable log q.
    let mut reinforce_log_q = None;
    let recon = match (cfg.estimator, &kl_sample) {
        (Estimator::GumbelSt, Some(ks)) if cfg.share_kl_sample && ctx.train => {
            let (steps, lens) = ks.decoded.as_source_steps(tape, gen.config.vocab_size)?;
            let dropout = if ctx.train { Some(&mut *rng) } else { None };
            teacher_forced(tape, gen, Source::OneHot { steps: &steps, lens: &lens }, obs, side, dropout)?
        }
        (Estimator::GumbelSt, _) if ctx.train && cfg.objective != Objective::Unmt => {
            let decoded = generate(
                tape,
                q,
                Source::Ids(obs),
                latent_domain,
                &max_lens,
                DecodeMode::GumbelSt {
                    temperature: cfg.gumbel_temperature,
                },
                rng,
                false,
            )?;
            let (steps, lens) = decoded.as_source_steps(tape, gen.config.vocab_size)?;
            let dropout = Some(&mut *rng);
            teacher_forced(tape, gen, Source::OneHot { steps: &steps, lens: &lens }, obs, side, dropout)?
        }
        _ => {
            let latents = match &kl_sample {
                Some(ks) if cfg.share_kl_sample => ks.decoded.seqs.clone(),
                _ => {
                    let mode = if cfg.estimator == Estimator::Reinforce && ctx.train {
                        ReconDecoding::Sample
                    } else {
                        cfg.recon_decoding
                    };
                    latents_without_grad(ctx.model, obs, latent_domain, mode, rng)?
                }
            };
            let lat_refs: Vec<&[usize]> = latents.iter().map(|s| s.as_slice()).collect();
            if cfg.estimator == Estimator::Reinforce && ctx.train {
                reinforce_log_q = Some(teacher_forced(tape, q, Source::Ids(obs), &lat_refs, latent_domain, None)?);
            }
            let dropout = if ctx.train { Some(&mut *rng) } else { None };
            teacher_forced(tape, gen, Source::Ids(&lat_refs), obs, side, dropout)?
        }
    };
    let recon_total = tape.sum(recon)?;
    let recon_value = tape.item(recon_total);
    if !recon_value.is_finite() {
        return Err(Error::NonFinite { term: "reconstruction" });
    }
    let term = tape.scale(recon_total, -1.0)?;
    loss = add_opt(tape, loss, term)?;

    let mut kl = KlTerm::default();
    let mut kl_rows = vec![0.0; obs.len()];
    if let Some(ks) = &kl_sample {
        let lq = tape.value(ks.log_q).to_vec();
        let lp = tape.value(ks.log_prior).to_vec();
        kl.neg_entropy = lq.iter().sum();
        kl.prior_xent = -lp.iter().sum::<f64>();
        if !kl.value().is_finite() {
            return Err(Error::NonFinite { term: "KL" });
        }
        for (r, k) in kl_rows.iter_mut().enumerate() {
            *k = lq[r] - lp[r];
        }
        let per_row = match cfg.objective {
            Objective::BtNll => tape.scale(ks.log_prior, -1.0)?,
            _ => ks.kl(tape)?,
        };
        let total = tape.sum(per_row)?;
        let term = tape.scale(total, cfg.lambda)?;
        loss = add_opt(tape, loss, term)?;
    }

    if let Some(log_q) = reinforce_log_q {
        let rv = tape.value(recon).to_vec();
        let rewards: Vec<f64> = rv.iter().zip(&kl_rows).map(|(r, k)| r - cfg.lambda * k).collect();
        let term = reinforce_loss(tape, log_q, &rewards, baseline)?;
        loss = add_opt(tape, loss, term)?;
    }

    Ok(SideTerms {
        loss,
        recon: recon_value,
        kl,
        self_recon,
        tokens,
    })
}

/// Loss of one step under `config.objective` over a D1 batch and a D2
/// batch (either may be empty), with the bound's breakdown.
///
/// The loss is the negated bound surrogate plus the weighted
/// self-reconstruction term; `None` when both batches are empty.
pub fn objective_variant_loss(
    tape: &mut Tape,
    ctx: &StepContext<'_>,
    batch_x: &[&[usize]],
    batch_y: &[&[usize]],
    rng: &mut Rng,
    baseline: &mut Baseline,
) -> Result<(Option<Var>, ElboBreakdown, f64)> {
    let mut loss = None;
    let mut parts = [(0.0, KlTerm::default()); 2];
    let mut tokens = 0;
    let mut self_recon = 0.0;
    for (side, batch) in [(Domain::D1, batch_x), (Domain::D2, batch_y)] {
        if batch.is_empty() {
            continue;
        }
        let terms = side_terms(tape, ctx, batch, side, rng, baseline)?;
        if let Some(l) = terms.loss {
            loss = add_opt(tape, loss, l)?;
        }
        parts[side.index()] = (terms.recon, terms.kl);
        tokens += terms.tokens;
        self_recon += terms.self_recon;
    }
    let breakdown = ElboBreakdown::new(parts[0].0, parts[1].0, parts[0].1, parts[1].1, ctx.config.lambda, tokens);
    Ok((loss, breakdown, self_recon))
}

/// [`objective_variant_loss`] with the objective forced to the bound itself.
pub fn elbo_step_loss(
    tape: &mut Tape,
    ctx: &StepContext<'_>,
    batch_x: &[&[usize]],
    batch_y: &[&[usize]],
    rng: &mut Rng,
    baseline: &mut Baseline,
) -> Result<(Option<Var>, ElboBreakdown, f64)> {
    let mut config = ctx.config.clone();
    config.objective = Objective::Elbo;
    let inner = StepContext {
        model: ctx.model,
        vars: ctx.vars,
        priors: ctx.priors,
        config: &config,
        alpha: ctx.alpha,
        train: ctx.train,
    };
    objective_variant_loss(tape, &inner, batch_x, batch_y, rng, baseline)
}

/// Self-reconstruction NLL `α · Σ NLL(s | encode(noise(s)), c_domain)` over both batches.
pub fn self_reconstruction_loss(
    tape: &mut Tape,
    gen: &ModelVars,
    batch_x: &[&[usize]],
    batch_y: &[&[usize]],
    alpha: f64,
    noise: (f64, usize),
    rng: &mut Rng,
) -> Result<Var> {
    let mut total = tape.input(vec![1], vec![0.0])?;
    if alpha == 0.0 {
        return Ok(total);
    }
    for (side, batch) in [(Domain::D1, batch_x), (Domain::D2, batch_y)] {
        if batch.is_empty() {
            continue;
        }
        let noisy: Vec<Vec<usize>> = batch.iter().map(|s| noise_fn(s, noise.0, noise.1, rng)).collect();
        let refs: Vec<&[usize]> = noisy.iter().map(|s| s.as_slice()).collect();
        let lp = teacher_forced(tape, gen, Source::Ids(&refs), batch, side, None)?;
        let s = tape.sum(lp)?;
        total = tape.sub(total, s)?;
    }
    tape.scale(total, alpha)
}

/// Held-out bound of `model` over both corpora without gradients.
///
/// Reconstruction latents follow `mode`; the KL term uses one
/// straight-through sample per sentence drawn from `rng`.
pub fn evaluate_elbo(
    model: &LatentModel,
    priors: &Priors,
    x: &[Sequence],
    y: &[Sequence],
    config: &TrainConfig,
    mode: ReconDecoding,
    rng: &mut Rng,
) -> Result<ElboBreakdown> {
    let mut cfg = config.clone();
    cfg.recon_decoding = mode;
    cfg.estimator = Estimator::StopGradient;
    cfg.share_kl_sample = false;
    if cfg.objective == Objective::Unmt {
        cfg.objective = Objective::Elbo;
    }
    let mut total = ElboBreakdown {
        lambda: cfg.lambda,
        ..ElboBreakdown::default()
    };
    let mut baseline = Baseline::new(cfg.baseline_decay);
    let chunk = 64;
    let n = x.len().max(y.len());
    for start in (0..n).step_by(chunk) {
        let bx: Vec<&[usize]> = x.iter().skip(start).take(chunk).map(|s| s.ids.as_slice()).collect();
        let by: Vec<&[usize]> = y.iter().skip(start).take(chunk).map(|s| s.ids.as_slice()).collect();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let priors_v = priors.bind(&mut tape);
        let ctx = StepContext {
            model,
            vars: &vars,
            priors: &priors_v,
            config: &cfg,
            alpha: 0.0,
            train: false,
        };
        let (_, b, _) = objective_variant_loss(&mut tape, &ctx, &bx, &by, rng, &mut baseline)?;
        total = total.merge(&b);
    }
    Ok(total)
}

/// Training and validation corpora of both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub train_x: Vec<Sequence>,
    pub train_y: Vec<Sequence>,
    pub val_x: Vec<Sequence>,
    pub val_y: Vec<Sequence>,
}

/// One row of the metric trace; `val_elbo_per_word` is set on the last step of an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub epoch: usize,
    pub alpha: f64,
    pub train_loss: f64,
    pub recon_x: f64,
    pub recon_y: f64,
    pub kl_x: f64,
    pub kl_y: f64,
    pub neg_entropy_x: f64,
    pub neg_entropy_y: f64,
    pub val_elbo_per_word: Option<f64>,
}

pub const TRACE_HEADER: &str =
    "step\tepoch\talpha\ttrain_loss\trecon_x\trecon_y\tkl_x\tkl_y\tneg_entropy_x\tneg_entropy_y\tval_elbo_per_word";

impl TraceRow {
    /// Tab-separated fields in [`TRACE_HEADER`] order, full precision.
    pub fn to_line(&self) -> String {
        let val = match self.val_elbo_per_word {
            Some(v) => alloc::format!("{v:e}"),
            None => String::from("-"),
        };
        alloc::format!(
            "{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{}",
            self.step,
            self.epoch,
            self.alpha,
            self.train_loss,
            self.recon_x,
            self.recon_y,
            self.kl_x,
            self.kl_y,
            self.neg_entropy_x,
            self.neg_entropy_y,
            val
        )
    }
}

/// Complete mutable state of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: LatentModel,
    pub optimizer: Adam,
    pub rng: Rng,
    pub step: u64,
    pub epoch: usize,
    pub baseline: Baseline,
    /// Best validation per-word bound so far and the model that achieved it.
    pub best: Option<(f64, LatentModel)>,
    pub trace: Vec<TraceRow>,
}

/// Seed offset of the generator used for validation sampling.
const VALIDATION_STREAM: u64 = 0x5eed_0f_7a1;

impl Trainer {
    pub fn new(model: LatentModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = model.named().iter().map(|(_, t)| t.len()).collect();
        Ok(Self {
            optimizer: Adam::new(config.optimizer, &sizes),
            rng: Rng::seed(config.seed),
            step: 0,
            epoch: 0,
            baseline: Baseline::new(config.baseline_decay),
            best: None,
            trace: Vec::new(),
            model,
            config,
        })
    }

    /// Fresh model initialized from `config.seed` for a vocabulary of `vocab_size` ids.
    pub fn from_config(vocab_size: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = Rng::seed(config.seed.wrapping_add(1));
        let model = LatentModel::init(config.model_config(vocab_size), config.tie_parameters, &mut init_rng)?;
        Self::new(model, config)
    }

    pub fn steps_per_epoch(&self, data: &TrainData) -> u64 {
        let bs = self.config.batch_size;
        (data.train_x.len().div_ceil(bs) + data.train_y.len().div_ceil(bs)) as u64
    }

    /// Runs one epoch and returns the validation per-word bound.
    pub fn run_epoch(&mut self, priors: &Priors, data: &TrainData) -> Result<f64> {
        let spe = self.steps_per_epoch(data);
        let cfg = self.config.clone();
        let bx = batch_iter(&data.train_x, cfg.batch_size, &mut self.rng, cfg.sort_buffer)?;
        let by = batch_iter(&data.train_y, cfg.batch_size, &mut self.rng, cfg.sort_buffer)?;
        let mut schedule: Vec<(Domain, &crate::data::Batch)> = Vec::with_capacity(bx.len() + by.len());
        for i in 0..bx.len().max(by.len()) {
            if let Some(b) = bx.get(i) {
                schedule.push((Domain::D1, b));
            }
            if let Some(b) = by.get(i) {
                schedule.push((Domain::D2, b));
            }
        }
        for (domain, batch) in schedule {
            let corpus = match domain {
                Domain::D1 => &data.train_x,
                Domain::D2 => &data.train_y,
            };
            let seqs: Vec<&[usize]> = batch.indices.iter().map(|&i| corpus[i].ids.as_slice()).collect();
            let alpha = alpha_schedule(self.step, spe, cfg.anneal_epochs);
            let mut tape = Tape::new();
            let vars = self.model.bind(&mut tape, true);
            let priors_v = priors.bind(&mut tape);
            let ctx = StepContext {
                model: &self.model,
                vars: &vars,
                priors: &priors_v,
                config: &cfg,
                alpha,
                train: true,
            };
            let (bx_ref, by_ref): (&[&[usize]], &[&[usize]]) = match domain {
                Domain::D1 => (&seqs, &[]),
                Domain::D2 => (&[], &seqs),
            };
            let (loss, b, _) = objective_variant_loss(&mut tape, &ctx, bx_ref, by_ref, &mut self.rng, &mut self.baseline)?;
            let loss = loss.ok_or(Error::Empty("batch"))?;
            let lv = tape.item(loss);
            if !lv.is_finite() {
                return Err(Error::NonFinite { term: "training loss" });
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = vars.vars().iter().map(|&v| tape.grad_or_zeros(v)).collect();
            self.optimizer.step(&mut self.model.tensors_mut(), &grads)?;
            self.step += 1;
            self.trace.push(TraceRow {
                step: self.step,
                epoch: self.epoch,
                alpha,
                train_loss: lv,
                recon_x: b.reconstruction_x,
                recon_y: b.reconstruction_y,
                kl_x: b.kl_x.value(),
                kl_y: b.kl_y.value(),
                neg_entropy_x: b.kl_x.neg_entropy,
                neg_entropy_y: b.kl_y.neg_entropy,
                val_elbo_per_word: None,
            });
        }
        let val = self.validate(priors, data)?;
        if let Some(last) = self.trace.last_mut() {
            last.val_elbo_per_word = Some(val);
        }
        if self.best.as_ref().is_none_or(|(b, _)| val > *b) {
            self.best = Some((val, self.model.clone()));
        }
        self.epoch += 1;
        Ok(val)
    }

    /// Validation per-word bound with a fixed sampling stream.
    pub fn validate(&self, priors: &Priors, data: &TrainData) -> Result<f64> {
        let mut rng = Rng::seed(self.config.seed ^ VALIDATION_STREAM);
        let b = evaluate_elbo(
            &self.model,
            priors,
            &data.val_x,
            &data.val_y,
            &self.config,
            ReconDecoding::Greedy,
            &mut rng,
        )?;
        Ok(b.per_word())
    }

    /// Runs the remaining epochs up to `config.epochs`.
    pub fn run(&mut self, priors: &Priors, data: &TrainData) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(priors, data)?;
        }
        Ok(())
    }

    /// Model with the best validation bound, or the current one before any epoch.
    pub fn best_model(&self) -> &LatentModel {
        self.best.as_ref().map_or(&self.model, |(_, m)| m)
    }
}

/// Trains a fresh model for `config.epochs` and returns the finished trainer.
pub fn train(vocab_size: usize, priors: &Priors, data: &TrainData, config: TrainConfig) -> Result<Trainer> {
    let mut trainer = Trainer::from_config(vocab_size, config)?;
    trainer.run(priors, data)?;
    Ok(trainer)
}
