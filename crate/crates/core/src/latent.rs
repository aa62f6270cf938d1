//! The generative model over a partially observed parallel corpus: joint
//! likelihood, transfer, and exact enumeration of latent sequences on tiny
//! instances.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lm::{lm_log_prob_batch, LmInput, LmParams, LmVars};
use crate::math::{self, LogSumExp};
use crate::nn::{
    greedy_decode, teacher_forced, Domain, ModelConfig, ModelParams, ModelVars, Sequence, Source, Vocab,
};
use crate::rng::Rng;
use crate::tensor::Tape;

/// Upper bound on the number of latent sequences any enumeration may visit.
pub const ENUMERATION_BOUND: u128 = 1_000_000;

/// Transduction parameters. With tying (the default) the inference network
/// for a direction is the generative decoder of that direction itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub generative: ModelParams,
    /// Separate inference parameters when tying is disabled.
    pub inference: Option<ModelParams>,
}

/// [`LatentModel`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct LatentVars {
    pub generative: ModelVars,
    pub inference: Option<ModelVars>,
}

impl LatentModel {
    pub fn init(config: ModelConfig, tied: bool, rng: &mut Rng) -> Result<Self> {
        let generative = ModelParams::init(config.clone(), rng)?;
        let inference = if tied {
            None
        } else {
            Some(ModelParams::init(config, rng)?)
        };
        Ok(Self { generative, inference })
    }

    pub fn tied(model: ModelParams) -> Self {
        Self {
            generative: model,
            inference: None,
        }
    }

    pub fn is_tied(&self) -> bool {
        self.inference.is_none()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.generative.config
    }

    /// Parameters used as q(latent | observed).
    pub fn q(&self) -> &ModelParams {
        self.inference.as_ref().unwrap_or(&self.generative)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LatentVars {
        LatentVars {
            generative: self.generative.bind(tape, trainable),
            inference: self.inference.as_ref().map(|p| p.bind(tape, trainable)),
        }
    }

    /// Every tensor with a stable name; inference tensors are prefixed `inference.`.
    pub fn named(&self) -> Vec<(String, &crate::tensor::Tensor)> {
        let mut out = self.generative.named();
        if let Some(inf) = &self.inference {
            out.extend(inf.named().into_iter().map(|(n, t)| (format!("inference.{n}"), t)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut crate::tensor::Tensor> {
        let mut out = self.generative.tensors_mut();
        if let Some(inf) = &mut self.inference {
            out.extend(inf.tensors_mut());
        }
        out
    }
}

impl LatentVars {
    pub fn q(&self) -> &ModelVars {
        self.inference.as_ref().unwrap_or(&self.generative)
    }

    pub fn vars(&self) -> Vec<crate::tensor::Var> {
        let mut out = self.generative.vars();
        if let Some(inf) = &self.inference {
            out.extend(inf.vars());
        }
        out
    }
}

/// Frozen language-model priors of both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub d1: LmParams,
    pub d2: LmParams,
}

impl Priors {
    pub fn get(&self, domain: Domain) -> &LmParams {
        match domain {
            Domain::D1 => &self.d1,
            Domain::D2 => &self.d2,
        }
    }

    /// Binds both priors as constants.
    pub fn bind(&self, tape: &mut Tape) -> [LmVars; 2] {
        let mut d1 = self.d1.clone();
        let mut d2 = self.d2.clone();
        d1.frozen = true;
        d2.frozen = true;
        [d1.bind(tape), d2.bind(tape)]
    }
}

/// Observed sentences of both domains together with latent completions.
/// Every index in `0..n` is observed in exactly one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BitextState {
    pub n: usize,
    /// `(index, x, ȳ)`: observed in D1 with a latent D2 counterpart.
    pub x: Vec<(usize, Sequence, Sequence)>,
    /// `(index, y, x̄)`: observed in D2 with a latent D1 counterpart.
    pub y: Vec<(usize, Sequence, Sequence)>,
}

impl BitextState {
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n];
        for (i, _, _) in self.x.iter().chain(&self.y) {
            match seen.get_mut(*i) {
                None => return Err(Error::Misaligned(format!("index {i} outside 0..{}", self.n))),
                Some(true) => return Err(Error::Misaligned(format!("index {i} observed twice"))),
                Some(s) => *s = true,
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Misaligned(format!("index {i} has no observation")));
        }
        Ok(())
    }
}

/// `Σᵢ log p(xᵢ|ȳᵢ) + log p_D2(ȳᵢ) + Σⱼ log p(yⱼ|x̄ⱼ) + log p_D1(x̄ⱼ)`.
pub fn joint_complete_log_likelihood(state: &BitextState, model: &LatentModel, priors: &Priors) -> Result<f64> {
    state.validate()?;
    let mut total = 0.0;
    for (obs_domain, pairs) in [(Domain::D1, &state.x), (Domain::D2, &state.y)] {
        if pairs.is_empty() {
            continue;
        }
        let obs: Vec<&[usize]> = pairs.iter().map(|(_, o, _)| o.ids.as_slice()).collect();
        let lat: Vec<&[usize]> = pairs.iter().map(|(_, _, l)| l.ids.as_slice()).collect();
        total += log_joint_terms(model, priors, &obs, obs_domain, &lat)?.iter().sum::<f64>();
    }
    Ok(total)
}

/// `log p(obs[r] | lat[r]) + log p_prior(lat[r])` per row.
fn log_joint_terms(
    model: &LatentModel,
    priors: &Priors,
    obs: &[&[usize]],
    obs_domain: Domain,
    lat: &[&[usize]],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let gen = model.generative.bind(&mut tape, false);
    let [p1, p2] = priors.bind(&mut tape);
    let prior = if obs_domain == Domain::D1 { p2 } else { p1 };
    let rec = teacher_forced(&mut tape, &gen, Source::Ids(lat), obs, obs_domain, None)?;
    let lp = lm_log_prob_batch(&mut tape, &prior, LmInput::Ids(lat))?;
    let (a, b) = (tape.value(rec), tape.value(lp));
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

/// Number of sequences of length `1..=max_len` over `support` symbols.
pub fn enumeration_size(support: usize, max_len: usize) -> u128 {
    let mut total: u128 = 0;
    let mut layer: u128 = 1;
    for _ in 0..max_len {
        layer = layer.saturating_mul(support as u128);
        total = total.saturating_add(layer);
    }
    total
}

/// Every sequence of length `1..=max_len` over `support`, shortest first,
/// lexicographic within a length.
pub fn enumerate_sequences(support: &[usize], max_len: usize) -> Result<Vec<Vec<usize>>> {
    if support.is_empty() {
        return Err(Error::Empty("latent support"));
    }
    let needed = enumeration_size(support.len(), max_len);
    if needed > ENUMERATION_BOUND {
        return Err(Error::BudgetExceeded {
            needed,
            bound: ENUMERATION_BOUND,
        });
    }
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(needed as usize);
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * support.len());
        for prefix in &frontier {
            for &s in support {
                let mut seq = prefix.clone();
                seq.push(s);
                next.push(seq);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(out)
}

/// Latent sequences with their log joint terms.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub latents: Vec<Vec<usize>>,
    pub log_joint: Vec<f64>,
}

const CHUNK: usize = 512;

/// Log joint of `obs` (observed in `side`) with every latent over `support`.
pub fn joint_table(
    obs: &Sequence,
    side: Domain,
    model: &LatentModel,
    priors: &Priors,
    support: &[usize],
    max_len: usize,
) -> Result<JointTable> {
    if obs.is_empty() {
        return Err(Error::Empty("observed sequence"));
    }
    let latents = enumerate_sequences(support, max_len)?;
    let mut log_joint = Vec::with_capacity(latents.len());
    for chunk in latents.chunks(CHUNK) {
        let lat: Vec<&[usize]> = chunk.iter().map(|l| l.as_slice()).collect();
        let obs_rows: Vec<&[usize]> = vec![obs.ids.as_slice(); chunk.len()];
        log_joint.extend(log_joint_terms(model, priors, &obs_rows, side, &lat)?);
    }
    Ok(JointTable { latents, log_joint })
}

/// `log Σ_latent p(obs | latent) p_prior(latent)` over latents of length
/// `1..=max_len` drawn from `support`.
pub fn exact_marginal_log_likelihood(
    obs: &Sequence,
    side: Domain,
    model: &LatentModel,
    priors: &Priors,
    support: &[usize],
    max_len: usize,
) -> Result<f64> {
    let table = joint_table(obs, side, model, priors, support, max_len)?;
    Ok(math::log_sum_exp(&table.log_joint))
}

/// Normalized distribution over enumerated latent sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub entries: Vec<PosteriorEntry>,
    /// Log normalizer; for a posterior this is the exact log marginal.
    pub log_normalizer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEntry {
    pub latent: Vec<usize>,
    /// Unnormalized log weight.
    pub log_weight: f64,
    pub prob: f64,
}

impl LatentPosterior {
    /// Normalizes log weights with a single-pass log-sum-exp.
    pub fn from_log_weights(latents: Vec<Vec<usize>>, log_weights: Vec<f64>) -> Result<Self> {
        if latents.is_empty() {
            return Err(Error::Empty("latent table"));
        }
        let z = math::log_sum_exp(&log_weights);
        if !z.is_finite() {
            return Err(Error::NonFinite { term: "log normalizer" });
        }
        let entries = latents
            .into_iter()
            .zip(log_weights)
            .map(|(latent, lw)| PosteriorEntry {
                latent,
                log_weight: lw,
                prob: math::exp(lw - z),
            })
            .collect();
        Ok(Self {
            entries,
            log_normalizer: z,
        })
    }

    pub fn probs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.prob).collect()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.log_weight - self.log_normalizer).collect()
    }

    /// Tab-separated rows: latent tokens, log weight, probability.
    pub fn to_table(&self, vocab: Option<&Vocab>) -> String {
        let mut out = String::from("latent\tlog_joint\tposterior\n");
        for e in &self.entries {
            let latent = match vocab {
                Some(v) => v.decode(&Sequence::new(e.latent.clone())),
                None => e
                    .latent
                    .iter()
                    .map(|id| format!("{id}"))
                    .collect::<Vec<_>>()
                    .join(" "),
            };
            let _ = writeln!(out, "{latent}\t{:.17e}\t{:.17e}", e.log_weight, e.prob);
        }
        out
    }
}

/// `p(latent | obs)` over every enumerated latent.
pub fn exact_posterior(
    obs: &Sequence,
    side: Domain,
    model: &LatentModel,
    priors: &Priors,
    support: &[usize],
    max_len: usize,
) -> Result<LatentPosterior> {
    let table = joint_table(obs, side, model, priors, support, max_len)?;
    LatentPosterior::from_log_weights(table.latents, table.log_joint)
}

/// The inference network's distribution `q(latent | obs)` restricted to the
/// enumerated latents and renormalized there.
pub fn exact_q(
    obs: &Sequence,
    side: Domain,
    model: &LatentModel,
    support: &[usize],
    max_len: usize,
) -> Result<LatentPosterior> {
    if obs.is_empty() {
        return Err(Error::Empty("observed sequence"));
    }
    let latents = enumerate_sequences(support, max_len)?;
    let mut log_q = Vec::with_capacity(latents.len());
    for chunk in latents.chunks(CHUNK) {
        let mut tape = Tape::new();
        let q = model.q().bind(&mut tape, false);
        let lat: Vec<&[usize]> = chunk.iter().map(|l| l.as_slice()).collect();
        let src: Vec<&[usize]> = vec![obs.ids.as_slice(); chunk.len()];
        let v = teacher_forced(&mut tape, &q, Source::Ids(&src), &lat, side.other(), None)?;
        log_q.extend_from_slice(tape.value(v));
    }
    LatentPosterior::from_log_weights(latents, log_q)
}

/// `E_q[log p(obs, latent) − log q(latent)]` with `q` and the joint aligned entry by entry.
pub fn exact_elbo(q: &LatentPosterior, joint: &JointTable) -> Result<f64> {
    if q.entries.len() != joint.latents.len() {
        return Err(Error::Misaligned(format!(
            "{} q entries against {} joint entries",
            q.entries.len(),
            joint.latents.len()
        )));
    }
    let mut total = 0.0;
    for (e, (lat, lj)) in q.entries.iter().zip(joint.latents.iter().zip(&joint.log_joint)) {
        if &e.latent != lat {
            return Err(Error::Misaligned(String::from("latent order differs")));
        }
        if e.prob > 0.0 {
            total += e.prob * (lj - (e.log_weight - q.log_normalizer));
        }
    }
    Ok(total)
}

/// `KL(a ‖ b)` between two distributions over the same aligned entries.
pub fn kl_divergence(a: &LatentPosterior, b: &LatentPosterior) -> Result<f64> {
    if a.entries.len() != b.entries.len() {
        return Err(Error::Misaligned(String::from("distribution sizes differ")));
    }
    let (la, lb) = (a.log_probs(), b.log_probs());
    Ok(a
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.prob > 0.0)
        .map(|(i, e)| e.prob * (la[i] - lb[i]))
        .sum())
}

/// Log-sum-exp of the enumerated joint split by the first latent token; the
/// merged partial sums equal the single-pass marginal.
pub fn marginal_by_prefix(table: &JointTable) -> f64 {
    let mut parts: alloc::collections::BTreeMap<usize, LogSumExp> = alloc::collections::BTreeMap::new();
    for (lat, &lj) in table.latents.iter().zip(&table.log_joint) {
        parts.entry(lat[0]).or_default().push(lj);
    }
    let mut total = LogSumExp::new();
    for p in parts.values().rev() {
        total.merge(p);
    }
    total.value()
}

/// Test-time transfer of `input` into `direction` by greedy decoding
/// through the inference network.
pub fn transfer(model: &LatentModel, input: &Sequence, direction: Domain, max_len: usize) -> Result<Sequence> {
    greedy_decode(model.q(), input, direction, max_len)
}
