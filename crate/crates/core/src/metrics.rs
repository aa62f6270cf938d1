//! Evaluation: corpus BLEU, naive Bayes domain classification, token-mapping
//! accuracy for ciphers, and per-word bound reports.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::CipherKey;
use crate::error::{Error, Result};
use crate::latent::{LatentModel, Priors};
use crate::lm::perplexity;
use crate::math;
use crate::nn::{default_max_len, greedy_decode_batch, Domain, Sequence};
use crate::rng::Rng;
use crate::vi::{evaluate_elbo, ReconDecoding, TrainConfig};

fn ngram_counts(seq: &[usize], n: usize) -> BTreeMap<&[usize], usize> {
    let mut out = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU on a 0–100 scale, unsmoothed, one reference per hypothesis.
pub fn corpus_bleu(hyps: &[Sequence], refs: &[Sequence], max_n: usize) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Misaligned(format!("{} hypotheses against {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if !(1..=4).contains(&max_n) {
        return Err(Error::OutOfRange {
            what: "max_n",
            range: "1..=4",
            value: max_n as f64,
        });
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.ids.len();
        ref_len += r.ids.len();
        for n in 1..=max_n {
            let rc = ngram_counts(&r.ids, n);
            for (g, c) in ngram_counts(&h.ids, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 || (0..max_n).any(|i| matched[i] == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..max_n).map(|i| math::ln(matched[i] as f64 / total[i] as f64)).sum::<f64>() / max_n as f64;
    let bp = if hyp_len < ref_len {
        1.0 - ref_len as f64 / hyp_len as f64
    } else {
        0.0
    };
    Ok(100.0 * math::exp(log_p + bp))
}

pub fn bleu1(hyps: &[Sequence], refs: &[Sequence]) -> Result<f64> {
    corpus_bleu(hyps, refs, 1)
}

/// BLEU-4 of outputs against their own inputs.
pub fn self_bleu(outputs: &[Sequence], sources: &[Sequence]) -> Result<f64> {
    corpus_bleu(outputs, sources, 4)
}

/// Multinomial naive Bayes over unigrams with add-one smoothing and equal priors.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayes {
    log_probs: [BTreeMap<usize, f64>; 2],
}

impl NaiveBayes {
    pub fn train(d1: &[Sequence], d2: &[Sequence]) -> Result<Self> {
        if d1.is_empty() || d2.is_empty() {
            return Err(Error::Empty("classifier training corpus"));
        }
        let mut counts = [BTreeMap::new(), BTreeMap::new()];
        let mut types = BTreeMap::new();
        for (c, corpus) in [d1, d2].into_iter().enumerate() {
            for s in corpus {
                for &t in &s.ids {
                    *counts[c].entry(t).or_insert(0usize) += 1;
                    types.insert(t, ());
                }
            }
        }
        let v = types.len() as f64;
        let log_probs = [0, 1].map(|c| {
            let total: usize = counts[c].values().sum();
            let denom = total as f64 + v;
            types
                .keys()
                .map(|&t| {
                    let k = counts[c].get(&t).copied().unwrap_or(0) as f64;
                    (t, math::ln((k + 1.0) / denom))
                })
                .collect()
        });
        Ok(Self { log_probs })
    }

    /// `log p(s | D1) − log p(s | D2)`; tokens unseen in training are skipped.
    pub fn log_ratio(&self, seq: &[usize]) -> f64 {
        seq.iter()
            .filter_map(|t| Some(self.log_probs[0].get(t)? - self.log_probs[1].get(t)?))
            .sum()
    }

    /// Predicted domain; exact ties go to D1.
    pub fn classify(&self, seq: &[usize]) -> Domain {
        if self.log_ratio(seq) >= 0.0 {
            Domain::D1
        } else {
            Domain::D2
        }
    }

    /// Fraction of `seqs` predicted as `label`.
    pub fn accuracy(&self, seqs: &[Sequence], label: Domain) -> Result<f64> {
        if seqs.is_empty() {
            return Err(Error::Empty("labeled corpus"));
        }
        let hits = seqs.iter().filter(|s| self.classify(&s.ids) == label).count();
        Ok(hits as f64 / seqs.len() as f64)
    }
}

pub fn naive_bayes_classifier(train_d1: &[Sequence], train_d2: &[Sequence]) -> Result<NaiveBayes> {
    NaiveBayes::train(train_d1, train_d2)
}

/// Accuracy over `(sequence, label)` pairs.
pub fn classify_accuracy(classifier: &NaiveBayes, labeled: &[(Sequence, Domain)]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled corpus"));
    }
    let hits = labeled.iter().filter(|(s, d)| classifier.classify(&s.ids) == *d).count();
    Ok(hits as f64 / labeled.len() as f64)
}

/// Fraction of cipher token types in `inputs` whose most frequent aligned
/// output token is their plaintext under `key`.
///
/// Alignment is positional over the shorter of input and output; modal ties
/// resolve to the lowest id, and a type never aligned counts as a miss.
pub fn token_mapping_accuracy(inputs: &[Sequence], outputs: &[Sequence], key: &CipherKey) -> Result<f64> {
    if inputs.len() != outputs.len() {
        return Err(Error::Misaligned(format!("{} inputs against {} outputs", inputs.len(), outputs.len())));
    }
    let inverse = key.inverse();
    let mut seen: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (i, o) in inputs.iter().zip(outputs) {
        for &c in &i.ids {
            seen.entry(c).or_default();
        }
        for (&c, &p) in i.ids.iter().zip(&o.ids) {
            *seen.entry(c).or_default().entry(p).or_insert(0) += 1;
        }
    }
    if seen.is_empty() {
        return Err(Error::Empty("cipher inputs"));
    }
    let mut correct = 0usize;
    for (c, hist) in &seen {
        let truth = inverse.get(*c).ok_or(Error::UncoveredToken(*c))?;
        let modal = hist.iter().fold(None, |best: Option<(usize, usize)>, (&t, &n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((t, n)),
        });
        if modal.map(|(t, _)| t) == Some(truth) {
            correct += 1;
        }
    }
    Ok(correct as f64 / seen.len() as f64)
}

/// Greedy transfer of every input into `direction` through the inference network.
pub fn transfer_corpus(model: &LatentModel, inputs: &[Sequence], direction: Domain) -> Result<Vec<Sequence>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(64) {
        let srcs: Vec<&[usize]> = chunk.iter().map(|s| s.ids.as_slice()).collect();
        let max_lens: Vec<usize> = srcs.iter().map(|s| default_max_len(s.len())).collect();
        let decoded = greedy_decode_batch(model.q(), &srcs, direction, &max_lens)?;
        out.extend(decoded.seqs.into_iter().map(|ids| Sequence::in_domain(ids, direction)));
    }
    Ok(out)
}

/// Mean and sample standard deviation of per-word bounds, one evaluation per seed.
pub fn elbo_report_seeded(
    model: &LatentModel,
    priors: &Priors,
    x: &[Sequence],
    y: &[Sequence],
    config: &TrainConfig,
    mode: ReconDecoding,
    seeds: &[u64],
) -> Result<(f64, f64)> {
    if seeds.is_empty() {
        return Err(Error::Empty("repeats"));
    }
    let mut values = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let mut rng = Rng::seed(s);
        values.push(evaluate_elbo(model, priors, x, y, config, mode, &mut rng)?.per_word());
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    } else {
        0.0
    };
    Ok((mean, std))
}

/// Per-word bound over `n_repeats` evaluations. Greedy mode reuses one seed
/// for every repeat, so its deviation is zero; sample mode draws a fresh seed each time.
#[allow(clippy::too_many_arguments)]
pub fn elbo_report(
    model: &LatentModel,
    priors: &Priors,
    x: &[Sequence],
    y: &[Sequence],
    config: &TrainConfig,
    n_repeats: usize,
    mode: ReconDecoding,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    if n_repeats == 0 {
        return Err(Error::NonPositive {
            what: "n_repeats",
            value: 0.0,
        });
    }
    let seeds: Vec<u64> = match mode {
        ReconDecoding::Greedy => {
            let s = rng.next_u64();
            (0..n_repeats).map(|_| s).collect()
        }
        ReconDecoding::Sample => (0..n_repeats).map(|_| rng.next_u64()).collect(),
    };
    elbo_report_seeded(model, priors, x, y, config, mode, &seeds)
}

/// Aggregate test-set report. BLEU is computed over token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Naive Bayes accuracy of outputs against their target domain.
    pub accuracy: f64,
    pub bleu_ref: Option<f64>,
    pub bleu_self: f64,
    /// Perplexity of outputs in D1 under the D1 prior.
    pub ppl_d1: f64,
    pub ppl_d2: f64,
    /// Perplexity of the D1 test set itself.
    pub test_ppl_d1: f64,
    pub test_ppl_d2: f64,
    pub elbo_per_word_mean: f64,
    pub elbo_per_word_std: f64,
    pub n_examples: usize,
}

const REPORT_KEYS: [&str; 10] = [
    "nb_accuracy",
    "bleu_ref",
    "bleu_self",
    "ppl_d1",
    "ppl_d2",
    "test_ppl_d1",
    "test_ppl_d2",
    "elbo_per_word_mean",
    "elbo_per_word_std",
    "n_examples",
];

impl EvalReport {
    fn values(&self) -> [String; 10] {
        [
            format!("{}", self.accuracy),
            self.bleu_ref.map_or_else(|| String::from("NA"), |b| format!("{b}")),
            format!("{}", self.bleu_self),
            format!("{}", self.ppl_d1),
            format!("{}", self.ppl_d2),
            format!("{}", self.test_ppl_d1),
            format!("{}", self.test_ppl_d2),
            format!("{}", self.elbo_per_word_mean),
            format!("{}", self.elbo_per_word_std),
            format!("{}", self.n_examples),
        ]
    }

    /// One `key=value` line per field.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in REPORT_KEYS.iter().zip(self.values()) {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn header(delim: char) -> String {
        REPORT_KEYS.join(&String::from(delim))
    }

    pub fn to_row(&self, delim: char) -> String {
        self.values().join(&String::from(delim))
    }

    pub fn check_invariants(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("report field {what} out of range")));
        if !(0.0..=1.0).contains(&self.accuracy) {
            return bad("accuracy");
        }
        if !(0.0..=100.0).contains(&self.bleu_self) || self.bleu_ref.is_some_and(|b| !(0.0..=100.0).contains(&b)) {
            return bad("bleu");
        }
        if [self.ppl_d1, self.ppl_d2, self.test_ppl_d1, self.test_ppl_d2].iter().any(|&p| !(p >= 1.0)) {
            return bad("perplexity");
        }
        Ok(())
    }
}

/// Parallel references for the test sets: the D2 rendering of each D1
/// sentence and the D1 rendering of each D2 sentence.
pub struct References<'a> {
    pub x_to_y: &'a [Sequence],
    pub y_to_x: &'a [Sequence],
}

/// Settings for the bound columns of [`full_eval`].
pub struct ElboSettings<'a> {
    pub config: &'a TrainConfig,
    pub repeats: usize,
    pub mode: ReconDecoding,
    pub seed: u64,
}

/// Transfers both test sets and computes every applicable metric.
pub fn full_eval(
    model: &LatentModel,
    priors: &Priors,
    classifier: &NaiveBayes,
    test_x: &[Sequence],
    test_y: &[Sequence],
    references: Option<References<'_>>,
    elbo: &ElboSettings<'_>,
) -> Result<(EvalReport, [Vec<Sequence>; 2])> {
    let out_y = transfer_corpus(model, test_x, Domain::D2)?;
    let out_x = transfer_corpus(model, test_y, Domain::D1)?;
    let n = out_x.len() + out_y.len();
    let hits = out_y.iter().filter(|s| classifier.classify(&s.ids) == Domain::D2).count()
        + out_x.iter().filter(|s| classifier.classify(&s.ids) == Domain::D1).count();
    let outputs: Vec<Sequence> = out_y.iter().chain(&out_x).cloned().collect();
    let sources: Vec<Sequence> = test_x.iter().chain(test_y).cloned().collect();
    let bleu_ref = match references {
        Some(r) => {
            let refs: Vec<Sequence> = r.x_to_y.iter().chain(r.y_to_x).cloned().collect();
            Some(bleu1(&outputs, &refs)?)
        }
        None => None,
    };
    let mut rng = Rng::seed(elbo.seed);
    let (mean, std) = elbo_report(model, priors, test_x, test_y, elbo.config, elbo.repeats, elbo.mode, &mut rng)?;
    let report = EvalReport {
        accuracy: hits as f64 / n.max(1) as f64,
        bleu_ref,
        bleu_self: self_bleu(&outputs, &sources)?,
        ppl_d1: perplexity(priors.get(Domain::D1), &out_x)?,
        ppl_d2: perplexity(priors.get(Domain::D2), &out_y)?,
        test_ppl_d1: perplexity(priors.get(Domain::D1), test_x)?,
        test_ppl_d2: perplexity(priors.get(Domain::D2), test_y)?,
        elbo_per_word_mean: mean,
        elbo_per_word_std: std,
        n_examples: n,
    };
    Ok((report, [out_x, out_y]))
}
