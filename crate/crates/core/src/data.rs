//! Corpora, vocabulary construction, batching, and the synthetic
//! bigram-language and substitution-cipher generators.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::nn::{Domain, Sequence, Vocab, PAD, RESERVED};
use crate::rng::Rng;

/// Sentences of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Sequence>,
    pub domain: Domain,
}

impl Corpus {
    /// Builds a corpus, rejecting empty sentences and ids outside `0..vocab_size`.
    pub fn new(sentences: Vec<Sequence>, domain: Domain, vocab_size: usize) -> Result<Self> {
        for s in &sentences {
            if s.is_empty() {
                return Err(Error::Empty("sentence"));
            }
            if let Some(&id) = s.ids.iter().find(|&&id| id >= vocab_size || id < RESERVED) {
                return Err(Error::IdOutOfRange { id, size: vocab_size });
            }
        }
        let sentences = sentences
            .into_iter()
            .map(|s| Sequence::in_domain(s.ids, domain))
            .collect();
        Ok(Self { sentences, domain })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Total tokens, counting one EOS per sentence.
    pub fn predicted_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.len() + 1).sum()
    }

    pub fn ids(&self) -> Vec<&[usize]> {
        self.sentences.iter().map(|s| s.ids.as_slice()).collect()
    }

    /// Splits off the last `n` sentences.
    pub fn split_tail(mut self, n: usize) -> (Corpus, Corpus) {
        let at = self.sentences.len().saturating_sub(n);
        let tail = self.sentences.split_off(at);
        let domain = self.domain;
        (
            self,
            Corpus {
                sentences: tail,
                domain,
            },
        )
    }
}

/// Vocabulary of tokens seen at least `min_count` times across `lines`,
/// ordered by descending frequency with ties broken alphabetically.
pub fn build_vocab<'a>(lines: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Vocab> {
    if min_count == 0 {
        return Err(Error::NonPositive {
            what: "min_count",
            value: 0.0,
        });
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in lines {
        for tok in line.split_whitespace() {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && !crate::nn::RESERVED_TOKENS.contains(&t))
        .collect();
    // BTreeMap iteration is alphabetical and the sort is stable.
    kept.sort_by(|a, b| b.1.cmp(&a.1));
    Vocab::new(kept.into_iter().map(|(t, _)| t.to_string()))
}

/// Random bigram language over symbols `0..vocab_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramGenerator {
    pub initial: Vec<f64>,
    /// Row-stochastic `vocab_size × vocab_size` transition matrix.
    pub transitions: Vec<Vec<f64>>,
}

impl BigramGenerator {
    /// Rows drawn from a symmetric Dirichlet with the given concentration.
    pub fn random(vocab_size: usize, concentration: f64, rng: &mut Rng) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::OutOfRange {
                what: "vocab_size",
                range: ">= 2",
                value: vocab_size as f64,
            });
        }
        if !(concentration > 0.0) {
            return Err(Error::NonPositive {
                what: "concentration",
                value: concentration,
            });
        }
        let dirichlet = |rng: &mut Rng| {
            let g: Vec<f64> = (0..vocab_size).map(|_| rng.gamma(concentration)).collect();
            let total: f64 = g.iter().sum();
            if total > 0.0 {
                g.iter().map(|x| x / total).collect()
            } else {
                vec![1.0 / vocab_size as f64; vocab_size]
            }
        };
        let initial = dirichlet(rng);
        let transitions = (0..vocab_size).map(|_| dirichlet(rng)).collect();
        Ok(Self { initial, transitions })
    }

    pub fn vocab_size(&self) -> usize {
        self.initial.len()
    }

    /// One sentence of symbols with a length drawn uniformly from `lens`.
    pub fn sample(&self, lens: &RangeInclusive<usize>, rng: &mut Rng) -> Vec<usize> {
        let n = lens.start() + rng.below(lens.end() - lens.start() + 1);
        let mut out = Vec::with_capacity(n);
        let mut prev = rng.categorical(&self.initial);
        out.push(prev);
        for _ in 1..n {
            prev = rng.categorical(&self.transitions[prev]);
            out.push(prev);
        }
        out
    }
}

/// Dirichlet concentration of the synthetic generator's rows.
pub const DEFAULT_CONCENTRATION: f64 = 0.2;

/// Sentences from a fresh random bigram language; symbols are offset by
/// `id_offset` to land in a vocabulary block.
pub fn synth_bigram_corpus(
    seed: u64,
    vocab_size: usize,
    n_sentences: usize,
    lens: RangeInclusive<usize>,
    id_offset: usize,
) -> Result<(Vec<Sequence>, BigramGenerator)> {
    if n_sentences == 0 {
        return Err(Error::Empty("corpus request"));
    }
    if lens.is_empty() || *lens.start() == 0 {
        return Err(Error::Config(alloc::format!("degenerate length range {lens:?}")));
    }
    let mut rng = Rng::seed(seed);
    let gen = BigramGenerator::random(vocab_size, DEFAULT_CONCENTRATION, &mut rng)?;
    let sents = (0..n_sentences)
        .map(|_| Sequence::new(gen.sample(&lens, &mut rng).into_iter().map(|s| s + id_offset).collect()))
        .collect();
    Ok((sents, gen))
}

/// Bijective substitution over token ids; reserved ids map to themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherKey {
    forward: BTreeMap<usize, usize>,
}

impl CipherKey {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut forward = BTreeMap::new();
        let mut seen = BTreeMap::new();
        for (p, c) in pairs {
            if p < RESERVED || c < RESERVED {
                return Err(Error::Config(alloc::format!("cipher key maps reserved id ({p}, {c})")));
            }
            if forward.insert(p, c).is_some() || seen.insert(c, p).is_some() {
                return Err(Error::Config(alloc::format!("cipher key is not a bijection at ({p}, {c})")));
            }
        }
        Ok(Self { forward })
    }

    /// Random bijection from `plain` ids onto a disjoint block of the same
    /// size starting at `cipher_start`.
    pub fn random(plain: core::ops::Range<usize>, cipher_start: usize, rng: &mut Rng) -> Result<Self> {
        let mut perm: Vec<usize> = (0..plain.len()).collect();
        rng.shuffle(&mut perm);
        Self::new(plain.clone().zip(perm).map(|(p, k)| (p, cipher_start + k)))
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.forward.iter().map(|(&p, &c)| (p, c))
    }

    pub fn get(&self, plain: usize) -> Option<usize> {
        if plain < RESERVED {
            Some(plain)
        } else {
            self.forward.get(&plain).copied()
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            forward: self.forward.iter().map(|(&p, &c)| (c, p)).collect(),
        }
    }

    /// Token-wise substitution of every sentence.
    pub fn apply(&self, sentences: &[Sequence]) -> Result<Vec<Sequence>> {
        sentences
            .iter()
            .map(|s| {
                let ids = s
                    .ids
                    .iter()
                    .map(|&id| self.get(id).ok_or(Error::UncoveredToken(id)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Sequence { ids, domain: s.domain })
            })
            .collect()
    }
}

/// Enciphers `corpus` into `domain`.
pub fn apply_cipher(corpus: &Corpus, key: &CipherKey, domain: Domain) -> Result<Corpus> {
    let sentences = key.apply(&corpus.sentences)?;
    Ok(Corpus {
        sentences: sentences
            .into_iter()
            .map(|s| Sequence::in_domain(s.ids, domain))
            .collect(),
        domain,
    })
}

/// Surface tokens of a two-block decipherment vocabulary: `p0..` then `c0..`.
pub fn cipher_vocab(symbols: usize) -> Result<Vocab> {
    let plain = (0..symbols).map(|i| alloc::format!("p{i}"));
    let cipher = (0..symbols).map(|i| alloc::format!("c{i}"));
    Vocab::new(plain.chain(cipher).collect::<Vec<String>>())
}

/// Padded batch of sentence indices into a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// Row-major `[rows, width]` ids: tokens, EOS, then PAD.
    pub padded: Vec<usize>,
    pub width: usize,
    /// True where `padded` holds a token or EOS.
    pub mask: Vec<bool>,
}

/// Shuffled batches covering every sentence once. Sentences are length-sorted
/// within windows of `sort_buffer` batches to limit padding, and the batch
/// order is shuffled afterwards.
pub fn batch_iter(corpus: &[Sequence], batch_size: usize, rng: &mut Rng, sort_buffer: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::NonPositive {
            what: "batch_size",
            value: 0.0,
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    rng.shuffle(&mut order);
    let window = batch_size * sort_buffer.max(1);
    let mut batches = Vec::new();
    for chunk in order.chunks_mut(window) {
        chunk.sort_by_key(|&i| corpus[i].len());
        for idx in chunk.chunks(batch_size) {
            let width = idx.iter().map(|&i| corpus[i].len()).max().unwrap_or(0) + 1;
            let mut padded = vec![PAD; idx.len() * width];
            let mut mask = vec![false; idx.len() * width];
            for (r, &i) in idx.iter().enumerate() {
                let s = &corpus[i].ids;
                padded[r * width..r * width + s.len()].copy_from_slice(s);
                padded[r * width + s.len()] = crate::nn::EOS;
                for m in &mut mask[r * width..r * width + s.len() + 1] {
                    *m = true;
                }
            }
            batches.push(Batch {
                indices: idx.to_vec(),
                padded,
                width,
                mask,
            });
        }
    }
    rng.shuffle(&mut batches);
    Ok(batches)
}


/// Sizes of the synthetic decipherment task.
#[derive(Debug, Clone, PartialEq)]
pub struct DecipherSpec {
    pub symbols: usize,
    pub sentences: usize,
    pub lens: RangeInclusive<usize>,
    pub validation: usize,
    pub test: usize,
}

impl Default for DecipherSpec {
    fn default() -> Self {
        Self {
            symbols: 30,
            sentences: 5000,
            lens: 4..=10,
            validation: 200,
            test: 200,
        }
    }
}

/// Non-parallel plaintext (D1) and ciphertext (D2) corpora drawn from one
/// bigram language, with parallel test references.
#[derive(Debug, Clone, PartialEq)]
pub struct DecipherTask {
    pub vocab: Vocab,
    pub key: CipherKey,
    pub generator: BigramGenerator,
    pub train_plain: Vec<Sequence>,
    pub train_cipher: Vec<Sequence>,
    pub val_plain: Vec<Sequence>,
    pub val_cipher: Vec<Sequence>,
    pub test_plain: Vec<Sequence>,
    /// Encipherment of `test_plain`, sentence by sentence.
    pub test_cipher: Vec<Sequence>,
}

/// Builds a task: plain ids `4..4+symbols`, cipher ids in the block after them.
/// Each domain sees disjoint sentences, so no training pair is parallel.
pub fn decipherment_task(seed: u64, spec: &DecipherSpec) -> Result<DecipherTask> {
    let per_domain = spec.sentences + spec.validation;
    let total = 2 * per_domain + spec.test;
    let (mut sents, generator) = synth_bigram_corpus(seed, spec.symbols, total, spec.lens.clone(), RESERVED)?;
    let mut rng = Rng::seed(seed ^ 0xc1fe_c1fe);
    let key = CipherKey::random(RESERVED..RESERVED + spec.symbols, RESERVED + spec.symbols, &mut rng)?;
    let tag = |xs: Vec<Sequence>, d: Domain| -> Vec<Sequence> { xs.into_iter().map(|s| Sequence::in_domain(s.ids, d)).collect() };
    let test_plain = tag(sents.split_off(2 * per_domain), Domain::D1);
    let cipher_side = sents.split_off(per_domain);
    let mut plain_side = tag(sents, Domain::D1);
    let mut cipher_side = tag(key.apply(&cipher_side)?, Domain::D2);
    let val_plain = plain_side.split_off(spec.sentences);
    let val_cipher = cipher_side.split_off(spec.sentences);
    let test_cipher = tag(key.apply(&test_plain)?, Domain::D2);
    Ok(DecipherTask {
        vocab: cipher_vocab(spec.symbols)?,
        key,
        generator,
        train_plain: plain_side,
        train_cipher: cipher_side,
        val_plain,
        val_cipher,
        test_plain,
        test_cipher,
    })
}
