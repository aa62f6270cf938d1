//! Corpus generation, ciphers and batching.

use std::collections::BTreeMap;

use dlsm_core::data::{
    apply_cipher, batch_iter, build_vocab, cipher_vocab, decipherment_task, synth_bigram_corpus, BigramGenerator, CipherKey, Corpus,
    DecipherSpec,
};
use dlsm_core::nn::{Domain, Sequence, EOS, PAD, RESERVED};
use dlsm_core::Rng;

#[test]
fn synthetic_corpus_is_seeded_and_in_range() {
    let (a, _) = synth_bigram_corpus(9, 12, 200, 3..=7, RESERVED).unwrap();
    let (b, _) = synth_bigram_corpus(9, 12, 200, 3..=7, RESERVED).unwrap();
    let (c, _) = synth_bigram_corpus(10, 12, 200, 3..=7, RESERVED).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for s in &a {
        assert!((3..=7).contains(&s.len()));
        assert!(s.ids.iter().all(|&t| (RESERVED..RESERVED + 12).contains(&t)));
    }
    assert!(synth_bigram_corpus(1, 12, 10, 5..=4, 0).is_err());
    assert!(synth_bigram_corpus(1, 12, 0, 1..=4, 0).is_err());
}

/// Observed transition counts against the generating matrix, cell by cell,
/// within three binomial standard errors.
#[test]
fn bigram_frequencies_match_the_generator() {
    let mut rng = Rng::seed(21);
    let gen = BigramGenerator::random(5, 1.0, &mut rng).unwrap();
    let mut counts = vec![vec![0usize; 5]; 5];
    let mut tokens = 0;
    while tokens < 100_000 {
        let s = gen.sample(&(20..=20), &mut rng);
        tokens += s.len();
        for w in s.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
    }
    let mut cells = 0;
    let mut outside = 0;
    for (a, row) in counts.iter().enumerate() {
        let n: usize = row.iter().sum();
        if n < 100 {
            continue;
        }
        for (b, &c) in row.iter().enumerate() {
            let p = gen.transitions[a][b];
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
            cells += 1;
            if ((c as f64 / n as f64) - p).abs() > 3.0 * se + 1e-12 {
                outside += 1;
            }
        }
    }
    // Under the null about 0.3% of cells fall outside; allow one stray.
    assert!(cells >= 20);
    assert!(outside <= 1, "{outside} of {cells} cells outside three standard errors");
}

#[test]
fn cipher_by_hand() {
    let key = CipherKey::new([(4, 11), (5, 9), (6, 10), (7, 8), (8, 12)]).unwrap();
    let corpus = Corpus::new(vec![Sequence::new(vec![6, 4, 6])], Domain::D1, 13).unwrap();
    let out = apply_cipher(&corpus, &key, Domain::D2).unwrap();
    assert_eq!(out.sentences[0].ids, vec![10, 11, 10]);
    assert_eq!(out.sentences[0].domain, Some(Domain::D2));
    assert_eq!(key.inverse().apply(&out.sentences).unwrap()[0].ids, vec![6, 4, 6]);
    assert!(CipherKey::new([(4, 9), (5, 9)]).is_err());
    assert!(CipherKey::new([(1, 9)]).is_err());
    let uncovered = Corpus::new(vec![Sequence::new(vec![4, 9])], Domain::D1, 13).unwrap();
    assert!(apply_cipher(&uncovered, &key, Domain::D2).is_err());
}

#[test]
fn cipher_preserves_the_histogram_up_to_relabeling() {
    let (sents, _) = synth_bigram_corpus(4, 10, 300, 2..=9, RESERVED).unwrap();
    let mut rng = Rng::seed(4);
    let key = CipherKey::random(RESERVED..RESERVED + 10, RESERVED + 10, &mut rng).unwrap();
    let out = key.apply(&sents).unwrap();
    let hist = |xs: &[Sequence]| {
        let mut h = BTreeMap::new();
        for s in xs {
            for &t in &s.ids {
                *h.entry(t).or_insert(0usize) += 1;
            }
        }
        h
    };
    let (hp, hc) = (hist(&sents), hist(&out));
    for (p, n) in &hp {
        assert_eq!(hc[&key.get(*p).unwrap()], *n);
    }
    for (a, b) in sents.iter().zip(&out) {
        assert_eq!(a.len(), b.len());
        assert!(b.ids.iter().all(|&t| t >= RESERVED + 10));
    }
}

#[test]
fn decipherment_task_layout() {
    let spec = DecipherSpec {
        symbols: 6,
        sentences: 50,
        lens: 2..=4,
        validation: 10,
        test: 8,
    };
    let t = decipherment_task(3, &spec).unwrap();
    assert_eq!(t.vocab.len(), RESERVED + 12);
    assert_eq!(t.vocab.token(RESERVED), Some("p0"));
    assert_eq!(t.vocab.token(RESERVED + 6), Some("c0"));
    assert_eq!((t.train_plain.len(), t.train_cipher.len()), (50, 50));
    assert_eq!((t.val_plain.len(), t.val_cipher.len()), (10, 10));
    assert_eq!(t.key.apply(&t.test_plain).unwrap().iter().map(|s| &s.ids).collect::<Vec<_>>(), t.test_cipher.iter().map(|s| &s.ids).collect::<Vec<_>>());
    let plain: Vec<usize> = t.train_plain.iter().flat_map(|s| s.ids.clone()).collect();
    let cipher: Vec<usize> = t.train_cipher.iter().flat_map(|s| s.ids.clone()).collect();
    assert!(plain.iter().all(|&x| x < RESERVED + 6));
    assert!(cipher.iter().all(|&x| x >= RESERVED + 6));
    assert_eq!(decipherment_task(3, &spec).unwrap(), t);
    assert_eq!(cipher_vocab(6).unwrap(), t.vocab);
}

#[test]
fn vocabulary_construction() {
    let v = build_vocab(["a b a"], 1).unwrap();
    assert_eq!((v.get("a"), v.get("b")), (Some(4), Some(5)));
    assert!(build_vocab(["a b a"], 5).unwrap().is_empty());
    assert!(build_vocab(["a"], 0).is_err());
}

#[test]
fn batches_partition_the_corpus() {
    let (sents, _) = synth_bigram_corpus(2, 8, 103, 1..=9, RESERVED).unwrap();
    let a = batch_iter(&sents, 10, &mut Rng::seed(5), 3).unwrap();
    let b = batch_iter(&sents, 10, &mut Rng::seed(5), 3).unwrap();
    assert_eq!(a, b);
    let mut seen: Vec<usize> = a.iter().flat_map(|b| b.indices.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..103).collect::<Vec<_>>());
    for batch in &a {
        for (r, &i) in batch.indices.iter().enumerate() {
            let row = &batch.mask[r * batch.width..(r + 1) * batch.width];
            assert_eq!(row.iter().filter(|&&m| m).count(), sents[i].len() + 1);
            let ids = &batch.padded[r * batch.width..(r + 1) * batch.width];
            assert_eq!(&ids[..sents[i].len()], sents[i].ids.as_slice());
            assert_eq!(ids[sents[i].len()], EOS);
            assert!(ids[sents[i].len() + 1..].iter().all(|&t| t == PAD));
        }
    }
    assert!(batch_iter(&sents, 0, &mut Rng::seed(5), 3).is_err());
}

#[test]
fn corpus_rejects_empty_and_out_of_range() {
    assert!(Corpus::new(vec![Sequence::new(vec![])], Domain::D1, 8).is_err());
    assert!(Corpus::new(vec![Sequence::new(vec![9])], Domain::D1, 8).is_err());
    assert!(Corpus::new(vec![Sequence::new(vec![4, 7])], Domain::D1, 8).is_ok());
}
