//! Values checked against independent recomputation: hand arithmetic,
//! stepwise re-scoring, exhaustive enumeration and sampling frequencies.

use dlsm_core::latent::{exact_posterior, joint_table, LatentModel, Priors};
use dlsm_core::lm::{lm_log_prob, lm_sample, next_token_distribution, perplexity, pretrain_lm, LmConfig, LmParams, LmTrainConfig};
use dlsm_core::nn::{
    decode_logprob, decoder_step, encode, encode_sequence, greedy_decode, sample_decode, start_decoder, Domain, ModelConfig, ModelParams,
    Sequence, Source, BOS, EOS,
};
use dlsm_core::optim::{Adam, AdamConfig};
use dlsm_core::vi::{reinforce_loss, self_reconstruction_loss, Baseline};
use dlsm_core::{finite_difference_check, Rng, Tape, Tensor};

fn small_model(seed: u64, v: usize) -> ModelParams {
    let config = ModelConfig {
        vocab_size: v,
        embed_dim: 5,
        hidden_dim: 6,
        pool_window: 1,
        dropout: 0.3,
        input_feeding: true,
    };
    ModelParams::init(config, &mut Rng::seed(seed)).unwrap()
}

fn small_lm(seed: u64, v: usize) -> LmParams {
    LmParams::init(
        LmConfig {
            vocab_size: v,
            embed_dim: 5,
            hidden_dim: 6,
        },
        &mut Rng::seed(seed),
    )
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[test]
fn matmul_and_max_pool_by_hand() {
    let mut tape = Tape::new();
    let a = tape.input(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = tape.input(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c), &[19.0, 22.0, 43.0, 50.0]);

    let s = tape.input(vec![1, 4, 2], vec![1.0, 5.0, 2.0, 4.0, 3.0, 0.0, 0.0, 9.0]).unwrap();
    let (p, lens) = tape.max_pool(s, &[4], 2).unwrap();
    assert_eq!(tape.value(p), &[2.0, 5.0, 3.0, 9.0]);
    assert_eq!(lens, vec![2]);
}

#[test]
fn tanh_slope_at_a_point() {
    let mut tape = Tape::new();
    let x = tape.param(&Tensor::new(vec![1], vec![0.3]).unwrap());
    let y = tape.tanh(x).unwrap();
    let y = tape.sum(y).unwrap();
    tape.backward(y).unwrap();
    let h = 1e-5;
    let numeric = ((0.3f64 + h).tanh() - (0.3f64 - h).tanh()) / (2.0 * h);
    assert!((tape.grad_or_zeros(x)[0] - numeric).abs() < 1e-6);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_one_hot() {
    let logits = vec![0.2, -1.0, 0.7, 0.1, 1.5, 0.0, -0.3, 0.4];
    let targets = [2usize, 0];
    let mut tape = Tape::new();
    let l = tape.param(&Tensor::new(vec![2, 4], logits.clone()).unwrap());
    let ce = tape.cross_entropy(l, &targets, &[1.0, 1.0]).unwrap();
    let loss = tape.sum(ce).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad_or_zeros(l);
    for (r, &t) in targets.iter().enumerate() {
        let row = &logits[r * 4..r * 4 + 4];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        for k in 0..4 {
            let expected = row[k].exp() / z - if k == t { 1.0 } else { 0.0 };
            assert!((g[r * 4 + k] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn straight_through_sample_replays_from_the_seed() {
    let logits = vec![0.3, -0.2, 0.9, 0.0, 0.1, 0.1, -1.0, 2.0, 0.5];
    let draw = |seed: u64| {
        let mut rng = Rng::seed(seed);
        let noise: Vec<f64> = (0..9).map(|_| rng.gumbel()).collect();
        let mut tape = Tape::new();
        let l = tape.input(vec![3, 3], logits.clone()).unwrap();
        let y = tape.gumbel_st(l, &noise, 0.5).unwrap();
        (tape.value(y).to_vec(), noise)
    };
    let (a, noise) = draw(4);
    assert_eq!(a, draw(4).0);
    for r in 0..3 {
        let perturbed: Vec<f64> = (0..3).map(|k| logits[r * 3 + k] + noise[r * 3 + k]).collect();
        let hot = argmax(&perturbed);
        for k in 0..3 {
            assert_eq!(a[r * 3 + k], if k == hot { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn three_layer_network_gradients() {
    let mut rng = Rng::seed(31);
    let mut t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform() - 0.5).collect()).unwrap()
    };
    let params = [t(&[3, 4]), t(&[4, 5]), t(&[5]), t(&[5, 5]), t(&[5]), t(&[5, 6]), t(&[6])];
    let r = finite_difference_check(
        |tape, v| {
            let h1 = tape.affine(v[0], v[1], v[2])?;
            let h1 = tape.tanh(h1)?;
            let h2 = tape.affine(h1, v[3], v[4])?;
            let h2 = tape.sigmoid(h2)?;
            let out = tape.affine(h2, v[5], v[6])?;
            let ce = tape.cross_entropy(out, &[1, 5, 0], &[1.0, 1.0, 1.0])?;
            tape.sum(ce)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
}

#[test]
fn encoder_states_depend_on_every_used_embedding_row() {
    let v = 9;
    let params = small_model(2, v);
    let seq = Sequence::new(vec![4, 6, 4]);
    let base = encode_sequence(&params, &seq).unwrap();
    assert_eq!(base.shape(), &[4, 6]);
    for (row, used) in [(4, true), (6, true), (EOS, true), (5, false), (8, false)] {
        let mut p = params.clone();
        let embed = &mut p.tensors_mut()[0];
        let e = embed.shape()[1];
        embed.data_mut()[row * e] += 1e-3;
        let moved = encode_sequence(&p, &seq).unwrap();
        let changed = moved.data().iter().zip(base.data()).any(|(a, b)| a != b);
        assert_eq!(changed, used, "embedding row {row}");
    }
}

/// Teacher-forced score summed one decoder step at a time.
fn stepwise_logprob(params: &ModelParams, src: &[usize], tgt: &[usize], domain: Domain) -> f64 {
    let mut tape = Tape::new();
    let m = params.bind(&mut tape, false);
    let srcs = [src];
    let enc = encode(&mut tape, &m, Source::Ids(&srcs)).unwrap();
    let mut st = start_decoder(&mut tape, &m, &enc, domain).unwrap();
    let mut prev = BOS;
    let mut total = 0.0;
    for &tok in tgt.iter().chain(std::iter::once(&EOS)) {
        let input = tape.embedding(m.embed, &[prev]).unwrap();
        let (logits, _) = decoder_step(&mut tape, &m, &mut st, input, None).unwrap();
        let row = tape.value(logits).to_vec();
        let z = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        total += row[tok] - z;
        prev = tok;
    }
    total
}

#[test]
fn sequence_score_is_the_sum_of_step_scores() {
    let params = small_model(3, 9);
    let (src, tgt) = (Sequence::new(vec![4, 5, 8]), Sequence::new(vec![7, 7, 6, 5]));
    let mut tape = Tape::new();
    let m = params.bind(&mut tape, false);
    let lp = decode_logprob(&mut tape, &m, &src, &tgt, Domain::D2, None).unwrap();
    let whole = tape.item(lp);
    assert!((whole - stepwise_logprob(&params, &src.ids, &tgt.ids, Domain::D2)).abs() < 1e-10);
    let other = decode_logprob(&mut tape, &m, &src, &tgt, Domain::D1, None).unwrap();
    assert!((tape.item(other) - whole).abs() > 1e-9);
}

#[test]
fn greedy_output_maximizes_every_step() {
    let params = small_model(4, 9);
    for src in [vec![4, 5], vec![8, 8, 6, 4]] {
        let out = greedy_decode(&params, &Sequence::new(src.clone()), Domain::D1, 10).unwrap();
        let mut tape = Tape::new();
        let m = params.bind(&mut tape, false);
        let srcs = [src.as_slice()];
        let enc = encode(&mut tape, &m, Source::Ids(&srcs)).unwrap();
        let mut st = start_decoder(&mut tape, &m, &enc, Domain::D1).unwrap();
        let mut prev = BOS;
        let emitted: Vec<usize> = if out.len() < 10 { out.ids.iter().copied().chain([EOS]).collect() } else { out.ids.clone() };
        for tok in emitted {
            let input = tape.embedding(m.embed, &[prev]).unwrap();
            let (logits, _) = decoder_step(&mut tape, &m, &mut st, input, None).unwrap();
            assert_eq!(argmax(tape.value(logits)), tok);
            prev = tok;
        }
    }
}

#[test]
fn one_step_samples_follow_the_softmax() {
    let v = 6;
    let params = small_model(5, v);
    let src = Sequence::new(vec![4, 5]);
    let mut tape = Tape::new();
    let m = params.bind(&mut tape, false);
    let srcs = [src.ids.as_slice()];
    let enc = encode(&mut tape, &m, Source::Ids(&srcs)).unwrap();
    let mut st = start_decoder(&mut tape, &m, &enc, Domain::D2).unwrap();
    let input = tape.embedding(m.embed, &[BOS]).unwrap();
    let (logits, _) = decoder_step(&mut tape, &m, &mut st, input, None).unwrap();
    let row = tape.value(logits).to_vec();
    let z: f64 = row.iter().map(|x| x.exp()).sum();
    let probs: Vec<f64> = row.iter().map(|x| x.exp() / z).collect();

    let n = 100_000;
    let mut counts = vec![0usize; v];
    let mut rng = Rng::seed(6);
    for _ in 0..n {
        let s = sample_decode(&params, &src, Domain::D2, 1.0, 1, &mut rng).unwrap();
        counts[s.ids.first().copied().unwrap_or(EOS)] += 1;
    }
    for k in 0..v {
        let se = (probs[k] * (1.0 - probs[k]) / n as f64).sqrt();
        let f = counts[k] as f64 / n as f64;
        assert!((f - probs[k]).abs() <= 3.0 * se + 1e-9, "token {k}: {f} vs {}", probs[k]);
    }
}

#[test]
fn language_model_scores_and_perplexity_recompose() {
    let v = 8;
    let lm = small_lm(7, v);
    let corpus: Vec<Sequence> = [vec![4, 5, 6], vec![7], vec![5, 5, 4, 7]].into_iter().map(Sequence::new).collect();
    let (mut nll, mut tokens) = (0.0, 0);
    for s in &corpus {
        let mut stepwise = 0.0;
        for k in 0..=s.len() {
            let next = if k < s.len() { s.ids[k] } else { EOS };
            stepwise += next_token_distribution(&lm, &s.ids[..k]).unwrap()[next].ln();
        }
        let mut tape = Tape::new();
        let vars = lm.bind(&mut tape);
        let lp = lm_log_prob(&mut tape, &vars, s).unwrap();
        assert!((tape.item(lp) - stepwise).abs() < 1e-10);
        nll -= stepwise;
        tokens += s.len() + 1;
    }
    assert!((perplexity(&lm, &corpus).unwrap() - (nll / tokens as f64).exp()).abs() < 1e-10);
}

#[test]
fn language_model_first_token_frequencies() {
    let v = 7;
    let lm = small_lm(8, v);
    let exact = next_token_distribution(&lm, &[]).unwrap();
    let n = 100_000;
    let mut counts = vec![0usize; v];
    let mut rng = Rng::seed(9);
    for _ in 0..n {
        let s = lm_sample(&lm, &mut rng, 1).unwrap();
        counts[s.ids.first().copied().unwrap_or(EOS)] += 1;
    }
    for k in 0..v {
        let se = (exact[k] * (1.0 - exact[k]) / n as f64).sqrt();
        assert!((counts[k] as f64 / n as f64 - exact[k]).abs() <= 3.0 * se + 1e-9, "token {k}");
    }
}

#[test]
fn language_model_memorizes_and_descends() {
    let v = 10;
    let sentence = Sequence::new(vec![4, 9, 6, 6, 5]);
    let cfg = LmTrainConfig {
        epochs: 3,
        batch_size: 10,
        ..LmTrainConfig::default()
    };
    let lm_cfg = LmConfig {
        vocab_size: v,
        embed_dim: 8,
        hidden_dim: 8,
    };
    let (lm, _) = pretrain_lm(&vec![sentence.clone(); 100], lm_cfg.clone(), &cfg, &mut Rng::seed(1)).unwrap();
    let nll = -lm_score(&lm, &sentence) / (sentence.len() + 1) as f64;
    assert!(nll < (v as f64).ln(), "per-token NLL {nll}");

    let (corpus, _) = dlsm_core::data::synth_bigram_corpus(3, 6, 200, 2..=6, 4).unwrap();
    let cfg = LmTrainConfig {
        epochs: 30,
        batch_size: 16,
        ..LmTrainConfig::default()
    };
    let (_, trace) = pretrain_lm(&corpus, lm_cfg, &cfg, &mut Rng::seed(2)).unwrap();
    let windows: Vec<f64> = trace.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert_eq!(windows.len(), 3);
    assert!(windows.windows(2).all(|w| w[1] <= w[0]), "{windows:?}");
}

fn lm_score(lm: &LmParams, s: &Sequence) -> f64 {
    let mut tape = Tape::new();
    let vars = lm.bind(&mut tape);
    let lp = lm_log_prob(&mut tape, &vars, s).unwrap();
    tape.item(lp)
}

#[test]
fn posterior_ratios_match_joint_ratios() {
    let v = 7;
    let model = LatentModel::init(small_model(10, v).config.clone(), true, &mut Rng::seed(10)).unwrap();
    let priors = Priors {
        d1: small_lm(11, v),
        d2: small_lm(12, v),
    };
    let obs = Sequence::new(vec![5, 4]);
    let support = [4, 5, 6];
    let joint = joint_table(&obs, Domain::D1, &model, &priors, &support, 2).unwrap();
    let post = exact_posterior(&obs, Domain::D1, &model, &priors, &support, 2).unwrap();
    let lp = post.log_probs();
    for (i, j) in [(0, 1), (2, 7), (5, 11)] {
        assert!(((lp[i] - lp[j]) - (joint.log_joint[i] - joint.log_joint[j])).abs() < 1e-10);
    }
}

#[test]
fn self_reconstruction_without_noise_recomposes() {
    let params = small_model(13, 9);
    let xs = [vec![4, 5, 6], vec![5]];
    let ys = [vec![7, 8]];
    let xr: Vec<&[usize]> = xs.iter().map(|s| s.as_slice()).collect();
    let yr: Vec<&[usize]> = ys.iter().map(|s| s.as_slice()).collect();
    let mut tape = Tape::new();
    let m = params.bind(&mut tape, false);
    let loss = self_reconstruction_loss(&mut tape, &m, &xr, &yr, 0.4, (0.0, 0), &mut Rng::seed(1)).unwrap();
    let mut oracle = 0.0;
    for (batch, d) in [(&xr, Domain::D1), (&yr, Domain::D2)] {
        for s in batch.iter() {
            oracle -= stepwise_logprob(&params, s, s, d);
        }
    }
    assert!((tape.item(loss) - 0.4 * oracle).abs() < 1e-10);
    let zero = self_reconstruction_loss(&mut tape, &m, &xr, &yr, 0.0, (0.1, 3), &mut Rng::seed(1)).unwrap();
    assert_eq!(tape.item(zero), 0.0);
}

/// Surrogate gradient of one score-function term for outcome `k`.
fn score_gradient(theta: &[f64], k: usize, reward: f64, baseline: &mut Baseline) -> Vec<f64> {
    let mut tape = Tape::new();
    let t = tape.param(&Tensor::new(vec![1, theta.len()], theta.to_vec()).unwrap());
    let nll = tape.cross_entropy(t, &[k], &[1.0]).unwrap();
    let log_q = tape.scale(nll, -1.0).unwrap();
    let loss = reinforce_loss(&mut tape, log_q, &[reward], baseline).unwrap();
    tape.backward(loss).unwrap();
    tape.grad_or_zeros(t)
}

#[test]
fn score_function_gradient_is_unbiased_by_enumeration() {
    let theta: [f64; 4] = [0.4, -0.3, 1.1, 0.0];
    let rewards: [f64; 4] = [1.0, -2.0, 0.5, 3.0];
    let z: f64 = theta.iter().map(|x| x.exp()).sum();
    let q: Vec<f64> = theta.iter().map(|x| x.exp() / z).collect();
    let mean_r: f64 = q.iter().zip(&rewards).map(|(a, b)| a * b).sum();
    let mut expected = vec![0.0; 4];
    for k in 0..4 {
        let mut b = Baseline {
            value: Some(0.7),
            decay: 1.0,
        };
        let g = score_gradient(&theta, k, rewards[k], &mut b);
        for j in 0..4 {
            expected[j] += q[k] * g[j];
        }
    }
    // The surrogate is a loss, so it descends along minus the reward gradient.
    for j in 0..4 {
        let exact = q[j] * (rewards[j] - mean_r);
        assert!((expected[j] + exact).abs() < 1e-6, "coordinate {j}");
    }
}

#[test]
fn baseline_reduces_gradient_variance() {
    let theta: [f64; 3] = [0.2, -0.5, 0.9];
    let rewards = [10.0, 11.0, 12.5];
    let z: f64 = theta.iter().map(|x| x.exp()).sum();
    let q: Vec<f64> = theta.iter().map(|x| x.exp() / z).collect();
    let mut rng = Rng::seed(14);
    let mut with = Baseline::new(0.95);
    let mut without = Baseline {
        value: Some(0.0),
        decay: 1.0,
    };
    let (mut sw, mut sw2, mut so, mut so2) = (0.0, 0.0, 0.0, 0.0);
    let n = 1000;
    for _ in 0..n {
        let u = rng.uniform();
        let mut k = 0;
        let mut acc = q[0];
        while u >= acc && k + 1 < q.len() {
            k += 1;
            acc += q[k];
        }
        let a = score_gradient(&theta, k, rewards[k], &mut with)[0];
        let b = score_gradient(&theta, k, rewards[k], &mut without)[0];
        sw += a;
        sw2 += a * a;
        so += b;
        so2 += b * b;
    }
    let var = |s: f64, s2: f64| s2 / n as f64 - (s / n as f64).powi(2);
    assert_eq!(without.value, Some(0.0));
    assert!(var(sw, sw2) < var(so, so2), "{} vs {}", var(sw, sw2), var(so, so2));
}

#[test]
fn one_adam_step_descends() {
    let batch = [(Sequence::new(vec![4, 5, 6]), Sequence::new(vec![7, 8])), (Sequence::new(vec![6]), Sequence::new(vec![8, 8, 7]))];
    let loss_of = |p: &ModelParams, grads: bool| {
        let mut tape = Tape::new();
        let m = p.bind(&mut tape, true);
        let mut total = tape.input(vec![1], vec![0.0]).unwrap();
        for (src, tgt) in &batch {
            let lp = decode_logprob(&mut tape, &m, src, tgt, Domain::D2, None).unwrap();
            total = tape.sub(total, lp).unwrap();
        }
        let value = tape.item(total);
        let g = if grads {
            tape.backward(total).unwrap();
            m.vars().iter().map(|&v| tape.grad_or_zeros(v)).collect()
        } else {
            Vec::new()
        };
        (value, g)
    };
    let mut wins = 0;
    for seed in 0..20 {
        let mut p = small_model(100 + seed, 9);
        let (before, grads) = loss_of(&p, true);
        let sizes: Vec<usize> = p.named().iter().map(|(_, t)| t.len()).collect();
        let mut adam = Adam::new(AdamConfig::default(), &sizes);
        adam.step(&mut p.tensors_mut(), &grads).unwrap();
        if loss_of(&p, false).0 < before {
            wins += 1;
        }
    }
    assert!(wins > 10, "{wins} of 20 steps descended");
}
