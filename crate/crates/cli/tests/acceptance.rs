//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Training-based criteria run on a reduced desk task by default. Set
//! `DLSM_ACCEPTANCE_SENTENCES` and `DLSM_ACCEPTANCE_EPOCHS` to change the
//! budget (5000 and 30 give the full desk scale).

use std::time::Instant;

use dlsm::checkpoint::{trainer_checkpoint, trainer_from_checkpoint};
use dlsm::Checkpoint;
use dlsm_core::data::{decipherment_task, DecipherSpec, DecipherTask};
use dlsm_core::latent::{
    enumerate_sequences, exact_elbo, exact_marginal_log_likelihood, exact_posterior, exact_q, joint_table, kl_divergence, LatentModel,
    Priors,
};
use dlsm_core::lm::{lm_log_prob_batch, pretrain_lm, LmConfig, LmInput, LmParams, LmTrainConfig};
use dlsm_core::metrics::{bleu1, token_mapping_accuracy, transfer_corpus};
use dlsm_core::nn::{decode_logprob, Domain, LstmVars, ModelConfig, ModelParams, ModelVars, Sequence};
use dlsm_core::vi::{
    alpha_schedule, entropy_exact, kl_single_sample, Estimator, Objective, ReconDecoding, TrainConfig, TrainData, Trainer,
};
use dlsm_core::{finite_difference_check, Rng, Tape, Tensor, Var};

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
    /// Whether a failure fails the test target.
    asserted: bool,
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn majority(wins: &[bool]) -> bool {
    2 * wins.iter().filter(|&&w| w).count() > wins.len()
}

// Criterion 1.

fn tiny_model(seed: u64, v: usize) -> (LatentModel, Priors) {
    let mut rng = Rng::seed(seed);
    let config = ModelConfig {
        vocab_size: v,
        embed_dim: 4,
        hidden_dim: 4,
        pool_window: 1,
        dropout: 0.3,
        input_feeding: true,
    };
    let model = LatentModel::init(config, seed % 2 == 0, &mut rng).unwrap();
    let lm = LmConfig {
        vocab_size: v,
        embed_dim: 4,
        hidden_dim: 4,
    };
    let priors = Priors {
        d1: LmParams::init(lm.clone(), &mut rng),
        d2: LmParams::init(lm, &mut rng),
    };
    (model, priors)
}

const TINY_V: usize = 8;
const TINY_SUPPORT: [usize; 4] = [4, 5, 6, 7];

fn criterion_bound() -> Outcome {
    let mut rng = Rng::seed(1000);
    let (mut worst_bound, mut worst_decomp) = (f64::INFINITY, 0.0f64);
    for i in 0..24u64 {
        let (model, priors) = tiny_model(i, TINY_V);
        let n = 1 + rng.below(3);
        let obs = Sequence::new((0..n).map(|_| TINY_SUPPORT[rng.below(4)]).collect());
        let side = if i % 2 == 0 { Domain::D1 } else { Domain::D2 };
        let log_p = exact_marginal_log_likelihood(&obs, side, &model, &priors, &TINY_SUPPORT, 3).unwrap();
        let joint = joint_table(&obs, side, &model, &priors, &TINY_SUPPORT, 3).unwrap();
        let q = exact_q(&obs, side, &model, &TINY_SUPPORT, 3).unwrap();
        let elbo = exact_elbo(&q, &joint).unwrap();
        let post = exact_posterior(&obs, side, &model, &priors, &TINY_SUPPORT, 3).unwrap();
        let gap = kl_divergence(&q, &post).unwrap();
        worst_bound = worst_bound.min(log_p - elbo);
        worst_decomp = worst_decomp.max((log_p - elbo - gap).abs());
    }
    Outcome {
        pass: worst_bound >= -1e-9 && worst_decomp < 1e-8,
        detail: format!("24 instances, 4 symbols, max_len 3: min(log p - ELBO) {worst_bound:.3e}, max decomposition error {worst_decomp:.3e}"),
        asserted: true,
    }
}

// Criterion 2.

fn criterion_kl_identity() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let (model, priors) = tiny_model(seed, TINY_V);
        let q = exact_q(&Sequence::new(vec![4, 6]), Domain::D1, &model, &TINY_SUPPORT, 3).unwrap();
        let latents = enumerate_sequences(&TINY_SUPPORT, 3).unwrap();
        let refs: Vec<&[usize]> = latents.iter().map(|l| l.as_slice()).collect();
        let mut tape = Tape::new();
        let lm = priors.d2.bind(&mut tape);
        let lp = lm_log_prob_batch(&mut tape, &lm, LmInput::Ids(&refs)).unwrap();
        let log_prior = tape.value(lp).to_vec();
        let (p, lq) = (q.probs(), q.log_probs());
        let direct: f64 = (0..p.len()).map(|i| p[i] * (lq[i] - log_prior[i])).sum();
        let cross: f64 = (0..p.len()).map(|i| p[i] * log_prior[i]).sum();
        worst = worst.max((direct - (-entropy_exact(&p).unwrap() - cross)).abs());
    }

    // Single-sample estimator against the exact expectation over every
    // sampler path, computed as the mean of many independent batches.
    let (model, priors) = tiny_model(11, TINY_V);
    let src = [5usize, 7];
    let exact = exact_sampler_kl(&model, &priors, &src, 3);
    let mut rng = Rng::seed(12);
    let mut draws = Vec::with_capacity(10_000);
    for _ in 0..20 {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let p = priors.bind(&mut tape);
        let inputs: Vec<&[usize]> = vec![&src[..]; 500];
        let ks = kl_single_sample(&mut tape, vars.q(), &p[1], &inputs, Domain::D2, &[3; 500], 1.0, &mut rng, false).unwrap();
        let kl = ks.kl(&mut tape).unwrap();
        draws.extend_from_slice(tape.value(kl));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let tol = 3.0 * sd / n.sqrt();
    Outcome {
        pass: worst < 1e-9 && (mean - exact).abs() <= tol,
        detail: format!(
            "max |KL - (-H - E log p)| {worst:.3e}; 10^4-draw mean {mean:.5} vs exact {exact:.5} (tolerance {tol:.5})"
        ),
        asserted: true,
    }
}

/// Exact `E_q[log q - log p]` over the sampler's paths of at most `max_len` tokens.
fn exact_sampler_kl(model: &LatentModel, priors: &Priors, src: &[usize], max_len: usize) -> f64 {
    use dlsm_core::lm::next_token_distribution;
    use dlsm_core::nn::{decoder_step, encode, start_decoder, Source, BOS, EOS};
    let mut tape = Tape::new();
    let m = model.q().bind(&mut tape, false);
    let srcs = [src];
    let enc = encode(&mut tape, &m, Source::Ids(&srcs)).unwrap();
    let st = start_decoder(&mut tape, &m, &enc, Domain::D2).unwrap();
    let bos = tape.embedding(m.embed, &[BOS]).unwrap();
    let log_prior = |prefix: &[usize]| -> f64 {
        (0..prefix.len()).map(|k| next_token_distribution(&priors.d2, &prefix[..k]).unwrap()[prefix[k]].ln()).sum()
    };
    let mut total = 0.0;
    let mut stack = vec![(st, bos, Vec::<usize>::new(), 0.0f64)];
    while let Some((mut st, input, prefix, lq)) = stack.pop() {
        let (logits, _) = decoder_step(&mut tape, &m, &mut st, input, None).unwrap();
        let lsm = tape.log_softmax(logits).unwrap();
        let lsm = tape.value(lsm).to_vec();
        let next = next_token_distribution(&priors.d2, &prefix).unwrap();
        for (tok, &l) in lsm.iter().enumerate() {
            let path_q = lq + l;
            if tok == EOS {
                total += path_q.exp() * (path_q - log_prior(&prefix) - next[EOS].ln());
                continue;
            }
            let mut longer = prefix.clone();
            longer.push(tok);
            if longer.len() == max_len {
                total += path_q.exp() * (path_q - log_prior(&longer));
            } else {
                let emb = tape.embedding(m.embed, &[tok]).unwrap();
                stack.push((st.clone(), emb, longer, path_q));
            }
        }
    }
    total
}

// Criterion 3.

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()).unwrap()
}

fn project(tape: &mut Tape, x: Var, seed: u64) -> dlsm_core::Result<Var> {
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = Rng::seed(seed);
    let w = tape.input(shape, (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect())?;
    let y = tape.mul(x, w)?;
    tape.sum(y)
}

type Probe = Box<dyn Fn(&mut Tape, &[Var]) -> dlsm_core::Result<Var>>;

fn rebind(config: &ModelConfig, v: &[Var]) -> ModelVars {
    let mut it = v.iter().copied();
    let mut next = || it.next().expect("one leaf per tensor");
    let embed = next();
    let domains = next();
    let encoder = LstmVars {
        w_x: next(),
        w_h: next(),
        b: next(),
    };
    let decoder = LstmVars {
        w_x: next(),
        w_h: next(),
        b: next(),
    };
    ModelVars {
        config: config.clone(),
        embed,
        domains,
        encoder,
        decoder,
        bridge_w: next(),
        bridge_b: next(),
        readout_w: next(),
        readout_b: next(),
    }
}

fn criterion_gradients() -> Outcome {
    let mut rng = Rng::seed(3);
    let a = rand_tensor(&mut rng, &[3, 4], -1.5, 1.5);
    let b = rand_tensor(&mut rng, &[3, 4], -1.5, 1.5);
    let pos = rand_tensor(&mut rng, &[3, 4], 0.5, 2.0);
    let w = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let bias = rand_tensor(&mut rng, &[5], -1.0, 1.0);
    let x3 = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let xb = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let narrow = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let table = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
    let mut vals: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
    rng.shuffle(&mut vals);
    let seq = Tensor::new(vec![2, 5, 3], vals).unwrap();
    let q = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let mem = rand_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0);
    let attn = rand_tensor(&mut rng, &[2, 4], 0.0, 1.0);

    let cases: Vec<(&str, Vec<Tensor>, Probe)> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|t, v| { let y = t.add(v[0], v[1])?; project(t, y, 1) })),
        ("sub", vec![a.clone(), b.clone()], Box::new(|t, v| { let y = t.sub(v[0], v[1])?; project(t, y, 2) })),
        ("mul", vec![a.clone(), b.clone()], Box::new(|t, v| { let y = t.mul(v[0], v[1])?; project(t, y, 3) })),
        ("scale", vec![a.clone()], Box::new(|t, v| { let y = t.scale(v[0], -2.5)?; project(t, y, 4) })),
        ("tanh", vec![a.clone()], Box::new(|t, v| { let y = t.tanh(v[0])?; project(t, y, 5) })),
        ("sigmoid", vec![a.clone()], Box::new(|t, v| { let y = t.sigmoid(v[0])?; project(t, y, 6) })),
        ("exp", vec![a.clone()], Box::new(|t, v| { let y = t.exp(v[0])?; project(t, y, 7) })),
        ("log", vec![pos], Box::new(|t, v| { let y = t.log(v[0])?; project(t, y, 8) })),
        ("matmul", vec![a.clone(), w.clone()], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; project(t, y, 9) })),
        ("matmul 3d", vec![x3, w.clone()], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; project(t, y, 10) })),
        ("affine", vec![a.clone(), w, bias.clone()], Box::new(|t, v| { let y = t.affine(v[0], v[1], v[2])?; project(t, y, 11) })),
        ("add_bias", vec![xb.clone(), bias], Box::new(|t, v| { let y = t.add_bias(v[0], v[1])?; project(t, y, 12) })),
        ("concat", vec![a.clone(), narrow], Box::new(|t, v| { let y = t.concat(&[v[0], v[1]])?; project(t, y, 13) })),
        ("slice_cols", vec![a.clone()], Box::new(|t, v| { let y = t.slice_cols(v[0], 1, 2)?; project(t, y, 14) })),
        ("sum", vec![a.clone()], Box::new(|t, v| { let y = t.tanh(v[0])?; t.sum(y) })),
        ("sum_cols", vec![a.clone()], Box::new(|t, v| { let y = t.sum_cols(v[0])?; project(t, y, 15) })),
        ("select_rows", vec![a.clone(), b.clone()], Box::new(|t, v| { let y = t.select_rows(&[true, false, true], v[0], v[1])?; project(t, y, 16) })),
        ("stack", vec![a, b], Box::new(|t, v| { let y = t.stack(&[v[0], v[1]])?; project(t, y, 17) })),
        ("softmax", vec![xb.clone()], Box::new(|t, v| { let y = t.softmax(v[0], 0.7)?; project(t, y, 18) })),
        ("masked_softmax", vec![xb.clone()], Box::new(|t, v| { let y = t.masked_softmax(v[0], &[5, 2, 4])?; project(t, y, 19) })),
        ("log_softmax", vec![xb.clone()], Box::new(|t, v| { let y = t.log_softmax(v[0])?; project(t, y, 20) })),
        ("cross_entropy", vec![xb], Box::new(|t, v| { let y = t.cross_entropy(v[0], &[1, 4, 0], &[1.0, 0.0, 0.5])?; project(t, y, 21) })),
        ("embedding", vec![table], Box::new(|t, v| { let y = t.embedding(v[0], &[2, 5, 2, 0])?; project(t, y, 22) })),
        ("max_pool", vec![seq], Box::new(|t, v| { let (y, _) = t.max_pool(v[0], &[5, 3], 2)?; project(t, y, 23) })),
        ("scores", vec![q.clone(), mem.clone()], Box::new(|t, v| { let y = t.scores(v[0], v[1], &[4, 2])?; project(t, y, 24) })),
        ("weighted_sum", vec![attn, mem.clone()], Box::new(|t, v| { let y = t.weighted_sum(v[0], v[1])?; project(t, y, 25) })),
        ("attention", vec![q, mem], Box::new(|t, v| {
            let s = t.scores(v[0], v[1], &[4, 3])?;
            let a = t.masked_softmax(s, &[4, 3])?;
            let c = t.weighted_sum(a, v[1])?;
            project(t, c, 26)
        })),
    ];
    let mut worst = (0.0f64, "");
    for (name, params, f) in &cases {
        let r = finite_difference_check(f, params, 1e-5).unwrap();
        if r.max_rel_err > worst.0 {
            worst = (r.max_rel_err, name);
        }
    }
    let mut e2e = 0.0f64;
    for (window, feeding) in [(1, true), (2, false)] {
        let config = ModelConfig {
            vocab_size: 5,
            embed_dim: 4,
            hidden_dim: 4,
            pool_window: window,
            dropout: 0.3,
            input_feeding: feeding,
        };
        let params = ModelParams::init(config.clone(), &mut Rng::seed(7)).unwrap();
        let tensors: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
        let (src, tgt) = (Sequence::new(vec![4, 3, 4]), Sequence::new(vec![3, 4]));
        let f = |t: &mut Tape, v: &[Var]| decode_logprob(t, &rebind(&config, v), &src, &tgt, Domain::D2, None);
        e2e = e2e.max(finite_difference_check(f, &tensors, 1e-5).unwrap().max_rel_err);
    }
    Outcome {
        pass: worst.0 < 1e-4 && e2e < 1e-4,
        detail: format!("{} operations, worst {} at {:.2e}; decode_logprob end to end {:.2e}", cases.len(), worst.1, worst.0, e2e),
        asserted: true,
    }
}

// Desk-task criteria.

struct Desk {
    task: DecipherTask,
    priors: Priors,
    data: TrainData,
}

fn desk(seed: u64, sentences: usize) -> Desk {
    let spec = DecipherSpec {
        sentences,
        ..DecipherSpec::default()
    };
    let task = decipherment_task(seed, &spec).unwrap();
    let v = task.vocab.len();
    let mut rng = Rng::seed(seed);
    let cfg = LmTrainConfig {
        epochs: 3,
        ..LmTrainConfig::default()
    };
    let (d1, _) = pretrain_lm(&task.train_plain, LmConfig::new(v), &cfg, &mut rng).unwrap();
    let (d2, _) = pretrain_lm(&task.train_cipher, LmConfig::new(v), &cfg, &mut rng).unwrap();
    let data = TrainData {
        train_x: task.train_plain.clone(),
        train_y: task.train_cipher.clone(),
        val_x: task.val_plain.clone(),
        val_y: task.val_cipher.clone(),
    };
    Desk {
        task,
        priors: Priors { d1, d2 },
        data,
    }
}

struct Run {
    final_val: f64,
    mapping: f64,
    bleu1: f64,
}

fn train_desk(d: &Desk, cfg: TrainConfig) -> Run {
    let mut tr = Trainer::from_config(d.task.vocab.len(), cfg).unwrap();
    let mut final_val = f64::NAN;
    while tr.epoch < tr.config.epochs {
        final_val = tr.run_epoch(&d.priors, &d.data).unwrap();
    }
    let out = transfer_corpus(tr.best_model(), &d.task.test_cipher, Domain::D1).unwrap();
    Run {
        final_val,
        mapping: token_mapping_accuracy(&d.task.test_cipher, &out, &d.task.key).unwrap(),
        bleu1: bleu1(&out, &d.task.test_plain).unwrap(),
    }
}

struct DeskResults {
    budget: String,
    stop_gradient: Vec<Run>,
    gumbel: Vec<Run>,
    reinforce: Vec<Run>,
    sample: Vec<Run>,
    untied: Vec<Run>,
}

fn desk_results() -> DeskResults {
    let sentences = env_usize("DLSM_ACCEPTANCE_SENTENCES", 400);
    let epochs = env_usize("DLSM_ACCEPTANCE_EPOCHS", 3);
    let mut r = DeskResults {
        budget: format!("{sentences} sentences/domain, {epochs} epochs, seeds {SEEDS:?}"),
        stop_gradient: vec![],
        gumbel: vec![],
        reinforce: vec![],
        sample: vec![],
        untied: vec![],
    };
    for seed in SEEDS {
        let d = desk(seed, sentences);
        let base = TrainConfig {
            seed,
            epochs,
            ..TrainConfig::default()
        };
        r.stop_gradient.push(train_desk(&d, base.clone()));
        r.gumbel.push(train_desk(
            &d,
            TrainConfig {
                estimator: Estimator::GumbelSt,
                ..base.clone()
            },
        ));
        r.reinforce.push(train_desk(
            &d,
            TrainConfig {
                estimator: Estimator::Reinforce,
                ..base.clone()
            },
        ));
        r.sample.push(train_desk(
            &d,
            TrainConfig {
                recon_decoding: ReconDecoding::Sample,
                ..base.clone()
            },
        ));
        r.untied.push(train_desk(
            &d,
            TrainConfig {
                tie_parameters: false,
                ..base
            },
        ));
    }
    r
}

fn list(runs: &[Run], f: impl Fn(&Run) -> f64) -> String {
    let v: Vec<String> = runs.iter().map(|r| format!("{:.3}", f(r))).collect();
    v.join("/")
}

fn criterion_desk(r: &DeskResults) -> Outcome {
    let wins: Vec<bool> = r.stop_gradient.iter().map(|x| x.mapping >= 0.90 && x.bleu1 >= 80.0).collect();
    Outcome {
        pass: majority(&wins),
        detail: format!(
            "{}: token-mapping accuracy {}, BLEU-1 {}",
            r.budget,
            list(&r.stop_gradient, |x| x.mapping),
            list(&r.stop_gradient, |x| x.bleu1)
        ),
        asserted: false,
    }
}

fn criterion_estimators(r: &DeskResults) -> Outcome {
    let wins: Vec<bool> = (0..SEEDS.len())
        .map(|i| r.stop_gradient[i].final_val >= r.gumbel[i].final_val && r.gumbel[i].final_val >= r.reinforce[i].final_val)
        .collect();
    Outcome {
        pass: majority(&wins),
        detail: format!(
            "{}: validation ELBO/word stop_gradient {}, gumbel_st {}, reinforce {}",
            r.budget,
            list(&r.stop_gradient, |x| x.final_val),
            list(&r.gumbel, |x| x.final_val),
            list(&r.reinforce, |x| x.final_val)
        ),
        asserted: false,
    }
}

fn criterion_greedy(r: &DeskResults) -> Outcome {
    let wins: Vec<bool> = (0..SEEDS.len()).map(|i| r.stop_gradient[i].final_val >= r.sample[i].final_val).collect();
    Outcome {
        pass: majority(&wins),
        detail: format!(
            "{}: validation ELBO/word greedy {}, sample {}",
            r.budget,
            list(&r.stop_gradient, |x| x.final_val),
            list(&r.sample, |x| x.final_val)
        ),
        asserted: false,
    }
}

fn criterion_untied(r: &DeskResults) -> Outcome {
    let wins: Vec<bool> = r.untied.iter().map(|x| x.mapping < 0.5).collect();
    Outcome {
        pass: majority(&wins),
        detail: format!(
            "{}: untied token-mapping accuracy {} (tied {})",
            r.budget,
            list(&r.untied, |x| x.mapping),
            list(&r.stop_gradient, |x| x.mapping)
        ),
        asserted: true,
    }
}

// Criterion 7.

fn mean_entropy(model: &LatentModel, probe: &[(Sequence, Domain)], support: [&[usize]; 2]) -> f64 {
    let total: f64 = probe
        .iter()
        .map(|(obs, side)| {
            let latent_support = support[side.other().index()];
            let q = exact_q(obs, *side, model, latent_support, 3).unwrap();
            entropy_exact(&q.probs()).unwrap()
        })
        .sum();
    total / probe.len() as f64
}

fn criterion_entropy() -> Outcome {
    let spec = DecipherSpec {
        symbols: 3,
        sentences: 120,
        lens: 1..=3,
        validation: 8,
        test: 8,
    };
    let mut rows = Vec::new();
    let mut wins = Vec::new();
    for seed in SEEDS {
        let task = decipherment_task(seed, &spec).unwrap();
        let v = task.vocab.len();
        let lm = LmConfig {
            vocab_size: v,
            embed_dim: 8,
            hidden_dim: 8,
        };
        let mut rng = Rng::seed(seed);
        let lm_cfg = LmTrainConfig {
            epochs: 5,
            batch_size: 16,
            ..LmTrainConfig::default()
        };
        let (d1, _) = pretrain_lm(&task.train_plain, lm.clone(), &lm_cfg, &mut rng).unwrap();
        let (d2, _) = pretrain_lm(&task.train_cipher, lm, &lm_cfg, &mut rng).unwrap();
        let priors = Priors { d1, d2 };
        let data = TrainData {
            train_x: task.train_plain.clone(),
            train_y: task.train_cipher.clone(),
            val_x: task.val_plain.clone(),
            val_y: task.val_cipher.clone(),
        };
        let plain: Vec<usize> = (4..4 + spec.symbols).collect();
        let cipher: Vec<usize> = (4 + spec.symbols..4 + 2 * spec.symbols).collect();
        let probe: Vec<(Sequence, Domain)> = task
            .test_plain
            .iter()
            .map(|s| (s.clone(), Domain::D1))
            .chain(task.test_cipher.iter().map(|s| (s.clone(), Domain::D2)))
            .collect();
        let mut h = [0.0; 2];
        for (slot, objective) in [Objective::Elbo, Objective::BtNll].into_iter().enumerate() {
            let cfg = TrainConfig {
                objective,
                lambda: 1.0,
                embed_dim: 8,
                hidden_dim: 8,
                batch_size: 16,
                epochs: 10,
                seed,
                ..TrainConfig::default()
            };
            let mut tr = Trainer::from_config(v, cfg).unwrap();
            tr.run(&priors, &data).unwrap();
            h[slot] = mean_entropy(&tr.model, &probe, [&plain, &cipher]);
        }
        wins.push(h[1] <= h[0]);
        rows.push(format!("{:.3}{}{:.3}", h[1], if h[1] <= h[0] { "<=" } else { ">" }, h[0]));
    }
    Outcome {
        pass: majority(&wins),
        detail: format!("exact H_q on a 3-symbol toy, lambda 1, 10 epochs, bt_nll vs elbo per seed: {}", rows.join(", ")),
        asserted: false,
    }
}

// Criterion 8.

fn criterion_annealing() -> Outcome {
    let spe = 37;
    let k = 2;
    let mut exact = alpha_schedule(0, spe, k) == 1.0 && alpha_schedule(k as u64 * spe, spe, k) == 0.0;
    for s in 0..=k as u64 * spe {
        exact &= alpha_schedule(s, spe, k) == 1.0 - s as f64 / (k as u64 * spe) as f64;
    }
    exact &= alpha_schedule(10 * spe, spe, k) == 0.0;
    Outcome {
        pass: exact,
        detail: format!("alpha(0) = {}, alpha(k*spe) = {}, linear at every step in between", alpha_schedule(0, spe, k), alpha_schedule(k as u64 * spe, spe, k)),
        asserted: true,
    }
}

// Criterion 10.

fn criterion_persistence() -> Outcome {
    let spec = DecipherSpec {
        symbols: 5,
        sentences: 40,
        lens: 2..=5,
        validation: 6,
        test: 2,
    };
    let task = decipherment_task(9, &spec).unwrap();
    let v = task.vocab.len();
    let lm = LmConfig {
        vocab_size: v,
        embed_dim: 6,
        hidden_dim: 6,
    };
    let mut rng = Rng::seed(9);
    let priors = Priors {
        d1: LmParams::init(lm.clone(), &mut rng),
        d2: LmParams::init(lm, &mut rng),
    };
    let data = TrainData {
        train_x: task.train_plain,
        train_y: task.train_cipher,
        val_x: task.val_plain,
        val_y: task.val_cipher,
    };
    let cfg = TrainConfig {
        embed_dim: 8,
        hidden_dim: 8,
        batch_size: 8,
        epochs: 4,
        estimator: Estimator::GumbelSt,
        seed: 5,
        ..TrainConfig::default()
    };
    let straight = || {
        let mut tr = Trainer::from_config(v, cfg.clone()).unwrap();
        tr.run(&priors, &data).unwrap();
        tr
    };
    let (a, b) = (straight(), straight());
    let bits = |t: &Trainer| t.trace.iter().map(|r| r.to_line()).collect::<Vec<_>>();
    let identical = bits(&a) == bits(&b) && a.model == b.model;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.ckpt");
    let mut first = Trainer::from_config(v, cfg.clone()).unwrap();
    first.run_epoch(&priors, &data).unwrap();
    first.run_epoch(&priors, &data).unwrap();
    trainer_checkpoint(&first).save(&path).unwrap();
    drop(first);
    let mut resumed = trainer_from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    resumed.run(&priors, &data).unwrap();
    let resumes = bits(&resumed) == bits(&a) && resumed.model == a.model && resumed.best_model() == a.best_model();
    Outcome {
        pass: identical && resumes,
        detail: format!(
            "{} steps: repeated runs identical {identical}, resume after epoch 2 from a checkpoint file identical {resumes}",
            a.step
        ),
        asserted: true,
    }
}

fn main() {
    let started = Instant::now();
    let mut outcomes: Vec<(usize, Outcome)> = vec![
        (1, criterion_bound()),
        (2, criterion_kl_identity()),
        (3, criterion_gradients()),
        (8, criterion_annealing()),
        (10, criterion_persistence()),
        (7, criterion_entropy()),
    ];
    let desk = desk_results();
    outcomes.push((4, criterion_desk(&desk)));
    outcomes.push((5, criterion_estimators(&desk)));
    outcomes.push((6, criterion_greedy(&desk)));
    outcomes.push((9, criterion_untied(&desk)));
    outcomes.sort_by_key(|(id, _)| *id);
    for (id, o) in &outcomes {
        println!("criterion {id}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance finished in {:.1?}", started.elapsed());
    let broken: Vec<usize> = outcomes.iter().filter(|(_, o)| o.asserted && !o.pass).map(|(id, _)| *id).collect();
    if !broken.is_empty() {
        eprintln!("asserted criteria {broken:?} failed");
        std::process::exit(1);
    }
}
