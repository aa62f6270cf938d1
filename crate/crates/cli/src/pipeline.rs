//! Command implementations. Each command reads only its declared inputs and
//! writes its outputs atomically.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dlsm_core::data::{decipherment_task, CipherKey, DecipherSpec};
use dlsm_core::latent::Priors;
use dlsm_core::lm::{perplexity, pretrain_lm, LmConfig, LmTrainConfig};
use dlsm_core::metrics::{full_eval, naive_bayes_classifier, token_mapping_accuracy, transfer_corpus, ElboSettings, References};
use dlsm_core::nn::{Domain, Vocab};
use dlsm_core::vi::{ReconDecoding, Trainer, TRACE_HEADER};
use dlsm_core::Rng;

use crate::checkpoint::{self, Checkpoint};
use crate::config;
use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Parser)]
#[command(name = "dlsm", version, about = "Unsupervised text style transfer with a deep latent sequence model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic plaintext/ciphertext task.
    Synth(SynthArgs),
    /// Apply a cipher key file to a corpus.
    Cipher(CipherArgs),
    /// Train the frozen language-model priors of both domains.
    PretrainLm(PretrainArgs),
    /// Train the transduction model.
    Train(TrainArgs),
    /// Transfer a corpus with a trained model.
    Transfer(TransferArgs),
    /// Evaluate a trained model on the test sets.
    Eval(EvalArgs),
    /// Report the per-word evidence lower bound on the test sets.
    Elbo(ElboArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub symbols: usize,
    #[arg(long, default_value_t = 5000)]
    pub sentences: usize,
    #[arg(long, default_value_t = 4)]
    pub min_len: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, default_value_t = 200)]
    pub validation: usize,
    #[arg(long, default_value_t = 200)]
    pub test: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CipherArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Decipher instead of encipher.
    #[arg(long)]
    pub inverse: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub lm_epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    StopGradient,
    Gumbel,
    Reinforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Elbo,
    /// Backtranslation plus prior likelihood, without the entropy term.
    BtNll,
    /// UNMT-style: denoising and backtranslation with no prior term.
    Unmt,
}

/// Flags that override configuration-file values.
#[derive(Debug, Args, Default)]
pub struct ConfigFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub pool_window: Option<usize>,
    #[arg(long)]
    pub anneal_epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub gumbel_temp: Option<f64>,
    #[arg(long)]
    pub noise_drop: Option<f64>,
    #[arg(long)]
    pub noise_shuffle: Option<usize>,
    /// Any other configuration key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigFlags {
    pub fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("pool_window", self.pool_window.map(|v| v.to_string()));
        put("anneal_epochs", self.anneal_epochs.map(|v| v.to_string()));
        put(
            "estimator",
            self.estimator.map(|e| {
                match e {
                    EstimatorArg::StopGradient => "stop_gradient",
                    EstimatorArg::Gumbel => "gumbel",
                    EstimatorArg::Reinforce => "reinforce",
                }
                .to_string()
            }),
        );
        put(
            "objective",
            self.objective.map(|o| {
                match o {
                    ObjectiveArg::Elbo => "elbo",
                    ObjectiveArg::BtNll => "bt_nll",
                    ObjectiveArg::Unmt => "unmt",
                }
                .to_string()
            }),
        );
        put("embed_dim", self.embed_dim.map(|v| v.to_string()));
        put("hidden_dim", self.hidden_dim.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("gumbel_temp", self.gumbel_temp.map(|v| v.to_string()));
        put("noise_drop", self.noise_drop.map(|v| v.to_string()));
        put("noise_shuffle", self.noise_shuffle.map(|v| v.to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            out.push((k.to_string(), v.to_string()));
        }
        Ok(out)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding `lm.d1.ckpt` and `lm.d2.ckpt`.
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from `OUT/last.ckpt` instead of starting fresh.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs in this invocation.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    D1,
    D2,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Domain {
        match d {
            DomainArg::D1 => Domain::D1,
            DomainArg::D2 => Domain::D2,
        }
    }
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Domain of the input sentences; output is in the other domain.
    #[arg(long, value_enum)]
    pub from: DomainArg,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lm: PathBuf,
    /// Report file; outputs are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Debug, Args)]
pub struct ElboArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Sample)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// File names inside a data directory.
pub mod files {
    pub const VOCAB: &str = "vocab.txt";
    pub const KEY: &str = "key.txt";
    pub const TRAIN: [&str; 2] = ["train.d1", "train.d2"];
    pub const VALID: [&str; 2] = ["valid.d1", "valid.d2"];
    pub const TEST: [&str; 2] = ["test.d1", "test.d2"];
    /// Parallel references: the other-domain rendering of each test sentence.
    pub const TEST_REF: [&str; 2] = ["test.d1.ref", "test.d2.ref"];
    pub const LM: [&str; 2] = ["lm.d1.ckpt", "lm.d2.ckpt"];
    pub const LAST: &str = "last.ckpt";
    pub const BEST: &str = "best.ckpt";
    pub const TRACE: &str = "trace.tsv";
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Cipher(a) => cipher(&a),
        Command::PretrainLm(a) => pretrain(&a),
        Command::Train(a) => train(&a),
        Command::Transfer(a) => transfer(&a),
        Command::Eval(a) => eval(&a),
        Command::Elbo(a) => elbo(&a),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    if a.min_len == 0 || a.min_len > a.max_len {
        return Err(CliError::Usage(format!("invalid length range {}..={}", a.min_len, a.max_len)));
    }
    let spec = DecipherSpec {
        symbols: a.symbols,
        sentences: a.sentences,
        lens: a.min_len..=a.max_len,
        validation: a.validation,
        test: a.test,
    };
    let task = decipherment_task(a.seed, &spec)?;
    let v = &task.vocab;
    let d = &a.out;
    io::write_vocab(&d.join(files::VOCAB), v)?;
    io::write_key(&d.join(files::KEY), v, &task.key)?;
    io::write_corpus(&d.join(files::TRAIN[0]), v, &task.train_plain)?;
    io::write_corpus(&d.join(files::TRAIN[1]), v, &task.train_cipher)?;
    io::write_corpus(&d.join(files::VALID[0]), v, &task.val_plain)?;
    io::write_corpus(&d.join(files::VALID[1]), v, &task.val_cipher)?;
    io::write_corpus(&d.join(files::TEST[0]), v, &task.test_plain)?;
    io::write_corpus(&d.join(files::TEST[1]), v, &task.test_cipher)?;
    io::write_corpus(&d.join(files::TEST_REF[0]), v, &task.test_cipher)?;
    io::write_corpus(&d.join(files::TEST_REF[1]), v, &task.test_plain)?;
    Ok(())
}

fn cipher(a: &CipherArgs) -> Result<()> {
    let vocab = io::read_vocab(&a.vocab)?;
    let key = io::read_key(&a.key, &vocab)?;
    let key = if a.inverse { key.inverse() } else { key };
    let (from, to) = if a.inverse { (Domain::D2, Domain::D1) } else { (Domain::D1, Domain::D2) };
    let corpus = io::read_corpus(&a.input, &vocab, from)?;
    let out = key.apply(&corpus)?;
    let out: Vec<_> = out.into_iter().map(|s| dlsm_core::nn::Sequence::in_domain(s.ids, to)).collect();
    io::write_corpus(&a.output, &vocab, &out)
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let vocab = io::read_vocab(&a.data.join(files::VOCAB))?;
    let mut rng = Rng::seed(a.seed);
    let cfg = LmTrainConfig {
        epochs: a.lm_epochs,
        ..LmTrainConfig::default()
    };
    let lm_config = LmConfig {
        vocab_size: vocab.len(),
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden_dim,
    };
    for d in Domain::BOTH {
        let train = io::read_corpus(&a.data.join(files::TRAIN[d.index()]), &vocab, d)?;
        let (lm, _) = pretrain_lm(&train, lm_config.clone(), &cfg, &mut rng)?;
        let valid_path = a.data.join(files::VALID[d.index()]);
        if valid_path.exists() {
            let valid = io::read_corpus(&valid_path, &vocab, d)?;
            println!("lm {:?} validation perplexity {:.4}", d, perplexity(&lm, &valid)?);
        }
        checkpoint::lm_checkpoint(&lm).save(&a.out.join(files::LM[d.index()]))?;
    }
    Ok(())
}

/// Loads both frozen priors from `dir`.
pub fn load_priors(dir: &Path) -> Result<Priors> {
    let load = |i: usize| -> Result<_> {
        let path = dir.join(files::LM[i]);
        if !path.exists() {
            return Err(CliError::Missing {
                what: "pretrained language model",
                path,
            });
        }
        checkpoint::lm_from_checkpoint(&Checkpoint::load(&path)?)
    };
    Ok(Priors { d1: load(0)?, d2: load(1)? })
}

fn load_pair(dir: &Path, names: [&str; 2], vocab: &Vocab) -> Result<[Vec<dlsm_core::nn::Sequence>; 2]> {
    Ok([
        io::read_corpus(&dir.join(names[0]), vocab, Domain::D1)?,
        io::read_corpus(&dir.join(names[1]), vocab, Domain::D2)?,
    ])
}

fn trace_text(tr: &Trainer) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for r in &tr.trace {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

fn train(a: &TrainArgs) -> Result<()> {
    let vocab = io::read_vocab(&a.data.join(files::VOCAB))?;
    let priors = load_priors(&a.lm)?;
    let [train_x, train_y] = load_pair(&a.data, files::TRAIN, &vocab)?;
    let [val_x, val_y] = load_pair(&a.data, files::VALID, &vocab)?;
    let data = dlsm_core::vi::TrainData {
        train_x,
        train_y,
        val_x,
        val_y,
    };
    let mut trainer = if a.resume {
        let ck = Checkpoint::load(&a.out.join(files::LAST))?;
        checkpoint::trainer_from_checkpoint(&ck)?
    } else {
        let cfg = config::parse_config(a.flags.config.as_deref(), &a.flags.overrides()?)?;
        Trainer::from_config(vocab.len(), cfg)?
    };
    if trainer.model.config().vocab_size != vocab.len() {
        return Err(CliError::Usage("checkpoint vocabulary size differs from the data".into()));
    }
    io::atomic_write(&a.out.join("config.txt"), config::to_text(&trainer.config).as_bytes())?;
    let mut budget = a.max_epochs.unwrap_or(usize::MAX);
    while trainer.epoch < trainer.config.epochs && budget > 0 {
        let val = trainer.run_epoch(&priors, &data)?;
        budget -= 1;
        println!("epoch {} validation elbo/word {val:.6}", trainer.epoch);
        let ck = checkpoint::trainer_checkpoint(&trainer);
        ck.save(&a.out.join(format!("epoch-{:03}.ckpt", trainer.epoch)))?;
        ck.save(&a.out.join(files::LAST))?;
        checkpoint::model_checkpoint(trainer.best_model()).save(&a.out.join(files::BEST))?;
        io::atomic_write(&a.out.join(files::TRACE), trace_text(&trainer).as_bytes())?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<dlsm_core::latent::LatentModel> {
    checkpoint::model_from_checkpoint(&Checkpoint::load(path)?)
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let vocab = io::read_vocab(&a.vocab)?;
    let from: Domain = a.from.into();
    let input = io::read_corpus(&a.input, &vocab, from)?;
    let out = transfer_corpus(&model, &input, from.other())?;
    io::write_corpus(&a.output, &vocab, &out)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let vocab = io::read_vocab(&a.data.join(files::VOCAB))?;
    let priors = load_priors(&a.lm)?;
    let [train_x, train_y] = load_pair(&a.data, files::TRAIN, &vocab)?;
    let [test_x, test_y] = load_pair(&a.data, files::TEST, &vocab)?;
    let classifier = naive_bayes_classifier(&train_x, &train_y)?;
    let refs = if a.data.join(files::TEST_REF[0]).exists() {
        let [rx, ry] = [
            io::read_corpus(&a.data.join(files::TEST_REF[0]), &vocab, Domain::D2)?,
            io::read_corpus(&a.data.join(files::TEST_REF[1]), &vocab, Domain::D1)?,
        ];
        Some((rx, ry))
    } else {
        None
    };
    let train_cfg = match a.checkpoint.parent().map(|p| p.join("config.txt")) {
        Some(p) if p.exists() => config::parse_config(Some(&p), &[])?,
        _ => dlsm_core::vi::TrainConfig::default(),
    };
    let settings = ElboSettings {
        config: &train_cfg,
        repeats: a.repeats,
        mode: ReconDecoding::Greedy,
        seed: a.seed,
    };
    let (report, [out_x, out_y]) = full_eval(
        &model,
        &priors,
        &classifier,
        &test_x,
        &test_y,
        refs.as_ref().map(|(rx, ry)| References { x_to_y: rx, y_to_x: ry }),
        &settings,
    )?;
    report.check_invariants()?;
    let mut text = report.to_key_values();
    text.push_str("bleu_units=token_ids\n");
    let key_path = a.data.join(files::KEY);
    if key_path.exists() {
        let key: CipherKey = io::read_key(&key_path, &vocab)?;
        let acc = token_mapping_accuracy(&test_y, &out_x, &key)?;
        text.push_str(&format!("token_mapping_accuracy={acc}\n"));
    }
    let dir = a.out.parent().unwrap_or(Path::new("."));
    io::write_corpus(&dir.join("test.d1.transfer"), &vocab, &out_y)?;
    io::write_corpus(&dir.join("test.d2.transfer"), &vocab, &out_x)?;
    io::atomic_write(&a.out, text.as_bytes())?;
    let row_path = a.out.with_extension("row");
    let row = format!("{}\n{}\n", dlsm_core::metrics::EvalReport::header('\t'), report.to_row('\t'));
    io::atomic_write(&row_path, row.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn elbo(a: &ElboArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let vocab = io::read_vocab(&a.data.join(files::VOCAB))?;
    let priors = load_priors(&a.lm)?;
    let [test_x, test_y] = load_pair(&a.data, files::TEST, &vocab)?;
    let train_cfg = match a.checkpoint.parent().map(|p| p.join("config.txt")) {
        Some(p) if p.exists() => config::parse_config(Some(&p), &[])?,
        _ => dlsm_core::vi::TrainConfig::default(),
    };
    let mode = match a.mode {
        ModeArg::Greedy => ReconDecoding::Greedy,
        ModeArg::Sample => ReconDecoding::Sample,
    };
    let mut rng = Rng::seed(a.seed);
    let (mean, std) =
        dlsm_core::metrics::elbo_report(&model, &priors, &test_x, &test_y, &train_cfg, a.repeats, mode, &mut rng)?;
    println!("elbo_per_word_mean={mean}\nelbo_per_word_std={std}");
    Ok(())
}
