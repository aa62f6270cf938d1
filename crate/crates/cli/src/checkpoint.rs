//! Checkpoint files: a text manifest, little-endian `f64` payload, and a
//! trailing CRC-32 of everything before it.
//!
//! ```text
//! DLSM-CHECKPOINT 1
//! kind trainer
//! meta step 120
//! tensor embed 64,32 0 2048
//! end
//! <payload><crc32 le>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use dlsm_core::latent::LatentModel;
use dlsm_core::lm::{LmConfig, LmParams};
use dlsm_core::nn::{ModelConfig, ModelParams};
use dlsm_core::optim::Adam;
use dlsm_core::vi::{Baseline, TraceRow, Trainer};
use dlsm_core::{Rng, RngState, Tensor};

use crate::config;
use crate::error::{CliError, Result};
use crate::io::atomic_write;

pub const MAGIC: &str = "DLSM-CHECKPOINT";
pub const VERSION: u32 = 1;

/// A named array; unlike [`Tensor`] it may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub records: Vec<Record>,
}

fn err(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(char::is_whitespace)
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| err(format!("missing field `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| err(format!("field `{key}` has malformed value `{v}`")))
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.records.push(Record {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn record(&self, name: &str) -> Result<&Record> {
        self.records.iter().find(|r| r.name == name).ok_or_else(|| err(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !valid_token(&self.kind) {
            return Err(err("kind must be a single token"));
        }
        let mut manifest = format!("{MAGIC} {VERSION}\nkind {}\n", self.kind);
        for (k, v) in &self.meta {
            if !valid_token(k) || v.contains('\n') {
                return Err(err(format!("field `{k}` cannot be serialized")));
            }
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for r in &self.records {
            if !valid_token(&r.name) || r.shape.iter().product::<usize>() != r.data.len() {
                return Err(err(format!("tensor `{}` cannot be serialized", r.name)));
            }
            let dims: Vec<String> = r.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("tensor {} {} {} {}\n", r.name, dims.join(","), offset, r.data.len()));
            offset += r.data.len() * 8;
        }
        manifest.push_str("end\n");
        let mut bytes = manifest.into_bytes();
        bytes.reserve(offset + 4);
        for r in &self.records {
            for x in &r.data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        Ok(bytes)
    }

    /// Parses and verifies a serialized checkpoint. The checksum is checked
    /// before anything else is interpreted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(err("truncated file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err(err("checksum mismatch"));
        }
        let end = body
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| err("manifest has no end marker"))?
            + 5;
        let manifest = std::str::from_utf8(&body[..end]).map_err(|_| err("manifest is not UTF-8"))?;
        let payload = &body[end..];
        let mut lines = manifest.lines();
        let header = lines.next().unwrap_or_default();
        match header.split_once(' ') {
            Some((MAGIC, v)) if v == VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(err(format!("unsupported version {v}, expected {VERSION}"))),
            _ => return Err(err("not a checkpoint file")),
        }
        let mut ck = Checkpoint::default();
        let mut expected_offset = 0usize;
        for line in lines {
            let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
            match tag {
                "kind" => ck.kind = rest.to_string(),
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let [name, dims, off, count] = f[..] else {
                        return Err(err(format!("malformed tensor line `{line}`")));
                    };
                    let shape = dims
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err(format!("malformed shape `{dims}`")))?;
                    let off: usize = off.parse().map_err(|_| err("malformed offset"))?;
                    let count: usize = count.parse().map_err(|_| err("malformed count"))?;
                    if off != expected_offset || shape.iter().product::<usize>() != count {
                        return Err(err(format!("inconsistent layout for `{name}`")));
                    }
                    let bytes_len = count * 8;
                    let chunk = payload
                        .get(off..off + bytes_len)
                        .ok_or_else(|| err(format!("payload too short for `{name}`")))?;
                    let data = chunk
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                        .collect();
                    expected_offset += bytes_len;
                    ck.push(name, shape, data);
                }
                "end" => {}
                _ => return Err(err(format!("unknown manifest line `{line}`"))),
            }
        }
        if expected_offset != payload.len() {
            return Err(err("payload length does not match manifest"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CliError::Missing {
                what: "checkpoint",
                path: path.to_path_buf(),
            });
        }
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    ck.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn push_tensors<'a>(ck: &mut Checkpoint, prefix: &str, named: impl IntoIterator<Item = (String, &'a Tensor)>) {
    for (n, t) in named {
        ck.push(format!("{prefix}{n}"), t.shape().to_vec(), t.data().to_vec());
    }
}

fn fill_tensors<'a>(
    ck: &Checkpoint,
    prefix: &str,
    names: Vec<String>,
    targets: impl IntoIterator<Item = &'a mut Tensor>,
) -> Result<()> {
    for (name, t) in names.into_iter().zip(targets) {
        let r = ck.record(&format!("{prefix}{name}"))?;
        if r.shape != t.shape() {
            return Err(err(format!("tensor `{prefix}{name}` has shape {:?}, expected {:?}", r.shape, t.shape())));
        }
        t.data_mut().copy_from_slice(&r.data);
    }
    Ok(())
}

fn put_model_config(ck: &mut Checkpoint, prefix: &str, c: &ModelConfig, tied: bool) {
    ck.set(&format!("{prefix}vocab_size"), c.vocab_size);
    ck.set(&format!("{prefix}embed_dim"), c.embed_dim);
    ck.set(&format!("{prefix}hidden_dim"), c.hidden_dim);
    ck.set(&format!("{prefix}pool_window"), c.pool_window);
    ck.set(&format!("{prefix}dropout"), c.dropout);
    ck.set(&format!("{prefix}input_feeding"), c.input_feeding);
    ck.set(&format!("{prefix}tied"), tied);
}

fn get_model_config(ck: &Checkpoint, prefix: &str) -> Result<(ModelConfig, bool)> {
    let p = |k: &str| format!("{prefix}{k}");
    Ok((
        ModelConfig {
            vocab_size: ck.parse(&p("vocab_size"))?,
            embed_dim: ck.parse(&p("embed_dim"))?,
            hidden_dim: ck.parse(&p("hidden_dim"))?,
            pool_window: ck.parse(&p("pool_window"))?,
            dropout: ck.parse(&p("dropout"))?,
            input_feeding: ck.parse(&p("input_feeding"))?,
        },
        ck.parse(&p("tied"))?,
    ))
}

/// Adds `model` under `prefix` (names and configuration).
pub fn put_model(ck: &mut Checkpoint, prefix: &str, model: &LatentModel) {
    put_model_config(ck, &format!("{prefix}model."), model.config(), model.is_tied());
    push_tensors(ck, prefix, model.named());
}

pub fn get_model(ck: &Checkpoint, prefix: &str) -> Result<LatentModel> {
    let (config, tied) = get_model_config(ck, &format!("{prefix}model."))?;
    let mut model = LatentModel {
        generative: ModelParams::zeros(config.clone())?,
        inference: if tied { None } else { Some(ModelParams::zeros(config)?) },
    };
    let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
    fill_tensors(ck, prefix, names, model.tensors_mut())?;
    Ok(model)
}

pub fn model_checkpoint(model: &LatentModel) -> Checkpoint {
    let mut ck = Checkpoint::new("model");
    put_model(&mut ck, "", model);
    ck
}

/// The model in a `model` checkpoint, or the current model of a `trainer` checkpoint.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<LatentModel> {
    match ck.kind.as_str() {
        "model" | "trainer" => get_model(ck, ""),
        other => Err(err(format!("expected a model checkpoint, found kind `{other}`"))),
    }
}

pub fn lm_checkpoint(lm: &LmParams) -> Checkpoint {
    let mut ck = Checkpoint::new("lm");
    ck.set("lm.vocab_size", lm.config.vocab_size);
    ck.set("lm.embed_dim", lm.config.embed_dim);
    ck.set("lm.hidden_dim", lm.config.hidden_dim);
    push_tensors(&mut ck, "", lm.named());
    ck
}

/// A frozen language model.
pub fn lm_from_checkpoint(ck: &Checkpoint) -> Result<LmParams> {
    if ck.kind != "lm" {
        return Err(err(format!("expected a language-model checkpoint, found kind `{}`", ck.kind)));
    }
    let config = LmConfig {
        vocab_size: ck.parse("lm.vocab_size")?,
        embed_dim: ck.parse("lm.embed_dim")?,
        hidden_dim: ck.parse("lm.hidden_dim")?,
    };
    let mut lm = LmParams::zeros(config);
    let names: Vec<String> = lm.named().into_iter().map(|(n, _)| n).collect();
    fill_tensors(ck, "", names, lm.tensors_mut())?;
    lm.frozen = true;
    Ok(lm)
}

const TRACE_COLUMNS: usize = 11;

/// Full training state, sufficient to resume bit-for-bit.
pub fn trainer_checkpoint(tr: &Trainer) -> Checkpoint {
    let mut ck = Checkpoint::new("trainer");
    for line in config::to_text(&tr.config).lines() {
        let (k, v) = line.split_once('=').expect("canonical config line");
        ck.set(&format!("config.{k}"), v);
    }
    put_model(&mut ck, "", &tr.model);
    let names: Vec<String> = tr.model.named().into_iter().map(|(n, _)| n).collect();
    ck.set("adam.t", tr.optimizer.t);
    for (i, n) in names.iter().enumerate() {
        ck.push(format!("adam.m/{n}"), vec![tr.optimizer.m[i].len()], tr.optimizer.m[i].clone());
        ck.push(format!("adam.v/{n}"), vec![tr.optimizer.v[i].len()], tr.optimizer.v[i].clone());
    }
    let rs = tr.rng.state();
    let seed_hex: String = rs.seed.iter().map(|b| format!("{b:02x}")).collect();
    ck.set("rng.seed", seed_hex);
    ck.set("rng.stream", rs.stream);
    ck.set("rng.word_pos", rs.word_pos);
    ck.set("step", tr.step);
    ck.set("epoch", tr.epoch);
    ck.set("baseline.decay", tr.baseline.decay);
    if let Some(b) = tr.baseline.value {
        ck.set("baseline.value", b);
    }
    if let Some((val, best)) = &tr.best {
        ck.set("best.val_elbo_per_word", val);
        put_model(&mut ck, "best/", best);
    }
    let mut trace = Vec::with_capacity(tr.trace.len() * TRACE_COLUMNS);
    for r in &tr.trace {
        trace.extend_from_slice(&[
            r.step as f64,
            r.epoch as f64,
            r.alpha,
            r.train_loss,
            r.recon_x,
            r.recon_y,
            r.kl_x,
            r.kl_y,
            r.neg_entropy_x,
            r.neg_entropy_y,
            r.val_elbo_per_word.unwrap_or(f64::NAN),
        ]);
    }
    ck.push("trace", vec![tr.trace.len(), TRACE_COLUMNS], trace);
    ck
}

pub fn trainer_from_checkpoint(ck: &Checkpoint) -> Result<Trainer> {
    if ck.kind != "trainer" {
        return Err(err(format!("expected a trainer checkpoint, found kind `{}`", ck.kind)));
    }
    let overrides: Vec<(String, String)> = ck
        .meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
        .collect();
    let cfg = config::parse_config(None, &overrides)?;
    let model = get_model(ck, "")?;
    let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
    let mut optimizer = Adam::new(cfg.optimizer, &[]);
    optimizer.t = ck.parse("adam.t")?;
    for n in &names {
        optimizer.m.push(ck.record(&format!("adam.m/{n}"))?.data.clone());
        optimizer.v.push(ck.record(&format!("adam.v/{n}"))?.data.clone());
    }
    let seed_hex = ck.get("rng.seed")?;
    if seed_hex.len() != 64 {
        return Err(err("malformed rng seed"));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| err("malformed rng seed"))?;
    }
    let rng = Rng::from_state(RngState {
        seed,
        stream: ck.parse("rng.stream")?,
        word_pos: ck.parse("rng.word_pos")?,
    });
    let baseline = Baseline {
        value: match ck.meta.get("baseline.value") {
            Some(_) => Some(ck.parse("baseline.value")?),
            None => None,
        },
        decay: ck.parse("baseline.decay")?,
    };
    let best = match ck.meta.get("best.val_elbo_per_word") {
        Some(_) => Some((ck.parse("best.val_elbo_per_word")?, get_model(ck, "best/")?)),
        None => None,
    };
    let t = ck.record("trace")?;
    if t.shape.len() != 2 || t.shape[1] != TRACE_COLUMNS {
        return Err(err("malformed trace"));
    }
    let trace = t
        .data
        .chunks_exact(TRACE_COLUMNS)
        .map(|r| TraceRow {
            step: r[0] as u64,
            epoch: r[1] as usize,
            alpha: r[2],
            train_loss: r[3],
            recon_x: r[4],
            recon_y: r[5],
            kl_x: r[6],
            kl_y: r[7],
            neg_entropy_x: r[8],
            neg_entropy_y: r[9],
            val_elbo_per_word: if r[10].is_nan() { None } else { Some(r[10]) },
        })
        .collect();
    Ok(Trainer {
        config: cfg,
        model,
        optimizer,
        rng,
        step: ck.parse("step")?,
        epoch: ck.parse("epoch")?,
        baseline,
        best,
        trace,
    })
}
