//! `key=value` experiment configuration.

use std::path::Path;

use dlsm_core::vi::{Estimator, Objective, ReconDecoding, TrainConfig};

use crate::error::{CliError, Result};

/// Every recognized key, in serialization order.
pub const KEYS: [&str; 25] = [
    "lambda",
    "anneal_epochs",
    "estimator",
    "objective",
    "recon_decoding",
    "share_kl_sample",
    "gumbel_temp",
    "noise_drop",
    "noise_shuffle",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "clip_norm",
    "seed",
    "epochs",
    "batch_size",
    "sort_buffer",
    "embed_dim",
    "hidden_dim",
    "pool_window",
    "dropout",
    "input_feeding",
    "tie_parameters",
    "baseline_decay",
];

fn bad(key: &str, value: &str, expected: &'static str) -> CliError {
    CliError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    }
}

fn real(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(key, v, "a finite number"))
}

fn count(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, v, "a boolean")),
    }
}

pub fn parse_estimator(v: &str) -> Option<Estimator> {
    match v {
        "stop_gradient" | "stop-gradient" => Some(Estimator::StopGradient),
        "gumbel" | "gumbel_st" | "gumbel-st" => Some(Estimator::GumbelSt),
        "reinforce" => Some(Estimator::Reinforce),
        _ => None,
    }
}

pub fn parse_objective(v: &str) -> Option<Objective> {
    match v {
        "elbo" => Some(Objective::Elbo),
        "bt_nll" | "bt-nll" => Some(Objective::BtNll),
        "unmt" => Some(Objective::Unmt),
        _ => None,
    }
}

pub fn parse_recon(v: &str) -> Option<ReconDecoding> {
    match v {
        "greedy" => Some(ReconDecoding::Greedy),
        "sample" => Some(ReconDecoding::Sample),
        _ => None,
    }
}

/// Sets one key, rejecting unknown keys and malformed values.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let v = value.trim();
    match key.trim() {
        "lambda" => cfg.lambda = real(key, v)?,
        "anneal_epochs" => cfg.anneal_epochs = count(key, v)?,
        "estimator" => cfg.estimator = parse_estimator(v).ok_or_else(|| bad(key, v, "stop_gradient, gumbel or reinforce"))?,
        "objective" => cfg.objective = parse_objective(v).ok_or_else(|| bad(key, v, "elbo, bt_nll or unmt"))?,
        "recon_decoding" => cfg.recon_decoding = parse_recon(v).ok_or_else(|| bad(key, v, "greedy or sample"))?,
        "share_kl_sample" => cfg.share_kl_sample = flag(key, v)?,
        "gumbel_temp" => cfg.gumbel_temperature = real(key, v)?,
        "noise_drop" => cfg.noise_drop = real(key, v)?,
        "noise_shuffle" => cfg.noise_shuffle = count(key, v)?,
        "lr" => cfg.optimizer.lr = real(key, v)?,
        "beta1" => cfg.optimizer.beta1 = real(key, v)?,
        "beta2" => cfg.optimizer.beta2 = real(key, v)?,
        "adam_eps" => cfg.optimizer.eps = real(key, v)?,
        "clip_norm" => {
            cfg.optimizer.clip_norm = match v {
                "none" => None,
                _ => Some(real(key, v)?),
            }
        }
        "seed" => cfg.seed = v.parse().map_err(|_| bad(key, v, "an unsigned 64-bit integer"))?,
        "epochs" => cfg.epochs = count(key, v)?,
        "batch_size" => cfg.batch_size = count(key, v)?,
        "sort_buffer" => cfg.sort_buffer = count(key, v)?,
        "embed_dim" => cfg.embed_dim = count(key, v)?,
        "hidden_dim" => cfg.hidden_dim = count(key, v)?,
        "pool_window" => cfg.pool_window = count(key, v)?,
        "dropout" => cfg.dropout = real(key, v)?,
        "input_feeding" => cfg.input_feeding = flag(key, v)?,
        "tie_parameters" => cfg.tie_parameters = flag(key, v)?,
        "baseline_decay" => cfg.baseline_decay = real(key, v)?,
        other => return Err(CliError::UnknownKey(other.to_string())),
    }
    Ok(())
}

/// Parses `key=value` lines over the defaults. Blank lines and `#` comments are skipped.
pub fn parse_text(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got `{line}`", n + 1)))?;
        apply(&mut cfg, k, v)?;
    }
    Ok(cfg)
}

/// Reads an optional file, then applies `overrides` in order and validates.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
            parse_text(&text)?
        }
        None => TrainConfig::default(),
    };
    for (k, v) in overrides {
        apply(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical text form; `parse_text(to_text(c)) == c`.
pub fn to_text(cfg: &TrainConfig) -> String {
    let estimator = match cfg.estimator {
        Estimator::StopGradient => "stop_gradient",
        Estimator::GumbelSt => "gumbel",
        Estimator::Reinforce => "reinforce",
    };
    let objective = match cfg.objective {
        Objective::Elbo => "elbo",
        Objective::BtNll => "bt_nll",
        Objective::Unmt => "unmt",
    };
    let recon = match cfg.recon_decoding {
        ReconDecoding::Greedy => "greedy",
        ReconDecoding::Sample => "sample",
    };
    let clip = cfg.optimizer.clip_norm.map_or_else(|| "none".to_string(), |c| c.to_string());
    let values = [
        cfg.lambda.to_string(),
        cfg.anneal_epochs.to_string(),
        estimator.to_string(),
        objective.to_string(),
        recon.to_string(),
        cfg.share_kl_sample.to_string(),
        cfg.gumbel_temperature.to_string(),
        cfg.noise_drop.to_string(),
        cfg.noise_shuffle.to_string(),
        cfg.optimizer.lr.to_string(),
        cfg.optimizer.beta1.to_string(),
        cfg.optimizer.beta2.to_string(),
        cfg.optimizer.eps.to_string(),
        clip,
        cfg.seed.to_string(),
        cfg.epochs.to_string(),
        cfg.batch_size.to_string(),
        cfg.sort_buffer.to_string(),
        cfg.embed_dim.to_string(),
        cfg.hidden_dim.to_string(),
        cfg.pool_window.to_string(),
        cfg.dropout.to_string(),
        cfg.input_feeding.to_string(),
        cfg.tie_parameters.to_string(),
        cfg.baseline_decay.to_string(),
    ];
    KEYS.iter().zip(values).map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_text("").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.lambda, 0.03);
        assert_eq!(cfg.anneal_epochs, 2);
        assert_eq!(cfg.estimator, Estimator::StopGradient);
        assert_eq!(cfg.objective, Objective::Elbo);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.lambda = 0.1 + 0.2;
        cfg.estimator = Estimator::Reinforce;
        cfg.optimizer.clip_norm = None;
        cfg.tie_parameters = false;
        assert_eq!(parse_text(&to_text(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(parse_text("lamda=0.1"), Err(CliError::UnknownKey(_))));
        assert!(matches!(parse_text("epochs=ten"), Err(CliError::BadValue { .. })));
        assert!(matches!(parse_text("estimator=adam"), Err(CliError::BadValue { .. })));
        assert!(parse_text("just words").is_err());
    }

    #[test]
    fn comments_and_spacing() {
        let cfg = parse_text("# desk run\n lambda = 0.5 \n\nepochs=3\n").unwrap();
        assert_eq!((cfg.lambda, cfg.epochs), (0.5, 3));
    }
}
