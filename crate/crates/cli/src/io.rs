//! Text formats for corpora, vocabularies and cipher keys, plus atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use dlsm_core::data::CipherKey;
use dlsm_core::nn::{Domain, Sequence, Vocab, RESERVED};

use crate::error::{CliError, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::Io {
            path: path.to_path_buf(),
            source: e,
        });
    }
    Ok(())
}

/// Reads a file that an earlier pipeline stage should have produced.
pub fn read_required(path: &Path, what: &'static str) -> Result<String> {
    if !path.exists() {
        return Err(CliError::Missing {
            what,
            path: path.to_path_buf(),
        });
    }
    fs::read_to_string(path).map_err(CliError::io(path))
}

/// One token per line; line `i` holds id `i + 4`.
pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = read_required(path, "vocabulary")?;
    Ok(Vocab::new(text.lines().filter(|l| !l.is_empty()).map(str::to_string))?)
}

pub fn vocab_text(vocab: &Vocab) -> String {
    vocab.corpus_tokens().iter().map(|t| format!("{t}\n")).collect()
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    atomic_write(path, vocab_text(vocab).as_bytes())
}

/// One sentence per line, tokens separated by single spaces. Unknown tokens
/// are rejected rather than silently mapped to UNK.
pub fn read_corpus(path: &Path, vocab: &Vocab, domain: Domain) -> Result<Vec<Sequence>> {
    let text = read_required(path, "corpus")?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                line: n + 1,
                message: "empty sentence".into(),
            });
        }
        let mut ids = Vec::new();
        for tok in line.split(' ') {
            let id = vocab.get(tok).ok_or_else(|| CliError::Format {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("token `{tok}` not in vocabulary"),
            })?;
            ids.push(id);
        }
        out.push(Sequence::in_domain(ids, domain));
    }
    Ok(out)
}

pub fn corpus_text(vocab: &Vocab, sents: &[Sequence]) -> String {
    sents.iter().map(|s| format!("{}\n", vocab.decode(s))).collect()
}

pub fn write_corpus(path: &Path, vocab: &Vocab, sents: &[Sequence]) -> Result<()> {
    atomic_write(path, corpus_text(vocab, sents).as_bytes())
}

/// Two space-separated tokens per line: plain, then cipher.
pub fn read_key(path: &Path, vocab: &Vocab) -> Result<CipherKey> {
    let text = read_required(path, "cipher key")?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fmt = |message: String| CliError::Format {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let mut parts = line.split(' ');
        let (Some(p), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(fmt("expected `plain cipher`".into()));
        };
        let id = |t: &str| vocab.get(t).filter(|&i| i >= RESERVED).ok_or_else(|| fmt(format!("token `{t}` not in vocabulary")));
        pairs.push((id(p)?, id(c)?));
    }
    Ok(CipherKey::new(pairs)?)
}

pub fn key_text(vocab: &Vocab, key: &CipherKey) -> String {
    key.pairs()
        .map(|(p, c)| format!("{} {}\n", vocab.token(p).unwrap_or("<unk>"), vocab.token(c).unwrap_or("<unk>")))
        .collect()
}

pub fn write_key(path: &Path, vocab: &Vocab, key: &CipherKey) -> Result<()> {
    atomic_write(path, key_text(vocab, key).as_bytes())
}
