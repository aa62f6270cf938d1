use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Number of reserved ids preceding the first corpus token.
pub const RESERVED: usize = 4;
pub const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<s>", "</s>", "<unk>"];

/// One of the two text domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    D1,
    D2,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::D1, Domain::D2];

    pub fn index(self) -> usize {
        match self {
            Domain::D1 => 0,
            Domain::D2 => 1,
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::D1 => Domain::D2,
            Domain::D2 => Domain::D1,
        }
    }
}

/// Token ids of one sentence. The terminating EOS is implicit and never stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Sequence {
    pub ids: Vec<usize>,
    pub domain: Option<Domain>,
}

impl Sequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids, domain: None }
    }

    pub fn in_domain(ids: Vec<usize>, domain: Domain) -> Self {
        Self {
            ids,
            domain: Some(domain),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Bidirectional map between surface tokens and dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Corpus tokens in id order, starting at id [`RESERVED`].
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut out = Self {
            tokens: RESERVED_TOKENS.iter().map(|t| t.to_string()).collect(),
            index: BTreeMap::new(),
        };
        for (id, t) in RESERVED_TOKENS.iter().enumerate() {
            out.index.insert(t.to_string(), id);
        }
        for t in tokens {
            let t: String = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary token {t:?}")));
            }
            if out.index.contains_key(&t) {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
            out.index.insert(t.clone(), out.tokens.len());
            out.tokens.push(t);
        }
        Ok(out)
    }

    /// Total size including reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED
    }

    /// Non-reserved tokens in id order.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, line: &str) -> Sequence {
        Sequence::new(line.split_whitespace().map(|t| self.id(t)).collect())
    }

    pub fn decode(&self, seq: &Sequence) -> String {
        let words: Vec<&str> = seq
            .ids
            .iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED_TOKENS[UNK]))
            .collect();
        words.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_precede_corpus_tokens() {
        let v = Vocab::new(["a", "b"]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.get("a"), Some(4));
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.token(EOS), Some("</s>"));
    }

    #[test]
    fn duplicates_and_reserved_names_are_rejected() {
        assert!(Vocab::new(["a", "a"]).is_err());
        assert!(Vocab::new(["<s>"]).is_err());
        assert!(Vocab::new(["a b"]).is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let v = Vocab::new(["x", "y", "z"]).unwrap();
        let s = v.encode("z x y x");
        assert_eq!(s.ids, [6, 4, 5, 4]);
        assert_eq!(v.decode(&s), "z x y x");
    }
}
