use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_frequency: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    min_frequency: usize,
    tokens: Vec<String>,
}

impl From<VocabularyFile> for Vocabulary {
    fn from(f: VocabularyFile) -> Self {
        let index = f.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens: f.tokens,
            index,
            min_frequency: f.min_frequency,
        }
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            min_frequency: v.min_frequency,
            tokens: v.tokens,
        }
    }
}

/// Tokens with frequency at least `min_frequency`, most frequent first,
/// ties broken lexicographically, after the four reserved entries.
pub fn build_vocabulary(corpus: &[Vec<String>], min_frequency: usize) -> Result<Vocabulary> {
    if min_frequency == 0 {
        return Err(Error::Contract("min_frequency must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for tok in corpus.iter().flatten() {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_frequency && !RESERVED.contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_owned()))
        .collect();
    Ok(VocabularyFile { min_frequency, tokens }.into())
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// BOS, token ids, EOS.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        std::iter::once(BOS)
            .chain(tokens.iter().map(|t| self.index_of(t)))
            .chain(std::iter::once(EOS))
            .collect()
    }

    /// Words for ids, stopping at EOS and skipping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_owned())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(json_err(path))?;
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let v: Vocabulary = serde_json::from_str(&text).map_err(json_err(path))?;
        if v.tokens.len() < RESERVED.len() || v.tokens[..4] != RESERVED.map(String::from) {
            return Err(Error::Format {
                path: path.into(),
                reason: "reserved tokens missing or remapped".into(),
            });
        }
        if v.index.len() != v.tokens.len() {
            return Err(Error::Format {
                path: path.into(),
                reason: "duplicate tokens".into(),
            });
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Vec<String>> {
        vec![vec!["a".into(), "b".into()], vec!["a".into()]]
    }

    #[test]
    fn threshold_examples() {
        let v = build_vocabulary(&corpus(), 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.index_of("a"), 4);
        assert_eq!(v.index_of("b"), 5);
        assert_eq!(build_vocabulary(&corpus(), 2).unwrap().len(), 5);
        assert_eq!(build_vocabulary(&[], 1).unwrap().len(), 4);
        assert!(build_vocabulary(&corpus(), 0).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = build_vocabulary(&corpus(), 1).unwrap();
        let ids = v.encode(&["b".into(), "zzz".into()]);
        assert_eq!(ids, [BOS, 5, UNK, EOS]);
        assert_eq!(v.decode(&ids), ["b", "<unk>"]);
    }
}
