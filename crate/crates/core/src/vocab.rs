use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};

use indexmap::IndexMap;

use crate::error::{CoreError, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const UNK: usize = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Lowercased words (alphanumeric runs) and single punctuation marks.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token → id map. Reserved ids come first, then the corpus tokens in
/// sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: IndexMap<String, usize>,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Self {
        let tokens: BTreeSet<String> = corpus.iter().flat_map(|s| words(s.as_ref())).collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut ids = IndexMap::new();
        for r in RESERVED {
            ids.insert(r.to_string(), ids.len());
        }
        for t in tokens {
            if !ids.contains_key(&t) {
                ids.insert(t, ids.len());
            }
        }
        Vocabulary { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.ids.get_index(id).map(|(t, _)| t.as_str())
    }

    /// Corpus tokens (reserved entries excluded) in id order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.ids.keys().skip(RESERVED.len()).map(String::as_str)
    }

    /// One token per line; line `i` has id `i + 3`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for t in self.tokens() {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in BufReader::new(r).lines() {
            let line = line?;
            if line.is_empty() || RESERVED.contains(&line.as_str()) || tokens.contains(&line) {
                return Err(CoreError::Config(format!(
                    "vocabulary line {:?} is empty, reserved or repeated",
                    line
                )));
            }
            tokens.push(line);
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Fixed-length id sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<usize>,
    /// Non-padding positions, `[CLS]` included.
    pub length: usize,
    /// The text had no tokens.
    pub empty: bool,
    pub truncated: bool,
}

/// `[CLS]` + word ids, cut or padded with `[PAD]` to `max_seq_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_seq_len: usize) -> Tokenized {
    let w = words(text);
    let mut ids = Vec::with_capacity(max_seq_len);
    ids.push(CLS);
    ids.extend(
        w.iter()
            .take(max_seq_len.saturating_sub(1))
            .map(|t| vocab.id(t)),
    );
    let length = ids.len();
    ids.resize(max_seq_len, PAD);
    Tokenized {
        ids,
        length,
        empty: w.is_empty(),
        truncated: w.len() + 1 > max_seq_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_lookup_with_cls_and_padding() {
        let v = Vocabulary::build(&["EEG seizure"]);
        let t = tokenize("EEG seizure", &v, 5);
        assert_eq!(t.ids, vec![CLS, v.id("eeg"), v.id("seizure"), PAD, PAD]);
        assert_eq!(t.length, 3);
        assert_eq!(tokenize("EEG seizure", &v, 5), t);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocabulary::build(&["eeg"]);
        assert_eq!(
            tokenize("eeg spike", &v, 4).ids,
            vec![CLS, v.id("eeg"), UNK, PAD]
        );
    }

    #[test]
    fn empty_text_is_flagged() {
        let v = Vocabulary::build(&["eeg"]);
        let t = tokenize("  ", &v, 4);
        assert!(t.empty);
        assert_eq!(t.ids, vec![CLS, PAD, PAD, PAD]);
    }

    #[test]
    fn punctuation_splits_and_lowercases() {
        assert_eq!(
            words("Spike-wave, 3Hz!"),
            vec!["spike", "-", "wave", ",", "3hz", "!"]
        );
    }

    #[test]
    fn ids_dense_and_sorted_and_round_trip() {
        let v = Vocabulary::build(&["zeta alpha", "beta alpha"]);
        assert_eq!(v.len(), 6);
        assert_eq!(
            v.tokens().collect::<Vec<_>>(),
            vec!["alpha", "beta", "zeta"]
        );
        assert_eq!(v.id("alpha"), 3);
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(Vocabulary::read(&buf[..]).unwrap(), v);
        assert!(Vocabulary::read(&b"alpha\n[PAD]\n"[..]).is_err());
    }

    #[test]
    fn truncation_keeps_exact_length() {
        let v = Vocabulary::build(&["a b c d e"]);
        let t = tokenize("a b c d e", &v, 4);
        assert_eq!(t.ids.len(), 4);
        assert!(t.truncated);
        assert_eq!(t.length, 4);
    }
}
