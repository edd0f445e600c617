use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::CorpusSplit;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

const HEADER: &str = "#dastkit-vocab";

/// Token/id bijection shared by both domains and every style.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
    min_frequency: usize,
    max_size: usize,
}

impl Vocabulary {
    /// Counts tokens across `corpora`, keeps those seen at least
    /// `min_frequency` times, orders them by descending count then
    /// lexicographically, and truncates so the total size (specials
    /// included) is at most `max_size`.
    pub fn build(corpora: &[&CorpusSplit], min_frequency: usize, max_size: usize) -> Result<Self> {
        if corpora.is_empty() || corpora.iter().all(|c| c.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        if min_frequency == 0 {
            return Err(Error::Config("min_frequency must be at least 1".into()));
        }
        if max_size < SPECIAL_TOKENS.len() {
            return Err(Error::Config(format!(
                "max_size must leave room for the {} special tokens",
                SPECIAL_TOKENS.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for corpus in corpora {
            for record in corpus.records() {
                for tok in record.tokens() {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(tok, n)| *n >= min_frequency && !SPECIAL_TOKENS.contains(tok))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        entries.truncate(max_size - SPECIAL_TOKENS.len());

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut freq = vec![0; SPECIAL_TOKENS.len()];
        for (tok, n) in entries {
            tokens.push(tok.to_string());
            freq.push(n);
        }
        Ok(Self::from_parts(tokens, freq, min_frequency, max_size))
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<usize>, min_frequency: usize, max_size: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            counts,
            index,
            min_frequency,
            max_size,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> Option<usize> {
        self.counts.get(id).copied()
    }

    /// `BOS ids.. EOS`, keeping at most `max_len` tokens.
    pub fn encode_sentence(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len().min(max_len) + 2);
        ids.push(BOS);
        ids.extend(tokens.iter().take(max_len).map(|t| self.id(t)));
        ids.push(EOS);
        ids
    }

    /// Token ids without framing, truncated to `max_len`.
    pub fn encode_tokens(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        tokens.iter().take(max_len).map(|t| self.id(t)).collect()
    }

    /// Inverse of [`Vocabulary::encode_sentence`]: drops a leading BOS, stops at
    /// the first EOS and skips padding.
    pub fn decode_ids(&self, ids: &[usize]) -> Vec<String> {
        let body = match ids.first() {
            Some(&BOS) => &ids[1..],
            _ => ids,
        };
        body.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD)
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK]).to_string())
            .collect()
    }

    /// SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Plain-text form: a header line, then `token<TAB>count` per id.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{HEADER}\tmin_frequency={}\tmax_size={}\n",
            self.min_frequency, self.max_size
        );
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            out.push_str(t);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "empty vocabulary file"))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(HEADER) {
            return Err(parse_err(1, "missing vocabulary header"));
        }
        let mut min_frequency = None;
        let mut max_size = None;
        for f in fields {
            match f.split_once('=') {
                Some(("min_frequency", v)) => min_frequency = v.parse().ok(),
                Some(("max_size", v)) => max_size = v.parse().ok(),
                _ => return Err(parse_err(1, "unrecognised header field")),
            }
        }
        let (Some(min_frequency), Some(max_size)) = (min_frequency, max_size) else {
            return Err(parse_err(1, "incomplete header"));
        };
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(i + 2, "expected token<TAB>count"))?;
            let count = count
                .parse()
                .map_err(|_| parse_err(i + 2, "count is not an integer"))?;
            tokens.push(tok.to_string());
            counts.push(count);
        }
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b)
        {
            return Err(parse_err(2, "special tokens missing or out of order"));
        }
        Ok(Self::from_parts(tokens, counts, min_frequency, max_size))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, SentenceRecord, SplitName, Style};

    fn split(sentences: &[&str]) -> CorpusSplit {
        let records = sentences
            .iter()
            .map(|s| SentenceRecord::from_text(s, Style::known("p"), Domain::Target).unwrap())
            .collect();
        CorpusSplit::new(SplitName::Train, Domain::Target, records).unwrap()
    }

    #[test]
    fn min_frequency_filters_rare_tokens() {
        let c = split(&["a a", "a b"]);
        let v = Vocabulary::build(&[&c], 2, 100).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn max_size_counts_specials() {
        let c = split(&["a"]);
        let v = Vocabulary::build(&[&c], 1, 5).unwrap();
        assert_eq!(v.len(), 5);
        let c = split(&["a b c c"]);
        let v = Vocabulary::build(&[&c], 1, 5).unwrap();
        assert_eq!(v.token(4), Some("c"));
        assert_eq!(v.id("a"), UNK);
    }

    #[test]
    fn ties_break_lexicographically() {
        let c = split(&["z y x", "x y z"]);
        let v = Vocabulary::build(&[&c], 1, 100).unwrap();
        assert_eq!(&v.tokens[4..], ["x", "y", "z"]);
    }

    #[test]
    fn build_is_deterministic() {
        let c = split(&["the food was good .", "the plot was dull ."]);
        assert_eq!(
            Vocabulary::build(&[&c], 1, 100).unwrap(),
            Vocabulary::build(&[&c], 1, 100).unwrap()
        );
    }

    #[test]
    fn empty_corpora_rejected() {
        assert!(matches!(Vocabulary::build(&[], 1, 10), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn encode_frames_and_truncates() {
        let c = split(&["a"]);
        let v = Vocabulary::build(&[&c], 1, 10).unwrap();
        assert_eq!(v.encode_sentence(&["a".into()], 20), vec![BOS, 4, EOS]);
        assert_eq!(v.encode_sentence(&["zzz".into()], 20), vec![BOS, UNK, EOS]);
        let long: Vec<String> = (0..25).map(|_| "a".to_string()).collect();
        assert_eq!(v.encode_sentence(&long, 20).len(), 22);
    }

    #[test]
    fn text_form_round_trips() {
        let c = split(&["the food was good .", "the plot was dull ."]);
        let v = Vocabulary::build(&[&c], 1, 100).unwrap();
        let back = Vocabulary::parse(&v.to_text(), Path::new("mem")).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.hash(), back.hash());
    }
}
