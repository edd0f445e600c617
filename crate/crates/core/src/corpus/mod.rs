//! Sentence records, corpora and everything needed to turn text files into
//! model-ready id sequences.

mod batching;
mod io;
mod synthetic;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use batching::{BalancedBatcher, MixedBatch, SingleBatcher};
pub use io::{
    load_corpus, load_labeled_dir, parse_labeled_file_name, save_corpus, write_labeled_dir,
    CorpusFormat,
};
pub use synthetic::{generate_synthetic_corpus, SplitCounts, SyntheticCorpus, SyntheticCorpusSpec};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIAL_TOKENS, UNK};

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(tokens)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Row of the domain-embedding table.
    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::InvalidInput(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

/// A style label, or the reserved unknown style used for unlabelled source
/// data.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Style {
    Known(String),
    Unknown,
}

impl Style {
    pub fn known(name: impl Into<String>) -> Self {
        Style::Known(name.into())
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Style::Known(s) => Some(s),
            Style::Unknown => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentenceRecord {
    tokens: Vec<String>,
    style: Style,
    domain: Domain,
}

impl SentenceRecord {
    pub fn new(tokens: Vec<String>, style: Style, domain: Domain) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidInput(format!("malformed token {bad:?}")));
        }
        if style == Style::Unknown && domain == Domain::Target {
            return Err(Error::InvalidStyle(
                "target-domain records need a known style".into(),
            ));
        }
        Ok(Self {
            tokens,
            style,
            domain,
        })
    }

    /// Tokenizes `text` and builds a record.
    pub fn from_text(text: &str, style: Style, domain: Domain) -> Result<Self> {
        Self::new(tokenize(text)?, style, domain)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn style(&self) -> &Style {
        &self.style
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Same sentence with the style replaced by the unknown label.
    pub fn without_style(&self) -> Self {
        Self {
            tokens: self.tokens.clone(),
            style: Style::Unknown,
            domain: self.domain,
        }
    }
}

/// Ordered set of task styles. Index `len()` is reserved for the unknown
/// style.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleSet {
    names: Vec<String>,
}

impl StyleSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Config("a style set needs at least one style".into()));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Config(format!("duplicate style names in {names:?}")));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn unknown_index(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownStyle(name.to_string()))
    }

    /// Row of the style table for `style`; the unknown style maps to the
    /// reserved last row.
    pub fn index_of(&self, style: &Style) -> Result<usize> {
        match style {
            Style::Known(name) => self.position(name),
            Style::Unknown => Ok(self.unknown_index()),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplit {
    split: SplitName,
    domain: Domain,
    records: Vec<SentenceRecord>,
    links: Vec<(usize, usize)>,
}

impl CorpusSplit {
    pub fn new(split: SplitName, domain: Domain, records: Vec<SentenceRecord>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.domain != domain) {
            return Err(Error::InvalidInput(format!(
                "{} record in a {domain} split",
                r.domain
            )));
        }
        Ok(Self {
            split,
            domain,
            records,
            links: Vec::new(),
        })
    }

    /// A split whose records come in linked (informal, formal) pairs.
    pub fn parallel(
        split: SplitName,
        domain: Domain,
        records: Vec<SentenceRecord>,
        links: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let mut out = Self::new(split, domain, records)?;
        if links
            .iter()
            .any(|&(a, b)| a >= out.records.len() || b >= out.records.len())
        {
            return Err(Error::InvalidInput("parallel link out of range".into()));
        }
        out.links = links;
        Ok(out)
    }

    pub fn split(&self) -> SplitName {
        self.split
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn size(&self) -> usize {
        self.records.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_parallel(&self) -> bool {
        !self.links.is_empty()
    }

    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn parallel_pairs(&self) -> impl Iterator<Item = (&SentenceRecord, &SentenceRecord)> {
        self.links
            .iter()
            .map(move |&(a, b)| (&self.records[a], &self.records[b]))
    }

    /// Sorted names of the known styles present.
    pub fn style_names(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().filter_map(|r| r.style.name()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn has_unknown_styles(&self) -> bool {
        self.records.iter().any(|r| r.style == Style::Unknown)
    }

    /// Copy with every style replaced by the unknown label.
    pub fn without_styles(&self) -> Self {
        Self {
            split: self.split,
            domain: self.domain,
            records: self.records.iter().map(SentenceRecord::without_style).collect(),
            links: self.links.clone(),
        }
    }

    /// Deterministic stratified subsample keeping `fraction` of each style
    /// (at least one record per style present).
    pub fn fraction(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data fraction must lie in (0, 1], got {fraction}"
            )));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let mut by_style: Vec<(Style, Vec<usize>)> = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            match by_style.iter_mut().find(|(s, _)| *s == r.style) {
                Some((_, v)) => v.push(i),
                None => by_style.push((r.style.clone(), vec![i])),
            }
        }
        by_style.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = rng::seeded(seed, rng::tag("fraction"));
        let mut keep = Vec::new();
        for (_, mut idx) in by_style {
            idx.shuffle(&mut rng);
            let n = ((idx.len() as f64 * fraction).round() as usize).max(1);
            keep.extend_from_slice(&idx[..n]);
        }
        keep.sort_unstable();
        Self::new(
            self.split,
            self.domain,
            keep.into_iter().map(|i| self.records[i].clone()).collect(),
        )
    }

    /// Records of one style, in corpus order.
    pub fn of_style(&self, name: &str) -> Vec<&SentenceRecord> {
        self.records
            .iter()
            .filter(|r| r.style.name() == Some(name))
            .collect()
    }
}
