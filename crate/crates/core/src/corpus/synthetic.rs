//! Synthetic two-domain style corpora.
//!
//! Sentences instantiate templates whose `{c}` slots take content words of
//! the sentence's domain and whose `{s}` slots take style words of its style
//! (shared across domains, or specific to the domain). Style words belong to
//! exactly one style, so a sentence's style is determined by them, and the
//! two domains have disjoint content and domain-specific style lexicons.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusSplit, Domain, SentenceRecord, SplitName, Style};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const CONTENT_SLOT: &str = "{c}";
pub const STYLE_SLOT: &str = "{s}";

/// Sentences to generate per style for each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: SplitName) -> usize {
        match split {
            SplitName::Train => self.train,
            SplitName::Dev => self.dev,
            SplitName::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusSpec {
    pub styles: Vec<String>,
    pub source_content: Vec<String>,
    pub target_content: Vec<String>,
    /// style -> words usable in either domain
    pub shared_style_words: BTreeMap<String, Vec<String>>,
    /// style -> words used only in the source domain
    pub source_style_words: BTreeMap<String, Vec<String>>,
    /// style -> words used only in the target domain
    pub target_style_words: BTreeMap<String, Vec<String>>,
    pub templates: Vec<String>,
    pub source_counts: SplitCounts,
    pub target_counts: SplitCounts,
    pub seed: u64,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn style_map(negative: &[&str], positive: &[&str]) -> BTreeMap<String, Vec<String>> {
    BTreeMap::from([
        ("negative".to_string(), words(negative)),
        ("positive".to_string(), words(positive)),
    ])
}

impl Default for SyntheticCorpusSpec {
    /// Movie reviews as the source domain, restaurant reviews as the target.
    fn default() -> Self {
        Self {
            styles: words(&["negative", "positive"]),
            source_content: words(&[
                "plot", "actor", "actress", "script", "director", "soundtrack", "ending", "cast",
                "scene", "dialogue", "cinematography", "sequel", "villain", "hero", "twist",
                "screenplay", "trailer", "character", "performance", "film", "movie", "story",
                "camera", "editing", "premise", "narrator", "finale", "comedy", "drama", "costume",
            ]),
            target_content: words(&[
                "pizza", "burger", "pasta", "salad", "waiter", "waitress", "service", "menu",
                "dessert", "steak", "soup", "bread", "coffee", "sushi", "noodles", "chef",
                "kitchen", "fries", "sandwich", "taco", "patio", "bartender", "owner", "portion",
                "sauce", "chicken", "rice", "wine", "breakfast", "staff",
            ]),
            shared_style_words: style_map(
                &["bad", "terrible", "awful", "horrible", "poor"],
                &["great", "good", "excellent", "wonderful", "amazing"],
            ),
            source_style_words: style_map(
                &["boring", "dull", "predictable", "tedious"],
                &["hilarious", "imaginative", "gripping", "touching"],
            ),
            target_style_words: style_map(
                &["bland", "greasy", "stale", "rude"],
                &["delicious", "tasty", "fresh", "friendly"],
            ),
            templates: words(&[
                "the {c} was {s} .",
                "the {c} is {s} .",
                "i thought the {c} was {s} .",
                "the {c} was {s} and the {c} was {s} .",
                "honestly , the {c} is {s} .",
                "we found the {c} {s} and the {c} {s} .",
                "what a {s} {c} !",
                "the {c} and the {c} were {s} .",
                "overall the {c} seemed {s} .",
                "my friend said the {c} was really {s} .",
            ]),
            source_counts: SplitCounts {
                train: 20_000,
                dev: 0,
                test: 0,
            },
            target_counts: SplitCounts {
                train: 2_000,
                dev: 250,
                test: 250,
            },
            seed: 7,
        }
    }
}

/// Generated corpora, one split per name and domain. Splits with a zero
/// count are empty.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub source: BTreeMap<SplitName, CorpusSplit>,
    pub target: BTreeMap<SplitName, CorpusSplit>,
}

impl SyntheticCorpus {
    pub fn split(&self, domain: Domain, split: SplitName) -> &CorpusSplit {
        match domain {
            Domain::Source => &self.source[&split],
            Domain::Target => &self.target[&split],
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn content(&self, domain: Domain) -> &[String] {
        match domain {
            Domain::Source => &self.source_content,
            Domain::Target => &self.target_content,
        }
    }

    pub fn domain_style_words(&self, domain: Domain) -> &BTreeMap<String, Vec<String>> {
        match domain {
            Domain::Source => &self.source_style_words,
            Domain::Target => &self.target_style_words,
        }
    }

    pub fn counts(&self, domain: Domain) -> SplitCounts {
        match domain {
            Domain::Source => self.source_counts,
            Domain::Target => self.target_counts,
        }
    }

    /// Style words usable for `style` in `domain`.
    pub fn style_words(&self, domain: Domain, style: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for map in [&self.shared_style_words, self.domain_style_words(domain)] {
            if let Some(ws) = map.get(style) {
                out.extend(ws.iter().map(String::as_str));
            }
        }
        out
    }

    /// Every word that may only occur in `domain`.
    pub fn domain_only_words(&self, domain: Domain) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = self.content(domain).iter().map(String::as_str).collect();
        for ws in self.domain_style_words(domain).values() {
            out.extend(ws.iter().map(String::as_str));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        if self.styles.len() < 2 {
            return err("at least two styles are required".into());
        }
        let styles: BTreeSet<&str> = self.styles.iter().map(String::as_str).collect();
        if styles.len() != self.styles.len() {
            return err("duplicate style names".into());
        }
        let all_words = self
            .source_content
            .iter()
            .chain(&self.target_content)
            .chain(self.shared_style_words.values().flatten())
            .chain(self.source_style_words.values().flatten())
            .chain(self.target_style_words.values().flatten());
        for w in all_words {
            if w.is_empty() || w.chars().any(char::is_whitespace) || w.contains('{') {
                return err(format!("lexicon entry {w:?} is not a single token"));
            }
        }
        for map in [
            &self.shared_style_words,
            &self.source_style_words,
            &self.target_style_words,
        ] {
            if let Some(bad) = map.keys().find(|k| !styles.contains(k.as_str())) {
                return err(format!("style lexicon for undeclared style `{bad}`"));
            }
        }
        let src_content: BTreeSet<&str> = self.source_content.iter().map(String::as_str).collect();
        let tgt_content: BTreeSet<&str> = self.target_content.iter().map(String::as_str).collect();
        if src_content.is_empty() || tgt_content.is_empty() {
            return err("both domains need content words".into());
        }
        if let Some(w) = src_content.intersection(&tgt_content).next() {
            return err(format!("content lexicons overlap on `{w}`"));
        }
        let src_style: BTreeSet<&str> = self
            .source_style_words
            .values()
            .flatten()
            .map(String::as_str)
            .collect();
        let tgt_style: BTreeSet<&str> = self
            .target_style_words
            .values()
            .flatten()
            .map(String::as_str)
            .collect();
        if let Some(w) = src_style.intersection(&tgt_style).next() {
            return err(format!("domain-specific style lexicons overlap on `{w}`"));
        }
        // each style word belongs to one style and is never a content word
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for map in [
            &self.shared_style_words,
            &self.source_style_words,
            &self.target_style_words,
        ] {
            for (style, ws) in map {
                for w in ws {
                    if let Some(prev) = owner.insert(w, style) {
                        if prev != style || map.values().flatten().filter(|x| *x == w).count() > 1 {
                            return err(format!("style word `{w}` listed more than once"));
                        }
                    }
                    if src_content.contains(w.as_str()) || tgt_content.contains(w.as_str()) {
                        return err(format!("`{w}` is both a style and a content word"));
                    }
                }
            }
        }
        for domain in [Domain::Source, Domain::Target] {
            for style in &self.styles {
                if self.style_words(domain, style).is_empty() {
                    return err(format!("no {style} style words for the {domain} domain"));
                }
            }
        }
        if self.templates.is_empty() {
            return err("no templates".into());
        }
        for t in &self.templates {
            let toks: Vec<&str> = t.split_whitespace().collect();
            if !toks.contains(&STYLE_SLOT) {
                return err(format!("template {t:?} has no style slot"));
            }
            for tok in toks {
                if tok == STYLE_SLOT || tok == CONTENT_SLOT {
                    continue;
                }
                if owner.contains_key(tok) || src_content.contains(tok) || tgt_content.contains(tok) {
                    return err(format!("template word `{tok}` is also a lexicon entry"));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut Rng, domain: Domain, style: &str) -> Vec<String> {
        let template = self.templates.choose(rng).expect("validated non-empty");
        let content = self.content(domain);
        let style_words = self.style_words(domain, style);
        let mut used_content: Vec<&str> = Vec::new();
        template
            .split_whitespace()
            .map(|tok| match tok {
                CONTENT_SLOT => {
                    // distinct content words within one sentence when possible
                    let mut w = content.choose(rng).expect("validated").as_str();
                    for _ in 0..8 {
                        if !used_content.contains(&w) {
                            break;
                        }
                        w = content.choose(rng).expect("validated").as_str();
                    }
                    used_content.push(w);
                    w.to_string()
                }
                STYLE_SLOT => style_words.choose(rng).expect("validated").to_string(),
                other => other.to_string(),
            })
            .collect()
    }
}

/// Generates every split of both domains. Sentences are unique within a
/// domain, so splits are disjoint.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut out = SyntheticCorpus {
        source: BTreeMap::new(),
        target: BTreeMap::new(),
    };
    for domain in [Domain::Source, Domain::Target] {
        let mut rng = rng::seeded(spec.seed, rng::tag(domain.as_str()));
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        let counts = spec.counts(domain);
        for split in SplitName::ALL {
            let mut records = Vec::new();
            for style in &spec.styles {
                let want = counts.get(split);
                let budget = 100 * want + 1000;
                let mut made = 0;
                let mut attempts = 0;
                while made < want {
                    attempts += 1;
                    if attempts > budget {
                        return Err(Error::Spec(format!(
                            "template space too small for {want} unique {domain} {style} sentences"
                        )));
                    }
                    let tokens = spec.sample(&mut rng, domain, style);
                    if seen.insert(tokens.clone()) {
                        records.push(SentenceRecord::new(tokens, Style::known(style), domain)?);
                        made += 1;
                    }
                }
            }
            records.shuffle(&mut rng);
            let split_corpus = CorpusSplit::new(split, domain, records)?;
            match domain {
                Domain::Source => out.source.insert(split, split_corpus),
                Domain::Target => out.target.insert(split, split_corpus),
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            source_counts: SplitCounts {
                train: 300,
                dev: 20,
                test: 0,
            },
            target_counts: SplitCounts {
                train: 100,
                dev: 20,
                test: 20,
            },
            ..Default::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        SyntheticCorpusSpec::default().validate().unwrap();
    }

    #[test]
    fn no_target_sentence_uses_source_only_words() {
        let spec = small_spec();
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let movie_words = spec.domain_only_words(Domain::Source);
        let food_words = spec.domain_only_words(Domain::Target);
        for split in corpus.target.values() {
            for r in split.records() {
                assert!(r.tokens().iter().all(|t| !movie_words.contains(t.as_str())));
            }
        }
        for split in corpus.source.values() {
            for r in split.records() {
                assert!(r.tokens().iter().all(|t| !food_words.contains(t.as_str())));
            }
        }
    }

    #[test]
    fn counts_are_exact_per_style() {
        let mut spec = small_spec();
        spec.target_counts.train = 1000;
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let train = corpus.split(Domain::Target, SplitName::Train);
        assert_eq!(train.of_style("positive").len(), 1000);
        assert_eq!(train.of_style("negative").len(), 1000);
        assert!(corpus.split(Domain::Source, SplitName::Test).is_empty());
    }

    #[test]
    fn style_is_determined_by_style_words() {
        let spec = small_spec();
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        for domain in [Domain::Source, Domain::Target] {
            for r in corpus.split(domain, SplitName::Train).records() {
                let style = r.style().name().unwrap();
                let other: Vec<&str> = spec
                    .styles
                    .iter()
                    .filter(|s| *s != style)
                    .flat_map(|s| spec.style_words(domain, s))
                    .collect();
                let own = spec.style_words(domain, style);
                assert!(r.tokens().iter().any(|t| own.contains(&t.as_str())));
                assert!(r.tokens().iter().all(|t| !other.contains(&t.as_str())));
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let spec = small_spec();
        let a = generate_synthetic_corpus(&spec).unwrap();
        let b = generate_synthetic_corpus(&spec).unwrap();
        let texts = |c: &CorpusSplit| c.records().iter().map(|r| r.text()).collect::<HashSet<_>>();
        let train = texts(a.split(Domain::Target, SplitName::Train));
        let dev = texts(a.split(Domain::Target, SplitName::Dev));
        let test = texts(a.split(Domain::Target, SplitName::Test));
        assert!(train.is_disjoint(&dev) && train.is_disjoint(&test) && dev.is_disjoint(&test));
        assert_eq!(a.target, b.target);
        assert_eq!(a.source, b.source);
    }

    #[test]
    fn majority_class_predictor_scores_half() {
        let corpus = generate_synthetic_corpus(&small_spec()).unwrap();
        let train = corpus.split(Domain::Target, SplitName::Train);
        let majority = train.of_style("negative").len().max(train.of_style("positive").len());
        assert_eq!(majority as f64 / train.len() as f64, 0.5);
    }

    #[test]
    fn overlapping_lexicons_are_spec_errors() {
        let mut spec = small_spec();
        spec.target_content.push("plot".into());
        assert!(matches!(generate_synthetic_corpus(&spec), Err(Error::Spec(_))));

        let mut spec = small_spec();
        spec.target_style_words
            .get_mut("positive")
            .unwrap()
            .push("hilarious".into());
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));

        let mut spec = small_spec();
        spec.shared_style_words
            .get_mut("negative")
            .unwrap()
            .push("great".into());
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
    }

    #[test]
    fn impossible_counts_are_spec_errors() {
        let spec = SyntheticCorpusSpec {
            source_content: words(&["a"]),
            target_content: words(&["b"]),
            templates: words(&["the {c} was {s} ."]),
            target_counts: SplitCounts {
                train: 500,
                dev: 0,
                test: 0,
            },
            ..small_spec()
        };
        assert!(matches!(generate_synthetic_corpus(&spec), Err(Error::Spec(_))));
    }
}
