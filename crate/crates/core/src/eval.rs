//! Automatic metrics: BLEU, style accuracy, domain accuracy and G-score,
//! plus report assembly.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Domain, SentenceRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::nets::{StyleClassifier, TransferModel};
use crate::objectives::{flip_styles, transfer_records, LossContext};
use crate::rng;
use crate::training::{train_text_classifier, ClassifierTrainConfig, LabeledExample};

pub const MAX_ORDER: usize = 4;
/// Stand-in for a zero modified precision.
pub const ZERO_PRECISION: f64 = 1e-9;

/// Sufficient statistics of corpus BLEU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    /// clipped n-gram matches, n = 1..=4
    pub matches: [u64; MAX_ORDER],
    /// hypothesis n-grams, n = 1..=4
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    /// summed closest reference lengths
    pub ref_len: u64,
}

impl BleuStats {
    pub fn precisions(&self) -> [f64; MAX_ORDER] {
        let mut out = [0.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            out[n] = if self.matches[n] == 0 {
                ZERO_PRECISION
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
        }
        out
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// BLEU on a 0-100 scale.
    pub fn score(&self) -> f64 {
        let log_mean: f64 = self
            .precisions()
            .iter()
            .map(|p| p.ln() / MAX_ORDER as f64)
            .sum();
        100.0 * self.brevity_penalty() * log_mean.exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus statistics; each hypothesis may have several references.
pub fn bleu_stats(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<BleuStats> {
    if hypotheses.len() != references.len() {
        return Err(Error::InputMismatch(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::InputMismatch("no hypotheses".into()));
    }
    let mut stats = BleuStats::default();
    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::InputMismatch("hypothesis without a reference".into()));
        }
        let h = hyp.len() as u64;
        stats.hyp_len += h;
        stats.ref_len += refs
            .iter()
            .map(|r| r.len() as u64)
            .min_by_key(|&r| (r.abs_diff(h), r))
            .expect("non-empty references");
        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[String], u64> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (g, c) in hyp_counts {
                stats.totals[n - 1] += c;
                stats.matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    Ok(stats)
}

/// Corpus-level 4-gram BLEU in `[0, 100]`.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    Ok(bleu_stats(hypotheses, references)?.score())
}

/// `sqrt(s_acc * bleu)` on the native 0-100 scales.
pub fn g_score(s_acc: f64, bleu: f64) -> Result<f64> {
    if !(s_acc >= 0.0 && bleu >= 0.0) || !s_acc.is_finite() || !bleu.is_finite() {
        return Err(Error::InvalidMetric(format!(
            "g_score needs non-negative inputs, got ({s_acc}, {bleu})"
        )));
    }
    Ok((s_acc * bleu).sqrt())
}

fn classifier_ids(vocab: &Vocabulary, sentences: &[Vec<String>], max_len: usize) -> Vec<Vec<usize>> {
    sentences
        .iter()
        .map(|s| vocab.encode_tokens(s, max_len))
        .collect()
}

/// Percentage of sentences whose predicted class is the intended one.
pub fn style_accuracy(
    classifier: &StyleClassifier,
    vocab: &Vocabulary,
    sentences: &[Vec<String>],
    intended: &[usize],
    max_len: usize,
) -> Result<f64> {
    if !classifier.is_frozen() {
        return Err(Error::FrozenClassifierRequired);
    }
    if sentences.len() != intended.len() {
        return Err(Error::InputMismatch(format!(
            "{} sentences but {} intended styles",
            sentences.len(),
            intended.len()
        )));
    }
    if sentences.is_empty() {
        return Err(Error::InputMismatch("no sentences to score".into()));
    }
    let predicted = classifier.predict(&classifier_ids(vocab, sentences, max_len))?;
    let hits = predicted.iter().zip(intended).filter(|(p, i)| p == i).count();
    Ok(100.0 * hits as f64 / sentences.len() as f64)
}

/// Percentage of sentences the domain classifier assigns to the target
/// domain.
pub fn domain_accuracy(
    classifier: &StyleClassifier,
    vocab: &Vocabulary,
    sentences: &[Vec<String>],
    max_len: usize,
) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::InputMismatch("no sentences to score".into()));
    }
    let target = classifier
        .labels()
        .iter()
        .position(|l| l == Domain::Target.as_str())
        .ok_or_else(|| Error::Config("domain classifier has no `target` class".into()))?;
    let predicted = classifier.predict(&classifier_ids(vocab, sentences, max_len))?;
    let hits = predicted.iter().filter(|&&p| p == target).count();
    Ok(100.0 * hits as f64 / sentences.len() as f64)
}

/// Trains a frozen source-vs-target classifier on equal numbers of real
/// sentences from each domain. Returns the classifier and its dev accuracy.
pub fn train_domain_classifier(
    source: &CorpusSplit,
    target: &CorpusSplit,
    vocab: &Vocabulary,
    config: &ClassifierTrainConfig,
) -> Result<(StyleClassifier, f64)> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::DegenerateLabels(
            "both domains need sentences to train a domain classifier".into(),
        ));
    }
    let n = source.len().min(target.len());
    let mut rng = rng::seeded(config.seed, rng::tag("domain-balance"));
    let pick = |c: &CorpusSplit, rng: &mut rng::Rng| -> Vec<Vec<String>> {
        rand::seq::index::sample(rng, c.len(), n)
            .into_iter()
            .map(|i| c.records()[i].tokens().to_vec())
            .collect()
    };
    let mut examples: Vec<LabeledExample> = pick(source, &mut rng)
        .into_iter()
        .map(|tokens| LabeledExample { tokens, label: 0 })
        .collect();
    examples.extend(
        pick(target, &mut rng)
            .into_iter()
            .map(|tokens| LabeledExample { tokens, label: 1 }),
    );
    let labels = vec![Domain::Source.as_str().to_string(), Domain::Target.as_str().to_string()];
    train_text_classifier(&examples, None, labels, vocab, config)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuReference {
    /// human-written transferred references
    Human,
    /// the input sentences themselves
    Input,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub sentences: usize,
    pub per_style: BTreeMap<String, usize>,
}

/// Metric report of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub d_acc: Option<f64>,
    pub s_acc: f64,
    pub bleu: f64,
    pub bleu_reference: BleuReference,
    pub g_score: f64,
    pub counts: ReportCounts,
    pub checkpoint_id: String,
    pub style_classifier_id: String,
    pub domain_classifier_id: Option<String>,
}

impl EvaluationReport {
    /// Range checks and `g_score == sqrt(s_acc * bleu)`.
    pub fn validate(&self) -> Result<()> {
        let in_range = |x: f64| (0.0..=100.0).contains(&x);
        if !in_range(self.s_acc) || !in_range(self.bleu) || !self.d_acc.map_or(true, in_range) {
            return Err(Error::InvalidMetric("metric outside [0, 100]".into()));
        }
        if (g_score(self.s_acc, self.bleu)? - self.g_score).abs() > 1e-6 {
            return Err(Error::InvalidMetric("g_score inconsistent with s_acc and bleu".into()));
        }
        Ok(())
    }
}

/// Identifiers recorded in a report.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReportIds {
    pub checkpoint: String,
    pub style_classifier: String,
    pub domain_classifier: Option<String>,
}

/// One transferred test sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Transferred {
    pub input: SentenceRecord,
    pub from: usize,
    pub to: usize,
    pub output: Vec<String>,
}

/// Metrics over already-transferred sentences.
pub fn evaluate_transfers(
    transfers: &[Transferred],
    ctx: &LossContext,
    style_classifier: &StyleClassifier,
    domain_classifier: Option<&StyleClassifier>,
    references: Option<&[Vec<String>]>,
    ids: &ReportIds,
) -> Result<EvaluationReport> {
    let outputs: Vec<Vec<String>> = transfers.iter().map(|t| t.output.clone()).collect();
    let intended: Vec<usize> = transfers.iter().map(|t| t.to).collect();
    let (refs, flag): (Vec<Vec<Vec<String>>>, _) = match references {
        Some(r) => {
            if r.len() != transfers.len() {
                return Err(Error::InputMismatch(format!(
                    "{} references for {} test sentences",
                    r.len(),
                    transfers.len()
                )));
            }
            (r.iter().map(|s| vec![s.clone()]).collect(), BleuReference::Human)
        }
        None => (
            transfers
                .iter()
                .map(|t| vec![t.input.tokens().to_vec()])
                .collect(),
            BleuReference::Input,
        ),
    };
    let max_len = ctx.options.max_len;
    let s_acc = style_accuracy(style_classifier, ctx.vocab, &outputs, &intended, max_len)?;
    let bleu = bleu(&outputs, &refs)?;
    let d_acc = domain_classifier
        .map(|d| domain_accuracy(d, ctx.vocab, &outputs, max_len))
        .transpose()?;
    let mut per_style = BTreeMap::new();
    for t in transfers {
        let name = ctx.styles.name(t.from).unwrap_or("unknown").to_string();
        *per_style.entry(name).or_insert(0) += 1;
    }
    let report = EvaluationReport {
        d_acc,
        s_acc,
        bleu,
        bleu_reference: flag,
        g_score: g_score(s_acc, bleu)?,
        counts: ReportCounts {
            sentences: transfers.len(),
            per_style,
        },
        checkpoint_id: ids.checkpoint.clone(),
        style_classifier_id: ids.style_classifier.clone(),
        domain_classifier_id: ids.domain_classifier.clone(),
    };
    report.validate()?;
    Ok(report)
}

/// Greedy transfer of every test sentence to a flipped style.
pub fn transfer_split(
    model: &TransferModel,
    ctx: &LossContext,
    test: &CorpusSplit,
) -> Result<Vec<Transferred>> {
    let records: Vec<&SentenceRecord> = test.records().iter().collect();
    let from: Vec<usize> = records
        .iter()
        .map(|r| ctx.styles.index_of(r.style()))
        .collect::<Result<_>>()?;
    let mut flip_rng = rng::seeded(0, rng::tag("eval-flip"));
    let to = flip_styles(&from, ctx.styles.len(), &mut flip_rng)?;
    let outputs = transfer_records(model, ctx, &records, &to, Domain::Target)?;
    Ok(records
        .into_iter()
        .zip(from)
        .zip(to)
        .zip(outputs)
        .map(|(((input, from), to), output)| Transferred {
            input: input.clone(),
            from,
            to,
            output,
        })
        .collect())
}

/// Transfers `test`, scores it, and when `out_dir` is given writes
/// `report.json` and one `transfer.<from>-to-<to>.txt` per style pair with
/// lines in test order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &TransferModel,
    ctx: &LossContext,
    test: &CorpusSplit,
    style_classifier: &StyleClassifier,
    domain_classifier: Option<&StyleClassifier>,
    references: Option<&[Vec<String>]>,
    ids: &ReportIds,
    out_dir: Option<&Path>,
) -> Result<(EvaluationReport, Vec<Transferred>)> {
    let transfers = transfer_split(model, ctx, test)?;
    let report = evaluate_transfers(
        &transfers,
        ctx,
        style_classifier,
        domain_classifier,
        references,
        ids,
    )?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_transfers(&transfers, ctx, dir)?;
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok((report, transfers))
}

/// Writes `transfer.<from>-to-<to>.txt` files.
pub fn write_transfers(transfers: &[Transferred], ctx: &LossContext, dir: &Path) -> Result<()> {
    let mut files: BTreeMap<(usize, usize), String> = BTreeMap::new();
    for t in transfers {
        let text = files.entry((t.from, t.to)).or_default();
        text.push_str(&t.output.join(" "));
        text.push('\n');
    }
    for ((from, to), text) in files {
        let name = format!(
            "transfer.{}-to-{}.txt",
            ctx.styles.name(from).unwrap_or("unknown"),
            ctx.styles.name(to).unwrap_or("unknown")
        );
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
