use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{OptimizerConfig, OptimizerState};
use crate::autodiff::{Graph, Matrix};
use crate::corpus::{CorpusSplit, StyleSet, Vocabulary};
use crate::error::{Error, Result};
use crate::nets::{ClassifierArch, StyleClassifier};
use crate::rng;

/// Classifier architecture and pretraining schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub feature_maps: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// epochs without dev improvement before stopping
    pub patience: usize,
    /// held-out share of the training data when no dev split is given
    pub dev_fraction: f64,
    /// training examples used per epoch; 0 means all
    pub max_train_examples: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            widths: vec![3, 4, 5],
            feature_maps: 100,
            dropout: 0.5,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 10,
            patience: 2,
            dev_fraction: 0.1,
            max_train_examples: 0,
            max_len: 20,
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn arch(&self, vocab_size: usize) -> ClassifierArch {
        ClassifierArch {
            vocab_size,
            embed_dim: self.embed_dim,
            widths: self.widths.clone(),
            feature_maps: self.feature_maps,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("classifier batch_size and max_epochs must be positive".into()));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config("dev_fraction must lie in (0, 1)".into()));
        }
        self.arch(1).validate()
    }
}

/// A token sequence with a class index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub tokens: Vec<String>,
    pub label: usize,
}

fn accuracy(classifier: &StyleClassifier, ids: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    let predicted = classifier.predict(ids)?;
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len().max(1) as f64)
}

/// Trains a classifier with early stopping on dev accuracy and returns it
/// frozen, with its best dev accuracy in percent.
pub fn train_text_classifier(
    examples: &[LabeledExample],
    dev: Option<&[LabeledExample]>,
    labels: Vec<String>,
    vocab: &Vocabulary,
    config: &ClassifierTrainConfig,
) -> Result<(StyleClassifier, f64)> {
    config.validate()?;
    let classes: BTreeSet<usize> = examples.iter().map(|e| e.label).collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "training data has {} distinct label(s)",
            classes.len()
        )));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= labels.len()) {
        return Err(Error::InvalidInput(format!("label index {bad} has no class name")));
    }
    let mut rng = rng::seeded(config.seed, rng::tag("classifier-train"));
    let (train, held_out): (Vec<LabeledExample>, Vec<LabeledExample>) = match dev {
        Some(d) if !d.is_empty() => (examples.to_vec(), d.to_vec()),
        _ => {
            let mut shuffled = examples.to_vec();
            shuffled.shuffle(&mut rng);
            let n_dev = ((shuffled.len() as f64 * config.dev_fraction).round() as usize)
                .clamp(1, shuffled.len() - 1);
            let train = shuffled.split_off(n_dev);
            (train, shuffled)
        }
    };
    let encode = |e: &LabeledExample| vocab.encode_tokens(&e.tokens, config.max_len);
    let train_ids: Vec<Vec<usize>> = train.iter().map(encode).collect();
    let dev_ids: Vec<Vec<usize>> = held_out.iter().map(encode).collect();
    let dev_labels: Vec<usize> = held_out.iter().map(|e| e.label).collect();

    let mut classifier = StyleClassifier::new(config.arch(vocab.len()), labels, config.seed)?;
    let opt_config = OptimizerConfig {
        learning_rate: config.learning_rate,
        ..Default::default()
    };
    let mut opt = OptimizerState::new(classifier.params());
    let mut best = (accuracy(&classifier, &dev_ids, &dev_labels)?, classifier.params().clone());
    let mut stalls = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let take = match config.max_train_examples {
            0 => order.len(),
            n => n.min(order.len()),
        };
        for chunk in order[..take].chunks(config.batch_size) {
            let ids: Vec<Vec<usize>> = chunk.iter().map(|&i| train_ids[i].clone()).collect();
            let targets: Vec<Option<usize>> = chunk.iter().map(|&i| Some(train[i].label)).collect();
            let grads = {
                let mut g = Graph::new();
                let v = classifier.bind(&mut g);
                let logits = classifier.logits_ids(&mut g, &v, &ids, Some(&mut rng))?;
                let lp = g.log_softmax(logits);
                let picked = g.pick_rows(lp, &targets);
                let sum = g.sum_all(picked);
                let loss = g.scale(sum, -1.0 / chunk.len() as f64);
                if !g.scalar(loss).is_finite() {
                    return Err(Error::Divergence { step: opt.step });
                }
                let mut grads = g.backward(loss);
                v.params
                    .iter()
                    .zip(classifier.params().values())
                    .map(|(&p, m)| grads.take(p).unwrap_or_else(|| Matrix::zeros(m.dim())))
                    .collect::<Vec<_>>()
            };
            let params = classifier.params_mut().expect("not frozen while training");
            opt.apply(params, grads, &opt_config)?;
        }
        let acc = accuracy(&classifier, &dev_ids, &dev_labels)?;
        if acc > best.0 {
            best = (acc, classifier.params().clone());
            stalls = 0;
        } else {
            stalls += 1;
        }
        if best.0 >= 100.0 || stalls >= config.patience.max(1) {
            break;
        }
    }
    let arch = classifier.arch().clone();
    let labels = classifier.labels().to_vec();
    let classifier = StyleClassifier::from_parameters(arch, labels, best.1, true)?;
    Ok((classifier, best.0))
}

fn style_examples(split: &CorpusSplit, styles: &StyleSet) -> Result<Vec<LabeledExample>> {
    split
        .records()
        .iter()
        .map(|r| {
            if r.style().name().is_none() {
                return Err(Error::InvalidStyle(
                    "style classifiers need labeled sentences".into(),
                ));
            }
            Ok(LabeledExample {
                tokens: r.tokens().to_vec(),
                label: styles.index_of(r.style())?,
            })
        })
        .collect()
}

/// Pretrains a style classifier on one domain's labeled sentences, early
/// stopping on `dev` (or a held-out share of `train`), and returns it frozen
/// with its dev accuracy.
pub fn pretrain_style_classifier(
    train: &CorpusSplit,
    dev: Option<&CorpusSplit>,
    styles: &StyleSet,
    vocab: &Vocabulary,
    config: &ClassifierTrainConfig,
) -> Result<(StyleClassifier, f64)> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let examples = style_examples(train, styles)?;
    let dev_examples = dev.map(|d| style_examples(d, styles)).transpose()?;
    train_text_classifier(
        &examples,
        dev_examples.as_deref(),
        styles.names().to_vec(),
        vocab,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, SentenceRecord, SplitName, Style};

    fn corpus(sentences: &[(&str, &str)]) -> CorpusSplit {
        let records = sentences
            .iter()
            .map(|(t, s)| SentenceRecord::from_text(t, Style::known(*s), Domain::Target).unwrap())
            .collect();
        CorpusSplit::new(SplitName::Train, Domain::Target, records).unwrap()
    }

    #[test]
    fn single_class_corpus_is_degenerate() {
        let c = corpus(&[("a b", "pos"), ("b c", "pos")]);
        let styles = StyleSet::new(["neg", "pos"]).unwrap();
        let vocab = Vocabulary::build(&[&c], 1, 100).unwrap();
        let r = pretrain_style_classifier(&c, None, &styles, &vocab, &Default::default());
        assert!(matches!(r, Err(Error::DegenerateLabels(_))));
    }
}
