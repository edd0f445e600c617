use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use crate::corpus::{
    generate_synthetic_corpus, load_corpus, load_labeled_dir, write_labeled_dir, CorpusFormat,
    CorpusSplit, Domain, SentenceRecord, SplitName, Style, StyleSet, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{self, EvaluationReport, ReportIds};
use crate::nets::StyleClassifier;
use crate::objectives::{transfer_records, LossContext};
use crate::training::{
    self, load_classifier, load_model, pretrain_style_classifier, save_classifier, save_model,
    ClassifierManifest, Regime, TrainClassifiers, TrainConfig, TrainData,
};

/// Which classifier `pretrain-cls` builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ClassifierRole {
    /// style classifier on source sentences
    StyleSource,
    /// style classifier on target sentences
    StyleTarget,
    /// source-vs-target classifier
    Domain,
    /// independently seeded target style classifier for evaluation
    EvalStyle,
}

impl ClassifierRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierRole::StyleSource => "style-source",
            ClassifierRole::StyleTarget => "style-target",
            ClassifierRole::Domain => "domain",
            ClassifierRole::EvalStyle => "eval-style",
        }
    }

    fn path(self, config: &RunConfig) -> &Path {
        let p = &config.paths;
        RunConfig::path(match self {
            ClassifierRole::StyleSource => &p.style_source_classifier,
            ClassifierRole::StyleTarget => &p.style_target_classifier,
            ClassifierRole::Domain => &p.domain_classifier,
            ClassifierRole::EvalStyle => &p.eval_style_classifier,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn split_path(dir: &Path, format: CorpusFormat, split: SplitName) -> Option<PathBuf> {
    match format {
        CorpusFormat::Jsonl => Some(dir.join(format!("{split}.jsonl"))),
        _ => None,
    }
}

/// Whether `dir` holds any file of `split`.
fn has_split(dir: &Path, format: CorpusFormat, split: SplitName) -> bool {
    if let Some(p) = split_path(dir, format, split) {
        return p.is_file();
    }
    let suffix = format!(".{split}.txt");
    fs::read_dir(dir)
        .map(|rd| {
            rd.flatten().any(|e| {
                let n = e.file_name().to_string_lossy().into_owned();
                n.ends_with(&suffix) && !n.starts_with("transfer.")
            })
        })
        .unwrap_or(false)
}

fn load_split(
    dir: &Path,
    format: CorpusFormat,
    split: SplitName,
    domain: Domain,
    styles: Option<&StyleSet>,
) -> Result<CorpusSplit> {
    match format {
        CorpusFormat::LabeledText => load_labeled_dir(dir, split, domain, styles),
        CorpusFormat::Jsonl => {
            load_corpus(&split_path(dir, format, split).expect("jsonl"), format, domain, styles)
        }
        CorpusFormat::ParallelTsv => Err(Error::Config(
            "parallel-tsv is only read through data.source_parallel".into(),
        )),
    }
}

fn domain_dir(config: &RunConfig, domain: Domain) -> &Path {
    RunConfig::path(match domain {
        Domain::Source => &config.data.source_dir,
        Domain::Target => &config.data.target_dir,
    })
}

/// Loaded corpora and the shared vocabulary.
struct Workspace {
    vocab: Vocabulary,
    styles: StyleSet,
}

impl Workspace {
    fn open(config: &RunConfig) -> Result<Self> {
        let path = RunConfig::path(&config.paths.prep).join("vocab.txt");
        let vocab = Vocabulary::load(&path)?;
        let styles = style_set(config)?;
        Ok(Self { vocab, styles })
    }
}

fn style_set(config: &RunConfig) -> Result<StyleSet> {
    if let Some(names) = &config.data.styles {
        return StyleSet::new(names.clone());
    }
    let train = load_split(
        domain_dir(config, Domain::Target),
        config.data.format,
        SplitName::Train,
        Domain::Target,
        None,
    )?;
    StyleSet::new(train.style_names())
}

fn load(
    config: &RunConfig,
    domain: Domain,
    split: SplitName,
    styles: &StyleSet,
) -> Result<CorpusSplit> {
    load_split(domain_dir(config, domain), config.data.format, split, domain, Some(styles))
}

fn load_optional(
    config: &RunConfig,
    domain: Domain,
    split: SplitName,
    styles: &StyleSet,
) -> Result<Option<CorpusSplit>> {
    if has_split(domain_dir(config, domain), config.data.format, split) {
        load(config, domain, split, styles).map(Some)
    } else {
        Ok(None)
    }
}

fn exists(dir: &Path) -> bool {
    dir.join("manifest.json").is_file()
}

fn required_classifier(
    config: &RunConfig,
    role: ClassifierRole,
    vocab: &Vocabulary,
    why: &str,
) -> Result<(StyleClassifier, ClassifierManifest)> {
    let dir = role.path(config);
    if !exists(dir) {
        return Err(Error::Config(format!(
            "{why} needs a {} classifier; none at {}",
            role.as_str(),
            dir.display()
        )));
    }
    load_classifier(dir, Some(vocab))
}

fn optional_classifier(
    config: &RunConfig,
    role: ClassifierRole,
    vocab: &Vocabulary,
) -> Result<Option<(StyleClassifier, ClassifierManifest)>> {
    let dir = role.path(config);
    if exists(dir) {
        load_classifier(dir, Some(vocab)).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Serialize)]
struct SynthManifest {
    seed: u64,
    styles: Vec<String>,
    files: Vec<SynthFile>,
}

#[derive(Serialize)]
struct SynthFile {
    domain: Domain,
    split: SplitName,
    path: PathBuf,
    sentences: usize,
}

/// Writes the synthetic corpus as labeled-text under `out/{source,target}`.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<()> {
    let corpus = generate_synthetic_corpus(&config.synth)?;
    let mut files = Vec::new();
    for (domain, splits) in [(Domain::Source, &corpus.source), (Domain::Target, &corpus.target)] {
        let dir = out.join(domain.as_str());
        for (split, c) in splits {
            if c.is_empty() {
                continue;
            }
            for path in write_labeled_dir(c, &dir)? {
                let style = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.split('.').next())
                    .unwrap_or_default()
                    .to_string();
                files.push(SynthFile {
                    domain,
                    split: *split,
                    sentences: c.of_style(&style).len(),
                    path: path.strip_prefix(out).unwrap_or(&path).to_path_buf(),
                });
            }
        }
    }
    let manifest = SynthManifest {
        seed: config.synth.seed,
        styles: config.synth.styles.clone(),
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    config.echo_into(out)?;
    println!("wrote {} files to {}", manifest.files.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct PrepStats {
    styles: Vec<String>,
    vocab_size: usize,
    vocab_hash: String,
    sizes: BTreeMap<Domain, BTreeMap<SplitName, usize>>,
}

/// Builds the vocabulary over both training splits and reports split sizes.
pub fn cmd_prep(config: &RunConfig, out: &Path) -> Result<()> {
    let styles = style_set(config)?;
    let mut sizes: BTreeMap<Domain, BTreeMap<SplitName, usize>> = BTreeMap::new();
    let mut train = Vec::new();
    for domain in [Domain::Source, Domain::Target] {
        for split in SplitName::ALL {
            let c = if split == SplitName::Train && domain == Domain::Target {
                Some(load(config, domain, split, &styles)?)
            } else {
                load_optional(config, domain, split, &styles)?
            };
            let n = c.as_ref().map_or(0, CorpusSplit::len);
            sizes.entry(domain).or_default().insert(split, n);
            if split == SplitName::Train {
                train.extend(c);
            }
        }
    }
    let refs: Vec<&CorpusSplit> = train.iter().collect();
    let vocab = Vocabulary::build(&refs, config.data.min_frequency, config.data.max_vocab)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    vocab.save(&out.join("vocab.txt"))?;
    let stats = PrepStats {
        styles: styles.names().to_vec(),
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        sizes,
    };
    write_json(&out.join("stats.json"), &stats)?;
    config.echo_into(out)?;
    print!("{}", size_table(&stats.sizes));
    println!("vocabulary: {} types", vocab.len());
    Ok(())
}

fn size_table(sizes: &BTreeMap<Domain, BTreeMap<SplitName, usize>>) -> String {
    let mut s = format!("{:<8}{:>10}{:>10}{:>10}\n", "domain", "train", "dev", "test");
    for (domain, splits) in sizes {
        let n = |sp| splits.get(&sp).copied().unwrap_or(0);
        let _ = writeln!(
            s,
            "{:<8}{:>10}{:>10}{:>10}",
            domain.as_str(),
            n(SplitName::Train),
            n(SplitName::Dev),
            n(SplitName::Test)
        );
    }
    s
}

#[derive(Serialize)]
struct ClassifierReport {
    role: &'static str,
    dev_accuracy: f64,
    checkpoint_id: String,
}

/// Pretrains and freezes one classifier.
pub fn cmd_pretrain_cls(config: &RunConfig, role: ClassifierRole, out: &Path) -> Result<()> {
    let ws = Workspace::open(config)?;
    let (classifier, dev_acc) = match role {
        ClassifierRole::StyleSource | ClassifierRole::StyleTarget | ClassifierRole::EvalStyle => {
            let domain = if role == ClassifierRole::StyleSource {
                Domain::Source
            } else {
                Domain::Target
            };
            let train = load(config, domain, SplitName::Train, &ws.styles)?;
            let dev = load_optional(config, domain, SplitName::Dev, &ws.styles)?;
            let mut cfg = config.classifier.clone();
            if role == ClassifierRole::EvalStyle {
                cfg.seed = crate::rng::derive_seed(cfg.seed, crate::rng::tag("eval-style"));
            }
            pretrain_style_classifier(&train, dev.as_ref(), &ws.styles, &ws.vocab, &cfg)?
        }
        ClassifierRole::Domain => {
            let source = load(config, Domain::Source, SplitName::Train, &ws.styles)?;
            let target = load(config, Domain::Target, SplitName::Train, &ws.styles)?;
            eval::train_domain_classifier(&source, &target, &ws.vocab, &config.classifier)?
        }
    };
    save_classifier(&classifier, &ws.vocab, role.as_str(), dev_acc, out)?;
    let report = ClassifierReport {
        role: role.as_str(),
        dev_accuracy: dev_acc,
        checkpoint_id: training::param_digest(classifier.params()),
    };
    write_json(&out.join("report.json"), &report)?;
    config.echo_into(out)?;
    println!("{} classifier: dev accuracy {dev_acc:.2}%", role.as_str());
    Ok(())
}

fn train_config_for(config: &RunConfig, out: &Path) -> TrainConfig {
    let mut c = config.train.clone();
    c.checkpoint_dir = Some(out.to_path_buf());
    c.log_path = Some(out.join("train_log.jsonl"));
    c
}

/// Trains the regime named in `train.regime` and writes its checkpoint and
/// JSONL log into `out`.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<()> {
    let ws = Workspace::open(config)?;
    let regime = config.train.regime;
    let why = format!("regime {regime}");
    let (ct, _) = required_classifier(config, ClassifierRole::StyleTarget, &ws.vocab, &why)?;
    let cs = if regime.needs_source_classifier() {
        Some(required_classifier(config, ClassifierRole::StyleSource, &ws.vocab, &why)?.0)
    } else {
        None
    };
    let dev_style = optional_classifier(config, ClassifierRole::EvalStyle, &ws.vocab)?.map(|c| c.0);
    let dev_domain = optional_classifier(config, ClassifierRole::Domain, &ws.vocab)?.map(|c| c.0);

    let target_train = load(config, Domain::Target, SplitName::Train, &ws.styles)?;
    let target_dev = load_optional(config, Domain::Target, SplitName::Dev, &ws.styles)?;
    let source_train = if regime.uses_source() {
        Some(load(config, Domain::Source, SplitName::Train, &ws.styles)?)
    } else {
        None
    };
    let source_parallel = match (&config.data.source_parallel, regime.s2s) {
        (Some(p), true) => Some(load_corpus(p, CorpusFormat::ParallelTsv, Domain::Source, None)?),
        (None, true) => {
            return Err(Error::Config(format!(
                "regime {regime} needs data.source_parallel"
            )))
        }
        _ => None,
    };
    config.echo_into(out)?;
    let tc = train_config_for(config, out);
    let outcome = training::train(
        &config.model_config(ws.vocab.len(), ws.styles.len()),
        &ws.vocab,
        &ws.styles,
        TrainData {
            target_train: &target_train,
            target_dev: target_dev.as_ref(),
            source_train: source_train.as_ref(),
            source_parallel: source_parallel.as_ref(),
        },
        TrainClassifiers {
            target: &ct,
            source: cs.as_ref(),
            dev_style: dev_style.as_ref(),
            dev_domain: dev_domain.as_ref(),
        },
        &tc,
    )?;
    if let Some((step, model)) = &outcome.phase_boundary {
        let json = serde_json::to_value(&tc)?;
        save_model(model, &ws.vocab, &ws.styles, regime, &json, &out.join("source-phase"))?;
        println!("source phase ended at step {step}");
    }
    println!("{regime}: {} steps", outcome.state.step);
    if let Some(b) = &outcome.state.best {
        println!(
            "best dev at step {}: S-acc {:.2} BLEU {:.2} G {:.2}",
            b.step, b.metrics.s_acc, b.metrics.bleu, b.metrics.g_score
        );
    }
    Ok(())
}

fn loss_context<'a>(config: &RunConfig, vocab: &'a Vocabulary, styles: &'a StyleSet) -> LossContext<'a> {
    let mut options = config.train.loss;
    options.temperature = config.train.temperature.start;
    LossContext {
        vocab,
        styles,
        options,
    }
}

/// Greedily transfers every line of `input` from one style to another.
/// Output lines align with input lines; blank lines stay blank.
pub fn cmd_transfer(config: &RunConfig, input: &Path, from: &str, to: &str, out: &Path) -> Result<PathBuf> {
    if from == to {
        return Err(Error::Config(format!(
            "transfer needs two different styles, got `{from}` twice"
        )));
    }
    let dir = RunConfig::path(&config.paths.checkpoint);
    let (model, vocab, manifest) = load_model(dir, None)?;
    let styles = StyleSet::new(manifest.styles.clone())?;
    let target = styles.position(to)?;
    styles.position(from)?;
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::new();
    let mut slots = Vec::new();
    for line in &lines {
        if line.trim().is_empty() {
            slots.push(None);
            continue;
        }
        slots.push(Some(records.len()));
        records.push(SentenceRecord::from_text(line, Style::known(from), Domain::Target)?);
    }
    let ctx = loss_context(config, &vocab, &styles);
    let refs: Vec<&SentenceRecord> = records.iter().collect();
    let outputs = transfer_records(&model, &ctx, &refs, &vec![target; refs.len()], Domain::Target)?;
    let mut result = String::new();
    for slot in slots {
        if let Some(i) = slot {
            result.push_str(&outputs[i].join(" "));
        }
        result.push('\n');
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stem = input
        .file_name()
        .map_or_else(|| "input".into(), |n| n.to_string_lossy().into_owned());
    let path = out.join(format!("{stem}.{from}-to-{to}.txt"));
    fs::write(&path, result).map_err(|e| Error::io(&path, e))?;
    config.echo_into(out)?;
    println!("wrote {} lines to {}", lines.len(), path.display());
    Ok(path)
}

fn read_references(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

/// Evaluates the configured checkpoint on the target test split, and runs
/// the data-fraction sweep when `eval.fractions` is non-empty.
pub fn cmd_eval(config: &RunConfig, out: &Path) -> Result<EvaluationReport> {
    let ws = Workspace::open(config)?;
    let dir = RunConfig::path(&config.paths.checkpoint);
    let (model, _, manifest) = load_model(dir, Some(&ws.vocab))?;
    if manifest.styles != ws.styles.names() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint styles {:?} differ from {:?}",
            manifest.styles,
            ws.styles.names()
        )));
    }
    let (style_cls, style_manifest) =
        match optional_classifier(config, ClassifierRole::EvalStyle, &ws.vocab)? {
            Some(c) => c,
            None => required_classifier(config, ClassifierRole::StyleTarget, &ws.vocab, "eval")?,
        };
    let domain = optional_classifier(config, ClassifierRole::Domain, &ws.vocab)?;
    let test = load(config, Domain::Target, SplitName::Test, &ws.styles)?;
    let references = config
        .eval
        .references
        .as_deref()
        .map(read_references)
        .transpose()?;
    let ids = ReportIds {
        checkpoint: manifest.checkpoint_id.clone(),
        style_classifier: style_manifest.checkpoint_id.clone(),
        domain_classifier: domain.as_ref().map(|d| d.1.checkpoint_id.clone()),
    };
    let ctx = loss_context(config, &ws.vocab, &ws.styles);
    config.echo_into(out)?;
    let (report, _) = eval::evaluate(
        &model,
        &ctx,
        &test,
        &style_cls,
        domain.as_ref().map(|d| &d.0),
        references.as_deref(),
        &ids,
        Some(out),
    )?;
    println!(
        "S-acc {:.2}  BLEU {:.2} ({:?})  G {:.2}{}",
        report.s_acc,
        report.bleu,
        report.bleu_reference,
        report.g_score,
        report.d_acc.map_or(String::new(), |d| format!("  D-acc {d:.2}"))
    );
    if !config.eval.fractions.is_empty() {
        let sweep = Sweep {
            config,
            ws: &ws,
            test: &test,
            style_cls: &style_cls,
            domain_cls: domain.as_ref().map(|d| &d.0),
            references: references.as_deref(),
        };
        let csv = sweep.run(out)?;
        println!("wrote {}", csv.display());
    }
    Ok(report)
}

struct Sweep<'a> {
    config: &'a RunConfig,
    ws: &'a Workspace,
    test: &'a CorpusSplit,
    style_cls: &'a StyleClassifier,
    domain_cls: Option<&'a StyleClassifier>,
    references: Option<&'a [Vec<String>]>,
}

impl Sweep<'_> {
    /// One CSV row per fraction with S-acc, BLEU and G-score per regime.
    fn run(&self, out: &Path) -> Result<PathBuf> {
        let config = self.config;
        let styles = &self.ws.styles;
        let vocab = &self.ws.vocab;
        let ct = required_classifier(config, ClassifierRole::StyleTarget, vocab, "the sweep")?.0;
        let regimes = &config.eval.sweep_regimes;
        let cs = if regimes.iter().any(Regime::needs_source_classifier) {
            Some(required_classifier(config, ClassifierRole::StyleSource, vocab, "the sweep")?.0)
        } else {
            None
        };
        let full_train = load(config, Domain::Target, SplitName::Train, styles)?;
        let dev = load_optional(config, Domain::Target, SplitName::Dev, styles)?;
        let source = if regimes.iter().any(Regime::uses_source) {
            Some(load(config, Domain::Source, SplitName::Train, styles)?)
        } else {
            None
        };
        let mut csv = String::from("fraction,train_sentences");
        for r in regimes {
            let _ = write!(csv, ",{r}_s_acc,{r}_bleu,{r}_g_score");
        }
        csv.push('\n');
        let ctx = loss_context(config, vocab, styles);
        for &f in &config.eval.fractions {
            let train = full_train.fraction(f, config.train.seed)?;
            let _ = write!(csv, "{f},{}", train.len());
            for &regime in regimes {
                let mut tc = config.train.clone();
                tc.regime = regime;
                let outcome = training::train(
                    &config.model_config(vocab.len(), styles.len()),
                    vocab,
                    styles,
                    TrainData {
                        target_train: &train,
                        target_dev: dev.as_ref(),
                        source_train: source.as_ref(),
                        source_parallel: None,
                    },
                    TrainClassifiers {
                        target: &ct,
                        source: cs.as_ref(),
                        dev_style: Some(self.style_cls),
                        dev_domain: None,
                    },
                    &tc,
                )?;
                let transfers = eval::transfer_split(&outcome.best_model(), &ctx, self.test)?;
                let r = eval::evaluate_transfers(
                    &transfers,
                    &ctx,
                    self.style_cls,
                    self.domain_cls,
                    self.references,
                    &ReportIds::default(),
                )?;
                let _ = write!(csv, ",{:.4},{:.4},{:.4}", r.s_acc, r.bleu, r.g_score);
                println!(
                    "fraction {f}: {regime} S-acc {:.2} BLEU {:.2} G {:.2}",
                    r.s_acc, r.bleu, r.g_score
                );
            }
            csv.push('\n');
        }
        let path = out.join("fraction_sweep.csv");
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
