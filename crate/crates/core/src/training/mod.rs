//! Classifier pretraining, the transfer regimes, the optimization loop and
//! checkpoints.

mod checkpoint;
mod classifier;
mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::corpus::{
    BalancedBatcher, CorpusSplit, Domain, SentenceRecord, SingleBatcher, StyleSet, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval;
use crate::nets::{ModelConfig, Parameters, StyleClassifier, TransferModel};
use crate::objectives::{self, LossBundle, LossContext, LossOptions, Objective, Tape};
use crate::rng::{self, Rng};

pub use checkpoint::{
    load_checkpoint, load_classifier, load_model, param_digest, save_checkpoint, save_classifier,
    save_model, BlobEntry, ClassifierManifest, ModelManifest,
};
pub use classifier::{
    pretrain_style_classifier, train_text_classifier, ClassifierTrainConfig, LabeledExample,
};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState, UpdateReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegimeKind {
    Baseline,
    DastC,
    Dast,
    Finetune,
}

/// A transfer regime, optionally with the source sequence-to-sequence term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Regime {
    pub kind: RegimeKind,
    pub s2s: bool,
}

impl Regime {
    pub const fn new(kind: RegimeKind) -> Self {
        Self { kind, s2s: false }
    }

    /// Whether the regime's model carries domain vectors.
    pub fn domain_vectors(&self) -> bool {
        self.kind == RegimeKind::Dast
    }

    pub fn uses_source(&self) -> bool {
        self.kind != RegimeKind::Baseline
    }

    pub fn needs_source_classifier(&self) -> bool {
        matches!(self.kind, RegimeKind::Dast | RegimeKind::Finetune)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.kind {
            RegimeKind::Baseline => "baseline",
            RegimeKind::DastC => "dast-c",
            RegimeKind::Dast => "dast",
            RegimeKind::Finetune => "finetune",
        };
        f.write_str(base)?;
        if self.s2s {
            f.write_str("+s2s")?;
        }
        Ok(())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, s2s) = match s.strip_suffix("+s2s") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let kind = match base {
            "baseline" => RegimeKind::Baseline,
            "dast-c" => RegimeKind::DastC,
            "dast" => RegimeKind::Dast,
            "finetune" => RegimeKind::Finetune,
            other => return Err(Error::Config(format!("unknown regime `{other}`"))),
        };
        if s2s && kind == RegimeKind::Baseline {
            return Err(Error::Config(
                "the baseline never reads source data, so it has no +s2s variant".into(),
            ));
        }
        Ok(Self { kind, s2s })
    }
}

impl Serialize for Regime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Regime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Linear temperature anneal; `anneal_steps == 0` keeps `start`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 1.0,
            anneal_steps: 0,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 {
            return self.start;
        }
        let f = (step as f64 / self.anneal_steps as f64).min(1.0);
        self.start + f * (self.end - self.start)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub optimizer: OptimizerConfig,
    /// records per step; mixed regimes split it evenly between domains,
    /// single-domain steps use half of it
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub eval_every: u64,
    /// evaluations without dev G-score improvement before stopping; 0 never
    /// stops early
    pub patience: usize,
    /// dev sentences scored per evaluation; 0 means all
    pub dev_limit: usize,
    pub loss: LossOptions,
    pub temperature: TemperatureSchedule,
    /// share of `max_steps` spent on source data by the finetune regime
    pub finetune_source_fraction: f64,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::new(RegimeKind::Dast),
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            max_steps: 20_000,
            seed: 0,
            eval_every: 500,
            patience: 5,
            dev_limit: 0,
            loss: LossOptions::default(),
            temperature: TemperatureSchedule::default(),
            finetune_source_fraction: 0.7,
            checkpoint_dir: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "batch_size must be even and at least 2 (got {})",
                self.batch_size
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if !(self.finetune_source_fraction > 0.0 && self.finetune_source_fraction < 1.0) {
            return Err(Error::Config("finetune_source_fraction must lie in (0, 1)".into()));
        }
        if !(self.loss.style_weight >= 0.0) {
            return Err(Error::Config("style_weight must be non-negative".into()));
        }
        if !(self.temperature.start > 0.0 && self.temperature.end > 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        Ok(())
    }

    /// Steps spent on source data by the finetune regime.
    pub fn finetune_source_steps(&self) -> u64 {
        (self.max_steps as f64 * self.finetune_source_fraction).round() as u64
    }
}

/// Dev metrics of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub s_acc: f64,
    pub bleu: f64,
    pub g_score: f64,
    pub d_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub step: u64,
    pub metrics: DevMetrics,
    pub params: Parameters,
}

/// Everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub regime: Regime,
    pub model: TransferModel,
    pub optimizer: OptimizerState,
    pub best: Option<BestSnapshot>,
    /// exponential moving averages of the logged losses
    pub running: BTreeMap<String, f64>,
    /// evaluations since the best one
    pub stalls: usize,
}

impl TrainState {
    pub fn new(regime: Regime, model: TransferModel) -> Self {
        let optimizer = OptimizerState::new(model.params());
        Self {
            step: 0,
            regime,
            model,
            optimizer,
            best: None,
            running: BTreeMap::new(),
            stalls: 0,
        }
    }

    /// The best dev snapshot, or the current model when there is none.
    pub fn best_model(&self) -> TransferModel {
        match &self.best {
            Some(b) => TransferModel::from_parameters(self.model.config().clone(), b.params.clone())
                .expect("snapshot of this model"),
            None => self.model.clone(),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step {
        step: u64,
        #[serde(flatten)]
        bundle: LossBundle,
    },
    Eval {
        step: u64,
        #[serde(flatten)]
        metrics: DevMetrics,
    },
}

/// Loss values and parameter gradients of one step, in parameter order.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub bundle: LossBundle,
    pub grads: Vec<Matrix>,
}

/// Backpropagates `objective.total` and collects one gradient per model
/// parameter (zeros where a parameter did not take part).
pub fn gradients(tape: &Tape, objective: &Objective) -> StepGradients {
    let mut g = tape.graph.backward(objective.total);
    let grads = tape
        .vars
        .params
        .iter()
        .zip(tape.model.params().values())
        .map(|(&v, m)| g.take(v).unwrap_or_else(|| Matrix::zeros(m.dim())))
        .collect();
    StepGradients {
        bundle: objective.bundle.clone(),
        grads,
    }
}

/// One clipped optimizer step on the transfer model. Classifiers are not
/// reachable from here.
pub fn training_step(
    state: &mut TrainState,
    step: StepGradients,
    optimizer: &OptimizerConfig,
) -> Result<UpdateReport> {
    if !step.bundle.total.is_finite() {
        return Err(Error::Divergence { step: state.step });
    }
    let report = state
        .optimizer
        .apply(state.model.params_mut(), step.grads, optimizer)
        .map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { step: state.step },
            other => other,
        })?;
    state.step += 1;
    for (c, v) in step.bundle.components() {
        let key = serde_json::to_value(c)
            .ok()
            .and_then(|j| j.as_str().map(String::from))
            .unwrap_or_default();
        update_running(&mut state.running, &key, v);
    }
    update_running(&mut state.running, "total", step.bundle.total);
    Ok(report)
}

fn update_running(running: &mut BTreeMap<String, f64>, key: &str, v: f64) {
    running
        .entry(key.to_string())
        .and_modify(|avg| *avg = 0.98 * *avg + 0.02 * v)
        .or_insert(v);
}

/// Data for a training run. Which fields a regime reads is fixed by the
/// regime: the baseline touches only the target fields.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub target_train: &'a CorpusSplit,
    pub target_dev: Option<&'a CorpusSplit>,
    pub source_train: Option<&'a CorpusSplit>,
    /// parallel source pairs for the `+s2s` variants
    pub source_parallel: Option<&'a CorpusSplit>,
}

/// Frozen classifiers for a training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainClassifiers<'a> {
    pub target: &'a StyleClassifier,
    pub source: Option<&'a StyleClassifier>,
    /// scores dev S-acc for model selection; defaults to `target`
    pub dev_style: Option<&'a StyleClassifier>,
    /// adds D-acc to dev evaluations
    pub dev_domain: Option<&'a StyleClassifier>,
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRecord>,
    /// finetune only: the model when source training ended
    pub phase_boundary: Option<(u64, TransferModel)>,
}

impl TrainOutcome {
    pub fn best_model(&self) -> TransferModel {
        self.state.best_model()
    }

    pub fn step_bundles(&self) -> impl Iterator<Item = &LossBundle> {
        self.log.iter().filter_map(|r| match r {
            LogRecord::Step { bundle, .. } => Some(bundle),
            _ => None,
        })
    }
}

struct Logger {
    records: Vec<LogRecord>,
    file: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

impl Logger {
    fn new(path: Option<&PathBuf>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))
            }
            None => None,
        };
        Ok(Self {
            records: Vec::new(),
            file,
            path: path.cloned(),
        })
    }

    fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&record)?;
            writeln!(f, "{line}").map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        self.records.push(record);
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<LogRecord>> {
        if let Some(f) = &mut self.file {
            f.flush()
                .map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        Ok(self.records)
    }
}

/// Model dimensions for `regime` from a base config: domain vectors are
/// switched on for the joint regime and off elsewhere, keeping `dec_hidden`
/// by moving the domain width into the style width.
pub fn regime_model_config(base: &ModelConfig, regime: Regime) -> ModelConfig {
    let mut c = base.clone();
    let total = c.style_dim + c.domain_dim;
    if regime.domain_vectors() {
        if c.domain_dim == 0 {
            c.domain_dim = (total / 4).max(1);
            c.style_dim = total - c.domain_dim;
        }
    } else {
        c.domain_dim = 0;
        c.style_dim = total;
    }
    c
}

fn check_style_sets(styles: &StyleSet, source: &CorpusSplit) -> Result<()> {
    let src = source.style_names();
    let mut tgt = styles.names().to_vec();
    tgt.sort();
    if source.has_unknown_styles() || src != tgt {
        return Err(Error::StyleSetMismatch {
            source_styles: src,
            target_styles: tgt,
        });
    }
    Ok(())
}

fn check_classifier_styles(c: &StyleClassifier, styles: &StyleSet) -> Result<()> {
    if !c.is_frozen() {
        return Err(Error::FrozenClassifierRequired);
    }
    if c.labels() != styles.names() {
        return Err(Error::Config(format!(
            "classifier classes {:?} differ from the style set {:?}",
            c.labels(),
            styles.names()
        )));
    }
    Ok(())
}

/// Dev transfer metrics on at most `limit` sentences.
pub fn dev_metrics(
    model: &TransferModel,
    ctx: &LossContext,
    dev: &CorpusSplit,
    style_classifier: &StyleClassifier,
    domain_classifier: Option<&StyleClassifier>,
    limit: usize,
) -> Result<DevMetrics> {
    let subset;
    let dev = if limit > 0 && dev.len() > limit {
        subset = CorpusSplit::new(dev.split(), dev.domain(), dev.records()[..limit].to_vec())?;
        &subset
    } else {
        dev
    };
    let transfers = eval::transfer_split(model, ctx, dev)?;
    let report = eval::evaluate_transfers(
        &transfers,
        ctx,
        style_classifier,
        domain_classifier,
        None,
        &eval::ReportIds::default(),
    )?;
    Ok(DevMetrics {
        s_acc: report.s_acc,
        bleu: report.bleu,
        g_score: report.g_score,
        d_acc: report.d_acc,
    })
}

/// Mean teacher-forced reconstruction NLL of `split` under its own labels
/// (or the unknown style when `unknown` is set).
pub fn reconstruction_loss(
    model: &TransferModel,
    ctx: &LossContext,
    split: &CorpusSplit,
    domain: Domain,
    unknown: bool,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let records: Vec<&SentenceRecord> = split.records().iter().collect();
    let mut total = 0.0;
    for chunk in records.chunks(128) {
        let mut tape = Tape::frozen(model);
        let loss = if unknown {
            objectives::ae_loss_source_unknown(&mut tape, ctx, chunk)?
        } else {
            objectives::ae_loss_labeled(&mut tape, ctx, chunk, domain)?
        };
        total += tape.value(loss) * chunk.len() as f64;
    }
    Ok(total / records.len() as f64)
}

struct Runner<'a> {
    config: &'a TrainConfig,
    vocab: &'a Vocabulary,
    styles: &'a StyleSet,
    classifiers: TrainClassifiers<'a>,
    dev: Option<&'a CorpusSplit>,
    logger: Logger,
    rng: Rng,
}

impl<'a> Runner<'a> {
    fn ctx(&self, step: u64) -> LossContext<'a> {
        let mut options = self.config.loss;
        options.temperature = self.config.temperature.at(step);
        LossContext {
            vocab: self.vocab,
            styles: self.styles,
            options,
        }
    }

    /// Runs one step; `build` composes the objective on a fresh tape.
    fn step(
        &mut self,
        state: &mut TrainState,
        build: impl FnOnce(&mut Tape, &LossContext, &mut Rng) -> Result<Objective>,
    ) -> Result<()> {
        let ctx = self.ctx(state.step);
        let grads = {
            let mut tape = Tape::new(&state.model);
            let objective = build(&mut tape, &ctx, &mut self.rng)?;
            if !objective.bundle.total.is_finite() {
                return Err(Error::Divergence { step: state.step });
            }
            gradients(&tape, &objective)
        };
        let bundle = grads.bundle.clone();
        training_step(state, grads, &self.config.optimizer)?;
        self.logger.push(LogRecord::Step {
            step: state.step,
            bundle,
        })
    }

    /// Dev evaluation; returns `true` when training should stop early.
    fn evaluate(&mut self, state: &mut TrainState) -> Result<bool> {
        let Some(dev) = self.dev else { return Ok(false) };
        let classifier = self.classifiers.dev_style.unwrap_or(self.classifiers.target);
        let ctx = self.ctx(state.step);
        let metrics = dev_metrics(
            &state.model,
            &ctx,
            dev,
            classifier,
            self.classifiers.dev_domain,
            self.config.dev_limit,
        )?;
        self.logger.push(LogRecord::Eval {
            step: state.step,
            metrics,
        })?;
        let improved = state
            .best
            .as_ref()
            .map_or(true, |b| metrics.g_score > b.metrics.g_score);
        if improved {
            state.best = Some(BestSnapshot {
                step: state.step,
                metrics,
                params: state.model.params().clone(),
            });
            state.stalls = 0;
        } else {
            state.stalls += 1;
        }
        Ok(self.config.patience > 0 && state.stalls >= self.config.patience)
    }

    /// Calls `next_step` until `until` steps are done, evaluating on the
    /// configured cadence and after the last step.
    fn run_until(
        &mut self,
        state: &mut TrainState,
        until: u64,
        evaluate: bool,
        mut next_step: impl FnMut(&mut Self, &mut TrainState) -> Result<()>,
    ) -> Result<()> {
        let mut evaluated_at = None;
        while state.step < until {
            next_step(self, state)?;
            if evaluate && state.step % self.config.eval_every == 0 {
                evaluated_at = Some(state.step);
                if self.evaluate(state)? {
                    return Ok(());
                }
            }
        }
        if evaluate && evaluated_at != Some(state.step) && state.step > 0 {
            self.evaluate(state)?;
        }
        Ok(())
    }
}

/// Trains a fresh model under `config.regime`.
pub fn train(
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    styles: &StyleSet,
    data: TrainData,
    classifiers: TrainClassifiers,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let regime = config.regime;
    let mc = regime_model_config(model_config, regime);
    if mc.vocab_size != vocab.len() || mc.num_styles != styles.len() {
        return Err(Error::Config(
            "model config does not match the vocabulary or style set".into(),
        ));
    }
    check_classifier_styles(classifiers.target, styles)?;
    let source = if regime.uses_source() {
        let s = data
            .source_train
            .ok_or_else(|| Error::Config(format!("regime {regime} needs source training data")))?;
        if s.is_empty() {
            return Err(Error::BatchShape("empty source corpus".into()));
        }
        Some(s)
    } else {
        None
    };
    if regime.needs_source_classifier() {
        let cs = classifiers.source.ok_or_else(|| {
            Error::Config(format!("regime {regime} needs a source style classifier"))
        })?;
        check_classifier_styles(cs, styles)?;
        check_style_sets(styles, source.expect("checked above"))?;
    }
    let parallel: Vec<(&SentenceRecord, &SentenceRecord)> = if regime.s2s {
        let p = data.source_parallel.filter(|p| p.is_parallel()).ok_or_else(|| {
            Error::Config(format!("regime {regime} needs a parallel source corpus"))
        })?;
        p.parallel_pairs().collect()
    } else {
        Vec::new()
    };
    let model = TransferModel::new(mc, config.seed)?;
    let mut state = TrainState::new(regime, model);
    let mut runner = Runner {
        config,
        vocab,
        styles,
        classifiers,
        dev: data.target_dev.filter(|d| !d.is_empty()),
        logger: Logger::new(config.log_path.as_ref())?,
        rng: rng::seeded(config.seed, rng::tag("train-steps")),
    };
    let half = config.batch_size / 2;
    let mut pair_rng = rng::seeded(config.seed, rng::tag("s2s-pairs"));
    let mut draw_pairs = |n: usize| -> Vec<(&SentenceRecord, &SentenceRecord)> {
        (0..n.min(parallel.len().max(1)))
            .filter_map(|_| {
                use rand::seq::SliceRandom;
                parallel.choose(&mut pair_rng).copied()
            })
            .collect()
    };
    let ct = classifiers.target;
    let mut phase_boundary = None;

    match regime.kind {
        RegimeKind::Baseline => {
            let batcher = SingleBatcher::new(data.target_train, half, config.seed)?;
            let mut stream = batcher.stream();
            runner.run_until(&mut state, config.max_steps, true, |r, st| {
                let batch = stream.next().expect("endless stream");
                r.step(st, |tape, ctx, rng| {
                    objectives::baseline_objective(tape, ctx, ct, &batch, rng)
                })
            })?;
        }
        RegimeKind::DastC => {
            // source labels are dropped before any batch is formed
            let unlabeled = source.expect("checked").without_styles();
            let batcher =
                BalancedBatcher::new(&unlabeled, data.target_train, config.batch_size, config.seed)?;
            let mut stream = batcher.stream();
            runner.run_until(&mut state, config.max_steps, true, |r, st| {
                let b = stream.next().expect("endless stream");
                let pairs = if regime.s2s { draw_pairs(half) } else { Vec::new() };
                r.step(st, |tape, ctx, rng| {
                    if regime.s2s {
                        objectives::dastc_parallel_objective(
                            tape,
                            ctx,
                            ct,
                            &b.target_records,
                            &b.source_records,
                            &pairs,
                            rng,
                        )
                    } else {
                        objectives::dastc_objective(
                            tape,
                            ctx,
                            ct,
                            &b.target_records,
                            &b.source_records,
                            rng,
                        )
                    }
                })
            })?;
        }
        RegimeKind::Dast => {
            let cs = classifiers.source.expect("checked");
            let batcher = BalancedBatcher::new(
                source.expect("checked"),
                data.target_train,
                config.batch_size,
                config.seed,
            )?;
            let mut stream = batcher.stream();
            runner.run_until(&mut state, config.max_steps, true, |r, st| {
                let b = stream.next().expect("endless stream");
                let pairs = if regime.s2s { draw_pairs(half) } else { Vec::new() };
                r.step(st, |tape, ctx, rng| {
                    if regime.s2s {
                        objectives::dast_parallel_objective(
                            tape,
                            ctx,
                            cs,
                            ct,
                            &b.source_records,
                            &b.target_records,
                            &pairs,
                            rng,
                        )
                    } else {
                        objectives::dast_objective(
                            tape,
                            ctx,
                            cs,
                            ct,
                            &b.source_records,
                            &b.target_records,
                            rng,
                        )
                    }
                })
            })?;
        }
        RegimeKind::Finetune => {
            let cs = classifiers.source.expect("checked");
            let name = regime.to_string();
            let source_steps = config.finetune_source_steps();
            let src_batcher = SingleBatcher::new(source.expect("checked"), half, config.seed)?;
            let mut src_stream = src_batcher.stream();
            runner.run_until(&mut state, source_steps, false, |r, st| {
                let batch = src_stream.next().expect("endless stream");
                let pairs = if regime.s2s { draw_pairs(half) } else { Vec::new() };
                r.step(st, |tape, ctx, rng| {
                    let mut obj = objectives::labeled_objective(
                        tape,
                        ctx,
                        cs,
                        &batch,
                        Domain::Source,
                        &name,
                        rng,
                    )?;
                    if regime.s2s {
                        let s2s = objectives::s2s_loss_source(tape, ctx, &pairs)?;
                        obj.parts.push((objectives::Component::S2sSource, s2s));
                        obj = objectives::compose(tape, &name, ctx.options.style_weight, obj.parts);
                    }
                    Ok(obj)
                })
            })?;
            phase_boundary = Some((state.step, state.model.clone()));
            let tgt_batcher = SingleBatcher::new(data.target_train, half, config.seed)?;
            let mut tgt_stream = tgt_batcher.stream();
            runner.run_until(&mut state, config.max_steps, true, |r, st| {
                let batch = tgt_stream.next().expect("endless stream");
                r.step(st, |tape, ctx, rng| {
                    objectives::labeled_objective(tape, ctx, ct, &batch, Domain::Target, &name, rng)
                })
            })?;
        }
    }

    let log = runner.logger.finish()?;
    if let Some(dir) = &config.checkpoint_dir {
        save_checkpoint(&state, vocab, styles, &serde_json::to_value(config)?, dir)?;
    }
    Ok(TrainOutcome {
        state,
        log,
        phase_boundary,
    })
}

fn with_regime(config: &TrainConfig, kind: RegimeKind) -> TrainConfig {
    let mut c = config.clone();
    c.regime.kind = kind;
    c
}

/// Target-only training of reconstruction plus target style.
pub fn train_baseline(
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    styles: &StyleSet,
    target_train: &CorpusSplit,
    target_dev: Option<&CorpusSplit>,
    target_classifier: &StyleClassifier,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut c = with_regime(config, RegimeKind::Baseline);
    c.regime.s2s = false;
    let data = TrainData {
        target_train,
        target_dev,
        source_train: None,
        source_parallel: None,
    };
    let classifiers = TrainClassifiers {
        target: target_classifier,
        source: None,
        dev_style: None,
        dev_domain: None,
    };
    train(model_config, vocab, styles, data, classifiers, &c)
}

/// Target training plus unknown-style source reconstruction.
pub fn train_dastc(
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    styles: &StyleSet,
    data: TrainData,
    target_classifier: &StyleClassifier,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let classifiers = TrainClassifiers {
        target: target_classifier,
        source: None,
        dev_style: None,
        dev_domain: None,
    };
    train(
        model_config,
        vocab,
        styles,
        data,
        classifiers,
        &with_regime(config, RegimeKind::DastC),
    )
}

/// Joint training with domain vectors and domain-specific classifiers.
pub fn train_dast(
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    styles: &StyleSet,
    data: TrainData,
    classifiers: TrainClassifiers,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train(
        model_config,
        vocab,
        styles,
        data,
        classifiers,
        &with_regime(config, RegimeKind::Dast),
    )
}

/// Source training under `C^S`, then continued training on the target under
/// `C^T`, without domain vectors.
pub fn train_finetune(
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    styles: &StyleSet,
    data: TrainData,
    classifiers: TrainClassifiers,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train(
        model_config,
        vocab,
        styles,
        data,
        classifiers,
        &with_regime(config, RegimeKind::Finetune),
    )
}
