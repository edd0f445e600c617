//! Reconstruction, style and sequence-to-sequence losses, and the regime
//! objectives built from them.
//!
//! Every loss is a node on a [`Tape`], so a composed total can be
//! differentiated end to end. Sentence NLLs are summed over predicted
//! positions and averaged over the batch unless `per_token` is set, in which
//! case each sentence's NLL is first divided by its number of positions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, Var};
use crate::corpus::{Domain, SentenceRecord, Style, StyleSet, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::nets::{DecodeMode, StyleClassifier, TransferModel, TransferVars};
use crate::rng::Rng;

/// Knobs shared by every loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossOptions {
    /// tokens kept per sentence before framing
    pub max_len: usize,
    pub max_decode_len: usize,
    pub per_token: bool,
    /// multiplies every style term in a composed total
    pub style_weight: f64,
    pub decode_mode: DecodeMode,
    pub temperature: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            max_len: 20,
            max_decode_len: 20,
            per_token: false,
            style_weight: 1.0,
            decode_mode: DecodeMode::HardSample,
            temperature: 1.0,
        }
    }
}

/// What the losses need besides the model: the id mapping and style order.
#[derive(Clone, Copy, Debug)]
pub struct LossContext<'a> {
    pub vocab: &'a Vocabulary,
    pub styles: &'a StyleSet,
    pub options: LossOptions,
}

/// A tape with one model bound to it.
pub struct Tape<'m> {
    pub graph: Graph,
    pub model: &'m TransferModel,
    pub vars: TransferVars,
}

impl<'m> Tape<'m> {
    /// Model parameters bound as differentiable leaves.
    pub fn new(model: &'m TransferModel) -> Self {
        let mut graph = Graph::new();
        let vars = model.bind(&mut graph, true);
        Self { graph, model, vars }
    }

    /// Model parameters bound as constants, for evaluation.
    pub fn frozen(model: &'m TransferModel) -> Self {
        let mut graph = Graph::new();
        let vars = model.bind(&mut graph, false);
        Self { graph, model, vars }
    }

    pub fn value(&self, v: Var) -> f64 {
        self.graph.scalar(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    AeTarget,
    AeSource,
    StyleTarget,
    StyleSource,
    S2sSource,
}

impl Component {
    pub fn is_style(self) -> bool {
        matches!(self, Component::StyleTarget | Component::StyleSource)
    }
}

/// Component losses of one step and their composed total. Serializes to a
/// flat JSON object; absent components are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub regime: String,
    pub ae_target: Option<f64>,
    pub ae_source: Option<f64>,
    pub style_target: Option<f64>,
    pub style_source: Option<f64>,
    pub s2s_source: Option<f64>,
    pub style_weight: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn empty(regime: impl Into<String>, style_weight: f64) -> Self {
        Self {
            regime: regime.into(),
            ae_target: None,
            ae_source: None,
            style_target: None,
            style_source: None,
            s2s_source: None,
            style_weight,
            total: 0.0,
        }
    }

    pub fn get(&self, c: Component) -> Option<f64> {
        match c {
            Component::AeTarget => self.ae_target,
            Component::AeSource => self.ae_source,
            Component::StyleTarget => self.style_target,
            Component::StyleSource => self.style_source,
            Component::S2sSource => self.s2s_source,
        }
    }

    fn slot(&mut self, c: Component) -> &mut Option<f64> {
        match c {
            Component::AeTarget => &mut self.ae_target,
            Component::AeSource => &mut self.ae_source,
            Component::StyleTarget => &mut self.style_target,
            Component::StyleSource => &mut self.style_source,
            Component::S2sSource => &mut self.s2s_source,
        }
    }

    /// Present components in a fixed order.
    pub fn components(&self) -> Vec<(Component, f64)> {
        [
            Component::AeTarget,
            Component::AeSource,
            Component::StyleTarget,
            Component::StyleSource,
            Component::S2sSource,
        ]
        .into_iter()
        .filter_map(|c| self.get(c).map(|v| (c, v)))
        .collect()
    }

    /// Sum of the present components, style terms weighted.
    pub fn component_sum(&self) -> f64 {
        self.components()
            .into_iter()
            .map(|(c, v)| if c.is_style() { self.style_weight * v } else { v })
            .sum()
    }
}

/// A composed objective: values in `bundle`, tape nodes for the total and
/// each component.
#[derive(Clone, Debug)]
pub struct Objective {
    pub bundle: LossBundle,
    pub total: Var,
    pub parts: Vec<(Component, Var)>,
}

/// Sums `parts` on the tape, scaling style terms by `style_weight`.
pub fn compose(
    tape: &mut Tape,
    regime: &str,
    style_weight: f64,
    parts: Vec<(Component, Var)>,
) -> Objective {
    let g = &mut tape.graph;
    let mut bundle = LossBundle::empty(regime, style_weight);
    let mut total: Option<Var> = None;
    for &(c, v) in &parts {
        *bundle.slot(c) = Some(g.scalar(v));
        let term = if c.is_style() && style_weight != 1.0 {
            g.scale(v, style_weight)
        } else {
            v
        };
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    let total = total.unwrap_or_else(|| g.constant(Matrix::zeros((1, 1))));
    bundle.total = g.scalar(total);
    Objective {
        bundle,
        total,
        parts,
    }
}

fn framed(ctx: &LossContext, records: &[&SentenceRecord]) -> Vec<Vec<usize>> {
    records
        .iter()
        .map(|r| ctx.vocab.encode_sentence(r.tokens(), ctx.options.max_len))
        .collect()
}

fn known_styles(ctx: &LossContext, records: &[&SentenceRecord]) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| match r.style() {
            Style::Unknown => Err(Error::InvalidStyle(format!(
                "`{}` has no style label",
                r.text()
            ))),
            s => ctx.styles.index_of(s),
        })
        .collect()
}

fn domain_ids(tape: &Tape, domain: Domain, batch: usize) -> Option<Vec<usize>> {
    tape.model
        .config()
        .domain_vectors()
        .then(|| vec![domain.index(); batch])
}

fn non_empty(records: &[&SentenceRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::BatchShape(format!("empty {what} batch")));
    }
    Ok(())
}

/// Mean teacher-forced NLL of `gold` given the content of `inputs`.
fn reconstruction(
    tape: &mut Tape,
    ctx: &LossContext,
    inputs: &[Vec<usize>],
    gold: &[Vec<usize>],
    styles: &[usize],
    domain: Domain,
) -> Result<Var> {
    let domains = domain_ids(tape, domain, inputs.len());
    let Tape { graph, model, vars } = tape;
    let c = model.encode_batch(graph, vars, inputs)?;
    let state = model.init_state(graph, vars, c, styles, domains.as_deref())?;
    let tf = model.teacher_forced(graph, vars, state, gold)?;
    let batch = gold.len() as f64;
    let mut weights = Matrix::zeros((tf.targets.len(), 1));
    for (b, &len) in tf.lengths.iter().enumerate() {
        let w = if ctx.options.per_token {
            1.0 / (batch * len as f64)
        } else {
            1.0 / batch
        };
        for t in 0..len {
            weights[[b * tf.steps + t, 0]] = w;
        }
    }
    let w = graph.constant(weights);
    let weighted = graph.mul(tf.picked, w);
    let sum = graph.sum_all(weighted);
    Ok(graph.scale(sum, -1.0))
}

/// Reconstruction of styled records conditioned on their own labels and,
/// with domain vectors, on `domain`.
pub fn ae_loss_labeled(
    tape: &mut Tape,
    ctx: &LossContext,
    batch: &[&SentenceRecord],
    domain: Domain,
) -> Result<Var> {
    non_empty(batch, "reconstruction")?;
    let styles = known_styles(ctx, batch)?;
    let ids = framed(ctx, batch);
    reconstruction(tape, ctx, &ids, &ids, &styles, domain)
}

/// Target reconstruction loss.
pub fn ae_loss_target(tape: &mut Tape, ctx: &LossContext, batch: &[&SentenceRecord]) -> Result<Var> {
    ae_loss_labeled(tape, ctx, batch, Domain::Target)
}

/// Source reconstruction conditioned on the unknown style; labels on the
/// records are never read.
pub fn ae_loss_source_unknown(
    tape: &mut Tape,
    ctx: &LossContext,
    batch: &[&SentenceRecord],
) -> Result<Var> {
    non_empty(batch, "source")?;
    let unknown = vec![tape.model.unknown_style(); batch.len()];
    let ids = framed(ctx, batch);
    reconstruction(tape, ctx, &ids, &ids, &unknown, Domain::Source)
}

/// Source and target reconstruction with domain vectors.
pub fn ae_loss_joint(
    tape: &mut Tape,
    ctx: &LossContext,
    source: &[&SentenceRecord],
    target: &[&SentenceRecord],
) -> Result<(Var, Var)> {
    require_domain_vectors(tape)?;
    let s = ae_loss_labeled(tape, ctx, source, Domain::Source)?;
    let t = ae_loss_labeled(tape, ctx, target, Domain::Target)?;
    Ok((s, t))
}

fn require_domain_vectors(tape: &Tape) -> Result<()> {
    if !tape.model.config().domain_vectors() {
        return Err(Error::Config("this objective needs domain vectors".into()));
    }
    Ok(())
}

/// A different style per record: the complement for two styles, uniform
/// among the others otherwise.
pub fn flip_styles(styles: &[usize], num_styles: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if num_styles < 2 {
        return Err(Error::InvalidStyle("flipping needs at least two styles".into()));
    }
    styles
        .iter()
        .map(|&s| {
            if s >= num_styles {
                return Err(Error::InvalidStyle(format!("style index {s} cannot be flipped")));
            }
            if num_styles == 2 {
                return Ok(1 - s);
            }
            let others: Vec<usize> = (0..num_styles).filter(|&o| o != s).collect();
            Ok(*others.choose(rng).expect("at least one other style"))
        })
        .collect()
}

/// Flipped style indices for labeled records.
pub fn flipped_for(
    ctx: &LossContext,
    batch: &[&SentenceRecord],
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let styles = known_styles(ctx, batch)?;
    flip_styles(&styles, ctx.styles.len(), rng)
}

fn check_classifier(ctx: &LossContext, classifier: &StyleClassifier) -> Result<()> {
    if !classifier.is_frozen() {
        return Err(Error::FrozenClassifierRequired);
    }
    if classifier.labels() != ctx.styles.names() {
        return Err(Error::Config(format!(
            "classifier labels {:?} do not match the style set {:?}",
            classifier.labels(),
            ctx.styles.names()
        )));
    }
    Ok(())
}

/// Free-running transfer of `batch` to `flipped`, scored by `classifier`
/// through the straight-through path: mean NLL of the flipped labels.
pub fn style_loss_labeled(
    tape: &mut Tape,
    ctx: &LossContext,
    classifier: &StyleClassifier,
    batch: &[&SentenceRecord],
    flipped: &[usize],
    domain: Domain,
    rng: &mut Rng,
) -> Result<Var> {
    check_classifier(ctx, classifier)?;
    non_empty(batch, "style")?;
    let own = known_styles(ctx, batch)?;
    if flipped.len() != batch.len() {
        return Err(Error::BatchShape("one flipped style per record required".into()));
    }
    if own.iter().zip(flipped).any(|(a, b)| a == b || *b >= ctx.styles.len()) {
        return Err(Error::InvalidStyle(
            "flipped styles must differ from the originals".into(),
        ));
    }
    let ids = framed(ctx, batch);
    let domains = domain_ids(tape, domain, batch.len());
    let opts = ctx.options;
    let Tape { graph, model, vars } = tape;
    let c = model.encode_batch(graph, vars, &ids)?;
    let state = model.init_state(graph, vars, c, flipped, domains.as_deref())?;
    let run = model.free_running(
        graph,
        vars,
        state,
        opts.decode_mode,
        opts.max_decode_len,
        opts.temperature,
        rng,
    );
    let lengths = run.lengths();
    let cv = classifier.bind(graph);
    let pad = classifier.pad_rows(graph, &cv, batch.len());
    let steps: Vec<Var> = run
        .one_hots
        .iter()
        .enumerate()
        .map(|(t, &oh)| {
            let e = graph.matmul(oh, cv.embedding);
            let mask: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
            if mask.iter().all(|&m| m) {
                e
            } else {
                graph.row_select(&mask, e, pad)
            }
        })
        .collect();
    let logits = classifier.logits_steps(graph, &cv, &steps, &lengths, None)?;
    let log_probs = graph.log_softmax(logits);
    let cols: Vec<Option<usize>> = flipped.iter().map(|&s| Some(s)).collect();
    let picked = graph.pick_rows(log_probs, &cols);
    let sum = graph.sum_all(picked);
    Ok(graph.scale(sum, -1.0 / batch.len() as f64))
}

/// Target style loss under `C^T`.
pub fn style_loss_target(
    tape: &mut Tape,
    ctx: &LossContext,
    classifier: &StyleClassifier,
    batch: &[&SentenceRecord],
    flipped: &[usize],
    rng: &mut Rng,
) -> Result<Var> {
    style_loss_labeled(tape, ctx, classifier, batch, flipped, Domain::Target, rng)
}

/// Source and target style losses, each under its own domain's classifier.
#[allow(clippy::too_many_arguments)]
pub fn style_loss_joint(
    tape: &mut Tape,
    ctx: &LossContext,
    source_classifier: &StyleClassifier,
    target_classifier: &StyleClassifier,
    source: &[&SentenceRecord],
    target: &[&SentenceRecord],
    flipped_source: &[usize],
    flipped_target: &[usize],
    rng: &mut Rng,
) -> Result<(Var, Var)> {
    check_classifier(ctx, source_classifier)?;
    check_classifier(ctx, target_classifier)?;
    require_domain_vectors(tape)?;
    let s = style_loss_labeled(
        tape,
        ctx,
        source_classifier,
        source,
        flipped_source,
        Domain::Source,
        rng,
    )?;
    let t = style_loss_labeled(
        tape,
        ctx,
        target_classifier,
        target,
        flipped_target,
        Domain::Target,
        rng,
    )?;
    Ok((s, t))
}

/// NLL of each pair's second sentence given the content of its first,
/// conditioned on the second's style and, with domain vectors, on the source
/// domain.
pub fn s2s_loss_source(
    tape: &mut Tape,
    ctx: &LossContext,
    pairs: &[(&SentenceRecord, &SentenceRecord)],
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Config(
            "sequence-to-sequence loss needs a parallel source corpus".into(),
        ));
    }
    let inputs: Vec<&SentenceRecord> = pairs.iter().map(|p| p.0).collect();
    let outputs: Vec<&SentenceRecord> = pairs.iter().map(|p| p.1).collect();
    let styles = known_styles(ctx, &outputs)?;
    let x = framed(ctx, &inputs);
    let y = framed(ctx, &outputs);
    reconstruction(tape, ctx, &x, &y, &styles, Domain::Source)
}

/// Target reconstruction plus target style.
pub fn baseline_objective(
    tape: &mut Tape,
    ctx: &LossContext,
    target_classifier: &StyleClassifier,
    target: &[&SentenceRecord],
    rng: &mut Rng,
) -> Result<Objective> {
    labeled_objective(tape, ctx, target_classifier, target, Domain::Target, "baseline", rng)
}

/// Reconstruction plus style loss on one labeled domain; the building block
/// of the baseline and both fine-tuning phases.
pub fn labeled_objective(
    tape: &mut Tape,
    ctx: &LossContext,
    classifier: &StyleClassifier,
    batch: &[&SentenceRecord],
    domain: Domain,
    regime: &str,
    rng: &mut Rng,
) -> Result<Objective> {
    check_classifier(ctx, classifier)?;
    let ae = ae_loss_labeled(tape, ctx, batch, domain)?;
    let flipped = flipped_for(ctx, batch, rng)?;
    let style = style_loss_labeled(tape, ctx, classifier, batch, &flipped, domain, rng)?;
    let (ae_c, style_c) = match domain {
        Domain::Target => (Component::AeTarget, Component::StyleTarget),
        Domain::Source => (Component::AeSource, Component::StyleSource),
    };
    Ok(compose(
        tape,
        regime,
        ctx.options.style_weight,
        vec![(ae_c, ae), (style_c, style)],
    ))
}

fn dastc_parts(
    tape: &mut Tape,
    ctx: &LossContext,
    target_classifier: &StyleClassifier,
    target: &[&SentenceRecord],
    source: &[&SentenceRecord],
    rng: &mut Rng,
) -> Result<Vec<(Component, Var)>> {
    check_classifier(ctx, target_classifier)?;
    non_empty(source, "source")?;
    non_empty(target, "target")?;
    let ae_t = ae_loss_target(tape, ctx, target)?;
    let flipped = flipped_for(ctx, target, rng)?;
    let style_t = style_loss_target(tape, ctx, target_classifier, target, &flipped, rng)?;
    let ae_s = ae_loss_source_unknown(tape, ctx, source)?;
    Ok(vec![
        (Component::AeTarget, ae_t),
        (Component::StyleTarget, style_t),
        (Component::AeSource, ae_s),
    ])
}

/// Target reconstruction, target style and unknown-style source
/// reconstruction.
pub fn dastc_objective(
    tape: &mut Tape,
    ctx: &LossContext,
    target_classifier: &StyleClassifier,
    target: &[&SentenceRecord],
    source: &[&SentenceRecord],
    rng: &mut Rng,
) -> Result<Objective> {
    let parts = dastc_parts(tape, ctx, target_classifier, target, source, rng)?;
    Ok(compose(tape, "dast-c", ctx.options.style_weight, parts))
}

#[allow(clippy::too_many_arguments)]
fn dast_parts(
    tape: &mut Tape,
    ctx: &LossContext,
    source_classifier: &StyleClassifier,
    target_classifier: &StyleClassifier,
    source: &[&SentenceRecord],
    target: &[&SentenceRecord],
    rng: &mut Rng,
) -> Result<Vec<(Component, Var)>> {
    check_classifier(ctx, source_classifier)?;
    check_classifier(ctx, target_classifier)?;
    non_empty(source, "source")?;
    non_empty(target, "target")?;
    let (ae_s, ae_t) = ae_loss_joint(tape, ctx, source, target)?;
    let flipped_s = flipped_for(ctx, source, rng)?;
    let flipped_t = flipped_for(ctx, target, rng)?;
    let (style_s, style_t) = style_loss_joint(
        tape,
        ctx,
        source_classifier,
        target_classifier,
        source,
        target,
        &flipped_s,
        &flipped_t,
        rng,
    )?;
    Ok(vec![
        (Component::AeSource, ae_s),
        (Component::AeTarget, ae_t),
        (Component::StyleSource, style_s),
        (Component::StyleTarget, style_t),
    ])
}

/// Joint reconstruction and domain-specific style losses on both domains.
pub fn dast_objective(
    tape: &mut Tape,
    ctx: &LossContext,
    source_classifier: &StyleClassifier,
    target_classifier: &StyleClassifier,
    source: &[&SentenceRecord],
    target: &[&SentenceRecord],
    rng: &mut Rng,
) -> Result<Objective> {
    let parts = dast_parts(tape, ctx, source_classifier, target_classifier, source, target, rng)?;
    Ok(compose(tape, "dast", ctx.options.style_weight, parts))
}

/// The unknown-style objective plus a source sequence-to-sequence term.
pub fn dastc_parallel_objective(
    tape: &mut Tape,
    ctx: &LossContext,
    target_classifier: &StyleClassifier,
    target: &[&SentenceRecord],
    source: &[&SentenceRecord],
    pairs: &[(&SentenceRecord, &SentenceRecord)],
    rng: &mut Rng,
) -> Result<Objective> {
    let mut parts = dastc_parts(tape, ctx, target_classifier, target, source, rng)?;
    parts.push((Component::S2sSource, s2s_loss_source(tape, ctx, pairs)?));
    Ok(compose(tape, "dast-c+s2s", ctx.options.style_weight, parts))
}

/// The joint objective plus a source sequence-to-sequence term.
#[allow(clippy::too_many_arguments)]
pub fn dast_parallel_objective(
    tape: &mut Tape,
    ctx: &LossContext,
    source_classifier: &StyleClassifier,
    target_classifier: &StyleClassifier,
    source: &[&SentenceRecord],
    target: &[&SentenceRecord],
    pairs: &[(&SentenceRecord, &SentenceRecord)],
    rng: &mut Rng,
) -> Result<Objective> {
    let mut parts = dast_parts(tape, ctx, source_classifier, target_classifier, source, target, rng)?;
    parts.push((Component::S2sSource, s2s_loss_source(tape, ctx, pairs)?));
    Ok(compose(tape, "dast+s2s", ctx.options.style_weight, parts))
}

/// Framed ids of `records` as the losses see them.
pub fn encode_records(ctx: &LossContext, records: &[&SentenceRecord]) -> Vec<Vec<usize>> {
    framed(ctx, records)
}

/// Greedy decoder output for `records` transferred to `styles`, as token
/// strings.
pub fn transfer_records(
    model: &TransferModel,
    ctx: &LossContext,
    records: &[&SentenceRecord],
    styles: &[usize],
    domain: Domain,
) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::with_capacity(records.len());
    for (chunk, st) in records.chunks(128).zip(styles.chunks(128)) {
        let ids = framed(ctx, chunk);
        let domains = model
            .config()
            .domain_vectors()
            .then(|| vec![domain.index(); chunk.len()]);
        let generated = model.transfer(&ids, st, domains.as_deref(), ctx.options.max_decode_len)?;
        for g in generated {
            let mut framed = Vec::with_capacity(g.len() + 2);
            framed.push(BOS);
            framed.extend(g);
            framed.push(EOS);
            out.push(ctx.vocab.decode_ids(&framed));
        }
    }
    Ok(out)
}
