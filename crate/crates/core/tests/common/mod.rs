//! Shared fixtures and independent reference implementations.
//!
//! The reference forward pass below is written from the model definition
//! with plain `Vec<f64>` arithmetic. It shares no code with the library's
//! tape, so finite differences of it check the library's analytic
//! gradients.

#![allow(dead_code)]

use std::collections::HashMap;

use dastkit::corpus::{CorpusSplit, Domain, SentenceRecord, SplitName, Style, StyleSet, Vocabulary};
use dastkit::corpus::{BOS, EOS, PAD};
use dastkit::nets::{ClassifierArch, ModelConfig, Parameters, StyleClassifier, TransferModel};
use dastkit::objectives::{LossContext, LossOptions};
use dastkit::nets::DecodeMode;

pub const STYLES: [&str; 2] = ["formal", "informal"];

const SOURCE_TEXT: [(&str, usize); 6] = [
    ("the food was good", 0),
    ("food was very good", 0),
    ("the food was bad lol", 1),
    ("bad food lol", 1),
    ("the service was good", 0),
    ("service was bad lol", 1),
];

const TARGET_TEXT: [(&str, usize); 6] = [
    ("the movie was good", 0),
    ("movie was very good", 0),
    ("the plot was bad lol", 1),
    ("bad movie lol", 1),
    ("the plot was good", 0),
    ("movie was bad lol", 1),
];

/// A two-domain toy corpus with a vocabulary under 20 entries.
pub struct Tiny {
    pub vocab: Vocabulary,
    pub styles: StyleSet,
    pub source: Vec<SentenceRecord>,
    pub target: Vec<SentenceRecord>,
}

fn records(text: &[(&str, usize)], domain: Domain) -> Vec<SentenceRecord> {
    text.iter()
        .map(|&(t, s)| SentenceRecord::from_text(t, Style::known(STYLES[s]), domain).unwrap())
        .collect()
}

pub fn tiny() -> Tiny {
    let source = records(&SOURCE_TEXT, Domain::Source);
    let target = records(&TARGET_TEXT, Domain::Target);
    let s = CorpusSplit::new(SplitName::Train, Domain::Source, source.clone()).unwrap();
    let t = CorpusSplit::new(SplitName::Train, Domain::Target, target.clone()).unwrap();
    let vocab = Vocabulary::build(&[&s, &t], 1, 100).unwrap();
    assert!(vocab.len() <= 20);
    Tiny {
        vocab,
        styles: StyleSet::new(STYLES).unwrap(),
        source,
        target,
    }
}

/// Model with every width at most 8.
pub fn tiny_model(vocab_size: usize, domain_vectors: bool, seed: u64) -> TransferModel {
    let (enc, style, domain) = if domain_vectors { (4, 2, 2) } else { (5, 3, 0) };
    let config = ModelConfig {
        vocab_size,
        embed_dim: 4,
        enc_hidden: enc,
        dec_hidden: enc + style + domain,
        style_dim: style,
        domain_dim: domain,
        num_styles: 2,
        num_domains: 2,
        max_decode_len: 5,
        temperature: 1.0,
    };
    // spread the initial values so decoding is not near-uniform
    let mut model = TransferModel::new(config, seed).unwrap();
    for m in model.params_mut().values_mut() {
        m.mapv_inplace(|x| x * 8.0 + 0.05);
    }
    model
}

pub fn frozen_classifier(vocab_size: usize, seed: u64) -> StyleClassifier {
    let arch = ClassifierArch {
        vocab_size,
        embed_dim: 4,
        widths: vec![2, 3],
        feature_maps: 3,
        dropout: 0.0,
    };
    let mut c = StyleClassifier::new(arch, STYLES.iter().map(|s| s.to_string()).collect(), seed)
        .unwrap();
    for m in c.params_mut().unwrap().values_mut() {
        m.mapv_inplace(|x| x * 10.0);
    }
    c.freeze();
    c
}

pub fn ctx<'a>(t: &'a Tiny, temperature: f64, per_token: bool) -> LossContext<'a> {
    LossContext {
        vocab: &t.vocab,
        styles: &t.styles,
        options: LossOptions {
            max_len: 5,
            max_decode_len: 5,
            per_token,
            style_weight: 1.0,
            decode_mode: DecodeMode::Greedy,
            temperature,
        },
    }
}

// ---------------------------------------------------------------------------
// reference forward pass

/// Row-major copy of every parameter, addressable by name.
#[derive(Clone, Debug)]
pub struct Flat {
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    pub values: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl Flat {
    pub fn of(params: &Parameters) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut values = Vec::new();
        for (name, m) in params.iter() {
            names.push(name.to_string());
            shapes.push(m.dim());
            values.push(m.iter().copied().collect());
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            names,
            shapes,
            values,
            index,
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn mat(&self, name: &str) -> Mat<'_> {
        let i = self.index[name];
        Mat {
            data: &self.values[i],
            cols: self.shapes[i].1,
        }
    }

    fn row(&self, name: &str, r: usize) -> Vec<f64> {
        self.mat(name).row(r).to_vec()
    }
}

#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    cols: usize,
}

impl Mat<'_> {
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `x · M` for a row vector `x`.
    fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += xi * m;
            }
        }
        out
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    log_softmax(x).into_iter().map(f64::exp).collect()
}

fn first_argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// PyTorch-style GRU cell with gates laid out reset, update, new.
fn gru(p: &Flat, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = h.len();
    let gi = add(&p.mat(&format!("{prefix}.w")).left_mul(x), &p.row(&format!("{prefix}.b_i"), 0));
    let gh = add(&p.mat(&format!("{prefix}.u")).left_mul(h), &p.row(&format!("{prefix}.b_h"), 0));
    (0..hd)
        .map(|j| {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[hd + j] + gh[hd + j]);
            let n = (gi[2 * hd + j] + r * gh[2 * hd + j]).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

fn encode(p: &Flat, ids: &[usize]) -> Vec<f64> {
    let hd = p.shapes[p.index["encoder.u"]].0;
    let mut h = vec![0.0; hd];
    for &id in ids {
        h = gru(p, "encoder", &p.row("embedding", id), &h);
    }
    h
}

fn state(p: &Flat, content: Vec<f64>, style: usize, domain: Domain) -> Vec<f64> {
    let mut s = content;
    s.extend(p.row("style", style));
    if p.has("domain") {
        s.extend(p.row("domain", domain.index()));
    }
    s
}

fn logits(p: &Flat, h: &[f64]) -> Vec<f64> {
    add(&p.mat("output.w").left_mul(h), &p.row("output.b", 0))
}

/// NLL of `gold` (framed) decoded from `start`.
fn sentence_nll(p: &Flat, start: Vec<f64>, gold: &[usize], per_token: bool) -> f64 {
    let mut h = start;
    let mut nll = 0.0;
    for t in 0..gold.len() - 1 {
        h = gru(p, "decoder", &p.row("embedding", gold[t]), &h);
        nll -= log_softmax(&logits(p, &h))[gold[t + 1]];
    }
    if per_token {
        nll / (gold.len() - 1) as f64
    } else {
        nll
    }
}

/// Mean reconstruction NLL: `inputs[i]` is encoded, `gold[i]` decoded under
/// `styles[i]`.
pub fn reconstruction(
    p: &Flat,
    inputs: &[Vec<usize>],
    gold: &[Vec<usize>],
    styles: &[usize],
    domain: Domain,
    per_token: bool,
) -> f64 {
    let total: f64 = inputs
        .iter()
        .zip(gold)
        .zip(styles)
        .map(|((x, y), &s)| sentence_nll(p, state(p, encode(p, x), s, domain), y, per_token))
        .sum();
    total / inputs.len() as f64
}

/// Greedy decode of one sentence at the current parameters: the chosen
/// token per step (EOS repeated once finished is the caller's concern).
pub struct Replay {
    /// `choices[b][t]`, one entry per decoding step for every row
    pub choices: Vec<Vec<usize>>,
    /// generated length per row, EOS excluded
    pub lengths: Vec<usize>,
    /// softmax outputs per row and step at the replayed parameters
    pub dists: Vec<Vec<Vec<f64>>>,
}

/// Greedy batch decode with the library's stopping rule: rows that emitted
/// EOS keep choosing EOS and the loop ends once all rows are done.
pub fn greedy_replay(p: &Flat, starts: &[Vec<f64>], max_len: usize, temperature: f64) -> Replay {
    let batch = starts.len();
    let mut hs = starts.to_vec();
    let mut xs: Vec<Vec<f64>> = vec![p.row("embedding", BOS); batch];
    let mut done = vec![false; batch];
    let mut replay = Replay {
        choices: vec![Vec::new(); batch],
        lengths: vec![0; batch],
        dists: vec![Vec::new(); batch],
    };
    for _ in 0..max_len {
        for b in 0..batch {
            hs[b] = gru(p, "decoder", &xs[b], &hs[b]);
            let l: Vec<f64> = logits(p, &hs[b]).iter().map(|v| v / temperature).collect();
            let d = softmax(&l);
            let tok = if done[b] { EOS } else { first_argmax(&d) };
            if !done[b] {
                if tok == EOS {
                    done[b] = true;
                } else {
                    replay.lengths[b] += 1;
                }
            }
            replay.choices[b].push(tok);
            replay.dists[b].push(d);
            xs[b] = p.row("embedding", tok);
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    replay
}

/// Classifier logits for per-position embedded inputs of one sentence,
/// with `len` real positions.
fn classifier_logits(c: &Flat, widths: &[usize], positions: &[Vec<f64>], len: usize) -> Vec<f64> {
    let widest = *widths.iter().max().unwrap();
    let pad = c.row("embedding", PAD);
    let mut rows: Vec<Vec<f64>> = positions
        .iter()
        .enumerate()
        .map(|(t, e)| if t < len { e.clone() } else { pad.clone() })
        .collect();
    while rows.len() < widest {
        rows.push(pad.clone());
    }
    let mut features = Vec::new();
    for &w in widths {
        let filters = c.mat(&format!("conv{w}.w"));
        let bias = c.row(&format!("conv{w}.b"), 0);
        let windows = len.max(widest) - w + 1;
        let mut best = vec![f64::NEG_INFINITY; bias.len()];
        for start in 0..windows {
            let window: Vec<f64> = rows[start..start + w].iter().flatten().copied().collect();
            let v = add(&filters.left_mul(&window), &bias);
            for (b, x) in best.iter_mut().zip(v) {
                *b = b.max(x);
            }
        }
        features.extend(best.into_iter().map(|x| x.max(0.0)));
    }
    add(&c.mat("head.w").left_mul(&features), &c.row("head.b", 0))
}

/// Straight-through style loss with the discrete choices of `replay` held
/// fixed. Each emitted one-hot is replaced by
/// `onehot + softmax(θ) - softmax(θ₀)`, which has the one-hot's value at
/// `θ₀` and the softmax's derivative everywhere.
#[allow(clippy::too_many_arguments)]
pub fn style_loss_replayed(
    p: &Flat,
    c: &Flat,
    widths: &[usize],
    inputs: &[Vec<usize>],
    flipped: &[usize],
    domain: Domain,
    replay: &Replay,
    temperature: f64,
) -> f64 {
    let emb = p.mat("embedding");
    let cls_emb = c.mat("embedding");
    let vocab = emb.data.len() / emb.cols;
    let mut total = 0.0;
    for (b, x) in inputs.iter().enumerate() {
        let mut h = state(p, encode(p, x), flipped[b], domain);
        let mut input = p.row("embedding", BOS);
        let mut positions = Vec::new();
        for (t, &tok) in replay.choices[b].iter().enumerate() {
            h = gru(p, "decoder", &input, &h);
            let l: Vec<f64> = logits(p, &h).iter().map(|v| v / temperature).collect();
            let d = softmax(&l);
            let soft: Vec<f64> = (0..vocab)
                .map(|k| (k == tok) as u8 as f64 + d[k] - replay.dists[b][t][k])
                .collect();
            input = emb.left_mul(&soft);
            positions.push(cls_emb.left_mul(&soft));
        }
        let logits = classifier_logits(c, widths, &positions, replay.lengths[b]);
        total -= log_softmax(&logits)[flipped[b]];
    }
    total / inputs.len() as f64
}

/// Whether some sentence repeats a pooling window of real tokens. Equal
/// windows tie in the max-pool at the replayed point, where the loss has a
/// kink and finite differences are meaningless.
pub fn has_pooling_ties(replay: &Replay, widths: &[usize]) -> bool {
    let widest = *widths.iter().max().unwrap();
    replay.choices.iter().zip(&replay.lengths).any(|(choices, &len)| {
        let span = choices.len().max(widest);
        let ids: Vec<usize> = (0..span)
            .map(|t| if t < len { choices[t] } else { PAD })
            .collect();
        widths.iter().any(|&w| {
            let windows: Vec<&[usize]> = (0..len.max(widest) - w + 1)
                .filter(|&p| p < len)
                .map(|p| &ids[p..p + w])
                .collect();
            (0..windows.len()).any(|i| windows[i + 1..].contains(&windows[i]))
        })
    })
}

/// Decoder start states for the style loss at the current parameters.
pub fn style_starts(p: &Flat, inputs: &[Vec<usize>], flipped: &[usize], domain: Domain) -> Vec<Vec<f64>> {
    inputs
        .iter()
        .zip(flipped)
        .map(|(x, &s)| state(p, encode(p, x), s, domain))
        .collect()
}

/// Central finite difference of `f` in scalar `(param, offset)`.
pub fn central_difference(
    flat: &Flat,
    param: usize,
    offset: usize,
    eps: f64,
    f: &dyn Fn(&Flat) -> f64,
) -> f64 {
    let mut plus = flat.clone();
    plus.values[param][offset] += eps;
    let mut minus = flat.clone();
    minus.values[param][offset] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

// ---------------------------------------------------------------------------
// brute-force BLEU

fn ngram_counts(tokens: &[String], n: usize) -> Vec<(Vec<String>, usize)> {
    let mut out: Vec<(Vec<String>, usize)> = Vec::new();
    if tokens.len() < n {
        return out;
    }
    for i in 0..=tokens.len() - n {
        let g = tokens[i..i + n].to_vec();
        match out.iter_mut().find(|(k, _)| *k == g) {
            Some((_, c)) => *c += 1,
            None => out.push((g, 1)),
        }
    }
    out
}

/// Corpus BLEU-4 by linear scans: clipped counts against the maximum
/// reference count, closest reference length (shorter on ties), 1e-9 for
/// empty precisions, on a 0..100 scale.
pub fn brute_force_bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, rs) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        let mut closest = rs[0].len();
        for r in rs {
            let (d, bd) = (r.len().abs_diff(h.len()), closest.abs_diff(h.len()));
            if d < bd || (d == bd && r.len() < closest) {
                closest = r.len();
            }
        }
        ref_len += closest;
        for n in 1..=4 {
            for (g, c) in ngram_counts(h, n) {
                let mut max_ref = 0;
                for r in rs {
                    for (rg, rc) in ngram_counts(r, n) {
                        if rg == g && rc > max_ref {
                            max_ref = rc;
                        }
                    }
                }
                matched[n - 1] += c.min(max_ref);
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if total[n] == 0 || matched[n] == 0 {
            1e-9
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * log_sum.exp()
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}
