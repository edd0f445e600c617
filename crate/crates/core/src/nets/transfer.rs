use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{argmax, uniform, ModelConfig, Parameters, INIT_SCALE};
use crate::autodiff::{Graph, Matrix, Var};
use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    Greedy,
    HardSample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "hard-sample" => Ok(DecodeMode::HardSample),
            other => Err(Error::Config(format!("unknown decode mode `{other}`"))),
        }
    }
}

/// GRU parameters on a tape. Gates are packed `[reset | update | new]`
/// along the columns of `w` (`in x 3H`), `u` (`H x 3H`) and both biases.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w: Var,
    pub u: Var,
    pub b_i: Var,
    pub b_h: Var,
    pub hidden: usize,
}

impl GruVars {
    /// `h' = (1 - z) * n + z * h` with
    /// `n = tanh(x W_n + b_in + r * (h U_n + b_hn))`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let xw = g.matmul(x, self.w);
        let gi = g.add_row(xw, self.b_i);
        let hu = g.matmul(h, self.u);
        let gh = g.add_row(hu, self.b_h);
        let gi_rz = g.slice_cols(gi, 0, 2 * hd);
        let gh_rz = g.slice_cols(gh, 0, 2 * hd);
        let rz_pre = g.add(gi_rz, gh_rz);
        let rz = g.sigmoid(rz_pre);
        let r = g.slice_cols(rz, 0, hd);
        let z = g.slice_cols(rz, hd, 2 * hd);
        let gi_n = g.slice_cols(gi, 2 * hd, 3 * hd);
        let gh_n = g.slice_cols(gh, 2 * hd, 3 * hd);
        let gated = g.mul(r, gh_n);
        let n_pre = g.add(gi_n, gated);
        let n = g.tanh(n_pre);
        let diff = g.sub(h, n);
        let kept = g.mul(z, diff);
        g.add(n, kept)
    }
}

/// Every [`TransferModel`] parameter on one tape. `params` follows
/// [`Parameters`] order.
#[derive(Clone, Debug)]
pub struct TransferVars {
    pub params: Vec<Var>,
    pub embedding: Var,
    pub encoder: GruVars,
    pub decoder: GruVars,
    pub style: Var,
    pub domain: Option<Var>,
    pub out_w: Var,
    pub out_b: Var,
}

/// Teacher-forced decoder outputs. Row `b * steps + t` of `log_probs`
/// predicts token `t + 1` of sentence `b`.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    pub log_probs: Var,
    pub steps: usize,
    pub targets: Vec<Option<usize>>,
    /// `(batch * steps) x 1` gold log-probabilities, 0 on padding rows.
    pub picked: Var,
    /// predicted positions per sentence (tokens + EOS)
    pub lengths: Vec<usize>,
}

/// Free-running decoder outputs.
#[derive(Clone, Debug)]
pub struct FreeRun {
    /// generated tokens per sentence, EOS excluded
    pub tokens: Vec<Vec<usize>>,
    /// per-step `batch x vocab` softmax outputs
    pub dists: Vec<Var>,
    /// per-step straight-through one-hots of the chosen tokens
    pub one_hots: Vec<Var>,
}

impl FreeRun {
    pub fn steps(&self) -> usize {
        self.dists.len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.tokens.iter().map(Vec::len).collect()
    }
}

/// Shared encoder-decoder with style and optional domain conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferModel {
    config: ModelConfig,
    params: Parameters,
}

fn gru_params(params: &mut Parameters, rng: &mut Rng, prefix: &str, input: usize, hidden: usize) {
    params.push(format!("{prefix}.w"), uniform(rng, input, 3 * hidden, INIT_SCALE));
    params.push(format!("{prefix}.u"), uniform(rng, hidden, 3 * hidden, INIT_SCALE));
    params.push(format!("{prefix}.b_i"), Matrix::zeros((1, 3 * hidden)));
    params.push(format!("{prefix}.b_h"), Matrix::zeros((1, 3 * hidden)));
}

impl TransferModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed, rng::tag("transfer-init"));
        let c = &config;
        let mut params = Parameters::new();
        params.push("embedding", uniform(&mut rng, c.vocab_size, c.embed_dim, INIT_SCALE));
        gru_params(&mut params, &mut rng, "encoder", c.embed_dim, c.enc_hidden);
        gru_params(&mut params, &mut rng, "decoder", c.embed_dim, c.dec_hidden);
        params.push("style", uniform(&mut rng, c.num_styles + 1, c.style_dim, INIT_SCALE));
        if c.domain_vectors() {
            params.push("domain", uniform(&mut rng, c.num_domains, c.domain_dim, INIT_SCALE));
        }
        params.push("output.w", uniform(&mut rng, c.dec_hidden, c.vocab_size, INIT_SCALE));
        params.push("output.b", Matrix::zeros((1, c.vocab_size)));
        Ok(Self { config, params })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_parameters(config: ModelConfig, params: Parameters) -> Result<Self> {
        let expected = Self::new(config.clone(), 0)?;
        if expected.params.shapes() != params.shapes() {
            return Err(Error::IncompatibleCheckpoint(
                "parameter names or shapes do not match the model config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    /// Row of the style table reserved for the unknown style.
    pub fn unknown_style(&self) -> usize {
        self.config.num_styles
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> TransferVars {
        let vars = self.params.bind(g, trainable);
        let at = |name: &str| vars[self.params.index(name).expect("fixed layout")];
        let gru = |prefix: &str, hidden: usize| GruVars {
            w: at(&format!("{prefix}.w")),
            u: at(&format!("{prefix}.u")),
            b_i: at(&format!("{prefix}.b_i")),
            b_h: at(&format!("{prefix}.b_h")),
            hidden,
        };
        TransferVars {
            embedding: at("embedding"),
            encoder: gru("encoder", self.config.enc_hidden),
            decoder: gru("decoder", self.config.dec_hidden),
            style: at("style"),
            domain: self.params.index("domain").map(|i| vars[i]),
            out_w: at("output.w"),
            out_b: at("output.b"),
            params: vars,
        }
    }

    fn check_framed(&self, seq: &[usize]) -> Result<()> {
        if seq.len() < 3 || seq[0] != BOS || seq[seq.len() - 1] != EOS {
            return Err(Error::InvalidInput(
                "sequence must be BOS, at least one token, EOS".into(),
            ));
        }
        if let Some(&bad) = seq.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} outside the vocabulary")));
        }
        Ok(())
    }

    /// Final encoder hidden states, `batch x enc_hidden`, for framed id
    /// sequences of possibly different lengths.
    pub fn encode_batch(&self, g: &mut Graph, v: &TransferVars, seqs: &[Vec<usize>]) -> Result<Var> {
        if seqs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for s in seqs {
            self.check_framed(s)?;
        }
        let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut h = g.constant(Matrix::zeros((seqs.len(), self.config.enc_hidden)));
        for t in 0..max_len {
            let ids: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            let x = g.gather(v.embedding, &ids);
            let next = v.encoder.step(g, x, h);
            let mask: Vec<bool> = seqs.iter().map(|s| t < s.len()).collect();
            h = if mask.iter().all(|&m| m) {
                next
            } else {
                g.row_select(&mask, next, h)
            };
        }
        Ok(h)
    }

    /// `concat(c, style_embedding, domain_embedding?)`.
    pub fn init_state(
        &self,
        g: &mut Graph,
        v: &TransferVars,
        content: Var,
        styles: &[usize],
        domains: Option<&[usize]>,
    ) -> Result<Var> {
        let batch = g.value(content).nrows();
        if styles.len() != batch {
            return Err(Error::BatchShape(format!(
                "{} style ids for a batch of {batch}",
                styles.len()
            )));
        }
        if let Some(&bad) = styles.iter().find(|&&s| s > self.config.num_styles) {
            return Err(Error::InvalidStyle(format!("style index {bad} out of range")));
        }
        let style = g.gather(v.style, styles);
        match (v.domain, domains) {
            (Some(table), Some(ds)) => {
                if ds.len() != batch {
                    return Err(Error::BatchShape(format!(
                        "{} domain ids for a batch of {batch}",
                        ds.len()
                    )));
                }
                if let Some(&bad) = ds.iter().find(|&&d| d >= self.config.num_domains) {
                    return Err(Error::InvalidInput(format!("domain index {bad} out of range")));
                }
                let domain = g.gather(table, ds);
                Ok(g.concat_cols(&[content, style, domain]))
            }
            (None, None) => Ok(g.concat_cols(&[content, style])),
            (Some(_), None) => Err(Error::Config(
                "model has domain vectors but no domain ids were given".into(),
            )),
            (None, Some(_)) => Err(Error::Config(
                "domain ids given but the model has no domain vectors".into(),
            )),
        }
    }

    fn logits(&self, g: &mut Graph, v: &TransferVars, h: Var) -> Var {
        let proj = g.matmul(h, v.out_w);
        g.add_row(proj, v.out_b)
    }

    /// Log-probabilities of every gold continuation under gold prefixes.
    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        v: &TransferVars,
        state: Var,
        gold: &[Vec<usize>],
    ) -> Result<TeacherForced> {
        for s in gold {
            self.check_framed(s)?;
        }
        if gold.len() != g.value(state).nrows() {
            return Err(Error::BatchShape("gold batch does not match the state".into()));
        }
        let steps = gold.iter().map(Vec::len).max().unwrap_or(0) - 1;
        let mut h = state;
        let mut hidden = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<usize> = gold
                .iter()
                .map(|s| if t + 1 < s.len() { s[t] } else { PAD })
                .collect();
            let x = g.gather(v.embedding, &ids);
            h = v.decoder.step(g, x, h);
            hidden.push(h);
        }
        let stacked = g.stack_steps(&hidden);
        let logits = self.logits(g, v, stacked);
        let log_probs = g.log_softmax(logits);
        let mut targets = Vec::with_capacity(gold.len() * steps);
        for s in gold {
            for t in 0..steps {
                targets.push(s.get(t + 1).copied());
            }
        }
        let picked = g.pick_rows(log_probs, &targets);
        Ok(TeacherForced {
            log_probs,
            steps,
            targets,
            picked,
            lengths: gold.iter().map(|s| s.len() - 1).collect(),
        })
    }

    /// Decodes from `state` feeding back the chosen tokens through the
    /// straight-through path. Stops once every row emitted EOS or after
    /// `max_len` steps.
    pub fn free_running(
        &self,
        g: &mut Graph,
        v: &TransferVars,
        state: Var,
        mode: DecodeMode,
        max_len: usize,
        temperature: f64,
        rng: &mut Rng,
    ) -> FreeRun {
        let batch = g.value(state).nrows();
        let mut h = state;
        let mut x = g.gather(v.embedding, &vec![BOS; batch]);
        let mut done = vec![false; batch];
        let mut run = FreeRun {
            tokens: vec![Vec::new(); batch],
            dists: Vec::new(),
            one_hots: Vec::new(),
        };
        for _ in 0..max_len {
            h = v.decoder.step(g, x, h);
            let logits = self.logits(g, v, h);
            let scaled = if temperature == 1.0 {
                logits
            } else {
                g.scale(logits, 1.0 / temperature)
            };
            let dist = g.softmax(scaled);
            let chosen: Vec<usize> = g
                .value(dist)
                .rows()
                .into_iter()
                .zip(&done)
                .map(|(row, &finished)| {
                    if finished {
                        return EOS;
                    }
                    let row = row.as_slice().expect("contiguous row");
                    match mode {
                        DecodeMode::Greedy => argmax(row),
                        DecodeMode::HardSample => sample(row, rng),
                    }
                })
                .collect();
            for (b, &tok) in chosen.iter().enumerate() {
                if done[b] {
                    continue;
                }
                if tok == EOS {
                    done[b] = true;
                } else {
                    run.tokens[b].push(tok);
                }
            }
            let one_hot = g.straight_through(dist, &chosen);
            run.dists.push(dist);
            run.one_hots.push(one_hot);
            if done.iter().all(|&d| d) {
                break;
            }
            x = g.matmul(one_hot, v.embedding);
        }
        run
    }

    /// Content vector of one framed sequence.
    pub fn encode(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let c = self.encode_batch(&mut g, &v, &[ids.to_vec()])?;
        Ok(g.value(c).row(0).to_vec())
    }

    pub fn init_decoder_state(
        &self,
        content: &[f64],
        style: usize,
        domain: Option<usize>,
    ) -> Result<Vec<f64>> {
        if content.len() != self.config.enc_hidden {
            return Err(Error::InvalidInput(format!(
                "content vector has {} entries, expected {}",
                content.len(),
                self.config.enc_hidden
            )));
        }
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let c = g.constant(row_matrix(content));
        let domains = domain.map(|d| vec![d]);
        let s = self.init_state(&mut g, &v, c, &[style], domains.as_deref())?;
        Ok(g.value(s).row(0).to_vec())
    }

    /// `log p(x_t | x_<t, state)` for every predicted position of `gold`.
    pub fn decode_teacher_forced(&self, state: &[f64], gold: &[usize]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let s = g.constant(row_matrix(state));
        let tf = self.teacher_forced(&mut g, &v, s, &[gold.to_vec()])?;
        Ok(g.value(tf.picked).column(0).to_vec())
    }

    /// Generated tokens (EOS excluded) and the per-step distributions.
    pub fn decode_free_running(
        &self,
        state: &[f64],
        mode: DecodeMode,
        max_len: usize,
        rng: &mut Rng,
    ) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        self.check_state(state)?;
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let s = g.constant(row_matrix(state));
        let run = self.free_running(&mut g, &v, s, mode, max_len, self.config.temperature, rng);
        let dists = run.dists.iter().map(|d| g.value(*d).row(0).to_vec()).collect();
        Ok((run.tokens.into_iter().next().unwrap_or_default(), dists))
    }

    /// Greedy transfer of framed sequences to the given styles.
    pub fn transfer(
        &self,
        seqs: &[Vec<usize>],
        styles: &[usize],
        domains: Option<&[usize]>,
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let c = self.encode_batch(&mut g, &v, seqs)?;
        let s = self.init_state(&mut g, &v, c, styles, domains)?;
        let mut unused = rng::seeded(0, 0);
        let run = self.free_running(&mut g, &v, s, DecodeMode::Greedy, max_len, 1.0, &mut unused);
        Ok(run.tokens)
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.config.dec_hidden {
            return Err(Error::InvalidInput(format!(
                "decoder state has {} entries, expected {}",
                state.len(),
                self.config.dec_hidden
            )));
        }
        Ok(())
    }
}

fn row_matrix(values: &[f64]) -> Matrix {
    Matrix::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

fn sample(dist: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative total
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(domain: bool) -> TransferModel {
        let config = ModelConfig {
            vocab_size: 12,
            embed_dim: 5,
            enc_hidden: 6,
            dec_hidden: if domain { 11 } else { 9 },
            style_dim: 3,
            domain_dim: if domain { 2 } else { 0 },
            num_styles: 2,
            num_domains: 2,
            max_decode_len: 7,
            temperature: 1.0,
        };
        TransferModel::new(config, 3).unwrap()
    }

    #[test]
    fn content_vector_has_encoder_width_and_is_deterministic() {
        let m = tiny(true);
        let a = m.encode(&[BOS, 5, 6, EOS]).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, m.encode(&[BOS, 5, 6, EOS]).unwrap());
        assert_ne!(a, m.encode(&[BOS, 5, 7, EOS]).unwrap());
        assert!(matches!(m.encode(&[BOS, EOS]), Err(Error::InvalidInput(_))));
        assert!(matches!(m.encode(&[5, 6, EOS]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn batched_encoding_matches_single_encoding() {
        let m = tiny(false);
        let seqs = vec![vec![BOS, 5, EOS], vec![BOS, 6, 7, 8, 9, EOS]];
        let mut g = Graph::new();
        let v = m.bind(&mut g, false);
        let c = m.encode_batch(&mut g, &v, &seqs).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let single = m.encode(s).unwrap();
            for (a, b) in g.value(c).row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn state_is_a_plain_concatenation() {
        let m = tiny(true);
        let c = m.encode(&[BOS, 5, EOS]).unwrap();
        let s0 = m.init_decoder_state(&c, 0, Some(1)).unwrap();
        let s1 = m.init_decoder_state(&c, 1, Some(1)).unwrap();
        assert_eq!(s0.len(), 11);
        assert_eq!(&s0[..6], &c[..]);
        assert_eq!(&s0[6..9], m.params().get("style").unwrap().row(0).to_vec().as_slice());
        assert_eq!(&s0[..6], &s1[..6]);
        assert_eq!(&s0[9..], &s1[9..]);
        assert_ne!(&s0[6..9], &s1[6..9]);
        assert!(matches!(m.init_decoder_state(&c, 0, None), Err(Error::Config(_))));
    }

    #[test]
    fn teacher_forced_log_probs_are_normalised() {
        let m = tiny(false);
        let gold = vec![BOS, 4, 5, 6, EOS];
        let c = m.encode(&gold).unwrap();
        let s = m.init_decoder_state(&c, 1, None).unwrap();
        let lp = m.decode_teacher_forced(&s, &gold).unwrap();
        assert_eq!(lp.len(), 4);
        assert!(lp.iter().all(|&x| x <= 0.0));

        let mut g = Graph::new();
        let v = m.bind(&mut g, false);
        let st = g.constant(row_matrix(&s));
        let tf = m.teacher_forced(&mut g, &v, st, &[gold]).unwrap();
        for row in g.value(tf.log_probs).rows() {
            let total: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn free_running_respects_the_cap_and_is_reproducible() {
        let m = tiny(false);
        let c = m.encode(&[BOS, 5, EOS]).unwrap();
        let s = m.init_decoder_state(&c, 0, None).unwrap();
        let mut r1 = rng::seeded(4, 0);
        let mut r2 = rng::seeded(4, 0);
        let a = m.decode_free_running(&s, DecodeMode::HardSample, 5, &mut r1).unwrap();
        let b = m.decode_free_running(&s, DecodeMode::HardSample, 5, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(a.0.len() <= 5);
        for d in &a.1 {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let g1 = m.decode_free_running(&s, DecodeMode::Greedy, 5, &mut r1).unwrap();
        let g2 = m.decode_free_running(&s, DecodeMode::Greedy, 5, &mut r2).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn sampling_falls_back_to_the_last_positive_entry() {
        let mut r = rng::seeded(0, 0);
        for _ in 0..100 {
            assert_eq!(sample(&[0.0, 1.0, 0.0], &mut r), 1);
        }
    }
}
