use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{uniform, Parameters, INIT_SCALE};
use crate::autodiff::{softmax_in_place, Graph, Matrix, Var};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Shape of a convolutional sentence classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierArch {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub feature_maps: usize,
    /// dropout on pooled features during training only
    pub dropout: f64,
}

impl ClassifierArch {
    /// Widths 3, 4, 5 with 100 maps each and dropout 0.5.
    pub fn with_defaults(vocab_size: usize, embed_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            widths: vec![3, 4, 5],
            feature_maps: 100,
            dropout: 0.5,
        }
    }

    pub fn widest(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.feature_maps == 0 {
            return Err(Error::Config("classifier dimensions must be at least 1".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("classifier needs positive filter widths".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Classifier parameters on a tape.
#[derive(Clone, Debug)]
pub struct ClassifierVars {
    pub params: Vec<Var>,
    pub embedding: Var,
    /// `(width, filters, bias)` per filter width
    pub convs: Vec<(usize, Var, Var)>,
    pub head_w: Var,
    pub head_b: Var,
}

/// Convolutional sentence classifier over its own embedding table. Inputs
/// shorter than the widest filter are PAD-extended; each sentence is pooled
/// over the windows of its first `max(len, widest)` positions only, so a
/// prediction never depends on what else is in the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleClassifier {
    arch: ClassifierArch,
    labels: Vec<String>,
    params: Parameters,
    frozen: bool,
}

impl StyleClassifier {
    pub fn new(arch: ClassifierArch, labels: Vec<String>, seed: u64) -> Result<Self> {
        arch.validate()?;
        if labels.len() < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        let mut rng = rng::seeded(seed, rng::tag("classifier-init"));
        let mut params = Parameters::new();
        params.push("embedding", uniform(&mut rng, arch.vocab_size, arch.embed_dim, INIT_SCALE));
        for &w in &arch.widths {
            params.push(
                format!("conv{w}.w"),
                uniform(&mut rng, w * arch.embed_dim, arch.feature_maps, INIT_SCALE),
            );
            params.push(format!("conv{w}.b"), Matrix::zeros((1, arch.feature_maps)));
        }
        let features = arch.feature_maps * arch.widths.len();
        params.push("head.w", uniform(&mut rng, features, labels.len(), INIT_SCALE));
        params.push("head.b", Matrix::zeros((1, labels.len())));
        Ok(Self {
            arch,
            labels,
            params,
            frozen: false,
        })
    }

    pub fn from_parameters(
        arch: ClassifierArch,
        labels: Vec<String>,
        params: Parameters,
        frozen: bool,
    ) -> Result<Self> {
        let expected = Self::new(arch.clone(), labels.clone(), 0)?;
        if expected.params.shapes() != params.shapes() {
            return Err(Error::IncompatibleCheckpoint(
                "classifier parameter names or shapes do not match".into(),
            ));
        }
        Ok(Self {
            arch,
            labels,
            params,
            frozen,
        })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    /// Mutable access is refused once frozen.
    pub fn params_mut(&mut self) -> Option<&mut Parameters> {
        (!self.frozen).then_some(&mut self.params)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Binds parameters; frozen classifiers always bind as constants.
    pub fn bind(&self, g: &mut Graph) -> ClassifierVars {
        let vars = self.params.bind(g, !self.frozen);
        let at = |name: &str| vars[self.params.index(name).expect("fixed layout")];
        ClassifierVars {
            embedding: at("embedding"),
            convs: self
                .arch
                .widths
                .iter()
                .map(|&w| (w, at(&format!("conv{w}.w")), at(&format!("conv{w}.b"))))
                .collect(),
            head_w: at("head.w"),
            head_b: at("head.b"),
            params: vars,
        }
    }

    /// `batch x embed_dim` rows of the PAD embedding.
    pub fn pad_rows(&self, g: &mut Graph, v: &ClassifierVars, batch: usize) -> Var {
        g.gather(v.embedding, &vec![PAD; batch])
    }

    /// Logits from per-step embedded inputs (`batch x embed_dim` each);
    /// `lengths[b]` counts the real positions of sentence `b`.
    pub fn logits_steps(
        &self,
        g: &mut Graph,
        v: &ClassifierVars,
        steps: &[Var],
        lengths: &[usize],
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let batch = lengths.len();
        if batch == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if lengths.iter().any(|&l| l > steps.len()) {
            return Err(Error::BatchShape("sentence longer than the step sequence".into()));
        }
        let widest = self.arch.widest();
        let mut steps = steps.to_vec();
        if steps.len() < widest {
            let pad = self.pad_rows(g, v, batch);
            steps.resize(widest, pad);
        }
        let len = steps.len();
        let stacked = g.stack_steps(&steps);
        let mut pooled = Vec::with_capacity(v.convs.len());
        for &(w, filters, bias) in &v.convs {
            let windows = g.unfold(stacked, batch, len, w);
            let conv = g.matmul(windows, filters);
            let conv = g.add_row(conv, bias);
            let valid: Vec<usize> = lengths.iter().map(|&l| l.max(widest) - w + 1).collect();
            let pool = g.max_pool_time(conv, len - w + 1, &valid);
            pooled.push(g.relu(pool));
        }
        let mut features = if pooled.len() == 1 {
            pooled[0]
        } else {
            g.concat_cols(&pooled)
        };
        if let Some(rng) = dropout {
            let p = self.arch.dropout;
            if p > 0.0 {
                let keep = 1.0 / (1.0 - p);
                let dim = g.value(features).dim();
                let mask = Matrix::from_shape_simple_fn(dim, || {
                    if rng.gen::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                });
                let mask = g.constant(mask);
                features = g.mul(features, mask);
            }
        }
        let head = g.matmul(features, v.head_w);
        Ok(g.add_row(head, v.head_b))
    }

    /// Logits from unframed token ids (no BOS/EOS).
    pub fn logits_ids(
        &self,
        g: &mut Graph,
        v: &ClassifierVars,
        sentences: &[Vec<usize>],
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        if let Some(&bad) = sentences
            .iter()
            .flatten()
            .find(|&&id| id >= self.arch.vocab_size)
        {
            return Err(Error::InvalidInput(format!("token id {bad} outside the vocabulary")));
        }
        let len = sentences.iter().map(Vec::len).max().unwrap_or(0);
        let steps: Vec<Var> = (0..len)
            .map(|t| {
                let ids: Vec<usize> = sentences
                    .iter()
                    .map(|s| s.get(t).copied().unwrap_or(PAD))
                    .collect();
                g.gather(v.embedding, &ids)
            })
            .collect();
        let lengths: Vec<usize> = sentences.iter().map(Vec::len).collect();
        self.logits_steps(g, v, &steps, &lengths, dropout)
    }

    /// Class probabilities per sentence.
    pub fn predict_proba(&self, sentences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(256) {
            let mut g = Graph::new();
            let frozen = Self {
                frozen: true,
                ..self.clone()
            };
            let v = frozen.bind(&mut g);
            let logits = frozen.logits_ids(&mut g, &v, chunk, None)?;
            for row in g.value(logits).rows() {
                let mut p = row.to_vec();
                softmax_in_place(&mut p);
                out.push(p);
            }
        }
        Ok(out)
    }

    /// Argmax class per sentence.
    pub fn predict(&self, sentences: &[Vec<usize>]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(sentences)?
            .iter()
            .map(|p| super::argmax(p))
            .collect())
    }

    /// Probability vector over classes for one sentence.
    pub fn classify_style(&self, ids: &[usize]) -> Result<Vec<f64>> {
        Ok(self.predict_proba(&[ids.to_vec()])?.remove(0))
    }
}
