//! Differentiable components: the GRU transfer model, the convolutional
//! style classifier and the straight-through token path.
//!
//! Parameters are stored as `f64` matrices whose values are always exactly
//! representable in `f32`, so checkpoints written as 32-bit floats reload
//! bit-identically.

mod classifier;
mod transfer;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub use classifier::{ClassifierArch, ClassifierVars, StyleClassifier};
pub use transfer::{DecodeMode, FreeRun, GruVars, TeacherForced, TransferModel, TransferVars};

/// Dimensions of a [`TransferModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub style_dim: usize,
    /// 0 disables domain vectors.
    pub domain_dim: usize,
    pub num_styles: usize,
    pub num_domains: usize,
    pub max_decode_len: usize,
    pub temperature: f64,
}

impl ModelConfig {
    /// Published dimensions: 500/700 hidden units, 150-d style and 50-d
    /// domain vectors, or 200-d style vectors without domain vectors.
    pub fn with_defaults(vocab_size: usize, num_styles: usize, domain_vectors: bool) -> Self {
        Self {
            vocab_size,
            embed_dim: 100,
            enc_hidden: 500,
            dec_hidden: 700,
            style_dim: if domain_vectors { 150 } else { 200 },
            domain_dim: if domain_vectors { 50 } else { 0 },
            num_styles,
            num_domains: 2,
            max_decode_len: 20,
            temperature: 1.0,
        }
    }

    pub fn domain_vectors(&self) -> bool {
        self.domain_dim > 0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("style_dim", self.style_dim),
            ("num_styles", self.num_styles),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.num_domains != 2 {
            return Err(Error::Config("num_domains must be 2".into()));
        }
        if self.enc_hidden + self.style_dim + self.domain_dim != self.dec_hidden {
            return Err(Error::Config(format!(
                "enc_hidden + style_dim + domain_dim = {} + {} + {} must equal dec_hidden = {}",
                self.enc_hidden, self.style_dim, self.domain_dim, self.dec_hidden
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Named parameter matrices in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    entries: Vec<(String, Matrix)>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn values(&self) -> impl Iterator<Item = &Matrix> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.entries.iter_mut().map(|(_, m)| m)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn by_index(&self, i: usize) -> &Matrix {
        &self.entries[i].1
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.entries[i].1
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(String, (usize, usize))> {
        self.entries
            .iter()
            .map(|(n, m)| (n.clone(), m.dim()))
            .collect()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn snap_f32(&mut self) {
        for m in self.values_mut() {
            snap_f32(m);
        }
    }

    /// Adds every matrix to `graph` in order, as leaves when `trainable`,
    /// as constants otherwise.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Vec<Var> {
        self.values()
            .map(|m| {
                if trainable {
                    graph.leaf(m.clone())
                } else {
                    graph.constant(m.clone())
                }
            })
            .collect()
    }

    /// Little-endian `f32` bytes of one matrix, row-major.
    pub fn matrix_to_le_bytes(m: &Matrix) -> Vec<u8> {
        let mut out = Vec::with_capacity(m.len() * 4);
        for &x in m.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out
    }

    pub fn matrix_from_le_bytes(bytes: &[u8], rows: usize, cols: usize) -> Result<Matrix> {
        if bytes.len() != rows * cols * 4 {
            return Err(Error::IncompatibleCheckpoint(format!(
                "blob has {} bytes, expected {} for a {rows}x{cols} matrix",
                bytes.len(),
                rows * cols * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Matrix::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))
    }
}

pub(crate) fn snap_f32(m: &mut Matrix) {
    m.mapv_inplace(|x| x as f32 as f64);
}

/// Uniform in `[-scale, scale]`, already snapped to `f32`.
pub(crate) fn uniform(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || {
        rng.gen_range(-scale..=scale) as f32 as f64
    })
}

pub(crate) const INIT_SCALE: f64 = 0.1;

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn check_distribution(distribution: &[f64]) -> Result<()> {
    if distribution.is_empty() {
        return Err(Error::InvalidDistribution("empty distribution".into()));
    }
    if distribution.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidDistribution(
            "entries must be finite and non-negative".into(),
        ));
    }
    let total: f64 = distribution.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidDistribution("all-zero distribution".into()));
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "entries sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Embedding of the argmax token of `distribution`: the forward value of the
/// straight-through path.
pub fn straight_through_embed(distribution: &[f64], table: &Matrix) -> Result<Vec<f64>> {
    check_distribution(distribution)?;
    if distribution.len() != table.nrows() {
        return Err(Error::InvalidInput(format!(
            "distribution over {} tokens but the table has {} rows",
            distribution.len(),
            table.nrows()
        )));
    }
    Ok(table.row(argmax(distribution)).to_vec())
}

/// Straight-through embedding on the tape: forward `one_hot(argmax) · table`,
/// backward as if `dist · table`. `dist` is `batch x vocab`.
pub fn straight_through_embed_var(graph: &mut Graph, dist: Var, table: Var) -> Result<Var> {
    let chosen = graph
        .value(dist)
        .rows()
        .into_iter()
        .map(|row| {
            let row = row.to_vec();
            check_distribution(&row).map(|_| argmax(&row))
        })
        .collect::<Result<Vec<_>>>()?;
    let one_hot = graph.straight_through(dist, &chosen);
    Ok(graph.matmul(one_hot, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn published_settings_satisfy_the_dimension_identity() {
        ModelConfig::with_defaults(100, 2, true).validate().unwrap();
        ModelConfig::with_defaults(100, 2, false).validate().unwrap();
        let mut bad = ModelConfig::with_defaults(100, 2, true);
        bad.dec_hidden = 699;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn straight_through_selects_the_argmax_row() {
        let table = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(
            straight_through_embed(&[0.1, 0.7, 0.2], &table).unwrap(),
            vec![3.0, 4.0]
        );
        assert!(matches!(
            straight_through_embed(&[0.0, 0.0, 0.0], &table),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn one_hot_distribution_hard_equals_soft() {
        let table = array![[1.5, -2.0], [0.25, 4.0], [5.0, 6.0]];
        let hard = straight_through_embed(&[0.0, 0.0, 1.0], &table).unwrap();
        let soft: Vec<f64> = (0..2)
            .map(|j| (0..3).map(|i| [0.0, 0.0, 1.0][i] * table[[i, j]]).sum())
            .collect();
        assert_eq!(hard, soft);
    }

    #[test]
    fn straight_through_gradient_is_the_soft_expectation_gradient() {
        // loss = sum(w * (p · T)); d loss / d p_i = sum_j w_j T_ij
        let table = array![[0.3, -1.2], [0.8, 0.5], [-0.4, 2.0]];
        let w = array![[1.7, -0.6]];
        let p = array![[0.2, 0.5, 0.3]];
        let soft = |p: &Matrix| -> f64 { (p.dot(&table) * &w).sum() };
        let mut g = Graph::new();
        let pv = g.leaf(p.clone());
        let tv = g.constant(table.clone());
        let e = straight_through_embed_var(&mut g, pv, tv).unwrap();
        let wv = g.constant(w.clone());
        let prod = g.mul(e, wv);
        let loss = g.sum_all(prod);
        assert_eq!(g.value(e).row(0).to_vec(), table.row(1).to_vec());
        let grads = g.backward(loss);
        let analytic = grads.get(pv).unwrap();
        let eps = 1e-6;
        for i in 0..3 {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus[[0, i]] += eps;
            minus[[0, i]] -= eps;
            let numeric = (soft(&plus) - soft(&minus)) / (2.0 * eps);
            assert!((analytic[[0, i]] - numeric).abs() < 1e-8);
        }
    }

    #[test]
    fn f32_blobs_round_trip_snapped_values() {
        let mut rng = crate::rng::seeded(1, 2);
        let m = uniform(&mut rng, 3, 4, 0.1);
        let bytes = Parameters::matrix_to_le_bytes(&m);
        assert_eq!(Parameters::matrix_from_le_bytes(&bytes, 3, 4).unwrap(), m);
    }
}
