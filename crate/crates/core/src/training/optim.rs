use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::nets::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// global gradient-norm cap; 0 disables clipping
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config("epsilon must be positive and clip_norm non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

/// Norms observed during one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateReport {
    pub grad_norm: f64,
    pub clipped_norm: f64,
    /// Euclidean norm of the change actually applied to the parameters
    pub update_norm: f64,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        let zeros: Vec<Matrix> = params.values().map(|m| Matrix::zeros(m.dim())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Clips `grads` to the configured global norm, takes one step and
    /// rounds the parameters back to `f32`.
    pub fn apply(
        &mut self,
        params: &mut Parameters,
        mut grads: Vec<Matrix>,
        config: &OptimizerConfig,
    ) -> Result<UpdateReport> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::BatchShape("gradient count does not match parameters".into()));
        }
        let grad_norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Divergence { step: self.step });
        }
        let mut clipped_norm = grad_norm;
        if config.clip_norm > 0.0 && grad_norm > config.clip_norm {
            let factor = config.clip_norm / grad_norm;
            for g in &mut grads {
                g.mapv_inplace(|x| x * factor);
            }
            clipped_norm = config.clip_norm;
        }
        self.step += 1;
        let lr = config.learning_rate;
        let mut update_sq = 0.0;
        for (i, g) in grads.iter().enumerate() {
            let p = params.by_index_mut(i);
            let before = p.clone();
            match config.kind {
                OptimizerKind::Sgd => {
                    p.zip_mut_with(g, |p, &g| *p -= lr * g);
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = (config.beta1, config.beta2);
                    let c1 = 1.0 - b1.powi(self.step as i32);
                    let c2 = 1.0 - b2.powi(self.step as i32);
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
                    v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
                    ndarray::Zip::from(&mut *p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                        *p -= lr * (m / c1) / ((v / c2).sqrt() + config.epsilon);
                    });
                }
            }
            crate::nets::snap_f32(p);
            update_sq += (&*p - &before).iter().map(|d| d * d).sum::<f64>();
        }
        Ok(UpdateReport {
            grad_norm,
            clipped_norm,
            update_norm: update_sq.sqrt(),
        })
    }

    /// Little-endian `f64` bytes: the step counter, then every `m`, then
    /// every `v`, each row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = self.step.to_le_bytes().to_vec();
        for m in self.m.iter().chain(&self.v) {
            for &x in m.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8], params: &Parameters) -> Result<Self> {
        let scalars = params.num_scalars();
        if bytes.len() != 8 + 16 * scalars {
            return Err(Error::IncompatibleCheckpoint(
                "optimizer state size does not match the parameters".into(),
            ));
        }
        let step = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let mut values = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut read = || -> Vec<Matrix> {
            params
                .values()
                .map(|p| {
                    let data: Vec<f64> = values.by_ref().take(p.len()).collect();
                    Matrix::from_shape_vec(p.dim(), data).expect("sized above")
                })
                .collect()
        };
        let m = read();
        let v = read();
        Ok(Self { step, m, v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params() -> Parameters {
        let mut p = Parameters::new();
        p.push("a", array![[0.5, -0.25]]);
        p.push("b", array![[1.0], [2.0]]);
        p
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut p = params();
        let before = p.clone();
        let mut opt = OptimizerState::new(&p);
        let cfg = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        opt.apply(&mut p, vec![array![[1.0, 2.0]], array![[3.0], [4.0]]], &cfg)
            .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_bounds_the_sgd_update() {
        let mut p = params();
        let mut opt = OptimizerState::new(&p);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 1.0,
            clip_norm: 0.5,
            ..Default::default()
        };
        let r = opt
            .apply(&mut p, vec![array![[30.0, 40.0]], array![[0.0], [0.0]]], &cfg)
            .unwrap();
        assert_eq!(r.grad_norm, 50.0);
        assert!(r.update_norm <= 0.5 + 1e-6);
    }

    #[test]
    fn optimizer_bytes_round_trip() {
        let mut p = params();
        let mut opt = OptimizerState::new(&p);
        opt.apply(&mut p, vec![array![[0.1, 0.2]], array![[0.3], [0.4]]], &OptimizerConfig::default())
            .unwrap();
        let back = OptimizerState::from_le_bytes(&opt.to_le_bytes(), &p).unwrap();
        assert_eq!(back, opt);
    }
}
