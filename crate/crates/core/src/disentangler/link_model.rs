use std::path::Path;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{derive_seed, from_rows, linear, seeded, to_f64_vec, Init, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Sampled non-links per gold link.
    pub negatives_per_positive: usize,
}

impl Default for LinkTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            negatives_per_positive: 5,
        }
    }
}

/// Feed-forward reply scorer: two softsign hidden layers and a sigmoid output.
pub struct LinkModel {
    pub(crate) store: ParamStore,
    input_dim: usize,
    hidden: usize,
}

fn softsign(x: &Tensor) -> Result<Tensor> {
    Ok((x / (x.abs()? + 1.0)?)?)
}

/// Numerically stable binary cross-entropy on logits.
fn bce_with_logits(z: &Tensor, y: &Tensor) -> Result<Tensor> {
    let loss = ((z.relu()? - (z * y)?)? + (z.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    Ok(loss.mean_all()?)
}

impl LinkModel {
    pub fn new(input_dim: usize, hidden: usize, seed: u64, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let mut rng = seeded(derive_seed(seed, "link"));
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (2 * hidden) as f64).sqrt();
        let a3 = (6.0 / (hidden + 1) as f64).sqrt();
        store.param("link.fc1.weight", &[hidden, input_dim], Init::Uniform(a1), &mut rng)?;
        store.param("link.fc1.bias", &[hidden], Init::Zeros, &mut rng)?;
        store.param("link.fc2.weight", &[hidden, hidden], Init::Uniform(a2), &mut rng)?;
        store.param("link.fc2.bias", &[hidden], Init::Zeros, &mut rng)?;
        store.param("link.out.weight", &[1, hidden], Init::Uniform(a3), &mut rng)?;
        store.param("link.out.bias", &[1], Init::Zeros, &mut rng)?;
        Ok(Self {
            store,
            input_dim,
            hidden,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn p(&self, name: &str) -> Tensor {
        self.store
            .get(name)
            .expect("link parameters are created in new()")
            .as_tensor()
            .clone()
    }

    /// Logits for a `(batch, input_dim)` feature matrix.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        if x.dim(1)? != self.input_dim {
            return Err(Error::Shape(format!(
                "link features have width {}, model expects {}",
                x.dim(1)?,
                self.input_dim
            )));
        }
        let h = softsign(&linear(x, &self.p("link.fc1.weight"), Some(&self.p("link.fc1.bias")))?)?;
        let h = softsign(&linear(&h, &self.p("link.fc2.weight"), Some(&self.p("link.fc2.bias")))?)?;
        Ok(linear(&h, &self.p("link.out.weight"), Some(&self.p("link.out.bias")))?.squeeze(1)?)
    }

    /// Reply probabilities for a batch of feature vectors.
    pub fn score_batch(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(bad) = features.iter().find(|f| f.len() != self.input_dim) {
            return Err(Error::Shape(format!(
                "link features have width {}, model expects {}",
                bad.len(),
                self.input_dim
            )));
        }
        let x = from_rows(features, self.store.dtype())?;
        to_f64_vec(&candle_nn::ops::sigmoid(&self.logits(&x)?)?)
    }

    /// Fits the scorer with binary cross-entropy.
    pub fn fit(&mut self, features: &[Vec<f64>], labels: &[bool], cfg: &LinkTrainConfig, seed: u64) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Err(Error::EmptyDataset("no link training pairs".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Shape("features and labels differ in length".into()));
        }
        let mut opt = AdamW::new(
            self.store.all_vars(),
            ParamsAdamW {
                lr: cfg.learning_rate,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let mut rng = seeded(derive_seed(seed, "link.shuffle"));
        let mut order: Vec<usize> = (0..features.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| features[i].clone()).collect();
                let x = from_rows(&rows, self.store.dtype())?;
                let y: Vec<f64> = chunk.iter().map(|&i| f64::from(u8::from(labels[i]))).collect();
                let y = Tensor::from_vec(y, chunk.len(), x.device())?.to_dtype(self.store.dtype())?;
                let loss = bce_with_logits(&self.logits(&x)?, &y)?;
                opt.backward_step(&loss)?;
                total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
            }
            history.push(total / features.len() as f64);
        }
        Ok(history)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let store = ParamStore::load(path, dtype)?;
        let w = store
            .get("link.fc1.weight")
            .ok_or_else(|| Error::SchemaMismatch("checkpoint lacks link.fc1.weight".into()))?;
        let (hidden, input_dim) = w.as_tensor().dims2()?;
        for name in ["link.fc1.bias", "link.fc2.weight", "link.fc2.bias", "link.out.weight", "link.out.bias"] {
            if store.get(name).is_none() {
                return Err(Error::SchemaMismatch(format!("checkpoint lacks {name}")));
            }
        }
        Ok(Self {
            store,
            input_dim,
            hidden,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_pairs_are_learned() {
        // twenty pairs where one feature (same author) decides the label
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let y = i % 2 == 0;
            let noise = (i as f64 * 0.37).sin() * 0.1;
            feats.push(vec![noise, 0.5 - noise, if y { 1.0 } else { 0.0 }, (i as f64 * 0.11).cos()]);
            labels.push(y);
        }
        let mut m = LinkModel::new(4, 32, 1, DType::F32).unwrap();
        let cfg = LinkTrainConfig {
            epochs: 200,
            batch_size: 20,
            learning_rate: 1e-2,
            ..LinkTrainConfig::default()
        };
        let hist = m.fit(&feats, &labels, &cfg, 1).unwrap();
        assert!(hist.last().unwrap() < hist.first().unwrap());
        let scores = m.score_batch(&feats).unwrap();
        let correct = scores.iter().zip(&labels).filter(|(s, &y)| (**s > 0.5) == y).count();
        assert!(correct as f64 / 20.0 >= 0.9, "{correct}/20");
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let m = LinkModel::new(4, 8, 0, DType::F32).unwrap();
        assert!(matches!(m.score_batch(&[vec![0.0; 3]]), Err(Error::Shape(_))));
    }

    #[test]
    fn bce_matches_closed_form() {
        let z = Tensor::new(&[2.0f64, -1.0, 0.0], &candle_core::Device::Cpu).unwrap();
        let y = Tensor::new(&[1.0f64, 0.0, 1.0], &candle_core::Device::Cpu).unwrap();
        let got = bce_with_logits(&z, &y).unwrap().to_scalar::<f64>().unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let want = -((sig(2.0)).ln() + (1.0 - sig(-1.0)).ln() + sig(0.0).ln()) / 3.0;
        assert!((got - want).abs() < 1e-12);
    }
}
