use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{linear, Init, ParamStore, Rng8};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub kernels: Vec<usize>,
    pub feature_maps: usize,
    pub out_dim: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            kernels: vec![2, 3, 4, 5],
            feature_maps: 100,
            out_dim: 100,
        }
    }
}

/// Sentence CNN over word embeddings: one convolution per kernel size, max
/// pooling over time, ReLU, concatenation and a dense projection. Parameters
/// live in a shared [`ParamStore`] under `prefix`.
#[derive(Debug, Clone)]
pub struct TextCnn {
    pub cfg: CnnConfig,
    pub in_dim: usize,
    pub prefix: String,
}

/// Masking value for windows that run past the end of a shorter sequence.
const NEG: f64 = -1e9;

impl TextCnn {
    pub fn new(cfg: CnnConfig, in_dim: usize, prefix: impl Into<String>) -> Result<Self> {
        if cfg.kernels.is_empty() || cfg.kernels.contains(&0) {
            return Err(Error::Config("TextCNN needs positive kernel sizes".into()));
        }
        Ok(Self {
            cfg,
            in_dim,
            prefix: prefix.into(),
        })
    }

    pub fn max_kernel(&self) -> usize {
        self.cfg.kernels.iter().copied().max().unwrap_or(1)
    }

    pub fn conv_weight(&self, k: usize) -> String {
        format!("{}conv{k}.weight", self.prefix)
    }

    pub fn conv_bias(&self, k: usize) -> String {
        format!("{}conv{k}.bias", self.prefix)
    }

    pub fn dense_weight(&self) -> String {
        format!("{}dense.weight", self.prefix)
    }

    pub fn dense_bias(&self) -> String {
        format!("{}dense.bias", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng8) -> Result<()> {
        let maps = self.cfg.feature_maps;
        for &k in &self.cfg.kernels {
            let fan_in = k * self.in_dim;
            store.param(&self.conv_weight(k), &[maps, fan_in], Init::Uniform((1.0 / fan_in as f64).sqrt()), rng)?;
            store.param(&self.conv_bias(k), &[maps], Init::Zeros, rng)?;
        }
        let pooled = maps * self.cfg.kernels.len();
        let a = (6.0 / (pooled + self.cfg.out_dim) as f64).sqrt();
        store.param(&self.dense_weight(), &[self.cfg.out_dim, pooled], Init::Uniform(a), rng)?;
        store.param(&self.dense_bias(), &[self.cfg.out_dim], Init::Zeros, rng)?;
        Ok(())
    }

    fn get(&self, store: &ParamStore, name: &str) -> Result<Tensor> {
        store
            .get(name)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| Error::SchemaMismatch(format!("missing TextCNN parameter {name}")))
    }

    /// Stacks variable-length `(L_i, in_dim)` sequences into one zero-padded
    /// `(batch, max(L), in_dim)` tensor. Sequences shorter than the largest
    /// kernel are padded up to it; their effective length includes that
    /// padding.
    pub fn pad_batch(&self, seqs: &[Tensor], dtype: DType) -> Result<(Tensor, Vec<usize>)> {
        let kmax = self.max_kernel();
        let mut lens = Vec::with_capacity(seqs.len());
        for s in seqs {
            let (l, d) = s.dims2()?;
            if d != self.in_dim {
                return Err(Error::Shape(format!(
                    "word embeddings have width {d}, encoder expects {}",
                    self.in_dim
                )));
            }
            if l == 0 {
                return Err(Error::Shape("empty word embedding sequence".into()));
            }
            lens.push(l.max(kmax));
        }
        let width = lens.iter().copied().max().unwrap_or(kmax);
        let rows = seqs
            .iter()
            .map(|s| {
                let l = s.dim(0)?;
                let s = s.to_dtype(dtype)?;
                if l == width {
                    Ok(s)
                } else {
                    let pad = Tensor::zeros((width - l, self.in_dim), dtype, s.device())?;
                    Ok(Tensor::cat(&[s, pad], 0)?)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((Tensor::stack(&rows, 0)?, lens))
    }

    /// ReLU of max-pooled convolution features, `(batch, maps · kernels)`.
    pub fn pooled(&self, store: &ParamStore, x: &Tensor, lens: &[usize]) -> Result<Tensor> {
        let (b, width, d) = x.dims3()?;
        let mut blocks = Vec::with_capacity(self.cfg.kernels.len());
        for &k in &self.cfg.kernels {
            let positions = width + 1 - k;
            // unfold: window o covers rows o..o+k, flattened row-major
            let parts = (0..k)
                .map(|o| x.narrow(1, o, positions))
                .collect::<candle_core::Result<Vec<_>>>()?;
            let windows = Tensor::cat(&parts, 2)?.reshape((b * positions, k * d))?;
            let conv = linear(&windows, &self.get(store, &self.conv_weight(k))?, Some(&self.get(store, &self.conv_bias(k))?))?
                .reshape((b, positions, self.cfg.feature_maps))?;
            let mask: Vec<f64> = lens
                .iter()
                .flat_map(|&l| (0..positions).map(move |p| if p + k <= l { 0.0 } else { NEG }))
                .collect();
            let mask = Tensor::from_vec(mask, (b, positions, 1), x.device())?.to_dtype(x.dtype())?;
            let pooled = conv.broadcast_add(&mask)?.max(1)?;
            blocks.push(pooled.relu()?);
        }
        Ok(Tensor::cat(&blocks, D::Minus1)?)
    }

    /// Utterance vectors `(batch, out_dim)` for a batch of word-embedding
    /// sequences.
    pub fn forward(&self, store: &ParamStore, seqs: &[Tensor]) -> Result<Tensor> {
        let (x, lens) = self.pad_batch(seqs, store.dtype())?;
        let pooled = self.pooled(store, &x, &lens)?;
        linear(&pooled, &self.get(store, &self.dense_weight())?, Some(&self.get(store, &self.dense_bias())?))
    }
}
