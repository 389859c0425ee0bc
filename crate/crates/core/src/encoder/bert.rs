use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::tokenizer::Encoding;
use crate::error::{Error, Result};
use crate::nn::{derive_seed, dropout, layer_norm, linear, seeded, softmax_last, Init, ParamStore, Rng8};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_position: usize,
    pub type_vocab: usize,
    pub layer_norm_eps: f64,
    pub hidden_dropout: f64,
    pub init_std: f64,
}

impl Default for BertConfig {
    /// `bert-base-uncased` geometry.
    fn default() -> Self {
        Self {
            vocab_size: 30522,
            hidden: 768,
            layers: 12,
            heads: 12,
            intermediate: 3072,
            max_position: 512,
            type_vocab: 2,
            layer_norm_eps: 1e-12,
            hidden_dropout: 0.1,
            init_std: 0.02,
        }
    }
}

impl BertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.max_position < 3 || self.vocab_size == 0 {
            return Err(Error::Config("encoder needs layers, positions and a vocabulary".into()));
        }
        Ok(())
    }
}

/// Parameter names follow the Hugging Face BERT layout, so a
/// `model.safetensors` exported from there loads directly.
pub fn layer_prefix(i: usize) -> String {
    format!("encoder.layer.{i}.")
}

fn param_shapes(cfg: &BertConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (h, f) = (cfg.hidden, cfg.intermediate);
    let w = Init::Normal(cfg.init_std);
    let mut out = vec![
        ("embeddings.word_embeddings.weight".into(), vec![cfg.vocab_size, h], w),
        ("embeddings.position_embeddings.weight".into(), vec![cfg.max_position, h], w),
        ("embeddings.token_type_embeddings.weight".into(), vec![cfg.type_vocab, h], w),
        ("embeddings.LayerNorm.weight".into(), vec![h], Init::Ones),
        ("embeddings.LayerNorm.bias".into(), vec![h], Init::Zeros),
    ];
    for i in 0..cfg.layers {
        let p = layer_prefix(i);
        for (name, shape, init) in [
            ("attention.self.query.weight", vec![h, h], w),
            ("attention.self.query.bias", vec![h], Init::Zeros),
            ("attention.self.key.weight", vec![h, h], w),
            ("attention.self.key.bias", vec![h], Init::Zeros),
            ("attention.self.value.weight", vec![h, h], w),
            ("attention.self.value.bias", vec![h], Init::Zeros),
            ("attention.output.dense.weight", vec![h, h], w),
            ("attention.output.dense.bias", vec![h], Init::Zeros),
            ("attention.output.LayerNorm.weight", vec![h], Init::Ones),
            ("attention.output.LayerNorm.bias", vec![h], Init::Zeros),
            ("intermediate.dense.weight", vec![f, h], w),
            ("intermediate.dense.bias", vec![f], Init::Zeros),
            ("output.dense.weight", vec![h, f], w),
            ("output.dense.bias", vec![h], Init::Zeros),
            ("output.LayerNorm.weight", vec![h], Init::Ones),
            ("output.LayerNorm.bias", vec![h], Init::Zeros),
        ] {
            out.push((format!("{p}{name}"), shape, init));
        }
    }
    out
}

/// Transformer encoder in the BERT layout.
pub struct BertEncoder {
    pub store: ParamStore,
    pub cfg: BertConfig,
}

impl BertEncoder {
    pub fn new(cfg: BertConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(dtype);
        let mut rng = seeded(derive_seed(seed, "bert"));
        for (name, shape, init) in param_shapes(&cfg) {
            store.param(&name, &shape, init, &mut rng)?;
        }
        Ok(Self { store, cfg })
    }

    /// Loads weights from a safetensors file. A `bert.` name prefix and the
    /// old `gamma`/`beta` LayerNorm names are accepted; unrelated tensors
    /// (pooler, heads) are ignored.
    pub fn load(cfg: BertConfig, path: &Path, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        if !path.exists() {
            return Err(Error::CheckpointNotFound(path.to_path_buf()));
        }
        let raw = candle_core::safetensors::load(path, &Device::Cpu)?;
        let mut renamed = std::collections::HashMap::new();
        for (k, t) in raw {
            let k = k.strip_prefix("bert.").unwrap_or(&k).to_string();
            let k = k.replace("LayerNorm.gamma", "LayerNorm.weight").replace("LayerNorm.beta", "LayerNorm.bias");
            renamed.insert(k, t);
        }
        let mut store = ParamStore::new(dtype);
        let mut rng = seeded(0);
        for (name, shape, _) in param_shapes(&cfg) {
            let t = renamed
                .get(&name)
                .ok_or_else(|| Error::SchemaMismatch(format!("{} lacks {name}", path.display())))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::SchemaMismatch(format!(
                    "{name} has shape {:?}, configuration expects {shape:?}",
                    t.dims()
                )));
            }
            store.insert(&name, &t.to_dtype(dtype)?)?;
        }
        // every parameter is present, so this only checks the invariants
        for (name, shape, init) in param_shapes(&cfg) {
            store.param(&name, &shape, init, &mut rng)?;
        }
        Ok(Self { store, cfg })
    }

    fn p(&self, name: &str) -> Result<Tensor> {
        self.store
            .get(name)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| Error::SchemaMismatch(format!("missing encoder parameter {name}")))
    }

    /// Pads a batch of encodings into `(ids, attention mask)` tensors.
    pub fn batch(&self, encodings: &[&Encoding], pad: u32) -> Result<(Tensor, Tensor)> {
        let len = encodings.iter().map(|e| e.ids.len()).max().unwrap_or(1).max(1);
        let mut ids = Vec::with_capacity(encodings.len() * len);
        let mut mask = Vec::with_capacity(encodings.len() * len);
        for e in encodings {
            ids.extend(e.ids.iter().copied());
            mask.extend(std::iter::repeat_n(1.0, e.ids.len()));
            ids.extend(std::iter::repeat_n(pad, len - e.ids.len()));
            mask.extend(std::iter::repeat_n(0.0, len - e.ids.len()));
        }
        let n = encodings.len();
        Ok((
            Tensor::from_vec(ids, (n, len), &Device::Cpu)?,
            Tensor::from_vec(mask, (n, len), &Device::Cpu)?.to_dtype(self.store.dtype())?,
        ))
    }

    pub fn embed(&self, ids: &Tensor, train: bool, rng: &mut Rng8) -> Result<Tensor> {
        let (b, len) = ids.dims2()?;
        if len > self.cfg.max_position {
            return Err(Error::Shape(format!(
                "sequence of {len} exceeds {} positions",
                self.cfg.max_position
            )));
        }
        let words = self
            .p("embeddings.word_embeddings.weight")?
            .embedding(&ids.flatten_all()?)?
            .reshape((b, len, self.cfg.hidden))?;
        let pos = self.p("embeddings.position_embeddings.weight")?.narrow(0, 0, len)?;
        let typ = self.p("embeddings.token_type_embeddings.weight")?.narrow(0, 0, 1)?;
        let x = words.broadcast_add(&pos)?.broadcast_add(&typ)?;
        let x = layer_norm(
            &x,
            &self.p("embeddings.LayerNorm.weight")?,
            &self.p("embeddings.LayerNorm.bias")?,
            self.cfg.layer_norm_eps,
        )?;
        dropout(&x, self.cfg.hidden_dropout, train, rng)
    }

    fn dense(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        linear(x, &self.p(&format!("{name}.weight"))?, Some(&self.p(&format!("{name}.bias"))?))
    }

    fn norm(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        layer_norm(
            x,
            &self.p(&format!("{name}.weight"))?,
            &self.p(&format!("{name}.bias"))?,
            self.cfg.layer_norm_eps,
        )
    }

    /// One transformer block. `mask` is `(batch, len)` with 1 for real tokens.
    pub fn layer(&self, i: usize, x: &Tensor, mask: &Tensor, train: bool, rng: &mut Rng8) -> Result<Tensor> {
        let p = layer_prefix(i);
        let (b, len, h) = x.dims3()?;
        let heads = self.cfg.heads;
        let dh = h / heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, len, heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.dense(x, &format!("{p}attention.self.query"))?)?;
        let k = split(self.dense(x, &format!("{p}attention.self.key"))?)?;
        let v = split(self.dense(x, &format!("{p}attention.self.value"))?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        // -1e4 on padding keys, as in the reference implementation
        let bias = ((mask - 1.0)? * 1e4)?.reshape((b, 1, 1, len))?;
        let probs = softmax_last(&scores.broadcast_add(&bias)?)?;
        let ctx = probs
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, len, h))?;
        let attn = self.dense(&ctx, &format!("{p}attention.output.dense"))?;
        let attn = dropout(&attn, self.cfg.hidden_dropout, train, rng)?;
        let x = self.norm(&(x + attn)?, &format!("{p}attention.output.LayerNorm"))?;
        let ff = self.dense(&x, &format!("{p}intermediate.dense"))?.gelu_erf()?;
        let ff = self.dense(&ff, &format!("{p}output.dense"))?;
        let ff = dropout(&ff, self.cfg.hidden_dropout, train, rng)?;
        self.norm(&(x + ff)?, &format!("{p}output.LayerNorm"))
    }

    /// Runs blocks `from..to` on hidden states `x`.
    pub fn run_layers(
        &self,
        x: Tensor,
        mask: &Tensor,
        from: usize,
        to: usize,
        train: bool,
        rng: &mut Rng8,
    ) -> Result<Tensor> {
        let mut x = x;
        for i in from..to.min(self.cfg.layers) {
            x = self.layer(i, &x, mask, train, rng)?;
        }
        Ok(x)
    }

    /// Last-layer hidden states, `(batch, len, hidden)`.
    pub fn forward(&self, ids: &Tensor, mask: &Tensor, train: bool, rng: &mut Rng8) -> Result<Tensor> {
        let x = self.embed(ids, train, rng)?;
        self.run_layers(x, mask, 0, self.cfg.layers, train, rng)
    }

    /// Names of the parameters in the embedding block and blocks `0..n`.
    pub fn is_lower(name: &str, n: usize) -> bool {
        if name.starts_with("embeddings.") {
            return true;
        }
        name.strip_prefix("encoder.layer.")
            .and_then(|rest| rest.split('.').next())
            .and_then(|i| i.parse::<usize>().ok())
            .is_some_and(|i| i < n)
    }
}

/// Row `i` of `x` (batch, len, hidden) at the given positions.
pub fn gather_rows(x: &Tensor, batch: usize, positions: &[usize]) -> Result<Tensor> {
    let idx = Tensor::from_vec(
        positions.iter().map(|&p| p as u32).collect::<Vec<_>>(),
        positions.len(),
        x.device(),
    )?;
    Ok(x.get(batch)?.index_select(&idx, 0)?)
}

/// The `[CLS]` row of every sequence.
pub fn cls_rows(x: &Tensor) -> Result<Tensor> {
    Ok(x.narrow(1, 0, 1)?.squeeze(1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Tokenizer;

    pub(crate) fn tiny() -> BertConfig {
        BertConfig {
            vocab_size: 64,
            hidden: 16,
            layers: 3,
            heads: 2,
            intermediate: 32,
            max_position: 64,
            ..BertConfig::default()
        }
    }

    #[test]
    fn forward_shape_and_determinism() {
        let bert = BertEncoder::new(tiny(), 3, DType::F32).unwrap();
        let tok = Tokenizer::hashed(64).unwrap();
        let a = tok.encode("the build crash", 200, 64);
        let b = tok.encode("ok", 200, 64);
        let (ids, mask) = bert.batch(&[&a, &b], tok.pad_id()).unwrap();
        let mut rng = seeded(0);
        let out = bert.forward(&ids, &mask, false, &mut rng).unwrap();
        assert_eq!(out.dims(), &[2, 5, 16]);
        let again = bert.forward(&ids, &mask, false, &mut rng).unwrap();
        assert_eq!(
            out.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            again.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn padding_does_not_change_real_tokens() {
        let bert = BertEncoder::new(tiny(), 3, DType::F64).unwrap();
        let tok = Tokenizer::hashed(64).unwrap();
        let a = tok.encode("server error", 200, 64);
        let long = tok.encode("one two three four five six", 200, 64);
        let mut rng = seeded(0);
        let (ids, mask) = bert.batch(&[&a], 0).unwrap();
        let alone = bert.forward(&ids, &mask, false, &mut rng).unwrap();
        let (ids, mask) = bert.batch(&[&a, &long], 0).unwrap();
        let padded = bert.forward(&ids, &mask, false, &mut rng).unwrap();
        let x = alone.get(0).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let y = padded.get(0).unwrap().narrow(0, 0, a.ids.len()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let bert = BertEncoder::new(tiny(), 5, DType::F32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        bert.store.save(&path).unwrap();
        let back = BertEncoder::load(tiny(), &path, DType::F32).unwrap();
        let name = "encoder.layer.2.output.dense.weight";
        assert_eq!(bert.store.values(name).unwrap(), back.store.values(name).unwrap());
        let wrong = BertConfig { hidden: 8, intermediate: 16, ..tiny() };
        assert!(matches!(BertEncoder::load(wrong, &path, DType::F32), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn lower_layer_names() {
        assert!(BertEncoder::is_lower("embeddings.LayerNorm.weight", 9));
        assert!(BertEncoder::is_lower("encoder.layer.8.output.dense.bias", 9));
        assert!(!BertEncoder::is_lower("encoder.layer.9.output.dense.bias", 9));
        assert!(!BertEncoder::is_lower("head.weight", 9));
    }
}
