//! Contextual word embeddings from a BERT-style encoder and utterance
//! vectors from a convolutional sentence encoder over them.

mod bert;
mod textcnn;
mod tokenizer;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::nn::{seeded, to_f64_vec, ParamStore};

pub use bert::{cls_rows, gather_rows, layer_prefix, BertConfig, BertEncoder};
pub use textcnn::{CnnConfig, TextCnn};
pub use tokenizer::{Encoding, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Free-form name of the pretrained encoder, recorded in manifests.
    pub identifier: String,
    /// Pretrained weights (safetensors). Without them the encoder starts from
    /// a seeded random initialization.
    pub weights: Option<PathBuf>,
    /// WordPiece `vocab.txt`; a hashed vocabulary is used without it.
    pub vocab: Option<PathBuf>,
    pub bert: BertConfig,
    /// Words kept per utterance or sentence.
    pub max_words: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            identifier: "bert-base-uncased".into(),
            weights: None,
            vocab: None,
            bert: BertConfig::default(),
            max_words: 200,
        }
    }
}

/// Tokenizer plus transformer, used frozen for word embeddings and as the
/// backbone of the sentence classifier.
pub struct WordEncoder {
    pub tokenizer: Tokenizer,
    pub bert: BertEncoder,
    pub max_words: usize,
}

impl WordEncoder {
    pub fn from_config(cfg: &EncoderConfig, seed: u64, dtype: DType) -> Result<Self> {
        let tokenizer = match &cfg.vocab {
            Some(path) => Tokenizer::from_vocab_file(path)?,
            None => Tokenizer::hashed(cfg.bert.vocab_size)?,
        };
        if tokenizer.vocab_size() > cfg.bert.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but the encoder embeds {}",
                tokenizer.vocab_size(),
                cfg.bert.vocab_size
            )));
        }
        let bert = match &cfg.weights {
            Some(path) => BertEncoder::load(cfg.bert.clone(), path, dtype)?,
            None => BertEncoder::new(cfg.bert.clone(), seed, dtype)?,
        };
        Ok(Self {
            tokenizer,
            bert,
            max_words: cfg.max_words,
        })
    }

    pub fn dim(&self) -> usize {
        self.bert.cfg.hidden
    }

    pub fn encode(&self, text: &str) -> Encoding {
        self.tokenizer.encode(text, self.max_words, self.bert.cfg.max_position)
    }

    /// Word-level embeddings for several texts, `(L_i, dim)` each. A word is
    /// represented by its first subword piece; a text without words yields
    /// one zero row.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Tensor>> {
        const CHUNK: usize = 16;
        let encodings: Vec<Encoding> = texts.iter().map(|t| self.encode(t)).collect();
        let mut out = Vec::with_capacity(texts.len());
        let mut rng = seeded(0);
        for chunk in encodings.chunks(CHUNK) {
            let refs: Vec<&Encoding> = chunk.iter().collect();
            let (ids, mask) = self.bert.batch(&refs, self.tokenizer.pad_id())?;
            let hidden = self.bert.forward(&ids, &mask, false, &mut rng)?;
            for (i, e) in chunk.iter().enumerate() {
                if e.word_starts.is_empty() {
                    out.push(Tensor::zeros((1, self.dim()), self.bert.store.dtype(), &Device::Cpu)?);
                } else {
                    out.push(gather_rows(&hidden, i, &e.word_starts)?);
                }
            }
        }
        Ok(out)
    }
}

/// `L × dim` contextual embeddings of the utterance's normalized words.
pub fn embed_words(u: &Utterance, encoder: &WordEncoder) -> Result<Tensor> {
    Ok(encoder.embed_texts(&[&u.text])?.remove(0))
}

/// The utterance vector for one word-embedding sequence.
pub fn encode_utterance(seq: &Tensor, cnn: &TextCnn, store: &ParamStore) -> Result<Vec<f64>> {
    to_f64_vec(&cnn.forward(store, std::slice::from_ref(seq))?)
}

/// Named tensors persisted as one safetensors file, e.g. utterance vectors
/// keyed by utterance id.
#[derive(Debug, Clone, Default)]
pub struct TensorCache {
    pub entries: BTreeMap<String, Tensor>,
}

impl TensorCache {
    pub fn insert(&mut self, key: impl Into<String>, t: Tensor) {
        self.entries.insert(key.into(), t);
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.get(key)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: std::collections::HashMap<String, Tensor> =
            self.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::CheckpointNotFound(path.to_path_buf()));
        }
        Ok(Self {
            entries: candle_core::safetensors::load(path, &Device::Cpu)?.into_iter().collect(),
        })
    }
}
