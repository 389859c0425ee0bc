//! Sentence classifier: a BERT-style encoder with a 4-way head on the
//! `[CLS]` state, fine-tuned twice (external bug reports, then chat
//! sentences) with the lower blocks frozen.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Sentence;
use crate::corpus::{LabeledSentence, SentenceLabel};
use crate::encoder::{cls_rows, BertEncoder, EncoderConfig, Encoding, Tokenizer, WordEncoder};
use crate::error::{Error, Result};
use crate::nn::{
    clip_grad_norm, cross_entropy, derive_seed, dropout, linear, seeded, softmax_last, to_f64_rows, Init,
    ParamStore, Rng8,
};

const HEAD_W: &str = "classifier.weight";
const HEAD_B: &str = "classifier.bias";
const CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Share of all optimizer steps spent warming the learning rate up.
    pub warmup_proportion: f64,
    pub grad_clip: f64,
}

impl StageConfig {
    pub fn stage1() -> Self {
        Self {
            epochs: 13,
            batch_size: 64,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            warmup_proportion: 0.1,
            grad_clip: 1.0,
        }
    }

    pub fn stage2() -> Self {
        Self {
            epochs: 70,
            batch_size: 8,
            learning_rate: 1e-6,
            ..Self::stage1()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::Config("stage needs epochs, a batch size and a positive learning rate".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_proportion) || self.grad_clip <= 0.0 {
            return Err(Error::Config("warmup must lie in [0, 1) and the clip norm be positive".into()));
        }
        Ok(())
    }

    /// Linear warmup then linear decay to zero; `step` counts from 1.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warm = (self.warmup_proportion * total as f64).ceil() as usize;
        if step <= warm {
            self.learning_rate * step as f64 / warm as f64
        } else {
            self.learning_rate * (total - step + 1) as f64 / (total - warm) as f64
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrsConfig {
    /// Transformer blocks kept frozen (with the embeddings) in both stages.
    pub frozen_layers: usize,
    /// Share of each stage's data held out to pick the best epoch.
    pub validation_fraction: f64,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

impl Default for BrsConfig {
    fn default() -> Self {
        Self {
            frozen_layers: 9,
            validation_fraction: 0.1,
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
        }
    }
}

impl BrsConfig {
    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.frozen_layers >= layers {
            return Err(Error::Config(format!(
                "{} frozen blocks leave nothing to train in a {layers}-block encoder",
                self.frozen_layers
            )));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 0.5)".into()));
        }
        self.stage1.validate()?;
        self.stage2.validate()
    }
}

/// Words, numbers, placeholders and single punctuation marks, lowercased and
/// space-separated for the tokenizer.
fn tokenizer_text(text: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\[[A-Z]+\]|[\p{L}\p{N}_]+|[^\s\p{L}\p{N}_]").unwrap());
    re.find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

pub struct BrsModel {
    pub tokenizer: Tokenizer,
    pub bert: BertEncoder,
    pub head: ParamStore,
    pub frozen_layers: usize,
    pub max_words: usize,
}

impl BrsModel {
    /// Puts a fresh, seeded 4-way head on top of `encoder`.
    pub fn new(encoder: WordEncoder, frozen_layers: usize, seed: u64) -> Result<Self> {
        let mut model = Self {
            tokenizer: encoder.tokenizer,
            bert: encoder.bert,
            head: ParamStore::new(DType::F32),
            frozen_layers,
            max_words: encoder.max_words,
        };
        model.reset_head(derive_seed(seed, "brs.head"))?;
        Ok(model)
    }

    pub fn reset_head(&mut self, seed: u64) -> Result<()> {
        let h = self.bert.cfg.hidden;
        let std = self.bert.cfg.init_std;
        let mut head = ParamStore::new(self.bert.store.dtype());
        let mut rng = seeded(seed);
        head.param(HEAD_W, &[CLASSES, h], Init::Normal(std), &mut rng)?;
        head.param(HEAD_B, &[CLASSES], Init::Zeros, &mut rng)?;
        self.head = head;
        Ok(())
    }

    fn head_param(&self, name: &str) -> Tensor {
        self.head.get(name).expect("head parameters exist").as_tensor().clone()
    }

    fn encode(&self, text: &str) -> Encoding {
        self.tokenizer
            .encode(&tokenizer_text(text), self.max_words, self.bert.cfg.max_position)
    }

    /// Hidden states after the frozen blocks, one `(len, hidden)` tensor per
    /// text. These never change during fine-tuning, so they are computed once.
    fn lower_states(&self, texts: &[&str]) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(texts.len());
        let mut rng = seeded(0);
        for chunk in texts.chunks(16) {
            let encodings: Vec<Encoding> = chunk.iter().map(|t| self.encode(t)).collect();
            let refs: Vec<&Encoding> = encodings.iter().collect();
            let (ids, mask) = self.bert.batch(&refs, self.tokenizer.pad_id())?;
            let x = self.bert.embed(&ids, false, &mut rng)?;
            let x = self.bert.run_layers(x, &mask, 0, self.frozen_layers, false, &mut rng)?;
            for (i, e) in encodings.iter().enumerate() {
                out.push(x.get(i)?.narrow(0, 0, e.ids.len())?.detach());
            }
        }
        Ok(out)
    }

    /// Logits for a batch of cached lower states.
    fn upper_logits(&self, states: &[&Tensor], train: bool, rng: &mut Rng8) -> Result<Tensor> {
        let dtype = self.bert.store.dtype();
        let h = self.bert.cfg.hidden;
        let len = states.iter().map(|s| s.dim(0)).collect::<candle_core::Result<Vec<_>>>()?;
        let width = len.iter().copied().max().unwrap_or(1);
        let mut rows = Vec::with_capacity(states.len());
        let mut mask = Vec::with_capacity(states.len() * width);
        for (s, &l) in states.iter().zip(&len) {
            rows.push(if l == width {
                (*s).clone()
            } else {
                Tensor::cat(&[(*s).clone(), Tensor::zeros((width - l, h), dtype, &Device::Cpu)?], 0)?
            });
            mask.extend((0..width).map(|j| if j < l { 1.0f64 } else { 0.0 }));
        }
        let x = Tensor::stack(&rows, 0)?;
        let mask = Tensor::from_vec(mask, (states.len(), width), &Device::Cpu)?.to_dtype(dtype)?;
        let x = self
            .bert
            .run_layers(x, &mask, self.frozen_layers, self.bert.cfg.layers, train, rng)?;
        let cls = dropout(&cls_rows(&x)?, self.bert.cfg.hidden_dropout, train, rng)?;
        linear(&cls, &self.head_param(HEAD_W), Some(&self.head_param(HEAD_B)))
    }

    fn probabilities(&self, states: &[Tensor]) -> Result<Vec<[f64; 4]>> {
        let mut out = Vec::with_capacity(states.len());
        let mut rng = seeded(0);
        for chunk in states.chunks(32) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let p = softmax_last(&self.upper_logits(&refs, false, &mut rng)?)?;
            out.extend(to_f64_rows(&p)?.into_iter().map(|r| [r[0], r[1], r[2], r[3]]));
        }
        Ok(out)
    }

    fn trainable(&self) -> Vec<(String, Var)> {
        let n = self.frozen_layers;
        let mut out: Vec<(String, Var)> = self
            .bert
            .store
            .names()
            .filter(|name| !BertEncoder::is_lower(name, n))
            .map(|name| (name.to_string(), self.bert.store.get(name).expect("listed").clone()))
            .collect();
        out.extend(
            self.head
                .names()
                .map(|name| (name.to_string(), self.head.get(name).expect("listed").clone())),
        );
        out
    }

    fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.trainable().iter().map(|(_, v)| Ok(v.as_tensor().copy()?)).collect()
    }

    fn restore(&self, snap: &[Tensor]) -> Result<()> {
        for ((_, v), t) in self.trainable().iter().zip(snap) {
            v.set(t)?;
        }
        Ok(())
    }

    /// Encoder and head in one safetensors file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut all: HashMap<String, Tensor> = HashMap::new();
        for store in [&self.bert.store, &self.head] {
            for name in store.names() {
                all.insert(name.to_string(), store.get(name).expect("listed").as_tensor().clone());
            }
        }
        candle_core::safetensors::save(&all, path)?;
        Ok(())
    }

    pub fn load(enc: &EncoderConfig, frozen_layers: usize, path: &Path, dtype: DType) -> Result<Self> {
        let tokenizer = match &enc.vocab {
            Some(v) => Tokenizer::from_vocab_file(v)?,
            None => Tokenizer::hashed(enc.bert.vocab_size)?,
        };
        let bert = BertEncoder::load(enc.bert.clone(), path, dtype)?;
        let all = ParamStore::load(path, dtype)?;
        let mut head = ParamStore::new(dtype);
        for (name, shape) in [(HEAD_W, vec![CLASSES, enc.bert.hidden]), (HEAD_B, vec![CLASSES])] {
            let v = all
                .get(name)
                .ok_or_else(|| Error::SchemaMismatch(format!("{} has no {name}", path.display())))?;
            if v.dims() != shape.as_slice() {
                return Err(Error::SchemaMismatch(format!("{name} has shape {:?}", v.dims())));
            }
            head.insert(name, v.as_tensor())?;
        }
        Ok(Self {
            tokenizer,
            bert,
            head,
            frozen_layers,
            max_words: enc.max_words,
        })
    }
}

fn argmax(p: &[f64; 4]) -> SentenceLabel {
    let mut best = 0;
    for i in 1..CLASSES {
        if p[i] > p[best] {
            best = i;
        }
    }
    SentenceLabel::ALL[best]
}

/// Label and `(P_OB, P_EB, P_SR, P_OTHER)` for each text.
pub fn classify_texts(model: &BrsModel, texts: &[&str]) -> Result<Vec<(SentenceLabel, [f64; 4])>> {
    let states = model.lower_states(texts)?;
    Ok(model.probabilities(&states)?.into_iter().map(|p| (argmax(&p), p)).collect())
}

pub fn classify_sentence(model: &BrsModel, s: &Sentence) -> Result<(SentenceLabel, [f64; 4])> {
    Ok(classify_texts(model, &[&s.text])?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub history: Vec<StageEpoch>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub train_size: usize,
    pub valid_size: usize,
}

/// Holds out whole source groups (a sentence and its augmented variants)
/// until at least `fraction` of the data is set aside.
fn holdout(data: &[LabeledSentence], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        groups.entry(s.source()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    let want = (fraction * data.len() as f64).ceil() as usize;
    if want == 0 || groups.len() < 2 {
        return ((0..data.len()).collect(), Vec::new());
    }
    groups.shuffle(&mut seeded(seed));
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    // the first group always trains, so neither side ends up empty
    for (i, g) in groups.into_iter().enumerate() {
        if i > 0 && valid.len() < want {
            valid.extend(g);
        } else {
            train.extend(g);
        }
    }
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

fn mean_loss(model: &BrsModel, states: &[Tensor], targets: &[usize], idx: &[usize]) -> Result<f64> {
    let mut rng = seeded(0);
    let mut total = 0.0;
    for chunk in idx.chunks(64) {
        let batch: Vec<&Tensor> = chunk.iter().map(|&i| &states[i]).collect();
        let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
        let loss = cross_entropy(&model.upper_logits(&batch, false, &mut rng)?, &t)?;
        total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

fn fine_tune(
    model: &BrsModel,
    data: &[LabeledSentence],
    stage: &StageConfig,
    fraction: f64,
    seed: u64,
    name: &str,
) -> Result<StageOutcome> {
    stage.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("no sentences for {name}")));
    }
    let texts: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
    let targets: Vec<usize> = data.iter().map(|s| s.label.index()).collect();
    let states = model.lower_states(&texts)?;
    let (train, valid) = holdout(data, fraction, derive_seed(seed, &format!("{name}.holdout")));
    let selection = if valid.is_empty() { &train } else { &valid };

    let params = model.trainable();
    let (decay, plain): (Vec<_>, Vec<_>) = params
        .iter()
        .partition(|(n, _)| !n.ends_with(".bias") && !n.contains("LayerNorm"));
    let all_vars: Vec<Var> = params.iter().map(|(_, v)| v.clone()).collect();
    let mk = |vars: Vec<&(String, Var)>, wd: f64| {
        AdamW::new(
            vars.into_iter().map(|(_, v)| v.clone()).collect(),
            ParamsAdamW {
                lr: stage.learning_rate,
                weight_decay: wd,
                ..Default::default()
            },
        )
    };
    let mut opt_decay = mk(decay, stage.weight_decay)?;
    let mut opt_plain = mk(plain, 0.0)?;

    let steps_per_epoch = train.len().div_ceil(stage.batch_size);
    let total_steps = steps_per_epoch * stage.epochs;
    let mut order_rng = seeded(derive_seed(seed, &format!("{name}.order")));
    let mut drop_rng = seeded(derive_seed(seed, &format!("{name}.dropout")));
    let mut order = train.clone();
    let mut step = 0;
    let mut history = Vec::new();
    let mut best = (mean_loss(model, &states, &targets, selection)?, 0usize, model.snapshot()?);
    for epoch in 1..=stage.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(stage.batch_size) {
            step += 1;
            let lr = stage.lr_at(step, total_steps);
            opt_decay.set_learning_rate(lr);
            opt_plain.set_learning_rate(lr);
            let batch: Vec<&Tensor> = chunk.iter().map(|&i| &states[i]).collect();
            let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let loss = cross_entropy(&model.upper_logits(&batch, true, &mut drop_rng)?, &t)?;
            let mut grads = loss.backward()?;
            clip_grad_norm(&mut grads, &all_vars, stage.grad_clip)?;
            opt_decay.step(&grads)?;
            opt_plain.step(&grads)?;
            total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
        }
        let valid_loss = mean_loss(model, &states, &targets, selection)?;
        tracing::debug!(stage = name, epoch, valid_loss, "brs epoch");
        history.push(StageEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            valid_loss,
        });
        if valid_loss < best.0 {
            best = (valid_loss, epoch, model.snapshot()?);
        }
    }
    model.restore(&best.2)?;
    Ok(StageOutcome {
        history,
        best_epoch: best.1,
        best_valid_loss: best.0,
        train_size: train.len(),
        valid_size: valid.len(),
    })
}

/// Adapts the encoder to bug-report sentences. Embeddings and the lower
/// `frozen_layers` blocks stay untouched.
pub fn fine_tune_stage1(
    encoder: WordEncoder,
    external: &[LabeledSentence],
    cfg: &BrsConfig,
    seed: u64,
) -> Result<(BrsModel, StageOutcome)> {
    cfg.validate(encoder.bert.cfg.layers)?;
    let model = BrsModel::new(encoder, cfg.frozen_layers, seed)?;
    let outcome = fine_tune(&model, external, &cfg.stage1, cfg.validation_fraction, seed, "brs.stage1")?;
    Ok((model, outcome))
}

/// Replaces the head with a fresh one and adapts to chat sentences.
pub fn fine_tune_stage2(
    mut model: BrsModel,
    sentences: &[LabeledSentence],
    cfg: &BrsConfig,
    seed: u64,
) -> Result<(BrsModel, StageOutcome)> {
    cfg.validate(model.bert.cfg.layers)?;
    model.frozen_layers = cfg.frozen_layers;
    model.reset_head(derive_seed(seed, "brs.head.stage2"))?;
    let outcome = fine_tune(&model, sentences, &cfg.stage2, cfg.validation_fraction, seed, "brs.stage2")?;
    Ok((model, outcome))
}

/// Share of `data` whose argmax label matches.
pub fn accuracy(model: &BrsModel, data: &[LabeledSentence]) -> Result<f64> {
    let texts: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
    let preds = classify_texts(model, &texts)?;
    let hits = preds.iter().zip(data).filter(|((l, _), s)| *l == s.label).count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BertConfig;

    fn mini_encoder(seed: u64) -> WordEncoder {
        let cfg = EncoderConfig {
            bert: BertConfig {
                vocab_size: 128,
                hidden: 16,
                layers: 4,
                heads: 2,
                intermediate: 32,
                max_position: 64,
                ..BertConfig::default()
            },
            ..EncoderConfig::default()
        };
        WordEncoder::from_config(&cfg, seed, DType::F32).unwrap()
    }

    fn cfg() -> BrsConfig {
        BrsConfig {
            frozen_layers: 2,
            ..BrsConfig::default()
        }
    }

    fn sentences() -> Vec<LabeledSentence> {
        let text = [
            (SentenceLabel::Observed, "the window crashes"),
            (SentenceLabel::Expected, "it should save"),
            (SentenceLabel::Steps, "click the button"),
            (SentenceLabel::Other, "i use linux"),
        ];
        (0..12)
            .map(|i| {
                let (label, t) = text[i % 4];
                LabeledSentence {
                    id: format!("s{i}"),
                    text: t.into(),
                    label,
                    augmented_from: None,
                }
            })
            .collect()
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = StageConfig { learning_rate: 1.0, warmup_proportion: 0.1, ..StageConfig::stage1() };
        assert!((s.lr_at(1, 100) - 0.1).abs() < 1e-12);
        assert!((s.lr_at(10, 100) - 1.0).abs() < 1e-12);
        assert!(s.lr_at(50, 100) < 1.0 && s.lr_at(50, 100) > s.lr_at(90, 100));
        assert!(s.lr_at(100, 100) > 0.0);
    }

    #[test]
    fn tokenizer_text_separates_punctuation() {
        assert_eq!(tokenizer_text("It crashes, see [CODE]!"), "it crashes , see [code] !");
    }

    #[test]
    fn fresh_head_is_near_uniform_and_deterministic() {
        let m = BrsModel::new(mini_encoder(1), 2, 1).unwrap();
        let out = classify_texts(&m, &["the app crashes on save", "the app crashes on save", ""]).unwrap();
        for (_, p) in &out {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|&x| x > 0.15 && x < 0.45), "{p:?}");
        }
        assert_eq!(out[0], out[1]);
        let data = sentences();
        let texts: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
        let states = m.lower_states(&texts).unwrap();
        let targets: Vec<usize> = data.iter().map(|s| s.label.index()).collect();
        let idx: Vec<usize> = (0..data.len()).collect();
        let loss = mean_loss(&m, &states, &targets, &idx).unwrap();
        assert!((loss - 4f64.ln()).abs() < 0.05, "{loss}");
    }

    #[test]
    fn frozen_blocks_do_not_move_and_upper_ones_do() {
        let stage = StageConfig { epochs: 3, batch_size: 4, learning_rate: 1e-2, ..StageConfig::stage1() };
        let c = BrsConfig { stage1: stage, ..cfg() };
        let enc = mini_encoder(2);
        let before: Vec<(String, Vec<f64>)> = enc
            .bert
            .store
            .names()
            .map(|n| (n.to_string(), enc.bert.store.values(n).unwrap()))
            .collect();
        let (m, outcome) = fine_tune_stage1(enc, &sentences(), &c, 2).unwrap();
        assert_eq!(outcome.history.len(), 3);
        let mut moved = 0;
        for (n, v) in &before {
            let after = m.bert.store.values(n).unwrap();
            if BertEncoder::is_lower(n, 2) {
                assert_eq!(&after, v, "{n}");
            } else if &after != v {
                moved += 1;
            }
        }
        assert!(moved > 0 || outcome.best_epoch == 0);
    }

    #[test]
    fn stage_two_replaces_the_head() {
        let stage = StageConfig { epochs: 1, batch_size: 4, learning_rate: 1e-3, ..StageConfig::stage1() };
        let c = BrsConfig { stage1: stage.clone(), stage2: stage, ..cfg() };
        let (m, _) = fine_tune_stage1(mini_encoder(3), &sentences(), &c, 3).unwrap();
        let head1 = m.head.values(HEAD_W).unwrap();
        let (m, _) = fine_tune_stage2(m, &sentences(), &c, 3).unwrap();
        assert_ne!(m.head.values(HEAD_W).unwrap(), head1);
    }

    #[test]
    fn holdout_keeps_groups_together() {
        let mut data = sentences();
        data.push(LabeledSentence {
            id: "s0#eda1".into(),
            text: "the window crash".into(),
            label: SentenceLabel::Observed,
            augmented_from: Some("s0".into()),
        });
        let (train, valid) = holdout(&data, 0.25, 9);
        assert_eq!(train.len() + valid.len(), data.len());
        assert!(valid.len() >= 4 && !train.is_empty());
        let side = |i: usize| valid.contains(&i);
        assert_eq!(side(0), side(12));
        assert_eq!(holdout(&data, 0.0, 9).1, Vec::<usize>::new());
    }

    #[test]
    fn checkpoint_round_trip() {
        let enc_cfg = EncoderConfig {
            bert: mini_encoder(0).bert.cfg.clone(),
            ..EncoderConfig::default()
        };
        let m = BrsModel::new(WordEncoder::from_config(&enc_cfg, 4, DType::F32).unwrap(), 2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("brs.safetensors");
        m.save(&path).unwrap();
        let back = BrsModel::load(&enc_cfg, 2, &path, DType::F32).unwrap();
        let a = classify_texts(&m, &["it breaks"]).unwrap();
        assert_eq!(a, classify_texts(&back, &["it breaks"]).unwrap());
        assert!(matches!(
            BrsModel::load(&enc_cfg, 2, &dir.path().join("none"), DType::F32),
            Err(Error::CheckpointNotFound(_))
        ));
    }

    #[test]
    fn frozen_count_must_leave_trainable_blocks() {
        assert!(cfg().validate(2).is_err());
        assert!(cfg().validate(4).is_ok());
    }
}
