//! Bug-report dialog identification: utterance vectors from a TextCNN, a
//! similarity-weighted graph layer, a relation-typed graph layer, sum/max
//! pooling and a two-layer classifier trained with focal loss.

mod layers;

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, DialogLabel};
use crate::dialog_graph::{topology, EdgeType};
use crate::encoder::{CnnConfig, TextCnn, WordEncoder};
use crate::error::{Error, Result};
use crate::eval_harness::compute_metrics;
use crate::nn::{derive_seed, dropout, linear, seeded, to_f64_rows, Init, ParamStore, Rng8};

pub use layers::{
    classifier_logits, combine, dialog_embedding, edge_weights, focal_loss, probabilities, role_layer, structure_layer,
    BatchTopology,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BriConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub l2_lambda: f64,
    /// Class weights in `[NBR, BR]` order.
    pub focal_alpha: [f64; 2],
    pub focal_gamma: f64,
    pub max_epochs: usize,
    /// Epochs without a validation F1 improvement before stopping.
    pub patience: usize,
    pub hidden: usize,
    /// Share of the training dialogs held out for model selection.
    pub validation_fraction: f64,
    pub cnn: CnnConfig,
}

impl Default for BriConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-4,
            dropout: 0.5,
            l2_lambda: 1e-5,
            focal_alpha: [1.0, 1.0],
            focal_gamma: 2.0,
            max_epochs: 100,
            patience: 10,
            hidden: 64,
            validation_fraction: 0.1,
            cnn: CnnConfig::default(),
        }
    }
}

impl BriConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.learning_rate <= 0.0 || self.hidden == 0 || self.max_epochs == 0 {
            return Err(Error::Config("BRI batch size, learning rate, hidden width and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.focal_gamma < 0.0 || self.l2_lambda < 0.0 {
            return Err(Error::Config("BRI dropout must be in [0, 1), gamma and lambda non-negative".into()));
        }
        if self.focal_alpha.iter().any(|&a| a <= 0.0) {
            return Err(Error::Config("focal alpha must be positive; zero removes the loss".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BriPrediction {
    pub p_nbr: f64,
    pub p_br: f64,
    pub label: DialogLabel,
}

impl BriPrediction {
    fn from_probs(p: &[f64]) -> Self {
        Self {
            p_nbr: p[0],
            p_br: p[1],
            label: if p[1] > p[0] {
                DialogLabel::BugReport
            } else {
                DialogLabel::NotBugReport
            },
        }
    }
}

/// A dialog reduced to what the classifier consumes: frozen word embeddings
/// per utterance and the typed reply topology.
#[derive(Debug, Clone)]
pub struct PreparedDialog {
    pub id: String,
    /// Original dialog for augmented mutants, the dialog itself otherwise.
    pub source: String,
    pub label: Option<DialogLabel>,
    pub words: Vec<Tensor>,
    pub edges: Vec<(usize, usize)>,
    pub types: Vec<EdgeType>,
}

/// Runs the frozen word encoder over every utterance, reusing embeddings of
/// texts seen before.
pub fn prepare_dialogs(
    dialogs: &[Dialog],
    encoder: &WordEncoder,
    cache: &mut HashMap<String, Tensor>,
) -> Result<Vec<PreparedDialog>> {
    let mut missing: Vec<&str> = Vec::new();
    for d in dialogs {
        if d.utterances.is_empty() {
            return Err(Error::Validation(format!("dialog {} has no utterances", d.id)));
        }
        for u in &d.utterances {
            if !cache.contains_key(&u.text) && !missing.contains(&u.text.as_str()) {
                missing.push(&u.text);
            }
        }
    }
    for (text, emb) in missing.iter().zip(encoder.embed_texts(&missing)?) {
        cache.insert(text.to_string(), emb);
    }
    Ok(dialogs
        .iter()
        .map(|d| {
            let (edges, types) = topology(d);
            PreparedDialog {
                id: d.id.clone(),
                source: d.augmented_from.clone().unwrap_or_else(|| d.id.clone()),
                label: d.label,
                words: d.utterances.iter().map(|u| cache[&u.text].clone()).collect(),
                edges,
                types,
            }
        })
        .collect())
}

/// Shapes of a BRI model, stored in checkpoint manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BriArch {
    pub word_dim: usize,
    pub hidden: usize,
    pub cnn: CnnConfig,
}

pub struct BriModel {
    pub store: ParamStore,
    pub cnn: TextCnn,
    pub arch: BriArch,
}

const RELATIONS: [&str; 4] = ["gnn.role.r2r", "gnn.role.r2d", "gnn.role.d2r", "gnn.role.d2d"];

impl BriModel {
    pub fn new(arch: BriArch, seed: u64, dtype: DType) -> Result<Self> {
        let cnn = TextCnn::new(arch.cnn.clone(), arch.word_dim, "cnn.")?;
        let mut store = ParamStore::new(dtype);
        let mut rng = seeded(derive_seed(seed, "bri"));
        cnn.init(&mut store, &mut rng)?;
        let d = arch.cnn.out_dim;
        let glorot = |a: usize, b: usize| Init::Uniform((6.0 / (a + b) as f64).sqrt());
        let identity: Vec<f64> = (0..d * d).map(|k| f64::from(u8::from(k / d == k % d))).collect();
        store.insert("gnn.edge", &Tensor::from_vec(identity, (d, d), store.device())?.to_dtype(dtype)?)?;
        for name in ["gnn.structure.w1", "gnn.structure.w2", "gnn.role.self"].into_iter().chain(RELATIONS) {
            store.param(name, &[d, d], glorot(d, d), &mut rng)?;
        }
        let pooled = 4 * d;
        store.param("head.fc1.weight", &[arch.hidden, pooled], glorot(pooled, arch.hidden), &mut rng)?;
        store.param("head.fc1.bias", &[arch.hidden], Init::Zeros, &mut rng)?;
        store.param("head.fc2.weight", &[2, arch.hidden], glorot(arch.hidden, 2), &mut rng)?;
        store.param("head.fc2.bias", &[2], Init::Zeros, &mut rng)?;
        Ok(Self { store, cnn, arch })
    }

    pub fn load(arch: BriArch, path: &Path, dtype: DType) -> Result<Self> {
        let fresh = Self::new(arch.clone(), 0, dtype)?;
        let store = ParamStore::load(path, dtype)?;
        for name in fresh.store.names() {
            let expected = fresh.store.get(name).expect("listed").dims().to_vec();
            match store.get(name) {
                Some(v) if v.dims() == expected.as_slice() => {}
                Some(v) => {
                    return Err(Error::SchemaMismatch(format!(
                        "{name} has shape {:?}, expected {expected:?}",
                        v.dims()
                    )))
                }
                None => return Err(Error::SchemaMismatch(format!("checkpoint lacks {name}"))),
            }
        }
        Ok(Self {
            store,
            cnn: fresh.cnn,
            arch,
        })
    }

    fn p(&self, name: &str) -> Tensor {
        self.store.get(name).expect("parameters are created in new()").as_tensor().clone()
    }

    /// Logits `(dialogs, 2)` in `[NBR, BR]` order.
    pub fn forward(&self, batch: &[&PreparedDialog], train: bool, p_drop: f64, rng: &mut Rng8) -> Result<Tensor> {
        let mut topo = BatchTopology::default();
        let mut seqs = Vec::new();
        for d in batch {
            topo.push(d.words.len(), &d.edges, &d.types);
            seqs.extend(d.words.iter().cloned());
        }
        let dtype = self.store.dtype();
        let u = self.cnn.forward(&self.store, &seqs)?;
        let w = edge_weights(&u, &self.p("gnn.edge"), &topo)?;
        let v1 = structure_layer(&u, &w, &self.p("gnn.structure.w1"), &self.p("gnn.structure.w2"))?;
        let relations: Vec<Tensor> = RELATIONS.iter().map(|n| self.p(n)).collect();
        let h = role_layer(&v1, &topo.type_matrices(dtype)?, &self.p("gnn.role.self"), &relations)?;
        let c = dropout(&combine(&u, &h)?, p_drop, train, rng)?;
        let g = dialog_embedding(&c, &topo.spans)?;
        let hidden = linear(&g, &self.p("head.fc1.weight"), Some(&self.p("head.fc1.bias")))?.relu()?;
        let hidden = dropout(&hidden, p_drop, train, rng)?;
        linear(&hidden, &self.p("head.fc2.weight"), Some(&self.p("head.fc2.bias")))
    }

    pub fn predict(&self, dialogs: &[PreparedDialog]) -> Result<Vec<BriPrediction>> {
        let mut out = Vec::with_capacity(dialogs.len());
        let mut rng = seeded(0);
        for chunk in dialogs.chunks(32) {
            let refs: Vec<&PreparedDialog> = chunk.iter().collect();
            let probs = probabilities(&self.forward(&refs, false, 0.0, &mut rng)?)?;
            out.extend(to_f64_rows(&probs)?.iter().map(|p| BriPrediction::from_probs(p)));
        }
        Ok(out)
    }

    /// Focal loss plus `λ‖θ‖²` for one batch.
    pub fn loss(&self, batch: &[&PreparedDialog], cfg: &BriConfig, train: bool, rng: &mut Rng8) -> Result<Tensor> {
        let targets = batch
            .iter()
            .map(|d| {
                d.label
                    .map(DialogLabel::index)
                    .ok_or_else(|| Error::Validation(format!("dialog {} has no label", d.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let logits = self.forward(batch, train, cfg.dropout, rng)?;
        let fl = focal_loss(&probabilities(&logits)?, &targets, &cfg.focal_alpha, cfg.focal_gamma)?;
        if cfg.l2_lambda == 0.0 {
            return Ok(fl);
        }
        Ok((fl + (self.store.squared_norm(|_| true)? * cfg.l2_lambda)?)?)
    }

    fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        self.store
            .names()
            .map(|n| Ok((n.to_string(), self.p(n).copy()?)))
            .collect()
    }

    fn restore(&self, snap: &[(String, Tensor)]) -> Result<()> {
        for (n, t) in snap {
            self.store.get(n).expect("snapshot of own parameters").set(t)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_f1: f64,
}

pub struct TrainOutcome {
    pub model: BriModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid_f1: f64,
}

/// F1 of the BR class.
pub fn br_f1(model: &BriModel, data: &[PreparedDialog]) -> Result<f64> {
    let preds: Vec<DialogLabel> = model.predict(data)?.iter().map(|p| p.label).collect();
    let gold = data
        .iter()
        .map(|d| d.label.ok_or_else(|| Error::Validation(format!("dialog {} has no label", d.id))))
        .collect::<Result<Vec<_>>>()?;
    let report = compute_metrics(&preds, &gold)?;
    Ok(report.class(&DialogLabel::BugReport.to_string()).map_or(0.0, |c| c.f1))
}

/// Trains with Adam on `train`, keeps the parameters with the best BR F1 on
/// `valid` (on `train` when `valid` is empty), and stops after `patience`
/// epochs without improvement.
pub fn train_bri(
    train: &[PreparedDialog],
    valid: &[PreparedDialog],
    cfg: &BriConfig,
    seed: u64,
    dtype: DType,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train.first().ok_or_else(|| Error::EmptyDataset("no BRI training dialogs".into()))?;
    let word_dim = first
        .words
        .first()
        .ok_or_else(|| Error::Validation(format!("dialog {} has no utterances", first.id)))?
        .dim(1)?;
    let arch = BriArch {
        word_dim,
        hidden: cfg.hidden,
        cnn: cfg.cnn.clone(),
    };
    let model = BriModel::new(arch, seed, dtype)?;
    let mut opt = AdamW::new(
        model.store.all_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let selection = if valid.is_empty() { train } else { valid };
    let mut order_rng = seeded(derive_seed(seed, "bri.order"));
    let mut drop_rng = seeded(derive_seed(seed, "bri.dropout"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, model.snapshot()?);
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedDialog> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = model.loss(&batch, cfg, true, &mut drop_rng)?;
            opt.backward_step(&loss)?;
            total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
        }
        let f1 = br_f1(&model, selection)?;
        history.push(EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            valid_f1: f1,
        });
        tracing::debug!(epoch, loss = total / train.len() as f64, f1, "bri epoch");
        if f1 > best.0 {
            best = (f1, epoch, model.snapshot()?);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.restore(&best.2)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.1,
        best_valid_f1: best.0,
    })
}

pub fn predict_bri(dialog: &Dialog, model: &BriModel, encoder: &WordEncoder) -> Result<BriPrediction> {
    let prepared = prepare_dialogs(std::slice::from_ref(dialog), encoder, &mut HashMap::new())?;
    Ok(model.predict(&prepared)?[0])
}
