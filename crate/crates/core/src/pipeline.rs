//! The command implementations behind the CLI. Each command reads the files
//! written by the previous one (under the output directory unless a path is
//! given) and writes its own outputs atomically.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augmentor::{augment_sentences_eda, balance_by_project};
use crate::bri_model::{prepare_dialogs, train_bri, BriArch, BriModel, PreparedDialog};
use crate::brs_model::{
    assemble_report, classify_texts, fine_tune_stage1, fine_tune_stage2, reporter_sentences, BrsModel, Greetings,
};
use crate::config::PipelineConfig;
use crate::corpus::{filter_dialogs, ChatLog, Dialog, DialogLabel, LabeledSentence, ReplyLink, SentenceLabel};
use crate::disentangler::{
    cluster_dialogs, inline_links, load_gold_links, predict_links, training_pairs, LinkModel, WordVectors,
    HANDCRAFTED,
};
use crate::encoder::{EncoderConfig, WordEncoder};
use crate::error::{Error, Result};
use crate::eval_harness::{compute_metrics_for, cross_project_split, format_table, kfold_split, MetricReport};
use crate::io::{open, read_jsonl, write_atomic, write_atomic_with, write_json, write_jsonl};
use crate::nn::{derive_seed, seeded};

const DTYPE: DType = DType::F32;
const PARAMS: &str = "params.safetensors";
const MANIFEST: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

fn out(cfg: &PipelineConfig, rel: &str) -> PathBuf {
    cfg.paths.output.join(rel)
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "input not found")))
    }
}

/// What a checkpoint directory holds besides its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub version: u32,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub details: serde_json::Value,
}

pub fn save_checkpoint(dir: &Path, manifest: &Manifest, save: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    write_atomic_with(&dir.join(PARAMS), save)?;
    write_json(&dir.join(MANIFEST), manifest)
}

pub fn load_manifest(dir: &Path, kind: &str) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() || !dir.join(PARAMS).exists() {
        return Err(Error::CheckpointNotFound(dir.to_path_buf()));
    }
    let m: Manifest = serde_json::from_reader(open(&path)?)
        .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    if m.kind != kind || m.version != MANIFEST_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "{} holds a {} checkpoint (version {}), expected {kind} version {MANIFEST_VERSION}",
            dir.display(),
            m.kind,
            m.version
        )));
    }
    Ok(m)
}

fn project_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "chat".into(), |s| s.to_string_lossy().into_owned())
}

fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(require(dir)?)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub projects: BTreeMap<String, usize>,
}

/// Parses and normalizes chat exports into `<out>/corpus/<project>.jsonl`.
/// The project is the file stem unless `project` names it (one input only).
pub fn cmd_ingest(cfg: &PipelineConfig, inputs: &[PathBuf], project: Option<&str>) -> Result<IngestSummary> {
    if inputs.is_empty() {
        return Err(Error::Config("ingest needs at least one input file".into()));
    }
    if project.is_some() && inputs.len() > 1 {
        return Err(Error::Config("--project applies to a single input file".into()));
    }
    let mut projects = BTreeMap::new();
    for input in inputs {
        let log = ChatLog::parse_jsonl(open(input)?)?;
        let name = project.map_or_else(|| project_of(input), String::from);
        write_atomic(&out(cfg, &format!("corpus/{name}.jsonl")), log.to_jsonl().as_bytes())?;
        projects.insert(name, log.len());
    }
    Ok(IngestSummary { projects })
}

#[derive(Debug, Clone, Default)]
pub struct DisentangleOptions {
    pub corpus: Option<PathBuf>,
    pub gold_links: Option<PathBuf>,
    pub link_model: Option<PathBuf>,
    /// Train a link model on the gold links in this directory first.
    pub train_links: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct DisentangleSummary {
    pub link_source: String,
    pub dialogs: usize,
    pub filtered_out: usize,
    pub labeled: usize,
}

#[derive(Debug, Deserialize)]
struct LabelRecord {
    dialog_id: String,
    label: DialogLabel,
}

fn gold_for(dir: &Path, project: &str) -> Result<Option<Vec<ReplyLink>>> {
    let path = dir.join(format!("{project}.jsonl"));
    if path.exists() {
        Ok(Some(load_gold_links(open(&path)?)?))
    } else {
        Ok(None)
    }
}

fn word_vectors(cfg: &PipelineConfig) -> Result<WordVectors> {
    match &cfg.paths.word_vectors {
        Some(p) => WordVectors::load_text(p, cfg.seed),
        None => Ok(WordVectors::hashed(cfg.disentangle.word_dim, cfg.seed)),
    }
}

/// Links each corpus file into dialogs, drops noisy ones and attaches gold
/// labels. Writes `<out>/dialogs.jsonl`.
pub fn cmd_disentangle(cfg: &PipelineConfig, opts: &DisentangleOptions) -> Result<DisentangleSummary> {
    let corpus_dir = opts.corpus.clone().unwrap_or_else(|| out(cfg, "corpus"));
    let logs: Vec<(String, ChatLog)> = jsonl_files(&corpus_dir)?
        .into_iter()
        .map(|p| Ok((project_of(&p), ChatLog::parse_jsonl(open(&p)?)?)))
        .collect::<Result<_>>()?;
    let gold_dir = opts.gold_links.clone().or_else(|| cfg.paths.gold_links.clone());

    let mut link_source = "inline".to_string();
    let model = if let Some(dir) = &opts.train_links {
        let vectors = word_vectors(cfg)?;
        let (mut feats, mut labels) = (Vec::new(), Vec::new());
        for (project, log) in &logs {
            let gold = gold_for(dir, project)?.unwrap_or_else(|| inline_links(log));
            let (f, l) = training_pairs(
                log,
                &gold,
                &vectors,
                cfg.disentangle.window,
                cfg.disentangle.link.negatives_per_positive,
                derive_seed(cfg.seed, project),
            )?;
            feats.extend(f);
            labels.extend(l);
        }
        let mut m = LinkModel::new(2 * vectors.dim() + HANDCRAFTED, cfg.disentangle.link.hidden, cfg.seed, DTYPE)?;
        m.fit(&feats, &labels, &cfg.disentangle.link, cfg.seed)?;
        let manifest = Manifest {
            kind: "link".into(),
            version: MANIFEST_VERSION,
            seed: cfg.seed,
            encoder: cfg.encoder.clone(),
            details: serde_json::to_value(&cfg.disentangle)?,
        };
        save_checkpoint(&cfg.checkpoint_root().join("link"), &manifest, |p| m.save(p))?;
        link_source = "trained model".into();
        Some((m, vectors))
    } else if let Some(dir) = &opts.link_model {
        load_manifest(dir, "link")?;
        link_source = "model".into();
        Some((LinkModel::load(&dir.join(PARAMS), DTYPE)?, word_vectors(cfg)?))
    } else {
        None
    };

    let mut dialogs = Vec::new();
    for (project, log) in &logs {
        let links = match (&model, &gold_dir) {
            (Some((m, v)), _) => predict_links(log, m, v, cfg.disentangle.window)?,
            (None, Some(dir)) => match gold_for(dir, project)? {
                Some(g) => {
                    link_source = "gold".into();
                    g
                }
                None => inline_links(log),
            },
            (None, None) => inline_links(log),
        };
        dialogs.extend(
            cluster_dialogs(log, &links)?
                .into_iter()
                .map(|d| d.with_project(project.clone())),
        );
    }
    let before = dialogs.len();
    let mut dialogs = filter_dialogs(dialogs, &cfg.filter);
    let filtered_out = before - dialogs.len();

    let mut labeled = 0;
    if let Some(path) = opts.labels.clone().or_else(|| cfg.paths.dialog_labels.clone()) {
        let labels: HashMap<String, DialogLabel> = read_jsonl::<LabelRecord>(&path)?
            .into_iter()
            .map(|r| (r.dialog_id, r.label))
            .collect();
        for d in &mut dialogs {
            if let Some(&l) = labels.get(&d.id) {
                d.label = Some(l);
                labeled += 1;
            }
        }
    }
    write_jsonl(&out(cfg, "dialogs.jsonl"), &dialogs)?;
    Ok(DisentangleSummary {
        link_source,
        dialogs: dialogs.len(),
        filtered_out,
        labeled,
    })
}

fn read_dialogs(path: &Path) -> Result<Vec<Dialog>> {
    read_jsonl::<Dialog>(require(path)?)?
        .into_iter()
        .map(Dialog::validated)
        .collect()
}

fn labeled(dialogs: Vec<Dialog>) -> Result<Vec<Dialog>> {
    if let Some(d) = dialogs.iter().find(|d| d.label.is_none()) {
        return Err(Error::Validation(format!("dialog {} has no BR/NBR label", d.id)));
    }
    Ok(dialogs)
}

/// Holds out whole source groups (a dialog with its mutants) for model
/// selection, drawing the same share from every stratum and at least one
/// group from strata that have two or more.
pub fn validation_split<T: Clone>(
    items: &[T],
    source: impl Fn(&T) -> &str,
    stratum: impl Fn(&T) -> String,
    fraction: f64,
    seed: u64,
) -> (Vec<T>, Vec<T>) {
    let mut strata: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for it in items {
        let keys = strata.entry(stratum(it)).or_default();
        if !keys.contains(&source(it)) {
            keys.push(source(it));
        }
    }
    let mut rng = seeded(seed);
    let mut valid_keys = std::collections::HashSet::new();
    if fraction > 0.0 {
        for keys in strata.values_mut() {
            if keys.len() < 2 {
                continue;
            }
            keys.sort_unstable();
            keys.shuffle(&mut rng);
            let n = ((fraction * keys.len() as f64).round() as usize).clamp(1, keys.len() - 1);
            valid_keys.extend(keys.iter().take(n).copied());
        }
    }
    let (v, t): (Vec<&T>, Vec<&T>) = items.iter().partition(|it| valid_keys.contains(source(it)));
    (t.into_iter().cloned().collect(), v.into_iter().cloned().collect())
}

struct BriTrainer<'a> {
    cfg: &'a PipelineConfig,
    encoder: WordEncoder,
    cache: HashMap<String, candle_core::Tensor>,
}

impl BriTrainer<'_> {
    fn prepare(&mut self, dialogs: &[Dialog]) -> Result<Vec<PreparedDialog>> {
        prepare_dialogs(dialogs, &self.encoder, &mut self.cache)
    }

    /// Augments `originals`, splits off validation dialogs and trains.
    fn train(&mut self, originals: &[Dialog], label: &str) -> Result<BriModel> {
        let thesaurus = self.cfg.augment.thesaurus()?;
        let augmented = balance_by_project(originals, &self.cfg.augment, &thesaurus)?;
        let seed = derive_seed(self.cfg.seed, label);
        let (train, valid) = validation_split(
            &augmented,
            |d: &Dialog| d.augmented_from.as_deref().unwrap_or(&d.id),
            |d: &Dialog| format!("{:?}", d.label),
            self.cfg.bri.validation_fraction,
            derive_seed(seed, "valid"),
        );
        let train = self.prepare(&train)?;
        let valid = self.prepare(&valid)?;
        let outcome = train_bri(&train, &valid, &self.cfg.bri, seed, DTYPE)?;
        tracing::info!(label, best_epoch = outcome.best_epoch, f1 = outcome.best_valid_f1, "trained BRI model");
        Ok(outcome.model)
    }
}

const BRI_CLASSES: [DialogLabel; 2] = [DialogLabel::BugReport, DialogLabel::NotBugReport];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectMetrics {
    pub project: String,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BriMetrics {
    pub folds: Vec<ProjectMetrics>,
    pub average_precision: f64,
    pub average_recall: f64,
    pub average_f1: f64,
}

fn table_rows(folds: &[ProjectMetrics]) -> Vec<(String, f64, f64, f64)> {
    folds
        .iter()
        .map(|f| (f.project.clone(), f.metrics.macro_precision, f.metrics.macro_recall, f.metrics.macro_f1))
        .collect()
}

fn summarize(folds: Vec<ProjectMetrics>) -> BriMetrics {
    let n = folds.len().max(1) as f64;
    BriMetrics {
        average_precision: folds.iter().map(|f| f.metrics.macro_precision).sum::<f64>() / n,
        average_recall: folds.iter().map(|f| f.metrics.macro_recall).sum::<f64>() / n,
        average_f1: folds.iter().map(|f| f.metrics.macro_f1).sum::<f64>() / n,
        folds,
    }
}

#[derive(Debug, Serialize)]
pub struct TrainBriSummary {
    pub dialogs: usize,
    pub cross_project: Option<BriMetrics>,
    pub checkpoint: PathBuf,
}

/// Leave-one-project-out evaluation (augmenting training sides only), then a
/// final model on every dialog saved to `<checkpoints>/bri`.
pub fn cmd_train_bri(cfg: &PipelineConfig, dialogs: Option<&Path>) -> Result<TrainBriSummary> {
    let path = dialogs.map_or_else(|| out(cfg, "dialogs.jsonl"), Path::to_path_buf);
    let dialogs: Vec<Dialog> = labeled(read_dialogs(&path)?)?
        .into_iter()
        .filter(|d| d.augmented_from.is_none())
        .collect();
    if dialogs.is_empty() {
        return Err(Error::EmptyDataset(format!("{} holds no dialogs", path.display())));
    }
    let mut trainer = BriTrainer {
        cfg,
        encoder: WordEncoder::from_config(&cfg.encoder, cfg.seed, DTYPE)?,
        cache: HashMap::new(),
    };
    let projects: std::collections::BTreeSet<_> = dialogs.iter().map(|d| d.project.clone()).collect();
    let cross_project = if cfg.eval.cross_project && projects.len() >= 2 {
        let mut folds = Vec::new();
        for fold in cross_project_split(&dialogs)? {
            let model = trainer.train(&fold.train, &format!("bri.fold.{}", fold.project))?;
            let test = trainer.prepare(&fold.test)?;
            let preds: Vec<DialogLabel> = model.predict(&test)?.iter().map(|p| p.label).collect();
            let gold: Vec<DialogLabel> = fold.test.iter().map(|d| d.label.expect("checked")).collect();
            folds.push(ProjectMetrics {
                project: fold.project,
                metrics: compute_metrics_for(&preds, &gold, &BRI_CLASSES)?,
            });
        }
        let metrics = summarize(folds);
        write_json(&out(cfg, "metrics/bri.json"), &metrics)?;
        write_atomic(&out(cfg, "metrics/bri.txt"), format_table(&table_rows(&metrics.folds)).as_bytes())?;
        Some(metrics)
    } else {
        tracing::warn!("cross-project evaluation skipped: needs two or more projects");
        None
    };

    let model = trainer.train(&dialogs, "bri.final")?;
    let dir = cfg.checkpoint_root().join("bri");
    let manifest = Manifest {
        kind: "bri".into(),
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        encoder: cfg.encoder.clone(),
        details: serde_json::to_value(&model.arch)?,
    };
    save_checkpoint(&dir, &manifest, |p| model.store.save(p))?;
    Ok(TrainBriSummary {
        dialogs: dialogs.len(),
        cross_project,
        checkpoint: dir,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialog_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
    pub label: DialogLabel,
    pub p_br: f64,
    pub p_nbr: f64,
}

#[derive(Debug, Serialize)]
pub struct PredictSummary {
    pub dialogs: usize,
    pub bug_reports: usize,
}

/// Scores dialogs with a trained model. Writes `<out>/predictions.jsonl` and
/// the BR-flagged dialogs to `<out>/br_dialogs.jsonl`.
pub fn cmd_predict_bri(cfg: &PipelineConfig, dialogs: Option<&Path>, checkpoint: Option<&Path>) -> Result<PredictSummary> {
    let dir = checkpoint.map_or_else(|| cfg.checkpoint_root().join("bri"), Path::to_path_buf);
    let manifest = load_manifest(&dir, "bri")?;
    let arch: BriArch = serde_json::from_value(manifest.details.clone())
        .map_err(|e| Error::SchemaMismatch(format!("bri manifest: {e}")))?;
    let model = BriModel::load(arch, &dir.join(PARAMS), DTYPE)?;
    let encoder = WordEncoder::from_config(&manifest.encoder, manifest.seed, DTYPE)?;

    let path = dialogs.map_or_else(|| out(cfg, "dialogs.jsonl"), Path::to_path_buf);
    let dialogs: Vec<Dialog> = read_dialogs(&path)?
        .into_iter()
        .filter(|d| d.augmented_from.is_none())
        .collect();
    let prepared = prepare_dialogs(&dialogs, &encoder, &mut HashMap::new())?;
    let preds = model.predict(&prepared)?;
    let records: Vec<PredictionRecord> = dialogs
        .iter()
        .zip(&preds)
        .map(|(d, p)| PredictionRecord {
            dialog_id: d.id.clone(),
            project: d.project.clone(),
            label: p.label,
            p_br: p.p_br,
            p_nbr: p.p_nbr,
        })
        .collect();
    let flagged: Vec<Dialog> = dialogs
        .iter()
        .zip(&preds)
        .filter(|(_, p)| p.label == DialogLabel::BugReport)
        .map(|(d, _)| d.clone())
        .collect();
    write_jsonl(&out(cfg, "predictions.jsonl"), &records)?;
    write_jsonl(&out(cfg, "br_dialogs.jsonl"), &flagged)?;
    Ok(PredictSummary {
        dialogs: records.len(),
        bug_reports: flagged.len(),
    })
}

const SENTENCE_CLASSES: [SentenceLabel; 4] =
    [SentenceLabel::Observed, SentenceLabel::Expected, SentenceLabel::Steps, SentenceLabel::Other];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrsMetrics {
    pub folds: usize,
    /// Metrics over the pooled out-of-fold predictions.
    pub pooled: MetricReport,
    /// Macro `(P, R, F1)` over OB, EB and SR.
    pub macro_ob_eb_sr: (f64, f64, f64),
    pub per_fold: Vec<MetricReport>,
}

#[derive(Debug, Serialize)]
pub struct TrainBrsSummary {
    pub stage1: Option<crate::brs_model::StageOutcome>,
    pub sentences: usize,
    pub metrics: Option<BrsMetrics>,
    pub checkpoint: PathBuf,
}

fn brs_manifest(cfg: &PipelineConfig, kind: &str) -> Manifest {
    Manifest {
        kind: kind.into(),
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        encoder: cfg.encoder.clone(),
        details: serde_json::json!({ "frozen_layers": cfg.brs.frozen_layers }),
    }
}

pub fn load_brs(dir: &Path, kind: &str) -> Result<BrsModel> {
    let m = load_manifest(dir, kind)?;
    let frozen = m.details["frozen_layers"]
        .as_u64()
        .ok_or_else(|| Error::SchemaMismatch("manifest lacks frozen_layers".into()))? as usize;
    BrsModel::load(&m.encoder, frozen, &dir.join(PARAMS), DTYPE)
}

fn eda_or_plain(sentences: &[LabeledSentence], cfg: &PipelineConfig) -> Result<Vec<LabeledSentence>> {
    let thesaurus = cfg.augment.thesaurus()?;
    match augment_sentences_eda(sentences, &cfg.augment, &thesaurus) {
        Err(Error::EmptyDataset(why)) => {
            tracing::warn!(%why, "sentence augmentation skipped");
            Ok(sentences.to_vec())
        }
        other => other,
    }
}

/// First fine-tuning stage on the external corpus (skipped without one),
/// k-fold evaluation of the second stage on chat sentences, then a final
/// second stage on all of them saved to `<checkpoints>/brs`.
pub fn cmd_train_brs(cfg: &PipelineConfig, external: Option<&Path>, sentences: Option<&Path>) -> Result<TrainBrsSummary> {
    let encoder = WordEncoder::from_config(&cfg.encoder, cfg.seed, DTYPE)?;
    let stage1_dir = cfg.checkpoint_root().join("brs-stage1");
    let external = external.map(Path::to_path_buf).or_else(|| cfg.paths.external_corpus.clone());
    let stage1 = match &external {
        Some(p) => {
            let data = LabeledSentence::parse_jsonl(open(require(p)?)?, "ext-")?;
            let (model, outcome) = fine_tune_stage1(encoder, &data, &cfg.brs, cfg.seed)?;
            save_checkpoint(&stage1_dir, &brs_manifest(cfg, "brs-stage1"), |p| model.save(p))?;
            Some(outcome)
        }
        None => {
            tracing::warn!("no external corpus; the second stage starts from the base encoder");
            cfg.brs.validate(encoder.bert.cfg.layers)?;
            let model = BrsModel::new(encoder, cfg.brs.frozen_layers, cfg.seed)?;
            save_checkpoint(&stage1_dir, &brs_manifest(cfg, "brs-stage1"), |p| model.save(p))?;
            None
        }
    };

    let path = sentences
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.brs_sentences.clone())
        .ok_or_else(|| Error::Config("train-brs needs labeled chat sentences (--sentences)".into()))?;
    let all = LabeledSentence::parse_jsonl(open(require(&path)?)?, "s-")?;
    let originals: Vec<LabeledSentence> = all.iter().filter(|s| s.augmented_from.is_none()).cloned().collect();
    if originals.is_empty() {
        return Err(Error::EmptyDataset(format!("{} holds no sentences", path.display())));
    }

    let groups: Vec<String> = all.iter().map(|s| s.source().to_string()).collect();
    let metrics = match kfold_split(&groups, cfg.eval.brs_folds, derive_seed(cfg.seed, "brs.folds")) {
        Ok(folds) => {
            let (mut preds, mut gold, mut per_fold) = (Vec::new(), Vec::new(), Vec::new());
            for (k, fold) in folds.iter().enumerate() {
                let train: Vec<LabeledSentence> = fold.train.iter().map(|&i| all[i].clone()).collect();
                let test: Vec<&LabeledSentence> =
                    fold.test.iter().map(|&i| &all[i]).filter(|s| s.augmented_from.is_none()).collect();
                let train = eda_or_plain(&train, cfg)?;
                let start = load_brs(&stage1_dir, "brs-stage1")?;
                let (model, _) = fine_tune_stage2(start, &train, &cfg.brs, derive_seed(cfg.seed, &format!("brs.fold{k}")))?;
                let texts: Vec<&str> = test.iter().map(|s| s.text.as_str()).collect();
                let p: Vec<SentenceLabel> = classify_texts(&model, &texts)?.into_iter().map(|(l, _)| l).collect();
                let g: Vec<SentenceLabel> = test.iter().map(|s| s.label).collect();
                per_fold.push(compute_metrics_for(&p, &g, &SENTENCE_CLASSES)?);
                preds.extend(p);
                gold.extend(g);
            }
            let pooled = compute_metrics_for(&preds, &gold, &SENTENCE_CLASSES)?;
            let m = BrsMetrics {
                folds: folds.len(),
                macro_ob_eb_sr: pooled.macro_over(&["OB", "EB", "SR"]),
                pooled,
                per_fold,
            };
            write_json(&out(cfg, "metrics/brs.json"), &m)?;
            let rows: Vec<(String, f64, f64, f64)> = m
                .pooled
                .classes
                .iter()
                .map(|c| (c.label.clone(), c.precision, c.recall, c.f1))
                .collect();
            write_atomic(&out(cfg, "metrics/brs.txt"), format_table(&rows).as_bytes())?;
            Some(m)
        }
        Err(Error::EmptyDataset(why)) => {
            tracing::warn!(%why, "sentence k-fold evaluation skipped");
            None
        }
        Err(e) => return Err(e),
    };

    let train = eda_or_plain(&all, cfg)?;
    let (model, _) = fine_tune_stage2(load_brs(&stage1_dir, "brs-stage1")?, &train, &cfg.brs, cfg.seed)?;
    let dir = cfg.checkpoint_root().join("brs");
    save_checkpoint(&dir, &brs_manifest(cfg, "brs"), |p| model.save(p))?;
    Ok(TrainBrsSummary {
        stage1,
        sentences: originals.len(),
        metrics,
        checkpoint: dir,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportIndexEntry {
    pub dialog_id: String,
    pub project: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markdown: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Builds one report per dialog into `<out>/reports/<project>/<dialog>.md`
/// with a `.json` twin. Dialogs without reporter content are listed as
/// skipped in `<out>/reports/index.json`.
pub fn cmd_synthesize(
    cfg: &PipelineConfig,
    dialogs: Option<&Path>,
    checkpoint: Option<&Path>,
    format: Option<crate::brs_model::ReportFormat>,
) -> Result<Vec<ReportIndexEntry>> {
    let dir = checkpoint.map_or_else(|| cfg.checkpoint_root().join("brs"), Path::to_path_buf);
    let model = load_brs(&dir, "brs")?;
    let greetings = match &cfg.report.greetings {
        Some(p) => std::borrow::Cow::Owned(Greetings::load(p)?),
        None => std::borrow::Cow::Borrowed(Greetings::bundled()),
    };
    let format = format.unwrap_or(cfg.report.format);
    let path = dialogs.map_or_else(|| out(cfg, "br_dialogs.jsonl"), Path::to_path_buf);
    let mut index = Vec::new();
    for d in read_dialogs(&path)? {
        let project = file_safe(d.project.as_deref().unwrap_or("default"));
        let mut sentences = reporter_sentences(&d, &greetings);
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        let labels = classify_texts(&model, &texts)?;
        for (s, (l, _)) in sentences.iter_mut().zip(labels) {
            s.label = Some(l);
        }
        let entry = match assemble_report(&d, &sentences) {
            Ok(report) => {
                let rel = format!("{project}/{}.md", file_safe(&d.id));
                let base = out(cfg, "reports").join(&rel);
                write_atomic(&base, report.to_markdown(format).as_bytes())?;
                write_json(&base.with_extension("json"), &report)?;
                ReportIndexEntry {
                    dialog_id: d.id.clone(),
                    project,
                    markdown: Some(rel),
                    skipped: None,
                }
            }
            Err(e @ Error::InsufficientContent(_)) => ReportIndexEntry {
                dialog_id: d.id.clone(),
                project,
                markdown: None,
                skipped: Some(e.kind().into()),
            },
            Err(e) => return Err(e),
        };
        index.push(entry);
    }
    write_json(&out(cfg, "reports/index.json"), &index)?;
    Ok(index)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub per_project: Vec<ProjectMetrics>,
    pub overall: MetricReport,
}

/// Compares `predictions.jsonl` with the gold labels in `dialogs.jsonl`.
pub fn cmd_eval(cfg: &PipelineConfig, predictions: Option<&Path>, dialogs: Option<&Path>) -> Result<EvalMetrics> {
    let pred_path = predictions.map_or_else(|| out(cfg, "predictions.jsonl"), Path::to_path_buf);
    let dialog_path = dialogs.map_or_else(|| out(cfg, "dialogs.jsonl"), Path::to_path_buf);
    let preds: Vec<PredictionRecord> = read_jsonl(require(&pred_path)?)?;
    let gold: HashMap<String, DialogLabel> = read_dialogs(&dialog_path)?
        .into_iter()
        .filter_map(|d| d.label.map(|l| (d.id, l)))
        .collect();
    let mut by_project: BTreeMap<String, (Vec<DialogLabel>, Vec<DialogLabel>)> = BTreeMap::new();
    let (mut all_p, mut all_g) = (Vec::new(), Vec::new());
    for r in &preds {
        let Some(&g) = gold.get(&r.dialog_id) else { continue };
        let e = by_project.entry(r.project.clone().unwrap_or_default()).or_default();
        e.0.push(r.label);
        e.1.push(g);
        all_p.push(r.label);
        all_g.push(g);
    }
    if all_g.is_empty() {
        return Err(Error::EmptyDataset("no prediction has a gold label".into()));
    }
    let per_project = by_project
        .into_iter()
        .map(|(project, (p, g))| {
            Ok(ProjectMetrics {
                project,
                metrics: compute_metrics_for(&p, &g, &BRI_CLASSES)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics = EvalMetrics {
        overall: compute_metrics_for(&all_p, &all_g, &BRI_CLASSES)?,
        per_project,
    };
    write_json(&out(cfg, "metrics/eval.json"), &metrics)?;
    write_atomic(&out(cfg, "metrics/eval.txt"), format_table(&table_rows(&metrics.per_project)).as_bytes())?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_split_keeps_groups_whole() {
        let items: Vec<(String, String)> = (0..20)
            .flat_map(|i| [(format!("d{i}"), format!("d{i}")), (format!("d{i}#aug1"), format!("d{i}"))])
            .collect();
        let parity = |x: &(String, String)| (x.1[1..].parse::<usize>().unwrap() % 2).to_string();
        let (train, valid) = validation_split(&items, |x| x.1.as_str(), parity, 0.1, 3);
        assert_eq!(train.len() + valid.len(), 40);
        assert_eq!(valid.len(), 4);
        for v in &valid {
            assert!(!train.iter().any(|t| t.1 == v.1));
        }
        let odd = valid.iter().filter(|v| parity(v) == "1").count();
        assert_eq!(odd, 2);
        assert!(validation_split(&items, |x| x.1.as_str(), parity, 0.0, 3).1.is_empty());
    }

    #[test]
    fn missing_checkpoint_is_reported_as_such() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(dir.path(), "bri"), Err(Error::CheckpointNotFound(_))));
    }

    #[test]
    fn manifest_kind_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            kind: "brs".into(),
            version: MANIFEST_VERSION,
            seed: 0,
            encoder: EncoderConfig::default(),
            details: serde_json::Value::Null,
        };
        save_checkpoint(dir.path(), &m, |p| {
            std::fs::write(p, b"").map_err(|e| Error::io(p, e))
        })
        .unwrap();
        assert_eq!(load_manifest(dir.path(), "brs").unwrap(), m);
        assert!(matches!(load_manifest(dir.path(), "bri"), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(file_safe("d-u1/../x"), "d-u1_.._x");
    }
}
