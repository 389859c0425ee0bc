//! Training-data augmentation: dialog mutants for the dialog classifier and
//! EDA-style sentence variants for the sentence classifier.

mod thesaurus;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, LabeledSentence, Placeholder, SentenceLabel, Utterance};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded, Rng8};

pub use thesaurus::Thesaurus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Utterances of at most this many tokens are swapped for a short
    /// utterance from the corpus instead of being paraphrased.
    pub theta: usize,
    /// Mutants produced per dialog by [`augment_dialog`].
    pub n_mutants: usize,
    /// NBR dialogs are grown to this multiple before BR is matched to them.
    pub nbr_multiplier: usize,
    /// Per-project overrides of `nbr_multiplier`.
    pub project_multipliers: BTreeMap<String, usize>,
    /// Share of eligible tokens replaced by synonym replacement.
    pub sr_rate: f64,
    /// Share of tokens touched by one EDA operation.
    pub eda_rate: f64,
    /// Alternative `word<TAB>syn,syn` file; the bundled thesaurus otherwise.
    pub synonym_source: Option<PathBuf>,
    /// Set from the pipeline seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            theta: 5,
            n_mutants: 1,
            nbr_multiplier: 8,
            project_multipliers: BTreeMap::new(),
            sr_rate: 0.1,
            eda_rate: 0.1,
            synonym_source: None,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta < 1 {
            return Err(Error::Config("theta must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sr_rate) || !(0.0..=1.0).contains(&self.eda_rate) {
            return Err(Error::Config("augmentation rates must lie in [0, 1]".into()));
        }
        if self.nbr_multiplier == 0 || self.project_multipliers.values().any(|&m| m == 0) {
            return Err(Error::Config("NBR multipliers must be positive".into()));
        }
        Ok(())
    }

    pub fn thesaurus(&self) -> Result<std::borrow::Cow<'static, Thesaurus>> {
        Ok(match &self.synonym_source {
            Some(p) => std::borrow::Cow::Owned(Thesaurus::load(p)?),
            None => std::borrow::Cow::Borrowed(Thesaurus::bundled()),
        })
    }

    pub fn multiplier_for(&self, project: Option<&str>) -> usize {
        project
            .and_then(|p| self.project_multipliers.get(p))
            .copied()
            .unwrap_or(self.nbr_multiplier)
    }
}

fn is_placeholder(tok: &str) -> bool {
    Placeholder::from_token(tok).is_some()
}

fn eligible<'a>(tokens: &[String], thesaurus: &'a Thesaurus) -> Vec<(usize, &'a [String])> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !is_placeholder(t))
        .filter_map(|(i, t)| {
            let s = thesaurus.synonyms(t);
            (!s.is_empty()).then_some((i, s))
        })
        .collect()
}

fn count_for(rate: f64, n: usize) -> usize {
    ((rate * n as f64).ceil() as usize).max(1).min(n)
}

/// Replaces `⌈rate · eligible⌉` randomly chosen tokens that have a synonym.
/// Placeholders are never touched and the token count is preserved.
pub fn synonym_replacement(tokens: &[String], rate: f64, thesaurus: &Thesaurus, rng: &mut Rng8) -> Vec<String> {
    let mut out = tokens.to_vec();
    let candidates = eligible(tokens, thesaurus);
    if candidates.is_empty() {
        return out;
    }
    let n = count_for(rate, candidates.len());
    for &(i, syns) in candidates.choose_multiple(rng, n) {
        out[i] = syns.choose(rng).expect("non-empty synonym list").clone();
    }
    out
}

fn random_insertion(tokens: &[String], rate: f64, thesaurus: &Thesaurus, rng: &mut Rng8) -> Vec<String> {
    let mut out = tokens.to_vec();
    let candidates = eligible(tokens, thesaurus);
    if candidates.is_empty() {
        return out;
    }
    for _ in 0..count_for(rate, tokens.len()) {
        let (_, syns) = candidates.choose(rng).expect("non-empty");
        let word = syns.choose(rng).expect("non-empty").clone();
        let at = rng.random_range(0..=out.len());
        out.insert(at, word);
    }
    out
}

fn random_swap(tokens: &[String], rate: f64, rng: &mut Rng8) -> Vec<String> {
    let mut out = tokens.to_vec();
    if out.len() < 2 {
        return out;
    }
    for _ in 0..count_for(rate, tokens.len()) {
        let a = rng.random_range(0..out.len());
        let b = rng.random_range(0..out.len());
        out.swap(a, b);
    }
    out
}

fn random_deletion(tokens: &[String], rate: f64, rng: &mut Rng8) -> Vec<String> {
    if tokens.len() <= 1 {
        return tokens.to_vec();
    }
    let out: Vec<String> = tokens
        .iter()
        .filter(|t| is_placeholder(t) || rng.random::<f64>() >= rate)
        .cloned()
        .collect();
    if out.is_empty() {
        vec![tokens.choose(rng).expect("non-empty").clone()]
    } else {
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdaOp {
    SynonymReplacement,
    RandomInsertion,
    RandomSwap,
    RandomDeletion,
}

impl EdaOp {
    pub const ALL: [EdaOp; 4] = [
        EdaOp::SynonymReplacement,
        EdaOp::RandomInsertion,
        EdaOp::RandomSwap,
        EdaOp::RandomDeletion,
    ];

    pub fn apply(self, tokens: &[String], rate: f64, thesaurus: &Thesaurus, rng: &mut Rng8) -> Vec<String> {
        match self {
            EdaOp::SynonymReplacement => synonym_replacement(tokens, rate, thesaurus, rng),
            EdaOp::RandomInsertion => random_insertion(tokens, rate, thesaurus, rng),
            EdaOp::RandomSwap => random_swap(tokens, rate, rng),
            EdaOp::RandomDeletion => random_deletion(tokens, rate, rng),
        }
    }
}

/// Utterances shorter than `theta` tokens (and not empty), the replacement
/// pool for short utterances.
pub fn short_pool(dialogs: &[Dialog], theta: usize) -> Vec<Utterance> {
    dialogs
        .iter()
        .filter(|d| d.augmented_from.is_none())
        .flat_map(|d| d.utterances.iter())
        .filter(|u| (1..theta).contains(&u.token_len()))
        .cloned()
        .collect()
}

/// One mutation step: a short utterance is replaced by a random short pool
/// utterance, a longer one gets synonym replacement. Identity, time, author,
/// role and reply targets are kept.
pub fn mutate_utterance(
    u: &Utterance,
    cfg: &AugmentConfig,
    pool: &[Utterance],
    thesaurus: &Thesaurus,
    rng: &mut Rng8,
) -> Result<Utterance> {
    let mut out = u.clone();
    if u.token_len() <= cfg.theta {
        let short: Vec<&Utterance> = pool.iter().filter(|p| p.token_len() < cfg.theta).collect();
        let pick = short
            .choose(rng)
            .ok_or_else(|| Error::Config(format!("no utterance shorter than {} tokens to draw from", cfg.theta)))?;
        out.raw_text = pick.raw_text.clone();
        out.text = pick.text.clone();
        out.placeholders = pick.placeholders.clone();
    } else {
        let tokens: Vec<String> = u.tokens().map(str::to_string).collect();
        let text = synonym_replacement(&tokens, cfg.sr_rate, thesaurus, rng).join(" ");
        out.raw_text = text.clone();
        out.text = text;
    }
    Ok(out)
}

fn mutant(d: &Dialog, k: usize, cfg: &AugmentConfig, pool: &[Utterance], thesaurus: &Thesaurus) -> Result<Dialog> {
    let source = d.augmented_from.clone().unwrap_or_else(|| d.id.clone());
    let id = format!("{}#aug{k}", d.id);
    let mut rng = seeded(derive_seed(cfg.seed, &id));
    let mut m = d.clone();
    m.utterances = d
        .utterances
        .iter()
        .map(|u| mutate_utterance(u, cfg, pool, thesaurus, &mut rng))
        .collect::<Result<_>>()?;
    m.id = id;
    m.augmented_from = Some(source);
    Ok(m)
}

/// `cfg.n_mutants` mutants of `d`, named `<id>#aug<k>`. Each mutant is
/// seeded from its own name, so results do not depend on call order.
pub fn augment_dialog(d: &Dialog, cfg: &AugmentConfig, pool: &[Utterance], thesaurus: &Thesaurus) -> Result<Vec<Dialog>> {
    (1..=cfg.n_mutants).map(|k| mutant(d, k, cfg, pool, thesaurus)).collect()
}

/// Appends mutants (round-robin over `originals`) until there are `target`.
fn grow(originals: &[Dialog], target: usize, cfg: &AugmentConfig, pool: &[Utterance], thesaurus: &Thesaurus) -> Result<Vec<Dialog>> {
    let mut out = originals.to_vec();
    let n = originals.len();
    for i in 0..target.saturating_sub(n) {
        out.push(mutant(&originals[i % n], i / n + 1, cfg, pool, thesaurus)?);
    }
    Ok(out)
}

/// Grows NBR to `|NBR| · multiplier`, then grows whichever class is smaller
/// until both match. Originals come first in each returned list.
pub fn balance_bri(
    br: &[Dialog],
    nbr: &[Dialog],
    multiplier: usize,
    cfg: &AugmentConfig,
    pool: &[Utterance],
    thesaurus: &Thesaurus,
) -> Result<(Vec<Dialog>, Vec<Dialog>)> {
    if br.is_empty() || nbr.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "cannot balance {} BR against {} NBR dialogs",
            br.len(),
            nbr.len()
        )));
    }
    if multiplier == 0 {
        return Err(Error::Config("NBR multiplier must be positive".into()));
    }
    let target = (nbr.len() * multiplier).max(br.len());
    Ok((
        grow(br, target, cfg, pool, thesaurus)?,
        grow(nbr, target, cfg, pool, thesaurus)?,
    ))
}

/// Balances every project separately (with its configured multiplier) and
/// returns originals followed by mutants, project by project.
pub fn balance_by_project(dialogs: &[Dialog], cfg: &AugmentConfig, thesaurus: &Thesaurus) -> Result<Vec<Dialog>> {
    use crate::corpus::DialogLabel;
    let pool = short_pool(dialogs, cfg.theta);
    let mut groups: BTreeMap<Option<&str>, (Vec<Dialog>, Vec<Dialog>)> = BTreeMap::new();
    for d in dialogs {
        let entry = groups.entry(d.project.as_deref()).or_default();
        match d.label {
            Some(DialogLabel::BugReport) => entry.0.push(d.clone()),
            Some(DialogLabel::NotBugReport) => entry.1.push(d.clone()),
            None => return Err(Error::Validation(format!("dialog {} has no label", d.id))),
        }
    }
    let mut out = Vec::new();
    for (project, (br, nbr)) in groups {
        let (br, nbr) = balance_bri(&br, &nbr, cfg.multiplier_for(project), cfg, &pool, thesaurus)?;
        out.extend(br);
        out.extend(nbr);
    }
    Ok(out)
}

/// Adds EDA variants of OB, EB and SR sentences until those three classes
/// are as large as the largest of them. Variants are named
/// `<id>#eda<k>` and point back to their source; other labels pass through.
pub fn augment_sentences_eda(
    sentences: &[LabeledSentence],
    cfg: &AugmentConfig,
    thesaurus: &Thesaurus,
) -> Result<Vec<LabeledSentence>> {
    let classes = [SentenceLabel::Observed, SentenceLabel::Expected, SentenceLabel::Steps];
    let by_class: Vec<Vec<&LabeledSentence>> = classes
        .iter()
        .map(|c| sentences.iter().filter(|s| s.label == *c).collect())
        .collect();
    if let Some(i) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyDataset(format!("no {} sentences to augment", classes[i])));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = sentences.to_vec();
    for members in &by_class {
        let n = members.len();
        for i in 0..target - n {
            let src = members[i % n];
            let id = format!("{}#eda{}", src.id, i / n + 1);
            let mut rng = seeded(derive_seed(cfg.seed, &id));
            let op = *EdaOp::ALL.choose(&mut rng).expect("four ops");
            let tokens: Vec<String> = src.text.split_whitespace().map(str::to_string).collect();
            out.push(LabeledSentence {
                text: op.apply(&tokens, cfg.eda_rate, thesaurus, &mut rng).join(" "),
                label: src.label,
                augmented_from: Some(src.source().to_string()),
                id,
            });
        }
    }
    Ok(out)
}

/// Shuffles with a seed derived from `label`; exposed for callers that need
/// the same stream discipline.
pub fn shuffled<T: Clone>(items: &[T], seed: u64, label: &str) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut seeded(derive_seed(seed, label)));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DialogLabel, ReplyLink};
    use chrono::{TimeZone, Utc};

    fn utt(id: &str, t: i64, author: &str, text: &str) -> Utterance {
        Utterance::new(id, Utc.timestamp_opt(t, 0).unwrap(), author, text)
    }

    fn dialog(id: &str, label: DialogLabel) -> Dialog {
        let us = vec![
            utt("a", 0, "ann", "The build fails with a strange error after upgrading the compiler toolchain today"),
            utt("b", 5, "bob", "which os?"),
            utt("c", 9, "ann", "Windows ten, see https://x.y/z for the full error output and the crash"),
            utt("d", 12, "bob", "thanks, looking"),
        ];
        Dialog::new(id, us, vec![ReplyLink::new("b", "a"), ReplyLink::new("c", "b"), ReplyLink::new("d", "c")])
            .unwrap()
            .with_label(label)
            .with_project("p")
    }

    fn pool() -> Vec<Utterance> {
        vec![utt("p1", 0, "x", "ok thanks"), utt("p2", 0, "y", "any update"), utt("p3", 0, "z", "it works now")]
    }

    #[test]
    fn short_utterance_is_replaced_from_pool() {
        let cfg = AugmentConfig::default();
        let u = utt("s", 0, "ann", "server crash error");
        assert_eq!(u.token_len(), 3);
        let m = mutate_utterance(&u, &cfg, &pool(), Thesaurus::bundled(), &mut seeded(1)).unwrap();
        assert!(pool().iter().any(|p| p.text == m.text));
        assert!(m.token_len() < 5);
        assert_eq!((m.id.as_str(), m.timestamp, m.author.as_str()), ("s", u.timestamp, "ann"));
    }

    #[test]
    fn empty_pool_is_a_configuration_error() {
        let u = utt("s", 0, "ann", "crash");
        assert!(matches!(
            mutate_utterance(&u, &AugmentConfig::default(), &[], Thesaurus::bundled(), &mut seeded(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn long_utterance_gets_synonyms_and_keeps_length() {
        let u = utt("l", 0, "ann", "server crash error build fail window update compiler memory problem");
        assert_eq!(u.token_len(), 10);
        let m = mutate_utterance(&u, &AugmentConfig::default(), &pool(), Thesaurus::bundled(), &mut seeded(3)).unwrap();
        assert_eq!(m.token_len(), 10);
        assert!(u.tokens().zip(m.tokens()).any(|(a, b)| a != b));
    }

    #[test]
    fn placeholders_are_never_replaced() {
        let t = Thesaurus::parse("error\tmistake\nfix\trepair").unwrap();
        let toks: Vec<String> = "[URL] error [CODE] fix [VERSION] error".split(' ').map(String::from).collect();
        for s in 0..50 {
            let out = synonym_replacement(&toks, 1.0, &t, &mut seeded(s));
            assert_eq!(out[0], "[URL]");
            assert_eq!(out[2], "[CODE]");
            assert_eq!(out[4], "[VERSION]");
        }
    }

    #[test]
    fn mutants_keep_structure() {
        let d = dialog("d1", DialogLabel::BugReport);
        let cfg = AugmentConfig { n_mutants: 3, ..AugmentConfig::default() };
        let ms = augment_dialog(&d, &cfg, &pool(), Thesaurus::bundled()).unwrap();
        assert_eq!(ms.len(), 3);
        for (k, m) in ms.iter().enumerate() {
            assert_eq!(m.id, format!("d1#aug{}", k + 1));
            assert_eq!(m.augmented_from.as_deref(), Some("d1"));
            assert_eq!(m.utterances.len(), 4);
            assert_eq!(m.reply_links, d.reply_links);
            assert_eq!(m.label, d.label);
            let roles: Vec<_> = m.utterances.iter().map(|u| u.role).collect();
            assert_eq!(roles, d.utterances.iter().map(|u| u.role).collect::<Vec<_>>());
        }
        let none = AugmentConfig { n_mutants: 0, ..AugmentConfig::default() };
        assert!(augment_dialog(&d, &none, &pool(), Thesaurus::bundled()).unwrap().is_empty());
        let again = augment_dialog(&d, &cfg, &pool(), Thesaurus::bundled()).unwrap();
        assert_eq!(serde_json::to_string(&ms).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn angular_counts() {
        let br: Vec<_> = (0..86).map(|i| dialog(&format!("br{i}"), DialogLabel::BugReport)).collect();
        let nbr: Vec<_> = (0..179).map(|i| dialog(&format!("nbr{i}"), DialogLabel::NotBugReport)).collect();
        let cfg = AugmentConfig::default();
        let (b, n) = balance_bri(&br, &nbr, 2, &cfg, &pool(), Thesaurus::bundled()).unwrap();
        assert_eq!((b.len(), n.len()), (358, 358));
        assert_eq!(b[..86], br[..]);
        assert!(b[86..].iter().all(|d| d.augmented_from.is_some() && d.label == Some(DialogLabel::BugReport)));
    }

    #[test]
    fn balanced_input_with_unit_multiplier_is_unchanged() {
        let br: Vec<_> = (0..5).map(|i| dialog(&format!("br{i}"), DialogLabel::BugReport)).collect();
        let nbr: Vec<_> = (0..5).map(|i| dialog(&format!("n{i}"), DialogLabel::NotBugReport)).collect();
        let (b, n) = balance_bri(&br, &nbr, 1, &AugmentConfig::default(), &pool(), Thesaurus::bundled()).unwrap();
        assert_eq!((b, n), (br.clone(), nbr));
        assert!(matches!(
            balance_bri(&[], &br, 2, &AugmentConfig::default(), &pool(), Thesaurus::bundled()),
            Err(Error::EmptyDataset(_))
        ));
    }

    fn sentences(ob: usize, eb: usize, sr: usize) -> Vec<LabeledSentence> {
        let mk = |label, n: usize, tag: &'static str| {
            (0..n).map(move |i| LabeledSentence {
                id: format!("{tag}{i}"),
                text: "the app shows an error when i click the save button".into(),
                label,
                augmented_from: None,
            })
        };
        mk(SentenceLabel::Observed, ob, "ob")
            .chain(mk(SentenceLabel::Expected, eb, "eb"))
            .chain(mk(SentenceLabel::Steps, sr, "sr"))
            .collect()
    }

    #[test]
    fn eda_balances_classes() {
        let cfg = AugmentConfig::default();
        let out = augment_sentences_eda(&sentences(10, 4, 7), &cfg, Thesaurus::bundled()).unwrap();
        for c in [SentenceLabel::Observed, SentenceLabel::Expected, SentenceLabel::Steps] {
            assert_eq!(out.iter().filter(|s| s.label == c).count(), 10);
        }
        assert!(out.iter().filter(|s| s.augmented_from.is_some()).all(|s| s.id.contains("#eda")));
        assert_eq!(out, augment_sentences_eda(&sentences(10, 4, 7), &cfg, Thesaurus::bundled()).unwrap());
        let same = sentences(3, 3, 3);
        assert_eq!(augment_sentences_eda(&same, &cfg, Thesaurus::bundled()).unwrap(), same);
        assert!(augment_sentences_eda(&sentences(3, 0, 3), &cfg, Thesaurus::bundled()).is_err());
    }

    #[test]
    fn eda_ops_behave() {
        let t = Thesaurus::bundled();
        let toks: Vec<String> = "the build fails with an error".split(' ').map(String::from).collect();
        let mut rng = seeded(0);
        assert_eq!(random_swap(&toks, 0.1, &mut rng).len(), toks.len());
        assert!(random_insertion(&toks, 0.1, t, &mut rng).len() > toks.len());
        assert!(!random_deletion(&toks, 1.0, &mut rng).is_empty());
        let mut a = random_swap(&toks, 0.5, &mut rng);
        a.sort();
        let mut b = toks.clone();
        b.sort();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn balancing_equalizes_and_preserves_structure(nb in 1usize..8, nn in 1usize..8, mult in 1usize..4, seed: u64) {
            let br: Vec<_> = (0..nb).map(|i| dialog(&format!("br{i}"), DialogLabel::BugReport)).collect();
            let nbr: Vec<_> = (0..nn).map(|i| dialog(&format!("n{i}"), DialogLabel::NotBugReport)).collect();
            let cfg = AugmentConfig { seed, ..AugmentConfig::default() };
            let (b, n) = balance_bri(&br, &nbr, mult, &cfg, &pool(), Thesaurus::bundled()).unwrap();
            proptest::prop_assert_eq!(b.len(), n.len());
            proptest::prop_assert_eq!(b.len(), (nn * mult).max(nb));
            for (side, label) in [(&b, DialogLabel::BugReport), (&n, DialogLabel::NotBugReport)] {
                for d in side.iter() {
                    proptest::prop_assert_eq!(d.label, Some(label));
                    proptest::prop_assert_eq!(d.utterances.len(), 4);
                    proptest::prop_assert_eq!(&d.reply_links, &br[0].reply_links);
                }
            }
            let again = balance_bri(&br, &nbr, mult, &cfg, &pool(), Thesaurus::bundled()).unwrap();
            proptest::prop_assert_eq!((b, n), again);
        }
    }
}
