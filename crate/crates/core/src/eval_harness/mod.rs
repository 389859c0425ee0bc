//! Precision/recall/F1 and the two evaluation protocols: leave-one-project-out
//! for dialogs and grouped k-fold for sentences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{Display, Write as _};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Dialog;
use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of the class.
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    /// Set when a ratio had a zero denominator and was reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: usize,
}

impl MetricReport {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Macro average `(P, R, F1)` over the named classes; absent classes count
    /// as zeros.
    pub fn macro_over(&self, labels: &[&str]) -> (f64, f64, f64) {
        if labels.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let n = labels.len() as f64;
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        for l in labels {
            if let Some(c) = self.class(l) {
                p += c.precision;
                r += c.recall;
                f += c.f1;
            }
        }
        (p / n, r / n, f / n)
    }
}

fn ratio(num: usize, den: usize, what: &str, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("{what} undefined, reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro metrics over the given class list.
pub fn compute_metrics_for<L: PartialEq + Display>(preds: &[L], gold: &[L], classes: &[L]) -> Result<MetricReport> {
    if preds.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            gold.len()
        )));
    }
    let mut out = Vec::with_capacity(classes.len());
    for c in classes {
        let tp = preds.iter().zip(gold).filter(|(p, g)| *p == c && *g == c).count();
        let predicted = preds.iter().filter(|p| *p == c).count();
        let support = gold.iter().filter(|g| *g == c).count();
        let mut warnings = Vec::new();
        let precision = ratio(tp, predicted, "precision", &mut warnings);
        let recall = ratio(tp, support, "recall", &mut warnings);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out.push(ClassMetrics {
            label: c.to_string(),
            precision,
            recall,
            f1,
            support,
            predicted,
            true_positives: tp,
            warnings,
        });
    }
    let n = out.len().max(1) as f64;
    let correct = preds.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(MetricReport {
        macro_precision: out.iter().map(|c| c.precision).sum::<f64>() / n,
        macro_recall: out.iter().map(|c| c.recall).sum::<f64>() / n,
        macro_f1: out.iter().map(|c| c.f1).sum::<f64>() / n,
        accuracy: if gold.is_empty() { 0.0 } else { correct as f64 / gold.len() as f64 },
        total: gold.len(),
        classes: out,
    })
}

/// Metrics over every label that occurs in either sequence.
pub fn compute_metrics<L: Ord + Clone + Display>(preds: &[L], gold: &[L]) -> Result<MetricReport> {
    let classes: Vec<L> = preds.iter().chain(gold).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    compute_metrics_for(preds, gold, &classes)
}

/// Fixed-width table of `(name, precision, recall, f1)` rows with an
/// average line.
pub fn format_table(rows: &[(String, f64, f64, f64)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).chain(["Average".len()]).max().unwrap_or(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}", "Project", "Precision", "Recall", "F1");
    for (name, p, r, f) in rows {
        let _ = writeln!(s, "{name:<width$}  {:>9.2}  {:>9.2}  {:>9.2}", p * 100.0, r * 100.0, f * 100.0);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let avg = |k: fn(&(String, f64, f64, f64)) -> f64| rows.iter().map(k).sum::<f64>() / n * 100.0;
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}",
            "Average",
            avg(|r| r.1),
            avg(|r| r.2),
            avg(|r| r.3)
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectFold {
    pub project: String,
    pub train: Vec<Dialog>,
    pub test: Vec<Dialog>,
}

/// One fold per project: that project's original dialogs form the test side,
/// every other project's dialogs (mutants included) the training side.
/// Mutants of test dialogs are left out entirely.
pub fn cross_project_split(dialogs: &[Dialog]) -> Result<Vec<ProjectFold>> {
    let mut by_project: BTreeMap<&str, Vec<&Dialog>> = BTreeMap::new();
    for d in dialogs {
        let p = d
            .project
            .as_deref()
            .ok_or_else(|| Error::Validation(format!("dialog {} has no project", d.id)))?;
        by_project.entry(p).or_default().push(d);
    }
    if by_project.len() < 2 {
        return Err(Error::EmptyDataset(
            "cross-project evaluation needs at least two projects".into(),
        ));
    }
    Ok(by_project
        .keys()
        .map(|&p| ProjectFold {
            project: p.to_string(),
            train: dialogs
                .iter()
                .filter(|d| d.project.as_deref() != Some(p))
                .cloned()
                .collect(),
            test: by_project[p]
                .iter()
                .filter(|d| d.augmented_from.is_none())
                .map(|&d| d.clone())
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexFold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions item indices into `k` folds. Items sharing a group key (an
/// augmented sentence and its source) always land in the same fold. Groups
/// are shuffled with `seed` and assigned largest first to the currently
/// smallest fold.
pub fn kfold_split(groups: &[String], k: usize, seed: u64) -> Result<Vec<IndexFold>> {
    if k < 2 {
        return Err(Error::Config("k-fold needs k ≥ 2".into()));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    if members.len() < k {
        return Err(Error::EmptyDataset(format!(
            "{} groups cannot fill {k} folds",
            members.len()
        )));
    }
    let mut keys: Vec<&str> = members.keys().copied().collect();
    keys.shuffle(&mut seeded(derive_seed(seed, "kfold")));
    keys.sort_by_key(|g| std::cmp::Reverse(members[g].len()));
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    for g in keys {
        let target = (0..k).min_by_key(|&f| (tests[f].len(), f)).expect("k ≥ 2");
        tests[target].extend(&members[g]);
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let in_test: BTreeSet<usize> = test.iter().copied().collect();
            IndexFold {
                train: (0..groups.len()).filter(|i| !in_test.contains(i)).collect(),
                test,
            }
        })
        .collect())
}
