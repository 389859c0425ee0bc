//! Bug-report synthesis: split and prune the reporter's utterances, classify
//! the remaining sentences and assemble them into a structured report.

mod classifier;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{mask, Dialog, Placeholder, SentenceLabel, Utterance};
use crate::error::{Error, Result};

pub use classifier::{
    accuracy, classify_sentence, classify_texts, fine_tune_stage1, fine_tune_stage2, BrsConfig, BrsModel, StageConfig,
    StageEpoch, StageOutcome,
};

/// Sentences longer than this many tokens are dropped at split time.
pub const MAX_SENTENCE_TOKENS: usize = 200;
/// Sentences of at most this many tokens go unless they carry a placeholder.
pub const SHORT_SENTENCE_TOKENS: usize = 5;
/// Words kept in a report title.
pub const TITLE_TOKENS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub dialog_id: String,
    pub utterance_id: String,
    /// Position inside the utterance.
    pub index: usize,
    /// Masked text: placeholders substituted, case and punctuation kept.
    pub text: String,
    /// Token count at split time. Pruning judges length on this, so
    /// stripping a greeting never turns a kept sentence into a short one.
    pub source_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<SentenceLabel>,
}

impl Sentence {
    pub fn new(dialog_id: &str, utterance_id: &str, index: usize, text: &str) -> Self {
        Self {
            dialog_id: dialog_id.into(),
            utterance_id: utterance_id.into(),
            index,
            text: text.into(),
            source_len: token_count(text),
            label: None,
        }
    }

    pub fn with_label(mut self, label: SentenceLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn has_placeholder(&self) -> bool {
        self.text
            .split_whitespace()
            .any(|t| Placeholder::ALL.iter().any(|p| t.contains(p.token())))
    }

    /// Section the sentence belongs to; unlabeled sentences count as OTHER.
    pub fn section(&self) -> SentenceLabel {
        self.label.unwrap_or(SentenceLabel::Other)
    }
}

fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits an utterance's masked text at `.`, `!`, `?` (followed by a space or
/// the end) and at line breaks. Overlong sentences are dropped.
pub fn split_sentences(dialog_id: &str, u: &Utterance) -> Vec<Sentence> {
    split_text(&mask(&u.raw_text).text)
        .into_iter()
        .filter(|s| token_count(s) <= MAX_SENTENCE_TOKENS)
        .enumerate()
        .map(|(i, s)| Sentence::new(dialog_id, &u.id, i, &s))
        .collect()
}

pub fn split_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\n' {
            push_sentence(&mut out, &mut cur);
            continue;
        }
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            while let Some(&n) = chars.peek() {
                if matches!(n, '.' | '!' | '?') {
                    cur.push(n);
                    chars.next();
                } else {
                    break;
                }
            }
            if chars.peek().is_none_or(|n| n.is_whitespace()) {
                push_sentence(&mut out, &mut cur);
            }
        }
    }
    push_sentence(&mut out, &mut cur);
    out
}

fn push_sentence(out: &mut Vec<String>, cur: &mut String) {
    let s = cur.split_whitespace().collect::<Vec<_>>().join(" ");
    if !s.is_empty() {
        out.push(s);
    }
    cur.clear();
}

/// Greeting and thanks phrases removed from sentences.
#[derive(Debug, Clone)]
pub struct Greetings {
    phrases: Vec<String>,
    pattern: Regex,
}

impl Greetings {
    pub fn new(phrases: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut phrases: Vec<String> = phrases
            .into_iter()
            .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
            .filter(|p| !p.is_empty())
            .collect();
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        phrases.dedup();
        if phrases.is_empty() {
            return Err(Error::Config("greeting list is empty".into()));
        }
        let alts: Vec<String> = phrases
            .iter()
            .map(|p| regex::escape(p).replace(' ', r"\s+"))
            .collect();
        // a phrase takes trailing punctuation with it ("thanks!", "hi guys,")
        let pattern = Regex::new(&format!(r"(?i)\b(?:{})\b[,.;:!]*", alts.join("|")))
            .map_err(|e| Error::Config(format!("greeting pattern: {e}")))?;
        Ok(Self { phrases, pattern })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn bundled() -> &'static Self {
        static G: OnceLock<Greetings> = OnceLock::new();
        G.get_or_init(|| Self::parse(include_str!("../../resources/greetings.txt")).expect("bundled greetings"))
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    /// Removes every phrase occurrence until none is left.
    pub fn strip(&self, text: &str) -> String {
        let mut cur = text.to_string();
        loop {
            let next = self.pattern.replace_all(&cur, " ");
            let next = next.split_whitespace().collect::<Vec<_>>().join(" ");
            let next = next
                .trim_matches(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':' | '-'))
                .to_string();
            if next == cur {
                return cur;
            }
            cur = next;
        }
    }
}

fn has_content(text: &str) -> bool {
    text.chars().any(char::is_alphanumeric)
}

/// Drops short sentences without placeholders, strips greetings and drops
/// sentences left without content. Idempotent.
pub fn prune_reporter_utterances(sentences: &[Sentence], greetings: &Greetings) -> Vec<Sentence> {
    sentences
        .iter()
        .filter(|s| s.source_len > SHORT_SENTENCE_TOKENS || s.has_placeholder())
        .filter_map(|s| {
            let text = greetings.strip(&s.text);
            has_content(&text).then(|| Sentence { text, ..s.clone() })
        })
        .collect()
}

/// Split and pruned sentences of the dialog's reporter, in dialog order.
pub fn reporter_sentences(dialog: &Dialog, greetings: &Greetings) -> Vec<Sentence> {
    let split: Vec<Sentence> = dialog
        .reporter_utterances()
        .flat_map(|u| split_sentences(&dialog.id, u))
        .collect();
    prune_reporter_utterances(&split, greetings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub dialog_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
    pub title: String,
    pub description: Vec<Sentence>,
    pub observed_behavior: Vec<Sentence>,
    pub expected_behavior: Vec<Sentence>,
    pub steps_to_reproduce: Vec<Sentence>,
}

impl BugReport {
    pub fn section(&self, label: SentenceLabel) -> &[Sentence] {
        match label {
            SentenceLabel::Observed => &self.observed_behavior,
            SentenceLabel::Expected => &self.expected_behavior,
            SentenceLabel::Steps => &self.steps_to_reproduce,
            SentenceLabel::Other => &self.description,
        }
    }

    pub fn len(&self) -> usize {
        SentenceLabel::ALL.iter().map(|&l| self.section(l).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_markdown(&self, format: ReportFormat) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# {}\n", self.title);
        let sections = [
            ("Description", SentenceLabel::Other),
            ("Observed Behavior", SentenceLabel::Observed),
            ("Expected Behavior", SentenceLabel::Expected),
            ("Steps to Reproduce", SentenceLabel::Steps),
        ];
        for (heading, label) in sections {
            let _ = writeln!(md, "## {heading}\n");
            let body = self.section(label);
            if body.is_empty() {
                md.push_str("_None._\n\n");
                continue;
            }
            match (format, label) {
                (ReportFormat::IssueTracker, SentenceLabel::Steps) => {
                    for (i, s) in body.iter().enumerate() {
                        let _ = writeln!(md, "{}. {}", i + 1, s.text);
                    }
                }
                (ReportFormat::IssueTracker, _) => {
                    for s in body {
                        let _ = writeln!(md, "- {}", s.text);
                    }
                }
                (ReportFormat::Plain, _) => {
                    let text: Vec<&str> = body.iter().map(|s| s.text.as_str()).collect();
                    md.push_str(&text.join(" "));
                    md.push('\n');
                }
            }
            md.push('\n');
        }
        if format == ReportFormat::IssueTracker {
            let _ = writeln!(md, "---\nReported from chat dialog `{}`.", self.dialog_id);
        }
        md
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    /// Prose paragraphs under each heading.
    #[default]
    Plain,
    /// Bullets and a numbered step list, ready to paste into an issue.
    IssueTracker,
}

/// Groups labeled sentences into report sections, each in dialog order
/// (utterance position, then sentence index). Input order is irrelevant.
pub fn assemble_report(dialog: &Dialog, labeled: &[Sentence]) -> Result<BugReport> {
    if labeled.is_empty() {
        return Err(Error::InsufficientContent(dialog.id.clone()));
    }
    let pos: HashMap<&str, usize> = dialog
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| (u.id.as_str(), i))
        .collect();
    let mut sorted = Vec::with_capacity(labeled.len());
    for s in labeled {
        let p = *pos.get(s.utterance_id.as_str()).ok_or_else(|| {
            Error::Validation(format!("sentence from {} is not in dialog {}", s.utterance_id, dialog.id))
        })?;
        sorted.push((p, s));
    }
    sorted.sort_by(|(pa, a), (pb, b)| (pa, a.index, &a.text).cmp(&(pb, b.index, &b.text)));

    let take = |label: SentenceLabel| -> Vec<Sentence> {
        sorted
            .iter()
            .filter(|(_, s)| s.section() == label)
            .map(|(_, s)| (*s).clone())
            .collect()
    };
    let mut report = BugReport {
        dialog_id: dialog.id.clone(),
        project: dialog.project.clone(),
        title: String::new(),
        description: take(SentenceLabel::Other),
        observed_behavior: take(SentenceLabel::Observed),
        expected_behavior: take(SentenceLabel::Expected),
        steps_to_reproduce: take(SentenceLabel::Steps),
    };
    let first = report
        .observed_behavior
        .first()
        .or(report.description.first())
        .unwrap_or(sorted[0].1);
    report.title = first
        .text
        .split_whitespace()
        .take(TITLE_TOKENS)
        .collect::<Vec<_>>()
        .join(" ");
    Ok(report)
}
