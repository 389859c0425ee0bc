//! Chat-log ingestion: typed utterances, dialogs, normalization and noise
//! filters.

mod filter;
pub mod lexicon;
mod normalize;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{filter_dialogs, FilterConfig};
pub use normalize::{mask, normalize_text, Masked, Normalized};
pub(crate) use normalize::word_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Placeholder {
    Url,
    Email,
    Html,
    Code,
    Version,
}

impl Placeholder {
    pub const ALL: [Placeholder; 5] = [
        Placeholder::Url,
        Placeholder::Email,
        Placeholder::Html,
        Placeholder::Code,
        Placeholder::Version,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Url => "[URL]",
            Placeholder::Email => "[EMAIL]",
            Placeholder::Html => "[HTML]",
            Placeholder::Code => "[CODE]",
            Placeholder::Version => "[VERSION]",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.token() == token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Reporter,
    Discussant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DialogLabel {
    #[serde(rename = "BR")]
    BugReport,
    #[serde(rename = "NBR")]
    NotBugReport,
}

impl DialogLabel {
    /// Class index in `[P(NBR), P(BR)]` order.
    pub fn index(self) -> usize {
        match self {
            DialogLabel::NotBugReport => 0,
            DialogLabel::BugReport => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            DialogLabel::BugReport
        } else {
            DialogLabel::NotBugReport
        }
    }
}

impl fmt::Display for DialogLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DialogLabel::BugReport => "BR",
            DialogLabel::NotBugReport => "NBR",
        })
    }
}

/// Sentence categories of a bug report, in `(P_b, P_e, P_s, P_o)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SentenceLabel {
    /// Observed behavior.
    #[serde(rename = "OB")]
    Observed,
    /// Expected behavior.
    #[serde(rename = "EB")]
    Expected,
    /// Steps to reproduce.
    #[serde(rename = "SR")]
    Steps,
    #[serde(rename = "OTHER")]
    Other,
}

impl SentenceLabel {
    pub const ALL: [SentenceLabel; 4] = [
        SentenceLabel::Observed,
        SentenceLabel::Expected,
        SentenceLabel::Steps,
        SentenceLabel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "OB" => Some(SentenceLabel::Observed),
            "EB" => Some(SentenceLabel::Expected),
            "SR" => Some(SentenceLabel::Steps),
            "OTHER" => Some(SentenceLabel::Other),
            _ => None,
        }
    }
}

impl fmt::Display for SentenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SentenceLabel::Observed => "OB",
            SentenceLabel::Expected => "EB",
            SentenceLabel::Steps => "SR",
            SentenceLabel::Other => "OTHER",
        })
    }
}

/// A labeled training sentence, one JSON object per line on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    #[serde(default)]
    pub id: String,
    pub text: String,
    pub label: SentenceLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_from: Option<String>,
}

impl LabeledSentence {
    /// The original sentence this one was derived from, or itself.
    pub fn source(&self) -> &str {
        self.augmented_from.as_deref().unwrap_or(&self.id)
    }

    /// Reads labeled sentences. Lines without an id get `"{prefix}{line}"`;
    /// an unknown label is a validation error naming the line.
    pub fn parse_jsonl<R: BufRead>(reader: R, prefix: &str) -> Result<Vec<Self>> {
        #[derive(Deserialize)]
        struct Wire {
            #[serde(default)]
            id: String,
            text: String,
            label: String,
            #[serde(default)]
            augmented_from: Option<String>,
        }
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let w: Wire = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let label = SentenceLabel::parse(&w.label).ok_or_else(|| {
                Error::Validation(format!("line {}: unknown sentence label {:?}", i + 1, w.label))
            })?;
            out.push(Self {
                id: if w.id.is_empty() { format!("{prefix}{}", i + 1) } else { w.id },
                text: w.text,
                label,
                augmented_from: w.augmented_from,
            });
        }
        Ok(out)
    }
}

/// One chat message. On the wire `text` is the raw message and
/// `normalized_text` the normalized one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub author: String,
    #[serde(rename = "text")]
    pub raw_text: String,
    #[serde(rename = "normalized_text", default)]
    pub text: String,
    #[serde(default)]
    pub placeholders: BTreeSet<Placeholder>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reply_to_ids: Vec<String>,
    /// Only meaningful inside a [`Dialog`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        timestamp: DateTime<Utc>,
        author: impl Into<String>,
        raw_text: impl Into<String>,
    ) -> Self {
        let raw_text = raw_text.into();
        let Normalized { text, placeholders } = normalize_text(&raw_text);
        Self {
            id: id.into(),
            timestamp,
            author: author.into(),
            raw_text,
            text,
            placeholders,
            reply_to_ids: Vec::new(),
            role: None,
        }
    }

    /// Recomputes `text` and `placeholders` from `raw_text`.
    pub fn renormalize(&mut self) {
        let Normalized { text, placeholders } = normalize_text(&self.raw_text);
        self.text = text;
        self.placeholders = placeholders;
    }

    /// Raw text with placeholders substituted but otherwise untouched.
    pub fn masked_text(&self) -> String {
        mask(&self.raw_text).text
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }

    pub fn token_len(&self) -> usize {
        self.tokens().count()
    }

    pub fn role(&self) -> Role {
        self.role.unwrap_or(Role::Discussant)
    }
}

/// Chronologically ordered utterances of one channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatLog {
    pub utterances: Vec<Utterance>,
}

impl ChatLog {
    /// Builds a log from utterances, sorting stably by timestamp and rejecting
    /// duplicate ids.
    pub fn new(mut utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::new();
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Validation(format!("duplicate utterance id {:?}", u.id)));
            }
        }
        utterances.sort_by_key(|u| u.timestamp);
        Ok(Self { utterances })
    }

    /// Parses a JSON-lines chat export. Blank lines are skipped; line numbers
    /// in errors are 1-based.
    pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut utterances = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut u: Utterance = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            u.renormalize();
            u.role = None;
            utterances.push(u);
        }
        Self::new(utterances)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(u).expect("utterance serializes"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.as_str(), i))
            .collect()
    }
}

/// A directed reply-to relation: `replier_id` answers `replied_id`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplyLink {
    pub replier_id: String,
    pub replied_id: String,
}

impl ReplyLink {
    pub fn new(replier: impl Into<String>, replied: impl Into<String>) -> Self {
        Self {
            replier_id: replier.into(),
            replied_id: replied.into(),
        }
    }
}

/// One conversation thread with its reply structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
    pub utterances: Vec<Utterance>,
    pub reply_links: Vec<ReplyLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<DialogLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_from: Option<String>,
}

impl Dialog {
    /// Validates the invariants, sorts utterances chronologically and assigns
    /// roles (the author of the first utterance is the reporter).
    pub fn new(
        id: impl Into<String>,
        utterances: Vec<Utterance>,
        reply_links: Vec<ReplyLink>,
    ) -> Result<Self> {
        let dialog = Self {
            id: id.into(),
            project: None,
            utterances,
            reply_links,
            label: None,
            augmented_from: None,
        };
        dialog.validated()
    }

    pub fn with_label(mut self, label: DialogLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_project(mut self, project: impl Into<String>) -> Self {
        self.project = Some(project.into());
        self
    }

    /// Re-establishes ordering and roles and checks the link invariants.
    /// Used for dialogs read from disk.
    pub fn validated(mut self) -> Result<Self> {
        self.utterances.sort_by_key(|u| u.timestamp);
        let index: HashMap<&str, usize> = self
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.as_str(), i))
            .collect();
        if index.len() != self.utterances.len() {
            return Err(Error::Validation(format!(
                "dialog {} has duplicate utterance ids",
                self.id
            )));
        }
        let mut links: Vec<ReplyLink> = Vec::with_capacity(self.reply_links.len());
        for link in &self.reply_links {
            let (Some(&a), Some(&b)) = (
                index.get(link.replier_id.as_str()),
                index.get(link.replied_id.as_str()),
            ) else {
                return Err(Error::Validation(format!(
                    "dialog {}: link {} -> {} references an unknown utterance",
                    self.id, link.replier_id, link.replied_id
                )));
            };
            if a == b {
                continue;
            }
            if self.utterances[a].timestamp < self.utterances[b].timestamp {
                return Err(Error::Validation(format!(
                    "dialog {}: {} replies to the later utterance {}",
                    self.id, link.replier_id, link.replied_id
                )));
            }
            links.push(link.clone());
        }
        links.sort_by_key(|l| (index[l.replier_id.as_str()], index[l.replied_id.as_str()]));
        links.dedup();
        self.reply_links = links;

        if self.utterances.len() > 1 && !self.is_connected(&index) {
            return Err(Error::Validation(format!(
                "dialog {} is not a single connected thread",
                self.id
            )));
        }
        if let Some(first) = self.utterances.first() {
            let reporter = first.author.clone();
            for u in &mut self.utterances {
                u.role = Some(if u.author == reporter {
                    Role::Reporter
                } else {
                    Role::Discussant
                });
            }
        }
        Ok(self)
    }

    fn is_connected(&self, index: &HashMap<&str, usize>) -> bool {
        let n = self.utterances.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.reply_links {
            let (a, b) = (index[l.replier_id.as_str()], index[l.replied_id.as_str()]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn reporter(&self) -> Option<&str> {
        self.utterances.first().map(|u| u.author.as_str())
    }

    pub fn reporter_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.role == Some(Role::Reporter))
    }

    pub fn position(&self, utterance_id: &str) -> Option<usize> {
        self.utterances.iter().position(|u| u.id == utterance_id)
    }

    /// Reply links as `(replier index, replied index)` pairs.
    pub fn link_indices(&self) -> Vec<(usize, usize)> {
        let index: HashMap<&str, usize> = self
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.as_str(), i))
            .collect();
        self.reply_links
            .iter()
            .map(|l| (index[l.replier_id.as_str()], index[l.replied_id.as_str()]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn ts(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_600_000_000 + s, 0).unwrap()
    }

    #[test]
    fn parses_three_lines_in_time_order() {
        let input = r#"{"id":"a","timestamp":"2020-01-01T00:00:00Z","author":"x","text":"hello there"}
{"id":"b","timestamp":"2020-01-01T00:00:05Z","author":"y","text":"the app crashes","reply_to_ids":["a"]}
{"id":"c","timestamp":"2020-01-01T00:00:09Z","author":"x","text":"which version?"}
"#;
        let log = ChatLog::parse_jsonl(input.as_bytes()).unwrap();
        let ids: Vec<_> = log.utterances.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(log.utterances[1].text, "app crash");
        assert_eq!(log.utterances[1].reply_to_ids, ["a"]);
    }

    #[test]
    fn sorts_out_of_order_input() {
        let input = r#"{"id":"b","timestamp":"2020-01-01T00:00:05Z","author":"y","text":"two"}
{"id":"a","timestamp":"2020-01-01T00:00:00Z","author":"x","text":"one"}"#;
        let log = ChatLog::parse_jsonl(input.as_bytes()).unwrap();
        assert_eq!(log.utterances[0].id, "a");
    }

    #[test]
    fn empty_stream_is_empty_log() {
        let log = ChatLog::parse_jsonl("".as_bytes()).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn missing_timestamp_names_the_line() {
        let input = "{\"id\":\"a\",\"timestamp\":\"2020-01-01T00:00:00Z\",\"author\":\"x\",\"text\":\"hi\"}\n{\"id\":\"b\",\"author\":\"x\",\"text\":\"hi\"}\n";
        match ChatLog::parse_jsonl(input.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("timestamp"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = "{\"id\":\"a\",\"timestamp\":\"2020-01-01T00:00:00Z\",\"author\":\"x\",\"text\":\"hi\"}\n{\"id\":\"a\",\"timestamp\":\"2020-01-01T00:00:01Z\",\"author\":\"x\",\"text\":\"hi\"}\n";
        assert!(matches!(
            ChatLog::parse_jsonl(input.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn labeled_sentences_parse_and_reject_unknown_labels() {
        let ok = "{\"text\":\"app crashes\",\"label\":\"OB\"}\n{\"id\":\"x\",\"text\":\"click save\",\"label\":\"SR\"}\n";
        let s = LabeledSentence::parse_jsonl(ok.as_bytes(), "ext-").unwrap();
        assert_eq!(s[0].id, "ext-1");
        assert_eq!(s[1].label, SentenceLabel::Steps);
        let bad = "{\"text\":\"x\",\"label\":\"BUG\"}\n";
        assert!(matches!(LabeledSentence::parse_jsonl(bad.as_bytes(), ""), Err(Error::Validation(_))));
    }

    #[test]
    fn dialog_assigns_roles_from_first_author() {
        let us = vec![
            Utterance::new("2", ts(5), "bob", "what version?"),
            Utterance::new("1", ts(0), "alice", "build fails"),
            Utterance::new("3", ts(9), "alice", "1.2.3"),
        ];
        let d = Dialog::new(
            "d",
            us,
            vec![ReplyLink::new("2", "1"), ReplyLink::new("3", "2")],
        )
        .unwrap();
        let roles: Vec<_> = d.utterances.iter().map(|u| u.role()).collect();
        assert_eq!(roles, [Role::Reporter, Role::Discussant, Role::Reporter]);
    }

    #[test]
    fn dialog_rejects_disconnected_and_backward_links() {
        let us = || {
            vec![
                Utterance::new("1", ts(0), "a", "x"),
                Utterance::new("2", ts(5), "b", "y"),
                Utterance::new("3", ts(9), "c", "z"),
            ]
        };
        assert!(Dialog::new("d", us(), vec![ReplyLink::new("2", "1")]).is_err());
        assert!(Dialog::new(
            "d",
            us(),
            vec![ReplyLink::new("1", "2"), ReplyLink::new("3", "2")]
        )
        .is_err());
        assert!(Dialog::new("d", us(), vec![ReplyLink::new("9", "1")]).is_err());
    }

    proptest! {
        #[test]
        fn chat_log_round_trips(
            msgs in proptest::collection::vec(("[a-z]{1,6}", "\\PC{0,40}", 0i64..100_000), 0..12)
        ) {
            let utterances = msgs
                .iter()
                .enumerate()
                .map(|(i, (author, text, t))| Utterance::new(format!("u{i}"), ts(*t), author.clone(), text.clone()))
                .collect();
            let log = ChatLog::new(utterances).unwrap();
            let again = ChatLog::parse_jsonl(log.to_jsonl().as_bytes()).unwrap();
            prop_assert_eq!(log, again);
        }
    }
}
