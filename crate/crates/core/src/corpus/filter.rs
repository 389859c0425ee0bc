use serde::{Deserialize, Serialize};

use super::lexicon::Lexicon;
use super::{mask, Dialog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Minimum share of alphabetic tokens that must be recognized English.
    pub english_threshold: f64,
    /// Dialogs with a larger share of code characters are dropped.
    pub max_code_ratio: f64,
    /// Channel bot accounts, matched case-insensitively.
    pub bot_names: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            english_threshold: 0.5,
            max_code_ratio: 0.9,
            bot_names: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rejection {
    NonEnglish,
    MostlyCode,
    Bot,
}

fn english_share(dialog: &Dialog) -> Option<f64> {
    let lexicon = Lexicon::get();
    let mut total = 0usize;
    let mut known = 0usize;
    for u in &dialog.utterances {
        let masked = mask(&u.raw_text).text.to_lowercase();
        for tok in super::word_tokens(&masked) {
            if tok.starts_with('[') || !tok.chars().all(|c| c.is_alphabetic()) {
                continue;
            }
            total += 1;
            if tok.is_ascii()
                && (lexicon.is_english_word(&tok) || lexicon.is_english_word(&lexicon.lemmatize(&tok)))
            {
                known += 1;
            }
        }
    }
    (total > 0).then(|| known as f64 / total as f64)
}

fn code_ratio(dialog: &Dialog) -> f64 {
    let (mut code, mut total) = (0usize, 0usize);
    for u in &dialog.utterances {
        let m = mask(&u.raw_text);
        code += m.code_chars;
        total += m.total_chars;
    }
    if total == 0 {
        0.0
    } else {
        code as f64 / total as f64
    }
}

fn rejection(dialog: &Dialog, cfg: &FilterConfig) -> Option<Rejection> {
    let is_bot = |author: &str| cfg.bot_names.iter().any(|b| b.eq_ignore_ascii_case(author));
    if dialog.utterances.iter().any(|u| is_bot(&u.author)) {
        return Some(Rejection::Bot);
    }
    if code_ratio(dialog) > cfg.max_code_ratio {
        return Some(Rejection::MostlyCode);
    }
    if english_share(dialog).is_some_and(|s| s < cfg.english_threshold) {
        return Some(Rejection::NonEnglish);
    }
    None
}

/// Drops non-English dialogs, dialogs dominated by code or stack traces, and
/// dialogs a channel bot takes part in. Order of the survivors is preserved.
pub fn filter_dialogs(dialogs: Vec<Dialog>, cfg: &FilterConfig) -> Vec<Dialog> {
    dialogs
        .into_iter()
        .filter(|d| match rejection(d, cfg) {
            None => true,
            Some(reason) => {
                tracing::debug!(dialog = %d.id, ?reason, "dropping noisy dialog");
                false
            }
        })
        .collect()
}
