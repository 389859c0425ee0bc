//! Pinned word lists shipped with the crate.
//!
//! `stopwords_en.txt` is the scikit-learn English stopword list,
//! `english_words.txt` the 20k most frequent alphabetic English words, and
//! `lemma_exceptions.tsv` the irregular inflections from WordNet 3.0 restricted
//! to that vocabulary. `scripts/build_resources.py` regenerates all three.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

const STOPWORDS: &str = include_str!("../../resources/stopwords_en.txt");
const ENGLISH_WORDS: &str = include_str!("../../resources/english_words.txt");
const LEMMA_EXCEPTIONS: &str = include_str!("../../resources/lemma_exceptions.tsv");

pub struct Lexicon {
    stopwords: HashSet<&'static str>,
    words: HashSet<&'static str>,
    exceptions: HashMap<&'static str, &'static str>,
}

/// (suffix, replacement) pairs tried in order; the first candidate found in
/// the vocabulary wins.
const SUFFIX_RULES: &[(&str, &str)] = &[
    ("ies", "y"),
    ("ches", "ch"),
    ("shes", "sh"),
    ("sses", "ss"),
    ("xes", "x"),
    ("zes", "z"),
    ("es", "e"),
    ("es", ""),
    ("s", ""),
    ("ied", "y"),
    ("ed", "e"),
    ("ed", ""),
    ("ing", "e"),
    ("ing", ""),
    ("men", "man"),
];

const MAX_LEMMA_STEPS: usize = 16;

impl Lexicon {
    pub fn get() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(Lexicon::load)
    }

    fn load() -> Self {
        let stopwords = lines(STOPWORDS).collect();
        let words = lines(ENGLISH_WORDS).collect();
        let mut raw: HashMap<&'static str, &'static str> = HashMap::new();
        for line in lines(LEMMA_EXCEPTIONS) {
            if let Some((form, base)) = line.split_once('\t') {
                if form != base {
                    raw.insert(form, base);
                }
            }
        }
        // Resolve chains so every base is terminal; drop anything cyclic.
        let mut exceptions = HashMap::new();
        for (&form, &base) in &raw {
            let mut cur = base;
            let mut steps = 0;
            while let Some(&next) = raw.get(cur) {
                cur = next;
                steps += 1;
                if steps > raw.len() || cur == form {
                    break;
                }
            }
            if cur != form && !raw.contains_key(cur) {
                exceptions.insert(form, cur);
            }
        }
        Self {
            stopwords,
            words,
            exceptions,
        }
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn is_english_word(&self, token: &str) -> bool {
        self.words.contains(token) || self.stopwords.contains(token)
    }

    /// Dictionary-checked suffix lemmatizer, iterated to a fixpoint so that
    /// `lemmatize(lemmatize(w)) == lemmatize(w)`. Only lowercase ASCII
    /// alphabetic tokens are touched.
    pub fn lemmatize(&self, token: &str) -> String {
        let mut cur = token.to_string();
        for _ in 0..MAX_LEMMA_STEPS {
            match self.lemma_step(&cur) {
                Some(next) if next != cur => cur = next,
                _ => break,
            }
        }
        cur
    }

    fn lemma_step(&self, token: &str) -> Option<String> {
        if !token.bytes().all(|b| b.is_ascii_lowercase()) {
            return None;
        }
        if let Some(base) = self.exceptions.get(token) {
            return Some((*base).to_string());
        }
        if token.len() < 4 {
            return None;
        }
        for (suffix, replacement) in SUFFIX_RULES {
            let Some(stem) = token.strip_suffix(suffix) else {
                continue;
            };
            if *suffix == "s" && (stem.ends_with('s') || stem.ends_with('u') || stem.ends_with('i')) {
                continue;
            }
            let candidate = format!("{stem}{replacement}");
            if candidate.len() >= 3 && candidate != token && self.words.contains(candidate.as_str()) {
                return Some(candidate);
            }
        }
        None
    }
}

fn lines(text: &'static str) -> impl Iterator<Item = &'static str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemmatizes_regular_and_irregular_forms() {
        let lex = Lexicon::get();
        assert_eq!(lex.lemmatize("crashes"), "crash");
        assert_eq!(lex.lemmatize("errors"), "error");
        assert_eq!(lex.lemmatize("failed"), "fail");
        assert_eq!(lex.lemmatize("status"), "status");
        assert_eq!(lex.lemmatize("process"), "process");
    }

    #[test]
    fn lemmatize_is_idempotent_over_vocabulary() {
        let lex = Lexicon::get();
        for w in lines(ENGLISH_WORDS).take(5000) {
            let once = lex.lemmatize(w);
            assert_eq!(lex.lemmatize(&once), once, "{w}");
        }
    }

    #[test]
    fn stopwords_loaded() {
        let lex = Lexicon::get();
        assert!(lex.is_stopword("the"));
        assert!(!lex.is_stopword("crash"));
        assert!(lex.is_english_word("build"));
    }
}
