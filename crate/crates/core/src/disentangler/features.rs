use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;

use crate::corpus::{ChatLog, Utterance};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded};

/// Number of hand-engineered features appended after the two averaged
/// embeddings.
pub const HANDCRAFTED: usize = 6;

/// Static word vectors used for the averaged-embedding part of the pair
/// features. Words missing from a loaded table (or every word, when no table
/// is given) get a deterministic pseudo-random vector derived from the word.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    seed: u64,
    table: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn hashed(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            table: HashMap::new(),
        }
    }

    /// Reads a GloVe-style text file: `word v1 v2 ... vd` per line.
    pub fn load_text(path: &Path, seed: u64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            table.insert(word.to_string(), values);
        }
        let dim = dim.ok_or_else(|| Error::EmptyDataset(format!("{} has no vectors", path.display())))?;
        Ok(Self { dim, seed, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, word: &str) -> Vec<f64> {
        if let Some(v) = self.table.get(word) {
            return v.clone();
        }
        let mut rng = seeded(derive_seed(self.seed, word));
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim).map(|_| rng.random_range(-scale..=scale)).collect()
    }

    pub fn average<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for t in tokens {
            for (s, v) in sum.iter_mut().zip(self.vector(t)) {
                *s += v;
            }
            n += 1;
        }
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
        sum
    }
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@[\w.-]+").unwrap())
}

/// Whether `text` @-mentions `author` (case-insensitive, whole handle).
pub fn mentions(text: &str, author: &str) -> bool {
    if author.is_empty() {
        return false;
    }
    mention_re().find_iter(text).any(|m| {
        m.as_str()[1..]
            .trim_end_matches(['.', '-'])
            .eq_ignore_ascii_case(author)
    })
}

pub fn jaccard(a: &Utterance, b: &Utterance) -> f64 {
    let sa: HashSet<&str> = a.tokens().collect();
    let sb: HashSet<&str> = b.tokens().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        // two empty texts are identical
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// An utterance looks like a thread opener when it mentions nobody and its
/// author has not spoken within the preceding `window` utterances.
pub fn looks_like_opener(ctx: &ChatLog, idx: usize, window: usize) -> bool {
    let u = &ctx.utterances[idx];
    if mention_re().is_match(&u.raw_text) {
        return false;
    }
    let start = idx.saturating_sub(window);
    !ctx.utterances[start..idx].iter().any(|p| p.author == u.author)
}

/// Feature vector for "utterance `replier` replies to utterance `replied`",
/// both given as indices into `ctx`. `replier == replied` encodes the
/// "starts a new thread" option.
///
/// Layout: `avg(replier) ⊕ avg(replied) ⊕ [log1p(gap seconds), distance /
/// window, same author, mentions replied author, token Jaccard, replied looks
/// like an opener]`.
pub fn featurize_pair(
    replier: usize,
    replied: usize,
    ctx: &ChatLog,
    vectors: &WordVectors,
    window: usize,
) -> Result<Vec<f64>> {
    if replier < replied {
        return Err(Error::Validation(format!(
            "replier #{replier} precedes replied #{replied}"
        )));
    }
    let (Some(a), Some(b)) = (ctx.utterances.get(replier), ctx.utterances.get(replied)) else {
        return Err(Error::Validation("utterance index out of range".into()));
    };
    let gap = (a.timestamp - b.timestamp).num_milliseconds().max(0) as f64 / 1000.0;
    let mut features = vectors.average(a.tokens());
    features.extend(vectors.average(b.tokens()));
    features.extend([
        gap.ln_1p(),
        (replier - replied) as f64 / window.max(1) as f64,
        f64::from(u8::from(a.author == b.author)),
        f64::from(u8::from(replier != replied && mentions(&a.raw_text, &b.author))),
        jaccard(a, b),
        f64::from(u8::from(looks_like_opener(ctx, replied, window))),
    ]);
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn log(msgs: &[(&str, &str, i64)]) -> ChatLog {
        ChatLog::new(
            msgs.iter()
                .enumerate()
                .map(|(i, (a, t, s))| Utterance::new(format!("u{i}"), Utc.timestamp_opt(*s, 0).unwrap(), *a, *t))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mention_flag() {
        let l = log(&[("bob", "the build fails", 0), ("ann", "@bob which os?", 5)]);
        let v = WordVectors::hashed(4, 0);
        let f = featurize_pair(1, 0, &l, &v, 50).unwrap();
        assert_eq!(f[8 + 3], 1.0);
        assert_eq!(f[8 + 2], 0.0);
    }

    #[test]
    fn identical_texts_have_unit_jaccard() {
        let l = log(&[("bob", "npm install fails", 0), ("ann", "npm install fails", 5)]);
        let f = featurize_pair(1, 0, &l, &WordVectors::hashed(4, 0), 50).unwrap();
        assert_eq!(f[8 + 4], 1.0);
    }

    #[test]
    fn zero_gap_gives_zero_log_gap() {
        let l = log(&[("bob", "a", 100), ("ann", "b", 100)]);
        let f = featurize_pair(1, 0, &l, &WordVectors::hashed(4, 0), 50).unwrap();
        assert_eq!(f[8], 0.0);
        let l = log(&[("bob", "a", 0), ("ann", "b", 9)]);
        let f = featurize_pair(1, 0, &l, &WordVectors::hashed(4, 0), 50).unwrap();
        assert!((f[8] - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn earlier_replier_is_a_contract_violation() {
        let l = log(&[("bob", "a", 0), ("ann", "b", 5)]);
        assert!(featurize_pair(0, 1, &l, &WordVectors::hashed(4, 0), 50).is_err());
    }

    #[test]
    fn featurization_is_deterministic_and_fixed_length() {
        let l = log(&[("bob", "server crash", 0), ("ann", "log please", 5), ("bob", "here", 7)]);
        let v = WordVectors::hashed(8, 3);
        let a = featurize_pair(2, 0, &l, &v, 50).unwrap();
        let b = featurize_pair(2, 0, &l, &v, 50).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * 8 + HANDCRAFTED);
    }

    #[test]
    fn opener_heuristic() {
        let l = log(&[("bob", "anyone seen this crash?", 0), ("ann", "@bob yes", 5), ("bob", "ok", 7)]);
        assert!(looks_like_opener(&l, 0, 50));
        assert!(!looks_like_opener(&l, 1, 50));
        assert!(!looks_like_opener(&l, 2, 50));
    }
}
