use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../resources/thesaurus.tsv");

/// Word → single-token synonyms, read from `word<TAB>syn,syn,...` lines.
#[derive(Debug, Clone, Default)]
pub struct Thesaurus {
    entries: HashMap<String, Vec<String>>,
}

impl Thesaurus {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected word<TAB>synonyms".into(),
            })?;
            let syns: Vec<String> = syns
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty() && *s != word && !s.contains(char::is_whitespace))
                .map(str::to_string)
                .collect();
            if !syns.is_empty() {
                entries.insert(word.to_string(), syns);
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// The thesaurus shipped with the crate (derived from WordNet 3.0).
    pub fn bundled() -> &'static Thesaurus {
        static T: OnceLock<Thesaurus> = OnceLock::new();
        T.get_or_init(|| Thesaurus::parse(BUNDLED).expect("bundled thesaurus parses"))
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_has_common_words() {
        let t = Thesaurus::bundled();
        assert!(t.len() > 5000);
        assert!(t.synonyms("error").contains(&"mistake".to_string()));
        assert!(t.synonyms("qwxz").is_empty());
    }

    #[test]
    fn malformed_line_is_reported() {
        assert!(matches!(Thesaurus::parse("ok\ta\nbroken"), Err(Error::Parse { line: 2, .. })));
    }
}
