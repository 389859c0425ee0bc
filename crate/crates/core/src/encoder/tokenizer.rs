use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Subword ids of one text plus, for every word, the position of its first
/// piece (after `[CLS]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub word_starts: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Vocab {
    /// Words hashed into buckets; ids 0..4 are the special tokens.
    Hashed { size: u32 },
    WordPiece { pieces: HashMap<String, u32> },
}

/// Whitespace/WordPiece tokenizer in the uncased BERT style.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Tokenizer {
    pub fn hashed(vocab_size: usize) -> Result<Self> {
        if vocab_size < 8 {
            return Err(Error::Config("hashed vocabulary needs at least 8 entries".into()));
        }
        Ok(Self {
            vocab: Vocab::Hashed { size: vocab_size as u32 },
            pad: 0,
            unk: 1,
            cls: 2,
            sep: 3,
        })
    }

    /// Reads a `vocab.txt` with one piece per line (line number = id).
    pub fn from_vocab_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pieces = HashMap::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            pieces.insert(line.trim_end().to_string(), i as u32);
        }
        let special = |name: &str| {
            pieces
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("{} lacks {name}", path.display())))
        };
        Ok(Self {
            pad: special(PAD)?,
            unk: special(UNK)?,
            cls: special(CLS)?,
            sep: special(SEP)?,
            vocab: Vocab::WordPiece { pieces },
        })
    }

    pub fn vocab_size(&self) -> usize {
        match &self.vocab {
            Vocab::Hashed { size } => *size as usize,
            Vocab::WordPiece { pieces } => pieces.values().max().map_or(0, |m| *m as usize + 1),
        }
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        match &self.vocab {
            Vocab::Hashed { size } => out.push(4 + (fnv(word) % u64::from(size - 4)) as u32),
            Vocab::WordPiece { pieces } => {
                let chars: Vec<char> = word.chars().collect();
                let mut start = 0;
                let mark = out.len();
                while start < chars.len() {
                    let mut end = chars.len();
                    let mut found = None;
                    while end > start {
                        let mut piece: String = chars[start..end].iter().collect();
                        if start > 0 {
                            piece.insert_str(0, "##");
                        }
                        if let Some(&id) = pieces.get(&piece) {
                            found = Some(id);
                            break;
                        }
                        end -= 1;
                    }
                    match found {
                        Some(id) => {
                            out.push(id);
                            start = end;
                        }
                        None => {
                            out.truncate(mark);
                            out.push(self.unk);
                            return;
                        }
                    }
                }
            }
        }
    }

    /// Encodes at most `max_words` whitespace-separated words, keeping the
    /// whole sequence within `max_len` ids including `[CLS]`/`[SEP]`.
    pub fn encode(&self, text: &str, max_words: usize, max_len: usize) -> Encoding {
        let mut ids = vec![self.cls];
        let mut word_starts = Vec::new();
        let mut pieces = Vec::new();
        for word in text.split_whitespace().take(max_words) {
            pieces.clear();
            self.word_pieces(&word.to_lowercase(), &mut pieces);
            if ids.len() + pieces.len() + 1 > max_len {
                break;
            }
            word_starts.push(ids.len());
            ids.extend_from_slice(&pieces);
        }
        ids.push(self.sep);
        Encoding { ids, word_starts }
    }
}
