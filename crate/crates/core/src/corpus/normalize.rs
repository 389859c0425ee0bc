//! Placeholder masking and text normalization.
//!
//! Masking runs on the raw message in a fixed order (code, HTML, URL, email,
//! version) so that e.g. URLs inside code fences are counted as code. The
//! normalizer then lowercases, expands contractions, rewrites emoji as ASCII
//! words, lemmatizes and drops stopwords. Stopwords are dropped after
//! placeholder substitution, so placeholders always survive.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use super::lexicon::Lexicon;
use super::Placeholder;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masked {
    /// Raw text with placeholders substituted; case and line breaks kept.
    pub text: String,
    pub placeholders: BTreeSet<Placeholder>,
    /// Non-whitespace characters that were swallowed by `[CODE]`.
    pub code_chars: usize,
    /// Non-whitespace characters of the raw input.
    pub total_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    pub placeholders: BTreeSet<Placeholder>,
}

struct Patterns {
    code: Vec<Regex>,
    html: Regex,
    url: Regex,
    email: Regex,
    version: Regex,
    token: Regex,
    spaces: Regex,
}

fn patterns() -> &'static Patterns {
    static PATTERNS: OnceLock<Patterns> = OnceLock::new();
    PATTERNS.get_or_init(|| Patterns {
        code: vec![
            Regex::new(r"(?s)```.*?(?:```|\z)").unwrap(),
            // two or more consecutive indented lines or stack frames
            Regex::new(
                r"(?m)(?:^(?:(?:\t| {4})[^\n]*\S[^\n]*|[ \t]*at [^\s(]+\([^\n]*\)[ \t]*)(?:\n|\z)){2,}",
            )
            .unwrap(),
            Regex::new(r"`[^`\n]+`").unwrap(),
        ],
        html: Regex::new(r"</?[A-Za-z][A-Za-z0-9-]*(?:\s[^<>]*)?/?>").unwrap(),
        url: Regex::new(r#"\b[A-Za-z][A-Za-z0-9+.-]*://[^\s<>"'`]*[^\s<>"'`.,;:!?)\]]"#).unwrap(),
        email: Regex::new(r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}\b")
            .unwrap(),
        version: Regex::new(r"\b[vV]\d+(?:\.\d+)*\b|\b\d+\.\d+\.\d+(?:\.\d+)*(?:-[0-9A-Za-z]+)?\b")
            .unwrap(),
        token: Regex::new(r"\[(?:url|email|html|code|version)\]|[\p{L}\p{N}]+(?:_[\p{L}\p{N}]+)*")
            .unwrap(),
        spaces: Regex::new(r"[ \t]+").unwrap(),
    })
}

fn non_ws(s: &str) -> usize {
    s.chars().filter(|c| !c.is_whitespace()).count()
}

/// Substitutes URL/EMAIL/HTML/CODE/VERSION spans with bracketed placeholders.
pub fn mask(raw: &str) -> Masked {
    let p = patterns();
    let mut placeholders = BTreeSet::new();
    let total_chars = non_ws(raw);
    let mut code_chars = 0;

    let mut text = raw.replace("\r\n", "\n");
    for re in &p.code {
        if re.is_match(&text) {
            code_chars += re.find_iter(&text).map(|m| non_ws(m.as_str())).sum::<usize>();
            placeholders.insert(Placeholder::Code);
            // keep the line break a block match swallowed
            text = re
                .replace_all(&text, |c: &regex::Captures| {
                    if c[0].ends_with('\n') { " [CODE] \n" } else { " [CODE] " }
                })
                .into_owned();
        }
    }
    for (re, ph) in [
        (&p.html, Placeholder::Html),
        (&p.url, Placeholder::Url),
        (&p.email, Placeholder::Email),
        (&p.version, Placeholder::Version),
    ] {
        if re.is_match(&text) {
            placeholders.insert(ph);
            text = re.replace_all(&text, format!(" {} ", ph.token())).into_owned();
        }
    }

    let text = text
        .lines()
        .map(|line| p.spaces.replace_all(line, " ").trim().to_string())
        .filter(|line| !line.is_empty())
        .collect::<Vec<_>>()
        .join("\n");

    Masked {
        text,
        placeholders,
        code_chars,
        total_chars,
    }
}

const CONTRACTIONS: &[(&str, &str)] = &[
    ("won't", "will not"),
    ("can't", "cannot"),
    ("shan't", "shall not"),
    ("ain't", "is not"),
    ("let's", "let us"),
    ("it's", "it is"),
    ("that's", "that is"),
    ("what's", "what is"),
    ("there's", "there is"),
    ("here's", "here is"),
    ("he's", "he is"),
    ("she's", "she is"),
    ("who's", "who is"),
    ("where's", "where is"),
    ("how's", "how is"),
    ("y'all", "you all"),
    ("n't", " not"),
    ("'re", " are"),
    ("'m", " am"),
    ("'ll", " will"),
    ("'ve", " have"),
    ("'d", " would"),
    ("'s", ""),
];

fn expand_contractions(text: &str) -> String {
    let mut out = text.replace(['\u{2019}', '\u{2018}'], "'");
    for (short, long) in CONTRACTIONS {
        if out.contains(short) {
            out = out.replace(short, long);
        }
    }
    out
}

const EMOJI: &[(char, &str)] = &[
    ('\u{1F600}', "grinning"),
    ('\u{1F601}', "grinning"),
    ('\u{1F602}', "laughing"),
    ('\u{1F603}', "smile"),
    ('\u{1F604}', "smile"),
    ('\u{1F605}', "sweat_smile"),
    ('\u{1F606}', "laughing"),
    ('\u{1F609}', "wink"),
    ('\u{1F60A}', "smile"),
    ('\u{1F60D}', "heart_eyes"),
    ('\u{1F610}', "neutral_face"),
    ('\u{1F615}', "confused"),
    ('\u{1F61E}', "disappointed"),
    ('\u{1F622}', "cry"),
    ('\u{1F62D}', "sob"),
    ('\u{1F620}', "angry"),
    ('\u{1F621}', "rage"),
    ('\u{1F631}', "scream"),
    ('\u{1F642}', "slight_smile"),
    ('\u{1F643}', "upside_down"),
    ('\u{1F644}', "eye_roll"),
    ('\u{1F914}', "thinking"),
    ('\u{1F926}', "facepalm"),
    ('\u{1F937}', "shrug"),
    ('\u{1F389}', "tada"),
    ('\u{1F525}', "fire"),
    ('\u{1F41B}', "bug"),
    ('\u{1F44D}', "thumbs_up"),
    ('\u{1F44E}', "thumbs_down"),
    ('\u{1F44B}', "wave"),
    ('\u{1F44F}', "clap"),
    ('\u{1F64F}', "pray"),
    ('\u{1F680}', "rocket"),
    ('\u{1F4A5}', "boom"),
    ('\u{2764}', "heart"),
    ('\u{2705}', "check_mark"),
    ('\u{274C}', "cross_mark"),
    ('\u{26A0}', "warning"),
];

fn is_emoji(c: char) -> bool {
    matches!(c as u32, 0x1F000..=0x1FAFF | 0x2600..=0x27BF)
}

fn replace_emoji(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\u{FE0F}' | '\u{200D}' => {}
            c if is_emoji(c) => {
                let name = EMOJI
                    .iter()
                    .find(|(e, _)| *e == c)
                    .map(|(_, n)| *n)
                    .unwrap_or("emoji");
                out.push(' ');
                out.push_str(name);
                out.push(' ');
            }
            c => out.push(c),
        }
    }
    out
}

/// Splits lowercase text into word tokens, keeping placeholder tokens intact
/// (returned in their canonical uppercase form).
pub(crate) fn word_tokens(lowercase: &str) -> Vec<String> {
    patterns()
        .token
        .find_iter(lowercase)
        .map(|m| {
            let t = m.as_str();
            if t.starts_with('[') {
                t.to_uppercase()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Full normalization: mask, lowercase, expand contractions, rewrite emoji,
/// lemmatize and drop stopwords. Deterministic and idempotent.
pub fn normalize_text(raw: &str) -> Normalized {
    let lexicon = Lexicon::get();
    let masked = mask(raw);
    let text = replace_emoji(&masked.text).to_lowercase();
    let text = expand_contractions(&text);

    let mut out: Vec<String> = Vec::new();
    for token in word_tokens(&text) {
        if Placeholder::from_token(&token).is_some() {
            out.push(token);
            continue;
        }
        if lexicon.is_stopword(&token) {
            continue;
        }
        let lemma = lexicon.lemmatize(&token);
        if lexicon.is_stopword(&lemma) {
            continue;
        }
        out.push(lemma);
    }
    Normalized {
        text: out.join(" "),
        placeholders: masked.placeholders,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn url_is_substituted_and_stopwords_dropped() {
        let n = normalize_text("Check https://a.b/c please");
        assert_eq!(n.text, "check [URL]");
        assert_eq!(n.placeholders, BTreeSet::from([Placeholder::Url]));
    }

    #[test]
    fn empty_string_normalizes_to_empty() {
        let n = normalize_text("");
        assert_eq!(n.text, "");
        assert!(n.placeholders.is_empty());
    }

    #[test]
    fn email_and_version_placeholders() {
        let n = normalize_text("mail me at x@y.com, version 1.2.3");
        assert!(n.text.contains("[EMAIL]"), "{}", n.text);
        assert!(n.text.contains("[VERSION]"), "{}", n.text);
        assert_eq!(
            n.placeholders,
            BTreeSet::from([Placeholder::Email, Placeholder::Version])
        );
    }

    #[test]
    fn code_html_and_v_prefixed_versions() {
        let m = mask("upgrade to v2.1 then run `npm i` and see <div class=\"x\">");
        assert_eq!(m.text, "upgrade to [VERSION] then run [CODE] and see [HTML]");
        let m = mask("two dots only 1.2 is not a version");
        assert!(m.placeholders.is_empty());
    }

    #[test]
    fn stack_trace_block_is_code() {
        let raw = "it blows up:\n    at com.foo.Bar.run(Bar.java:10)\n    at com.foo.Main.main(Main.java:3)\nany idea?";
        let m = mask(raw);
        assert!(m.placeholders.contains(&Placeholder::Code));
        assert_eq!(m.text, "it blows up:\n[CODE]\nany idea?");
        assert!(m.code_chars > 0 && m.code_chars < m.total_chars);
    }

    #[test]
    fn url_inside_code_fence_counts_as_code() {
        let m = mask("```\ncurl https://x.y/z\n```");
        assert_eq!(m.placeholders, BTreeSet::from([Placeholder::Code]));
        assert_eq!(m.code_chars, m.total_chars);
    }

    #[test]
    fn contractions_and_emoji() {
        let n = normalize_text("It doesn't work \u{1F41B}\u{1F44D}");
        assert_eq!(n.text, "work bug thumbs_up");
    }

    #[test]
    fn lemmatizes_content_words() {
        let n = normalize_text("The builds crashed with errors");
        assert_eq!(n.text, "build crash error");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "\\PC{0,80}") {
            let once = normalize_text(&raw);
            let twice = normalize_text(&once.text);
            prop_assert_eq!(&once.text, &twice.text);
        }

        #[test]
        fn normalize_is_idempotent_on_chatty_text(
            words in proptest::collection::vec(
                prop_oneof![
                    Just("https://github.com/x/y/issues/3".to_string()),
                    Just("me@host.org".to_string()),
                    Just("v1.2".to_string()),
                    Just("`npm test`".to_string()),
                    Just("<br/>".to_string()),
                    Just("Don't".to_string()),
                    Just("\u{1F642}".to_string()),
                    "[a-zA-Z]{1,10}",
                    "[0-9.]{1,6}",
                ],
                0..20,
            )
        ) {
            let raw = words.join(" ");
            let once = normalize_text(&raw);
            prop_assert_eq!(&normalize_text(&once.text).text, &once.text);
            prop_assert_eq!(once.text.to_lowercase(), once.text.to_lowercase());
            for tok in once.text.split(' ').filter(|t| !t.starts_with('[')) {
                prop_assert_eq!(tok.to_lowercase(), tok.to_string());
            }
        }
    }
}
