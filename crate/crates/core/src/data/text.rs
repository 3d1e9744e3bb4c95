//! Utterance text normalisation.
//!
//! Accent stripping happens before the ASCII-letter filter, so accented Latin
//! text survives as plain ASCII while scripts without a Latin decomposition
//! (CJK, Cyrillic, emoji, ...) are dropped entirely. Stopwords are kept and
//! nothing is lemmatised.

use std::sync::LazyLock;

use regex::Regex;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S*").unwrap());
static MENTION_OR_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[@#]\S*").unwrap());

/// Lowercases, strips accents, removes URLs, @-mentions and #-hashtags,
/// keeps only ASCII letters and spaces, and collapses whitespace.
pub fn preprocess_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let stripped: String = lowered.nfd().filter(|c| !is_combining_mark(*c)).collect();
    // Any whitespace separates tokens; unify it before token-level removal.
    let spaced: String = stripped.chars().map(|c| if c.is_whitespace() { ' ' } else { c }).collect();
    let no_urls = URL.replace_all(&spaced, " ");
    let no_tags = MENTION_OR_TAG.replace_all(&no_urls, " ");
    let letters: String = no_tags
        .chars()
        .filter(|c| c.is_ascii_alphabetic() || *c == ' ')
        .map(|c| c.to_ascii_lowercase())
        .collect();
    letters.split(' ').filter(|t| !t.is_empty()).collect::<Vec<_>>().join(" ")
}
