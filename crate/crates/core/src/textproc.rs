//! Normalization, tokenization, stop words and n-gram counting.
//!
//! Normalization is tuned for Persian-script social media text but works on
//! any script: Arabic letter variants are folded onto their Persian forms,
//! zero-width non-joiners survive, URLs and @-mentions collapse to sentinel
//! tokens and cased scripts are lower-cased.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Replaces every URL.
pub const URL_SENTINEL: &str = "xxurl";
/// Replaces every @-mention.
pub const MENTION_SENTINEL: &str = "xxuser";

const ZWNJ: char = '\u{200C}';

/// The five stop words used to sample the baseline corpus.
pub const PERSIAN_BASELINE_STOPWORDS: [&str; 5] = ["به", "با", "در", "از", "که"];

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(^|[^\p{L}\p{M}\p{N}_@])@+[\p{L}\p{M}\p{N}_]+").unwrap())
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\p{Extended_Pictographic}(?:\p{Emoji_Modifier}|\x{FE0F})*(?:\x{200D}\p{Extended_Pictographic}(?:\p{Emoji_Modifier}|\x{FE0F})*)*|[^\p{P}\s\p{Extended_Pictographic}\p{Emoji_Modifier}\x{FE0F}\x{200D}]+",
        )
        .unwrap()
    })
}

fn hashtag_body_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^#+([\p{L}\p{M}\p{N}_\x{200C}]+)").unwrap())
}

fn unify_letter(c: char) -> char {
    match c {
        '\u{064A}' | '\u{0649}' => '\u{06CC}', // ي ى -> ی
        '\u{0643}' => '\u{06A9}',             // ك -> ک
        _ => c,
    }
}

/// Normalizes raw text. Idempotent.
pub fn normalize(text: &str) -> String {
    let composed: String = text.nfc().map(unify_letter).collect();
    let no_urls = url_re().replace_all(&composed, URL_SENTINEL);
    let no_mentions = mention_re().replace_all(&no_urls, format!("${{1}}{MENTION_SENTINEL}"));
    no_mentions.to_lowercase().nfc().collect()
}

/// Normalized tokens of one document.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStream {
    pub source_doc_id: String,
    pub tokens: Vec<String>,
}

impl TokenStream {
    pub fn new(source_doc_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            source_doc_id: source_doc_id.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn clean_token(raw: &str) -> Option<String> {
    let t = raw.trim_matches(|c: char| c == ZWNJ || c == '\u{200D}' || c == '\u{FE0F}');
    if t.is_empty() {
        None
    } else {
        Some(t.to_string())
    }
}

fn push_plain_tokens(chunk: &str, out: &mut Vec<String>) {
    out.extend(
        token_re()
            .find_iter(chunk)
            .filter_map(|m| clean_token(m.as_str())),
    );
}

/// Splits text into normalized tokens.
///
/// Whitespace and Unicode punctuation separate tokens, emoji stand alone, and
/// `#hashtag` chunks become a single token without the `#` when
/// `keep_hashtags` is set (otherwise they are dropped).
pub fn tokenize(text: &str, keep_hashtags: bool) -> TokenStream {
    TokenStream::new("", tokenize_tokens(text, keep_hashtags))
}

pub(crate) fn tokenize_tokens(text: &str, keep_hashtags: bool) -> Vec<String> {
    let normalized = normalize(text);
    let mut tokens = Vec::new();
    for chunk in normalized.split_whitespace() {
        if chunk.starts_with('#') {
            if let Some(caps) = hashtag_body_re().captures(chunk) {
                let whole = caps.get(0).unwrap();
                if keep_hashtags {
                    if let Some(tag) = clean_token(&caps[1]) {
                        tokens.push(tag);
                    }
                }
                push_plain_tokens(&chunk[whole.end()..], &mut tokens);
                continue;
            }
        }
        push_plain_tokens(chunk, &mut tokens);
    }
    tokens
}

/// Hashtags written inline in `text`, normalized and without the `#`.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    normalize(text)
        .split_whitespace()
        .filter_map(|chunk| hashtag_body_re().captures(chunk))
        .filter_map(|caps| clean_token(&caps[1]))
        .collect()
}

/// Normalizes a hashtag field value: strips leading `#` and applies [`normalize`].
pub fn normalize_hashtag(tag: &str) -> String {
    normalize(tag.trim_start_matches('#'))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("//"))
        .map(str::to_string)
        .collect())
}

/// A set of normalized stop words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn persian_baseline() -> Self {
        Self::from_words(PERSIAN_BASELINE_STOPWORDS)
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(words.into_iter().map(|w| normalize(w.as_ref())).collect())
    }

    /// One entry per line, UTF-8.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_words(read_lines(path.as_ref())?))
    }

    pub fn extend(&mut self, other: &StopWords) {
        self.0.extend(other.0.iter().cloned());
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// N-grams removed from reports by hand (spam and the like).
#[derive(Debug, Clone, Default)]
pub struct NgramDenylist(HashSet<Vec<String>>);

impl NgramDenylist {
    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(
            lines
                .into_iter()
                .map(|l| tokenize_tokens(l.as_ref(), true))
                .filter(|g| !g.is_empty())
                .collect(),
        )
    }

    /// One n-gram per line, tokens separated by whitespace.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_lines(read_lines(path.as_ref())?))
    }

    pub fn contains(&self, gram: &[String]) -> bool {
        self.0.contains(gram)
    }
}

/// Counts of n-grams of a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramTable {
    pub n: usize,
    pub counts: HashMap<Vec<String>, u64>,
    pub total: u64,
}

impl NgramTable {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            counts: HashMap::new(),
            total: 0,
        }
    }

    /// Builds a unigram table directly from a bag of items (hashtags, say).
    pub fn from_unigrams<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut table = Self::empty(1);
        for item in items {
            *table.counts.entry(vec![item.into()]).or_insert(0) += 1;
            table.total += 1;
        }
        table
    }

    pub fn get(&self, gram: &[&str]) -> u64 {
        let key: Vec<String> = gram.iter().map(|s| s.to_string()).collect();
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn relative_frequencies(&self) -> HashMap<Vec<String>, f64> {
        let total = self.total as f64;
        self.counts
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / total))
            .collect()
    }

    /// Highest counts first, ties broken by the n-gram itself.
    pub fn top(&self, k: usize) -> Vec<(Vec<String>, u64)> {
        let mut entries: Vec<_> = self.counts.iter().map(|(g, &c)| (g.clone(), c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(k);
        entries
    }

    pub fn without(&self, denylist: &NgramDenylist) -> Self {
        let counts: HashMap<_, _> = self
            .counts
            .iter()
            .filter(|(g, _)| !denylist.contains(g))
            .map(|(g, &c)| (g.clone(), c))
            .collect();
        let total = counts.values().sum();
        Self {
            n: self.n,
            counts,
            total,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (g, c) in other.counts {
            *self.counts.entry(g).or_insert(0) += c;
        }
        self.total += other.total;
        self
    }
}

/// Counts every n-gram of order `n`, dropping n-grams made entirely of stop
/// words and entries below `min_count`.
pub fn ngram_table(
    docs: &[TokenStream],
    n: usize,
    stopwords: &StopWords,
    min_count: u64,
) -> Result<NgramTable> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
    }
    let mut table = docs
        .par_iter()
        .fold(
            || NgramTable::empty(n),
            |mut acc, doc| {
                for window in doc.tokens.windows(n) {
                    if window.iter().all(|t| stopwords.contains(t)) {
                        continue;
                    }
                    *acc.counts.entry(window.to_vec()).or_insert(0) += 1;
                    acc.total += 1;
                }
                acc
            },
        )
        .reduce(|| NgramTable::empty(n), NgramTable::merge);
    if min_count > 1 {
        table.counts.retain(|_, c| *c >= min_count);
        table.total = table.counts.values().sum();
    }
    Ok(table)
}
