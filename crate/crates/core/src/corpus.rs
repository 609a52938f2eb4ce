//! Document ingestion, keyword rule filtering and time slicing.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{self, TokenStream};

/// One short text with its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub author_id: String,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub account_created_at: Option<DateTime<Utc>>,
    pub language: String,
    #[serde(default)]
    pub hashtags: Vec<String>,
}

impl Document {
    pub fn tokens(&self, keep_hashtags: bool) -> TokenStream {
        TokenStream::new(
            self.id.clone(),
            textproc::tokenize_tokens(&self.text, keep_hashtags),
        )
    }

    /// Hashtags from the metadata field and the text, normalized, without duplicates.
    pub fn all_hashtags(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.hashtags
            .iter()
            .map(|h| textproc::normalize_hashtag(h))
            .chain(textproc::extract_hashtags(&self.text))
            .filter(|h| !h.is_empty() && seen.insert(h.clone()))
            .collect()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if let Some(bad) = self
            .hashtags
            .iter()
            .find(|h| h.contains('#') || h.chars().any(char::is_whitespace) || h.is_empty())
        {
            return Err(format!("invalid hashtag {bad:?}"));
        }
        Ok(())
    }
}

/// A named, ordered collection of documents with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub language: String,
    pub rule_set_id: String,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, language: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            language: language.into(),
            rule_set_id: String::new(),
            documents: Vec::new(),
        }
    }

    /// Builds a corpus, rejecting duplicate ids.
    pub fn from_documents(
        name: impl Into<String>,
        language: impl Into<String>,
        documents: Vec<Document>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate document id {}", d.id)));
            }
        }
        let mut corpus = Self::new(name, language);
        corpus.documents = documents;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    pub fn with_documents(&self, documents: Vec<Document>) -> Self {
        Self {
            name: self.name.clone(),
            language: self.language.clone(),
            rule_set_id: self.rule_set_id.clone(),
            documents,
        }
    }

    pub fn token_streams(&self, keep_hashtags: bool) -> Vec<TokenStream> {
        use rayon::prelude::*;
        self.documents
            .par_iter()
            .map(|d| d.tokens(keep_hashtags))
            .collect()
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for d in &self.documents {
            serde_json::to_writer(&mut out, d).expect("documents always serialize");
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Ingestion settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub name: String,
    /// Documents whose language tag differs are dropped. `None` keeps everything.
    pub language: Option<String>,
    /// Inclusive study window on the UTC calendar date of `created_at`.
    pub window: Option<(NaiveDate, NaiveDate)>,
    /// Skip malformed records instead of failing.
    pub lenient: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            name: "corpus".into(),
            language: Some("fa".into()),
            window: None,
            lenient: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub dropped_language: usize,
    pub dropped_window: usize,
    pub duplicates: usize,
    /// `(line number, message)` for every skipped malformed record.
    pub malformed: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub report: IngestReport,
}

/// Reads line-delimited JSON documents.
pub fn ingest(path: impl AsRef<Path>, config: &IngestConfig) -> Result<Ingested> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), config).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn ingest_reader(reader: impl BufRead, config: &IngestConfig) -> Result<Ingested> {
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    let mut documents = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let parsed = serde_json::from_str::<Document>(&line)
            .map_err(|e| e.to_string())
            .and_then(|d| d.validate().map(|_| d));
        let doc = match parsed {
            Ok(d) => d,
            Err(message) if config.lenient => {
                log::warn!("skipping malformed record at line {line_no}: {message}");
                report.malformed.push((line_no, message));
                continue;
            }
            Err(message) => {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    message,
                })
            }
        };
        if let Some(lang) = &config.language {
            if &doc.language != lang {
                report.dropped_language += 1;
                continue;
            }
        }
        if let Some((start, end)) = config.window {
            let day = doc.created_at.date_naive();
            if day < start || day > end {
                report.dropped_window += 1;
                continue;
            }
        }
        if !seen.insert(doc.id.clone()) {
            report.duplicates += 1;
            continue;
        }
        documents.push(doc);
    }
    let mut corpus = Corpus::new(
        config.name.clone(),
        config.language.clone().unwrap_or_default(),
    );
    corpus.documents = documents;
    Ok(Ingested { corpus, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    AnyKeyword,
    ConjunctiveSubsets,
    HashtagExact,
    PhraseMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    TokenExact,
    Substring,
}

/// A keyword rule. Keywords are normalized before matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRule {
    pub name: String,
    pub kind: RuleKind,
    pub keyword_sets: Vec<Vec<String>>,
    #[serde(default)]
    pub match_mode: MatchMode,
}

impl FilterRule {
    pub fn any_keyword<S: AsRef<str>>(name: &str, keywords: &[S]) -> Self {
        Self::single(name, RuleKind::AnyKeyword, keywords)
    }

    pub fn hashtag_exact<S: AsRef<str>>(name: &str, tags: &[S]) -> Self {
        Self::single(name, RuleKind::HashtagExact, tags)
    }

    pub fn phrase<S: AsRef<str>>(name: &str, phrases: &[S]) -> Self {
        Self::single(name, RuleKind::PhraseMatch, phrases)
    }

    pub fn conjunctive<S: AsRef<str>>(name: &str, a: &[S], b: &[S]) -> Self {
        Self {
            name: name.into(),
            kind: RuleKind::ConjunctiveSubsets,
            keyword_sets: vec![owned(a), owned(b)],
            match_mode: MatchMode::TokenExact,
        }
    }

    pub fn with_mode(mut self, mode: MatchMode) -> Self {
        self.match_mode = mode;
        self
    }

    fn single<S: AsRef<str>>(name: &str, kind: RuleKind, words: &[S]) -> Self {
        Self {
            name: name.into(),
            kind,
            keyword_sets: vec![owned(words)],
            match_mode: MatchMode::TokenExact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: &str| Error::InvalidRule {
            rule: self.name.clone(),
            message: message.into(),
        };
        let expected = match self.kind {
            RuleKind::ConjunctiveSubsets => 2,
            _ => 1,
        };
        if self.keyword_sets.len() != expected {
            return Err(invalid(&format!(
                "expected {expected} keyword set(s), found {}",
                self.keyword_sets.len()
            )));
        }
        if self
            .keyword_sets
            .iter()
            .any(|set| set.is_empty() || set.iter().all(|k| k.trim().is_empty()))
        {
            return Err(invalid("empty keyword set"));
        }
        Ok(())
    }
}

fn owned<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    words.iter().map(|w| w.as_ref().to_string()).collect()
}

/// A named list of rules, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub id: String,
    #[serde(default)]
    pub language: Option<String>,
    pub rules: Vec<FilterRule>,
}

impl RuleSet {
    pub fn from_toml(text: &str) -> Result<Self> {
        let set: RuleSet = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for r in &set.rules {
            r.validate()?;
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

enum Matcher {
    Tokens(Vec<String>),
    Substrings(Vec<String>),
    Phrases(Vec<Vec<String>>),
    Hashtags(Vec<String>),
}

impl Matcher {
    fn compile(kind: RuleKind, mode: MatchMode, words: &[String]) -> Self {
        match (kind, mode) {
            (_, MatchMode::Substring) => Matcher::Substrings(
                words
                    .iter()
                    .map(|w| textproc::normalize(w.trim()))
                    .filter(|w| !w.is_empty())
                    .collect(),
            ),
            (RuleKind::HashtagExact, _) => Matcher::Hashtags(
                words.iter().map(|w| textproc::normalize_hashtag(w.trim())).collect(),
            ),
            (RuleKind::PhraseMatch, _) => Matcher::Phrases(
                words
                    .iter()
                    .map(|w| textproc::tokenize_tokens(w, true))
                    .filter(|p| !p.is_empty())
                    .collect(),
            ),
            _ => Matcher::Tokens(
                words
                    .iter()
                    .flat_map(|w| textproc::tokenize_tokens(w, true))
                    .collect(),
            ),
        }
    }

    fn matches(&self, view: &DocView) -> bool {
        match self {
            Matcher::Tokens(words) => words.iter().any(|w| view.token_set.contains(w)),
            Matcher::Substrings(words) => words.iter().any(|w| view.normalized.contains(w.as_str())),
            Matcher::Phrases(phrases) => phrases.iter().any(|p| contains_run(&view.tokens, p)),
            Matcher::Hashtags(tags) => tags.iter().any(|t| view.hashtags.contains(t)),
        }
    }
}

struct DocView {
    normalized: String,
    tokens: Vec<String>,
    token_set: HashSet<String>,
    hashtags: HashSet<String>,
}

impl DocView {
    fn new(doc: &Document) -> Self {
        let tokens = textproc::tokenize_tokens(&doc.text, true);
        Self {
            normalized: textproc::normalize(&doc.text),
            token_set: tokens.iter().cloned().collect(),
            tokens,
            hashtags: doc.all_hashtags().into_iter().collect(),
        }
    }
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Rules compiled against normalized keywords.
pub struct CompiledRules {
    names: Vec<String>,
    matchers: Vec<Vec<Matcher>>,
}

impl CompiledRules {
    pub fn new(rules: &[FilterRule]) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::InvalidArgument("rule list is empty".into()));
        }
        let mut matchers = Vec::with_capacity(rules.len());
        for rule in rules {
            rule.validate()?;
            matchers.push(
                rule.keyword_sets
                    .iter()
                    .map(|set| Matcher::compile(rule.kind, rule.match_mode, set))
                    .collect(),
            );
        }
        Ok(Self {
            names: rules.iter().map(|r| r.name.clone()).collect(),
            matchers,
        })
    }

    pub fn rule_names(&self) -> &[String] {
        &self.names
    }

    /// One flag per rule. A conjunctive rule needs a hit in every keyword set.
    pub fn matches(&self, doc: &Document) -> Vec<bool> {
        let view = DocView::new(doc);
        self.matchers
            .iter()
            .map(|sets| sets.iter().all(|m| m.matches(&view)))
            .collect()
    }

    pub fn matches_any(&self, doc: &Document) -> bool {
        self.matches(doc).into_iter().any(|m| m)
    }
}

/// Keeps documents matching any of `rules`, in corpus order.
pub fn apply_rules(corpus: &Corpus, rules: &[FilterRule]) -> Result<Corpus> {
    use rayon::prelude::*;
    let compiled = CompiledRules::new(rules)?;
    let keep: Vec<bool> = corpus
        .documents
        .par_iter()
        .map(|d| compiled.matches_any(d))
        .collect();
    let documents = corpus
        .documents
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(d, _)| d.clone())
        .collect();
    Ok(corpus.with_documents(documents))
}

/// [`apply_rules`] with the set's id recorded on the result.
pub fn apply_rule_set(corpus: &Corpus, set: &RuleSet) -> Result<Corpus> {
    let mut out = apply_rules(corpus, &set.rules)?;
    out.name = set.id.clone();
    out.rule_set_id = set.id.clone();
    Ok(out)
}

/// Documents whose token sequence contains `phrase` as a contiguous run.
pub fn phrase_filter(corpus: &Corpus, phrase: &str) -> Result<Corpus> {
    let needle = textproc::tokenize_tokens(phrase, true);
    if needle.is_empty() {
        return Err(Error::InvalidArgument("phrase is empty".into()));
    }
    let documents = corpus
        .documents
        .iter()
        .filter(|d| contains_run(&textproc::tokenize_tokens(&d.text, true), &needle))
        .cloned()
        .collect();
    Ok(corpus.with_documents(documents))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SliceLabel {
    Before,
    After,
}

impl fmt::Display for SliceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SliceLabel::Before => "before",
            SliceLabel::After => "after",
        })
    }
}

/// An inclusive range of UTC calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSlice {
    pub label: SliceLabel,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl TimeSlice {
    pub fn new(label: SliceLabel, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidArgument(format!(
                "slice {label} starts after it ends ({start} > {end})"
            )));
        }
        Ok(Self { label, start, end })
    }

    /// Parses `YYYY-MM-DD:YYYY-MM-DD`.
    pub fn parse(label: SliceLabel, range: &str) -> Result<Self> {
        let (a, b) = range
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("expected START:END, got {range:?}")))?;
        let parse = |s: &str| {
            NaiveDate::from_str(s.trim())
                .map_err(|e| Error::InvalidArgument(format!("bad date {s:?}: {e}")))
        };
        Self::new(label, parse(a)?, parse(b)?)
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }
}

/// The before/after pair. `before` ends strictly before `after` starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicePair {
    pub before: TimeSlice,
    pub after: TimeSlice,
}

impl SlicePair {
    pub fn new(before: TimeSlice, after: TimeSlice) -> Result<Self> {
        if before.label != SliceLabel::Before || after.label != SliceLabel::After {
            return Err(Error::InvalidArgument("slice labels must be Before then After".into()));
        }
        if before.end >= after.start {
            return Err(Error::InvalidArgument(format!(
                "before slice ends {} which is not earlier than after slice start {}",
                before.end, after.start
            )));
        }
        Ok(Self { before, after })
    }

    /// 2022-01-15..=2022-09-15 and 2022-09-16..=2023-01-15.
    pub fn study_period() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
        Self {
            before: TimeSlice {
                label: SliceLabel::Before,
                start: d(2022, 1, 15),
                end: d(2022, 9, 15),
            },
            after: TimeSlice {
                label: SliceLabel::After,
                start: d(2022, 9, 16),
                end: d(2023, 1, 15),
            },
        }
    }

    pub fn label_of(&self, at: DateTime<Utc>) -> Option<SliceLabel> {
        let day = at.date_naive();
        if self.before.contains(day) {
            Some(SliceLabel::Before)
        } else if self.after.contains(day) {
            Some(SliceLabel::After)
        } else {
            None
        }
    }

    pub fn window(&self) -> (NaiveDate, NaiveDate) {
        (self.before.start, self.after.end)
    }
}

#[derive(Debug, Clone)]
pub struct Sliced {
    pub before: Corpus,
    pub after: Corpus,
    pub excluded: usize,
}

impl Sliced {
    pub fn get(&self, label: SliceLabel) -> &Corpus {
        match label {
            SliceLabel::Before => &self.before,
            SliceLabel::After => &self.after,
        }
    }
}

/// Splits a corpus by creation date. Documents outside both slices are counted, not kept.
pub fn slice(corpus: &Corpus, slices: &SlicePair) -> Sliced {
    let mut before = Vec::new();
    let mut after = Vec::new();
    let mut excluded = 0;
    for d in &corpus.documents {
        match slices.label_of(d.created_at) {
            Some(SliceLabel::Before) => before.push(d.clone()),
            Some(SliceLabel::After) => after.push(d.clone()),
            None => excluded += 1,
        }
    }
    let tagged = |docs, label: SliceLabel| {
        let mut c = corpus.with_documents(docs);
        c.name = format!("{}-{label}", corpus.name);
        c
    };
    Sliced {
        before: tagged(before, SliceLabel::Before),
        after: tagged(after, SliceLabel::After),
        excluded,
    }
}
