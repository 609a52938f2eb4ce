//! Subword skip-gram embeddings, document vectors and exact cosine search.
//!
//! Words are represented as the average of a word-id row and one row per
//! hashed character n-gram of `<word>`. Training is skip-gram with negative
//! sampling and a linearly decaying learning rate. Out-of-vocabulary tokens
//! resolve through the n-gram rows that were actually touched in training.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::textproc::{self, TokenStream};

const MAGIC: &[u8; 8] = b"STKEMB01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dimension: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f32,
    pub min_count: u64,
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dimension: 100,
            window: 5,
            epochs: 5,
            negatives: 5,
            learning_rate: 0.05,
            min_count: 5,
            min_n: 3,
            max_n: 6,
            buckets: 2_000_000,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dimension < 2 {
            return bad("dimension must be >= 2");
        }
        if self.window == 0 || self.epochs == 0 || self.negatives == 0 || self.min_count == 0 {
            return bad("window, epochs, negatives and min_count must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.min_n == 0 || self.min_n > self.max_n || self.buckets == 0 {
            return bad("need 1 <= min_n <= max_n and buckets > 0");
        }
        Ok(())
    }
}

/// 32-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(16_777_619);
    }
    h
}

/// Hashed n-gram bucket indices (not offset) of `<word>`.
fn char_ngram_buckets(word: &str, min_n: usize, max_n: usize, buckets: usize) -> Vec<usize> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let len = wrapped.len();
    let mut out = Vec::new();
    let mut gram = String::new();
    for i in 0..len {
        gram.clear();
        for n in 1..=max_n {
            let j = i + n;
            if j > len {
                break;
            }
            gram.push(wrapped[j - 1]);
            if n >= min_n && !(n == 1 && (i == 0 || j == len)) {
                out.push(fnv1a(gram.as_bytes()) as usize % buckets);
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EmbeddingConfig,
    words: Vec<String>,
    counts: Vec<u64>,
    trained_buckets: Vec<u64>,
    epoch_loss: Vec<f64>,
}

/// Trained word vectors plus everything needed to embed unseen tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    config: EmbeddingConfig,
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    /// `(|vocab| + buckets) × d` rows: word ids first, then n-gram buckets.
    input: Vec<f32>,
    /// `|vocab| × d`.
    output: Vec<f32>,
    trained_buckets: Vec<u64>,
    word_vectors: Vec<f32>,
    epoch_loss: Vec<f64>,
}

impl EmbeddingModel {
    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.config.dimension
    }

    pub fn vocab_len(&self) -> usize {
        self.words.len()
    }

    pub fn vocab(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words.iter().map(String::as_str).zip(self.counts.iter().copied())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Average skip-gram loss of each epoch.
    pub fn epoch_loss(&self) -> &[f64] {
        &self.epoch_loss
    }

    fn bucket_trained(&self, bucket: usize) -> bool {
        self.trained_buckets[bucket / 64] >> (bucket % 64) & 1 == 1
    }

    /// Vector for any token: in-vocabulary words use their composed vector,
    /// other tokens the mean of their trained n-gram rows. `None` when nothing resolves.
    pub fn token_vector(&self, token: &str) -> Option<Vec<f32>> {
        let d = self.config.dimension;
        if let Some(&w) = self.index.get(token) {
            return Some(self.word_vectors[w * d..(w + 1) * d].to_vec());
        }
        let nwords = self.words.len();
        let rows: Vec<usize> =
            char_ngram_buckets(token, self.config.min_n, self.config.max_n, self.config.buckets)
                .into_iter()
                .filter(|&b| self.bucket_trained(b))
                .map(|b| nwords + b)
                .collect();
        if rows.is_empty() {
            return None;
        }
        Some(mean_rows(&self.input, d, &rows))
    }

    /// The `k` vocabulary words closest to `token` by cosine, excluding itself.
    pub fn nearest_words(&self, token: &str, k: usize) -> Vec<(String, f64)> {
        let Some(q) = self.token_vector(token) else {
            return Vec::new();
        };
        let d = self.config.dimension;
        let mut scored: Vec<(String, f64)> = self
            .words
            .iter()
            .enumerate()
            .filter(|(_, w)| w.as_str() != token)
            .map(|(i, w)| (w.clone(), cosine(&q, &self.word_vectors[i * d..(i + 1) * d])))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.write_to(container::create(path)?)
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, out: impl Write) -> std::io::Result<()> {
        let header = Header {
            config: self.config.clone(),
            words: self.words.clone(),
            counts: self.counts.clone(),
            trained_buckets: self.trained_buckets.clone(),
            epoch_loss: self.epoch_loss.clone(),
        };
        let mut w = container::Writer::new(out, MAGIC, &header)?;
        w.f32s(&self.input)?;
        w.f32s(&self.output)?;
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(container::open(path.as_ref())?)
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let (mut r, header): (_, Header) = container::Reader::open(input, MAGIC)?;
        header.config.validate()?;
        let d = header.config.dimension;
        let nwords = header.words.len();
        if header.counts.len() != nwords
            || header.trained_buckets.len() != header.config.buckets.div_ceil(64)
        {
            return Err(Error::BadModelFile("inconsistent header".into()));
        }
        let input = r.f32s((nwords + header.config.buckets) * d)?;
        let output = r.f32s(nwords * d)?;
        let mut model = Self {
            index: header
                .words
                .iter()
                .enumerate()
                .map(|(i, w)| (w.clone(), i))
                .collect(),
            config: header.config,
            words: header.words,
            counts: header.counts,
            input,
            output,
            trained_buckets: header.trained_buckets,
            word_vectors: Vec::new(),
            epoch_loss: header.epoch_loss,
        };
        model.refresh_word_vectors();
        Ok(model)
    }

    fn word_rows(&self, w: usize) -> Vec<usize> {
        let nwords = self.words.len();
        std::iter::once(w)
            .chain(
                char_ngram_buckets(
                    &self.words[w],
                    self.config.min_n,
                    self.config.max_n,
                    self.config.buckets,
                )
                .into_iter()
                .map(|b| nwords + b),
            )
            .collect()
    }

    fn refresh_word_vectors(&mut self) {
        let d = self.config.dimension;
        let vectors: Vec<Vec<f32>> = (0..self.words.len())
            .into_par_iter()
            .map(|w| mean_rows(&self.input, d, &self.word_rows(w)))
            .collect();
        self.word_vectors = vectors.concat();
    }
}

fn mean_rows(matrix: &[f32], d: usize, rows: &[usize]) -> Vec<f32> {
    let mut acc = vec![0f32; d];
    for &r in rows {
        for (a, x) in acc.iter_mut().zip(&matrix[r * d..(r + 1) * d]) {
            *a += x;
        }
    }
    let inv = 1.0 / rows.len() as f32;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

struct Trainer<'a> {
    model: &'a mut EmbeddingModel,
    rows: Vec<Vec<usize>>,
    negatives: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    hidden: Vec<f32>,
    grad: Vec<f32>,
}

impl Trainer<'_> {
    /// One positive pair plus sampled negatives; returns the pair's loss.
    fn update(&mut self, center: usize, target: usize, lr: f32) -> f64 {
        let d = self.model.config.dimension;
        let rows = &self.rows[center];
        self.hidden.iter_mut().for_each(|h| *h = 0.0);
        for &r in rows {
            for (h, x) in self.hidden.iter_mut().zip(&self.model.input[r * d..(r + 1) * d]) {
                *h += x;
            }
        }
        let inv = 1.0 / rows.len() as f32;
        self.hidden.iter_mut().for_each(|h| *h *= inv);
        self.grad.iter_mut().for_each(|g| *g = 0.0);

        let mut loss = 0.0f64;
        // A single-word vocabulary has nothing to draw negatives from.
        let negatives = if self.model.words.len() > 1 {
            self.model.config.negatives
        } else {
            0
        };
        for n in 0..=negatives {
            let (word, label) = if n == 0 {
                (target, 1.0f32)
            } else {
                let mut neg = self.negatives.sample(&mut self.rng);
                while neg == target {
                    neg = self.negatives.sample(&mut self.rng);
                }
                (neg, 0.0)
            };
            let out = &mut self.model.output[word * d..(word + 1) * d];
            let dot: f32 = out.iter().zip(&self.hidden).map(|(a, b)| a * b).sum();
            let score = sigmoid(dot);
            let p = if label > 0.5 { score } else { 1.0 - score };
            loss -= (p.max(1e-7) as f64).ln();
            let alpha = lr * (label - score);
            for ((g, o), h) in self.grad.iter_mut().zip(out.iter_mut()).zip(&self.hidden) {
                *g += alpha * *o;
                *o += alpha * h;
            }
        }
        for &r in rows {
            for (x, g) in self.model.input[r * d..(r + 1) * d].iter_mut().zip(&self.grad) {
                *x += g;
            }
        }
        loss
    }
}

/// Trains subword skip-gram vectors. Deterministic for a fixed `config.seed`.
pub fn train_embeddings(corpus: &[TokenStream], config: &EmbeddingConfig) -> Result<EmbeddingModel> {
    config.validate()?;
    if corpus.iter().all(|d| d.is_empty()) {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for t in &doc.tokens {
            *freq.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|(_, c)| *c >= config.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_count: config.min_count,
        });
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let d = config.dimension;
    let nwords = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 1.0 / d as f32;
    let input: Vec<f32> = (0..(nwords + config.buckets) * d)
        .map(|_| rng.random_range(-bound..bound))
        .collect();

    let mut model = EmbeddingModel {
        config: config.clone(),
        words: vocab.iter().map(|(w, _)| w.to_string()).collect(),
        counts: vocab.iter().map(|(_, c)| *c).collect(),
        index: vocab.iter().enumerate().map(|(i, (w, _))| (w.to_string(), i)).collect(),
        input,
        output: vec![0.0; nwords * d],
        trained_buckets: vec![0; config.buckets.div_ceil(64)],
        word_vectors: Vec::new(),
        epoch_loss: Vec::with_capacity(config.epochs),
    };

    let docs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|doc| doc.tokens.iter().filter_map(|t| model.index.get(t).copied()).collect())
        .collect();
    let rows: Vec<Vec<usize>> = (0..nwords).map(|w| model.word_rows(w)).collect();
    for r in rows.iter().flatten().filter(|&&r| r >= nwords) {
        let b = r - nwords;
        model.trained_buckets[b / 64] |= 1 << (b % 64);
    }
    let negatives = WeightedIndex::new(model.counts.iter().map(|&c| (c as f64).sqrt()))
        .expect("vocabulary counts are positive");

    let total_tokens = (docs.iter().map(Vec::len).sum::<usize>() * config.epochs).max(1) as f32;
    let mut processed = 0usize;
    let mut trainer = Trainer {
        model: &mut model,
        rows,
        negatives,
        rng,
        hidden: vec![0.0; d],
        grad: vec![0.0; d],
    };
    for _ in 0..config.epochs {
        let mut loss = 0.0f64;
        let mut pairs = 0u64;
        for doc in &docs {
            for pos in 0..doc.len() {
                let lr = config.learning_rate * (1.0 - processed as f32 / total_tokens).max(0.0);
                processed += 1;
                let span = trainer.rng.random_range(1..=config.window);
                let lo = pos.saturating_sub(span);
                let hi = (pos + span).min(doc.len() - 1);
                for c in lo..=hi {
                    if c != pos {
                        loss += trainer.update(doc[pos], doc[c], lr);
                        pairs += 1;
                    }
                }
            }
        }
        trainer.model.epoch_loss.push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
    }
    model.refresh_word_vectors();
    Ok(model)
}

/// A document's position in embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocVector {
    pub doc_id: String,
    pub vector: Vec<f32>,
    /// False when no token resolved and the vector is all zeros.
    pub resolved: bool,
}

/// Unweighted mean of the resolvable token vectors.
pub fn embed_document(model: &EmbeddingModel, tokens: &TokenStream) -> DocVector {
    let d = model.dimension();
    let mut sorted: Vec<&str> = tokens.tokens.iter().map(String::as_str).collect();
    // Fixed summation order keeps the mean bit-identical under token permutations.
    sorted.sort_unstable();
    let mut acc = vec![0f64; d];
    let mut n = 0usize;
    for t in sorted {
        if let Some(v) = model.token_vector(t) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x as f64;
            }
            n += 1;
        }
    }
    let vector = if n == 0 {
        vec![0.0; d]
    } else {
        acc.iter().map(|a| (a / n as f64) as f32).collect()
    };
    DocVector {
        doc_id: tokens.source_doc_id.clone(),
        vector,
        resolved: n > 0,
    }
}

pub fn embed_documents(model: &EmbeddingModel, docs: &[TokenStream]) -> Vec<DocVector> {
    docs.par_iter().map(|t| embed_document(model, t)).collect()
}

/// Embeds raw text the same way documents are embedded.
pub fn embed_text(model: &EmbeddingModel, id: &str, text: &str) -> DocVector {
    embed_document(model, &TokenStream::new(id, textproc::tokenize_tokens(text, true)))
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine similarity in f64; 0 when either side has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub doc_id: String,
    pub similarity: f64,
}

fn ranking_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Pool vectors with cached norms for repeated exact queries.
pub struct VectorIndex<'a> {
    pool: &'a [DocVector],
    norms: Vec<f64>,
}

impl<'a> VectorIndex<'a> {
    pub fn new(pool: &'a [DocVector]) -> Self {
        Self {
            norms: pool.par_iter().map(|p| norm(&p.vector)).collect(),
            pool,
        }
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// Every pool entry with non-zero norm and a different id than the
    /// query, by descending similarity then ascending id.
    pub fn ranked(&self, query: &DocVector) -> Result<Vec<Neighbor>> {
        let mut all = self.scored(query)?;
        all.par_sort_unstable_by(ranking_order);
        Ok(all)
    }

    pub fn nearest(&self, query: &DocVector, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let mut all = self.scored(query)?;
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, ranking_order);
            all.truncate(k);
        }
        all.sort_unstable_by(ranking_order);
        Ok(all)
    }

    fn scored(&self, query: &DocVector) -> Result<Vec<Neighbor>> {
        let qn = norm(&query.vector);
        if qn == 0.0 {
            return Err(Error::ZeroNormQuery);
        }
        Ok(self
            .pool
            .par_iter()
            .zip(&self.norms)
            .filter(|(p, &n)| n > 0.0 && p.doc_id != query.doc_id)
            .map(|(p, &n)| Neighbor {
                doc_id: p.doc_id.clone(),
                similarity: dot(&query.vector, &p.vector) / (qn * n),
            })
            .collect())
    }
}

/// Exact top-`k` by cosine, ties by id; the query's own id is skipped.
pub fn nearest(query: &DocVector, pool: &[DocVector], k: usize, metric: Metric) -> Result<Vec<Neighbor>> {
    let Metric::Cosine = metric;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("pool is empty".into()));
    }
    VectorIndex::new(pool).nearest(query, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineShare {
    pub line: String,
    pub matched: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineMatchTable {
    pub lines: Vec<LineShare>,
    /// Documents whose vector did not resolve.
    pub unmatched: usize,
}

/// Assigns each document to its most similar reference line and reports
/// the share of matched documents per line.
pub fn match_reference_lines(
    model: &EmbeddingModel,
    docs: &Corpus,
    lines: &[String],
) -> Result<LineMatchTable> {
    if lines.is_empty() {
        return Err(Error::InvalidArgument("no reference lines".into()));
    }
    let line_vecs: Vec<DocVector> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| embed_text(model, &format!("line-{i}"), l))
        .collect();
    let assignments: Vec<Option<usize>> = docs
        .documents
        .par_iter()
        .map(|d| {
            let v = embed_document(model, &d.tokens(true));
            if !v.resolved {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for (i, lv) in line_vecs.iter().enumerate().filter(|(_, lv)| lv.resolved) {
                let s = cosine(&v.vector, &lv.vector);
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((i, s));
                }
            }
            best.map(|(i, _)| i)
        })
        .collect();
    let mut counts = vec![0usize; lines.len()];
    let mut unmatched = 0;
    for a in assignments {
        match a {
            Some(i) => counts[i] += 1,
            None => unmatched += 1,
        }
    }
    let matched: usize = counts.iter().sum();
    Ok(LineMatchTable {
        lines: lines
            .iter()
            .zip(counts)
            .map(|(l, c)| LineShare {
                line: l.clone(),
                matched: c,
                percent: if matched == 0 {
                    0.0
                } else {
                    100.0 * c as f64 / matched as f64
                },
            })
            .collect(),
        unmatched,
    })
}
