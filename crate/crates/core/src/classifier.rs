//! Three-class stance classifier.
//!
//! The reference model is multinomial logistic regression over signed-hashed
//! uni- and bigram counts, optionally concatenated with a document embedding.
//! Training is mini-batch SGD on class-weighted cross-entropy with an L2
//! penalty. Anything that can emit per-document posteriors (for instance a
//! predictions file from an external model) plugs in through [`Classifier`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::embedding::{embed_document, EmbeddingModel};
use crate::error::{Error, Result};
use crate::textproc::TokenStream;

const MAGIC: &[u8; 8] = b"STKCLF01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceLabel {
    Positive,
    Neutral,
    Negative,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [Self::Positive, Self::Neutral, Self::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::Neutral => "neutral",
            Self::Negative => "negative",
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "positive" | "pos" | "p" => Ok(Self::Positive),
            "neutral" | "neu" | "n" => Ok(Self::Neutral),
            "negative" | "neg" => Ok(Self::Negative),
            _ => Err(Error::InvalidArgument(format!("unknown stance label `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    HashedNgrams,
    DocEmbedding,
    Concat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub hashed_ngrams: bool,
    pub hash_bits: u32,
    pub doc_embedding: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            hashed_ngrams: true,
            hash_bits: 18,
            doc_embedding: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.hashed_ngrams && !self.doc_embedding {
            return Err(Error::Config("select hashed n-grams and/or document embedding".into()));
        }
        if self.hashed_ngrams && !(1..=28).contains(&self.hash_bits) {
            return Err(Error::Config("hash_bits must be in 1..=28".into()));
        }
        Ok(())
    }

    pub fn hashed_dim(&self) -> usize {
        if self.hashed_ngrams {
            1 << self.hash_bits
        } else {
            0
        }
    }

    pub fn source(&self) -> FeatureSource {
        match (self.hashed_ngrams, self.doc_embedding) {
            (true, true) => FeatureSource::Concat,
            (false, true) => FeatureSource::DocEmbedding,
            _ => FeatureSource::HashedNgrams,
        }
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub source: FeatureSource,
    /// Set when the document had no tokens.
    pub empty: bool,
}

impl FeatureVector {
    /// Builds a vector from arbitrary (index, value) pairs, summing duplicates.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>, source: FeatureSource) -> Self {
        let mut map = BTreeMap::new();
        for (i, v) in pairs {
            *map.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = map.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        Self {
            indices,
            values,
            source,
            empty: false,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn dot_row(&self, row: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, v)| row[i as usize] * v)
            .sum()
    }
}

fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Signed hashed counts of unigrams and adjacent bigrams, before normalization.
pub fn hashed_ngram_counts(tokens: &[String], hash_bits: u32) -> BTreeMap<u32, f64> {
    let mask = (1u64 << hash_bits) - 1;
    let mut out = BTreeMap::new();
    let mut add = |h: u64| {
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        *out.entry((h & mask) as u32).or_insert(0.0) += sign;
    };
    for (i, t) in tokens.iter().enumerate() {
        add(fnv1a64(&[b"\x01", t.as_bytes()]));
        if let Some(next) = tokens.get(i + 1) {
            add(fnv1a64(&[b"\x02", t.as_bytes(), b"\x00", next.as_bytes()]));
        }
    }
    out
}

/// Turns token streams into feature vectors under a fixed configuration.
#[derive(Clone, Copy)]
pub struct Featurizer<'a> {
    config: &'a FeatureConfig,
    embedding: Option<&'a EmbeddingModel>,
}

impl<'a> Featurizer<'a> {
    pub fn new(config: &'a FeatureConfig, embedding: Option<&'a EmbeddingModel>) -> Result<Self> {
        config.validate()?;
        if config.doc_embedding && embedding.is_none() {
            return Err(Error::ModelRequired("document-embedding features"));
        }
        Ok(Self { config, embedding })
    }

    pub fn dim(&self) -> usize {
        self.config.hashed_dim() + self.embedding_dim()
    }

    fn embedding_dim(&self) -> usize {
        match (self.config.doc_embedding, self.embedding) {
            (true, Some(m)) => m.dimension(),
            _ => 0,
        }
    }

    /// Hashed part is L2-normalized; the document vector is appended scaled to unit length.
    pub fn featurize(&self, doc: &TokenStream) -> FeatureVector {
        let source = self.config.source();
        let mut indices = Vec::new();
        let mut values = Vec::new();
        if self.config.hashed_ngrams {
            let counts = hashed_ngram_counts(&doc.tokens, self.config.hash_bits);
            let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
            for (i, v) in counts {
                if v != 0.0 {
                    indices.push(i);
                    values.push(v / norm);
                }
            }
        }
        if let (true, Some(model)) = (self.config.doc_embedding, self.embedding) {
            let dv = embed_document(model, doc);
            let norm = crate::embedding::norm(&dv.vector);
            if norm > 0.0 {
                let offset = self.config.hashed_dim() as u32;
                for (j, &x) in dv.vector.iter().enumerate() {
                    if x != 0.0 {
                        indices.push(offset + j as u32);
                        values.push(x as f64 / norm);
                    }
                }
            }
        }
        FeatureVector {
            indices,
            values,
            source,
            empty: doc.tokens.is_empty(),
        }
    }

    pub fn featurize_all(&self, docs: &[TokenStream]) -> Vec<FeatureVector> {
        docs.par_iter().map(|d| self.featurize(d)).collect()
    }
}

/// Which active-learning stage produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Seed,
    Certainty,
    Uncertainty,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Seed => "seed",
            Stage::Certainty => "certainty",
            Stage::Uncertainty => "uncertainty",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub class_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            class_weights: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config("learning_rate must be > 0 and l2 >= 0".into()));
        }
        Ok(())
    }
}

/// Linear softmax model over `classes.len()` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub classes: Vec<String>,
    pub dim: usize,
    /// Row-major `classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_config: FeatureConfig,
    pub stage: Stage,
    pub train_config: TrainConfig,
    /// Objective value after each epoch.
    pub train_log: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    classes: Vec<String>,
    dim: usize,
    feature_config: FeatureConfig,
    stage: Stage,
    train_config: TrainConfig,
    train_log: Vec<f64>,
}

fn stance_class_names() -> Vec<String> {
    StanceLabel::ALL.iter().map(|l| l.to_string()).collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ClassifierModel {
    /// All-zero three-class model.
    pub fn zeros(dim: usize, feature_config: FeatureConfig) -> Self {
        Self::zeros_with_classes(stance_class_names(), dim, feature_config)
    }

    pub fn zeros_with_classes(classes: Vec<String>, dim: usize, feature_config: FeatureConfig) -> Self {
        let k = classes.len();
        Self {
            classes,
            dim,
            weights: vec![0.0; k * dim],
            bias: vec![0.0; k],
            feature_config,
            stage: Stage::Seed,
            train_config: TrainConfig::default(),
            train_log: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    fn check(&self, x: &FeatureVector) -> Result<()> {
        match x.indices.last() {
            Some(&i) if i as usize >= self.dim => Err(Error::DimensionMismatch {
                expected: self.dim,
                got: i as usize,
            }),
            _ => Ok(()),
        }
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..self.num_classes())
            .map(|k| self.bias[k] + x.dot_row(self.row(k)))
            .collect())
    }

    pub fn posterior(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Index of the most probable class, lowest index on ties.
    pub fn predict(&self, x: &FeatureVector) -> Result<usize> {
        Ok(argmax(&self.posterior(x)?))
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.write_to(container::create(path)?)
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, out: impl Write) -> std::io::Result<()> {
        let header = Header {
            classes: self.classes.clone(),
            dim: self.dim,
            feature_config: self.feature_config.clone(),
            stage: self.stage,
            train_config: self.train_config.clone(),
            train_log: self.train_log.clone(),
        };
        let mut w = container::Writer::new(out, MAGIC, &header)?;
        w.f64s(&self.weights)?;
        w.f64s(&self.bias)?;
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(container::open(path.as_ref())?)
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let (mut r, h): (_, Header) = container::Reader::open(input, MAGIC)?;
        if h.classes.len() < 2 {
            return Err(Error::BadModelFile("fewer than two classes".into()));
        }
        let weights = r.f64s(h.classes.len() * h.dim)?;
        let bias = r.f64s(h.classes.len())?;
        Ok(Self {
            classes: h.classes,
            dim: h.dim,
            weights,
            bias,
            feature_config: h.feature_config,
            stage: h.stage,
            train_config: h.train_config,
            train_log: h.train_log,
        })
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// A labelled training or evaluation example with a class index.
pub type Example = (FeatureVector, usize);

/// Inverse-frequency weights normalized so the per-example mean is 1.
/// Classes without examples get weight 0.
pub fn class_weights(labels: impl IntoIterator<Item = usize>, num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    let mut n = 0usize;
    for y in labels {
        counts[y] += 1;
        n += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                n as f64 / (present as f64 * c as f64)
            }
        })
        .collect()
}

/// Full-batch training objective:
/// `(1/n) Σ c_y · CE(x, y) + (λ/2)‖W‖²`, bias unregularized.
pub struct Objective<'a> {
    pub examples: &'a [Example],
    pub num_classes: usize,
    pub dim: usize,
    pub l2: f64,
    pub class_weights: Vec<f64>,
}

/// `c_y (p − e_y)`: the gradient of one example's weighted loss with respect to its logits.
fn residual(logits: &[f64], y: usize, weight: f64) -> Vec<f64> {
    let mut r = softmax(logits);
    r[y] -= 1.0;
    r.iter_mut().for_each(|v| *v *= weight);
    r
}

fn example_logits(weights: &[f64], bias: &[f64], dim: usize, x: &FeatureVector) -> Vec<f64> {
    (0..bias.len())
        .map(|k| bias[k] + x.dot_row(&weights[k * dim..(k + 1) * dim]))
        .collect()
}

fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[y]
}

impl Objective<'_> {
    pub fn value(&self, weights: &[f64], bias: &[f64]) -> f64 {
        let n = self.examples.len() as f64;
        let data: f64 = self
            .examples
            .iter()
            .map(|(x, y)| {
                self.class_weights[*y] * cross_entropy(&example_logits(weights, bias, self.dim, x), *y)
            })
            .sum();
        data / n + 0.5 * self.l2 * weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Analytic gradient `(∂/∂W, ∂/∂b)`.
    pub fn gradient(&self, weights: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.examples.len() as f64;
        let mut gw: Vec<f64> = weights.iter().map(|w| self.l2 * w).collect();
        let mut gb = vec![0.0; self.num_classes];
        for (x, y) in self.examples {
            let r = residual(&example_logits(weights, bias, self.dim, x), *y, self.class_weights[*y]);
            for (k, rk) in r.iter().enumerate() {
                gb[k] += rk / n;
                for (&i, v) in x.indices.iter().zip(&x.values) {
                    gw[k * self.dim + i as usize] += rk * v / n;
                }
            }
        }
        (gw, gb)
    }
}

fn validate_examples(examples: &[Example], num_classes: usize, dim: usize) -> Result<()> {
    let mut seen = vec![false; num_classes];
    for (n, (x, y)) in examples.iter().enumerate() {
        if *y >= num_classes {
            return Err(Error::InvalidArgument(format!("label index {y} out of range")));
        }
        seen[*y] = true;
        if x.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature(n));
        }
        if let Some(&i) = x.indices.last() {
            if i as usize >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: i as usize,
                });
            }
        }
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Everything `train` needs beyond the examples.
#[derive(Debug, Clone)]
pub struct TrainSpec<'a> {
    pub classes: Vec<String>,
    pub dim: usize,
    pub feature_config: FeatureConfig,
    pub config: TrainConfig,
    pub stage: Stage,
    pub seed: u64,
    /// Warm start: previous weights must have the same shape.
    pub init: Option<&'a ClassifierModel>,
}

impl<'a> TrainSpec<'a> {
    pub fn stance(dim: usize, feature_config: FeatureConfig, seed: u64) -> Self {
        Self {
            classes: stance_class_names(),
            dim,
            feature_config,
            config: TrainConfig::default(),
            stage: Stage::Seed,
            seed,
            init: None,
        }
    }
}

/// Mini-batch SGD with step size `lr / (1 + epoch)`.
pub fn train(examples: &[Example], spec: &TrainSpec<'_>) -> Result<ClassifierModel> {
    spec.config.validate()?;
    let k = spec.classes.len();
    let dim = spec.dim;
    if k < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    validate_examples(examples, k, dim)?;

    let (mut v, mut bias) = match spec.init {
        Some(prev) => {
            if prev.dim != dim || prev.num_classes() != k {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: prev.dim,
                });
            }
            (prev.weights.clone(), prev.bias.clone())
        }
        None => (vec![0.0; k * dim], vec![0.0; k]),
    };
    let cw = if spec.config.class_weights {
        class_weights(examples.iter().map(|(_, y)| *y), k)
    } else {
        vec![1.0; k]
    };
    let objective = Objective {
        examples,
        num_classes: k,
        dim,
        l2: spec.config.l2,
        class_weights: cw.clone(),
    };

    // Weights are kept as `scale * v` so the L2 shrink is O(1) per step.
    let mut scale = 1.0f64;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut log = Vec::with_capacity(spec.config.epochs);
    let mut logits = vec![0.0; k];
    for epoch in 0..spec.config.epochs {
        let lr = spec.config.learning_rate / (1.0 + epoch as f64);
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.config.batch_size) {
            let m = batch.len() as f64;
            let residuals: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| {
                    let (x, y) = &examples[i];
                    for (c, z) in logits.iter_mut().enumerate() {
                        *z = bias[c] + scale * x.dot_row(&v[c * dim..(c + 1) * dim]);
                    }
                    residual(&logits, *y, cw[*y])
                })
                .collect();
            scale *= 1.0 - lr * spec.config.l2;
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
            for (&i, r) in batch.iter().zip(&residuals) {
                let x = &examples[i].0;
                for (c, rc) in r.iter().enumerate() {
                    bias[c] -= lr * rc / m;
                    let step = lr * rc / (m * scale);
                    let row = &mut v[c * dim..(c + 1) * dim];
                    for (&j, xv) in x.indices.iter().zip(&x.values) {
                        row[j as usize] -= step * xv;
                    }
                }
            }
        }
        let weights: Vec<f64> = v.iter().map(|w| w * scale).collect();
        log.push(objective.value(&weights, &bias));
    }
    v.iter_mut().for_each(|w| *w *= scale);
    Ok(ClassifierModel {
        classes: spec.classes.clone(),
        dim,
        weights: v,
        bias,
        feature_config: spec.feature_config.clone(),
        stage: spec.stage,
        train_config: spec.config.clone(),
        train_log: log,
    })
}

/// Convenience wrapper for three-class stance examples.
pub fn train_stance(
    examples: &[(FeatureVector, StanceLabel)],
    spec: &TrainSpec<'_>,
) -> Result<ClassifierModel> {
    let indexed: Vec<Example> = examples.iter().map(|(x, y)| (x.clone(), y.index())).collect();
    train(&indexed, spec)
}

/// Maps three-class labels to Positive (0) vs NotPositive (1).
pub fn collapse_binary(label: StanceLabel) -> usize {
    usize::from(label != StanceLabel::Positive)
}

pub fn binary_class_names() -> Vec<String> {
    vec!["positive".into(), "not_positive".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub runs: usize,
    /// Sample standard deviations across runs, present when `runs > 1`.
    pub macro_f1_std: Option<f64>,
    pub f1_std: Option<Vec<f64>>,
    /// `confusion[gold][pred]` of the last run.
    pub confusion: Vec<Vec<u64>>,
    pub warnings: Vec<String>,
}

/// Per-class precision/recall/F1 and macro-F1 for one set of predictions.
pub fn score(classes: &[String], gold: &[usize], pred: &[usize]) -> Result<EvalReport> {
    if gold.len() != pred.len() || gold.is_empty() {
        return Err(Error::InvalidArgument("gold and predictions must be non-empty and equally long".into()));
    }
    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= k || p >= k {
            return Err(Error::InvalidArgument("label index out of range".into()));
        }
        confusion[g][p] += 1;
    }
    let mut precision = vec![0.0; k];
    let mut recall = vec![0.0; k];
    let mut f1 = vec![0.0; k];
    let mut warnings = Vec::new();
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        if support == 0 {
            warnings.push(format!("class `{}` absent from evaluation data; F1 set to 0", classes[c]));
            continue;
        }
        precision[c] = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        recall[c] = tp / support as f64;
        f1[c] = if precision[c] + recall[c] == 0.0 {
            0.0
        } else {
            2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
        };
    }
    let macro_f1 = f1.iter().sum::<f64>() / k as f64;
    Ok(EvalReport {
        classes: classes.to_vec(),
        precision,
        recall,
        f1,
        macro_f1,
        runs: 1,
        macro_f1_std: None,
        f1_std: None,
        confusion,
        warnings,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Averages single-run reports; std fields are filled when there is more than one.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no runs to aggregate".into()))?;
    let k = first.classes.len();
    let col = |f: &dyn Fn(&EvalReport) -> f64| -> (f64, f64) {
        mean_std(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let precision = (0..k).map(|c| col(&|r| r.precision[c]).0).collect();
    let recall = (0..k).map(|c| col(&|r| r.recall[c]).0).collect();
    let f1_stats: Vec<(f64, f64)> = (0..k).map(|c| col(&|r| r.f1[c])).collect();
    let (macro_f1, macro_std) = col(&|r| r.macro_f1);
    let mut warnings: Vec<String> = reports.iter().flat_map(|r| r.warnings.clone()).collect();
    warnings.dedup();
    let multi = reports.len() > 1;
    Ok(EvalReport {
        classes: first.classes.clone(),
        precision,
        recall,
        f1: f1_stats.iter().map(|s| s.0).collect(),
        macro_f1,
        runs: reports.len(),
        macro_f1_std: multi.then_some(macro_std),
        f1_std: multi.then(|| f1_stats.iter().map(|s| s.1).collect()),
        confusion: reports.last().unwrap().confusion.clone(),
        warnings,
    })
}

pub fn evaluate_model(model: &ClassifierModel, heldout: &[Example]) -> Result<EvalReport> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty".into()));
    }
    let pred = heldout
        .par_iter()
        .map(|(x, _)| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<usize> = heldout.iter().map(|(_, y)| *y).collect();
    score(&model.classes, &gold, &pred)
}

/// Trains `runs` models with seeds `seed, seed+1, ...` and reports mean ± std on `heldout`.
pub fn evaluate(train_set: &[Example], heldout: &[Example], runs: usize, spec: &TrainSpec<'_>) -> Result<EvalReport> {
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be >= 1".into()));
    }
    let reports = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let run_spec = TrainSpec {
                seed: spec.seed.wrapping_add(r),
                ..spec.clone()
            };
            evaluate_model(&train(train_set, &run_spec)?, heldout)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&reports)
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub label: StanceLabel,
    /// Probabilities for positive, neutral, negative.
    pub posterior: [f64; 3],
}

impl Prediction {
    pub fn from_posterior(doc_id: impl Into<String>, posterior: [f64; 3]) -> Self {
        Self {
            doc_id: doc_id.into(),
            label: StanceLabel::from_index(argmax(&posterior)).unwrap(),
            posterior,
        }
    }
}

pub fn write_predictions(out: &mut impl Write, preds: &[Prediction]) -> std::io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut *out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    let mut f = container::create(path)?;
    write_predictions(&mut f, preds).map_err(|e| Error::io(path, e))
}

/// Reads a predictions file; posteriors must be finite, non-negative and sum to 1 (±1e-6).
pub fn read_predictions(input: impl BufRead) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedRecord {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: n + 1,
            message: e.to_string(),
        })?;
        let sum: f64 = p.posterior.iter().sum();
        if p.posterior.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::MalformedRecord {
                line: n + 1,
                message: "posterior is not a probability distribution".into(),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    read_predictions(container::open(path.as_ref())?)
}

/// Anything that yields a three-class posterior per document.
pub trait Classifier: Send + Sync {
    fn posterior(&self, doc: &TokenStream) -> Result<[f64; 3]>;

    fn predict_all(&self, docs: &[TokenStream]) -> Result<Vec<Prediction>> {
        docs.par_iter()
            .map(|d| Ok(Prediction::from_posterior(d.source_doc_id.clone(), self.posterior(d)?)))
            .collect()
    }
}

/// The reference linear model bundled with the embedding it may need.
pub struct TextClassifier<'a> {
    pub model: &'a ClassifierModel,
    pub embedding: Option<&'a EmbeddingModel>,
}

impl Classifier for TextClassifier<'_> {
    fn posterior(&self, doc: &TokenStream) -> Result<[f64; 3]> {
        if self.model.num_classes() != 3 {
            return Err(Error::InvalidArgument("stance posteriors need a three-class model".into()));
        }
        let f = Featurizer::new(&self.model.feature_config, self.embedding)?;
        let p = self.model.posterior(&f.featurize(doc))?;
        Ok([p[0], p[1], p[2]])
    }
}

/// Posteriors produced elsewhere, looked up by document id.
pub struct PosteriorTable(pub HashMap<String, [f64; 3]>);

impl PosteriorTable {
    pub fn from_predictions(preds: &[Prediction]) -> Self {
        Self(preds.iter().map(|p| (p.doc_id.clone(), p.posterior)).collect())
    }
}

impl Classifier for PosteriorTable {
    fn posterior(&self, doc: &TokenStream) -> Result<[f64; 3]> {
        self.0
            .get(&doc.source_doc_id)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no posterior for document `{}`", doc.source_doc_id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn toks(s: &str) -> TokenStream {
        TokenStream::new("d", s.split_whitespace().map(String::from).collect())
    }

    fn dense(v: &[f64]) -> FeatureVector {
        FeatureVector::from_pairs(v.iter().enumerate().map(|(i, &x)| (i as u32, x)), FeatureSource::HashedNgrams)
    }

    #[test]
    fn labels_round_trip() {
        for l in StanceLabel::ALL {
            assert_eq!(l.to_string().parse::<StanceLabel>().unwrap(), l);
            assert_eq!(StanceLabel::from_index(l.index()), Some(l));
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{l}\""));
        }
        assert!("maybe".parse::<StanceLabel>().is_err());
    }

    #[test]
    fn featurize_basics() {
        let cfg = FeatureConfig::default();
        let f = Featurizer::new(&cfg, None).unwrap();
        let empty = f.featurize(&toks(""));
        assert!(empty.empty && empty.indices.is_empty());
        let a = f.featurize(&toks("x y z"));
        assert_eq!(a, f.featurize(&toks("x y z")));
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let emb_cfg = FeatureConfig {
            doc_embedding: true,
            ..cfg
        };
        assert!(matches!(Featurizer::new(&emb_cfg, None), Err(Error::ModelRequired(_))));
    }

    /// Oracle: the n-grams touched by swapping token `i` are the token itself
    /// and the (at most two) bigrams containing it.
    fn affected_ngrams(tokens: &[String], i: usize) -> Vec<Vec<String>> {
        let mut out = vec![vec![tokens[i].clone()]];
        if i > 0 {
            out.push(vec![tokens[i - 1].clone(), tokens[i].clone()]);
        }
        if i + 1 < tokens.len() {
            out.push(vec![tokens[i].clone(), tokens[i + 1].clone()]);
        }
        out
    }

    fn ngram_bucket(gram: &[String], bits: u32) -> u32 {
        let h = if gram.len() == 1 {
            fnv1a64(&[b"\x01", gram[0].as_bytes()])
        } else {
            fnv1a64(&[b"\x02", gram[0].as_bytes(), b"\x00", gram[1].as_bytes()])
        };
        (h & ((1 << bits) - 1)) as u32
    }

    proptest! {
        #[test]
        fn one_token_swap_touches_only_affected_buckets(
            words in proptest::collection::vec("[a-e]{1,3}", 1..12),
            idx in any::<prop::sample::Index>(),
            new in "[f-h]{1,3}",
        ) {
            let i = idx.index(words.len());
            let mut other = words.clone();
            other[i] = new;
            let a = hashed_ngram_counts(&words, 18);
            let b = hashed_ngram_counts(&other, 18);
            let allowed: Vec<u32> = affected_ngrams(&words, i)
                .iter()
                .chain(affected_ngrams(&other, i).iter())
                .map(|g| ngram_bucket(g, 18))
                .collect();
            prop_assert!(affected_ngrams(&words, i).len() <= 3);
            let keys: std::collections::BTreeSet<u32> = a.keys().chain(b.keys()).copied().collect();
            for k in keys {
                if a.get(&k).copied().unwrap_or(0.0) != b.get(&k).copied().unwrap_or(0.0) {
                    prop_assert!(allowed.contains(&k));
                }
            }
        }

        #[test]
        fn posterior_is_a_distribution(
            w in proptest::collection::vec(-50.0f64..50.0, 12),
            b in proptest::collection::vec(-50.0f64..50.0, 3),
            x in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let mut m = ClassifierModel::zeros(4, FeatureConfig::default());
            m.weights = w;
            m.bias = b;
            let p = m.posterior(&dense(&x)).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn softmax_shift_invariant(z in proptest::collection::vec(-30.0f64..30.0, 3), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ClassifierModel::zeros(4, FeatureConfig::default());
        for p in m.posterior(&dense(&[1.0, 2.0, 0.0, -1.0])).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(matches!(
            m.posterior(&FeatureVector::from_pairs([(9, 1.0)], FeatureSource::HashedNgrams)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hand_computed_softmax() {
        let mut m = ClassifierModel::zeros(2, FeatureConfig::default());
        m.weights = vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0];
        m.bias = vec![0.0, 0.5, 0.0];
        // x = (1, 2): logits (1, 2.5, -3).
        let p = m.posterior(&dense(&[1.0, 2.0])).unwrap();
        let e = [1f64.exp(), 2.5f64.exp(), (-3f64).exp()];
        let s: f64 = e.iter().sum();
        for (a, b) in p.iter().zip(e.iter().map(|v| v / s)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    pub(crate) fn separable(n: usize, seed: u64) -> Vec<Example> {
        let centers = [[3.0, 0.0], [-1.5, 2.6], [-1.5, -2.6]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let y = i % 3;
                let x = [
                    centers[y][0] + rng.random_range(-0.8..0.8),
                    centers[y][1] + rng.random_range(-0.8..0.8),
                ];
                (dense(&x), y)
            })
            .collect()
    }

    fn spec(dim: usize, seed: u64) -> TrainSpec<'static> {
        TrainSpec::stance(dim, FeatureConfig::default(), seed)
    }

    #[test]
    fn separable_training_accuracy() {
        let data = separable(300, 1);
        let m = train(&data, &spec(2, 4)).unwrap();
        let acc = data.iter().filter(|(x, y)| m.predict(x).unwrap() == *y).count() as f64 / 300.0;
        assert!(acc >= 0.95, "{acc}");
        assert!(m.train_log.last().unwrap() < m.train_log.first().unwrap());
        assert_eq!(m, train(&data, &spec(2, 4)).unwrap());
    }

    #[test]
    fn training_errors() {
        let one: Vec<Example> = vec![(dense(&[1.0]), 0), (dense(&[2.0]), 0)];
        assert!(matches!(train(&one, &spec(1, 0)), Err(Error::SingleClass)));
        let nan: Vec<Example> = vec![(dense(&[1.0]), 0), (dense(&[f64::NAN]), 1)];
        assert!(matches!(train(&nan, &spec(1, 0)), Err(Error::NonFiniteFeature(1))));
        let wide: Vec<Example> = vec![(dense(&[1.0, 1.0]), 0), (dense(&[1.0]), 1)];
        assert!(matches!(train(&wide, &spec(1, 0)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let data: Vec<Example> = (0..6)
                .map(|i| (dense(&(0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()), i % 3))
                .collect();
            let obj = Objective {
                examples: &data,
                num_classes: 3,
                dim: 4,
                l2: 0.1,
                class_weights: class_weights(data.iter().map(|e| e.1), 3),
            };
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (gw, _) = obj.gradient(&w, &b);
            let h = 1e-5;
            for j in 0..12 {
                let mut wp = w.clone();
                wp[j] += h;
                let mut wm = w.clone();
                wm[j] -= h;
                let fd = (obj.value(&wp, &b) - obj.value(&wm, &b)) / (2.0 * h);
                assert!((fd - gw[j]).abs() <= 1e-4 * fd.abs().max(gw[j].abs()).max(1e-3));
            }
        }
    }

    #[test]
    fn stronger_l2_shrinks_weights() {
        let data = separable(90, 2);
        let norm = |l2: f64| {
            let mut s = spec(2, 3);
            s.config.l2 = l2;
            s.config.epochs = 200;
            train(&data, &s).unwrap().weight_norm()
        };
        let norms: Vec<f64> = [0.0, 1e-3, 1e-2, 1e-1].into_iter().map(norm).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]), "{norms:?}");
    }

    #[test]
    fn binary_collapse_trains() {
        let data: Vec<Example> = separable(150, 5)
            .into_iter()
            .map(|(x, y)| (x, collapse_binary(StanceLabel::from_index(y).unwrap())))
            .collect();
        let mut s = spec(2, 1);
        s.classes = binary_class_names();
        let m = train(&data, &s).unwrap();
        let p = m.posterior(&data[0].0).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(evaluate_model(&m, &data).unwrap().macro_f1 > 0.9);
    }

    #[test]
    fn warm_start_shapes_must_match() {
        let data = separable(30, 1);
        let prev = train(&data, &spec(2, 0)).unwrap();
        let mut s = spec(2, 0);
        s.init = Some(&prev);
        s.stage = Stage::Certainty;
        let next = train(&data, &s).unwrap();
        assert_eq!(next.stage, Stage::Certainty);
        let mut bad = spec(3, 0);
        bad.init = Some(&prev);
        assert!(train(&data, &bad).is_err());
    }

    #[test]
    fn f1_hand_cases() {
        let classes = stance_class_names();
        let gold = vec![0, 1, 2, 0, 1, 2];
        let perfect = score(&classes, &gold, &gold).unwrap();
        assert_eq!(perfect.macro_f1, 1.0);
        // All-neutral on a balanced set: neutral P=1/3, R=1, F1=0.5.
        let neutral = score(&classes, &gold, &[1; 6]).unwrap();
        assert!((neutral.f1[1] - 0.5).abs() < 1e-12);
        assert!((neutral.macro_f1 - 1.0 / 6.0).abs() < 1e-12);
        let absent = score(&classes, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(absent.f1[2], 0.0);
        assert_eq!(absent.warnings.len(), 1);
    }

    #[test]
    fn evaluate_reports_std() {
        let data = separable(90, 3);
        let held = separable(30, 4);
        let r = evaluate(&data, &held, 3, &spec(2, 0)).unwrap();
        assert_eq!(r.runs, 3);
        assert!(r.macro_f1_std.is_some());
        assert!((r.macro_f1 - r.f1.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.macro_f1));
    }

    #[test]
    fn model_and_predictions_round_trip() {
        let m = train(&separable(60, 1), &spec(2, 0)).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(ClassifierModel::read_from(buf.as_slice()).unwrap(), m);

        let preds = vec![
            Prediction::from_posterior("a", [0.7, 0.2, 0.1]),
            Prediction::from_posterior("b", [0.1, 0.2, 0.7]),
        ];
        assert_eq!(preds[1].label, StanceLabel::Negative);
        let mut out = Vec::new();
        write_predictions(&mut out, &preds).unwrap();
        assert_eq!(read_predictions(out.as_slice()).unwrap(), preds);
        let bad = br#"{"doc_id":"x","label":"neutral","posterior":[0.5,0.5,0.5]}"#;
        assert!(read_predictions(&bad[..]).is_err());
        let table = PosteriorTable::from_predictions(&preds);
        assert_eq!(table.posterior(&TokenStream::new("a", vec![])).unwrap(), [0.7, 0.2, 0.1]);
        assert!(table.posterior(&TokenStream::new("zz", vec![])).is_err());
    }
}
