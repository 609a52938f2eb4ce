//! Synthetic stance corpora with known labels.
//!
//! Each minority class (positive, negative) has a handful of subtopics.
//! Subtopic `j` of both classes shares a set of theme words, so telling
//! positive from negative needs the class-specific polarity words. Neutral
//! documents come from their own topics, and some of them borrow minority
//! vocabulary to act as hard negatives. Subtopic popularity is Zipfian, so
//! rare subtopics keep rewarding extra labels.

use std::collections::{HashMap, HashSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationRecord;
use crate::classifier::StanceLabel;
use crate::corpus::{Corpus, Document, SliceLabel, SlicePair};
use crate::error::{Error, Result};
use crate::sampling::{Exemplar, SamplingBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub positive_rate: f64,
    pub negative_rate: f64,
    /// Positive rate after the slice boundary; `None` keeps it constant.
    pub positive_rate_after: Option<f64>,
    pub subtopics: usize,
    pub polarity_words: usize,
    pub theme_words: usize,
    pub neutral_topics: usize,
    pub neutral_topic_words: usize,
    pub background_words: usize,
    /// Topic words every document may use (the filter keywords).
    pub shared_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Share of a minority document's tokens drawn from its polarity words.
    pub signal: f64,
    /// Share drawn from the subtopic's theme words.
    pub theme: f64,
    /// Probability that a neutral document borrows minority vocabulary.
    pub confusion: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 20_000,
            positive_rate: 0.05,
            negative_rate: 0.08,
            positive_rate_after: None,
            subtopics: 8,
            polarity_words: 20,
            theme_words: 12,
            neutral_topics: 40,
            neutral_topic_words: 40,
            background_words: 3000,
            shared_words: 10,
            min_len: 8,
            max_len: 20,
            signal: 0.25,
            theme: 0.15,
            confusion: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Clean signal and a planted 10% to 30% positive shift at the slice boundary.
    pub fn shift() -> Self {
        Self {
            n_docs: 10_000,
            positive_rate: 0.10,
            positive_rate_after: Some(0.30),
            signal: 0.5,
            theme: 0.1,
            confusion: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..1.0).contains(&r);
        let after = self.positive_rate_after.unwrap_or(self.positive_rate);
        if !rate_ok(self.positive_rate) || !rate_ok(self.negative_rate) || !rate_ok(after) {
            return Err(Error::Config("class rates must lie in [0, 1)".into()));
        }
        if self.positive_rate.max(after) + self.negative_rate >= 1.0 {
            return Err(Error::Config("minority rates leave no neutral documents".into()));
        }
        if self.signal + self.theme > 1.0 || self.signal < 0.0 || self.theme < 0.0 {
            return Err(Error::Config("signal + theme must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.confusion) {
            return Err(Error::Config("confusion must lie in [0, 1]".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 1 <= min_len <= max_len".into()));
        }
        if [
            self.subtopics,
            self.polarity_words,
            self.theme_words,
            self.neutral_topics,
            self.neutral_topic_words,
            self.background_words,
            self.shared_words,
        ]
        .contains(&0)
        {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        Ok(())
    }
}

struct Vocabulary {
    shared: Vec<String>,
    background: Vec<String>,
    background_dist: WeightedIndex<f64>,
    neutral_topics: Vec<Vec<String>>,
    themes: Vec<Vec<String>>,
    /// `polarity[0]` positive, `polarity[1]` negative, then per subtopic.
    polarity: [Vec<Vec<String>>; 2],
    subtopic_dist: WeightedIndex<f64>,
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r + 1) as f64)).expect("n > 0")
}

/// Distinct pronounceable pseudo-words.
fn word_factory(rng: &mut ChaCha8Rng) -> impl FnMut() -> String + '_ {
    const C: &[u8] = b"bdfghklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut seen = HashSet::new();
    move || loop {
        let syllables = rng.random_range(2..=4);
        let w: String = (0..syllables)
            .flat_map(|_| [C[rng.random_range(0..C.len())] as char, V[rng.random_range(0..V.len())] as char])
            .collect();
        if seen.insert(w.clone()) {
            return w;
        }
    }
}

impl Vocabulary {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut next = word_factory(rng);
        let mut words = |n: usize| (0..n).map(|_| next()).collect::<Vec<_>>();
        let shared = words(cfg.shared_words);
        let background = words(cfg.background_words);
        let neutral_topics = (0..cfg.neutral_topics).map(|_| words(cfg.neutral_topic_words)).collect();
        let themes = (0..cfg.subtopics).map(|_| words(cfg.theme_words)).collect();
        let polarity = [
            (0..cfg.subtopics).map(|_| words(cfg.polarity_words)).collect(),
            (0..cfg.subtopics).map(|_| words(cfg.polarity_words)).collect(),
        ];
        Self {
            background_dist: zipf(background.len()),
            shared,
            background,
            neutral_topics,
            themes,
            polarity,
            subtopic_dist: zipf(cfg.subtopics),
        }
    }

    fn polarity_of(&self, label: StanceLabel, subtopic: usize) -> &[String] {
        let side = usize::from(label == StanceLabel::Negative);
        &self.polarity[side][subtopic]
    }

    fn document(
        &self,
        cfg: &SynthConfig,
        label: StanceLabel,
        rng: &mut ChaCha8Rng,
        signal: f64,
        theme: f64,
        len: usize,
    ) -> String {
        let topic = rng.random_range(0..self.neutral_topics.len());
        let subtopic = self.subtopic_dist.sample(rng);
        // Neutral documents sometimes borrow a minority subtopic's words.
        let (signal, theme, borrowed) = match label {
            StanceLabel::Neutral if rng.random_bool(cfg.confusion) => {
                let side = if rng.random_bool(0.5) { StanceLabel::Positive } else { StanceLabel::Negative };
                (0.05, 0.15, Some(side))
            }
            StanceLabel::Neutral => (0.0, 0.0, None),
            _ => (signal, theme, Some(label)),
        };
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let u: f64 = rng.random();
            let w = if u < signal {
                self.polarity_of(borrowed.unwrap_or(label), subtopic).choose(rng)
            } else if u < signal + theme {
                self.themes[subtopic].choose(rng)
            } else if u < signal + theme + 0.1 {
                self.shared.choose(rng)
            } else if u < signal + theme + 0.45 {
                self.neutral_topics[topic].choose(rng)
            } else {
                Some(&self.background[self.background_dist.sample(rng)])
            };
            out.push(w.expect("non-empty word list").as_str());
        }
        out.join(" ")
    }
}

/// A generated corpus with its hidden labels.
pub struct SynthWorld {
    pub config: SynthConfig,
    pub corpus: Corpus,
    pub labels: HashMap<String, StanceLabel>,
    vocab: Vocabulary,
}

impl SynthWorld {
    pub fn label(&self, doc_id: &str) -> Option<StanceLabel> {
        self.labels.get(doc_id).copied()
    }

    pub fn count(&self, label: StanceLabel) -> usize {
        self.labels.values().filter(|&&l| l == label).count()
    }

    /// Annotator-written examples, alternating positive and negative and
    /// cycling through subtopics in popularity order.
    pub fn exemplars(&self, n: usize, seed: u64) -> Vec<Exemplar> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe8e8);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { StanceLabel::Positive } else { StanceLabel::Negative };
                let subtopic = (i / 2) % self.config.subtopics;
                let words: Vec<&str> = (0..14)
                    .map(|j| {
                        let w = if j % 2 == 0 {
                            self.vocab.polarity_of(label, subtopic).choose(&mut rng)
                        } else {
                            self.vocab.themes[subtopic].choose(&mut rng)
                        };
                        w.unwrap().as_str()
                    })
                    .collect();
                Exemplar {
                    annotator_id: format!("ann{}", i % 2),
                    text: words.join(" "),
                    intended_label: label,
                }
            })
            .collect()
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = Vocabulary::new(cfg, &mut rng);
    let slices = SlicePair::study_period();
    let (start, end) = slices.window();
    let t0: DateTime<Utc> = Utc.from_utc_datetime(&start.and_hms_opt(0, 0, 0).unwrap());
    let span = (end - start).num_seconds() + 86_399;
    let times: Vec<DateTime<Utc>> = (0..cfg.n_docs)
        .map(|_| t0 + Duration::seconds(rng.random_range(0..=span)))
        .collect();
    // Class counts are planted exactly per slice: shuffle each slice and
    // hand out quotas, so prevalence carries no sampling noise.
    let mut by_slice: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, t) in times.iter().enumerate() {
        by_slice[usize::from(slices.label_of(*t) == Some(SliceLabel::After))].push(i);
    }
    let mut planted = vec![StanceLabel::Neutral; cfg.n_docs];
    for (s, idx) in by_slice.iter_mut().enumerate() {
        let pos_rate = match (s, cfg.positive_rate_after) {
            (1, Some(after)) => after,
            _ => cfg.positive_rate,
        };
        idx.shuffle(&mut rng);
        let n_pos = (pos_rate * idx.len() as f64).round() as usize;
        let n_neg = (cfg.negative_rate * idx.len() as f64).round() as usize;
        for (j, &i) in idx.iter().enumerate() {
            if j < n_pos {
                planted[i] = StanceLabel::Positive;
            } else if j < n_pos + n_neg {
                planted[i] = StanceLabel::Negative;
            }
        }
    }
    let mut documents = Vec::with_capacity(cfg.n_docs);
    let mut labels = HashMap::with_capacity(cfg.n_docs);
    for (i, (created_at, label)) in times.into_iter().zip(planted).enumerate() {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let text = vocab.document(cfg, label, &mut rng, cfg.signal, cfg.theme, len);
        let id = format!("s{i:06}");
        labels.insert(id.clone(), label);
        documents.push(Document {
            id,
            text,
            author_id: format!("u{}", rng.random_range(0..cfg.n_docs / 4 + 1)),
            created_at,
            account_created_at: None,
            language: "fa".into(),
            hashtags: Vec::new(),
        });
    }
    let corpus = Corpus::from_documents(format!("synth-{}", cfg.seed), "fa", documents)?;
    Ok(SynthWorld {
        config: cfg.clone(),
        corpus,
        labels,
        vocab,
    })
}

/// Annotators who each return the hidden label, flipped to a random other
/// label with probability `error_rate`.
#[derive(Debug, Clone)]
pub struct SimulatedAnnotators {
    pub annotators: Vec<String>,
    pub error_rate: f64,
    pub seed: u64,
}

impl SimulatedAnnotators {
    pub fn new(count: usize, error_rate: f64, seed: u64) -> Self {
        Self {
            annotators: (0..count).map(|i| format!("sim{i}")).collect(),
            error_rate,
            seed,
        }
    }

    /// Every annotator labels every document of the batch.
    pub fn label_batch(&self, world: &SynthWorld, batch: &SamplingBatch) -> Result<Vec<AnnotationRecord>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ batch.round_id.wrapping_mul(0x9e37_79b9));
        let at = Utc.timestamp_opt(1_672_531_200 + batch.round_id as i64 * 86_400, 0).unwrap();
        let mut out = Vec::with_capacity(batch.len() * self.annotators.len());
        for doc_id in &batch.doc_ids {
            let truth = world
                .label(doc_id)
                .ok_or_else(|| Error::InvalidArgument(format!("`{doc_id}` is not a synthetic document")))?;
            for a in &self.annotators {
                let label = if rng.random_bool(self.error_rate) {
                    let others: Vec<StanceLabel> = StanceLabel::ALL.into_iter().filter(|&l| l != truth).collect();
                    *others.choose(&mut rng).unwrap()
                } else {
                    truth
                };
                out.push(AnnotationRecord {
                    doc_id: doc_id.clone(),
                    annotator_id: a.clone(),
                    label,
                    round_id: batch.round_id,
                    timestamp: at,
                });
            }
        }
        Ok(out)
    }
}
