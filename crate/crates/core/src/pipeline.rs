//! Active-learning round bookkeeping.
//!
//! [`PipelineState`] owns the global exclusion set (every document ever put
//! in a batch), the pending batches, the resolved training set and the
//! stage schedule. Sampling and retraining read from it; only
//! [`run_round`] and [`apply_labels`] change it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationStore, Resolution, ResolutionKind, ResolvedExample};
use crate::classifier::{
    train_stance, ClassifierModel, FeatureConfig, FeatureVector, Featurizer, Prediction, Stage, StanceLabel,
    TrainConfig, TrainSpec,
};
use crate::corpus::{Corpus, SliceLabel, SlicePair};
use crate::embedding::{DocVector, EmbeddingModel};
use crate::error::{Error, Result};
use crate::sampling::{certainty_pair, guided_sample, margin_sample, random_sample, Exemplar, SamplingBatch, Strategy};

const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: u64,
    pub neutral: u64,
    pub negative: u64,
}

impl LabelCounts {
    pub fn add(&mut self, label: StanceLabel) {
        match label {
            StanceLabel::Positive => self.positive += 1,
            StanceLabel::Neutral => self.neutral += 1,
            StanceLabel::Negative => self.negative += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.positive + self.neutral + self.negative
    }

    pub fn merged(&self, other: &LabelCounts) -> LabelCounts {
        LabelCounts {
            positive: self.positive + other.positive,
            neutral: self.neutral + other.neutral,
            negative: self.negative + other.negative,
        }
    }
}

/// Stage a batch's labels count toward.
pub fn stage_of(strategy: Strategy) -> Stage {
    match strategy {
        Strategy::Random | Strategy::Guided => Stage::Seed,
        Strategy::Certainty => Stage::Certainty,
        Strategy::Margin => Stage::Uncertainty,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLogEntry {
    pub round_id: u64,
    pub strategy: Strategy,
    pub stage: Stage,
    pub sampled: usize,
    pub consensus: usize,
    pub negative_precedence: usize,
    pub unresolved: usize,
    /// Documents in the batch nobody labelled.
    pub unlabeled: usize,
    pub counts: LabelCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub version: u32,
    pub next_round: u64,
    /// Every document ever emitted in a batch.
    pub exclusion: BTreeSet<String>,
    pub pending: Vec<SamplingBatch>,
    pub rounds: Vec<RoundLogEntry>,
    pub training: Vec<ResolvedExample>,
    /// Stage of the most recent labelled data; `None` before any labels.
    pub stage: Option<Stage>,
    pub cumulative: BTreeMap<Stage, LabelCounts>,
}

impl Default for PipelineState {
    fn default() -> Self {
        Self {
            version: STATE_VERSION,
            next_round: 0,
            exclusion: BTreeSet::new(),
            pending: Vec::new(),
            rounds: Vec::new(),
            training: Vec::new(),
            stage: None,
            cumulative: BTreeMap::new(),
        }
    }
}

impl PipelineState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Documents held out from every batch, e.g. a fixed evaluation set.
    pub fn reserve(&mut self, doc_ids: impl IntoIterator<Item = String>) {
        self.exclusion.extend(doc_ids);
    }

    /// Records an already-sampled batch as the next pending round. Used by
    /// [`run_round`] and when replaying a log of past batches.
    pub fn admit(&mut self, batch: SamplingBatch) -> Result<()> {
        if batch.round_id != self.next_round {
            return Err(Error::InvalidArgument(format!(
                "batch is round {} but the next round is {}",
                batch.round_id, self.next_round
            )));
        }
        if let Some(d) = batch.doc_ids.iter().find(|d| self.exclusion.contains(*d)) {
            return Err(Error::InvalidArgument(format!("document `{d}` was already sampled")));
        }
        self.next_round += 1;
        self.exclusion.extend(batch.doc_ids.iter().cloned());
        self.pending.push(batch);
        Ok(())
    }

    pub fn pending_round(&self, round_id: u64) -> Option<&SamplingBatch> {
        self.pending.iter().find(|b| b.round_id == round_id)
    }

    pub fn total_counts(&self) -> LabelCounts {
        self.cumulative.values().fold(LabelCounts::default(), |a, c| a.merged(c))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: Self = serde_json::from_str(&text).map_err(|e| Error::BadModelFile(format!("pipeline state: {e}")))?;
        if state.version != STATE_VERSION {
            return Err(Error::BadModelFile(format!("unsupported pipeline state version {}", state.version)));
        }
        Ok(state)
    }

    /// Human-readable round summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "round\tstrategy\tstage\tsampled\tconsensus\tneg_prec\tunresolved\tpos\tneu\tneg");
        for r in &self.rounds {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.round_id,
                r.strategy,
                r.stage,
                r.sampled,
                r.consensus,
                r.negative_precedence,
                r.unresolved,
                r.counts.positive,
                r.counts.neutral,
                r.counts.negative
            );
        }
        for b in &self.pending {
            let _ = writeln!(s, "{}\t{}\tpending\t{}", b.round_id, b.strategy, b.len());
        }
        let t = self.total_counts();
        let _ = writeln!(s, "total\t\t\t\t\t\t\t{}\t{}\t{}", t.positive, t.neutral, t.negative);
        s
    }
}

/// Strategy parameters for one round.
#[derive(Debug, Clone)]
pub struct RoundParams {
    pub strategy: Strategy,
    /// Batch size for random and margin rounds.
    pub n: usize,
    /// Per-class batch sizes for certainty rounds.
    pub n_positive: usize,
    pub n_negative: usize,
    /// Neighbours per exemplar for guided rounds.
    pub k_per_exemplar: usize,
    pub exemplars: Vec<Exemplar>,
    pub slices: Option<SlicePair>,
    pub seed: u64,
    pub lenient: bool,
}

impl RoundParams {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            n: 0,
            n_positive: 0,
            n_negative: 0,
            k_per_exemplar: 25,
            exemplars: Vec::new(),
            slices: None,
            seed: 0,
            lenient: true,
        }
    }
}

/// What the samplers can draw from.
#[derive(Clone, Copy)]
pub struct Pool<'a> {
    pub corpus: &'a Corpus,
    pub vectors: Option<&'a [DocVector]>,
    pub embedding: Option<&'a EmbeddingModel>,
    /// Posteriors of the current model over the pool.
    pub predictions: Option<&'a [Prediction]>,
}

/// Samples the next batch and marks its documents pending.
pub fn run_round(state: &mut PipelineState, params: &RoundParams, pool: Pool<'_>) -> Result<SamplingBatch> {
    let exclude: HashSet<String> = state.exclusion.iter().cloned().collect();
    let needs_model = matches!(params.strategy, Strategy::Certainty | Strategy::Margin);
    if needs_model && state.training.is_empty() {
        return Err(Error::ModelRequired(params.strategy.as_str()));
    }
    let mut batch = match params.strategy {
        Strategy::Random => random_sample(pool.corpus, params.n, params.slices.as_ref(), &exclude, params.seed, params.lenient)?,
        Strategy::Guided => {
            let (Some(vectors), Some(model)) = (pool.vectors, pool.embedding) else {
                return Err(Error::ModelRequired("guided"));
            };
            let slice_map: Option<HashMap<String, SliceLabel>> = params.slices.as_ref().map(|s| {
                pool.corpus
                    .documents
                    .iter()
                    .filter_map(|d| s.label_of(d.created_at).map(|l| (d.id.clone(), l)))
                    .collect()
            });
            guided_sample(vectors, &params.exemplars, model, params.k_per_exemplar, slice_map.as_ref(), &exclude)?
        }
        Strategy::Certainty => {
            let preds = pool.predictions.ok_or(Error::ModelRequired("certainty"))?;
            certainty_pair(preds, params.n_positive, params.n_negative, &exclude)?
        }
        Strategy::Margin => {
            let preds = pool.predictions.ok_or(Error::ModelRequired("margin"))?;
            margin_sample(preds, params.n, &exclude)?
        }
    };
    batch.round_id = state.next_round;
    state.admit(batch.clone())?;
    Ok(batch)
}

/// Resolves a pending round from the annotation store and moves its
/// resolved examples into the training set.
///
/// Returns `None` and leaves the state untouched when no document of the
/// round has a label yet.
pub fn apply_labels(state: &mut PipelineState, round_id: u64, store: &AnnotationStore) -> Result<Option<RoundLogEntry>> {
    let pos = state
        .pending
        .iter()
        .position(|b| b.round_id == round_id)
        .ok_or(Error::UnknownRound(round_id))?;
    let batch = &state.pending[pos];
    let resolutions = store.resolve_docs(batch.doc_ids.iter().map(String::as_str));
    if resolutions.is_empty() {
        return Ok(None);
    }
    let stage = stage_of(batch.strategy);
    let mut entry = RoundLogEntry {
        round_id,
        strategy: batch.strategy,
        stage,
        sampled: batch.len(),
        consensus: 0,
        negative_precedence: 0,
        unresolved: 0,
        unlabeled: batch.len() - resolutions.len(),
        counts: LabelCounts::default(),
    };
    let mut resolved = Vec::new();
    for r in resolutions {
        match r {
            Resolution::Resolved(ex) => {
                match ex.resolution {
                    ResolutionKind::Consensus => entry.consensus += 1,
                    ResolutionKind::NegativePrecedence => entry.negative_precedence += 1,
                }
                entry.counts.add(ex.aggregate_label);
                resolved.push(ex);
            }
            Resolution::Unresolved { .. } => entry.unresolved += 1,
        }
    }
    state.pending.remove(pos);
    state.training.extend(resolved);
    let c = state.cumulative.entry(stage).or_default();
    *c = c.merged(&entry.counts);
    state.stage = Some(state.stage.map_or(stage, |s| s.max(stage)));
    state.rounds.push(entry.clone());
    Ok(Some(entry))
}

/// Featurized training set from the state's resolved examples.
pub fn training_examples(
    state: &PipelineState,
    corpus: &Corpus,
    featurizer: &Featurizer<'_>,
) -> Result<Vec<(FeatureVector, StanceLabel)>> {
    let by_id: HashMap<&str, &crate::corpus::Document> = corpus.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    state
        .training
        .iter()
        .map(|ex| {
            let doc = by_id
                .get(ex.doc_id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("training document `{}` not in corpus", ex.doc_id)))?;
            Ok((featurizer.featurize(&doc.tokens(false)), ex.aggregate_label))
        })
        .collect()
}

/// Retrains on everything resolved so far, warm-starting from `previous`.
pub fn retrain(
    state: &PipelineState,
    corpus: &Corpus,
    features: &FeatureConfig,
    embedding: Option<&EmbeddingModel>,
    config: &TrainConfig,
    previous: Option<&ClassifierModel>,
    seed: u64,
) -> Result<ClassifierModel> {
    let featurizer = Featurizer::new(features, embedding)?;
    let examples = training_examples(state, corpus, &featurizer)?;
    let spec = TrainSpec {
        config: config.clone(),
        stage: state.stage.unwrap_or(Stage::Seed),
        init: previous.filter(|p| p.dim == featurizer.dim()),
        ..TrainSpec::stance(featurizer.dim(), features.clone(), seed)
    };
    train_stance(&examples, &spec)
}
