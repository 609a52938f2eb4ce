//! End-to-end active-learning benchmark on synthetic worlds.
//!
//! One run per seed: generate a world, hold out an evaluation set, then
//! walk the staged schedule (random + guided seed, two certainty rounds,
//! one margin round) with simulated annotators, retraining after every
//! round. Macro-F1 is measured after each stage by training `runs` fresh
//! models on the cumulative labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{stance_timeseries, Granularity, StanceTimeSeries};
use crate::annotation::AnnotationStore;
use crate::classifier::{
    evaluate, train_stance, Classifier, ClassifierModel, EvalReport, FeatureConfig, Featurizer, Prediction, Stage,
    StanceLabel, TextClassifier, TrainConfig, TrainSpec,
};
use crate::corpus::SlicePair;
use crate::embedding::{embed_documents, train_embeddings, EmbeddingConfig, EmbeddingModel};
use crate::error::Result;
use crate::pipeline::{apply_labels, retrain, run_round, training_examples, LabelCounts, PipelineState, Pool, RoundParams};
use crate::sampling::{random_sample, SamplingBatch, Strategy};
use crate::synth::{generate, SimulatedAnnotators, SynthConfig, SynthWorld};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub synth: SynthConfig,
    pub eval_size: usize,
    pub embedding: EmbeddingConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub random_n: usize,
    pub exemplars: usize,
    pub guided_k: usize,
    pub certainty_rounds: usize,
    pub certainty_per_class: usize,
    pub margin_n: usize,
    /// Training runs averaged per stage.
    pub runs: usize,
    pub annotators: usize,
    pub annotator_error: f64,
    pub shift: SynthConfig,
    /// Oracle-labelled training documents for the shift check.
    pub shift_train: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            eval_size: 4000,
            embedding: EmbeddingConfig {
                dimension: 32,
                window: 4,
                epochs: 3,
                min_count: 2,
                buckets: 1 << 17,
                ..EmbeddingConfig::default()
            },
            features: FeatureConfig {
                hashed_ngrams: true,
                hash_bits: 18,
                doc_embedding: true,
            },
            train: TrainConfig {
                learning_rate: 4.0,
                ..TrainConfig::default()
            },
            random_n: 300,
            exemplars: 30,
            guided_k: 10,
            certainty_rounds: 2,
            certainty_per_class: 200,
            margin_n: 800,
            runs: 5,
            annotators: 2,
            annotator_error: 0.03,
            shift: SynthConfig::shift(),
            shift_train: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: Stage,
    pub rounds: usize,
    /// Cumulative resolved labels.
    pub labels: LabelCounts,
    pub macro_f1: f64,
    pub macro_f1_std: Option<f64>,
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<StageRow>,
    pub random_positive_rate: f64,
    pub guided_positive_rate: f64,
    pub enrichment: f64,
    /// Every document the pipeline emitted was emitted once.
    pub no_repeats: bool,
    pub seconds: f64,
}

impl SeedResult {
    pub fn strictly_improving(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].macro_f1 < w[1].macro_f1)
    }

    /// Macro-F1 points gained from the first to the last stage.
    pub fn gain_points(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => 100.0 * (b.macro_f1 - a.macro_f1),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftResult {
    pub seed: u64,
    pub true_before: f64,
    pub true_after: f64,
    pub true_ratio: f64,
    pub recovered_ratio: Option<f64>,
    pub series: StanceTimeSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seeds: Vec<SeedResult>,
    pub shift: ShiftResult,
    pub seconds: f64,
}

impl BenchReport {
    /// Learning-curve table, tab separated.
    pub fn table(&self) -> String {
        let mut s = String::from("seed\tstage\trounds\tpositive\tneutral\tnegative\tmacro_f1\tstd\tf1_pos\tf1_neu\tf1_neg\n");
        for r in &self.seeds {
            for row in &r.rows {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{:.4}\t{:.4}\t{:.4}",
                    r.seed,
                    row.stage,
                    row.rounds,
                    row.labels.positive,
                    row.labels.neutral,
                    row.labels.negative,
                    row.macro_f1,
                    row.macro_f1_std.map_or("-".into(), |v| format!("{v:.4}")),
                    row.f1[0],
                    row.f1[1],
                    row.f1[2]
                );
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("seed\trandom_pos\tguided_pos\tenrichment\tgain_points\tstrict\n");
        for r in &self.seeds {
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.2}\t{:.2}\t{}",
                r.seed,
                r.random_positive_rate,
                r.guided_positive_rate,
                r.enrichment,
                r.gain_points(),
                r.strictly_improving()
            );
        }
        let _ = writeln!(
            s,
            "shift\ttrue_ratio={:.3}\trecovered_ratio={}",
            self.shift.true_ratio,
            self.shift.recovered_ratio.map_or("-".into(), |v| format!("{v:.3}"))
        );
        let _ = writeln!(s, "seconds\t{:.1}", self.seconds);
        s
    }
}

fn positive_rate(world: &SynthWorld, batch: &SamplingBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let pos = batch
        .doc_ids
        .iter()
        .filter(|d| world.label(d) == Some(StanceLabel::Positive))
        .count();
    pos as f64 / batch.len() as f64
}

fn predict_pool(model: &ClassifierModel, embedding: &EmbeddingModel, world: &SynthWorld, skip: &BTreeSet<String>) -> Result<Vec<Prediction>> {
    let docs: Vec<_> = world
        .corpus
        .documents
        .iter()
        .filter(|d| !skip.contains(&d.id))
        .map(|d| d.tokens(false))
        .collect();
    TextClassifier {
        model,
        embedding: Some(embedding),
    }
    .predict_all(&docs)
}

/// Runs the staged schedule on one synthetic world.
pub fn run_seed(cfg: &BenchConfig, seed: u64) -> Result<SeedResult> {
    let started = Instant::now();
    let world = generate(&SynthConfig {
        seed,
        ..cfg.synth.clone()
    })?;
    let corpus = &world.corpus;
    let streams = corpus.token_streams(false);
    let embedding = train_embeddings(
        &streams,
        &EmbeddingConfig {
            seed,
            ..cfg.embedding.clone()
        },
    )?;
    let vectors = embed_documents(&embedding, &streams);
    let featurizer = Featurizer::new(&cfg.features, Some(&embedding))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let held: Vec<usize> = sample(&mut rng, corpus.len(), cfg.eval_size.min(corpus.len() / 2)).into_vec();
    let heldout: Vec<_> = held
        .iter()
        .map(|&i| {
            let d = &corpus.documents[i];
            (featurizer.featurize(&streams[i]), world.label(&d.id).unwrap().index())
        })
        .collect();
    let mut state = PipelineState::new();
    state.reserve(held.iter().map(|&i| corpus.documents[i].id.clone()));

    let annotators = SimulatedAnnotators::new(cfg.annotators, cfg.annotator_error, seed);
    let mut store = AnnotationStore::new();
    let slices = SlicePair::study_period();
    let mut emitted: HashSet<String> = HashSet::new();
    let mut no_repeats = true;
    let mut model: Option<ClassifierModel> = None;
    let mut rows = Vec::new();
    let mut guided_rate = 0.0;
    let mut random_rate = 0.0;

    let eval_spec = |state: &PipelineState| -> Result<StageRow> {
        let train: Vec<_> = training_examples(state, corpus, &featurizer)?
            .into_iter()
            .map(|(x, y)| (x, y.index()))
            .collect();
        let spec = TrainSpec {
            config: cfg.train.clone(),
            stage: state.stage.unwrap_or(Stage::Seed),
            ..TrainSpec::stance(featurizer.dim(), cfg.features.clone(), seed)
        };
        let report: EvalReport = evaluate(&train, &heldout, cfg.runs, &spec)?;
        Ok(StageRow {
            stage: spec.stage,
            rounds: state.rounds.len(),
            labels: state.total_counts(),
            macro_f1: report.macro_f1,
            macro_f1_std: report.macro_f1_std,
            f1: report.f1,
        })
    };

    let schedule: Vec<(Strategy, bool)> = [(Strategy::Random, false), (Strategy::Guided, true)]
        .into_iter()
        .chain((0..cfg.certainty_rounds).map(|i| (Strategy::Certainty, i + 1 == cfg.certainty_rounds)))
        .chain([(Strategy::Margin, true)])
        .collect();
    for (round, (strategy, ends_stage)) in schedule.into_iter().enumerate() {
        let round_seed = seed.wrapping_mul(1000).wrapping_add(round as u64);
        let preds = match (&model, strategy) {
            (Some(m), Strategy::Certainty | Strategy::Margin) => Some(predict_pool(m, &embedding, &world, &state.exclusion)?),
            _ => None,
        };
        let mut params = RoundParams::new(strategy);
        params.n = if strategy == Strategy::Random { cfg.random_n } else { cfg.margin_n };
        params.n_positive = cfg.certainty_per_class;
        params.n_negative = cfg.certainty_per_class;
        params.k_per_exemplar = cfg.guided_k;
        params.exemplars = world.exemplars(cfg.exemplars, seed);
        params.slices = Some(slices);
        params.seed = round_seed;
        let pool = Pool {
            corpus,
            vectors: Some(&vectors),
            embedding: Some(&embedding),
            predictions: preds.as_deref(),
        };
        if strategy == Strategy::Guided {
            // Counterfactual random draw at the same budget, not labelled.
            let exclude: HashSet<String> = state.exclusion.iter().cloned().collect();
            let budget = cfg.exemplars * cfg.guided_k;
            let baseline = random_sample(corpus, budget, None, &exclude, round_seed ^ 0xabc, true)?;
            random_rate = positive_rate(&world, &baseline);
        }
        let batch = run_round(&mut state, &params, pool)?;
        if strategy == Strategy::Guided {
            guided_rate = positive_rate(&world, &batch);
        }
        for d in &batch.doc_ids {
            no_repeats &= emitted.insert(d.clone());
        }
        for rec in annotators.label_batch(&world, &batch)? {
            store.apply(rec);
        }
        apply_labels(&mut state, batch.round_id, &store)?;
        model = Some(retrain(&state, corpus, &cfg.features, Some(&embedding), &cfg.train, model.as_ref(), round_seed)?);
        if ends_stage {
            rows.push(eval_spec(&state)?);
        }
    }

    Ok(SeedResult {
        seed,
        rows,
        random_positive_rate: random_rate,
        guided_positive_rate: guided_rate,
        enrichment: if random_rate > 0.0 { guided_rate / random_rate } else { f64::INFINITY },
        no_repeats,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains on oracle labels from a world with a planted positive-share
/// shift and measures the after/before ratio the classifier recovers.
pub fn shift_check(cfg: &BenchConfig, seed: u64) -> Result<ShiftResult> {
    let world = generate(&SynthConfig {
        seed,
        ..cfg.shift.clone()
    })?;
    let corpus = &world.corpus;
    let slices = SlicePair::study_period();
    let features = FeatureConfig {
        doc_embedding: false,
        ..cfg.features.clone()
    };
    let featurizer = Featurizer::new(&features, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5417);
    let train_idx: HashSet<usize> = sample(&mut rng, corpus.len(), cfg.shift_train.min(corpus.len() / 2))
        .into_iter()
        .collect();
    let mut examples = Vec::new();
    let mut rest = Vec::new();
    for (i, d) in corpus.documents.iter().enumerate() {
        if train_idx.contains(&i) {
            examples.push((featurizer.featurize(&d.tokens(false)), world.label(&d.id).unwrap()));
        } else {
            rest.push(d.clone());
        }
    }
    let model = train_stance(
        &examples,
        &TrainSpec {
            // Class weights inflate minority predictions in both slices and
            // pull the ratio toward 1, so shares are estimated unweighted.
            config: TrainConfig {
                class_weights: false,
                ..cfg.train.clone()
            },
            ..TrainSpec::stance(featurizer.dim(), features.clone(), seed)
        },
    )?;
    let scored = corpus.with_documents(rest);
    let preds = TextClassifier {
        model: &model,
        embedding: None,
    }
    .predict_all(&scored.token_streams(false))?;
    let series = stance_timeseries(&scored, &preds, Granularity::Month, Some(&slices))?;

    let mut truth: BTreeMap<bool, [usize; 2]> = BTreeMap::new();
    for d in &scored.documents {
        let after = slices.label_of(d.created_at) == Some(crate::corpus::SliceLabel::After);
        let e = truth.entry(after).or_insert([0, 0]);
        e[0] += 1;
        e[1] += usize::from(world.label(&d.id) == Some(StanceLabel::Positive));
    }
    let share = |after: bool| truth.get(&after).map_or(0.0, |c| c[1] as f64 / c[0].max(1) as f64);
    let recovered_ratio = series
        .ratio
        .as_ref()
        .and_then(|r| r.get(&StanceLabel::Positive).copied().flatten());
    Ok(ShiftResult {
        seed,
        true_before: share(false),
        true_after: share(true),
        true_ratio: share(true) / share(false),
        recovered_ratio,
        series,
    })
}

pub fn synth_bench(cfg: &BenchConfig, seeds: &[u64]) -> Result<BenchReport> {
    let started = Instant::now();
    let results = seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>>>()?;
    let shift = shift_check(cfg, seeds.first().copied().unwrap_or(0))?;
    Ok(BenchReport {
        seeds: results,
        shift,
        seconds: started.elapsed().as_secs_f64(),
    })
}
