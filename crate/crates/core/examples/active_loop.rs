//! The staged loop end to end: random seed round, certainty rounds, then
//! margin rounds, with simulated annotators and a retrain after each round.

use stancekit::annotation::AnnotationStore;
use stancekit::classifier::{
    evaluate_model, Classifier, ClassifierModel, FeatureConfig, Featurizer, TextClassifier, TrainConfig,
};
use stancekit::pipeline::{apply_labels, retrain, run_round, PipelineState, Pool, RoundParams};
use stancekit::sampling::Strategy;
use stancekit::synth::{generate, SimulatedAnnotators, SynthConfig};

fn main() -> stancekit::Result<()> {
    let world = generate(&SynthConfig {
        n_docs: 8000,
        seed: 21,
        ..SynthConfig::default()
    })?;
    let heldout = generate(&SynthConfig {
        n_docs: 2000,
        seed: 21,
        ..SynthConfig::default()
    })?;
    let features = FeatureConfig {
        hash_bits: 16,
        ..FeatureConfig::default()
    };
    let fz = Featurizer::new(&features, None)?;
    let test: Vec<_> = heldout
        .corpus
        .documents
        .iter()
        .map(|d| (fz.featurize(&d.tokens(false)), heldout.label(&d.id).unwrap().index()))
        .collect();
    let config = TrainConfig {
        learning_rate: 4.0,
        ..TrainConfig::default()
    };
    let streams = world.corpus.token_streams(false);
    let annotators = SimulatedAnnotators::new(2, 0.05, 21);

    let mut state = PipelineState::new();
    let mut store = AnnotationStore::new();
    let mut model: Option<ClassifierModel> = None;
    let schedule = [
        (Strategy::Random, 400),
        (Strategy::Certainty, 300),
        (Strategy::Certainty, 300),
        (Strategy::Margin, 400),
        (Strategy::Margin, 400),
    ];
    for (i, (strategy, n)) in schedule.into_iter().enumerate() {
        let preds = match &model {
            Some(m) => Some(TextClassifier { model: m, embedding: None }.predict_all(&streams)?),
            None => None,
        };
        let mut p = RoundParams::new(strategy);
        p.n = n;
        p.n_positive = n / 2;
        p.n_negative = n / 2;
        p.seed = 21 + i as u64;
        let pool = Pool {
            corpus: &world.corpus,
            vectors: None,
            embedding: None,
            predictions: preds.as_deref(),
        };
        let batch = run_round(&mut state, &p, pool)?;
        for r in annotators.label_batch(&world, &batch)? {
            store.apply(r);
        }
        apply_labels(&mut state, batch.round_id, &store)?;
        let m = retrain(&state, &world.corpus, &features, None, &config, model.as_ref(), 21)?;
        let f1 = evaluate_model(&m, &test)?.macro_f1;
        println!(
            "round {} {:<9} batch {:>3}  training {:>4}  macro-F1 {:.3}",
            batch.round_id,
            strategy.as_str(),
            batch.len(),
            state.training.len(),
            f1
        );
        model = Some(m);
    }
    print!("{}", state.summary());
    Ok(())
}
