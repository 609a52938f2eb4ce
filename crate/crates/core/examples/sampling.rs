//! The four samplers side by side: random, exemplar-guided, certainty, margin.
//!
//! Prints how many positives and negatives each batch surfaces.

use std::collections::{HashMap, HashSet};

use stancekit::classifier::{train_stance, Classifier, FeatureConfig, Featurizer, StanceLabel, TextClassifier, TrainSpec};
use stancekit::embedding::{embed_documents, train_embeddings, EmbeddingConfig};
use stancekit::sampling::{certainty_pair, guided_sample, margin_sample, random_sample, SamplingBatch};
use stancekit::synth::{generate, SynthConfig, SynthWorld};

fn composition(world: &SynthWorld, b: &SamplingBatch) -> String {
    let mut c: HashMap<StanceLabel, usize> = HashMap::new();
    for id in &b.doc_ids {
        *c.entry(world.label(id).unwrap()).or_default() += 1;
    }
    let get = |l| c.get(&l).copied().unwrap_or(0);
    format!(
        "{:>4} docs  pos {:>3}  neu {:>3}  neg {:>3}",
        b.len(),
        get(StanceLabel::Positive),
        get(StanceLabel::Neutral),
        get(StanceLabel::Negative)
    )
}

fn main() -> stancekit::Result<()> {
    let world = generate(&SynthConfig {
        n_docs: 6000,
        seed: 9,
        ..SynthConfig::default()
    })?;
    let streams = world.corpus.token_streams(false);
    let mut excluded = HashSet::new();

    let random = random_sample(&world.corpus, 200, None, &excluded, 9, false)?;
    println!("random    {}", composition(&world, &random));
    excluded.extend(random.doc_ids.iter().cloned());

    let emb = train_embeddings(
        &streams,
        &EmbeddingConfig {
            dimension: 32,
            epochs: 3,
            min_count: 2,
            buckets: 50_000,
            seed: 9,
            ..EmbeddingConfig::default()
        },
    )?;
    let vectors = embed_documents(&emb, &streams);
    let guided = guided_sample(&vectors, &world.exemplars(10, 9), &emb, 20, None, &excluded)?;
    println!("guided    {}", composition(&world, &guided));
    excluded.extend(guided.doc_ids.iter().cloned());

    // A seed model trained on the hidden labels of everything sampled so far.
    let features = FeatureConfig {
        hash_bits: 14,
        ..FeatureConfig::default()
    };
    let featurizer = Featurizer::new(&features, None)?;
    let train: Vec<_> = world
        .corpus
        .documents
        .iter()
        .filter(|d| excluded.contains(&d.id))
        .map(|d| (featurizer.featurize(&d.tokens(false)), world.label(&d.id).unwrap()))
        .collect();
    let model = train_stance(&train, &TrainSpec::stance(featurizer.dim(), features.clone(), 9))?;
    let preds = TextClassifier { model: &model, embedding: None }.predict_all(&streams)?;

    let certain = certainty_pair(&preds, 100, 100, &excluded)?;
    println!("certainty {}", composition(&world, &certain));
    let uncertain = margin_sample(&preds, 200, &excluded)?;
    println!("margin    {}", composition(&world, &uncertain));
    Ok(())
}
