//! Monthly stance shares from model predictions and the after/before ratio.

use stancekit::analysis::{stance_timeseries, Granularity};
use stancekit::classifier::{train_stance, Classifier, FeatureConfig, Featurizer, StanceLabel, TextClassifier, TrainConfig, TrainSpec};
use stancekit::corpus::SlicePair;
use stancekit::synth::{generate, SynthConfig};

fn main() -> stancekit::Result<()> {
    let world = generate(&SynthConfig {
        n_docs: 6000,
        seed: 8,
        ..SynthConfig::shift()
    })?;
    let features = FeatureConfig {
        hash_bits: 16,
        ..FeatureConfig::default()
    };
    let fz = Featurizer::new(&features, None)?;
    // Train on a labelled slice of the corpus, then score all of it.
    let train: Vec<_> = world.corpus.documents[..1500]
        .iter()
        .map(|d| (fz.featurize(&d.tokens(false)), world.label(&d.id).unwrap()))
        .collect();
    let spec = TrainSpec {
        config: TrainConfig {
            learning_rate: 4.0,
            class_weights: false,
            ..TrainConfig::default()
        },
        ..TrainSpec::stance(fz.dim(), features.clone(), 8)
    };
    let model = train_stance(&train, &spec)?;
    let preds = TextClassifier { model: &model, embedding: None }.predict_all(&world.corpus.token_streams(false))?;

    let slices = SlicePair::study_period();
    let ts = stance_timeseries(&world.corpus, &preds, Granularity::Month, Some(&slices))?;
    println!("{:<10} {:>5} {:>8} {:>8} {:>8}", "month", "n", "pos", "neu", "neg");
    for p in &ts.points {
        let s = |l| p.shares.get(l).map_or("-".into(), |v| format!("{v:.3}"));
        println!(
            "{:<10} {:>5} {:>8} {:>8} {:>8}",
            p.period,
            p.shares.n,
            s(StanceLabel::Positive),
            s(StanceLabel::Neutral),
            s(StanceLabel::Negative)
        );
    }
    let pos = |s: &Option<stancekit::analysis::StanceShares>| s.as_ref().and_then(|s| s.positive).unwrap_or(0.0);
    println!("positive share before {:.3}, after {:.3}", pos(&ts.before), pos(&ts.after));
    if let Some(r) = ts.ratio.as_ref().and_then(|r| r.get(&StanceLabel::Positive).copied().flatten()) {
        println!("after/before ratio {r:.2} (planted 3.0)");
    }
    Ok(())
}
