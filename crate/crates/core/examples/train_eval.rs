//! Hashed n-gram logistic regression: repeated train/eval, then the binary view.

use stancekit::classifier::{
    binary_class_names, collapse_binary, evaluate, train, Example, FeatureConfig, Featurizer, StanceLabel, TrainSpec,
};
use stancekit::synth::{generate, SynthConfig};

fn main() -> stancekit::Result<()> {
    let world = generate(&SynthConfig {
        n_docs: 6000,
        positive_rate: 0.2,
        negative_rate: 0.2,
        seed: 2,
        ..SynthConfig::default()
    })?;
    let features = FeatureConfig {
        hash_bits: 16,
        ..FeatureConfig::default()
    };
    let fz = Featurizer::new(&features, None)?;
    let examples: Vec<_> = world
        .corpus
        .documents
        .iter()
        .map(|d| (fz.featurize(&d.tokens(false)), world.label(&d.id).unwrap().index()))
        .collect();
    let (tr, te) = examples.split_at(4000);

    let spec = TrainSpec::stance(fz.dim(), features.clone(), 2);
    let report = evaluate(tr, te, 3, &spec)?;
    println!("three classes, {} runs", report.runs);
    for (i, c) in report.classes.iter().enumerate() {
        println!("  {c:<10} P {:.3}  R {:.3}  F1 {:.3}", report.precision[i], report.recall[i], report.f1[i]);
    }
    println!("  macro-F1 {:.3} ± {:.3}", report.macro_f1, report.macro_f1_std.unwrap_or(0.0));

    let to_binary = |xs: &[Example]| -> Vec<Example> {
        xs.iter()
            .map(|(x, y)| (x.clone(), collapse_binary(StanceLabel::from_index(*y).unwrap())))
            .collect()
    };
    let binary = TrainSpec {
        classes: binary_class_names(),
        ..spec.clone()
    };
    let report = evaluate(&to_binary(tr), &to_binary(te), 3, &binary)?;
    println!("positive vs rest: macro-F1 {:.3}", report.macro_f1);

    let model = train(tr, &spec)?;
    println!("weight norm {:.3}, final epoch loss {:.4}", model.weight_norm(), model.train_log.last().unwrap());
    Ok(())
}
