//! Subword skip-gram training, nearest words, and exact document neighbours.

use stancekit::classifier::StanceLabel;
use stancekit::embedding::{embed_documents, embed_text, nearest, train_embeddings, EmbeddingConfig, Metric};
use stancekit::synth::{generate, SynthConfig};

fn main() -> stancekit::Result<()> {
    let world = generate(&SynthConfig {
        n_docs: 3000,
        seed: 5,
        ..SynthConfig::default()
    })?;
    let streams = world.corpus.token_streams(false);
    let model = train_embeddings(
        &streams,
        &EmbeddingConfig {
            dimension: 32,
            epochs: 10,
            min_count: 2,
            buckets: 50_000,
            seed: 5,
            ..EmbeddingConfig::default()
        },
    )?;
    println!("vocabulary {}  loss per epoch {:?}", model.vocab_len(), model.epoch_loss());

    let ex = &world.exemplars(1, 5)[0];
    let probe = ex.text.split_whitespace().next().unwrap();
    println!("\nnearest words to `{probe}`:");
    for (w, s) in model.nearest_words(probe, 5) {
        println!("  {w:<16} {s:.3}");
    }

    let pool = embed_documents(&model, &streams);
    let query = embed_text(&model, "exemplar", &ex.text);
    println!("\nexemplar ({}): {}", ex.intended_label.as_str(), ex.text);
    let top = nearest(&query, &pool, 100, Metric::Cosine)?;
    for n in &top[..8] {
        let label = world.label(&n.doc_id).unwrap();
        println!("  {}  {:.3}  {}", n.doc_id, n.similarity, label.as_str());
    }
    // Theme words are shared by both polarities, so neighbours are enriched
    // for stance-bearing documents in general.
    let minority = |ids: &mut dyn Iterator<Item = &str>| {
        let v: Vec<bool> = ids.map(|id| world.label(id) != Some(StanceLabel::Neutral)).collect();
        v.iter().filter(|&&b| b).count() as f64 / v.len() as f64
    };
    println!(
        "non-neutral share: top 100 {:.2}, corpus {:.2}",
        minority(&mut top.iter().map(|n| n.doc_id.as_str())),
        minority(&mut world.corpus.ids())
    );
    Ok(())
}
