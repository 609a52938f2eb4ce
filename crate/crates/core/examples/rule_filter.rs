//! Keyword/hashtag rule filtering of an ingested corpus, with per-rule hit counts.
//!
//! cargo run --example rule_filter -- [corpus.jsonl] [rules.toml]

use stancekit::corpus::{apply_rule_set, ingest, CompiledRules, IngestConfig, RuleSet};

fn main() -> stancekit::Result<()> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let mut args = std::env::args().skip(1);
    let corpus_path = args.next().unwrap_or_else(|| format!("{fixtures}/gender_corpus.jsonl"));
    let rules_path = args.next().unwrap_or_else(|| format!("{fixtures}/gender_rules.toml"));

    let ingested = ingest(&corpus_path, &IngestConfig::default())?;
    println!("ingested {} documents ({:?})", ingested.corpus.len(), ingested.report);

    let rules = RuleSet::load(&rules_path)?;
    let compiled = CompiledRules::new(&rules.rules)?;
    let mut hits = vec![0usize; compiled.rule_names().len()];
    for d in &ingested.corpus.documents {
        for (h, m) in hits.iter_mut().zip(compiled.matches(d)) {
            *h += usize::from(m);
        }
    }
    for (name, h) in compiled.rule_names().iter().zip(&hits) {
        println!("{name:>24}  {h}");
    }

    let kept = apply_rule_set(&ingested.corpus, &rules)?;
    println!("kept {} of {}", kept.len(), ingested.corpus.len());
    for d in kept.documents.iter().take(5) {
        println!("  {}  {}", d.id, d.text);
    }
    Ok(())
}
