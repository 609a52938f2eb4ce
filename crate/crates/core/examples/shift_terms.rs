//! Frequent n-grams per time slice and the terms that moved the most.
//!
//! Runs on a synthetic corpus whose positive share triples after the boundary.

use stancekit::analysis::movers;
use stancekit::corpus::{slice, SlicePair};
use stancekit::synth::{generate, SynthConfig};
use stancekit::textproc::{ngram_table, StopWords};

fn main() -> stancekit::Result<()> {
    let world = generate(&SynthConfig {
        n_docs: 4000,
        seed: 3,
        ..SynthConfig::shift()
    })?;
    let parts = slice(&world.corpus, &SlicePair::study_period());
    println!("before {}  after {}  outside {}", parts.before.len(), parts.after.len(), parts.excluded);

    let sw = StopWords::persian_baseline();
    for n in [1, 2] {
        let tb = ngram_table(&parts.before.token_streams(false), n, &sw, 2)?;
        let ta = ngram_table(&parts.after.token_streams(false), n, &sw, 2)?;
        println!("\n{n}-grams, most frequent after:");
        for (g, c) in ta.top(5) {
            println!("  {:<28} {c}", g.join(" "));
        }
        let (toward_before, toward_after) = movers(&tb, &ta, &sw, 5)?;
        println!("rose after the boundary:");
        for e in &toward_after.entries {
            println!("  {:<28} {:+.5}", e.term, e.delta);
        }
        println!("fell after the boundary:");
        for e in &toward_before.entries {
            println!("  {:<28} {:+.5}", e.term, -e.delta);
        }
    }
    Ok(())
}
