//! Simulated annotators label a batch; pairwise kappa and label resolution.

use std::collections::HashSet;

use stancekit::annotation::{AnnotationStore, Resolution, ResolutionKind};
use stancekit::sampling::random_sample;
use stancekit::synth::{generate, SimulatedAnnotators, SynthConfig};

fn main() -> stancekit::Result<()> {
    let world = generate(&SynthConfig {
        n_docs: 2000,
        positive_rate: 0.3,
        negative_rate: 0.3,
        seed: 4,
        ..SynthConfig::default()
    })?;
    let batch = random_sample(&world.corpus, 300, None, &HashSet::new(), 4, false)?;

    for err in [0.05, 0.2] {
        let records = SimulatedAnnotators::new(3, err, 4).label_batch(&world, &batch)?;
        let store = AnnotationStore::from_records(records);
        let summary = store.agreement();
        println!("error rate {err}");
        for p in &summary.pairs {
            println!("  {} vs {}  n={}  kappa {:.3}", p.annotator_a, p.annotator_b, p.overlap_n, p.kappa);
        }

        let (mut consensus, mut precedence, mut conflicts, mut wrong) = (0, 0, 0, 0);
        for r in store.resolve_all() {
            match r {
                Resolution::Resolved(ex) => {
                    match ex.resolution {
                        ResolutionKind::Consensus => consensus += 1,
                        ResolutionKind::NegativePrecedence => precedence += 1,
                    }
                    wrong += usize::from(world.label(&ex.doc_id) != Some(ex.aggregate_label));
                }
                Resolution::Unresolved { .. } => conflicts += 1,
            }
        }
        println!("  consensus {consensus}  negative-precedence {precedence}  unresolved {conflicts}  wrong {wrong}");
    }
    Ok(())
}
