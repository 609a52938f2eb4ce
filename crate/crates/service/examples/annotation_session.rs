//! In-process annotation backend: a coordinator opens rounds, three
//! annotators work through their queues, rounds close and retrain, and the
//! service is reopened from its event log.
//!
//! cargo run -p stancekit-service --example annotation_session -- [data-dir]

use std::sync::Arc;

use stancekit::sampling::Strategy;
use stancekit::synth::{generate, SynthConfig, SynthWorld};
use stancekit_service::{
    system_clock, Context, LabelSubmission, NextDocument, OpenRoundRequest, Principal, Role, Service, ServiceConfig,
    ServiceError, Tokens,
};

const TOKENS: &str = "t-a ann-a\nt-b ann-b\nt-c ann-c\nt-lead lead coordinator\n";

fn person(id: &str, role: Role) -> Principal {
    Principal {
        annotator_id: id.into(),
        role,
    }
}

fn work_queues(svc: &mut Service, world: &SynthWorld) -> Result<(), ServiceError> {
    for ann in ["ann-a", "ann-b", "ann-c"] {
        let who = person(ann, Role::Annotator);
        let session = svc.start_session(&who)?;
        let mut first = true;
        while let NextDocument::Document { doc_id, question, .. } = svc.next_document(&who, &session.session_id)? {
            if first {
                println!("  {ann}: {question}");
                first = false;
            }
            let truth = world.label(&doc_id).unwrap();
            let sub = LabelSubmission {
                doc_id,
                label: Some(truth.as_str().into()),
                skip: false,
            };
            svc.submit_label(&who, &session.session_id, sub)?;
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let data_dir = std::env::args().nth(1).map_or_else(|| scratch.path().to_path_buf(), Into::into);

    let world = generate(&SynthConfig {
        n_docs: 1500,
        positive_rate: 0.15,
        negative_rate: 0.15,
        seed: 31,
        ..SynthConfig::default()
    })?;
    let config = ServiceConfig {
        data_dir: data_dir.clone(),
        ..ServiceConfig::default()
    };
    let ctx = Arc::new(Context::new(config, world.corpus.clone(), None, Tokens::parse(TOKENS)?));
    let mut svc = Service::open(ctx.clone(), system_clock())?;
    let lead = person("lead", Role::Coordinator);

    let rounds = [
        OpenRoundRequest {
            n: Some(120),
            ..OpenRoundRequest::new(Strategy::Random)
        },
        OpenRoundRequest {
            n_positive: Some(30),
            n_negative: Some(30),
            ..OpenRoundRequest::new(Strategy::Certainty)
        },
    ];
    for req in rounds {
        let status = svc.open_round(&lead, req)?;
        println!("round {} ({}) with {} documents", status.round_id, status.strategy.as_str(), status.total);
        work_queues(&mut svc, &world)?;
        let summary = svc.close_round(&lead, false)?;
        println!(
            "  closed: consensus {}  negative-precedence {}  unresolved {}  model {}",
            summary.consensus, summary.negative_precedence, summary.unresolved, summary.model_file
        );
    }

    for p in svc.agreement().pairs {
        println!("kappa {} / {}: {:.3} over {}", p.annotator_a, p.annotator_b, p.kappa, p.overlap_n);
    }
    let events = svc.state().events;
    drop(svc);

    // Everything is rebuilt from the event log on open.
    let svc = Service::open(ctx, system_clock())?;
    println!(
        "reopened {}: {} events replayed, stage {:?}, totals {:?}",
        data_dir.display(),
        svc.state().events,
        svc.progress().stage,
        svc.progress().totals
    );
    assert_eq!(events, svc.state().events);
    Ok(())
}
