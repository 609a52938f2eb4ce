#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use stancekit::synth::{generate, SynthConfig, SynthWorld};
use stancekit_service::{Clock, Context, Principal, Role, Service, ServiceConfig, Tokens};

pub const TOKENS: &str = "tok-a ann-a\ntok-b ann-b\ntok-c ann-c\ntok-boss boss coordinator\n";

pub fn world() -> SynthWorld {
    generate(&SynthConfig {
        n_docs: 600,
        positive_rate: 0.2,
        negative_rate: 0.2,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub fn context(world: &SynthWorld, dir: &Path) -> Arc<Context> {
    let config = ServiceConfig {
        data_dir: dir.to_path_buf(),
        overlap_per_round: 5,
        features: stancekit::classifier::FeatureConfig {
            hash_bits: 12,
            ..Default::default()
        },
        ..ServiceConfig::default()
    };
    Arc::new(Context::new(config, world.corpus.clone(), None, Tokens::parse(TOKENS).unwrap()))
}

/// One second per call, starting at a fixed instant.
pub fn ticking_clock() -> Clock {
    let t = Arc::new(AtomicI64::new(1_700_000_000));
    Arc::new(move || Utc.timestamp_opt(t.fetch_add(1, Ordering::SeqCst), 0).unwrap())
}

pub fn open(world: &SynthWorld, dir: &Path) -> Service {
    Service::open(context(world, dir), ticking_clock()).unwrap()
}

pub fn who(id: &str) -> Principal {
    Principal {
        annotator_id: id.into(),
        role: if id == "boss" { Role::Coordinator } else { Role::Annotator },
    }
}

use stancekit::classifier::ClassifierModel;
use stancekit::sampling::Strategy;
use stancekit_service::service::ExemplarSubmission;
use stancekit_service::{LabelSubmission, NextDocument, OpenRoundRequest, ServiceState};

/// State and model after each committed event; index k is "k events applied".
pub struct Trace {
    pub states: Vec<ServiceState>,
    pub models: Vec<Option<ClassifierModel>>,
}

impl Trace {
    fn record(&mut self, svc: &Service) {
        let k = svc.state().events;
        while self.states.len() <= k {
            self.states.push(svc.state().clone());
            self.models.push(svc.model().cloned());
        }
    }
}

/// Two rounds with labels, skips, retries, exemplars and a close in between.
pub fn scripted_run(world: &SynthWorld, dir: &Path) -> Trace {
    let mut svc = open(world, dir);
    let mut trace = Trace {
        states: Vec::new(),
        models: Vec::new(),
    };
    trace.record(&svc);
    let boss = who("boss");
    for ann in ["ann-a", "ann-b"] {
        for l in ["positive", "negative"] {
            let sub = ExemplarSubmission {
                text: format!("{ann} {l} exemplar"),
                intended_label: l.into(),
            };
            svc.submit_exemplar(&who(ann), sub).unwrap();
            trace.record(&svc);
        }
    }
    let req = OpenRoundRequest {
        n: Some(40),
        ..OpenRoundRequest::new(Strategy::Random)
    };
    svc.open_round(&boss, req).unwrap();
    trace.record(&svc);
    label_all(&mut svc, world, &mut trace, true);
    svc.close_round(&boss, false).unwrap();
    trace.record(&svc);

    let req = OpenRoundRequest {
        n_positive: Some(8),
        n_negative: Some(8),
        ..OpenRoundRequest::new(Strategy::Certainty)
    };
    svc.open_round(&boss, req).unwrap();
    trace.record(&svc);
    label_all(&mut svc, world, &mut trace, false);
    trace
}

fn label_all(svc: &mut Service, world: &SynthWorld, trace: &mut Trace, skip_one: bool) {
    for (i, ann) in ["ann-a", "ann-b", "ann-c"].into_iter().enumerate() {
        let s = svc.start_session(&who(ann)).unwrap();
        trace.record(svc);
        let mut step = 0;
        while let NextDocument::Document { doc_id, .. } = svc.next_document(&who(ann), &s.session_id).unwrap() {
            let sub = if skip_one && i == 2 && step == 1 {
                LabelSubmission {
                    doc_id: doc_id.clone(),
                    label: None,
                    skip: true,
                }
            } else {
                LabelSubmission {
                    doc_id: doc_id.clone(),
                    label: Some(world.label(&doc_id).unwrap().as_str().into()),
                    skip: false,
                }
            };
            svc.submit_label(&who(ann), &s.session_id, sub.clone()).unwrap();
            trace.record(svc);
            if step % 3 == 0 {
                // client retry after a lost response
                assert!(svc.submit_label(&who(ann), &s.session_id, sub).unwrap().duplicate || step == 1);
                trace.record(svc);
            }
            step += 1;
        }
    }
}
