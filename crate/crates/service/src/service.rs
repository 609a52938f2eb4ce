//! The annotation service as an event-sourced state machine.
//!
//! Every mutation is an [`Event`] appended to `events.jsonl` before it takes
//! effect in memory. [`ServiceState::apply`] is the only place state
//! changes, so replaying the log rebuilds the exact same state after a
//! crash. A torn final line (a write cut short) is dropped on open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stancekit::annotation::{
    assign, AgreementSummary, AnnotationRecord, AnnotationStore, Assignment, OverlapCounts, Resolution,
};
use stancekit::classifier::{Classifier, ClassifierModel, Prediction, Stage, StanceLabel, TextClassifier};
use stancekit::corpus::{ingest, Corpus, IngestConfig, SlicePair};
use stancekit::embedding::{embed_documents, DocVector, EmbeddingModel};
use stancekit::pipeline::{apply_labels, retrain, run_round, LabelCounts, PipelineState, Pool, RoundParams};
use stancekit::sampling::{Exemplar, SamplingBatch, Strategy};

use crate::config::{Principal, Role, ServiceConfig, Tokens};
use crate::error::{ErrorKind, ServiceError};

type Result<T> = std::result::Result<T, ServiceError>;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub annotator_id: String,
    pub round_id: u64,
    pub assigned_queue: Vec<String>,
    pub cursor: usize,
    pub started_at: DateTime<Utc>,
}

impl Session {
    pub fn current(&self) -> Option<&str> {
        self.assigned_queue.get(self.cursor).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStatus {
    pub round_id: u64,
    pub strategy: Strategy,
    pub total: usize,
    /// (document, annotator) labels recorded in this round.
    pub labeled: usize,
    pub resolved: usize,
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenRoundRequest {
    pub strategy: Strategy,
    /// Batch size for random and margin rounds.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub n_positive: Option<usize>,
    #[serde(default)]
    pub n_negative: Option<usize>,
    /// Neighbours per exemplar for guided rounds.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Split random and guided quotas over the before/after slices.
    #[serde(default = "yes")]
    pub use_slices: bool,
}

fn yes() -> bool {
    true
}

impl OpenRoundRequest {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            n: None,
            n_positive: None,
            n_negative: None,
            k: None,
            seed: None,
            use_slices: true,
        }
    }

    fn key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(&Sha256::digest(bytes)[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseSummary {
    pub round_id: u64,
    pub strategy: Strategy,
    pub stage: Stage,
    pub consensus: usize,
    pub negative_precedence: usize,
    pub unresolved: usize,
    pub unlabeled: usize,
    pub counts: LabelCounts,
    pub total_counts: LabelCounts,
    /// Model file relative to the data directory.
    pub model_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub request_key: String,
    pub request: OpenRoundRequest,
    pub batch: SamplingBatch,
    pub assignment: Assignment,
    pub opened_at: DateTime<Utc>,
    /// (document, annotator) pairs skipped for good.
    pub abandoned: BTreeSet<(String, String)>,
    pub closed: Option<CloseSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RoundOpened {
        at: DateTime<Utc>,
        request_key: String,
        request: OpenRoundRequest,
        batch: SamplingBatch,
        assignment: Assignment,
    },
    SessionStarted {
        session: Session,
    },
    Labeled {
        session_id: String,
        record: AnnotationRecord,
        /// False for a correction of an earlier item.
        advance: bool,
    },
    Skipped {
        at: DateTime<Utc>,
        session_id: String,
        doc_id: String,
    },
    ExemplarAdded {
        at: DateTime<Utc>,
        exemplar: Exemplar,
    },
    RoundClosed {
        at: DateTime<Utc>,
        summary: CloseSummary,
    },
}

/// Everything the event log determines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceState {
    pub pipeline: PipelineState,
    pub store: AnnotationStore,
    pub rounds: BTreeMap<u64, RoundInfo>,
    pub open_round: Option<u64>,
    pub sessions: BTreeMap<String, Session>,
    /// Exemplars waiting for the next guided round.
    pub exemplars: Vec<Exemplar>,
    pub carried_overlap: OverlapCounts,
    pub events: usize,
}

impl ServiceState {
    /// Folds one event in. Fails without changing anything if the event
    /// does not fit the current state.
    pub fn apply(&mut self, ev: &Event) -> Result<()> {
        match ev {
            Event::RoundOpened {
                at,
                request_key,
                request,
                batch,
                assignment,
            } => {
                if self.open_round.is_some() {
                    return Err(ServiceError::conflict("a round is already open"));
                }
                self.pipeline.admit(batch.clone())?;
                if batch.strategy == Strategy::Guided {
                    self.exemplars.clear();
                }
                self.carried_overlap.merge(&assignment.overlap);
                self.open_round = Some(batch.round_id);
                self.rounds.insert(
                    batch.round_id,
                    RoundInfo {
                        request_key: request_key.clone(),
                        request: request.clone(),
                        batch: batch.clone(),
                        assignment: assignment.clone(),
                        opened_at: *at,
                        abandoned: BTreeSet::new(),
                        closed: None,
                    },
                );
            }
            Event::SessionStarted { session } => {
                if self.sessions.contains_key(&session.session_id) {
                    return Err(ServiceError::conflict(format!("session {} exists", session.session_id)));
                }
                self.sessions.insert(session.session_id.clone(), session.clone());
            }
            Event::Labeled {
                session_id,
                record,
                advance,
            } => {
                let s = self.session_mut(session_id)?;
                if *advance {
                    if s.current() != Some(record.doc_id.as_str()) {
                        return Err(ServiceError::conflict(format!("{} is not the current item", record.doc_id)));
                    }
                    s.cursor += 1;
                }
                self.store.apply(record.clone());
            }
            Event::Skipped { session_id, doc_id, .. } => {
                let s = self.session_mut(session_id)?;
                if s.current() != Some(doc_id.as_str()) {
                    return Err(ServiceError::conflict(format!("{doc_id} is not the current item")));
                }
                s.cursor += 1;
                let (round, who) = (s.round_id, s.annotator_id.clone());
                if let Some(r) = self.rounds.get_mut(&round) {
                    r.abandoned.insert((doc_id.clone(), who));
                }
            }
            Event::ExemplarAdded { exemplar, .. } => {
                exemplar.validate()?;
                self.exemplars.push(exemplar.clone());
            }
            Event::RoundClosed { summary, .. } => {
                if self.open_round != Some(summary.round_id) {
                    return Err(ServiceError::conflict(format!("round {} is not open", summary.round_id)));
                }
                let mut pipeline = self.pipeline.clone();
                apply_labels(&mut pipeline, summary.round_id, &self.store)?
                    .ok_or_else(|| ServiceError::internal("closed round has no labels"))?;
                self.pipeline = pipeline;
                self.rounds.get_mut(&summary.round_id).expect("open round exists").closed = Some(summary.clone());
                self.open_round = None;
            }
        }
        self.events += 1;
        Ok(())
    }

    fn session_mut(&mut self, id: &str) -> Result<&mut Session> {
        self.sessions
            .get_mut(id)
            .ok_or_else(|| ServiceError::not_found(format!("unknown session {id}")))
    }

    pub fn round_status(&self, round_id: u64) -> Option<RoundStatus> {
        let info = self.rounds.get(&round_id)?;
        let labeled = info
            .assignment
            .by_doc
            .iter()
            .flat_map(|(d, anns)| anns.iter().map(move |a| (d, a)))
            .filter(|(d, a)| self.store.get(d, a).is_some_and(|r| r.round_id == round_id))
            .count();
        let resolved = self
            .store
            .resolve_docs(info.batch.doc_ids.iter().map(String::as_str))
            .iter()
            .filter(|r| matches!(r, Resolution::Resolved(_)))
            .count();
        Some(RoundStatus {
            round_id,
            strategy: info.batch.strategy,
            total: info.batch.len(),
            labeled,
            resolved,
            open: self.open_round == Some(round_id),
        })
    }

    /// Assigned (document, annotator) pairs with neither a label nor a skip.
    pub fn outstanding(&self, round_id: u64) -> usize {
        let Some(info) = self.rounds.get(&round_id) else { return 0 };
        info.assignment
            .by_doc
            .iter()
            .flat_map(|(d, anns)| anns.iter().map(move |a| (d, a)))
            .filter(|(d, a)| {
                !self.store.get(d, a).is_some_and(|r| r.round_id == round_id)
                    && !info.abandoned.contains(&((*d).clone(), (*a).clone()))
            })
            .count()
    }

    fn labels_by(&self, who: &str, round_id: u64) -> usize {
        self.store
            .current()
            .filter(|r| r.annotator_id == who && r.round_id == round_id)
            .count()
    }
}

/// Fixed inputs: the pool, the embedding and the annotator roster.
pub struct Context {
    pub config: ServiceConfig,
    pub corpus: Corpus,
    pub texts: HashMap<String, usize>,
    pub embedding: Option<EmbeddingModel>,
    pub vectors: Vec<DocVector>,
    pub tokens: Tokens,
}

impl Context {
    pub fn new(config: ServiceConfig, corpus: Corpus, embedding: Option<EmbeddingModel>, tokens: Tokens) -> Self {
        let vectors = embedding
            .as_ref()
            .map(|m| embed_documents(m, &corpus.token_streams(false)))
            .unwrap_or_default();
        let texts = corpus.documents.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Self {
            config,
            corpus,
            texts,
            embedding,
            vectors,
            tokens,
        }
    }

    pub fn load(config: ServiceConfig) -> Result<Self> {
        let corpus = ingest(
            &config.corpus,
            &IngestConfig {
                language: None,
                ..IngestConfig::default()
            },
        )?
        .corpus;
        let embedding = config.embedding.as_ref().map(EmbeddingModel::load).transpose()?;
        let tokens = Tokens::load(&config.token_file)?;
        Ok(Self::new(config, corpus, embedding, tokens))
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal> {
        self.tokens
            .lookup(token)
            .cloned()
            .ok_or_else(|| ServiceError::new(ErrorKind::Unauthorized, "unknown bearer token"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextDocument {
    Document {
        round_id: u64,
        doc_id: String,
        text: String,
        question: String,
        position: usize,
        total: usize,
    },
    Done {
        round_id: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSubmission {
    pub doc_id: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub skip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAck {
    pub doc_id: String,
    pub label: Option<StanceLabel>,
    /// Labels this annotator has recorded in the round so far.
    pub labeled: usize,
    /// A retry of a submission already recorded; nothing changed.
    pub duplicate: bool,
    pub cursor: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarSubmission {
    pub text: String,
    pub intended_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarAck {
    pub stored: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub assigned: usize,
    pub labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub current: Option<RoundStatus>,
    pub rounds: Vec<RoundStatus>,
    /// Per annotator, for the open round.
    pub annotators: BTreeMap<String, AnnotatorProgress>,
    pub totals: LabelCounts,
    pub stage: Option<Stage>,
    pub pending_exemplars: usize,
}

const EVENT_LOG: &str = "events.jsonl";
const ANNOTATION_LOG: &str = "annotations.jsonl";
const PIPELINE_FILE: &str = "pipeline.json";

struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Reads every complete event and truncates a torn tail.
    fn open(path: &Path) -> Result<(Self, Vec<Event>)> {
        let mut events = Vec::new();
        let mut good_len = 0u64;
        if path.exists() {
            let file = File::open(path).map_err(|e| io_err(path, e))?;
            let mut reader = BufReader::new(file);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line).map_err(|e| io_err(path, e))?;
                if read == 0 {
                    break;
                }
                n += 1;
                if !line.ends_with('\n') {
                    log::warn!("dropping torn event at line {n} of {}", path.display());
                    break;
                }
                let ev: Event = serde_json::from_str(&line)
                    .map_err(|e| ServiceError::internal(format!("{} line {n}: {e}", path.display())))?;
                events.push(ev);
                good_len += read as u64;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        file.set_len(good_len).map_err(|e| io_err(path, e))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            events,
        ))
    }

    fn append(&mut self, ev: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(ev).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| io_err(&self.path, e))?;
        self.file.flush().map_err(|e| io_err(&self.path, e))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::internal(format!("{}: {e}", path.display()))
}

pub struct Service {
    ctx: Arc<Context>,
    data_dir: PathBuf,
    state: ServiceState,
    log: EventLog,
    model: Option<ClassifierModel>,
    clock: Clock,
}

impl Service {
    /// Opens the data directory and replays its event log.
    pub fn open(ctx: Arc<Context>, clock: Clock) -> Result<Self> {
        let data_dir = ctx.config.data_dir.clone();
        std::fs::create_dir_all(data_dir.join("models")).map_err(|e| io_err(&data_dir, e))?;
        let (log, events) = EventLog::open(&data_dir.join(EVENT_LOG))?;
        let mut state = ServiceState::default();
        for ev in &events {
            state.apply(ev)?;
        }
        let mut service = Self {
            ctx,
            data_dir,
            state,
            log,
            model: None,
            clock,
        };
        service.model = service.latest_model()?;
        service.write_side_files()?;
        Ok(service)
    }

    pub fn state(&self) -> &ServiceState {
        &self.state
    }

    pub fn context(&self) -> &Context {
        &self.ctx
    }

    pub fn model(&self) -> Option<&ClassifierModel> {
        self.model.as_ref()
    }

    /// Model of the last closed round: the saved file, or a deterministic
    /// retrain when the file is missing.
    fn latest_model(&self) -> Result<Option<ClassifierModel>> {
        let Some(summary) = self.state.rounds.values().rev().find_map(|r| r.closed.as_ref()) else {
            return Ok(None);
        };
        let path = self.data_dir.join(&summary.model_file);
        if path.exists() {
            return Ok(Some(ClassifierModel::load(&path)?));
        }
        log::warn!("{} missing; retraining", path.display());
        let mut previous = None;
        let mut replay = PipelineState::new();
        let mut store = AnnotationStore::new();
        for rec in self.state.store.history() {
            store.apply(rec.clone());
        }
        for info in self.state.rounds.values() {
            replay.admit(info.batch.clone())?;
            if info.closed.is_some() {
                apply_labels(&mut replay, info.batch.round_id, &store)?;
                previous = Some(self.train(&replay, previous.as_ref(), info.batch.round_id)?);
            }
        }
        Ok(previous)
    }

    fn train(&self, pipeline: &PipelineState, previous: Option<&ClassifierModel>, round_id: u64) -> Result<ClassifierModel> {
        let cfg = &self.ctx.config;
        Ok(retrain(
            pipeline,
            &self.ctx.corpus,
            &cfg.features,
            self.ctx.embedding.as_ref(),
            &cfg.train,
            previous,
            cfg.seed.wrapping_add(round_id),
        )?)
    }

    fn commit(&mut self, ev: Event) -> Result<()> {
        let mut next = self.state.clone();
        next.apply(&ev)?;
        self.log.append(&ev)?;
        self.state = next;
        if let Event::Labeled { record, .. } = &ev {
            let path = self.data_dir.join(ANNOTATION_LOG);
            stancekit::annotation::AnnotationLog::open(&path)?.append(record)?;
        }
        self.state.pipeline.save(self.data_dir.join(PIPELINE_FILE))?;
        Ok(())
    }

    /// The annotation log and pipeline file are derived views; rebuild them
    /// from the replayed state.
    fn write_side_files(&self) -> Result<()> {
        let path = self.data_dir.join(ANNOTATION_LOG);
        let mut out = File::create(&path).map_err(|e| io_err(&path, e))?;
        stancekit::annotation::write_records(&mut out, self.state.store.history()).map_err(|e| io_err(&path, e))?;
        self.state.pipeline.save(self.data_dir.join(PIPELINE_FILE))?;
        Ok(())
    }

    fn require(who: &Principal, role: Role) -> Result<()> {
        if who.role != role {
            return Err(ServiceError::forbidden(format!("needs the {role:?} role")));
        }
        Ok(())
    }

    pub fn current_round(&self) -> Option<RoundStatus> {
        self.state.open_round.and_then(|r| self.state.round_status(r))
    }

    pub fn open_round(&mut self, who: &Principal, req: OpenRoundRequest) -> Result<RoundStatus> {
        Self::require(who, Role::Coordinator)?;
        let key = req.key();
        if let Some(open) = self.state.open_round {
            let info = &self.state.rounds[&open];
            if info.request_key == key {
                return Ok(self.state.round_status(open).expect("open round"));
            }
            return Err(ServiceError::conflict(format!("round {open} is still open")));
        }
        let round_id = self.state.pipeline.next_round;
        let cfg = &self.ctx.config;
        let mut params = RoundParams::new(req.strategy);
        params.n = req.n.unwrap_or(match req.strategy {
            Strategy::Margin => 1500,
            _ => 1000,
        });
        params.n_positive = req.n_positive.unwrap_or(750);
        params.n_negative = req.n_negative.unwrap_or(750);
        params.k_per_exemplar = req.k.unwrap_or(25);
        params.exemplars = self.state.exemplars.clone();
        params.slices = req.use_slices.then(SlicePair::study_period);
        params.seed = req.seed.unwrap_or(cfg.seed.wrapping_add(round_id));
        let preds: Option<Vec<Prediction>> = match (req.strategy, &self.model) {
            (Strategy::Certainty | Strategy::Margin, Some(model)) => {
                let docs: Vec<_> = self
                    .ctx
                    .corpus
                    .documents
                    .iter()
                    .filter(|d| !self.state.pipeline.exclusion.contains(&d.id))
                    .map(|d| d.tokens(false))
                    .collect();
                Some(
                    TextClassifier {
                        model,
                        embedding: self.ctx.embedding.as_ref(),
                    }
                    .predict_all(&docs)?,
                )
            }
            _ => None,
        };
        if matches!(req.strategy, Strategy::Certainty | Strategy::Margin) && preds.is_none() {
            return Err(stancekit::Error::ModelRequired(req.strategy.as_str()).into());
        }
        let pool = Pool {
            corpus: &self.ctx.corpus,
            vectors: self.ctx.embedding.as_ref().map(|_| self.ctx.vectors.as_slice()),
            embedding: self.ctx.embedding.as_ref(),
            predictions: preds.as_deref(),
        };
        let mut scratch = self.state.pipeline.clone();
        let batch = run_round(&mut scratch, &params, pool)?;
        let annotators = self.ctx.tokens.annotators();
        let target = cfg.overlap_per_round * (self.state.rounds.len() + 1);
        let assignment = assign(&batch.doc_ids, &annotators, target, &self.state.carried_overlap)?;
        self.commit(Event::RoundOpened {
            at: (self.clock)(),
            request_key: key,
            request: req,
            batch,
            assignment,
        })?;
        Ok(self.state.round_status(round_id).expect("just opened"))
    }

    pub fn start_session(&mut self, who: &Principal) -> Result<Session> {
        Self::require(who, Role::Annotator)?;
        let round_id = self
            .state
            .open_round
            .ok_or_else(|| ServiceError::conflict("no round is open"))?;
        let info = &self.state.rounds[&round_id];
        let mine: Vec<&Session> = self
            .state
            .sessions
            .values()
            .filter(|s| s.annotator_id == who.annotator_id && s.round_id == round_id)
            .collect();
        if let Some(s) = mine.iter().find(|s| s.cursor < s.assigned_queue.len()) {
            return Ok((*s).clone());
        }
        let queue: Vec<String> = info
            .assignment
            .by_annotator
            .get(&who.annotator_id)
            .into_iter()
            .flatten()
            .filter(|d| {
                !self.state.store.get(d, &who.annotator_id).is_some_and(|r| r.round_id == round_id)
                    && !info.abandoned.contains(&((*d).clone(), who.annotator_id.clone()))
            })
            .cloned()
            .collect();
        if queue.is_empty() {
            if let Some(last) = mine.last() {
                return Ok((*last).clone());
            }
        }
        let session = Session {
            session_id: format!("r{round_id}-{}-{}", who.annotator_id, mine.len()),
            annotator_id: who.annotator_id.clone(),
            round_id,
            assigned_queue: queue,
            cursor: 0,
            started_at: (self.clock)(),
        };
        self.commit(Event::SessionStarted {
            session: session.clone(),
        })?;
        Ok(session)
    }

    fn own_session(&self, who: &Principal, session_id: &str) -> Result<&Session> {
        let s = self
            .state
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::not_found(format!("unknown session {session_id}")))?;
        if s.annotator_id != who.annotator_id {
            return Err(ServiceError::forbidden("session belongs to another annotator"));
        }
        Ok(s)
    }

    pub fn next_document(&self, who: &Principal, session_id: &str) -> Result<NextDocument> {
        let s = self.own_session(who, session_id)?;
        let open = self.state.open_round == Some(s.round_id);
        match s.current().filter(|_| open) {
            Some(doc_id) => {
                let doc = &self.ctx.corpus.documents[self.ctx.texts[doc_id]];
                Ok(NextDocument::Document {
                    round_id: s.round_id,
                    doc_id: doc_id.to_string(),
                    text: doc.text.clone(),
                    question: self.ctx.config.question.clone(),
                    position: s.cursor,
                    total: s.assigned_queue.len(),
                })
            }
            None => Ok(NextDocument::Done { round_id: s.round_id }),
        }
    }

    pub fn submit_label(&mut self, who: &Principal, session_id: &str, sub: LabelSubmission) -> Result<LabelAck> {
        let s = self.own_session(who, session_id)?.clone();
        if self.state.open_round != Some(s.round_id) {
            return Err(ServiceError::conflict(format!("round {} is closed", s.round_id)));
        }
        let label = match (&sub.label, sub.skip) {
            (Some(_), true) => return Err(ServiceError::bad_request("give a label or skip, not both")),
            (None, false) => return Err(ServiceError::bad_request("missing label")),
            (None, true) => None,
            (Some(l), false) => Some(
                l.parse::<StanceLabel>()
                    .map_err(|_| ServiceError::bad_request(format!("invalid label {l:?}")))?,
            ),
        };
        let is_current = s.current() == Some(sub.doc_id.as_str());
        let seen = s.assigned_queue[..s.cursor].contains(&sub.doc_id);
        let mut duplicate = false;
        match label {
            None if is_current => self.commit(Event::Skipped {
                at: (self.clock)(),
                session_id: session_id.to_string(),
                doc_id: sub.doc_id.clone(),
            })?,
            Some(label) if is_current || seen => {
                let prior = self.state.store.get(&sub.doc_id, &who.annotator_id);
                if !is_current && prior.is_some_and(|r| r.round_id == s.round_id && r.label == label) {
                    duplicate = true;
                } else {
                    self.commit(Event::Labeled {
                        session_id: session_id.to_string(),
                        record: AnnotationRecord {
                            doc_id: sub.doc_id.clone(),
                            annotator_id: who.annotator_id.clone(),
                            label,
                            round_id: s.round_id,
                            timestamp: (self.clock)(),
                        },
                        advance: is_current,
                    })?;
                }
            }
            _ => return Err(ServiceError::conflict(format!("{} is not the current item", sub.doc_id))),
        }
        let s = &self.state.sessions[session_id];
        Ok(LabelAck {
            doc_id: sub.doc_id,
            label,
            labeled: self.state.labels_by(&who.annotator_id, s.round_id),
            duplicate,
            cursor: s.cursor,
            remaining: s.assigned_queue.len() - s.cursor,
        })
    }

    pub fn submit_exemplar(&mut self, who: &Principal, sub: ExemplarSubmission) -> Result<ExemplarAck> {
        Self::require(who, Role::Annotator)?;
        let intended_label: StanceLabel = sub
            .intended_label
            .parse()
            .map_err(|_| ServiceError::bad_request(format!("invalid label {:?}", sub.intended_label)))?;
        let exemplar = Exemplar {
            annotator_id: who.annotator_id.clone(),
            text: sub.text,
            intended_label,
        };
        exemplar.validate()?;
        self.commit(Event::ExemplarAdded {
            at: (self.clock)(),
            exemplar,
        })?;
        Ok(ExemplarAck {
            stored: self.state.exemplars.len(),
        })
    }

    /// Resolves the open round, retrains and persists the model.
    ///
    /// Without `force`, every assigned item must be labelled or skipped.
    /// A failed retrain leaves the round open.
    pub fn close_round(&mut self, who: &Principal, force: bool) -> Result<CloseSummary> {
        Self::require(who, Role::Coordinator)?;
        let round_id = self
            .state
            .open_round
            .ok_or_else(|| ServiceError::conflict("no round is open"))?;
        let outstanding = self.state.outstanding(round_id);
        if outstanding > 0 && !force {
            return Err(ServiceError::conflict(format!(
                "{outstanding} assigned items are neither labelled nor skipped; close with force to abandon them"
            )));
        }
        let mut pipeline = self.state.pipeline.clone();
        let entry = apply_labels(&mut pipeline, round_id, &self.state.store)?
            .ok_or_else(|| ServiceError::new(ErrorKind::Unprocessable, "round has no labels yet"))?;
        let model = self.train(&pipeline, self.model.as_ref(), round_id)?;
        let model_file = format!("models/round-{round_id}.stkclf");
        let tmp = self.data_dir.join(format!("{model_file}.tmp"));
        model.save(&tmp)?;
        std::fs::rename(&tmp, self.data_dir.join(&model_file)).map_err(|e| io_err(&tmp, e))?;
        let summary = CloseSummary {
            round_id,
            strategy: entry.strategy,
            stage: entry.stage,
            consensus: entry.consensus,
            negative_precedence: entry.negative_precedence,
            unresolved: entry.unresolved,
            unlabeled: entry.unlabeled,
            counts: entry.counts,
            total_counts: pipeline.total_counts(),
            model_file,
        };
        self.commit(Event::RoundClosed {
            at: (self.clock)(),
            summary: summary.clone(),
        })?;
        self.model = Some(model);
        Ok(summary)
    }

    pub fn agreement(&self) -> AgreementSummary {
        self.state.store.agreement()
    }

    pub fn progress(&self) -> Progress {
        let current = self.current_round();
        let annotators = current
            .as_ref()
            .map(|c| {
                let info = &self.state.rounds[&c.round_id];
                info.assignment
                    .by_annotator
                    .iter()
                    .map(|(a, docs)| {
                        (
                            a.clone(),
                            AnnotatorProgress {
                                assigned: docs.len(),
                                labeled: self.state.labels_by(a, c.round_id),
                            },
                        )
                    })
                    .collect()
            })
            .unwrap_or_default();
        Progress {
            current,
            rounds: self
                .state
                .rounds
                .keys()
                .filter_map(|&r| self.state.round_status(r))
                .collect(),
            annotators,
            totals: self.state.pipeline.total_counts(),
            stage: self.state.pipeline.stage,
            pending_exemplars: self.state.exemplars.len(),
        }
    }
}
