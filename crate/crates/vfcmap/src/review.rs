//! Review service: sampled sessions over a read-only store snapshot, an
//! append-only verdict log, and live precision.
//!
//! Endpoints:
//!
//! - `POST /sessions` with [`SessionRequest`] → 201 [`ReviewSession`]
//! - `GET /sessions/{id}/next?annotator=NAME` → [`NextItem`]
//! - `POST /sessions/{id}/verdicts` with [`VerdictRequest`] → [`AnnotatorProgress`]
//! - `GET /sessions/{id}/report` → [`SessionReport`]
//! - `GET /healthz`
//!
//! Errors are `{"error": CODE, "message": TEXT}` with codes `UnknownSession`
//! and `UnknownCandidate` (404), `EmptyPopulation` (422), `BadRequest` (400)
//! and `Internal` (500). The annotator may be given as the `x-annotator`
//! header instead of the query or body field; it is a label, not a
//! credential.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vfcmap_core::candidate::SourceKind;
use vfcmap_core::metrics::{self, Percent};
use vfcmap_core::review::{self, Decision, LiveTally, Verdict};
use vfcmap_core::sample::draw_sample;
use vfcmap_core::{CandidateStore, Category, CveId, NvdRecord, Reference, VfcCandidate};

use crate::fsutil;
use crate::report::PairAgreement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub session_id: String,
    pub source_filter: BTreeSet<SourceKind>,
    pub category_filter: BTreeSet<Category>,
    pub confidence: f64,
    pub margin: f64,
    pub seed: u64,
    pub store_id: String,
    /// Records in the filtered population.
    pub population: u64,
    /// Records drawn.
    pub sample_size: u64,
    /// Candidate ids of the drawn records, in draw order.
    pub sample: Vec<String>,
    pub created: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionRequest {
    /// Empty means every source.
    pub source_filter: BTreeSet<SourceKind>,
    /// Empty means every category.
    pub category_filter: BTreeSet<Category>,
    pub confidence: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for SessionRequest {
    fn default() -> Self {
        SessionRequest {
            source_filter: BTreeSet::new(),
            category_filter: BTreeSet::new(),
            confidence: 0.95,
            margin: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReviewError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("candidate {0} is not part of this session")]
    UnknownCandidate(String),
    #[error("no candidates match the session filters")]
    EmptyPopulation,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ReviewError {
    fn code(&self) -> (&'static str, StatusCode) {
        match self {
            ReviewError::UnknownSession(_) => ("UnknownSession", StatusCode::NOT_FOUND),
            ReviewError::UnknownCandidate(_) => ("UnknownCandidate", StatusCode::NOT_FOUND),
            ReviewError::EmptyPopulation => ("EmptyPopulation", StatusCode::UNPROCESSABLE_ENTITY),
            ReviewError::BadRequest(_) => ("BadRequest", StatusCode::BAD_REQUEST),
            ReviewError::Internal(_) => ("Internal", StatusCode::INTERNAL_SERVER_ERROR),
        }
    }
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let (code, status) = self.code();
        (status, Json(serde_json::json!({"error": code, "message": self.to_string()}))).into_response()
    }
}

fn passes(c: &VfcCandidate, req: &SessionRequest) -> bool {
    (req.category_filter.is_empty() || req.category_filter.contains(&c.category))
        && (req.source_filter.is_empty() || c.source_kinds().iter().any(|k| req.source_filter.contains(k)))
}

/// Draw a session sample. The population is the set of records with at
/// least one candidate passing the filters; `sample_size(population)`
/// records are drawn and the session holds their passing candidates.
pub fn create_session(
    store: &CandidateStore,
    store_id: &str,
    req: &SessionRequest,
    session_id: String,
    created: DateTime<Utc>,
) -> Result<ReviewSession, ReviewError> {
    let mut by_record: BTreeMap<&CveId, Vec<String>> = BTreeMap::new();
    for c in store.iter().filter(|c| passes(c, req)) {
        by_record.entry(&c.cve_id).or_default().push(c.id());
    }
    if by_record.is_empty() {
        return Err(ReviewError::EmptyPopulation);
    }
    let population = by_record.len() as u64;
    let n = metrics::sample_size(population, req.confidence, req.margin, 0.5)
        .map_err(|e| ReviewError::BadRequest(e.to_string()))?;
    let records: Vec<&CveId> = by_record.keys().copied().collect();
    let drawn = draw_sample(&records, n as usize, req.seed).map_err(|e| ReviewError::Internal(e.to_string()))?;
    let sample = drawn.iter().flat_map(|r| by_record[r].iter().cloned()).collect();
    Ok(ReviewSession {
        session_id,
        source_filter: req.source_filter.clone(),
        category_filter: req.category_filter.clone(),
        confidence: req.confidence,
        margin: req.margin,
        seed: req.seed,
        store_id: store_id.into(),
        population,
        sample_size: n,
        sample,
        created,
    })
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Session(ReviewSession),
    Verdict {
        session_id: String,
        #[serde(flatten)]
        verdict: Verdict,
    },
}

/// Every verdict in a log, in order, regardless of session.
pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>, fsutil::JsonlError> {
    let events: Vec<LogEvent> = fsutil::read_jsonl(path)?;
    Ok(events
        .into_iter()
        .filter_map(|e| match e {
            LogEvent::Verdict { verdict, .. } => Some(verdict),
            LogEvent::Session(_) => None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precisions {
    pub precision_records: Option<Percent>,
    pub precision_vfcs: Option<Percent>,
}

impl From<&LiveTally> for Precisions {
    fn from(t: &LiveTally) -> Self {
        Precisions {
            precision_records: Percent::new(t.tally.true_records, t.tally.sampled_records).ok(),
            precision_vfcs: Percent::new(t.tally.true_vfcs, t.tally.candidate_vfcs).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub annotator: String,
    pub reviewed: u64,
    pub total: u64,
    pub tally: LiveTally,
    #[serde(flatten)]
    pub precisions: Precisions,
    /// Verdicts this annotator submitted in the session, superseded ones included.
    pub history_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: ReviewSession,
    pub annotators: BTreeMap<String, AnnotatorProgress>,
    pub consensus: LiveTally,
    pub consensus_precisions: Precisions,
    pub disagreements: u64,
    pub agreement: Vec<PairAgreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeLinks {
    pub repository: String,
    pub commit: String,
}

pub fn forge_links(c: &VfcCandidate) -> ForgeLinks {
    let repository = format!("https://{}", c.repo_id);
    let commit = match c.repo_id.split('/').next() {
        Some("gitlab.com") => format!("{repository}/-/commit/{}", c.sha),
        Some("bitbucket.org") => format!("{repository}/commits/{}", c.sha),
        _ => format!("{repository}/commit/{}", c.sha),
    };
    ForgeLinks { repository, commit }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordContext {
    pub description: String,
    pub published: DateTime<Utc>,
    pub references: Vec<Reference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateContext {
    pub candidate_id: String,
    pub candidate: VfcCandidate,
    pub record: Option<RecordContext>,
    pub links: ForgeLinks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    /// `position` is 1-based within the session sample.
    Item { position: u64, total: u64, reviewed: u64, candidate: Box<CandidateContext> },
    Done { total: u64, reviewed: u64 },
}

#[derive(Debug, Clone, Deserialize)]
pub struct VerdictRequest {
    pub candidate_id: String,
    #[serde(default)]
    pub annotator: Option<String>,
    pub decision: Decision,
    #[serde(default)]
    pub note: String,
}

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Default)]
struct Sessions {
    sessions: BTreeMap<String, Arc<ReviewSession>>,
    verdicts: BTreeMap<String, Vec<Verdict>>,
}

struct Inner {
    store: Arc<CandidateStore>,
    store_id: String,
    by_id: BTreeMap<String, VfcCandidate>,
    records: BTreeMap<CveId, NvdRecord>,
    state: RwLock<Sessions>,
    log: Mutex<File>,
    clock: Clock,
}

/// Shared service state. Cloning is cheap.
#[derive(Clone)]
pub struct ReviewService {
    inner: Arc<Inner>,
}

impl ReviewService {
    /// Open the service over a store, replaying any existing verdict log.
    pub fn open(
        store: CandidateStore,
        records: Vec<NvdRecord>,
        log_path: PathBuf,
    ) -> Result<Self, ReviewError> {
        let mut sessions = Sessions::default();
        if log_path.exists() {
            let events: Vec<LogEvent> =
                fsutil::read_jsonl(&log_path).map_err(|e| ReviewError::Internal(e.to_string()))?;
            for e in events {
                match e {
                    LogEvent::Session(s) => {
                        sessions.sessions.insert(s.session_id.clone(), Arc::new(s));
                    }
                    LogEvent::Verdict { session_id, verdict } => {
                        sessions.verdicts.entry(session_id).or_default().push(verdict);
                    }
                }
            }
        } else if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ReviewError::Internal(e.to_string()))?;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| ReviewError::Internal(format!("{}: {e}", log_path.display())))?;
        let store_id = crate::store_io::snapshot_id(&store);
        Ok(ReviewService {
            inner: Arc::new(Inner {
                by_id: store.iter().map(|c| (c.id(), c.clone())).collect(),
                store: Arc::new(store),
                store_id,
                records: records.into_iter().map(|r| (r.cve_id.clone(), r)).collect(),
                state: RwLock::new(sessions),
                log: Mutex::new(log),
                clock: Arc::new(Utc::now),
            }),
        })
    }

    /// Replace the clock used for `created` and `decided_at`.
    pub fn with_clock(self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        let inner = Arc::try_unwrap(self.inner).unwrap_or_else(|_| panic!("with_clock before sharing"));
        ReviewService { inner: Arc::new(Inner { clock: Arc::new(clock), ..inner }) }
    }

    pub fn store_id(&self) -> &str {
        &self.inner.store_id
    }

    fn append(&self, e: &LogEvent) -> Result<(), ReviewError> {
        let mut line = serde_json::to_vec(e).expect("serializable");
        line.push(b'\n');
        let mut f = self.inner.log.lock().expect("log lock");
        f.write_all(&line).and_then(|_| f.sync_data()).map_err(|e| ReviewError::Internal(e.to_string()))
    }

    fn session(&self, id: &str) -> Result<Arc<ReviewSession>, ReviewError> {
        let st = self.inner.state.read().expect("state lock");
        st.sessions.get(id).cloned().ok_or_else(|| ReviewError::UnknownSession(id.into()))
    }

    pub fn create(&self, req: &SessionRequest) -> Result<ReviewSession, ReviewError> {
        let s = create_session(
            &self.inner.store,
            &self.inner.store_id,
            req,
            uuid::Uuid::new_v4().simple().to_string(),
            (self.inner.clock)(),
        )?;
        self.append(&LogEvent::Session(s.clone()))?;
        let mut st = self.inner.state.write().expect("state lock");
        st.sessions.insert(s.session_id.clone(), Arc::new(s.clone()));
        Ok(s)
    }

    fn latest(&self, session_id: &str) -> BTreeMap<String, BTreeMap<String, Decision>> {
        let st = self.inner.state.read().expect("state lock");
        review::latest_by_annotator(st.verdicts.get(session_id).into_iter().flatten())
    }

    pub fn next(&self, session_id: &str, annotator: &str) -> Result<NextItem, ReviewError> {
        let s = self.session(session_id)?;
        let latest = self.latest(session_id);
        let mine = latest.get(annotator);
        let done = |id: &String| mine.is_some_and(|m| m.contains_key(id));
        let total = s.sample.len() as u64;
        let reviewed = s.sample.iter().filter(|id| done(id)).count() as u64;
        let Some((i, id)) = s.sample.iter().enumerate().find(|(_, id)| !done(id)) else {
            return Ok(NextItem::Done { total, reviewed });
        };
        let c = self.inner.by_id.get(id).ok_or_else(|| ReviewError::UnknownCandidate(id.clone()))?;
        let record = self.inner.records.get(&c.cve_id).map(|r| RecordContext {
            description: r.description.clone(),
            published: r.published,
            references: r.references.clone(),
        });
        Ok(NextItem::Item {
            position: i as u64 + 1,
            total,
            reviewed,
            candidate: Box::new(CandidateContext { candidate_id: id.clone(), candidate: c.clone(), record, links: forge_links(c) }),
        })
    }

    pub fn submit(&self, session_id: &str, req: VerdictRequest) -> Result<AnnotatorProgress, ReviewError> {
        let s = self.session(session_id)?;
        let annotator = req.annotator.filter(|a| !a.trim().is_empty()).ok_or_else(|| ReviewError::BadRequest("annotator is required".into()))?;
        if !s.sample.contains(&req.candidate_id) {
            return Err(ReviewError::UnknownCandidate(req.candidate_id));
        }
        let verdict = Verdict {
            candidate_id: req.candidate_id,
            annotator: annotator.clone(),
            decision: req.decision,
            note: req.note,
            decided_at: (self.inner.clock)(),
        };
        {
            // The write lock serializes log order with in-memory order.
            let mut st = self.inner.state.write().expect("state lock");
            self.append(&LogEvent::Verdict { session_id: session_id.into(), verdict: verdict.clone() })?;
            st.verdicts.entry(session_id.into()).or_default().push(verdict);
        }
        Ok(self.progress(&s, &annotator))
    }

    fn progress(&self, s: &ReviewSession, annotator: &str) -> AnnotatorProgress {
        let st = self.inner.state.read().expect("state lock");
        let history = st.verdicts.get(&s.session_id).map(Vec::as_slice).unwrap_or_default();
        let latest = review::latest_by_annotator(history);
        let empty = BTreeMap::new();
        let mine = latest.get(annotator).unwrap_or(&empty);
        let tally = review::tally_decisions(mine.iter().map(|(k, d)| (k.as_str(), *d)));
        AnnotatorProgress {
            annotator: annotator.into(),
            reviewed: tally.reviewed,
            total: s.sample.len() as u64,
            precisions: Precisions::from(&tally),
            tally,
            history_length: history.iter().filter(|v| v.annotator == annotator).count() as u64,
        }
    }

    pub fn report(&self, session_id: &str) -> Result<SessionReport, ReviewError> {
        let s = self.session(session_id)?;
        let latest = self.latest(session_id);
        let annotators = latest.keys().map(|a| (a.clone(), self.progress(&s, a))).collect();
        let (agreed, disagreements) = review::consensus(&latest);
        let consensus = review::tally_decisions(agreed.iter().map(|(k, d)| (k.as_str(), *d)));
        let names: Vec<&String> = latest.keys().collect();
        let mut agreement = Vec::new();
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                let table = review::agreement_table(&latest[names[i]], &latest[names[j]]);
                agreement.push(PairAgreement {
                    annotators: [names[i].clone(), names[j].clone()],
                    table,
                    observed_agreement: (table.total() > 0).then(|| table.observed_agreement()),
                    kappa: table.kappa().ok(),
                });
            }
        }
        Ok(SessionReport {
            session: (*s).clone(),
            annotators,
            consensus_precisions: Precisions::from(&consensus),
            consensus,
            disagreements,
            agreement,
        })
    }

    pub fn router(self, ui_dir: Option<PathBuf>) -> Router {
        let r = Router::new()
            .route("/healthz", get(healthz))
            .route("/sessions", post(create_handler))
            .route("/sessions/{id}/next", get(next_handler))
            .route("/sessions/{id}/verdicts", post(verdict_handler))
            .route("/sessions/{id}/report", get(report_handler))
            .with_state(self);
        match ui_dir {
            Some(dir) => r.fallback_service(tower_http::services::ServeDir::new(dir)),
            None => r,
        }
    }
}

fn header_annotator(h: &HeaderMap) -> Option<String> {
    h.get("x-annotator").and_then(|v| v.to_str().ok()).map(str::to_string)
}

async fn healthz(State(svc): State<ReviewService>) -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "store_id": svc.store_id(), "candidates": svc.inner.store.len()}))
}

async fn create_handler(
    State(svc): State<ReviewService>,
    body: Option<Json<SessionRequest>>,
) -> Result<(StatusCode, Json<ReviewSession>), ReviewError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    tokio::task::spawn_blocking(move || svc.create(&req))
        .await
        .map_err(|e| ReviewError::Internal(e.to_string()))?
        .map(|s| (StatusCode::CREATED, Json(s)))
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_handler(
    State(svc): State<ReviewService>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NextQuery>,
    headers: HeaderMap,
) -> Result<Json<NextItem>, ReviewError> {
    let annotator = q
        .annotator
        .or_else(|| header_annotator(&headers))
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ReviewError::BadRequest("annotator is required".into()))?;
    svc.next(&id, &annotator).map(Json)
}

async fn verdict_handler(
    State(svc): State<ReviewService>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(mut req): Json<VerdictRequest>,
) -> Result<Json<AnnotatorProgress>, ReviewError> {
    if req.annotator.is_none() {
        req.annotator = header_annotator(&headers);
    }
    tokio::task::spawn_blocking(move || svc.submit(&id, req))
        .await
        .map_err(|e| ReviewError::Internal(e.to_string()))?
        .map(Json)
}

async fn report_handler(
    State(svc): State<ReviewService>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionReport>, ReviewError> {
    svc.report(&id).map(Json)
}

/// Serve until ctrl-c.
pub async fn serve(svc: ReviewService, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, svc.router(ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
