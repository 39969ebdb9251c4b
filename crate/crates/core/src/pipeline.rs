//! Stage orchestration and the desk: the live engine, its claim signals and
//! its log position.
//!
//! Every arrival runs parse, validate, embed, assign, instantiate,
//! investigate, expire. Each decision becomes an [`Event`] that is appended to
//! the log and only then applied to state through [`Desk::apply`], the same
//! function replay uses. A desk built by replaying a log is therefore the
//! desk that wrote it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{AssignmentDecision, ClusterError, ClusterId, EngineState, LiveArticle, Placement, StoryId};
use crate::config::{Config, ConfigError};
use crate::embed::{hash_embed, Embedder, Vector};
use crate::investigate::{
    detect_claim_signals, detect_narrative_shift, sort_signals, ClaimRecord, Signal, SignalId, SignalKind,
    WindowMember,
};
use crate::memory::{Event, EventPayload, EventSink, MemoryError, Snapshot, StateDir};
use crate::model::{is_skippable_line, parse_jsonl_record, validate_article, Article, ArticleId, ClaimId, RawArticle};
use crate::Timestamp;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("corrupt log at seq {seq}: {reason}")]
    Corrupt { seq: u64, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("configuration differs from the one stored in {0}")]
    ConfigMismatch(PathBuf),
    #[error("reading input: {0}")]
    Input(#[source] io::Error),
}

impl PipelineError {
    /// Process exit status for a fatal error.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn corrupt(seq: u64, reason: impl ToString) -> PipelineError {
    PipelineError::Corrupt {
        seq,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Retired {
    cluster_id: ClusterId,
    external_id: String,
}

// Canonical state image. Fields are in alphabetical order so the serialized
// keys come out sorted; maps are written as id-sorted arrays.

#[derive(Serialize, Deserialize)]
struct StateImage {
    articles: Vec<ArticleImage>,
    clock: Timestamp,
    next_article_id: ArticleId,
    next_claim_id: ClaimId,
    next_cluster_id: ClusterId,
    next_story_id: StoryId,
    pending: Vec<PendingImage>,
    retired: Vec<RetiredImage>,
    signals: Vec<Signal>,
    stories: Vec<StoryImage>,
}

#[derive(Serialize, Deserialize)]
struct ArticleImage {
    article: Article,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vector>,
}

#[derive(Serialize, Deserialize)]
struct PendingImage {
    cluster_id: ClusterId,
    members: Vec<ArticleId>,
}

#[derive(Serialize, Deserialize)]
struct RetiredImage {
    article_id: ArticleId,
    cluster_id: ClusterId,
    external_id: String,
}

#[derive(Serialize, Deserialize)]
struct StoryImage {
    instantiated_at: Timestamp,
    members: Vec<ArticleId>,
    origin_cluster: ClusterId,
    story_id: StoryId,
}

/// A story as shown to operators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoryView {
    pub story_id: StoryId,
    pub score: f64,
    pub articles: usize,
    pub sources: Vec<String>,
    pub created_at: Timestamp,
    pub instantiated_at: Timestamp,
    pub last_updated: Timestamp,
    pub coherence: f64,
    pub entities: BTreeMap<String, u32>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<MemberView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberView {
    pub article_id: ArticleId,
    pub external_id: String,
    pub source_id: String,
    pub published_at: Timestamp,
    pub title: String,
}

/// Live engine state plus everything needed to keep extending the log.
#[derive(Debug, Clone)]
pub struct Desk {
    config: Config,
    engine: EngineState,
    signals: BTreeMap<SignalId, Signal>,
    external_ids: HashMap<String, ArticleId>,
    retired: BTreeMap<ArticleId, Retired>,
    /// Live articles whose vectors came from the log rather than the hash embedder.
    recorded: BTreeSet<ArticleId>,
    next_article_id: ArticleId,
    next_claim_id: ClaimId,
    last_seq: u64,
}

impl Desk {
    pub fn new(config: Config) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            engine: EngineState::new(config.matching.clone(), config.embed.dim),
            config,
            signals: BTreeMap::new(),
            external_ids: HashMap::new(),
            retired: BTreeMap::new(),
            recorded: BTreeSet::new(),
            next_article_id: 1,
            next_claim_id: 1,
            last_seq: 0,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn engine(&self) -> &EngineState {
        &self.engine
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn clock(&self) -> Timestamp {
        self.engine.clock()
    }

    /// Current signals ordered by `(detected_at, kind, key)`.
    pub fn signals(&self) -> Vec<Signal> {
        let mut out: Vec<Signal> = self.signals.values().cloned().collect();
        sort_signals(&mut out);
        out
    }

    /// Cluster label for every article ever ingested, keyed by external id:
    /// `story-N` for story members, `pending-N` for pending or expired ones.
    pub fn labels(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (id, live) in self.engine.articles() {
            let label = match self.engine.placement(*id) {
                Some(Placement::Story(s)) => format!("story-{s}"),
                Some(Placement::Pending(c)) => format!("pending-{c}"),
                None => format!("unplaced-{id}"),
            };
            out.insert(live.article.external_id.clone(), label);
        }
        for r in self.retired.values() {
            out.insert(r.external_id.clone(), format!("pending-{}", r.cluster_id));
        }
        out
    }

    /// Stories ranked at the desk clock.
    pub fn ranked_stories(&self) -> Vec<StoryView> {
        self.engine
            .rank_stories(self.clock())
            .into_iter()
            .filter_map(|(id, score)| self.story_view(id, score))
            .collect()
    }

    pub fn story(&self, story_id: StoryId) -> Option<StoryView> {
        let score = self
            .engine
            .rank_stories(self.clock())
            .into_iter()
            .find(|(id, _)| *id == story_id)?
            .1;
        self.story_view(story_id, score)
    }

    fn story_view(&self, story_id: StoryId, score: f64) -> Option<StoryView> {
        let s = self.engine.stories().get(&story_id)?;
        let members = s
            .group
            .member_ids()
            .filter_map(|id| self.engine.article(id))
            .map(|l| MemberView {
                article_id: l.article.id,
                external_id: l.article.external_id.clone(),
                source_id: l.article.source_id.clone(),
                published_at: l.article.published_at,
                title: l.article.norm_title.clone(),
            })
            .collect();
        Some(StoryView {
            story_id,
            score,
            articles: s.group.len(),
            sources: s.group.source_set().iter().cloned().collect(),
            created_at: s.created_at(),
            instantiated_at: s.instantiated_at,
            last_updated: s.last_updated(),
            coherence: s.group.coherence(),
            entities: s.group.entity_profile().clone(),
            members,
        })
    }

    /// Handles one ingest line. Blank and comment lines produce no events.
    pub fn process_line(
        &mut self,
        line: &[u8],
        line_no: u64,
        embedder: &dyn Embedder,
        sink: &mut dyn EventSink,
    ) -> Result<Vec<Event>, PipelineError> {
        if is_skippable_line(line) {
            return Ok(Vec::new());
        }
        match parse_jsonl_record(line) {
            Ok(raw) => self.process_one(&raw, Some(line_no), embedder, sink),
            Err(e) => {
                let mut out = Vec::new();
                self.reject(None, Some(line_no), e.to_string(), sink, &mut out)?;
                sink.commit()?;
                Ok(out)
            }
        }
    }

    /// Runs every stage for one record and returns the events it produced.
    /// Storage failures abort; anything wrong with the record itself becomes
    /// an `ArticleRejected` event.
    pub fn process_one(
        &mut self,
        raw: &RawArticle,
        line_no: Option<u64>,
        embedder: &dyn Embedder,
        sink: &mut dyn EventSink,
    ) -> Result<Vec<Event>, PipelineError> {
        let mut out = Vec::new();
        self.stages(raw, line_no, embedder, sink, &mut out)?;
        sink.commit()?;
        Ok(out)
    }

    fn stages(
        &mut self,
        raw: &RawArticle,
        line_no: Option<u64>,
        embedder: &dyn Embedder,
        sink: &mut dyn EventSink,
        out: &mut Vec<Event>,
    ) -> Result<(), PipelineError> {
        let external_id = Some(raw.external_id.clone());
        let article = match validate_article(raw, self.next_article_id, self.next_claim_id) {
            Ok(a) => a,
            Err(e) => return self.reject(external_id, line_no, e.to_string(), sink, out),
        };
        if self.external_ids.contains_key(&article.external_id) {
            return self.reject(external_id, line_no, "duplicate external_id".into(), sink, out);
        }
        let text = article.embedding_text();
        // Replay recomputes reproducible vectors from the stored config, so
        // live ingest must use the same settings whatever the caller passed.
        let embedded = if embedder.reproducible() {
            hash_embed(&text, &self.config.embed).map(|v| vec![v])
        } else {
            embedder.embed(&[&text])
        };
        let vector = match embedded {
            Ok(mut v) if v.len() == 1 => v.pop().expect("one vector"),
            Ok(v) => {
                let reason = format!("embedder returned {} vectors for one text", v.len());
                return self.reject(external_id, line_no, reason, sink, out);
            }
            Err(e) => return self.reject(external_id, line_no, e.to_string(), sink, out),
        };
        if vector.dim() != self.config.embed.dim {
            let reason = format!("embedding has {} dimensions, expected {}", vector.dim(), self.config.embed.dim);
            return self.reject(external_id, line_no, reason, sink, out);
        }

        let id = article.id;
        let published_at = article.published_at;
        let recorded = (!embedder.reproducible()).then(|| vector.clone());
        self.emit(
            EventPayload::ArticleIngested {
                article,
                vector: recorded,
            },
            Some(vector),
            sink,
            out,
        )?;

        let decision = self.engine.decide(id).map_err(|e| corrupt(self.last_seq, e))?;
        let mut touched: Option<StoryId> = None;
        let mut candidate: Option<ClusterId> = None;
        match decision {
            AssignmentDecision::JoinStory { story_id, score } => {
                let vector = &self.engine.article(id).expect("ingested").vector;
                let novelty = self
                    .engine
                    .novelty(vector, story_id, Some(id))
                    .map_err(|e| corrupt(self.last_seq, e))?;
                self.emit(
                    EventPayload::AssignedToStory {
                        article_id: id,
                        novelty,
                        score,
                        story_id,
                    },
                    None,
                    sink,
                    out,
                )?;
                let story = &self.engine.stories()[&story_id];
                let update = EventPayload::StoryUpdated {
                    last_updated: story.last_updated(),
                    members: story.group.len(),
                    sources: story.group.source_set().len(),
                    story_id,
                };
                self.emit(update, None, sink, out)?;
                touched = Some(story_id);
            }
            AssignmentDecision::JoinPending { cluster_id, score } => {
                self.emit(
                    EventPayload::AssignedToPending {
                        article_id: id,
                        cluster_id,
                        score: Some(score),
                    },
                    None,
                    sink,
                    out,
                )?;
                candidate = Some(cluster_id);
            }
            AssignmentDecision::NewPending { cluster_id, .. } => {
                self.emit(EventPayload::PendingCreated { cluster_id }, None, sink, out)?;
                self.emit(
                    EventPayload::AssignedToPending {
                        article_id: id,
                        cluster_id,
                        score: None,
                    },
                    None,
                    sink,
                    out,
                )?;
                candidate = Some(cluster_id);
            }
        }

        if let Some(cluster_id) = candidate {
            let verdict = self
                .engine
                .check_instantiation(cluster_id)
                .map_err(|e| corrupt(self.last_seq, e))?;
            if verdict.instantiate {
                let story_id = self.engine.next_story_id();
                self.emit(
                    EventPayload::StoryInstantiated {
                        cluster_id,
                        coherence: verdict.coherence,
                        instantiated_at: published_at,
                        story_id,
                    },
                    None,
                    sink,
                    out,
                )?;
                touched = Some(story_id);
            }
        }

        if let Some(story_id) = touched {
            self.investigate(story_id, sink, out)?;
        }

        for cluster_id in self.engine.expirable(self.clock()) {
            let article_ids = self.engine.pending()[&cluster_id].group.member_ids().collect::<Vec<_>>();
            let mut sorted = article_ids;
            sorted.sort_unstable();
            self.emit(
                EventPayload::PendingExpired {
                    article_ids: sorted,
                    cluster_id,
                },
                None,
                sink,
                out,
            )?;
        }
        Ok(())
    }

    /// Re-runs the detectors over the story and logs what is new or changed.
    /// Drift signals are reported once per window bucket and not revised.
    fn investigate(&mut self, story_id: StoryId, sink: &mut dyn EventSink, out: &mut Vec<Event>) -> Result<(), PipelineError> {
        let story = &self.engine.stories()[&story_id];
        let members: Vec<&LiveArticle> = story.group.member_ids().filter_map(|id| self.engine.article(id)).collect();
        let claims: Vec<ClaimRecord> = members
            .iter()
            .flat_map(|l| l.article.claims.iter().map(|c| ClaimRecord::new(c, &l.article.source_id)))
            .collect();
        let mut found = detect_claim_signals(story_id, &claims, &self.config.investigate);
        let window: Vec<WindowMember<'_>> = members
            .iter()
            .map(|l| WindowMember {
                published_at: l.article.published_at,
                source_id: &l.article.source_id,
                vector: &l.vector,
            })
            .collect();
        found.extend(detect_narrative_shift(story_id, &window, self.clock(), &self.config.investigate));
        sort_signals(&mut found);

        for signal in found {
            let payload = match self.signals.get(&signal.id()) {
                None => EventPayload::SignalEmitted { signal },
                Some(_) if signal.kind == SignalKind::NarrativeShift => continue,
                Some(old) if *old != signal => EventPayload::SignalRevised { signal },
                Some(_) => continue,
            };
            self.emit(payload, None, sink, out)?;
        }
        Ok(())
    }

    fn reject(
        &mut self,
        external_id: Option<String>,
        line: Option<u64>,
        reason: String,
        sink: &mut dyn EventSink,
        out: &mut Vec<Event>,
    ) -> Result<(), PipelineError> {
        self.emit(
            EventPayload::ArticleRejected {
                external_id,
                line,
                reason,
            },
            None,
            sink,
            out,
        )
    }

    fn event_time(&self, payload: &EventPayload) -> Timestamp {
        match payload {
            EventPayload::ArticleIngested { article, .. } => self.clock().max(article.published_at),
            _ => self.clock(),
        }
    }

    /// Write-ahead: the event reaches the sink before state changes.
    fn emit(
        &mut self,
        payload: EventPayload,
        vector: Option<Vector>,
        sink: &mut dyn EventSink,
        out: &mut Vec<Event>,
    ) -> Result<(), PipelineError> {
        let event = Event {
            seq: self.last_seq + 1,
            at: self.event_time(&payload),
            payload,
        };
        sink.append(&event)?;
        self.apply_with(&event, vector)?;
        out.push(event);
        Ok(())
    }

    /// Applies one logged decision. Anything inconsistent with the current
    /// state is reported as log corruption.
    pub fn apply(&mut self, event: &Event) -> Result<(), PipelineError> {
        self.apply_with(event, None)
    }

    fn apply_with(&mut self, event: &Event, computed: Option<Vector>) -> Result<(), PipelineError> {
        let seq = event.seq;
        if seq != self.last_seq + 1 {
            return Err(corrupt(seq, format!("expected seq {}", self.last_seq + 1)));
        }
        if event.at != self.event_time(&event.payload) {
            return Err(corrupt(seq, format!("unexpected timestamp {}", event.at)));
        }
        let cluster_err = |e: ClusterError| corrupt(seq, e);
        match &event.payload {
            EventPayload::ArticleIngested { article, vector } => {
                if article.id != self.next_article_id {
                    return Err(corrupt(seq, format!("expected article id {}", self.next_article_id)));
                }
                for (i, c) in article.claims.iter().enumerate() {
                    if c.claim_id != self.next_claim_id + i as u64 || c.article_id != article.id {
                        return Err(corrupt(seq, "claim ids out of order"));
                    }
                }
                if self.external_ids.contains_key(&article.external_id) {
                    return Err(corrupt(seq, "duplicate external_id"));
                }
                let v = match (vector, computed) {
                    (Some(v), _) => v.clone(),
                    (None, Some(v)) => v,
                    (None, None) => hash_embed(&article.embedding_text(), &self.config.embed).map_err(|e| corrupt(seq, e))?,
                };
                self.engine.insert_article(article.clone(), v).map_err(cluster_err)?;
                if vector.is_some() {
                    self.recorded.insert(article.id);
                }
                self.external_ids.insert(article.external_id.clone(), article.id);
                self.next_article_id += 1;
                self.next_claim_id += article.claims.len() as u64;
            }
            EventPayload::ArticleRejected { .. } => {}
            EventPayload::PendingCreated { cluster_id } => {
                self.engine.create_pending(*cluster_id).map_err(cluster_err)?;
            }
            EventPayload::AssignedToPending { article_id, cluster_id, .. } => {
                self.engine.join_pending(*cluster_id, *article_id).map_err(cluster_err)?;
            }
            EventPayload::AssignedToStory { article_id, story_id, .. } => {
                self.engine.join_story(*story_id, *article_id).map_err(cluster_err)?;
            }
            EventPayload::StoryUpdated {
                last_updated,
                members,
                sources,
                story_id,
            } => {
                let s = self
                    .engine
                    .stories()
                    .get(story_id)
                    .ok_or_else(|| corrupt(seq, format!("unknown story {story_id}")))?;
                if s.last_updated() != *last_updated || s.group.len() != *members || s.group.source_set().len() != *sources {
                    return Err(corrupt(seq, format!("story {story_id} summary disagrees with state")));
                }
            }
            EventPayload::StoryInstantiated {
                cluster_id,
                instantiated_at,
                story_id,
                ..
            } => {
                self.engine
                    .instantiate(*cluster_id, *story_id, *instantiated_at)
                    .map_err(cluster_err)?;
            }
            EventPayload::PendingExpired { article_ids, cluster_id } => {
                let names: Vec<(ArticleId, String)> = article_ids
                    .iter()
                    .filter_map(|id| self.engine.article(*id).map(|l| (*id, l.article.external_id.clone())))
                    .collect();
                let mut removed = self.engine.expire(*cluster_id).map_err(cluster_err)?;
                removed.sort_unstable();
                if removed != *article_ids || names.len() != removed.len() {
                    return Err(corrupt(seq, format!("cluster {cluster_id} members disagree with state")));
                }
                for (id, external_id) in names {
                    self.recorded.remove(&id);
                    self.retired.insert(
                        id,
                        Retired {
                            cluster_id: *cluster_id,
                            external_id,
                        },
                    );
                }
            }
            EventPayload::SignalEmitted { signal } => {
                if self.signals.insert(signal.id(), signal.clone()).is_some() {
                    return Err(corrupt(seq, "signal emitted twice"));
                }
            }
            EventPayload::SignalRevised { signal } => {
                if self.signals.insert(signal.id(), signal.clone()).is_none() {
                    return Err(corrupt(seq, "revision of unknown signal"));
                }
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    /// Canonical state bytes: one JSON line with sorted keys.
    pub fn state_bytes(&self) -> Vec<u8> {
        let articles = self
            .engine
            .articles()
            .values()
            .map(|l| ArticleImage {
                article: l.article.clone(),
                vector: self.recorded.contains(&l.article.id).then(|| l.vector.clone()),
            })
            .collect();
        let pending = self
            .engine
            .pending()
            .values()
            .map(|p| PendingImage {
                cluster_id: p.cluster_id,
                members: sorted_ids(p.group.member_ids()),
            })
            .collect();
        let stories = self
            .engine
            .stories()
            .values()
            .map(|s| StoryImage {
                instantiated_at: s.instantiated_at,
                members: sorted_ids(s.group.member_ids()),
                origin_cluster: s.origin_cluster,
                story_id: s.story_id,
            })
            .collect();
        let retired = self
            .retired
            .iter()
            .map(|(id, r)| RetiredImage {
                article_id: *id,
                cluster_id: r.cluster_id,
                external_id: r.external_id.clone(),
            })
            .collect();
        let image = StateImage {
            articles,
            clock: self.clock(),
            next_article_id: self.next_article_id,
            next_claim_id: self.next_claim_id,
            next_cluster_id: self.engine.next_cluster_id(),
            next_story_id: self.engine.next_story_id(),
            pending,
            retired,
            signals: self.signals.values().cloned().collect(),
            stories,
        };
        serde_json::to_vec(&image).expect("state serializes")
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::new(self.config.clone(), self.state_bytes(), self.last_seq)
    }

    pub fn digest(&self) -> String {
        crate::memory::sha256_hex(&self.state_bytes())
    }

    /// Rebuilds a desk from a snapshot. Derived aggregates are recomputed by
    /// re-adding members in ascending id order, the order they joined in.
    pub fn from_snapshot(snapshot: &Snapshot) -> Result<Self, PipelineError> {
        let seq = snapshot.last_seq;
        let image: StateImage = serde_json::from_slice(&snapshot.state).map_err(|e| corrupt(seq, e))?;
        let mut desk = Desk::new(snapshot.config.clone())?;
        let cluster_err = |e: ClusterError| corrupt(seq, e);
        for a in image.articles {
            let id = a.article.id;
            let v = match &a.vector {
                Some(v) => v.clone(),
                None => hash_embed(&a.article.embedding_text(), &desk.config.embed).map_err(|e| corrupt(seq, e))?,
            };
            if a.vector.is_some() {
                desk.recorded.insert(id);
            }
            desk.external_ids.insert(a.article.external_id.clone(), id);
            desk.engine.insert_article(a.article, v).map_err(cluster_err)?;
        }
        for p in image.pending {
            desk.engine.restore_pending(p.cluster_id, &p.members).map_err(cluster_err)?;
        }
        for s in image.stories {
            desk.engine
                .restore_story(s.story_id, s.origin_cluster, s.instantiated_at, &s.members)
                .map_err(cluster_err)?;
        }
        for r in image.retired {
            desk.external_ids.insert(r.external_id.clone(), r.article_id);
            desk.retired.insert(
                r.article_id,
                Retired {
                    cluster_id: r.cluster_id,
                    external_id: r.external_id,
                },
            );
        }
        for s in image.signals {
            desk.signals.insert(s.id(), s);
        }
        desk.engine
            .restore_counters(image.next_story_id, image.next_cluster_id, image.clock);
        desk.next_article_id = image.next_article_id;
        desk.next_claim_id = image.next_claim_id;
        desk.last_seq = seq;
        if desk.state_bytes() != snapshot.state {
            return Err(corrupt(seq, "snapshot is not in canonical form"));
        }
        Ok(desk)
    }

    /// Replays a log from scratch.
    pub fn replay<I>(config: Config, events: I) -> Result<Self, PipelineError>
    where
        I: IntoIterator<Item = Result<Event, MemoryError>>,
    {
        let mut desk = Desk::new(config)?;
        for e in events {
            desk.apply(&e?)?;
        }
        Ok(desk)
    }
}

fn sorted_ids(ids: impl Iterator<Item = ArticleId>) -> Vec<ArticleId> {
    let mut v: Vec<ArticleId> = ids.collect();
    v.sort_unstable();
    v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub digest: String,
    pub events: u64,
    pub ingested: u64,
    pub last_seq: u64,
    pub pending: usize,
    pub rejected: u64,
    pub snapshot: PathBuf,
    pub stories: usize,
}

impl RunSummary {
    /// 0 when every record was accepted, 1 when some were rejected.
    pub fn exit_code(&self) -> i32 {
        if self.rejected > 0 {
            1
        } else {
            0
        }
    }
}

/// Loads the newest snapshot in `dir` and applies the log tail after it.
fn restore(dir: &StateDir, snapshot: &Snapshot) -> Result<Desk, PipelineError> {
    let mut desk = Desk::from_snapshot(snapshot)?;
    let mut log_end = 0;
    for e in dir.events()? {
        let e = e?;
        log_end = e.seq;
        if e.seq > snapshot.last_seq {
            desk.apply(&e)?;
        }
    }
    if log_end < snapshot.last_seq {
        return Err(corrupt(log_end, format!("snapshot at seq {} is ahead of the log", snapshot.last_seq)));
    }
    Ok(desk)
}

/// The configuration a state directory was created with, or `None` when it
/// does not exist yet.
pub fn stored_config(state_dir: &Path) -> Result<Option<Config>, PipelineError> {
    if !state_dir.exists() {
        return Ok(None);
    }
    let dir = StateDir::open_read_only(state_dir)?;
    Ok(dir.latest_snapshot()?.map(|s| s.config))
}

/// Opens a state directory read-only and rebuilds the current desk.
pub fn load(state_dir: &Path) -> Result<Desk, PipelineError> {
    let dir = StateDir::open_read_only(state_dir)?;
    let snap = dir
        .latest_snapshot()?
        .ok_or_else(|| corrupt(0, "state directory has no snapshot"))?;
    restore(&dir, &snap)
}

/// Processes `input` into the state directory, resuming from whatever it
/// already holds. `config` is required to match the stored one when the
/// directory exists; a fresh directory takes `config` or the defaults.
pub fn run_stream(
    input: &Path,
    state_dir: &Path,
    config: Option<Config>,
    embedder: &dyn Embedder,
) -> Result<RunSummary, PipelineError> {
    let file = File::open(input).map_err(PipelineError::Input)?;
    run_reader(BufReader::new(file), state_dir, config, embedder)
}

pub fn run_reader<R: BufRead>(
    mut input: R,
    state_dir: &Path,
    config: Option<Config>,
    embedder: &dyn Embedder,
) -> Result<RunSummary, PipelineError> {
    let dir = StateDir::open_exclusive(state_dir)?;
    dir.repair_tail()?;
    let mut desk = match dir.latest_snapshot()? {
        Some(snap) => {
            if config.as_ref().is_some_and(|c| *c != snap.config) {
                return Err(PipelineError::ConfigMismatch(state_dir.to_path_buf()));
            }
            restore(&dir, &snap)?
        }
        None => {
            if dir.events()?.next().is_some() {
                return Err(corrupt(0, "event log without a base snapshot"));
            }
            let desk = Desk::new(config.unwrap_or_default())?;
            dir.write_snapshot(&desk.snapshot())?;
            desk
        }
    };

    let start_seq = desk.last_seq();
    let mut log = dir.open_log(start_seq)?;
    let (mut ingested, mut rejected) = (0, 0);
    let mut buf = Vec::new();
    let mut line_no = 0u64;
    loop {
        buf.clear();
        if input.read_until(b'\n', &mut buf).map_err(PipelineError::Input)? == 0 {
            break;
        }
        line_no += 1;
        let line = buf.strip_suffix(b"\n").unwrap_or(&buf);
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        for e in desk.process_line(line, line_no, embedder, &mut log)? {
            match e.payload {
                EventPayload::ArticleIngested { .. } => ingested += 1,
                EventPayload::ArticleRejected { .. } => rejected += 1,
                _ => {}
            }
        }
    }
    log.sync()?;
    let snapshot = desk.snapshot();
    let path = dir.write_snapshot(&snapshot)?;
    Ok(RunSummary {
        digest: snapshot.digest,
        events: desk.last_seq() - start_seq,
        ingested,
        last_seq: desk.last_seq(),
        pending: desk.engine().pending().len(),
        rejected,
        snapshot: path,
        stories: desk.engine().stories().len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub digest: String,
    pub last_seq: u64,
    pub snapshots_verified: usize,
}

/// Replays the whole log from the base snapshot, checking every snapshot on
/// the way against the replayed state.
pub fn verify(state_dir: &Path) -> Result<ReplayReport, PipelineError> {
    let dir = StateDir::open_read_only(state_dir)?;
    let seqs = dir.snapshot_seqs()?;
    if seqs.first() != Some(&0) {
        return Err(corrupt(0, "missing base snapshot 00000000.snap"));
    }
    let base = dir.read_snapshot(0)?;
    let mut desk = Desk::from_snapshot(&base)?;
    let mut pending_checks = seqs[1..].iter().copied().peekable();
    let mut verified = 1;
    for e in dir.events()? {
        desk.apply(&e?)?;
        while let Some(&s) = pending_checks.peek() {
            if s > desk.last_seq() {
                break;
            }
            pending_checks.next();
            let snap = dir.read_snapshot(s)?;
            if snap.config != base.config || snap.digest != desk.digest() {
                return Err(corrupt(s, "snapshot digest does not match the replayed state"));
            }
            verified += 1;
        }
    }
    if let Some(s) = pending_checks.next() {
        return Err(corrupt(desk.last_seq(), format!("snapshot at seq {s} is ahead of the log")));
    }
    Ok(ReplayReport {
        digest: desk.digest(),
        last_seq: desk.last_seq(),
        snapshots_verified: verified,
    })
}
