//! The story engine: online assignment of articles to stories or pending
//! clusters, threshold-gated story instantiation, source-balanced centroids,
//! novelty scoring and importance ranking.
//!
//! Stories and pending clusters share one candidate pool. An arriving article
//! joins the best-scoring candidate if that score reaches `theta_join`;
//! otherwise it seeds a new pending cluster. A pending cluster becomes a story
//! once it has enough articles, enough distinct sources and a high enough mean
//! pairwise cosine; every member it accumulated so far moves into the story.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::embed::{self, cosine, EmbedError, Vector};
use crate::model::{Article, ArticleId};
use crate::Timestamp;

pub type StoryId = u64;
pub type ClusterId = u64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("article {0} is already placed")]
    DuplicateArticle(ArticleId),
    #[error("unknown article {0}")]
    UnknownArticle(ArticleId),
    #[error("unknown story {0}")]
    UnknownStory(StoryId),
    #[error("unknown pending cluster {0}")]
    UnknownCluster(ClusterId),
    #[error("expected id {expected}, got {got}")]
    UnexpectedId { expected: u64, got: u64 },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid match config: {0}")]
    InvalidConfig(&'static str),
}

/// Scoring weights and instantiation thresholds. Times are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub min_articles: usize,
    pub min_coherence: f64,
    pub min_sources: usize,
    pub pending_ttl: i64,
    pub tau: f64,
    pub theta_join: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.60,
            beta: 0.25,
            gamma: 0.15,
            min_articles: 5,
            min_coherence: 0.55,
            min_sources: 5,
            pending_ttl: 259_200,
            tau: 86_400.0,
            theta_join: 0.55,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(ClusterError::InvalidConfig("weights must be non-negative"));
        }
        if (self.alpha + self.beta + self.gamma - 1.0).abs() > 1e-9 {
            return Err(ClusterError::InvalidConfig("alpha + beta + gamma must equal 1"));
        }
        if !(self.theta_join > 0.0 && self.theta_join < 1.0) {
            return Err(ClusterError::InvalidConfig("theta_join must lie in (0, 1)"));
        }
        if self.min_articles < 2 {
            return Err(ClusterError::InvalidConfig("min_articles must be at least 2"));
        }
        if self.min_sources < 1 {
            return Err(ClusterError::InvalidConfig("min_sources must be at least 1"));
        }
        if !(self.tau > 0.0) {
            return Err(ClusterError::InvalidConfig("tau must be positive"));
        }
        if self.pending_ttl < 0 {
            return Err(ClusterError::InvalidConfig("pending_ttl must be non-negative"));
        }
        Ok(())
    }
}

/// `exp(-delta_t / tau)`.
pub fn temporal_proximity(delta_t: f64, tau: f64) -> f64 {
    (-delta_t / tau).exp()
}

/// Jaccard similarity between `entities` and the support of `profile`.
/// Two empty sets score 0.
pub fn entity_overlap(entities: &[String], profile: &BTreeMap<String, u32>) -> f64 {
    let mut inter = 0usize;
    for e in entities {
        if profile.contains_key(e) {
            inter += 1;
        }
    }
    let union = entities.len() + profile.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// An article with its embedding, held while it is part of live state.
#[derive(Debug, Clone)]
pub struct LiveArticle {
    pub article: Article,
    pub vector: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub published_at: Timestamp,
    pub article_id: ArticleId,
}

#[derive(Debug, Clone)]
struct SourceMean {
    sum: Vec<f64>,
    /// Fingerprint and representative article of each distinct embedding.
    distinct: Vec<(u64, ArticleId)>,
}

/// Membership and running aggregates shared by pending clusters and stories.
///
/// Each source contributes the mean of its distinct member embeddings and the
/// centroid is the normalized mean of those per-source means, so a source
/// repeating itself cannot pull the centroid further than a source heard once.
#[derive(Debug, Clone)]
pub struct Group {
    members: Vec<Member>,
    source_set: BTreeSet<String>,
    entity_profile: BTreeMap<String, u32>,
    per_source: BTreeMap<String, SourceMean>,
    centroid: Option<Vector>,
    sum: Vec<f64>,
    sq_norms: f64,
    last_arrival: Timestamp,
}

impl Group {
    fn new(dim: usize) -> Self {
        Self {
            members: Vec::new(),
            source_set: BTreeSet::new(),
            entity_profile: BTreeMap::new(),
            per_source: BTreeMap::new(),
            centroid: None,
            sum: vec![0.0; dim],
            sq_norms: 0.0,
            last_arrival: Timestamp::MIN,
        }
    }

    fn add(&mut self, live: &LiveArticle, articles: &BTreeMap<ArticleId, LiveArticle>) {
        let a = &live.article;
        let member = Member {
            published_at: a.published_at,
            article_id: a.id,
        };
        let pos = self.members.partition_point(|m| *m < member);
        self.members.insert(pos, member);
        self.source_set.insert(a.source_id.clone());
        for e in &a.entities {
            *self.entity_profile.entry(e.clone()).or_insert(0) += 1;
        }
        self.last_arrival = self.last_arrival.max(a.published_at);

        let v = live.vector.as_slice();
        for (s, &x) in self.sum.iter_mut().zip(v) {
            *s += f64::from(x);
        }
        self.sq_norms += embed::dot(v, v);

        let dim = self.sum.len();
        let fp = live.vector.fingerprint();
        let src = self
            .per_source
            .entry(a.source_id.clone())
            .or_insert_with(|| SourceMean {
                sum: vec![0.0; dim],
                distinct: Vec::new(),
            });
        let duplicate = src.distinct.iter().any(|&(f, id)| {
            f == fp
                && articles
                    .get(&id)
                    .is_some_and(|other| other.vector == live.vector)
        });
        if !duplicate {
            src.distinct.push((fp, a.id));
            for (s, &x) in src.sum.iter_mut().zip(v) {
                *s += f64::from(x);
            }
            self.centroid = self.balanced_centroid();
        }
    }

    fn balanced_centroid(&self) -> Option<Vector> {
        let mut acc = vec![0.0f64; self.sum.len()];
        for src in self.per_source.values() {
            let k = src.distinct.len() as f64;
            for (a, s) in acc.iter_mut().zip(&src.sum) {
                *a += s / k;
            }
        }
        // Normalization makes the outer division by the source count moot.
        Vector::normalized(&acc)
    }

    /// Member ids ordered by `(published_at, id)`.
    pub fn member_ids(&self) -> impl Iterator<Item = ArticleId> + '_ {
        self.members.iter().map(|m| m.article_id)
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn source_set(&self) -> &BTreeSet<String> {
        &self.source_set
    }

    pub fn entity_profile(&self) -> &BTreeMap<String, u32> {
        &self.entity_profile
    }

    pub fn centroid(&self) -> Option<&Vector> {
        self.centroid.as_ref()
    }

    pub fn last_arrival(&self) -> Timestamp {
        self.last_arrival
    }

    pub fn earliest(&self) -> Option<Timestamp> {
        self.members.first().map(|m| m.published_at)
    }

    /// Mean pairwise cosine over all member pairs, from the running sum:
    /// `sum_{i != j} <v_i, v_j> = |sum v|^2 - sum |v_i|^2`.
    pub fn coherence(&self) -> f64 {
        let n = self.members.len() as f64;
        if n < 2.0 {
            return 1.0;
        }
        let total: f64 = self.sum.iter().map(|x| x * x).sum();
        (total - self.sq_norms) / (n * (n - 1.0))
    }
}

/// Mean of per-source means over distinct embeddings, normalized.
pub fn source_balanced_centroid<'a>(
    items: impl IntoIterator<Item = (&'a str, &'a Vector)>,
) -> Option<Vector> {
    let mut per_source: BTreeMap<&str, Vec<&Vector>> = BTreeMap::new();
    for (s, v) in items {
        let seen = per_source.entry(s).or_default();
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    let dim = per_source.values().flatten().next()?.dim();
    let mut acc = vec![0.0f64; dim];
    for vs in per_source.values() {
        let mut sum = vec![0.0f64; dim];
        for v in vs {
            for (s, &x) in sum.iter_mut().zip(v.as_slice()) {
                *s += f64::from(x);
            }
        }
        let k = vs.len() as f64;
        for (a, s) in acc.iter_mut().zip(&sum) {
            *a += s / k;
        }
    }
    Vector::normalized(&acc)
}

#[derive(Debug, Clone)]
pub struct PendingCluster {
    pub cluster_id: ClusterId,
    pub group: Group,
}

#[derive(Debug, Clone)]
pub struct Story {
    pub story_id: StoryId,
    pub origin_cluster: ClusterId,
    pub instantiated_at: Timestamp,
    pub group: Group,
}

impl Story {
    pub fn created_at(&self) -> Timestamp {
        self.group.earliest().unwrap_or(self.instantiated_at)
    }

    pub fn last_updated(&self) -> Timestamp {
        self.group.last_arrival()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Pending(ClusterId),
    Story(StoryId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssignmentDecision {
    JoinStory { story_id: StoryId, score: f64 },
    JoinPending { cluster_id: ClusterId, score: f64 },
    /// No candidate reached the join threshold; `best` is the top score seen.
    NewPending {
        cluster_id: ClusterId,
        best: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstantiationVerdict {
    pub instantiate: bool,
    pub articles: usize,
    pub sources: usize,
    pub coherence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignOutcome {
    pub decision: AssignmentDecision,
    pub instantiated: Option<StoryId>,
}

/// Weighted sum of semantic similarity, temporal proximity and entity
/// overlap between an article and a candidate group.
pub fn match_score(
    vector: &Vector,
    entities: &[String],
    published_at: Timestamp,
    target: &Group,
    cfg: &MatchConfig,
) -> Result<f64, EmbedError> {
    let semantic = match target.centroid() {
        Some(c) => cosine(vector, c)?,
        None => 0.0,
    };
    let delta = published_at.saturating_sub(target.last_arrival()).unsigned_abs() as f64;
    Ok(cfg.alpha * semantic
        + cfg.beta * temporal_proximity(delta, cfg.tau)
        + cfg.gamma * entity_overlap(entities, target.entity_profile()))
}

/// The complete live state of the story engine.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub cfg: MatchConfig,
    dim: usize,
    articles: BTreeMap<ArticleId, LiveArticle>,
    stories: BTreeMap<StoryId, Story>,
    pending: BTreeMap<ClusterId, PendingCluster>,
    placement: HashMap<ArticleId, Placement>,
    next_story_id: StoryId,
    next_cluster_id: ClusterId,
    clock: Timestamp,
}

impl EngineState {
    pub fn new(cfg: MatchConfig, dim: usize) -> Self {
        Self {
            cfg,
            dim,
            articles: BTreeMap::new(),
            stories: BTreeMap::new(),
            pending: BTreeMap::new(),
            placement: HashMap::new(),
            next_story_id: 1,
            next_cluster_id: 1,
            clock: 0,
        }
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn next_story_id(&self) -> StoryId {
        self.next_story_id
    }

    pub fn next_cluster_id(&self) -> ClusterId {
        self.next_cluster_id
    }

    pub(crate) fn restore_counters(&mut self, next_story: StoryId, next_cluster: ClusterId, clock: Timestamp) {
        self.next_story_id = next_story;
        self.next_cluster_id = next_cluster;
        self.clock = clock;
    }

    /// Rebuilds a group from members already in the live store, adding them
    /// in ascending id order (the order they originally joined in).
    fn rebuild_group(&mut self, members: &[ArticleId], placement: Placement) -> Result<Group, ClusterError> {
        let mut group = Group::new(self.dim);
        let mut ids = members.to_vec();
        ids.sort_unstable();
        for id in ids {
            if self.placement.insert(id, placement).is_some() {
                return Err(ClusterError::DuplicateArticle(id));
            }
            let live = self.articles.get(&id).ok_or(ClusterError::UnknownArticle(id))?;
            group.add(live, &self.articles);
        }
        Ok(group)
    }

    pub(crate) fn restore_pending(&mut self, cluster_id: ClusterId, members: &[ArticleId]) -> Result<(), ClusterError> {
        let group = self.rebuild_group(members, Placement::Pending(cluster_id))?;
        self.pending.insert(cluster_id, PendingCluster { cluster_id, group });
        Ok(())
    }

    pub(crate) fn restore_story(
        &mut self,
        story_id: StoryId,
        origin_cluster: ClusterId,
        instantiated_at: Timestamp,
        members: &[ArticleId],
    ) -> Result<(), ClusterError> {
        let group = self.rebuild_group(members, Placement::Story(story_id))?;
        self.stories.insert(
            story_id,
            Story {
                story_id,
                origin_cluster,
                instantiated_at,
                group,
            },
        );
        Ok(())
    }

    pub fn stories(&self) -> &BTreeMap<StoryId, Story> {
        &self.stories
    }

    pub fn pending(&self) -> &BTreeMap<ClusterId, PendingCluster> {
        &self.pending
    }

    pub fn articles(&self) -> &BTreeMap<ArticleId, LiveArticle> {
        &self.articles
    }

    pub fn article(&self, id: ArticleId) -> Option<&LiveArticle> {
        self.articles.get(&id)
    }

    pub fn placement(&self, id: ArticleId) -> Option<Placement> {
        self.placement.get(&id).copied()
    }

    /// Adds an article to the live store and advances the clock. It is not
    /// yet placed in any group.
    pub fn insert_article(&mut self, article: Article, vector: Vector) -> Result<(), ClusterError> {
        if vector.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                left: vector.dim(),
                right: self.dim,
            }
            .into());
        }
        if self.articles.contains_key(&article.id) || self.placement.contains_key(&article.id) {
            return Err(ClusterError::DuplicateArticle(article.id));
        }
        self.clock = self.clock.max(article.published_at);
        self.articles.insert(article.id, LiveArticle { article, vector });
        Ok(())
    }

    /// Scores the article against every story and pending cluster. Ties go to
    /// stories before pending clusters, then to the lowest id.
    ///
    /// Every candidate is visited, but the cosine and entity terms are skipped
    /// for one whose score cannot reach the best so far even with both terms
    /// at their maximum of 1. Rounding is monotone, so that bound is exact.
    pub fn decide(&self, article_id: ArticleId) -> Result<AssignmentDecision, ClusterError> {
        if self.placement.contains_key(&article_id) {
            return Err(ClusterError::DuplicateArticle(article_id));
        }
        let live = self
            .articles
            .get(&article_id)
            .ok_or(ClusterError::UnknownArticle(article_id))?;
        let a = &live.article;
        let cfg = &self.cfg;

        let candidates: Vec<(Placement, &Group)> = self
            .stories
            .iter()
            .map(|(&id, s)| (Placement::Story(id), &s.group))
            .chain(self.pending.iter().map(|(&id, c)| (Placement::Pending(id), &c.group)))
            .collect();
        let bounds: Vec<f64> = candidates
            .iter()
            .map(|(_, g)| {
                let delta = a.published_at.saturating_sub(g.last_arrival()).unsigned_abs() as f64;
                cfg.alpha + cfg.beta * temporal_proximity(delta, cfg.tau) + cfg.gamma
            })
            .collect();
        // Candidates are in tie-break order, so "earlier wins ties" is the
        // rule; start from the most promising one to prune the rest.
        let first = (0..candidates.len()).max_by(|&i, &j| bounds[i].total_cmp(&bounds[j]).then(j.cmp(&i)));

        let mut best: Option<(usize, f64)> = None;
        let mut visit = |i: usize| -> Result<(), ClusterError> {
            if let Some((_, b)) = best {
                if bounds[i] < b {
                    return Ok(());
                }
            }
            let s = match_score(&live.vector, &a.entities, a.published_at, candidates[i].1, cfg)?;
            let better = match best {
                None => true,
                Some((bi, b)) => s > b || (s == b && i < bi),
            };
            if better {
                best = Some((i, s));
            }
            Ok(())
        };
        if let Some(f) = first {
            visit(f)?;
            for i in 0..candidates.len() {
                if i != f {
                    visit(i)?;
                }
            }
        }

        Ok(match best {
            Some((i, score)) if score >= cfg.theta_join => match candidates[i].0 {
                Placement::Story(story_id) => AssignmentDecision::JoinStory { story_id, score },
                Placement::Pending(cluster_id) => AssignmentDecision::JoinPending { cluster_id, score },
            },
            other => AssignmentDecision::NewPending {
                cluster_id: self.next_cluster_id,
                best: other.map(|(_, s)| s),
            },
        })
    }

    pub fn create_pending(&mut self, cluster_id: ClusterId) -> Result<(), ClusterError> {
        if cluster_id != self.next_cluster_id {
            return Err(ClusterError::UnexpectedId {
                expected: self.next_cluster_id,
                got: cluster_id,
            });
        }
        self.next_cluster_id += 1;
        self.pending.insert(
            cluster_id,
            PendingCluster {
                cluster_id,
                group: Group::new(self.dim),
            },
        );
        Ok(())
    }

    fn check_unplaced(&self, article_id: ArticleId) -> Result<(), ClusterError> {
        if self.placement.contains_key(&article_id) {
            return Err(ClusterError::DuplicateArticle(article_id));
        }
        if !self.articles.contains_key(&article_id) {
            return Err(ClusterError::UnknownArticle(article_id));
        }
        Ok(())
    }

    pub fn join_pending(&mut self, cluster_id: ClusterId, article_id: ArticleId) -> Result<(), ClusterError> {
        self.check_unplaced(article_id)?;
        let cluster = self
            .pending
            .get_mut(&cluster_id)
            .ok_or(ClusterError::UnknownCluster(cluster_id))?;
        cluster.group.add(&self.articles[&article_id], &self.articles);
        self.placement.insert(article_id, Placement::Pending(cluster_id));
        Ok(())
    }

    pub fn join_story(&mut self, story_id: StoryId, article_id: ArticleId) -> Result<(), ClusterError> {
        self.check_unplaced(article_id)?;
        let story = self
            .stories
            .get_mut(&story_id)
            .ok_or(ClusterError::UnknownStory(story_id))?;
        story.group.add(&self.articles[&article_id], &self.articles);
        self.placement.insert(article_id, Placement::Story(story_id));
        Ok(())
    }

    pub fn check_instantiation(&self, cluster_id: ClusterId) -> Result<InstantiationVerdict, ClusterError> {
        let cluster = self
            .pending
            .get(&cluster_id)
            .ok_or(ClusterError::UnknownCluster(cluster_id))?;
        Ok(check_instantiation(&cluster.group, &self.cfg))
    }

    /// Promotes a pending cluster to a story carrying all of its members.
    pub fn instantiate(
        &mut self,
        cluster_id: ClusterId,
        story_id: StoryId,
        arrival_time: Timestamp,
    ) -> Result<&Story, ClusterError> {
        if story_id != self.next_story_id {
            return Err(ClusterError::UnexpectedId {
                expected: self.next_story_id,
                got: story_id,
            });
        }
        let cluster = self
            .pending
            .remove(&cluster_id)
            .ok_or(ClusterError::UnknownCluster(cluster_id))?;
        self.next_story_id += 1;
        for id in cluster.group.member_ids() {
            self.placement.insert(id, Placement::Story(story_id));
        }
        let story = Story {
            story_id,
            origin_cluster: cluster_id,
            instantiated_at: arrival_time,
            group: cluster.group,
        };
        Ok(self.stories.entry(story_id).or_insert(story))
    }

    /// Pending clusters idle for longer than `pending_ttl` at `now`.
    pub fn expirable(&self, now: Timestamp) -> Vec<ClusterId> {
        self.pending
            .values()
            .filter(|c| now.saturating_sub(c.group.last_arrival()) > self.cfg.pending_ttl)
            .map(|c| c.cluster_id)
            .collect()
    }

    /// Drops a pending cluster and its articles from live state, returning
    /// the member ids.
    pub fn expire(&mut self, cluster_id: ClusterId) -> Result<Vec<ArticleId>, ClusterError> {
        let cluster = self
            .pending
            .remove(&cluster_id)
            .ok_or(ClusterError::UnknownCluster(cluster_id))?;
        let ids: Vec<ArticleId> = cluster.group.member_ids().collect();
        for id in &ids {
            self.placement.remove(id);
            self.articles.remove(id);
        }
        Ok(ids)
    }

    /// Runs removal for every expirable cluster; returns their ids.
    pub fn expire_pending(&mut self, now: Timestamp) -> Vec<ClusterId> {
        let ids = self.expirable(now);
        for &id in &ids {
            self.expire(id).expect("expirable cluster exists");
        }
        ids
    }

    /// Scores, places and (when the gates pass) instantiates in one step.
    pub fn assign_article(&mut self, article: Article, vector: Vector) -> Result<AssignOutcome, ClusterError> {
        let id = article.id;
        let published_at = article.published_at;
        if self.placement.contains_key(&id) || self.articles.contains_key(&id) {
            return Err(ClusterError::DuplicateArticle(id));
        }
        self.insert_article(article, vector)?;
        let decision = self.decide(id)?;
        let mut instantiated = None;
        match decision {
            AssignmentDecision::JoinStory { story_id, .. } => self.join_story(story_id, id)?,
            AssignmentDecision::JoinPending { cluster_id, .. } => {
                self.join_pending(cluster_id, id)?;
                if self.check_instantiation(cluster_id)?.instantiate {
                    let story_id = self.next_story_id;
                    self.instantiate(cluster_id, story_id, published_at)?;
                    instantiated = Some(story_id);
                }
            }
            AssignmentDecision::NewPending { cluster_id, .. } => {
                self.create_pending(cluster_id)?;
                self.join_pending(cluster_id, id)?;
                if self.check_instantiation(cluster_id)?.instantiate {
                    let story_id = self.next_story_id;
                    self.instantiate(cluster_id, story_id, published_at)?;
                    instantiated = Some(story_id);
                }
            }
        }
        Ok(AssignOutcome {
            decision,
            instantiated,
        })
    }

    /// `1 - max cosine` between the article and the story's members,
    /// excluding the article itself.
    pub fn novelty(&self, vector: &Vector, story_id: StoryId, exclude: Option<ArticleId>) -> Result<f64, ClusterError> {
        let story = self
            .stories
            .get(&story_id)
            .ok_or(ClusterError::UnknownStory(story_id))?;
        let members = story
            .group
            .member_ids()
            .filter(|&id| Some(id) != exclude)
            .filter_map(|id| self.articles.get(&id).map(|l| &l.vector));
        novelty_score(vector, members)
    }

    /// Stories by `sources * ln(1 + articles) * exp(-(now - last_updated) / tau)`,
    /// descending, ties to the lower id.
    pub fn rank_stories(&self, now: Timestamp) -> Vec<(StoryId, f64)> {
        let mut ranked: Vec<(StoryId, f64)> = self
            .stories
            .values()
            .map(|s| {
                (
                    s.story_id,
                    rank_score(
                        s.group.source_set().len(),
                        s.group.len(),
                        (now - s.last_updated()).max(0) as f64,
                        self.cfg.tau,
                    ),
                )
            })
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

pub fn check_instantiation(group: &Group, cfg: &MatchConfig) -> InstantiationVerdict {
    let articles = group.len();
    let sources = group.source_set().len();
    let coherence = group.coherence();
    InstantiationVerdict {
        instantiate: articles >= cfg.min_articles
            && sources >= cfg.min_sources
            && coherence >= cfg.min_coherence,
        articles,
        sources,
        coherence,
    }
}

pub fn rank_score(sources: usize, articles: usize, idle: f64, tau: f64) -> f64 {
    sources as f64 * (1.0 + articles as f64).ln() * (-idle / tau).exp()
}

/// `1 - max cosine(article, member)`, clamped to [0, 1]. No members scores 1.
pub fn novelty_score<'a>(
    vector: &Vector,
    members: impl IntoIterator<Item = &'a Vector>,
) -> Result<f64, ClusterError> {
    let mut best = f64::NEG_INFINITY;
    for m in members {
        best = best.max(cosine(vector, m)?);
    }
    if best == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    Ok((1.0 - best).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{hash_embed, EmbedConfig};

    const DIM: usize = 8;

    fn basis(i: usize) -> Vector {
        let mut v = vec![0.0; DIM];
        v[i] = 1.0;
        Vector::new(v)
    }

    fn article(id: ArticleId, source: &str, published_at: Timestamp, entities: &[&str]) -> Article {
        Article {
            claims: vec![],
            entities: entities.iter().map(|s| s.to_string()).collect(),
            external_id: format!("e{id}"),
            fetched_at: published_at,
            id,
            language: String::new(),
            norm_body: String::new(),
            norm_title: format!("t{id}"),
            published_at,
            source_id: source.into(),
            url: String::new(),
        }
    }

    fn profile(items: &[&str]) -> BTreeMap<String, u32> {
        items.iter().map(|s| (s.to_string(), 1)).collect()
    }

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn proximity_values() {
        let tau = 86_400.0;
        assert_eq!(temporal_proximity(0.0, tau), 1.0);
        assert!((temporal_proximity(tau, tau) - 0.367879).abs() < 1e-6);
        assert!((temporal_proximity(3.0 * tau, tau) - 0.049787).abs() < 1e-6);
    }

    #[test]
    fn overlap_values() {
        assert_eq!(entity_overlap(&strings(&["x", "y"]), &profile(&["x", "y"])), 1.0);
        assert!((entity_overlap(&strings(&["x", "y"]), &profile(&["y", "z"])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(entity_overlap(&[], &BTreeMap::new()), 0.0);
    }

    fn state_with(members: &[(ArticleId, &str, Timestamp, Vector, &[&str])]) -> EngineState {
        let mut st = EngineState::new(MatchConfig::default(), DIM);
        st.create_pending(1).unwrap();
        for (id, src, t, v, ents) in members {
            st.insert_article(article(*id, src, *t, ents), v.clone()).unwrap();
            st.join_pending(1, *id).unwrap();
        }
        st
    }

    #[test]
    fn match_score_identical_fresh_target_is_one() {
        let st = state_with(&[(1, "a", 100, basis(0), &["x"])]);
        let g = &st.pending()[&1].group;
        let s = match_score(&basis(0), &strings(&["x"]), 100, g, &st.cfg).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn match_score_weighted_example() {
        // cosine 0.8, proximity 0.5, overlap 0.4.
        let target = Vector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let st = state_with(&[(1, "a", 0, target, &["a", "b", "c", "d"])]);
        let g = &st.pending()[&1].group;
        let v = Vector::new(vec![0.8, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let dt = (86_400.0f64 * std::f64::consts::LN_2).round() as i64;
        // |{a, b, e} ∩ {a, b, c, d}| = 2, |∪| = 5.
        let entities = strings(&["a", "b", "e"]);
        let s = match_score(&v, &entities, dt, g, &st.cfg).unwrap();
        let expected = 0.6 * 0.8 + 0.25 * temporal_proximity(dt as f64, 86_400.0) + 0.15 * 0.4;
        assert!((s - expected).abs() < 1e-7);
        assert!((s - 0.665).abs() < 1e-5);
    }

    #[test]
    fn match_score_unrelated_is_near_zero() {
        let st = state_with(&[(1, "a", 0, basis(0), &["x"])]);
        let g = &st.pending()[&1].group;
        let s = match_score(&basis(1), &[], 100 * 86_400, g, &st.cfg).unwrap();
        assert!(s.abs() < 1e-9);
    }

    #[test]
    fn first_article_seeds_pending() {
        let mut st = EngineState::new(MatchConfig::default(), DIM);
        let out = st.assign_article(article(1, "a", 0, &[]), basis(0)).unwrap();
        assert_eq!(
            out.decision,
            AssignmentDecision::NewPending {
                cluster_id: 1,
                best: None
            }
        );
        assert_eq!(st.pending()[&1].group.len(), 1);
        assert_eq!(st.placement(1), Some(Placement::Pending(1)));
    }

    #[test]
    fn near_identical_articles_share_a_cluster() {
        let cfg = EmbedConfig::default();
        let mut st = EngineState::new(MatchConfig::default(), cfg.dim);
        let v1 = hash_embed("harbor bridge collapses in port aldren during morning rush", &cfg).unwrap();
        let v2 = hash_embed("harbor bridge collapses in port aldren during the morning rush", &cfg).unwrap();
        st.assign_article(article(1, "a", 0, &["port aldren"]), v1).unwrap();
        let out = st.assign_article(article(2, "b", 600, &["port aldren"]), v2).unwrap();
        assert!(matches!(out.decision, AssignmentDecision::JoinPending { cluster_id: 1, .. }));
    }

    #[test]
    fn ties_break_to_lowest_id_and_stories_first() {
        let mut cfg = MatchConfig::default();
        cfg.min_articles = 2;
        cfg.min_sources = 1;
        let mut st = EngineState::new(cfg, DIM);
        // Build stories 1 and 2 with identical content.
        for (base, _) in [(10, 1), (20, 2)] {
            let c = st.next_cluster_id();
            st.create_pending(c).unwrap();
            for k in 0..2 {
                st.insert_article(article(base + k, "s", 0, &[]), basis(0)).unwrap();
                st.join_pending(c, base + k).unwrap();
            }
            let sid = st.next_story_id();
            st.instantiate(c, sid, 0).unwrap();
        }
        // A pending cluster with the same content.
        let c = st.next_cluster_id();
        st.create_pending(c).unwrap();
        st.insert_article(article(30, "s", 0, &[]), basis(0)).unwrap();
        st.join_pending(c, 30).unwrap();

        st.insert_article(article(40, "s", 0, &[]), basis(0)).unwrap();
        match st.decide(40).unwrap() {
            AssignmentDecision::JoinStory { story_id, .. } => assert_eq!(story_id, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn centroid_single_and_orthogonal() {
        let st = state_with(&[(1, "a", 0, basis(0), &[])]);
        assert_eq!(st.pending()[&1].group.centroid().unwrap(), &basis(0));
        let st = state_with(&[(1, "a", 0, basis(0), &[]), (2, "b", 0, basis(1), &[])]);
        let c = st.pending()[&1].group.centroid().unwrap().as_slice().to_vec();
        let r = std::f32::consts::FRAC_1_SQRT_2;
        assert!((c[0] - r).abs() < 1e-7 && (c[1] - r).abs() < 1e-7);
    }

    #[test]
    fn centroid_collapses_same_source_duplicates() {
        let u = basis(0);
        let w = basis(2);
        let a = state_with(&[(1, "A", 0, u.clone(), &[]), (2, "A", 0, u.clone(), &[]), (3, "B", 0, w.clone(), &[])]);
        let b = state_with(&[(1, "A", 0, u, &[]), (3, "B", 0, w, &[])]);
        assert_eq!(
            a.pending()[&1].group.centroid().unwrap(),
            b.pending()[&1].group.centroid().unwrap()
        );
    }

    #[test]
    fn heavy_source_does_not_dominate() {
        let tilt = Vector::normalized(&[1.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let rows: Vec<(ArticleId, &str, Timestamp, Vector, &[&str])> = vec![
            (1, "A", 0, basis(0), &[]),
            (2, "A", 0, tilt.clone(), &[]),
            (3, "B", 0, basis(1), &[]),
        ];
        let st = state_with(&rows);
        let c = st.pending()[&1].group.centroid().unwrap().as_slice().to_vec();
        // Source A's mean and source B's vector carry equal weight.
        let t = tilt.as_slice();
        let a = [(1.0 + f64::from(t[0])) / 2.0, f64::from(t[1]) / 2.0];
        let expected = Vector::normalized(&[a[0], a[1] + 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        for (x, y) in c.iter().zip(expected.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(c[1] > c[0]);
    }

    #[test]
    fn coherence_matches_pairwise() {
        let cfg = EmbedConfig::default();
        let texts = ["alpha beta gamma", "alpha beta delta", "omega theta kappa", "alpha gamma kappa"];
        let vs: Vec<Vector> = texts.iter().map(|t| hash_embed(t, &cfg).unwrap()).collect();
        let mut st = EngineState::new(MatchConfig::default(), cfg.dim);
        st.create_pending(1).unwrap();
        for (i, v) in vs.iter().enumerate() {
            st.insert_article(article(i as u64 + 1, "s", 0, &[]), v.clone()).unwrap();
            st.join_pending(1, i as u64 + 1).unwrap();
        }
        let mut total = 0.0;
        let mut pairs = 0.0;
        for i in 0..vs.len() {
            for j in 0..vs.len() {
                if i != j {
                    total += cosine(&vs[i], &vs[j]).unwrap();
                    pairs += 1.0;
                }
            }
        }
        assert!((st.pending()[&1].group.coherence() - total / pairs).abs() < 1e-9);
    }

    #[test]
    fn instantiation_gates() {
        let cfg = MatchConfig::default();
        // 4 articles, 4 sources, identical vectors: article count fails.
        let st = state_with(&[
            (1, "a", 0, basis(0), &[]),
            (2, "b", 0, basis(0), &[]),
            (3, "c", 0, basis(0), &[]),
            (4, "d", 0, basis(0), &[]),
        ]);
        assert!(!check_instantiation(&st.pending()[&1].group, &cfg).instantiate);
        let st = state_with(&[
            (1, "a", 0, basis(0), &[]),
            (2, "b", 0, basis(0), &[]),
            (3, "c", 0, basis(0), &[]),
            (4, "d", 0, basis(0), &[]),
            (5, "e", 0, basis(0), &[]),
        ]);
        let v = check_instantiation(&st.pending()[&1].group, &cfg);
        assert!(v.instantiate && (v.coherence - 1.0).abs() < 1e-9);
        let st = state_with(&[
            (1, "a", 0, basis(0), &[]),
            (2, "b", 0, basis(1), &[]),
            (3, "c", 0, basis(2), &[]),
            (4, "d", 0, basis(3), &[]),
            (5, "e", 0, basis(4), &[]),
        ]);
        let v = check_instantiation(&st.pending()[&1].group, &cfg);
        assert!(!v.instantiate && v.coherence.abs() < 1e-12);
    }

    #[test]
    fn instantiation_is_retroactive_and_ordered() {
        let mut st = state_with(&[
            (1, "a", 300, basis(0), &[]),
            (2, "b", 100, basis(0), &[]),
            (3, "c", 200, basis(0), &[]),
        ]);
        let story = st.instantiate(1, 1, 400).unwrap();
        assert_eq!(story.group.member_ids().collect::<Vec<_>>(), vec![2, 3, 1]);
        assert_eq!(story.created_at(), 100);
        assert_eq!(story.instantiated_at, 400);
        assert!(st.pending().is_empty());
        assert_eq!(st.placement(1), Some(Placement::Story(1)));
    }

    #[test]
    fn novelty_values() {
        let mut st = state_with(&[(1, "a", 0, basis(0), &[]), (2, "b", 0, basis(1), &[])]);
        st.instantiate(1, 1, 0).unwrap();
        assert_eq!(st.novelty(&basis(0), 1, None).unwrap(), 0.0);
        assert_eq!(st.novelty(&basis(2), 1, None).unwrap(), 1.0);
        let v = Vector::new(vec![0.75, (1.0f32 - 0.5625).sqrt(), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((st.novelty(&v, 1, None).unwrap() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn rank_examples() {
        assert!((rank_score(7, 13, 0.0, 86_400.0) - 18.474).abs() < 1e-3);
        assert!(rank_score(4, 13, 0.0, 1.0) > rank_score(3, 13, 0.0, 1.0));
        assert!(rank_score(7, 13, 100.0 * 86_400.0, 86_400.0) < rank_score(1, 1, 0.0, 86_400.0));
    }

    #[test]
    fn rank_orders_by_score_then_id() {
        let mut cfg = MatchConfig::default();
        cfg.min_articles = 2;
        cfg.min_sources = 1;
        let mut st = EngineState::new(cfg, DIM);
        let mut next_article = 1;
        for sources in [1, 2, 2] {
            let c = st.next_cluster_id();
            st.create_pending(c).unwrap();
            for k in 0..2 {
                let src = if k < sources { format!("s{k}") } else { "s0".into() };
                st.insert_article(article(next_article, &src, 0, &[]), basis(k)).unwrap();
                st.join_pending(c, next_article).unwrap();
                next_article += 1;
            }
            let sid = st.next_story_id();
            st.instantiate(c, sid, 0).unwrap();
        }
        let ranked: Vec<StoryId> = st.rank_stories(0).into_iter().map(|(id, _)| id).collect();
        assert_eq!(ranked, vec![2, 3, 1]);
    }

    #[test]
    fn expiry_threshold() {
        let ttl = MatchConfig::default().pending_ttl;
        let mut st = state_with(&[(1, "a", 0, basis(0), &[])]);
        assert!(st.expire_pending(ttl - 1).is_empty());
        assert!(st.expire_pending(ttl).is_empty());
        assert_eq!(st.expire_pending(ttl + 1), vec![1]);
        assert!(st.article(1).is_none());

        let mut cfg = MatchConfig::default();
        cfg.min_articles = 2;
        cfg.min_sources = 1;
        let mut st = EngineState::new(cfg, DIM);
        st.create_pending(1).unwrap();
        for id in 1..=2 {
            st.insert_article(article(id, "a", 0, &[]), basis(0)).unwrap();
            st.join_pending(1, id).unwrap();
        }
        st.instantiate(1, 1, 0).unwrap();
        assert!(st.expire_pending(1_000 * ttl).is_empty());
        assert_eq!(st.stories().len(), 1);
    }

    #[test]
    fn duplicate_article_rejected() {
        let mut st = EngineState::new(MatchConfig::default(), DIM);
        st.assign_article(article(1, "a", 0, &[]), basis(0)).unwrap();
        assert_eq!(
            st.assign_article(article(1, "a", 0, &[]), basis(0)),
            Err(ClusterError::DuplicateArticle(1))
        );
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::default().validate().is_ok());
        let mut c = MatchConfig::default();
        c.alpha = 0.7;
        assert!(c.validate().is_err());
        let mut c = MatchConfig::default();
        c.min_articles = 1;
        assert!(c.validate().is_err());
        let mut c = MatchConfig::default();
        c.theta_join = 1.0;
        assert!(c.validate().is_err());
    }
}
