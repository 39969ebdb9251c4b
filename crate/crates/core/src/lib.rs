//! Deterministic story tracking over timestamped news streams.
//!
//! Articles are validated and normalized ([`model`]), embedded with a
//! feature-hashing vectorizer ([`embed`]), and assigned online to persistent
//! stories or pending clusters ([`cluster`]). Claims carried by story members
//! are compared across sources to surface convergence, divergence, delayed
//! confirmation and narrative drift ([`investigate`]). Every decision is
//! written to an append-only event log before it is applied, so any state can
//! be rebuilt by replay ([`memory`]). [`pipeline`] wires the stages together
//! and [`corpus`] provides synthetic corpora with ground truth plus the
//! clustering-quality metrics used to evaluate them.

pub mod cluster;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod investigate;
pub mod memory;
pub mod model;
pub mod pipeline;

pub use cluster::{AssignmentDecision, EngineState, MatchConfig, PendingCluster, Story};
pub use config::{Config, ConfigError};
pub use embed::{cosine, hash_embed, EmbedConfig, Vector};
pub use investigate::{InvestigateConfig, Signal, SignalKind};
pub use memory::{Event, EventPayload, Snapshot, StateDir};
pub use model::{normalize_text, parse_jsonl_record, validate_article, Article, Claim, RawArticle};
pub use pipeline::{Desk, PipelineError, RunSummary};

/// UTC timestamp in whole seconds since the Unix epoch.
pub type Timestamp = i64;
