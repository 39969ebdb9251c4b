//! Browser bindings for the demo page in `www/`. Every export takes plain
//! values and returns a JSON string; the `*_json` functions hold the logic and
//! run natively too.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use storydesk_core::corpus::{self, BCubed, CorpusSpec, NoisePolicy};
use storydesk_core::embed::{cosine, hash_embed, EmbedConfig, HashEmbedder};
use storydesk_core::memory::{EventKind, EventPayload, MemoryLog};
use storydesk_core::model::normalize_text;
use storydesk_core::pipeline::StoryView;
use storydesk_core::{Config, Desk, Signal};

#[derive(Serialize)]
struct Comparison {
    cosine: f64,
    normalized: [String; 2],
}

pub fn compare_json(a: &str, b: &str) -> Result<String, String> {
    let cfg = EmbedConfig::default();
    let (na, nb) = (normalize_text(a), normalize_text(b));
    let va = hash_embed(&na, &cfg).map_err(|e| e.to_string())?;
    let vb = hash_embed(&nb, &cfg).map_err(|e| e.to_string())?;
    let out = Comparison {
        cosine: cosine(&va, &vb).map_err(|e| e.to_string())?,
        normalized: [na, nb],
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}

#[derive(Serialize)]
struct Step {
    external_id: String,
    source_id: String,
    published_at: i64,
    events: Vec<EventKind>,
    /// Where the article ended up right after it arrived.
    placement: String,
    score: Option<f64>,
}

#[derive(Serialize)]
struct Replay {
    steps: Vec<Step>,
    stories: Vec<StoryView>,
    signals: Vec<Signal>,
    digest: String,
}

/// Ingests the three-day replay corpus article by article with the given
/// join threshold.
pub fn replay_table1_json(theta_join: f64) -> Result<String, String> {
    let mut config = Config::default();
    config.matching.theta_join = theta_join;
    let mut desk = Desk::new(config).map_err(|e| e.to_string())?;
    let mut log = MemoryLog::new();
    let embedder = HashEmbedder::default();
    let mut steps = Vec::new();
    for raw in corpus::table1_corpus().articles {
        let events = desk
            .process_one(&raw, None, &embedder, &mut log)
            .map_err(|e| e.to_string())?;
        let mut placement = String::new();
        let mut score = None;
        for e in &events {
            match &e.payload {
                EventPayload::AssignedToPending { cluster_id, score: s, .. } => {
                    placement = format!("pending-{cluster_id}");
                    score = *s;
                }
                EventPayload::AssignedToStory { story_id, score: s, .. } => {
                    placement = format!("story-{story_id}");
                    score = Some(*s);
                }
                EventPayload::StoryInstantiated { story_id, .. } => placement = format!("story-{story_id}"),
                _ => {}
            }
        }
        steps.push(Step {
            external_id: raw.external_id,
            source_id: raw.source_id,
            published_at: raw.published_at,
            events: events.iter().map(|e| e.kind()).collect(),
            placement,
            score,
        });
    }
    let out = Replay {
        steps,
        stories: desk.ranked_stories(),
        signals: desk.signals(),
        digest: desk.digest(),
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}

#[derive(Serialize)]
struct Clustering {
    articles: usize,
    stories: usize,
    pending: usize,
    events: u64,
    ari: f64,
    bcubed: BCubed,
    digest: String,
}

/// Generates a corpus, clusters it and scores the result against its truth.
pub fn cluster_synthetic_json(
    n_stories: usize,
    articles_per_story: u32,
    n_sources: usize,
    noise_fraction: f64,
    seed: u64,
) -> Result<String, String> {
    let mut spec = CorpusSpec::new(n_stories, articles_per_story, n_sources, seed);
    spec.noise_fraction = noise_fraction;
    let c = corpus::generate_corpus(&spec).map_err(|e| e.to_string())?;
    let mut desk = Desk::new(Config::default()).map_err(|e| e.to_string())?;
    let mut log = MemoryLog::new();
    let embedder = HashEmbedder::default();
    for raw in &c.articles {
        desk.process_one(raw, None, &embedder, &mut log)
            .map_err(|e| e.to_string())?;
    }
    let labels = desk.labels();
    let out = Clustering {
        articles: c.articles.len(),
        stories: desk.engine().stories().len(),
        pending: desk.engine().pending().len(),
        events: desk.last_seq(),
        ari: corpus::eval_ari(&labels, &c.truth, NoisePolicy::Singletons).map_err(|e| e.to_string())?,
        bcubed: corpus::eval_bcubed(&labels, &c.truth, NoisePolicy::Singletons).map_err(|e| e.to_string())?,
        digest: desk.digest(),
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}

#[wasm_bindgen]
pub fn compare(a: &str, b: &str) -> Result<String, JsError> {
    compare_json(a, b).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn replay_table1(theta_join: f64) -> Result<String, JsError> {
    replay_table1_json(theta_join).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cluster_synthetic(
    n_stories: usize,
    articles_per_story: u32,
    n_sources: usize,
    noise_fraction: f64,
    seed: u64,
) -> Result<String, JsError> {
    cluster_synthetic_json(n_stories, articles_per_story, n_sources, noise_fraction, seed)
        .map_err(|e| JsError::new(&e))
}
