//! Synthetic corpora with ground truth, the three-day accumulation replay,
//! and external clustering-quality metrics (ARI and B-cubed).
//!
//! Generated stories are lexically separated: each draws its topic tokens
//! from its own pseudo-word vocabulary, mixed with filler words shared by
//! every story. Articles of a story arrive sparsely at first and then in a
//! denser wave, shaped by `burstiness`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{RawArticle, RawClaim};
use crate::Timestamp;

pub const NOISE: &str = "NOISE";

/// 2026-01-01T00:00:00Z.
pub const DEFAULT_START: Timestamp = 1_767_225_600;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("labelings cover different articles: {0}")]
    UniverseMismatch(String),
    #[error("line {line}: {reason}")]
    BadLabelLine { line: usize, reason: String },
}

/// A fixed count or an inclusive `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArticleCount {
    Fixed(u32),
    Range([u32; 2]),
}

impl ArticleCount {
    fn bounds(&self) -> (u32, u32) {
        match *self {
            Self::Fixed(n) => (n, n),
            Self::Range([a, b]) => (a, b),
        }
    }
}

fn default_claim_rate() -> f64 {
    0.3
}

fn default_disagreement() -> f64 {
    0.2
}

fn default_start() -> Timestamp {
    DEFAULT_START
}

fn default_story_span() -> i64 {
    2 * 86_400
}

fn default_sources_per_story() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_stories: usize,
    pub articles_per_story: ArticleCount,
    pub n_sources: usize,
    #[serde(default)]
    pub noise_fraction: f64,
    pub vocab_per_story: usize,
    /// Window in seconds over which story start times are spread.
    pub time_span: i64,
    #[serde(default)]
    pub burstiness: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_time: Timestamp,
    /// Seconds from a story's first to its last article (at most).
    #[serde(default = "default_story_span")]
    pub story_span: i64,
    #[serde(default = "default_sources_per_story")]
    pub sources_per_story: usize,
    /// Probability that an article carries a claim.
    #[serde(default = "default_claim_rate")]
    pub claim_rate: f64,
    /// Probability that a planted claim disagrees with its story's value.
    #[serde(default = "default_disagreement")]
    pub claim_disagreement: f64,
}

impl CorpusSpec {
    /// A spec with the given shape and the remaining knobs at their defaults.
    pub fn new(n_stories: usize, articles_per_story: u32, n_sources: usize, seed: u64) -> Self {
        Self {
            n_stories,
            articles_per_story: ArticleCount::Fixed(articles_per_story),
            n_sources,
            noise_fraction: 0.0,
            vocab_per_story: 20,
            time_span: 7 * 86_400,
            burstiness: 2.0,
            seed,
            start_time: DEFAULT_START,
            story_span: default_story_span(),
            sources_per_story: default_sources_per_story(),
            claim_rate: default_claim_rate(),
            claim_disagreement: default_disagreement(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_string()));
        if self.n_stories < 1 {
            return bad("n_stories must be at least 1");
        }
        if self.n_sources < 1 {
            return bad("n_sources must be at least 1");
        }
        let (lo, hi) = self.articles_per_story.bounds();
        if lo < 1 || lo > hi {
            return bad("articles_per_story must be positive with min <= max");
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return bad("noise_fraction must lie in [0, 1]");
        }
        if self.vocab_per_story < 1 {
            return bad("vocab_per_story must be at least 1");
        }
        if self.time_span < 0 || self.story_span < 0 {
            return bad("time spans must be non-negative");
        }
        if !(self.burstiness >= 0.0) || !self.burstiness.is_finite() {
            return bad("burstiness must be finite and non-negative");
        }
        if self.sources_per_story < 1 {
            return bad("sources_per_story must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.claim_rate) || !(0.0..=1.0).contains(&self.claim_disagreement) {
            return bad("claim rates must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Article external id to truth label (`story-N` or `NOISE`).
pub type Labeling = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelLine {
    external_id: String,
    label: String,
}

/// A generated stream plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub articles: Vec<RawArticle>,
    pub truth: Labeling,
}

impl Corpus {
    pub fn articles_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.articles {
            out.push_str(&serde_json::to_string(a).expect("article serializes"));
            out.push('\n');
        }
        out
    }

    /// Truth lines in stream order.
    pub fn truth_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.articles {
            let line = LabelLine {
                external_id: a.external_id.clone(),
                label: self.truth[&a.external_id].clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("label serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn labels_to_jsonl(labels: &Labeling) -> String {
    let mut out = String::new();
    for (external_id, label) in labels {
        let line = LabelLine {
            external_id: external_id.clone(),
            label: label.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("label serializes"));
        out.push('\n');
    }
    out
}

/// Reads `{"external_id", "label"}` lines. Blank lines are skipped.
pub fn parse_labels(text: &str) -> Result<Labeling, CorpusError> {
    let mut out = Labeling::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: LabelLine = serde_json::from_str(line).map_err(|e| CorpusError::BadLabelLine {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if out.insert(l.external_id.clone(), l.label).is_some() {
            return Err(CorpusError::BadLabelLine {
                line: i + 1,
                reason: format!("duplicate external_id {:?}", l.external_id),
            });
        }
    }
    Ok(out)
}

// Draws are made through fixed-width integers so a seed yields the same
// corpus on 32- and 64-bit targets.
fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    rng.gen_range(0..n as u64) as usize
}

fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const FILLER: &[&str] = &[
    "the", "said", "officials", "report", "according", "on", "after", "new", "latest", "update", "local", "sources",
    "with", "from", "today", "were", "has", "been", "more", "than", "about", "told", "reporters", "statement", "week",
    "also", "some", "while", "other", "early",
];

const PREDICATES: &[&str] = &["death toll", "people evacuated", "damage estimate", "arrests made", "homes affected"];

/// Globally unique pseudo-words, so vocabularies never overlap.
struct WordMint {
    used: BTreeSet<String>,
}

impl WordMint {
    fn new() -> Self {
        Self {
            used: FILLER.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = 2 + below(rng, 2);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(CONSONANTS[below(rng, CONSONANTS.len())] as char);
                w.push(VOWELS[below(rng, VOWELS.len())] as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct StoryPlan {
    vocab: Vec<String>,
    entities: Vec<String>,
    sources: Vec<usize>,
    claims: Vec<(String, String, Vec<String>)>,
    start: Timestamp,
}

fn compose(rng: &mut ChaCha8Rng, vocab: &[String], n: usize, topic_share: f64) -> String {
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.gen::<f64>() < topic_share {
            words.push(vocab[below(rng, vocab.len())].as_str());
        } else {
            words.push(FILLER[below(rng, FILLER.len())]);
        }
    }
    words.join(" ")
}

struct Draft {
    published_at: Timestamp,
    fetch_lag: i64,
    source: usize,
    title: String,
    body: String,
    entities: Vec<String>,
    claims: Vec<RawClaim>,
    label: String,
}

const TITLE_WORDS: usize = 8;
const BODY_WORDS: usize = 40;
const TITLE_TOPIC_SHARE: f64 = 0.75;
const BODY_TOPIC_SHARE: f64 = 0.75;

/// Generates a corpus. Equal specs give byte-identical output.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mint = WordMint::new();
    let (lo, hi) = spec.articles_per_story.bounds();

    let breadth = spec.sources_per_story.min(spec.n_sources);
    let mut plans = Vec::with_capacity(spec.n_stories);
    let mut counts = Vec::with_capacity(spec.n_stories);
    for _ in 0..spec.n_stories {
        let vocab: Vec<String> = (0..spec.vocab_per_story).map(|_| mint.word(&mut rng)).collect();
        let entities: Vec<String> = (0..3)
            .map(|_| format!("{} {}", capitalize(&mint.word(&mut rng)), capitalize(&mint.word(&mut rng))))
            .collect();
        let mut pool: Vec<usize> = (0..spec.n_sources).collect();
        shuffle(&mut rng, &mut pool);
        pool.truncate(breadth);
        let claims = (0..2)
            .map(|k| {
                let predicate = PREDICATES[below(&mut rng, PREDICATES.len())].to_string();
                let base = 10 + below(&mut rng, 490);
                let values = vec![base.to_string(), (base + 1 + below(&mut rng, 20)).to_string()];
                (entities[k].clone(), predicate, values)
            })
            .collect();
        let latest = spec.time_span.saturating_sub(spec.story_span).max(0);
        let start = spec.start_time + rng.gen_range(0..=latest as u64) as i64;
        plans.push(StoryPlan {
            vocab,
            entities,
            sources: pool,
            claims,
            start,
        });
        counts.push(lo + rng.gen_range(0..=(hi - lo) as u64) as u32);
    }

    // Noise replaces story articles so the fraction is of the emitted total.
    let total: u32 = counts.iter().sum();
    let n_noise = (spec.noise_fraction * f64::from(total)).round() as u32;
    let mut slots: Vec<(usize, u32)> = counts
        .iter()
        .enumerate()
        .flat_map(|(s, &c)| (0..c).map(move |j| (s, j)))
        .collect();
    shuffle(&mut rng, &mut slots);
    let noise_slots: BTreeSet<(usize, u32)> = slots[..n_noise as usize].iter().copied().collect();

    let mut drafts = Vec::with_capacity(total as usize);
    for (s, plan) in plans.iter().enumerate() {
        let mut order = plan.sources.clone();
        shuffle(&mut rng, &mut order);
        for j in 0..counts[s] {
            // Density grows as u^burstiness over the story's span.
            let u: f64 = rng.gen::<f64>().powf(1.0 / (1.0 + spec.burstiness));
            let published_at = plan.start + (u * spec.story_span as f64) as i64;
            let fetch_lag = 60 + rng.gen_range(0..1_800u64) as i64;
            if noise_slots.contains(&(s, j)) {
                let vocab: Vec<String> = (0..spec.vocab_per_story).map(|_| mint.word(&mut rng)).collect();
                let entity = format!("{} {}", capitalize(&mint.word(&mut rng)), capitalize(&mint.word(&mut rng)));
                drafts.push(Draft {
                    published_at,
                    fetch_lag,
                    source: below(&mut rng, spec.n_sources),
                    title: compose(&mut rng, &vocab, TITLE_WORDS, TITLE_TOPIC_SHARE),
                    body: compose(&mut rng, &vocab, BODY_WORDS, BODY_TOPIC_SHARE),
                    entities: vec![entity],
                    claims: vec![],
                    label: NOISE.to_string(),
                });
                continue;
            }
            let source = if (j as usize) < order.len() {
                order[j as usize]
            } else {
                order[below(&mut rng, order.len())]
            };
            let mut entities: Vec<String> = plan.entities.iter().filter(|_| rng.gen::<f64>() < 0.7).cloned().collect();
            if entities.is_empty() {
                entities.push(plan.entities[0].clone());
            }
            let mut claims = Vec::new();
            if rng.gen::<f64>() < spec.claim_rate {
                let (subject, predicate, values) = &plan.claims[below(&mut rng, plan.claims.len())];
                let value = if rng.gen::<f64>() < spec.claim_disagreement {
                    &values[1]
                } else {
                    &values[0]
                };
                claims.push(RawClaim {
                    subject_entities: vec![subject.clone()],
                    predicate: predicate.clone(),
                    value: value.clone(),
                    asserted_at: None,
                });
            }
            drafts.push(Draft {
                published_at,
                fetch_lag,
                source,
                title: compose(&mut rng, &plan.vocab, TITLE_WORDS, TITLE_TOPIC_SHARE),
                body: compose(&mut rng, &plan.vocab, BODY_WORDS, BODY_TOPIC_SHARE),
                entities,
                claims,
                label: format!("story-{}", s + 1),
            });
        }
    }
    // Stable sort keeps generation order among equal timestamps.
    drafts.sort_by_key(|d| d.published_at);

    let width = spec.n_sources.to_string().len().max(2);
    let mut articles = Vec::with_capacity(drafts.len());
    let mut truth = Labeling::new();
    for (n, d) in drafts.into_iter().enumerate() {
        let external_id = format!("g{}-{:06}", spec.seed, n + 1);
        truth.insert(external_id.clone(), d.label);
        articles.push(RawArticle {
            url: format!("https://example.test/{external_id}"),
            external_id,
            source_id: format!("src-{:0width$}", d.source + 1),
            title: d.title,
            body: d.body,
            published_at: d.published_at,
            fetched_at: d.published_at + d.fetch_lag,
            language: "en".into(),
            claims: d.claims,
            entities: d.entities,
        });
    }
    Ok(Corpus { articles, truth })
}

/// 2026-01-18T00:00:00Z, the first day of the three-day replay.
pub const TABLE1_DAY1: Timestamp = 1_768_694_400;
pub const TABLE1_LABEL: &str = "story-1";

const HOUR: i64 = 3_600;
const DAY: i64 = 86_400;

const T1_CORE: &str = "The Aldren harbor bridge collapsed into the Vessel River in Port Aldren on Sunday morning, \
and rescue crews searched the water near the harbor bridge for survivors as officials closed the port.";

/// One arrival of the replay: (day, hour, source, lede, claims).
type T1Row = (i64, i64, &'static str, &'static str, &'static [(&'static str, &'static str)]);

const T1_ROWS: &[T1Row] = &[
    (0, 8, "S1", "Harbor bridge collapses in Port Aldren", &[("collapse cause", "structural failure")]),
    (0, 10, "S2", "Port Aldren harbor bridge collapse: rescue under way", &[("collapse cause", "structural failure"), ("people evacuated", "400")]),
    (0, 17, "S3", "Harbor bridge collapse in Port Aldren forces evacuations", &[("people evacuated", "400")]),
    (1, 9, "S2", "Port Aldren harbor bridge collapse: divers resume search", &[]),
    (1, 13, "S3", "Harbor bridge collapse in Port Aldren: death toll rises", &[("death toll", "12")]),
    (1, 18, "S4", "Port Aldren mourns as harbor bridge collapse toll climbs", &[("death toll", "15")]),
    (2, 7, "S5", "Inquiry opens into Port Aldren harbor bridge collapse", &[]),
    (2, 8, "S1", "Harbor bridge collapse in Port Aldren: inspectors on site", &[]),
    (2, 9, "S6", "Port Aldren harbor bridge collapse disrupts shipping", &[]),
    (2, 10, "S4", "Harbor bridge collapse in Port Aldren: families wait", &[]),
    (2, 11, "S7", "Port Aldren harbor bridge collapse: engineers warned in 2024", &[]),
    (2, 13, "S5", "Harbor bridge collapse in Port Aldren: port partly reopens", &[]),
    (2, 15, "S6", "Port Aldren harbor bridge collapse: city plans temporary crossing", &[]),
];

/// The three-day accumulation replay: one story, 3 + 3 + 7 articles from a
/// fixed source schedule whose union is seven sources. Claims plant one
/// convergence, one divergence and one delayed confirmation (7 h apart).
pub fn table1_corpus() -> Corpus {
    let mut articles = Vec::with_capacity(T1_ROWS.len());
    let mut truth = Labeling::new();
    for (n, (day, hour, source, lede, claims)) in T1_ROWS.iter().enumerate() {
        let published_at = TABLE1_DAY1 + day * DAY + hour * HOUR;
        let external_id = format!("t1-{:02}", n + 1);
        truth.insert(external_id.clone(), TABLE1_LABEL.to_string());
        articles.push(RawArticle {
            url: format!("https://example.test/{external_id}"),
            external_id,
            source_id: source.to_string(),
            title: lede.to_string(),
            body: T1_CORE.to_string(),
            published_at,
            fetched_at: published_at + 300,
            language: "en".into(),
            claims: claims
                .iter()
                .map(|(predicate, value)| RawClaim {
                    subject_entities: vec!["Port Aldren".into(), "Aldren harbor bridge".into()],
                    predicate: predicate.to_string(),
                    value: value.to_string(),
                    asserted_at: None,
                })
                .collect(),
            entities: vec!["Port Aldren".into(), "Aldren harbor bridge".into(), "Vessel River".into()],
        });
    }
    Corpus { articles, truth }
}

/// How truth items labeled [`NOISE`] enter a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoisePolicy {
    /// Each noise item is its own singleton class.
    #[default]
    Singletons,
    /// Noise items are dropped from both labelings.
    Exclude,
}

/// Dense class indices for the items of two labelings, in a shared order.
fn align(predicted: &Labeling, truth: &Labeling, policy: NoisePolicy) -> Result<(Vec<usize>, Vec<usize>), CorpusError> {
    if predicted.len() != truth.len() || predicted.keys().ne(truth.keys()) {
        let missing = truth.keys().find(|k| !predicted.contains_key(*k));
        let extra = predicted.keys().find(|k| !truth.contains_key(*k));
        return Err(CorpusError::UniverseMismatch(format!(
            "first missing from prediction: {missing:?}, first unknown to truth: {extra:?}"
        )));
    }
    let mut p_ids: HashMap<&str, usize> = HashMap::new();
    let mut t_ids: HashMap<String, usize> = HashMap::new();
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for (id, tl) in truth {
        let t_key = if tl == NOISE {
            match policy {
                NoisePolicy::Exclude => continue,
                NoisePolicy::Singletons => format!("\u{0}noise:{id}"),
            }
        } else {
            tl.clone()
        };
        let n = t_ids.len();
        t.push(*t_ids.entry(t_key).or_insert(n));
        let n = p_ids.len();
        p.push(*p_ids.entry(predicted[id].as_str()).or_insert(n));
    }
    Ok((p, t))
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand Index from the contingency table. When both labelings are
/// trivial in the same way (the index cannot vary) the result is 1.
pub fn eval_ari(predicted: &Labeling, truth: &Labeling, policy: NoisePolicy) -> Result<f64, CorpusError> {
    let (p, t) = align(predicted, truth, policy)?;
    Ok(ari_from_classes(&p, &t))
}

pub fn ari_from_classes(p: &[usize], t: &[usize]) -> f64 {
    let n = p.len() as u64;
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in p.iter().zip(t) {
        *cells.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BCubed {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn eval_bcubed(predicted: &Labeling, truth: &Labeling, policy: NoisePolicy) -> Result<BCubed, CorpusError> {
    let (p, t) = align(predicted, truth, policy)?;
    Ok(bcubed_from_classes(&p, &t))
}

pub fn bcubed_from_classes(p: &[usize], t: &[usize]) -> BCubed {
    let n = p.len();
    if n == 0 {
        return BCubed {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&a, &b) in p.iter().zip(t) {
        *cells.entry((a, b)).or_default() += 1.0;
        *rows.entry(a).or_default() += 1.0;
        *cols.entry(b).or_default() += 1.0;
    }
    // Each item in cell (a, b) has that cell's size as its correct count.
    let (mut precision, mut recall) = (0.0, 0.0);
    for (&(a, b), &c) in &cells {
        precision += c * c / rows[&a];
        recall += c * c / cols[&b];
    }
    let precision = precision / n as f64;
    let recall = recall / n as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    BCubed { precision, recall, f1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{cosine, hash_embed, EmbedConfig};
    use crate::model::normalize_text;

    fn labels(pairs: &[(&str, &str)]) -> Labeling {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn ari_closed_forms() {
        let truth = labels(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
        let pred = labels(&[("a", "1"), ("b", "2"), ("c", "1"), ("d", "2")]);
        assert!((eval_ari(&pred, &truth, NoisePolicy::Singletons).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(eval_ari(&truth, &truth, NoisePolicy::Singletons).unwrap(), 1.0);
        let relabeled = labels(&[("a", "q"), ("b", "q"), ("c", "r"), ("d", "r")]);
        assert_eq!(eval_ari(&relabeled, &truth, NoisePolicy::Singletons).unwrap(), 1.0);
    }

    #[test]
    fn bcubed_closed_forms() {
        let n = 7;
        let one: Labeling = (0..n).map(|i| (format!("i{i}"), "t".to_string())).collect();
        let singles: Labeling = (0..n).map(|i| (format!("i{i}"), format!("p{i}"))).collect();
        let b = eval_bcubed(&singles, &one, NoisePolicy::Singletons).unwrap();
        assert!((b.precision - 1.0).abs() < 1e-12 && (b.recall - 1.0 / n as f64).abs() < 1e-12);

        let two: Labeling = (0..2 * n).map(|i| (format!("i{i}"), format!("t{}", i / n))).collect();
        let merged: Labeling = (0..2 * n).map(|i| (format!("i{i}"), "p".to_string())).collect();
        let b = eval_bcubed(&merged, &two, NoisePolicy::Singletons).unwrap();
        assert!((b.precision - 0.5).abs() < 1e-12 && (b.recall - 1.0).abs() < 1e-12);
        let b = eval_bcubed(&two, &two, NoisePolicy::Singletons).unwrap();
        assert_eq!((b.precision, b.recall, b.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn universe_mismatch() {
        let a = labels(&[("a", "x")]);
        let b = labels(&[("b", "x")]);
        assert!(matches!(eval_ari(&a, &b, NoisePolicy::Singletons), Err(CorpusError::UniverseMismatch(_))));
    }

    #[test]
    fn noise_policies() {
        let truth = labels(&[("a", "x"), ("b", "x"), ("n1", NOISE), ("n2", NOISE)]);
        // Putting both noise items together is a mistake under singletons.
        let pred = labels(&[("a", "1"), ("b", "1"), ("n1", "2"), ("n2", "2")]);
        assert!(eval_ari(&pred, &truth, NoisePolicy::Singletons).unwrap() < 1.0);
        assert_eq!(eval_ari(&pred, &truth, NoisePolicy::Exclude).unwrap(), 1.0);
    }

    /// Every set partition of `n` items as restricted growth strings.
    fn partitions(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = vec![0; n];
        fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == cur.len() {
                out.push(cur.clone());
                return;
            }
            for v in 0..=max + 1 {
                cur[i] = v;
                rec(i + 1, max.max(v), cur, out);
            }
        }
        if n == 0 {
            return vec![vec![]];
        }
        rec(1, 0, &mut cur, &mut out);
        out
    }

    /// Pair-counting ARI (Hubert and Arabie's form over pair agreements).
    fn brute_ari(p: &[usize], t: &[usize]) -> f64 {
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                match (p[i] == p[j], t[i] == t[j]) {
                    (true, true) => a += 1.0,
                    (true, false) => b += 1.0,
                    (false, true) => c += 1.0,
                    (false, false) => d += 1.0,
                }
            }
        }
        let den = (a + b) * (b + d) + (a + c) * (c + d);
        if den == 0.0 {
            return 1.0;
        }
        2.0 * (a * d - b * c) / den
    }

    fn brute_bcubed(p: &[usize], t: &[usize]) -> (f64, f64) {
        let n = p.len();
        let (mut pr, mut rc) = (0.0, 0.0);
        for i in 0..n {
            let same_p = (0..n).filter(|&j| p[j] == p[i]).count() as f64;
            let same_t = (0..n).filter(|&j| t[j] == t[i]).count() as f64;
            let both = (0..n).filter(|&j| p[j] == p[i] && t[j] == t[i]).count() as f64;
            pr += both / same_p;
            rc += both / same_t;
        }
        (pr / n as f64, rc / n as f64)
    }

    #[test]
    fn metrics_match_brute_force_on_all_partitions_of_six() {
        let parts = partitions(6);
        assert_eq!(parts.len(), 203);
        for p in &parts {
            for t in &parts {
                let ari = ari_from_classes(p, t);
                assert!((ari - brute_ari(p, t)).abs() < 1e-12, "{p:?} {t:?}");
                let b = bcubed_from_classes(p, t);
                let (bp, br) = brute_bcubed(p, t);
                assert!((b.precision - bp).abs() < 1e-12 && (b.recall - br).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = CorpusSpec::new(4, 6, 8, 9);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.articles_jsonl(), b.articles_jsonl());
        assert_eq!(a.truth_jsonl(), b.truth_jsonl());
        let other = generate_corpus(&CorpusSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.articles_jsonl(), other.articles_jsonl());
        assert_eq!(a.articles.len(), 24);
    }

    #[test]
    fn generator_label_extremes() {
        let one = generate_corpus(&CorpusSpec::new(1, 9, 5, 1)).unwrap();
        assert!(one.truth.values().all(|l| l == "story-1"));
        let mut spec = CorpusSpec::new(3, 5, 5, 1);
        spec.noise_fraction = 1.0;
        let all = generate_corpus(&spec).unwrap();
        assert_eq!(all.truth.len(), 15);
        assert!(all.truth.values().all(|l| l == NOISE));
        spec.noise_fraction = 0.2;
        let some = generate_corpus(&spec).unwrap();
        assert_eq!(some.truth.values().filter(|l| *l == NOISE).count(), 3);
    }

    #[test]
    fn generator_rejects_bad_specs() {
        let mut s = CorpusSpec::new(1, 5, 5, 0);
        s.n_stories = 0;
        assert!(generate_corpus(&s).is_err());
        let mut s = CorpusSpec::new(1, 5, 5, 0);
        s.articles_per_story = ArticleCount::Range([6, 5]);
        assert!(generate_corpus(&s).is_err());
        let mut s = CorpusSpec::new(1, 5, 5, 0);
        s.noise_fraction = 1.5;
        assert!(generate_corpus(&s).is_err());
    }

    #[test]
    fn spec_json_forms() {
        let s: CorpusSpec = serde_json::from_str(
            r#"{"n_stories":2,"articles_per_story":[3,5],"n_sources":4,"vocab_per_story":10,"time_span":86400}"#,
        )
        .unwrap();
        assert_eq!(s.articles_per_story, ArticleCount::Range([3, 5]));
        assert_eq!(s.claim_disagreement, 0.2);
        let c = generate_corpus(&s).unwrap();
        assert!((6..=10).contains(&c.articles.len()));
        assert!(serde_json::from_str::<CorpusSpec>(r#"{"n_stories":2,"bogus":1}"#).is_err());
    }

    fn embed(a: &RawArticle) -> crate::embed::Vector {
        let text = format!("{} {}", normalize_text(&a.title), normalize_text(&a.body));
        hash_embed(&text, &EmbedConfig::default()).unwrap()
    }

    #[test]
    fn same_story_pairs_are_closer_than_cross_story_pairs() {
        let c = generate_corpus(&CorpusSpec::new(10, 20, 12, 3)).unwrap();
        let vs: Vec<_> = c.articles.iter().map(embed).collect();
        let labels: Vec<&String> = c.articles.iter().map(|a| &c.truth[&a.external_id]).collect();
        let (mut same, mut cross) = (Vec::new(), Vec::new());
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                let cos = cosine(&vs[i], &vs[j]).unwrap();
                if labels[i] == labels[j] {
                    same.push(cos);
                } else {
                    cross.push(cos);
                }
            }
        }
        assert!(same.len() >= 1000 && cross.len() >= 1000);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&same) > mean(&cross) + 0.2, "{} vs {}", mean(&same), mean(&cross));
    }

    #[test]
    fn table1_shape() {
        let c = table1_corpus();
        assert_eq!(c.articles.len(), 13);
        let day = |a: &RawArticle| (a.published_at - TABLE1_DAY1) / DAY;
        let mut per_day = [0; 3];
        let mut sources: [BTreeSet<&str>; 3] = Default::default();
        for a in &c.articles {
            per_day[day(a) as usize] += 1;
            sources[day(a) as usize].insert(&a.source_id);
        }
        assert_eq!(per_day, [3, 3, 7]);
        assert_eq!(sources.iter().map(BTreeSet::len).collect::<Vec<_>>(), vec![3, 3, 5]);
        let through_day2: BTreeSet<_> = sources[0].union(&sources[1]).collect();
        assert_eq!(through_day2.len(), 4);
        let all: BTreeSet<_> = c.articles.iter().map(|a| &a.source_id).collect();
        assert_eq!(all.len(), 7);
    }
}
