//! Cross-source claim analysis within a story.
//!
//! Claims are keyed by their sorted subject entities and predicate. Over a
//! story's claim history the detectors report:
//!
//! - convergence: one (key, value) asserted by at least two distinct sources;
//! - divergence: one key carrying at least two values from distinct sources;
//! - delayed confirmation: the first different source to repeat a (key, value)
//!   did so at least `confirm_delay_min` seconds after the first assertion;
//! - narrative shift: the source-balanced centroids of two consecutive time
//!   windows of story members drift below `shift_threshold` cosine.
//!
//! All detectors are pure functions of their inputs. Claim order is
//! `(asserted_at, claim_id)` throughout, so equal timestamps resolve to the
//! lowest claim id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cluster::{source_balanced_centroid, StoryId};
use crate::embed::{cosine, Vector};
use crate::model::{ArticleId, Claim, ClaimId};
use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigateConfig {
    pub confirm_delay_min: i64,
    pub min_window_members: usize,
    pub shift_threshold: f64,
    pub shift_window: i64,
}

impl Default for InvestigateConfig {
    fn default() -> Self {
        Self {
            confirm_delay_min: 21_600,
            min_window_members: 3,
            shift_threshold: 0.70,
            shift_window: 86_400,
        }
    }
}

impl InvestigateConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.confirm_delay_min < 0 {
            return Err("confirm_delay_min must be non-negative");
        }
        if !(self.shift_threshold > 0.0 && self.shift_threshold < 1.0) {
            return Err("shift_threshold must lie in (0, 1)");
        }
        if self.shift_window <= 0 {
            return Err("shift_window must be positive");
        }
        if self.min_window_members < 1 {
            return Err("min_window_members must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClaimKey {
    pub predicate_sig: String,
    pub subject_sig: String,
}

impl ClaimKey {
    pub fn of(claim: &Claim) -> Self {
        let mut subjects = claim.subject_entities.clone();
        subjects.sort();
        subjects.dedup();
        Self {
            predicate_sig: claim.predicate.clone(),
            subject_sig: subjects.join("|"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub article_id: ArticleId,
    pub asserted_at: Timestamp,
    pub claim_id: ClaimId,
    pub key: ClaimKey,
    pub source_id: String,
    pub value: String,
}

impl ClaimRecord {
    pub fn new(claim: &Claim, source_id: &str) -> Self {
        Self {
            article_id: claim.article_id,
            asserted_at: claim.asserted_at,
            claim_id: claim.claim_id,
            key: ClaimKey::of(claim),
            source_id: source_id.to_string(),
            value: claim.value.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalKind {
    Convergence,
    Divergence,
    DelayedConfirmation,
    NarrativeShift,
}

impl std::str::FromStr for SignalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "convergence" => Ok(Self::Convergence),
            "divergence" => Ok(Self::Divergence),
            "delayedconfirmation" => Ok(Self::DelayedConfirmation),
            "narrativeshift" => Ok(Self::NarrativeShift),
            _ => Err(format!("unknown signal kind {s:?}")),
        }
    }
}

/// A source's first assertion.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Support {
    pub asserted_at: Timestamp,
    pub source_id: String,
}

/// Half-open time window `(start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub end: Timestamp,
    pub start: Timestamp,
}

impl Window {
    fn contains(&self, t: Timestamp) -> bool {
        t > self.start && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SignalDetail {
    Convergence {
        sources: Vec<Support>,
        value: String,
    },
    Divergence {
        /// Value to the sorted sources asserting it.
        values: BTreeMap<String, Vec<String>>,
    },
    DelayedConfirmation {
        confirming: Support,
        delay: i64,
        first: Support,
        value: String,
    },
    NarrativeShift {
        cosine: f64,
        earlier_members: usize,
        earlier_window: Window,
        later_members: usize,
        later_window: Window,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub detail: SignalDetail,
    pub detected_at: Timestamp,
    pub key: Option<ClaimKey>,
    pub kind: SignalKind,
    pub story_id: StoryId,
}

/// What makes two signals "the same" signal at different revisions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignalId {
    pub story_id: StoryId,
    pub kind: SignalKind,
    pub key: Option<ClaimKey>,
    pub value: Option<String>,
    pub bucket: Option<i64>,
}

impl Signal {
    pub fn id(&self) -> SignalId {
        let (value, bucket) = match &self.detail {
            SignalDetail::Convergence { value, .. } | SignalDetail::DelayedConfirmation { value, .. } => {
                (Some(value.clone()), None)
            }
            SignalDetail::Divergence { .. } => (None, None),
            // One drift signal per story per window-length bucket.
            SignalDetail::NarrativeShift { later_window, .. } => {
                let width = (later_window.end - later_window.start).max(1);
                (None, Some(later_window.end.div_euclid(width)))
            }
        };
        SignalId {
            story_id: self.story_id,
            kind: self.kind,
            key: self.key.clone(),
            value,
            bucket,
        }
    }

    /// Distinct supporting sources named in the detail.
    pub fn sources(&self) -> Vec<&str> {
        match &self.detail {
            SignalDetail::Convergence { sources, .. } => sources.iter().map(|s| s.source_id.as_str()).collect(),
            SignalDetail::Divergence { values } => {
                let set: BTreeSet<&str> = values.values().flatten().map(String::as_str).collect();
                set.into_iter().collect()
            }
            SignalDetail::DelayedConfirmation { first, confirming, .. } => {
                vec![first.source_id.as_str(), confirming.source_id.as_str()]
            }
            SignalDetail::NarrativeShift { .. } => vec![],
        }
    }
}

/// Orders signals by `(detected_at, kind, key)` and then identity.
pub fn sort_signals(signals: &mut [Signal]) {
    signals.sort_by(|a, b| {
        (a.detected_at, a.kind, &a.key)
            .cmp(&(b.detected_at, b.kind, &b.key))
            .then_with(|| a.id().cmp(&b.id()))
    });
}

fn chronological(claims: &[ClaimRecord]) -> Vec<&ClaimRecord> {
    let mut out: Vec<&ClaimRecord> = claims.iter().collect();
    out.sort_by_key(|c| (c.asserted_at, c.claim_id));
    out
}

fn by_key_value<'a>(claims: &[&'a ClaimRecord]) -> BTreeMap<(&'a ClaimKey, &'a str), Vec<&'a ClaimRecord>> {
    let mut groups: BTreeMap<(&ClaimKey, &str), Vec<&ClaimRecord>> = BTreeMap::new();
    for &c in claims {
        groups.entry((&c.key, c.value.as_str())).or_default().push(c);
    }
    groups
}

/// First assertion per source, in chronological order.
fn first_per_source(claims: &[&ClaimRecord]) -> Vec<Support> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for c in claims {
        if seen.insert(c.source_id.as_str()) {
            out.push(Support {
                asserted_at: c.asserted_at,
                source_id: c.source_id.clone(),
            });
        }
    }
    out
}

pub fn detect_convergence(story_id: StoryId, claims: &[ClaimRecord]) -> Vec<Signal> {
    let ordered = chronological(claims);
    let mut out = Vec::new();
    for ((key, value), group) in by_key_value(&ordered) {
        let supports = first_per_source(&group);
        if supports.len() < 2 {
            continue;
        }
        let detected_at = supports[1].asserted_at;
        let mut sources = supports;
        sources.sort();
        out.push(Signal {
            detail: SignalDetail::Convergence {
                sources,
                value: value.to_string(),
            },
            detected_at,
            key: Some(key.clone()),
            kind: SignalKind::Convergence,
            story_id,
        });
    }
    out
}

pub fn detect_divergence(story_id: StoryId, claims: &[ClaimRecord]) -> Vec<Signal> {
    let ordered = chronological(claims);
    let mut by_key: BTreeMap<&ClaimKey, Vec<&ClaimRecord>> = BTreeMap::new();
    for &c in &ordered {
        by_key.entry(&c.key).or_default().push(c);
    }
    let mut out = Vec::new();
    for (key, group) in by_key {
        let mut completed_at = None;
        for (i, c) in group.iter().enumerate() {
            if group[..i]
                .iter()
                .any(|p| p.value != c.value && p.source_id != c.source_id)
            {
                completed_at = Some(c.asserted_at);
                break;
            }
        }
        let Some(detected_at) = completed_at else {
            continue;
        };
        let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for c in &group {
            values.entry(c.value.clone()).or_default().push(c.source_id.clone());
        }
        for sources in values.values_mut() {
            sources.sort();
            sources.dedup();
        }
        out.push(Signal {
            detail: SignalDetail::Divergence { values },
            detected_at,
            key: Some(key.clone()),
            kind: SignalKind::Divergence,
            story_id,
        });
    }
    out
}

pub fn detect_delayed_confirmation(
    story_id: StoryId,
    claims: &[ClaimRecord],
    cfg: &InvestigateConfig,
) -> Vec<Signal> {
    let ordered = chronological(claims);
    let mut out = Vec::new();
    for ((key, value), group) in by_key_value(&ordered) {
        let first = group[0];
        let Some(confirming) = group.iter().find(|c| c.source_id != first.source_id) else {
            continue;
        };
        let delay = confirming.asserted_at - first.asserted_at;
        if delay < cfg.confirm_delay_min {
            continue;
        }
        out.push(Signal {
            detail: SignalDetail::DelayedConfirmation {
                confirming: Support {
                    asserted_at: confirming.asserted_at,
                    source_id: confirming.source_id.clone(),
                },
                delay,
                first: Support {
                    asserted_at: first.asserted_at,
                    source_id: first.source_id.clone(),
                },
                value: value.to_string(),
            },
            detected_at: confirming.asserted_at,
            key: Some(key.clone()),
            kind: SignalKind::DelayedConfirmation,
            story_id,
        });
    }
    out
}

/// All claim-based signals for one story, sorted.
pub fn detect_claim_signals(story_id: StoryId, claims: &[ClaimRecord], cfg: &InvestigateConfig) -> Vec<Signal> {
    let mut out = detect_convergence(story_id, claims);
    out.extend(detect_divergence(story_id, claims));
    out.extend(detect_delayed_confirmation(story_id, claims, cfg));
    sort_signals(&mut out);
    out
}

/// A story member as seen by the drift detector.
#[derive(Debug, Clone, Copy)]
pub struct WindowMember<'a> {
    pub published_at: Timestamp,
    pub source_id: &'a str,
    pub vector: &'a Vector,
}

/// Compares the source-balanced centroids of the windows
/// `(now - 2w, now - w]` and `(now - w, now]`.
pub fn detect_narrative_shift(
    story_id: StoryId,
    members: &[WindowMember<'_>],
    now: Timestamp,
    cfg: &InvestigateConfig,
) -> Option<Signal> {
    let later = Window {
        end: now,
        start: now - cfg.shift_window,
    };
    let earlier = Window {
        end: later.start,
        start: later.start - cfg.shift_window,
    };
    let pick = |w: &Window| -> Vec<&WindowMember<'_>> {
        members.iter().filter(|m| w.contains(m.published_at)).collect()
    };
    let (m1, m2) = (pick(&earlier), pick(&later));
    if m1.len() < cfg.min_window_members || m2.len() < cfg.min_window_members {
        return None;
    }
    let c1 = source_balanced_centroid(m1.iter().map(|m| (m.source_id, m.vector)))?;
    let c2 = source_balanced_centroid(m2.iter().map(|m| (m.source_id, m.vector)))?;
    let cos = cosine(&c1, &c2).ok()?;
    if cos >= cfg.shift_threshold {
        return None;
    }
    Some(Signal {
        detail: SignalDetail::NarrativeShift {
            cosine: cos,
            earlier_members: m1.len(),
            earlier_window: earlier,
            later_members: m2.len(),
            later_window: later,
        },
        detected_at: now,
        key: None,
        kind: SignalKind::NarrativeShift,
        story_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: i64 = 3600;

    fn key(subjects: &str, predicate: &str) -> ClaimKey {
        ClaimKey {
            predicate_sig: predicate.into(),
            subject_sig: subjects.into(),
        }
    }

    fn rec(id: ClaimId, source: &str, k: &ClaimKey, value: &str, t: Timestamp) -> ClaimRecord {
        ClaimRecord {
            article_id: id,
            asserted_at: t,
            claim_id: id,
            key: k.clone(),
            source_id: source.into(),
            value: value.into(),
        }
    }

    fn claim(subjects: &[&str], predicate: &str) -> Claim {
        Claim {
            article_id: 1,
            asserted_at: 0,
            claim_id: 1,
            predicate: predicate.into(),
            subject_entities: subjects.iter().map(|s| s.to_string()).collect(),
            value: "v".into(),
        }
    }

    #[test]
    fn claim_keys() {
        assert_eq!(ClaimKey::of(&claim(&["b", "a"], "p")), key("a|b", "p"));
        assert_ne!(ClaimKey::of(&claim(&["a"], "p")), ClaimKey::of(&claim(&["a"], "q")));
        assert_ne!(
            ClaimKey::of(&claim(&["a", "b"], "p")),
            ClaimKey::of(&claim(&["a", "b", "c"], "p"))
        );
    }

    #[test]
    fn convergence_cases() {
        let k = key("a", "p");
        let s = detect_convergence(1, &[rec(1, "A", &k, "v", 0), rec(2, "B", &k, "v", 10)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].sources(), vec!["A", "B"]);
        assert_eq!(s[0].detected_at, 10);
        assert!(detect_convergence(1, &[rec(1, "A", &k, "v", 0), rec(2, "A", &k, "v", 10)]).is_empty());
        assert!(detect_convergence(1, &[rec(1, "A", &k, "v", 0), rec(2, "B", &k, "w", 10)]).is_empty());
    }

    #[test]
    fn divergence_cases() {
        let k = key("a", "death toll");
        let s = detect_divergence(1, &[rec(1, "A", &k, "12 dead", 0), rec(2, "B", &k, "15 dead", 5)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].detected_at, 5);
        assert!(detect_divergence(1, &[rec(1, "A", &k, "12 dead", 0), rec(2, "A", &k, "15 dead", 5)]).is_empty());
        let s = detect_divergence(
            1,
            &[rec(1, "A", &k, "1", 0), rec(2, "B", &k, "2", 5), rec(3, "C", &k, "3", 9)],
        );
        assert_eq!(s.len(), 1);
        match &s[0].detail {
            SignalDetail::Divergence { values } => assert_eq!(values.len(), 3),
            d => panic!("{d:?}"),
        }
    }

    #[test]
    fn delayed_confirmation_boundary() {
        let k = key("a", "p");
        let cfg = InvestigateConfig::default();
        for (gap_h, expect) in [(5, false), (6, true), (7, true)] {
            let claims = [rec(1, "A", &k, "v", 0), rec(2, "B", &k, "v", gap_h * H)];
            let s = detect_delayed_confirmation(1, &claims, &cfg);
            assert_eq!(s.len(), usize::from(expect), "gap {gap_h}h");
            assert_eq!(detect_convergence(1, &claims).len(), 1);
            if expect {
                assert_eq!(s[0].detected_at, gap_h * H);
            }
        }
    }

    fn members(vs: &[(Timestamp, &'static str, Vector)]) -> Vec<(Timestamp, &'static str, Vector)> {
        vs.to_vec()
    }

    fn basis(i: usize) -> Vector {
        let mut v = vec![0.0; 8];
        v[i] = 1.0;
        Vector::new(v)
    }

    fn as_window<'a>(ms: &'a [(Timestamp, &'static str, Vector)]) -> Vec<WindowMember<'a>> {
        ms.iter()
            .map(|(t, s, v)| WindowMember {
                published_at: *t,
                source_id: s,
                vector: v,
            })
            .collect()
    }

    #[test]
    fn narrative_shift_cases() {
        let cfg = InvestigateConfig::default();
        let day = cfg.shift_window;
        let now = 10 * day;
        let same = members(&[
            (now - day - 10, "a", basis(0)),
            (now - day - 20, "b", basis(0)),
            (now - day - 30, "c", basis(0)),
            (now - 10, "a", basis(0)),
            (now - 20, "b", basis(0)),
            (now - 30, "c", basis(0)),
        ]);
        assert!(detect_narrative_shift(1, &as_window(&same), now, &cfg).is_none());

        let drift = members(&[
            (now - day - 10, "a", basis(0)),
            (now - day - 20, "b", basis(0)),
            (now - day - 30, "c", basis(0)),
            (now - 10, "a", basis(1)),
            (now - 20, "b", basis(1)),
            (now - 30, "c", basis(1)),
        ]);
        let s = detect_narrative_shift(1, &as_window(&drift), now, &cfg).unwrap();
        match s.detail {
            SignalDetail::NarrativeShift { cosine, .. } => assert_eq!(cosine, 0.0),
            d => panic!("{d:?}"),
        }

        let thin = members(&[
            (now - day - 10, "a", basis(0)),
            (now - day - 20, "b", basis(0)),
            (now - 10, "a", basis(1)),
            (now - 20, "b", basis(1)),
            (now - 30, "c", basis(1)),
        ]);
        assert!(detect_narrative_shift(1, &as_window(&thin), now, &cfg).is_none());
    }

    #[test]
    fn window_bounds_are_half_open() {
        let cfg = InvestigateConfig::default();
        let day = cfg.shift_window;
        let now = 10 * day;
        // Members exactly at now - day belong to the earlier window.
        let ms = members(&[
            (now - day, "a", basis(0)),
            (now - day, "b", basis(0)),
            (now - day, "c", basis(0)),
            (now, "a", basis(1)),
            (now, "b", basis(1)),
            (now, "c", basis(1)),
        ]);
        let s = detect_narrative_shift(1, &as_window(&ms), now, &cfg).unwrap();
        match s.detail {
            SignalDetail::NarrativeShift {
                earlier_members,
                later_members,
                ..
            } => assert_eq!((earlier_members, later_members), (3, 3)),
            d => panic!("{d:?}"),
        }
    }

    fn arb_claims() -> impl Strategy<Value = Vec<ClaimRecord>> {
        proptest::collection::vec((0usize..3, 0usize..2, 0usize..3, 0i64..4), 0..14).prop_map(|rows| {
            let mut t = 0;
            rows.into_iter()
                .enumerate()
                .map(|(i, (src, k, v, dt))| {
                    t += dt * 2 * H;
                    rec(
                        i as u64,
                        ["A", "B", "C"][src],
                        &key(["x", "y"][k], "p"),
                        ["1", "2", "3"][v],
                        t,
                    )
                })
                .collect()
        })
    }

    fn all(claims: &[ClaimRecord]) -> Vec<Signal> {
        detect_claim_signals(7, claims, &InvestigateConfig::default())
    }

    proptest! {
        #[test]
        fn signals_are_deterministic(claims in arb_claims()) {
            prop_assert_eq!(all(&claims), all(&claims));
        }

        #[test]
        fn supporting_sources_are_distinct(claims in arb_claims()) {
            for s in all(&claims) {
                let srcs = s.sources();
                let set: BTreeSet<_> = srcs.iter().collect();
                prop_assert_eq!(set.len(), srcs.len());
            }
        }

        #[test]
        fn divergence_needs_two_values(claims in arb_claims()) {
            for s in detect_divergence(1, &claims) {
                if let SignalDetail::Divergence { values } = &s.detail {
                    prop_assert!(values.len() >= 2);
                }
            }
        }

        #[test]
        fn delayed_confirmation_implies_convergence(claims in arb_claims()) {
            let conv: BTreeSet<_> = detect_convergence(1, &claims).iter().map(|s| s.id()).collect();
            for s in detect_delayed_confirmation(1, &claims, &InvestigateConfig::default()) {
                let mut id = s.id();
                id.kind = SignalKind::Convergence;
                prop_assert!(conv.contains(&id));
            }
        }

        #[test]
        fn same_timestamp_permutation_keeps_signal_set(claims in arb_claims(), seed in 0u64..1000) {
            // Shuffle within equal-timestamp runs and renumber claim ids in the new order.
            let mut shuffled = claims.clone();
            let mut i = 0;
            let mut rng = seed;
            while i < shuffled.len() {
                let mut j = i;
                while j < shuffled.len() && shuffled[j].asserted_at == shuffled[i].asserted_at {
                    j += 1;
                }
                shuffled[i..j].rotate_left((rng as usize) % (j - i));
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407) >> 7;
                i = j;
            }
            for (n, c) in shuffled.iter_mut().enumerate() {
                c.claim_id = n as u64;
            }
            let strip = |v: Vec<Signal>| -> Vec<(SignalId, Timestamp)> {
                let mut out: Vec<_> = v.into_iter().map(|s| (s.id(), s.detected_at)).collect();
                out.sort();
                out
            };
            prop_assert_eq!(strip(all(&claims)), strip(all(&shuffled)));
        }

        #[test]
        fn incremental_union_equals_batch(claims in arb_claims()) {
            let mut latest: BTreeMap<SignalId, Signal> = BTreeMap::new();
            for n in 1..=claims.len() {
                for s in all(&claims[..n]) {
                    latest.insert(s.id(), s);
                }
            }
            let mut incremental: Vec<Signal> = latest.into_values().collect();
            sort_signals(&mut incremental);
            prop_assert_eq!(incremental, all(&claims));
        }
    }
}
