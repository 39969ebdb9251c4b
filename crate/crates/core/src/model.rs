//! Article and claim types, ingest-record decoding, and text normalization.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::Timestamp;

pub type ArticleId = u64;
pub type ClaimId = u64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("title is empty after normalization")]
    EmptyTitle,
    #[error("published_at {published_at} is later than fetched_at {fetched_at}")]
    TimestampOrder {
        published_at: Timestamp,
        fetched_at: Timestamp,
    },
    #[error("source_id is empty")]
    MissingSource,
    #[error("external_id is empty")]
    MissingExternalId,
    #[error("claim {index}: {reason}")]
    InvalidClaim { index: usize, reason: &'static str },
}

/// A claim as it appears in an ingest record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawClaim {
    pub subject_entities: Vec<String>,
    pub predicate: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asserted_at: Option<Timestamp>,
}

/// One line of the JSON Lines ingest format. Unknown keys are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawArticle {
    pub external_id: String,
    pub source_id: String,
    #[serde(default)]
    pub url: String,
    pub title: String,
    pub body: String,
    pub published_at: Timestamp,
    pub fetched_at: Timestamp,
    #[serde(default)]
    pub language: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub claims: Vec<RawClaim>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entities: Vec<String>,
}

// Field order of the persisted types below is alphabetical: snapshots are
// written straight from these structs and must have sorted keys.

/// A structured claim attached to a validated article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub article_id: ArticleId,
    pub asserted_at: Timestamp,
    pub claim_id: ClaimId,
    pub predicate: String,
    pub subject_entities: Vec<String>,
    pub value: String,
}

/// A validated, normalized article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub claims: Vec<Claim>,
    pub entities: Vec<String>,
    pub external_id: String,
    pub fetched_at: Timestamp,
    pub id: ArticleId,
    pub language: String,
    pub norm_body: String,
    pub norm_title: String,
    pub published_at: Timestamp,
    pub source_id: String,
    pub url: String,
}

impl Article {
    /// The text the embedder sees: title followed by body.
    pub fn embedding_text(&self) -> String {
        if self.norm_body.is_empty() {
            self.norm_title.clone()
        } else {
            format!("{} {}", self.norm_title, self.norm_body)
        }
    }
}

/// NFC, full Unicode case folding, whitespace runs collapsed to one space,
/// trimmed.
pub fn normalize_text(text: &str) -> String {
    if text.is_ascii() {
        return normalize_ascii(text);
    }
    normalize_unicode(text)
}

// NFC is the identity on ASCII and case folding is plain lowercasing.
fn normalize_ascii(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().map(|c| c.to_ascii_lowercase()));
    }
    out
}

fn normalize_unicode(text: &str) -> String {
    let composed: String = text.nfc().collect();
    let folded = caseless::default_case_fold_str(&composed);
    // Folding can emit decomposed sequences (e.g. U+0130), so recompose.
    let recomposed: String = folded.nfc().collect();
    let mut out = String::with_capacity(recomposed.len());
    for word in recomposed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Normalizes, drops empties, sorts and deduplicates.
pub fn normalize_entities<S: AsRef<str>>(entities: &[S]) -> Vec<String> {
    let mut out: Vec<String> = entities
        .iter()
        .map(|e| normalize_text(e.as_ref()))
        .filter(|e| !e.is_empty())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Validates a raw record and assigns it `next_id`. Claims are numbered
/// consecutively from `next_claim_id`.
pub fn validate_article(
    raw: &RawArticle,
    next_id: ArticleId,
    next_claim_id: ClaimId,
) -> Result<Article, ModelError> {
    if raw.external_id.trim().is_empty() {
        return Err(ModelError::MissingExternalId);
    }
    if raw.source_id.trim().is_empty() {
        return Err(ModelError::MissingSource);
    }
    if raw.published_at > raw.fetched_at {
        return Err(ModelError::TimestampOrder {
            published_at: raw.published_at,
            fetched_at: raw.fetched_at,
        });
    }
    let norm_title = normalize_text(&raw.title);
    if norm_title.is_empty() {
        return Err(ModelError::EmptyTitle);
    }

    let mut claims = Vec::with_capacity(raw.claims.len());
    for (index, rc) in raw.claims.iter().enumerate() {
        let subject_entities = normalize_entities(&rc.subject_entities);
        if subject_entities.is_empty() {
            return Err(ModelError::InvalidClaim {
                index,
                reason: "no subject entities",
            });
        }
        let predicate = normalize_text(&rc.predicate);
        if predicate.is_empty() {
            return Err(ModelError::InvalidClaim {
                index,
                reason: "empty predicate",
            });
        }
        let asserted_at = rc.asserted_at.unwrap_or(raw.published_at);
        if asserted_at < 0 {
            return Err(ModelError::InvalidClaim {
                index,
                reason: "negative asserted_at",
            });
        }
        claims.push(Claim {
            article_id: next_id,
            asserted_at,
            claim_id: next_claim_id + index as u64,
            predicate,
            subject_entities,
            value: normalize_text(&rc.value),
        });
    }

    Ok(Article {
        claims,
        entities: normalize_entities(&raw.entities),
        external_id: raw.external_id.clone(),
        fetched_at: raw.fetched_at,
        id: next_id,
        language: raw.language.clone(),
        norm_body: normalize_text(&raw.body),
        norm_title,
        published_at: raw.published_at,
        source_id: raw.source_id.clone(),
        url: raw.url.clone(),
    })
}

/// Decodes one ingest line. Comment and blank lines are the reader's concern.
pub fn parse_jsonl_record(line: &[u8]) -> Result<RawArticle, ModelError> {
    serde_json::from_slice(line).map_err(|e| ModelError::MalformedRecord(e.to_string()))
}

/// True for lines the ingest reader skips: blank or starting with `#`.
pub fn is_skippable_line(line: &[u8]) -> bool {
    let trimmed = line.trim_ascii_start();
    trimmed.is_empty() || trimmed[0] == b'#'
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(title: &str, published_at: i64, fetched_at: i64) -> RawArticle {
        RawArticle {
            external_id: "x1".into(),
            source_id: "s1".into(),
            url: String::new(),
            title: title.into(),
            body: "Body".into(),
            published_at,
            fetched_at,
            language: "en".into(),
            claims: vec![],
            entities: vec![],
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("hello"), "hello");
        assert_eq!(normalize_text("  Hello\tWorld "), "hello world");
        assert_eq!(normalize_text("E\u{0301}lan"), "\u{00e9}lan");
        // Full folding, not just lowercase.
        assert_eq!(normalize_text("Straße"), "strasse");
        assert_eq!(normalize_text(" \n\t "), "");
    }

    #[test]
    fn validate_title_normalized() {
        let a = validate_article(&raw("  Breaking:  Quake ", 10, 10), 7, 0).unwrap();
        assert_eq!(a.norm_title, "breaking: quake");
        assert_eq!(a.id, 7);
    }

    #[test]
    fn validate_timestamp_boundary() {
        assert!(validate_article(&raw("t", 10, 10), 1, 0).is_ok());
        assert_eq!(
            validate_article(&raw("t", 11, 10), 1, 0),
            Err(ModelError::TimestampOrder {
                published_at: 11,
                fetched_at: 10
            })
        );
    }

    #[test]
    fn validate_errors() {
        assert_eq!(
            validate_article(&raw("   ", 1, 1), 1, 0),
            Err(ModelError::EmptyTitle)
        );
        let mut r = raw("t", 1, 1);
        r.source_id = String::new();
        assert_eq!(validate_article(&r, 1, 0), Err(ModelError::MissingSource));
        let mut r = raw("t", 1, 1);
        r.claims.push(RawClaim {
            subject_entities: vec![" ".into()],
            predicate: "p".into(),
            value: "v".into(),
            asserted_at: None,
        });
        assert!(matches!(
            validate_article(&r, 1, 0),
            Err(ModelError::InvalidClaim { index: 0, .. })
        ));
    }

    #[test]
    fn claims_and_entities_normalized() {
        let mut r = raw("t", 100, 200);
        r.entities = vec!["Zeta".into(), "alpha".into(), "ALPHA".into()];
        r.claims.push(RawClaim {
            subject_entities: vec!["B".into(), "a".into()],
            predicate: " Death  Toll".into(),
            value: "12 Dead".into(),
            asserted_at: None,
        });
        r.claims.push(RawClaim {
            subject_entities: vec!["a".into()],
            predicate: "cause".into(),
            value: "x".into(),
            asserted_at: Some(150),
        });
        let a = validate_article(&r, 3, 40).unwrap();
        assert_eq!(a.entities, vec!["alpha", "zeta"]);
        assert_eq!(a.claims[0].subject_entities, vec!["a", "b"]);
        assert_eq!(a.claims[0].predicate, "death toll");
        assert_eq!(a.claims[0].value, "12 dead");
        assert_eq!(a.claims[0].asserted_at, 100);
        assert_eq!(a.claims[0].claim_id, 40);
        assert_eq!(a.claims[1].claim_id, 41);
        assert_eq!(a.claims[1].asserted_at, 150);
        assert!(a.claims.iter().all(|c| c.article_id == 3));
    }

    #[test]
    fn parse_minimal_record() {
        let line = br#"{"external_id":"e","source_id":"s","title":"T","body":"B","published_at":1,"fetched_at":2}"#;
        let r = parse_jsonl_record(line).unwrap();
        assert!(r.claims.is_empty() && r.entities.is_empty());
        assert_eq!(r.url, "");
    }

    #[test]
    fn parse_rejects_missing_and_mistyped() {
        let missing = br#"{"external_id":"e","title":"T","body":"B","published_at":1,"fetched_at":2}"#;
        assert!(matches!(
            parse_jsonl_record(missing),
            Err(ModelError::MalformedRecord(_))
        ));
        let mistyped = br#"{"external_id":"e","source_id":"s","title":"T","body":"B","published_at":"1","fetched_at":2}"#;
        assert!(parse_jsonl_record(mistyped).is_err());
        assert!(parse_jsonl_record(b"{not json").is_err());
    }

    #[test]
    fn parse_ignores_unknown_fields() {
        let line = br#"{"external_id":"e","source_id":"s","title":"T","body":"B","published_at":1,"fetched_at":2,"foo":[1,2]}"#;
        assert_eq!(parse_jsonl_record(line).unwrap().external_id, "e");
    }

    #[test]
    fn skippable_lines() {
        assert!(is_skippable_line(b"# comment"));
        assert!(is_skippable_line(b"   "));
        assert!(!is_skippable_line(b"{}"));
    }

    fn arb_raw() -> impl Strategy<Value = RawArticle> {
        (
            "[a-z0-9]{0,4}",
            "[ a-zA-Z]{0,4}",
            "\\PC{0,20}",
            "\\PC{0,30}",
            -5i64..5,
            -5i64..5,
            proptest::collection::vec("\\PC{0,6}", 0..4),
        )
            .prop_map(|(ext, src, title, body, p, f, entities)| RawArticle {
                external_id: ext,
                source_id: src,
                url: String::new(),
                title,
                body,
                published_at: p,
                fetched_at: f,
                language: String::new(),
                claims: vec![],
                entities,
            })
    }

    proptest! {
        #[test]
        fn ascii_fast_path_agrees(s in "[ -~\t\n\x0b\x0c\r]{0,40}") {
            prop_assert_eq!(normalize_ascii(&s), normalize_unicode(&s));
        }

        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn validated_articles_hold_invariants(r in arb_raw(), id in 0u64..1000) {
            if let Ok(a) = validate_article(&r, id, 0) {
                prop_assert!(!a.norm_title.is_empty());
                prop_assert!(a.published_at <= a.fetched_at);
                prop_assert!(!a.source_id.is_empty());
                prop_assert!(a.entities.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(a.id, id);
            }
        }

        #[test]
        fn record_round_trip(r in arb_raw()) {
            let bytes = serde_json::to_vec(&r).unwrap();
            prop_assert_eq!(parse_jsonl_record(&bytes).unwrap(), r);
        }
    }
}
