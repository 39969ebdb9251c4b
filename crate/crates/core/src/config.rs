//! Effective engine configuration and its flat `section.key = value` file
//! format. Blank lines and lines starting with `#` are ignored, absent keys
//! take their defaults and unknown keys are rejected.
//!
//! ```text
//! # tighter joins
//! match.theta_join = 0.60
//! investigate.confirm_delay_min = 43200
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::MatchConfig;
use crate::embed::EmbedConfig;
use crate::investigate::InvestigateConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {value:?}")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub embed: EmbedConfig,
    pub investigate: InvestigateConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
}

pub const KEYS: &[&str] = &[
    "embed.dim",
    "embed.ngram",
    "match.alpha",
    "match.beta",
    "match.gamma",
    "match.tau",
    "match.theta_join",
    "match.min_articles",
    "match.min_sources",
    "match.min_coherence",
    "match.pending_ttl",
    "investigate.confirm_delay_min",
    "investigate.shift_window",
    "investigate.shift_threshold",
    "investigate.min_window_members",
];

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.embed
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.matching
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.investigate
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn parse_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        let m = &mut self.matching;
        let i = &mut self.investigate;
        match key {
            "embed.dim" => self.embed.dim = parse(line, key, v)?,
            "embed.ngram" => self.embed.ngram = parse(line, key, v)?,
            "match.alpha" => m.alpha = parse(line, key, v)?,
            "match.beta" => m.beta = parse(line, key, v)?,
            "match.gamma" => m.gamma = parse(line, key, v)?,
            "match.tau" => m.tau = parse(line, key, v)?,
            "match.theta_join" => m.theta_join = parse(line, key, v)?,
            "match.min_articles" => m.min_articles = parse(line, key, v)?,
            "match.min_sources" => m.min_sources = parse(line, key, v)?,
            "match.min_coherence" => m.min_coherence = parse(line, key, v)?,
            "match.pending_ttl" => m.pending_ttl = parse(line, key, v)?,
            "investigate.confirm_delay_min" => i.confirm_delay_min = parse(line, key, v)?,
            "investigate.shift_window" => i.shift_window = parse(line, key, v)?,
            "investigate.shift_threshold" => i.shift_threshold = parse(line, key, v)?,
            "investigate.min_window_members" => i.min_window_members = parse(line, key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Renders every key, in [`KEYS`] order.
    pub fn to_kv(&self) -> String {
        let m = &self.matching;
        let i = &self.investigate;
        let values: [String; 15] = [
            self.embed.dim.to_string(),
            self.embed.ngram.to_string(),
            m.alpha.to_string(),
            m.beta.to_string(),
            m.gamma.to_string(),
            m.tau.to_string(),
            m.theta_join.to_string(),
            m.min_articles.to_string(),
            m.min_sources.to_string(),
            m.min_coherence.to_string(),
            m.pending_ttl.to_string(),
            i.confirm_delay_min.to_string(),
            i.shift_window.to_string(),
            i.shift_threshold.to_string(),
            i.min_window_members.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
