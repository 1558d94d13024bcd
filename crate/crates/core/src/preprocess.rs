//! Text normalization: uppercase tokenization, stopword and short-token
//! removal, compound place-name collapsing, and the engineered
//! sender/recipient and calendar fields.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::corpus::Cable;
use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const DEFAULT_GAZETTEER: &str = include_str!("../data/gazetteer.txt");

/// Ordered uppercase tokens.
pub type TokenSeq = Vec<String>;

fn read_list(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub stopwords: BTreeSet<String>,
    pub gazetteer: BTreeSet<String>,
    pub keep_intraword: Vec<char>,
    pub min_token_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            stopwords: read_list(DEFAULT_STOPWORDS).map(str::to_uppercase).collect(),
            gazetteer: read_list(DEFAULT_GAZETTEER).map(str::to_uppercase).collect(),
            keep_intraword: vec!['-', '_'],
            min_token_len: 2,
        }
    }
}

impl TokenizerConfig {
    pub fn with_stopwords_file(mut self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        self.stopwords = read_list(&text).map(str::to_uppercase).collect();
        Ok(self)
    }

    pub fn with_gazetteer_file(mut self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        self.gazetteer.extend(read_list(&text).map(str::to_uppercase));
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stopwords.is_empty() {
            return Err(Error::config("stopword list is empty"));
        }
        if self.min_token_len == 0 {
            return Err(Error::config("min_token_len must be at least 1"));
        }
        for entry in &self.gazetteer {
            if entry.split_whitespace().count() < 2 {
                return Err(Error::config(format!(
                    "gazetteer entry {entry:?} must have at least two words"
                )));
            }
        }
        Ok(())
    }
}

struct GazetteerEntry {
    words: Vec<String>,
    joined: String,
}

/// Compiled form of a [`TokenizerConfig`].
pub struct Tokenizer {
    config: TokenizerConfig,
    stopwords: HashSet<String>,
    // first word -> entries, longest first
    gazetteer: HashMap<String, Vec<GazetteerEntry>>,
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig) -> Result<Self> {
        config.validate()?;
        let stopwords: HashSet<String> = config.stopwords.iter().cloned().collect();
        let mut gazetteer: HashMap<String, Vec<GazetteerEntry>> = HashMap::new();
        for entry in &config.gazetteer {
            let raw_words = split_words(entry, &config.keep_intraword);
            let joined: String = raw_words.concat();
            // Entries are matched against the filtered stream, so words that
            // the filter would drop never take part in matching.
            let words: Vec<String> = raw_words
                .into_iter()
                .filter(|w| keep_token(w, config.min_token_len, &stopwords))
                .collect();
            if words.len() < 2 {
                continue;
            }
            gazetteer
                .entry(words[0].clone())
                .or_default()
                .push(GazetteerEntry { words, joined });
        }
        for list in gazetteer.values_mut() {
            list.sort_by(|a, b| b.words.len().cmp(&a.words.len()).then(a.words.cmp(&b.words)));
            list.dedup_by(|a, b| a.words == b.words);
        }
        Ok(Tokenizer { config, stopwords, gazetteer })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    fn collapse(&self, mut tokens: Vec<String>) -> TokenSeq {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let matched = self.gazetteer.get(&tokens[i]).and_then(|cands| {
                cands.iter().find(|e| {
                    i + e.words.len() <= tokens.len()
                        && e.words.iter().zip(&tokens[i..]).all(|(a, b)| a == b)
                })
            });
            match matched {
                Some(e) => {
                    out.push(e.joined.clone());
                    i += e.words.len();
                }
                None => {
                    out.push(std::mem::take(&mut tokens[i]));
                    i += 1;
                }
            }
        }
        out
    }

    /// Uppercases, splits on whitespace and punctuation (hyphens and
    /// underscores survive only between two alphanumerics), drops short
    /// tokens and stopwords, then collapses gazetteer names.
    pub fn normalize_text(&self, raw: &str) -> TokenSeq {
        let upper = raw.to_uppercase();
        let words: Vec<String> = split_words(&upper, &self.config.keep_intraword)
            .into_iter()
            .filter(|w| keep_token(w, self.config.min_token_len, &self.stopwords))
            .collect();
        self.collapse(words)
    }

    /// Tokenizes controlled-vocabulary code fields (TAGS, office). Codes
    /// are split like text but stopwords are not removed: several
    /// two-letter country codes (IS, IN, IT, NO, BE) coincide with
    /// English stopwords.
    pub fn normalize_codes(&self, raw: &str) -> TokenSeq {
        let upper = raw.to_uppercase();
        split_words(&upper, &self.config.keep_intraword)
            .into_iter()
            .filter(|w| w.chars().count() >= self.config.min_token_len)
            .collect()
    }

    /// Sender and recipient tokens, prefixed `FROM:` and `TO:` so the same
    /// post on either side stays a distinct feature.
    pub fn sender_recipient_tokens(&self, from_field: &str, to_field: &str) -> TokenSeq {
        let from = self.normalize_text(from_field).into_iter().map(|t| format!("FROM:{t}"));
        let to = self.normalize_text(to_field).into_iter().map(|t| format!("TO:{t}"));
        from.chain(to).collect()
    }

    pub fn merge_sender_recipient(&self, from_field: &str, to_field: &str) -> String {
        self.sender_recipient_tokens(from_field, to_field).join(" ")
    }

    pub fn tokenize_cable(&self, cable: &Cable) -> FieldTokens {
        FieldTokens {
            subject: self.normalize_text(&cable.subject),
            concepts: cable.concepts.iter().flat_map(|c| self.normalize_text(c)).collect(),
            body: self.normalize_text(&cable.body),
            tags: cable.tags.iter().flat_map(|t| self.normalize_codes(t)).collect(),
            sender_recipient: self.sender_recipient_tokens(&cable.from_field, &cable.to_field),
            office: self.normalize_codes(&cable.office),
        }
    }
}

fn keep_token(w: &str, min_len: usize, stopwords: &HashSet<String>) -> bool {
    w.chars().count() >= min_len && !stopwords.contains(w)
}

fn split_words(text: &str, keep: &[char]) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if keep.contains(&c)
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            cur.push(c);
        } else if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Per-field token streams of one cable, in feature order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldTokens {
    pub subject: TokenSeq,
    pub concepts: TokenSeq,
    pub body: TokenSeq,
    pub tags: TokenSeq,
    pub sender_recipient: TokenSeq,
    pub office: TokenSeq,
}

impl FieldTokens {
    /// All six fields as one pseudo-document: body, subject, concepts,
    /// TAGS, sender/recipient, office.
    pub fn all_text(&self) -> TokenSeq {
        [&self.body, &self.subject, &self.concepts, &self.tags, &self.sender_recipient, &self.office]
            .into_iter()
            .flat_map(|v| v.iter().cloned())
            .collect()
    }
}

/// True for Saturday and Sunday.
pub fn derive_weekday(date: Option<NaiveDate>) -> Option<bool> {
    date.map(|d| matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
}

/// `YYYY-MM` bucket of a date.
pub fn derive_year_month(date: Option<NaiveDate>) -> Option<String> {
    date.map(|d| format!("{:04}-{:02}", d.year(), d.month()))
}
