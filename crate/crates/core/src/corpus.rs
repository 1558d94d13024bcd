//! Cable records: parsing from JSONL field maps, body-quality checks, and
//! selection of the trainable subset with per-reason exclusion accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Original classification level. Ordered from least to most sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassificationLevel {
    Unclassified,
    LimitedOfficialUse,
    Confidential,
    Secret,
}

impl ClassificationLevel {
    pub const ALL: [ClassificationLevel; 4] = [
        ClassificationLevel::Unclassified,
        ClassificationLevel::LimitedOfficialUse,
        ClassificationLevel::Confidential,
        ClassificationLevel::Secret,
    ];

    /// Canonical marking as it appears in the `origclass` field.
    pub fn marking(self) -> &'static str {
        match self {
            ClassificationLevel::Unclassified => "UNCLASSIFIED",
            ClassificationLevel::LimitedOfficialUse => "LIMITED OFFICIAL USE",
            ClassificationLevel::Confidential => "CONFIDENTIAL",
            ClassificationLevel::Secret => "SECRET",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            ClassificationLevel::Unclassified => "U",
            ClassificationLevel::LimitedOfficialUse => "L",
            ClassificationLevel::Confidential => "C",
            ClassificationLevel::Secret => "S",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Case-insensitive lookup. Anything that is not one of the four
    /// markings (misspellings, nulls, abbreviations) yields `None`.
    pub fn parse_marking(raw: &str) -> Option<Self> {
        let canon: String = raw
            .trim()
            .split(|c: char| c.is_whitespace() || c == '_')
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
            .to_uppercase();
        ClassificationLevel::ALL.into_iter().find(|l| l.marking() == canon)
    }
}

impl fmt::Display for ClassificationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.marking())
    }
}

/// Release status of the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CableKind {
    Full,
    PReel,
    Withdrawn,
    PReelWithdrawn,
}

impl CableKind {
    pub const ALL: [CableKind; 4] =
        [CableKind::Full, CableKind::PReel, CableKind::Withdrawn, CableKind::PReelWithdrawn];

    pub fn as_str(self) -> &'static str {
        match self {
            CableKind::Full => "full",
            CableKind::PReel => "p-reel",
            CableKind::Withdrawn => "withdrawn",
            CableKind::PReelWithdrawn => "p-reel withdrawn",
        }
    }

    fn has_withheld_text(self) -> bool {
        matches!(self, CableKind::Withdrawn | CableKind::PReelWithdrawn)
    }
}

impl FromStr for CableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let canon: String = s
            .to_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match canon.as_str() {
            "" | "full" | "fullcable" | "cable" => Ok(CableKind::Full),
            "preel" => Ok(CableKind::PReel),
            "withdrawn" | "withdrawncable" => Ok(CableKind::Withdrawn),
            "preelwithdrawn" | "withdrawnpreel" => Ok(CableKind::PReelWithdrawn),
            _ => Err(Error::Record(format!("unknown cable_type {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyStatus {
    Text,
    Error,
    Blank,
}

/// Digitization error messages that stand in for lost message text.
pub const BODY_ERROR_PATTERNS: [&str; 3] =
    ["ERROR READING TEXT INDEX", "EXPAND ERROR ENCOUNTERED", "ENCRYPTION ERROR"];

pub fn classify_body_status(body: &str) -> BodyStatus {
    if body.trim().is_empty() {
        return BodyStatus::Blank;
    }
    let upper = body.to_uppercase();
    if BODY_ERROR_PATTERNS.iter().any(|p| upper.contains(p)) {
        BodyStatus::Error
    } else {
        BodyStatus::Text
    }
}

/// Which source fields were absent, empty, or the literal `n/a`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlankFields {
    pub body: bool,
    pub subject: bool,
    pub concepts: bool,
    pub tags: bool,
    pub from: bool,
    pub to: bool,
    pub office: bool,
    pub date: bool,
}

/// One diplomatic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cable {
    pub doc_id: String,
    pub date: Option<NaiveDate>,
    /// A date was supplied but could not be parsed.
    pub date_unparsed: bool,
    pub from_field: String,
    pub to_field: String,
    pub office: String,
    pub tags: Vec<String>,
    pub concepts: Vec<String>,
    pub subject: String,
    pub body: String,
    /// `None` for null, misspelled or otherwise degenerate markings.
    pub orig_class: Option<ClassificationLevel>,
    pub kind: CableKind,
    pub body_status: BodyStatus,
    pub blank: BlankFields,
}

fn is_blank_text(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("n/a")
}

fn text_field(raw: &Map<String, Value>, key: &str) -> Option<String> {
    match raw.get(key)? {
        Value::Null => None,
        Value::String(s) if is_blank_text(s) => None,
        Value::String(s) => Some(s.trim().to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .filter_map(|v| v.as_str())
                .filter(|s| !is_blank_text(s))
                .map(|s| s.trim().to_string())
                .collect();
            if parts.is_empty() {
                None
            } else {
                Some(parts.join(", "))
            }
        }
        other => Some(other.to_string()),
    }
}

fn list_field(raw: &Map<String, Value>, key: &str, split: fn(char) -> bool) -> Vec<String> {
    let items: Vec<String> = match raw.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| v.as_str())
            .flat_map(|s| s.split(split).map(str::to_string).collect::<Vec<_>>())
            .collect(),
        Some(Value::String(s)) => s.split(split).map(str::to_string).collect(),
        _ => Vec::new(),
    };
    items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !is_blank_text(s))
        .collect()
}

/// Parses `YYYY-MM-DD` (optionally followed by a time part) or `YYYYMMDD`.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let s = raw.trim();
    let head = s.split(['T', ' ']).next().unwrap_or(s);
    NaiveDate::parse_from_str(head, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(head, "%Y%m%d"))
        .ok()
}

/// Builds a [`Cable`] from one JSON object of the corpus file.
///
/// Only `doc_id` is mandatory. Unparseable dates are kept as `None` with
/// `date_unparsed` set so the record still reaches training.
pub fn parse_cable_record(raw: &Map<String, Value>) -> Result<Cable> {
    let doc_id = match raw.get("doc_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(Error::Record("missing doc_id".into())),
    };

    let kind = match raw.get("cable_type") {
        Some(Value::String(s)) => s
            .parse::<CableKind>()
            .map_err(|e| Error::Record(format!("{doc_id}: {e}")))?,
        _ => CableKind::Full,
    };

    let mut blank = BlankFields::default();
    let take = |key: &str, flag: &mut bool| -> String {
        let v = text_field(raw, key);
        *flag = v.is_none();
        v.unwrap_or_default()
    };
    let mut body = take("body", &mut blank.body);
    let subject = take("subject", &mut blank.subject);
    let from_field = take("from", &mut blank.from);
    let to_field = take("to", &mut blank.to);
    let office = take("office", &mut blank.office);

    let tags = list_field(raw, "tags", |c| c == ',' || c == ';' || c.is_whitespace());
    let concepts = list_field(raw, "concepts", |c| c == ',' || c == ';');
    blank.tags = tags.is_empty();
    blank.concepts = concepts.is_empty();

    let (date, date_unparsed) = match text_field(raw, "date") {
        None => {
            blank.date = true;
            (None, false)
        }
        Some(s) => match parse_date(&s) {
            Some(d) => (Some(d), false),
            None => (None, true),
        },
    };

    let orig_class = match raw.get("origclass") {
        Some(Value::String(s)) => ClassificationLevel::parse_marking(s),
        _ => None,
    };

    if kind.has_withheld_text() {
        body.clear();
        blank.body = true;
    }
    let body_status = classify_body_status(&body);

    Ok(Cable {
        doc_id,
        date,
        date_unparsed,
        from_field,
        to_field,
        office,
        tags,
        concepts,
        subject,
        body,
        orig_class,
        kind,
        body_status,
        blank,
    })
}

impl Cable {
    /// A record with every text field blank; callers fill in what they
    /// need.
    pub fn metadata(doc_id: impl Into<String>, orig_class: Option<ClassificationLevel>, kind: CableKind) -> Cable {
        Cable {
            doc_id: doc_id.into(),
            date: None,
            date_unparsed: false,
            from_field: String::new(),
            to_field: String::new(),
            office: String::new(),
            tags: Vec::new(),
            concepts: Vec::new(),
            subject: String::new(),
            body: String::new(),
            orig_class,
            kind,
            body_status: BodyStatus::Blank,
            blank: BlankFields {
                body: true,
                subject: true,
                concepts: true,
                tags: true,
                from: true,
                to: true,
                office: true,
                date: true,
            },
        }
    }

    /// Renders the cable in the corpus record schema read by
    /// [`parse_cable_record`].
    pub fn to_record(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let s = |v: &str| Value::String(v.to_string());
        m.insert("doc_id".into(), s(&self.doc_id));
        m.insert(
            "date".into(),
            self.date.map(|d| s(&d.format("%Y-%m-%d").to_string())).unwrap_or(Value::Null),
        );
        m.insert("from".into(), s(&self.from_field));
        m.insert("to".into(), s(&self.to_field));
        m.insert("office".into(), s(&self.office));
        m.insert("tags".into(), s(&self.tags.join(", ")));
        m.insert("concepts".into(), s(&self.concepts.join(", ")));
        m.insert("subject".into(), s(&self.subject));
        m.insert("body".into(), s(&self.body));
        m.insert(
            "origclass".into(),
            self.orig_class.map(|l| s(l.marking())).unwrap_or(Value::Null),
        );
        m.insert("cable_type".into(), s(self.kind.as_str()));
        m
    }
}

/// Reads a JSONL corpus. Records without a `doc_id` are skipped and
/// reported back as `(line number, reason)`.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<(Vec<Cable>, Vec<(usize, String)>)> {
    let mut cables = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("line {}: {e}", i + 1)))?;
        let Value::Object(obj) = value else {
            return Err(Error::data(format!("line {}: expected a JSON object", i + 1)));
        };
        match parse_cable_record(&obj) {
            Ok(c) => cables.push(c),
            Err(e) => rejected.push((i + 1, e.to_string())),
        }
    }
    Ok((cables, rejected))
}

pub fn write_jsonl<W: Write>(mut writer: W, cables: &[Cable]) -> Result<()> {
    for c in cables {
        serde_json::to_writer(&mut writer, &Value::Object(c.to_record()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Why a record was left out of the trainable set, in the order the
/// checks are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    ErrorBody,
    BlankBody,
    BlankConcepts,
    BlankSubject,
    BlankFrom,
    BlankTo,
    DegenerateClass,
    NonFullKind,
}

impl ExclusionReason {
    pub const ORDER: [ExclusionReason; 8] = [
        ExclusionReason::ErrorBody,
        ExclusionReason::BlankBody,
        ExclusionReason::BlankConcepts,
        ExclusionReason::BlankSubject,
        ExclusionReason::BlankFrom,
        ExclusionReason::BlankTo,
        ExclusionReason::DegenerateClass,
        ExclusionReason::NonFullKind,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::ErrorBody => "error_body",
            ExclusionReason::BlankBody => "blank_body",
            ExclusionReason::BlankConcepts => "blank_concepts",
            ExclusionReason::BlankSubject => "blank_subject",
            ExclusionReason::BlankFrom => "blank_from",
            ExclusionReason::BlankTo => "blank_to",
            ExclusionReason::DegenerateClass => "degenerate_class",
            ExclusionReason::NonFullKind => "non_full_kind",
        }
    }

    pub fn applies(self, c: &Cable) -> bool {
        match self {
            ExclusionReason::ErrorBody => c.body_status == BodyStatus::Error,
            ExclusionReason::BlankBody => c.body_status == BodyStatus::Blank,
            ExclusionReason::BlankConcepts => c.concepts.is_empty(),
            ExclusionReason::BlankSubject => is_blank_text(&c.subject),
            ExclusionReason::BlankFrom => is_blank_text(&c.from_field),
            ExclusionReason::BlankTo => is_blank_text(&c.to_field),
            ExclusionReason::DegenerateClass => c.orig_class.is_none(),
            ExclusionReason::NonFullKind => c.kind != CableKind::Full,
        }
    }
}

/// First matching exclusion reason, or `None` if the cable is trainable.
pub fn exclusion_reason(c: &Cable) -> Option<ExclusionReason> {
    ExclusionReason::ORDER.into_iter().find(|r| r.applies(c))
}

/// Counts split by original classification (degenerate markings counted
/// separately).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub total: u64,
    pub unclassified: u64,
    pub limited_official_use: u64,
    pub confidential: u64,
    pub secret: u64,
    pub degenerate: u64,
}

impl LevelCounts {
    pub fn add(&mut self, level: Option<ClassificationLevel>) {
        self.total += 1;
        match level {
            Some(ClassificationLevel::Unclassified) => self.unclassified += 1,
            Some(ClassificationLevel::LimitedOfficialUse) => self.limited_official_use += 1,
            Some(ClassificationLevel::Confidential) => self.confidential += 1,
            Some(ClassificationLevel::Secret) => self.secret += 1,
            None => self.degenerate += 1,
        }
    }

    pub fn merge(&mut self, o: &LevelCounts) {
        self.total += o.total;
        self.unclassified += o.unclassified;
        self.limited_official_use += o.limited_official_use;
        self.confidential += o.confidential;
        self.secret += o.secret;
        self.degenerate += o.degenerate;
    }

    pub fn get(&self, level: Option<ClassificationLevel>) -> u64 {
        match level {
            Some(ClassificationLevel::Unclassified) => self.unclassified,
            Some(ClassificationLevel::LimitedOfficialUse) => self.limited_official_use,
            Some(ClassificationLevel::Confidential) => self.confidential,
            Some(ClassificationLevel::Secret) => self.secret,
            None => self.degenerate,
        }
    }
}

/// Exclusion accounting for one pass of [`select_trainable`].
///
/// `exclusive` assigns each excluded record to its first reason so the
/// rows add up to the input. `conditions` counts every condition that
/// holds among full cables, so rows overlap the way the archive's own
/// tables do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionTally {
    pub input: u64,
    pub full_cables: LevelCounts,
    pub retained: LevelCounts,
    pub exclusive: BTreeMap<ExclusionReason, LevelCounts>,
    pub conditions: BTreeMap<ExclusionReason, LevelCounts>,
}

impl Default for ExclusionTally {
    fn default() -> Self {
        let zeroed: BTreeMap<_, _> =
            ExclusionReason::ORDER.into_iter().map(|r| (r, LevelCounts::default())).collect();
        ExclusionTally {
            input: 0,
            full_cables: LevelCounts::default(),
            retained: LevelCounts::default(),
            exclusive: zeroed.clone(),
            conditions: zeroed,
        }
    }
}

impl ExclusionTally {
    pub fn record(&mut self, c: &Cable) -> Option<ExclusionReason> {
        self.input += 1;
        let reason = exclusion_reason(c);
        match reason {
            Some(r) => self.exclusive.entry(r).or_default().add(c.orig_class),
            None => self.retained.add(c.orig_class),
        }
        if c.kind == CableKind::Full {
            self.full_cables.add(c.orig_class);
            for r in ExclusionReason::ORDER {
                if r != ExclusionReason::NonFullKind && r.applies(c) {
                    self.conditions.entry(r).or_default().add(c.orig_class);
                }
            }
        }
        reason
    }

    pub fn merge(&mut self, other: &ExclusionTally) {
        self.input += other.input;
        self.full_cables.merge(&other.full_cables);
        self.retained.merge(&other.retained);
        for (r, c) in &other.exclusive {
            self.exclusive.entry(*r).or_default().merge(c);
        }
        for (r, c) in &other.conditions {
            self.conditions.entry(*r).or_default().merge(c);
        }
    }

    pub fn excluded(&self, reason: ExclusionReason) -> u64 {
        self.exclusive.get(&reason).map_or(0, |c| c.total)
    }

    pub fn total_excluded(&self) -> u64 {
        self.exclusive.values().map(|c| c.total).sum()
    }

    /// Plain-text summary table, one row per reason.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22}{:>12}{:>14}{:>12}{:>14}{:>10}{:>12}\n",
            "situation", "total", "unclassified", "limited", "confidential", "secret", "degenerate"
        ));
        let row = |name: &str, c: &LevelCounts| {
            format!(
                "{:<22}{:>12}{:>14}{:>12}{:>14}{:>10}{:>12}\n",
                name,
                c.total,
                c.unclassified,
                c.limited_official_use,
                c.confidential,
                c.secret,
                c.degenerate
            )
        };
        out.push_str(&row("full cables", &self.full_cables));
        for (r, c) in &self.conditions {
            out.push_str(&row(r.as_str(), c));
        }
        out.push_str("-- exclusive assignment --\n");
        for (r, c) in &self.exclusive {
            out.push_str(&row(r.as_str(), c));
        }
        out.push_str(&row("used for classifier", &self.retained));
        out
    }
}

/// Keeps full, text-bearing, properly classified cables with non-blank
/// concepts, subject, from and to.
pub fn select_trainable(corpus: &[Cable]) -> (Vec<Cable>, ExclusionTally) {
    let tally = corpus
        .par_chunks(4096)
        .map(|chunk| {
            let mut t = ExclusionTally::default();
            for c in chunk {
                t.record(c);
            }
            t
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(ExclusionTally::default(), |mut acc, t| {
            acc.merge(&t);
            acc
        });
    let retained = corpus.iter().filter(|c| exclusion_reason(c).is_none()).cloned().collect();
    (retained, tally)
}
