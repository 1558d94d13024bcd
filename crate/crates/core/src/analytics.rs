//! Metadata statistics: secrecy rankings, time series, missing-text gaps,
//! country co-tagging and correlation.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corpus::{BodyStatus, Cable, CableKind, ClassificationLevel};
use crate::error::{Error, Result};

const DEFAULT_REGIONS: &str = include_str!("../data/regions.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    /// Distinct `(from, to)` field pair.
    SenderRecipient,
    Concept,
    Tag,
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "sender_recipient" | "pairs" | "pair" => Ok(GroupBy::SenderRecipient),
            "concept" | "concepts" => Ok(GroupBy::Concept),
            "tag" | "tags" => Ok(GroupBy::Tag),
            _ => Err(Error::config(format!("unknown grouping {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Highest,
    Lowest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingFilter {
    pub min_secret: u64,
    pub min_total: u64,
    /// Keep only rows strictly below this percentage.
    pub max_percent: Option<f64>,
    pub order: Order,
    pub top_n: usize,
}

impl Default for RankingFilter {
    fn default() -> Self {
        RankingFilter { min_secret: 0, min_total: 0, max_percent: None, order: Order::Highest, top_n: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecrecyRanking {
    /// One element for concepts and TAGS, `[from, to]` for pairs.
    pub key: Vec<String>,
    pub secret: u64,
    pub total: u64,
    pub percent_secret: f64,
}

pub fn percent(part: u64, whole: u64) -> Option<f64> {
    (whole > 0).then(|| 100.0 * part as f64 / whole as f64)
}

/// How a percentage is printed: rounded to `decimals`, or rounded to a
/// whole number first and then printed with two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentStyle {
    TwoDecimals,
    WholeTwoDecimals,
}

impl FromStr for PercentStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "two_decimals" | "2dp" => Ok(PercentStyle::TwoDecimals),
            "whole" | "whole_two_decimals" => Ok(PercentStyle::WholeTwoDecimals),
            _ => Err(Error::config(format!("unknown percent style {s:?}"))),
        }
    }
}

pub fn format_percent(p: f64, style: PercentStyle) -> String {
    match style {
        PercentStyle::TwoDecimals => format!("{p:.2}%"),
        PercentStyle::WholeTwoDecimals => format!("{:.2}%", p.round()),
    }
}

fn group_keys(c: &Cable, by: GroupBy) -> Vec<Vec<String>> {
    match by {
        GroupBy::SenderRecipient => {
            if c.from_field.is_empty() && c.to_field.is_empty() {
                Vec::new()
            } else {
                vec![vec![c.from_field.clone(), c.to_field.clone()]]
            }
        }
        GroupBy::Concept => {
            let set: BTreeSet<&String> = c.concepts.iter().collect();
            set.into_iter().map(|k| vec![k.clone()]).collect()
        }
        GroupBy::Tag => {
            let set: BTreeSet<&String> = c.tags.iter().collect();
            set.into_iter().map(|k| vec![k.clone()]).collect()
        }
    }
}

fn is_secret(c: &Cable) -> bool {
    c.orig_class == Some(ClassificationLevel::Secret)
}

/// Percent of cables per group that were originally SECRET. A cable counts
/// once for each distinct value it carries; every cable kind takes part.
pub fn rank_percent_secret<I, C>(cables: I, by: GroupBy, filter: &RankingFilter) -> Vec<SecrecyRanking>
where
    I: IntoIterator<Item = C>,
    C: Borrow<Cable>,
{
    let mut counts: HashMap<Vec<String>, (u64, u64)> = HashMap::new();
    for c in cables {
        let c = c.borrow();
        let secret = is_secret(c) as u64;
        for key in group_keys(c, by) {
            let e = counts.entry(key).or_default();
            e.0 += secret;
            e.1 += 1;
        }
    }
    let mut rows: Vec<SecrecyRanking> = counts
        .into_iter()
        .filter(|(_, (s, t))| *s >= filter.min_secret && *t >= filter.min_total && *t > 0)
        .map(|(key, (secret, total))| SecrecyRanking {
            key,
            secret,
            total,
            percent_secret: percent(secret, total).unwrap(),
        })
        .filter(|r| filter.max_percent.map_or(true, |m| r.percent_secret < m))
        .collect();
    rows.sort_by(|a, b| {
        let by_pct = match filter.order {
            Order::Highest => b.percent_secret.total_cmp(&a.percent_secret),
            Order::Lowest => a.percent_secret.total_cmp(&b.percent_secret),
        };
        by_pct.then(b.total.cmp(&a.total)).then_with(|| a.key.cmp(&b.key))
    });
    rows.truncate(filter.top_n);
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindShare {
    pub kind: CableKind,
    pub total: u64,
    pub secret: u64,
    pub percent_secret: Option<f64>,
}

pub fn secrecy_share_by_kind<I, C>(cables: I) -> Vec<KindShare>
where
    I: IntoIterator<Item = C>,
    C: Borrow<Cable>,
{
    let mut counts: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for c in cables {
        let c = c.borrow();
        let i = CableKind::ALL.iter().position(|&k| k == c.kind).unwrap();
        let e = counts.entry(i).or_default();
        e.0 += 1;
        e.1 += is_secret(c) as u64;
    }
    CableKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let (total, secret) = counts.get(&i).copied().unwrap_or((0, 0));
            KindShare { kind, total, secret, percent_secret: percent(secret, total) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthPoint {
    /// `YYYY-MM`.
    pub period: String,
    pub secret: u64,
    pub total: u64,
    pub proportion: Option<f64>,
}

fn month_index(d: NaiveDate) -> i32 {
    d.year() * 12 + d.month0() as i32
}

/// Secret share per calendar month from `start`'s month through `end`'s,
/// every month present.
pub fn monthly_secret_proportion<I, C>(cables: I, start: NaiveDate, end: NaiveDate) -> Vec<MonthPoint>
where
    I: IntoIterator<Item = C>,
    C: Borrow<Cable>,
{
    let (m0, m1) = (month_index(start), month_index(end));
    if m1 < m0 {
        return Vec::new();
    }
    let mut counts = vec![(0u64, 0u64); (m1 - m0 + 1) as usize];
    for c in cables {
        let c = c.borrow();
        let Some(d) = c.date else { continue };
        let m = month_index(d);
        if m < m0 || m > m1 {
            continue;
        }
        let e = &mut counts[(m - m0) as usize];
        e.0 += is_secret(c) as u64;
        e.1 += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, (secret, total))| {
            let m = m0 + i as i32;
            MonthPoint {
                period: format!("{:04}-{:02}", m.div_euclid(12), m.rem_euclid(12) + 1),
                secret,
                total,
                proportion: (total > 0).then(|| secret as f64 / total as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPoint {
    pub date: NaiveDate,
    pub count: u64,
}

/// Cables per day whose text is a digitization error message, every day of
/// `[start, end]` present.
pub fn daily_missing_counts<I, C>(cables: I, start: NaiveDate, end: NaiveDate) -> Vec<DayPoint>
where
    I: IntoIterator<Item = C>,
    C: Borrow<Cable>,
{
    if end < start {
        return Vec::new();
    }
    let n = (end - start).num_days() as usize + 1;
    let mut counts = vec![0u64; n];
    for c in cables {
        let c = c.borrow();
        if c.body_status != BodyStatus::Error {
            continue;
        }
        if let Some(d) = c.date {
            if d >= start && d <= end {
                counts[(d - start).num_days() as usize] += 1;
            }
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| DayPoint { date: start + Days::new(i as u64), count })
        .collect()
}

/// Nearest-rank quantile of the counts.
fn quantile(values: &[u64], q: f64) -> u64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Runs of at least `min_run` consecutive days whose count exceeds the
/// `q`-quantile of the series' non-zero days.
pub fn gap_detect(series: &[DayPoint], min_run: usize, q: f64) -> Result<Vec<(NaiveDate, NaiveDate)>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config("gap quantile must lie in [0, 1]"));
    }
    if min_run == 0 {
        return Err(Error::config("gap min_run must be >= 1"));
    }
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let nonzero: Vec<u64> = series.iter().map(|p| p.count).filter(|&c| c > 0).collect();
    if nonzero.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = quantile(&nonzero, q);
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=series.len() {
        let hot = i < series.len() && series[i].count > threshold;
        match (hot, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_run {
                    out.push((series[s].date, series[i - 1].date));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingDefinition {
    /// Only error-message bodies.
    Error,
    /// Error-message or empty bodies.
    ErrorOrBlank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingRate {
    pub levels: Vec<ClassificationLevel>,
    pub total: u64,
    pub missing: u64,
    pub percent_missing: Option<f64>,
}

/// Share of cables at `levels` whose text is missing.
pub fn missing_rate<I, C>(cables: I, levels: &[ClassificationLevel], def: MissingDefinition) -> MissingRate
where
    I: IntoIterator<Item = C>,
    C: Borrow<Cable>,
{
    let (mut total, mut missing) = (0u64, 0u64);
    for c in cables {
        let c = c.borrow();
        if !c.orig_class.is_some_and(|l| levels.contains(&l)) {
            continue;
        }
        total += 1;
        let m = match def {
            MissingDefinition::Error => c.body_status == BodyStatus::Error,
            MissingDefinition::ErrorOrBlank => c.body_status != BodyStatus::Text,
        };
        missing += m as u64;
    }
    MissingRate { levels: levels.to_vec(), total, missing, percent_missing: percent(missing, total) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotagRow {
    pub country: String,
    pub with_marker: u64,
    pub total: u64,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotagShare {
    pub marker: String,
    pub rows: Vec<CotagRow>,
    /// Over distinct cables carrying any of the countries.
    pub pooled: CotagRow,
}

/// Per country TAG, the percent of its cables that also carry `marker`.
pub fn cotag_share<I, C>(cables: I, marker: &str, countries: &[String]) -> CotagShare
where
    I: IntoIterator<Item = C>,
    C: Borrow<Cable>,
{
    let mut per: BTreeMap<&str, (u64, u64)> = countries.iter().map(|c| (c.as_str(), (0, 0))).collect();
    let (mut pooled_m, mut pooled_t) = (0u64, 0u64);
    for c in cables {
        let c = c.borrow();
        let has_marker = c.tags.iter().any(|t| t == marker) as u64;
        let mut any = false;
        for (country, e) in per.iter_mut() {
            if c.tags.iter().any(|t| t == country) {
                e.0 += has_marker;
                e.1 += 1;
                any = true;
            }
        }
        if any {
            pooled_m += has_marker;
            pooled_t += 1;
        }
    }
    let rows = countries
        .iter()
        .map(|country| {
            let (m, t) = per[country.as_str()];
            CotagRow { country: country.clone(), with_marker: m, total: t, percent: percent(m, t) }
        })
        .collect();
    CotagShare {
        marker: marker.to_string(),
        rows,
        pooled: CotagRow {
            country: "pooled".into(),
            with_marker: pooled_m,
            total: pooled_t,
            percent: percent(pooled_m, pooled_t),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: String,
    pub secret: u64,
    pub total: u64,
    pub percent_secret: Option<f64>,
}

/// Percent SECRET among cables carrying any member country TAG of each
/// group.
pub fn secret_share_by_country_group<I, C>(cables: I, groups: &BTreeMap<String, Vec<String>>) -> Vec<GroupShare>
where
    I: IntoIterator<Item = C>,
    C: Borrow<Cable>,
{
    let mut counts: BTreeMap<&str, (u64, u64)> = groups.keys().map(|g| (g.as_str(), (0, 0))).collect();
    for c in cables {
        let c = c.borrow();
        let secret = is_secret(c) as u64;
        for (g, members) in groups {
            if c.tags.iter().any(|t| members.contains(t)) {
                let e = counts.get_mut(g.as_str()).unwrap();
                e.0 += secret;
                e.1 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(g, (secret, total))| GroupShare {
            group: g.to_string(),
            secret,
            total,
            percent_secret: percent(secret, total),
        })
        .collect()
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::data("pearson_r needs two equal-length series of at least 2 values"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::data("pearson_r is undefined for a constant series"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryRegion {
    pub tag: String,
    pub country: String,
    pub region: String,
}

/// Reads a `tag,country,region` CSV.
pub fn load_regions<R: Read>(reader: R) -> Result<Vec<CountryRegion>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Latin America and Middle East country TAGS.
pub fn default_regions() -> Vec<CountryRegion> {
    load_regions(DEFAULT_REGIONS.as_bytes()).expect("bundled regions file parses")
}

pub fn region_groups(regions: &[CountryRegion]) -> BTreeMap<String, Vec<String>> {
    let mut g: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in regions {
        g.entry(r.region.clone()).or_default().push(r.tag.clone());
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreedomScore {
    pub country_tag: String,
    pub year: i32,
    pub score: f64,
}

/// Reads a `country_tag,year,score` CSV.
pub fn load_freedom_scores<R: Read>(reader: R) -> Result<Vec<FreedomScore>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: FreedomScore = row?;
        if !r.score.is_finite() {
            return Err(Error::data(format!("non-finite score for {}", r.country_tag)));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCorrelation {
    /// `(country, marker share %, mean score)` for countries with cables.
    pub points: Vec<(String, f64, f64)>,
    pub r: f64,
}

/// Correlates each country's marker co-tag share with its mean score. Only
/// cables dated in a year the scores cover take part.
pub fn cotag_score_correlation(cables: &[Cable], marker: &str, scores: &[FreedomScore]) -> Result<ScoreCorrelation> {
    let mut mean: BTreeMap<&str, (f64, u32)> = BTreeMap::new();
    for s in scores {
        let e = mean.entry(s.country_tag.as_str()).or_default();
        e.0 += s.score;
        e.1 += 1;
    }
    let years: BTreeSet<i32> = scores.iter().map(|s| s.year).collect();
    let countries: Vec<String> = mean.keys().map(|s| s.to_string()).collect();
    let in_years = cables.iter().filter(|c| c.date.is_some_and(|d| years.contains(&d.year())));
    let share = cotag_share(in_years, marker, &countries);
    let points: Vec<(String, f64, f64)> = share
        .rows
        .into_iter()
        .filter_map(|r| {
            let (sum, n) = mean[r.country.as_str()];
            r.percent.map(|p| (r.country, p, sum / n as f64))
        })
        .collect();
    let x: Vec<f64> = points.iter().map(|p| p.1).collect();
    let y: Vec<f64> = points.iter().map(|p| p.2).collect();
    Ok(ScoreCorrelation { r: pearson_r(&x, &y)?, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassificationLevel::*;

    fn with_concept(i: usize, concept: &str, secret: bool) -> Cable {
        let mut c = Cable::metadata(format!("c{i}"), Some(if secret { Secret } else { Unclassified }), CableKind::Full);
        c.concepts = vec![concept.to_string()];
        c
    }

    fn concept_fixture(concept: &str, secret: usize, total: usize) -> Vec<Cable> {
        (0..total).map(|i| with_concept(i, concept, i < secret)).collect()
    }

    #[test]
    fn published_percentages() {
        let mut cables = Vec::new();
        for i in 0..436 {
            let mut c = Cable::metadata(format!("n{i}"), Some(if i < 426 { Secret } else { Confidential }), CableKind::Withdrawn);
            c.from_field = "NATO".into();
            c.to_field = "STATE, SECDEF".into();
            cables.push(c);
        }
        let f = RankingFilter { min_secret: 100, ..Default::default() };
        let rows = rank_percent_secret(&cables, GroupBy::SenderRecipient, &f);
        assert_eq!(rows[0].key, vec!["NATO", "STATE, SECDEF"]);
        assert_eq!(format_percent(rows[0].percent_secret, PercentStyle::TwoDecimals), "97.71%");

        let cat_c = concept_fixture("CAT-C", 6211, 7156);
        let rows = rank_percent_secret(&cat_c, GroupBy::Concept, &RankingFilter { min_total: 1000, ..Default::default() });
        assert_eq!(format_percent(rows[0].percent_secret, PercentStyle::WholeTwoDecimals), "87.00%");
        assert_eq!(format_percent(rows[0].percent_secret, PercentStyle::TwoDecimals), "86.79%");

        let civ = concept_fixture("CIVIL AVIATION", 75, 16715);
        let low = RankingFilter { min_total: 1000, max_percent: Some(1.0), order: Order::Lowest, ..Default::default() };
        let rows = rank_percent_secret(&civ, GroupBy::Concept, &low);
        assert_eq!(format_percent(rows[0].percent_secret, PercentStyle::TwoDecimals), "0.45%");
        let strict = RankingFilter { min_total: 20_000, ..low };
        assert!(rank_percent_secret(&civ, GroupBy::Concept, &strict).is_empty());
    }

    #[test]
    fn kind_shares() {
        let mut cables = vec![
            Cable::metadata("a", Some(Secret), CableKind::Full),
            Cable::metadata("b", Some(Unclassified), CableKind::Full),
            Cable::metadata("c", Some(Secret), CableKind::PReel),
        ];
        cables.push(Cable::metadata("d", None, CableKind::PReel));
        let s = secrecy_share_by_kind(&cables);
        assert_eq!(s[0].percent_secret, Some(50.0));
        assert_eq!(s[1].percent_secret, Some(50.0));
        assert_eq!(s[2].percent_secret, None);
    }

    fn dated(i: usize, d: NaiveDate, level: ClassificationLevel) -> Cable {
        let mut c = Cable::metadata(format!("d{i}"), Some(level), CableKind::Full);
        c.date = Some(d);
        c
    }

    #[test]
    fn monthly_series() {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let cables = vec![
            dated(0, d(1975, 11, 3), Secret),
            dated(1, d(1975, 11, 9), Unclassified),
            dated(2, d(1975, 11, 30), Unclassified),
            dated(3, d(1976, 1, 1), Secret),
        ];
        let s = monthly_secret_proportion(&cables, d(1975, 11, 1), d(1976, 1, 31));
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].period, "1975-11");
        assert_eq!(s[0].proportion, Some(1.0 / 3.0));
        assert_eq!((s[1].period.as_str(), s[1].total, s[1].proportion), ("1975-12", 0, None));
        assert_eq!(s[2].proportion, Some(1.0));
    }

    #[test]
    fn jakarta_gap_flagged() {
        let d = |m, dd| NaiveDate::from_ymd_opt(1975, m, dd).unwrap();
        let mut cables = Vec::new();
        // background: one error body a day through the year
        for i in 0..365u64 {
            let mut c = dated(i as usize, d(1, 1) + Days::new(i), Unclassified);
            c.body_status = BodyStatus::Error;
            cables.push(c);
        }
        for i in 0..119u64 {
            let mut c = dated(1000 + i as usize, d(12, 1) + Days::new(i % 15), Secret);
            c.from_field = "JAKARTA".into();
            c.body_status = BodyStatus::Error;
            cables.push(c);
        }
        let series = daily_missing_counts(&cables, d(1, 1), d(12, 31));
        let total: u64 = series.iter().map(|p| p.count).sum();
        assert_eq!(total as usize, cables.len());
        let gaps = gap_detect(&series, 3, 0.95).unwrap();
        assert_eq!(gaps, vec![(d(12, 1), d(12, 15))]);
        let zero: Vec<DayPoint> = series.iter().map(|p| DayPoint { date: p.date, count: 0 }).collect();
        assert!(gap_detect(&zero, 3, 0.95).unwrap().is_empty());
    }

    #[test]
    fn missing_rates() {
        let mut cables = vec![
            Cable::metadata("a", Some(Secret), CableKind::Full),
            Cable::metadata("b", Some(Secret), CableKind::Full),
            Cable::metadata("c", Some(Unclassified), CableKind::Full),
        ];
        cables[0].body_status = BodyStatus::Error;
        cables[1].body_status = BodyStatus::Text;
        cables[2].body_status = BodyStatus::Text;
        let r = missing_rate(&cables, &[Secret], MissingDefinition::Error);
        assert_eq!(r.percent_missing, Some(50.0));
        let r = missing_rate(&cables, &[Unclassified, LimitedOfficialUse], MissingDefinition::ErrorOrBlank);
        assert_eq!(r.percent_missing, Some(0.0));
    }

    fn tagged(i: usize, tags: &[&str], level: ClassificationLevel) -> Cable {
        let mut c = Cable::metadata(format!("t{i}"), Some(level), CableKind::Full);
        c.tags = tags.iter().map(|s| s.to_string()).collect();
        c
    }

    #[test]
    fn cotag_and_region_shares() {
        let cables = vec![
            tagged(0, &["AR", "SHUM"], Unclassified),
            tagged(1, &["AR", "PFOR"], Secret),
            tagged(2, &["CI", "AR", "SHUM"], Unclassified),
            tagged(3, &["EG"], Secret),
        ];
        let countries: Vec<String> = ["AR", "CI", "BR"].iter().map(|s| s.to_string()).collect();
        let s = cotag_share(&cables, "SHUM", &countries);
        assert_eq!(s.rows[0].percent.unwrap(), 200.0 / 3.0);
        assert_eq!(s.rows[1].percent, Some(100.0));
        assert_eq!(s.rows[2].percent, None);
        assert_eq!((s.pooled.with_marker, s.pooled.total), (2, 3));

        let mut groups = region_groups(&default_regions());
        assert_eq!(groups["Latin America"].len(), 10);
        assert_eq!(groups["Middle East"].len(), 9);
        groups.insert("Empty".into(), vec![]);
        let g = secret_share_by_country_group(&cables, &groups);
        let by: BTreeMap<_, _> = g.iter().map(|r| (r.group.as_str(), r)).collect();
        assert_eq!(by["Latin America"].percent_secret, Some(100.0 / 3.0));
        assert_eq!(by["Middle East"].percent_secret, Some(100.0));
        assert_eq!(by["Empty"].percent_secret, None);
    }

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap(), 0.6);
        let x = [1.0, 5.0, 2.0, 8.0];
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn freedom_scores_csv() {
        let csv = "country_tag,year,score\nAR,1977,5.5\nAR,1978,4.5\nEG,1977,5\nIS,1977,2\n";
        let rows = load_freedom_scores(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 4);
        let mut cables = vec![
            tagged(0, &["AR", "SHUM"], Unclassified),
            tagged(1, &["AR"], Unclassified),
            tagged(2, &["EG"], Unclassified),
            tagged(3, &["IS", "SHUM"], Unclassified),
            tagged(4, &["IS"], Unclassified),
            tagged(5, &["IS"], Unclassified),
            tagged(6, &["IS"], Unclassified),
            tagged(7, &["EG", "SHUM"], Unclassified),
        ];
        for c in &mut cables[..7] {
            c.date = NaiveDate::from_ymd_opt(1978, 3, 1);
        }
        // outside the scored years
        cables[7].date = NaiveDate::from_ymd_opt(1975, 3, 1);
        let c = cotag_score_correlation(&cables, "SHUM", &rows).unwrap();
        assert_eq!(c.points.len(), 3);
        let x = [50.0, 0.0, 25.0];
        let y = [5.0, 5.0, 2.0];
        assert_eq!(c.r, pearson_r(&x, &y).unwrap());
        assert!(load_freedom_scores("country_tag,year,score\nAR,x,1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn ranking_sorted_and_filtered(
            rows in prop::collection::vec((0usize..6, any::<bool>()), 0..200),
            min_secret in 0u64..5, min_total in 0u64..20, lowest in any::<bool>()
        ) {
            let cables: Vec<Cable> = rows.iter().enumerate()
                .map(|(i, &(k, s))| with_concept(i, &format!("K{k}"), s)).collect();
            let f = RankingFilter {
                min_secret, min_total, max_percent: None,
                order: if lowest { Order::Lowest } else { Order::Highest }, top_n: 100,
            };
            let out = rank_percent_secret(&cables, GroupBy::Concept, &f);
            for r in &out {
                prop_assert!(r.secret >= min_secret && r.total >= min_total);
                prop_assert_eq!(r.percent_secret, 100.0 * r.secret as f64 / r.total as f64);
                prop_assert!((0.0..=100.0).contains(&r.percent_secret));
            }
            for w in out.windows(2) {
                if lowest {
                    prop_assert!(w[0].percent_secret <= w[1].percent_secret);
                } else {
                    prop_assert!(w[0].percent_secret >= w[1].percent_secret);
                }
            }
        }

        #[test]
        fn pearson_affine_invariance(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
            a in 0.1f64..10.0, b in -50.0f64..50.0
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let Ok(r) = pearson_r(&x, &y) else { return Ok(()); };
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson_r(&xs, &y).unwrap() - r).abs() < 1e-9);
            let xn: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson_r(&xn, &y).unwrap() + r).abs() < 1e-9);
        }

        #[test]
        fn daily_counts_sum(days in prop::collection::vec((0u64..60, any::<bool>()), 0..100)) {
            let start = NaiveDate::from_ymd_opt(1976, 1, 1).unwrap();
            let end = start + Days::new(40);
            let cables: Vec<Cable> = days.iter().enumerate().map(|(i, &(off, err))| {
                let mut c = dated(i, start + Days::new(off), Unclassified);
                c.body_status = if err { BodyStatus::Error } else { BodyStatus::Text };
                c
            }).collect();
            let s = daily_missing_counts(&cables, start, end);
            prop_assert_eq!(s.len(), 41);
            let want = days.iter().filter(|&&(off, err)| err && off <= 40).count() as u64;
            prop_assert_eq!(s.iter().map(|p| p.count).sum::<u64>(), want);
        }
    }
}
