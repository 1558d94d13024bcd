//! Seeded synthetic cable corpora with class-correlated planted tokens.
//!
//! Every field draws each token either from a pool owned by the cable's
//! classification level (with the field's signal strength) or from a
//! shared Zipf-distributed noise vocabulary.

use std::collections::HashSet;

use chrono::{Days, NaiveDate};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BlankFields, BodyStatus, Cable, CableKind, ClassificationLevel};
use crate::error::{Error, Result};
use crate::preprocess::TokenizerConfig;
use crate::seed::{rng_for, DEFAULT_SEED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    /// Inclusive token (or item) count range.
    pub length: (usize, usize),
    pub noise_vocab: usize,
    /// Planted tokens per classification level.
    pub pool_size: usize,
    /// Probability, per level, that a slot draws from that level's pool.
    pub strength: [f64; 4],
}

impl FieldSpec {
    fn uniform(length: (usize, usize), noise_vocab: usize, pool_size: usize, strength: f64) -> Self {
        FieldSpec { length, noise_vocab, pool_size, strength: [strength; 4] }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.length.0 > self.length.1 || self.length.0 == 0 {
            return Err(Error::config(format!("synth {name}: length range must be 1 <= lo <= hi")));
        }
        if self.noise_vocab == 0 || self.pool_size == 0 {
            return Err(Error::config(format!("synth {name}: vocabularies must be non-empty")));
        }
        if self.strength.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config(format!("synth {name}: strengths must lie in [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_docs: usize,
    /// U, LOU, C, S.
    pub priors: [f64; 4],
    pub body: FieldSpec,
    pub subject: FieldSpec,
    /// Items are one- or two-word phrases.
    pub concepts: FieldSpec,
    pub tags: FieldSpec,
    /// One sender and one recipient post per cable.
    pub sender_recipient: FieldSpec,
    pub office: FieldSpec,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_docs: 10_000,
            priors: [0.375, 0.286, 0.276, 0.063],
            body: FieldSpec::uniform((25, 45), 3000, 40, 0.10),
            subject: FieldSpec::uniform((4, 8), 1500, 30, 0.16),
            concepts: FieldSpec::uniform((2, 4), 400, 25, 0.16),
            tags: FieldSpec::uniform((2, 4), 150, 12, 0.14),
            sender_recipient: FieldSpec::uniform((1, 1), 120, 8, 0.10),
            office: FieldSpec::uniform((1, 1), 40, 4, 0.25),
            start: NaiveDate::from_ymd_opt(1973, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(1979, 12, 31).unwrap(),
            seed: DEFAULT_SEED,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.priors.iter().sum();
        if self.priors.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("synth priors must be probabilities summing to 1"));
        }
        if self.start > self.end {
            return Err(Error::config("synth start date is after end date"));
        }
        for (name, f) in self.fields() {
            f.validate(name)?;
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, &FieldSpec); 6] {
        [
            ("body", &self.body),
            ("subject", &self.subject),
            ("concepts", &self.concepts),
            ("tags", &self.tags),
            ("sender_recipient", &self.sender_recipient),
            ("office", &self.office),
        ]
    }
}

const ONSETS: [&str; 16] = ["B", "D", "F", "G", "K", "L", "M", "N", "P", "R", "S", "T", "V", "Z", "BR", "KR"];
const VOWELS: [&str; 5] = ["A", "E", "I", "O", "U"];

struct WordFactory<R: Rng> {
    rng: R,
    used: HashSet<String>,
    banned: HashSet<String>,
}

impl<R: Rng> WordFactory<R> {
    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[self.rng.gen_range(0..ONSETS.len())]);
                w.push_str(VOWELS[self.rng.gen_range(0..VOWELS.len())]);
            }
            if !self.banned.contains(&w) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

struct FieldVocab {
    noise: Vec<String>,
    zipf: WeightedIndex<f64>,
    pools: [Vec<String>; 4],
}

impl FieldVocab {
    fn new<R: Rng>(f: &FieldSpec, words: &mut WordFactory<R>) -> Self {
        let noise = words.words(f.noise_vocab);
        let zipf = WeightedIndex::new((1..=f.noise_vocab).map(|r| 1.0 / r as f64)).unwrap();
        let pools = std::array::from_fn(|_| words.words(f.pool_size));
        FieldVocab { noise, zipf, pools }
    }

    fn draw<R: Rng>(&self, f: &FieldSpec, level: usize, rng: &mut R) -> &str {
        if rng.gen_bool(f.strength[level]) {
            &self.pools[level][rng.gen_range(0..self.pools[level].len())]
        } else {
            &self.noise[self.zipf.sample(rng)]
        }
    }

    fn draw_n<R: Rng>(&self, f: &FieldSpec, level: usize, rng: &mut R) -> Vec<String> {
        let n = rng.gen_range(f.length.0..=f.length.1);
        (0..n).map(|_| self.draw(f, level, rng).to_string()).collect()
    }
}

/// Generates `spec.n_docs` FULL cables. Output depends only on the spec.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Cable>> {
    spec.validate()?;
    let tok = TokenizerConfig::default();
    let banned: HashSet<String> = tok
        .stopwords
        .iter()
        .cloned()
        .chain(tok.gazetteer.iter().flat_map(|g| g.split_whitespace().map(str::to_string).collect::<Vec<_>>()))
        .collect();
    let mut words = WordFactory { rng: rng_for(spec.seed, 0), used: HashSet::new(), banned };
    let vocabs: Vec<FieldVocab> = spec.fields().iter().map(|(_, f)| FieldVocab::new(f, &mut words)).collect();
    let [body_v, subject_v, concepts_v, tags_v, sr_v, office_v] = &vocabs[..] else { unreachable!() };
    let days = (spec.end - spec.start).num_days() as u64;
    let cum: Vec<f64> = spec
        .priors
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();

    let cables = (0..spec.n_docs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(spec.seed, i as u64 + 1);
            let u: f64 = rng.gen();
            let level = cum.iter().position(|&c| u < c).unwrap_or(3);
            let date = spec.start + Days::new(rng.gen_range(0..=days));
            let body = body_v.draw_n(&spec.body, level, &mut rng).join(" ");
            let subject = subject_v.draw_n(&spec.subject, level, &mut rng).join(" ");
            let n_concepts = rng.gen_range(spec.concepts.length.0..=spec.concepts.length.1);
            let concepts: Vec<String> = (0..n_concepts)
                .map(|_| {
                    let first = concepts_v.draw(&spec.concepts, level, &mut rng).to_string();
                    if rng.gen_bool(0.3) {
                        format!("{first} {}", concepts_v.draw(&spec.concepts, level, &mut rng))
                    } else {
                        first
                    }
                })
                .collect();
            let tags = tags_v.draw_n(&spec.tags, level, &mut rng);
            let from_field = sr_v.draw(&spec.sender_recipient, level, &mut rng).to_string();
            let to_field = sr_v.draw(&spec.sender_recipient, level, &mut rng).to_string();
            let office = office_v.draw(&spec.office, level, &mut rng).to_string();
            Cable {
                doc_id: format!("SYN{i:07}"),
                date: Some(date),
                date_unparsed: false,
                from_field,
                to_field,
                office,
                tags,
                concepts,
                subject,
                body,
                orig_class: Some(ClassificationLevel::ALL[level]),
                kind: CableKind::Full,
                body_status: BodyStatus::Text,
                blank: BlankFields::default(),
            }
        })
        .collect();
    Ok(cables)
}
