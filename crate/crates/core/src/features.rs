//! Per-field vocabularies and fixed-width sparse document vectors.
//!
//! Each field gets its own vocabulary (top-N grams by corpus term
//! frequency after a document-frequency floor). Field vectors are laid out
//! side by side in a [`FeatureSpace`] at exclusive prefix-sum offsets.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{FieldTokens, TokenizerConfig};

pub const FEATURE_SPACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Field {
    Subject,
    Concepts,
    Body,
    Tags,
    SenderRecipient,
    Office,
    AllText,
}

impl Field {
    pub const ALL: [Field; 7] = [
        Field::Subject,
        Field::Concepts,
        Field::Body,
        Field::Tags,
        Field::SenderRecipient,
        Field::Office,
        Field::AllText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Subject => "subject",
            Field::Concepts => "concepts",
            Field::Body => "body",
            Field::Tags => "tags",
            Field::SenderRecipient => "sender_recipient",
            Field::Office => "office",
            Field::AllText => "all_text",
        }
    }

    pub fn tokens(self, ft: &FieldTokens) -> std::borrow::Cow<'_, [String]> {
        use std::borrow::Cow;
        match self {
            Field::Subject => Cow::Borrowed(&ft.subject),
            Field::Concepts => Cow::Borrowed(&ft.concepts),
            Field::Body => Cow::Borrowed(&ft.body),
            Field::Tags => Cow::Borrowed(&ft.tags),
            Field::SenderRecipient => Cow::Borrowed(&ft.sender_recipient),
            Field::Office => Cow::Borrowed(&ft.office),
            Field::AllText => Cow::Owned(ft.all_text()),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let canon: String = s.to_lowercase().replace(['-', '/'], "_");
        Field::ALL
            .into_iter()
            .find(|f| f.as_str() == canon || (canon == "embassy" && *f == Field::SenderRecipient))
            .ok_or_else(|| Error::config(format!("unknown field {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    TermCount,
    Tfidf,
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "term_count" | "count" | "tf" => Ok(Weighting::TermCount),
            "tfidf" => Ok(Weighting::Tfidf),
            _ => Err(Error::config(format!("unknown weighting {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub field: Field,
    pub max_vocab: usize,
    pub ngram_range: (usize, usize),
    pub min_doc_freq: u64,
    pub weighting: Weighting,
}

impl FieldConfig {
    /// Tuned vocabulary sizes and n-gram ranges per field. Code-like
    /// fields (TAGS, office, sender/recipient) keep grams seen in at least
    /// six cables; free-text fields drop hapaxes.
    pub fn default_for(field: Field) -> Self {
        let (max_vocab, ngram_range, min_doc_freq) = match field {
            Field::Subject => (8000, (1, 1), 2),
            Field::Concepts => (650, (1, 2), 2),
            Field::Body => (15000, (1, 1), 2),
            Field::Tags => (844, (1, 1), 6),
            Field::SenderRecipient => (1036, (1, 1), 6),
            Field::Office => (170, (1, 1), 6),
            Field::AllText => (15000, (1, 1), 2),
        };
        FieldConfig { field, max_vocab, ngram_range, min_doc_freq, weighting: Weighting::TermCount }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ngram_range;
        if !(1 <= lo && lo <= hi && hi <= 2) {
            return Err(Error::config(format!(
                "{}: n-gram range ({lo},{hi}) must satisfy 1 <= lo <= hi <= 2",
                self.field
            )));
        }
        if self.max_vocab == 0 {
            return Err(Error::config(format!("{}: max_vocab must be >= 1", self.field)));
        }
        if self.min_doc_freq == 0 {
            return Err(Error::config(format!("{}: min_doc_freq must be >= 1", self.field)));
        }
        Ok(())
    }
}

/// The six single fields followed by ALL_TEXT.
pub fn default_field_configs() -> Vec<FieldConfig> {
    Field::ALL.into_iter().map(FieldConfig::default_for).collect()
}

/// Contiguous n-grams for every n in `range`, unigrams first. Bigrams are
/// joined with a single space.
pub fn extract_ngrams(tokens: &[String], range: (usize, usize)) -> Vec<String> {
    let (lo, hi) = range;
    let mut out = Vec::new();
    for n in lo..=hi {
        if n == 0 || n > tokens.len() {
            continue;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

/// Sparse vector over a fixed width; columns strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
    width: usize,
}

impl SparseVector {
    pub fn new(indices: Vec<u32>, values: Vec<f64>, width: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::data("sparse vector: index/value length mismatch"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("sparse vector: columns must be strictly increasing"));
        }
        if indices.last().is_some_and(|&i| i as usize >= width) {
            return Err(Error::data("sparse vector: column out of range"));
        }
        Ok(SparseVector { indices, values, width })
    }

    /// Builds from unsorted `(column, value)` pairs, summing duplicates.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>, width: usize) -> Result<Self> {
        pairs.sort_by_key(|p| p.0);
        let mut indices: Vec<u32> = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        SparseVector::new(indices, values, width)
    }

    pub fn zeros(width: usize) -> Self {
        SparseVector { indices: Vec::new(), values: Vec::new(), width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, col: u32) -> f64 {
        match self.indices.binary_search(&col) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| dense[i as usize] * v).sum()
    }

    /// Same entries in a wider space (the extra columns are all zero).
    pub fn widen(&self, width: usize) -> Self {
        assert!(width >= self.width);
        SparseVector { width, ..self.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Row-compressed matrix used by the learners.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    width: usize,
}

impl SparseMatrix {
    pub fn from_rows(rows: &[SparseVector], width: usize) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let nnz: usize = rows.iter().map(|r| r.nnz()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for r in rows {
            if r.width() != width {
                return Err(Error::data(format!(
                    "row width {} does not match feature width {width}",
                    r.width()
                )));
            }
            indices.extend_from_slice(r.indices());
            values.extend_from_slice(r.values());
            indptr.push(indices.len());
        }
        Ok(SparseMatrix { indptr, indices, values, width })
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_dot(&self, i: usize, dense: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, &v)| dense[j as usize] * v).sum()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Token → column mapping for one field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    config: FieldConfig,
    tokens: Vec<String>,
    doc_freq: Vec<u64>,
    n_docs: u64,
    index: HashMap<String, u32>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabularyData {
    config: FieldConfig,
    tokens: Vec<String>,
    doc_freq: Vec<u64>,
    n_docs: u64,
}

impl From<VocabularyData> for Vocabulary {
    fn from(d: VocabularyData) -> Self {
        let index = d.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { config: d.config, tokens: d.tokens, doc_freq: d.doc_freq, n_docs: d.n_docs, index }
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData { config: v.config, tokens: v.tokens, doc_freq: v.doc_freq, n_docs: v.n_docs }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config
            && self.tokens == o.tokens
            && self.doc_freq == o.doc_freq
            && self.n_docs == o.n_docs
    }
}

/// Mergeable corpus and document frequencies of grams.
#[derive(Debug, Default, Clone)]
pub struct TermCounts {
    counts: HashMap<String, (u64, u64)>,
    n_docs: u64,
}

impl TermCounts {
    pub fn add_doc(&mut self, grams: Vec<String>) {
        self.n_docs += 1;
        let mut seen: HashMap<&str, ()> = HashMap::new();
        let mut uniq: Vec<String> = Vec::new();
        for g in &grams {
            if seen.insert(g.as_str(), ()).is_none() {
                uniq.push(g.clone());
            }
        }
        for g in grams {
            self.counts.entry(g).or_insert((0, 0)).0 += 1;
        }
        for g in uniq {
            self.counts.get_mut(&g).unwrap().1 += 1;
        }
    }

    pub fn merge(mut self, other: TermCounts) -> TermCounts {
        self.n_docs += other.n_docs;
        for (g, (tf, df)) in other.counts {
            let e = self.counts.entry(g).or_insert((0, 0));
            e.0 += tf;
            e.1 += df;
        }
        self
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

impl Vocabulary {
    pub fn build<D: AsRef<[String]> + Sync>(docs: &[D], config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let counts = docs
            .par_iter()
            .fold(TermCounts::default, |mut acc, doc| {
                acc.add_doc(extract_ngrams(doc.as_ref(), config.ngram_range));
                acc
            })
            .reduce(TermCounts::default, TermCounts::merge);
        Vocabulary::from_counts(counts, config)
    }

    pub fn from_counts(counts: TermCounts, config: FieldConfig) -> Result<Self> {
        config.validate()?;
        if counts.n_docs == 0 {
            return Err(Error::data(format!("{}: cannot build a vocabulary from zero documents", config.field)));
        }
        let mut kept: Vec<(String, u64, u64)> = counts
            .counts
            .into_iter()
            .filter(|(_, (_, df))| *df >= config.min_doc_freq)
            .map(|(g, (tf, df))| (g, tf, df))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(config.max_vocab);
        if kept.is_empty() {
            return Err(Error::data(format!(
                "{}: empty vocabulary (no gram reaches document frequency {})",
                config.field, config.min_doc_freq
            )));
        }
        let (tokens, doc_freq): (Vec<String>, Vec<u64>) =
            kept.into_iter().map(|(g, _, df)| (g, df)).unzip();
        Ok(VocabularyData { config, tokens, doc_freq, n_docs: counts.n_docs }.into())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn column(&self, gram: &str) -> Option<u32> {
        self.index.get(gram).copied()
    }

    pub fn doc_freq(&self, col: u32) -> u64 {
        self.doc_freq[col as usize]
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    /// `ln(M / df)`.
    pub fn idf(&self, col: u32) -> f64 {
        (self.n_docs as f64 / self.doc_freq(col) as f64).ln()
    }

    fn counts(&self, tokens: &[String]) -> Vec<(u32, f64)> {
        let mut cols: Vec<u32> = extract_ngrams(tokens, self.config.ngram_range)
            .iter()
            .filter_map(|g| self.column(g))
            .collect();
        cols.sort_unstable();
        let mut out: Vec<(u32, f64)> = Vec::new();
        for c in cols {
            match out.last_mut() {
                Some((last, n)) if *last == c => *n += 1.0,
                _ => out.push((c, 1.0)),
            }
        }
        out
    }

    pub fn vectorize_count(&self, tokens: &[String]) -> SparseVector {
        let (i, v) = self.counts(tokens).into_iter().unzip();
        SparseVector { indices: i, values: v, width: self.len() }
    }

    /// `tf * (1 + idf)` per in-vocabulary gram.
    pub fn vectorize_tfidf(&self, tokens: &[String]) -> SparseVector {
        let (i, v) = self
            .counts(tokens)
            .into_iter()
            .map(|(c, tf)| (c, tf * (1.0 + self.idf(c))))
            .unzip();
        SparseVector { indices: i, values: v, width: self.len() }
    }

    pub fn vectorize(&self, tokens: &[String]) -> SparseVector {
        match self.config.weighting {
            Weighting::TermCount => self.vectorize_count(tokens),
            Weighting::Tfidf => self.vectorize_tfidf(tokens),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBlock {
    pub offset: usize,
    pub vocabulary: Vocabulary,
}

/// Ordered field blocks and the tokenizer that produced their tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub version: u32,
    pub tokenizer: TokenizerConfig,
    pub blocks: Vec<FieldBlock>,
    pub width: usize,
}

impl FeatureSpace {
    pub fn from_vocabularies(tokenizer: TokenizerConfig, vocabs: Vec<Vocabulary>) -> Result<Self> {
        let mut offset = 0;
        let mut blocks = Vec::with_capacity(vocabs.len());
        for v in vocabs {
            let len = v.len();
            blocks.push(FieldBlock { offset, vocabulary: v });
            offset += len;
        }
        if offset == 0 {
            return Err(Error::config("feature space has zero width"));
        }
        Ok(FeatureSpace { version: FEATURE_SPACE_VERSION, tokenizer, blocks, width: offset })
    }

    /// Builds every configured field's vocabulary from the training
    /// documents.
    pub fn build(
        docs: &[FieldTokens],
        configs: &[FieldConfig],
        tokenizer: TokenizerConfig,
    ) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::config("no feature fields configured"));
        }
        let mut vocabs = Vec::with_capacity(configs.len());
        for cfg in configs {
            let field_docs: Vec<_> = docs.iter().map(|d| cfg.field.tokens(d)).collect();
            vocabs.push(Vocabulary::build(&field_docs, *cfg)?);
        }
        FeatureSpace::from_vocabularies(tokenizer, vocabs)
    }

    /// Concatenated field vectors, each shifted by its block offset.
    pub fn assemble(&self, doc: &FieldTokens) -> SparseVector {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for block in &self.blocks {
            let field = block.vocabulary.config().field;
            let v = block.vocabulary.vectorize(&field.tokens(doc));
            indices.extend(v.indices.iter().map(|&i| i + block.offset as u32));
            values.extend(v.values);
        }
        SparseVector { indices, values, width: self.width }
    }

    pub fn fields(&self) -> Vec<Field> {
        self.blocks.iter().map(|b| b.vocabulary.config().field).collect()
    }

    /// Human-readable name of a column, `field:gram`.
    pub fn column_name(&self, col: usize) -> Option<String> {
        let block = self.blocks.iter().rev().find(|b| b.offset <= col)?;
        let v = &block.vocabulary;
        v.tokens().get(col - block.offset).map(|t| format!("{}:{t}", v.config().field))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn cfg(max_vocab: usize, df: u64) -> FieldConfig {
        FieldConfig { field: Field::Body, max_vocab, ngram_range: (1, 1), min_doc_freq: df, weighting: Weighting::TermCount }
    }

    #[test]
    fn ngrams() {
        let t = s(&["A", "B", "C"]);
        assert_eq!(extract_ngrams(&t, (1, 1)), s(&["A", "B", "C"]));
        assert_eq!(extract_ngrams(&t, (1, 2)), s(&["A", "B", "C", "A B", "B C"]));
        assert_eq!(extract_ngrams(&t, (2, 2)), s(&["A B", "B C"]));
        assert!(extract_ngrams(&[], (1, 2)).is_empty());
        assert_eq!(extract_ngrams(&s(&["A"]), (1, 2)), s(&["A"]));
    }

    #[test]
    fn config_defaults_and_validation() {
        let total: usize = default_field_configs().iter().map(|c| c.max_vocab).sum();
        assert_eq!(total, 40_700);
        let c = FieldConfig::default_for(Field::Concepts);
        assert_eq!(c.ngram_range, (1, 2));
        assert_eq!(FieldConfig::default_for(Field::Tags).min_doc_freq, 6);
        let mut bad = c;
        bad.ngram_range = (1, 3);
        assert!(bad.validate().is_err());
        bad.ngram_range = (2, 1);
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.max_vocab = 0;
        assert!(bad.validate().is_err());
    }

    fn docs3() -> Vec<Vec<String>> {
        vec![s(&["A", "A", "B"]), s(&["A", "C"]), s(&["B"])]
    }

    #[test]
    fn vocabulary_ranks_by_term_frequency() {
        let docs = docs3();
        let v = Vocabulary::build(&docs, cfg(2, 1)).unwrap();
        assert_eq!(v.tokens(), &s(&["A", "B"]));
        assert_eq!(v.column("A"), Some(0));
        assert_eq!(v.column("C"), None);
        assert_eq!(v.n_docs(), 3);
        assert_eq!(v.doc_freq(0), 2);
    }

    #[test]
    fn df_floor_applies_before_ranking() {
        let docs = docs3();
        let v = Vocabulary::build(&docs, cfg(3, 2)).unwrap();
        assert_eq!(v.tokens(), &s(&["A", "B"]));
        let err = Vocabulary::build(&docs, cfg(3, 4)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn ties_break_lexicographically() {
        let docs = vec![s(&["Z", "M", "A"]), s(&["Z", "M", "A"])];
        let v = Vocabulary::build(&docs, cfg(10, 1)).unwrap();
        assert_eq!(v.tokens(), &s(&["A", "M", "Z"]));
    }

    #[test]
    fn count_vectors() {
        let docs = docs3();
        let v = Vocabulary::build(&docs, cfg(2, 1)).unwrap();
        let x = v.vectorize_count(&s(&["A", "A", "B"]));
        assert_eq!(x.iter().collect::<Vec<_>>(), vec![(0, 2.0), (1, 1.0)]);
        assert_eq!(v.vectorize_count(&s(&["C"])).nnz(), 0);
    }

    #[test]
    fn tfidf_values() {
        let data = VocabularyData {
            config: FieldConfig { weighting: Weighting::Tfidf, ..cfg(10, 1) },
            tokens: s(&["A", "ALL"]),
            doc_freq: vec![2, 4],
            n_docs: 4,
        };
        let v: Vocabulary = data.into();
        let x = v.vectorize_tfidf(&s(&["A", "A", "A", "ALL", "ALL"]));
        let expected_a = 3.0 * (1.0 + 2f64.ln());
        assert!((x.get(0) - expected_a).abs() < 1e-12);
        assert!((x.get(0) - 5.0794415416798357).abs() < 1e-12);
        assert_eq!(x.get(1), 2.0);
        assert_eq!(v.vectorize_tfidf(&s(&["ALL"])).iter().collect::<Vec<_>>(), vec![(1, 1.0)]);
        assert_eq!(v.vectorize_tfidf(&s(&["Q"])).nnz(), 0);
    }

    #[test]
    fn assemble_offsets_blocks() {
        let mk = |field, toks: &[&str]| -> Vocabulary {
            VocabularyData {
                config: FieldConfig { field, ..cfg(10, 1) },
                tokens: s(toks),
                doc_freq: vec![1; toks.len()],
                n_docs: 1,
            }
            .into()
        };
        let space = FeatureSpace::from_vocabularies(
            TokenizerConfig::default(),
            vec![mk(Field::Subject, &["X", "Y", "Z"]), mk(Field::Body, &["P", "Q"])],
        )
        .unwrap();
        assert_eq!(space.width, 5);
        let doc = FieldTokens { subject: s(&["Y"]), body: s(&["P", "P", "P", "P"]), ..Default::default() };
        let x = space.assemble(&doc);
        assert_eq!(x.iter().collect::<Vec<_>>(), vec![(1, 1.0), (3, 4.0)]);
        assert_eq!(space.column_name(3).as_deref(), Some("body:P"));
        let empty = space.assemble(&FieldTokens { subject: s(&["X"]), ..Default::default() });
        assert_eq!(empty.iter().collect::<Vec<_>>(), vec![(0, 1.0)]);
    }

    #[test]
    fn zero_width_space_rejected() {
        assert!(FeatureSpace::from_vocabularies(TokenizerConfig::default(), vec![]).is_err());
    }

    #[test]
    fn sparse_vector_validation() {
        assert!(SparseVector::new(vec![1, 1], vec![1.0, 1.0], 3).is_err());
        assert!(SparseVector::new(vec![3], vec![1.0], 3).is_err());
        let v = SparseVector::from_pairs(vec![(2, 1.0), (0, 1.0), (2, 2.0)], 3).unwrap();
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![(0, 1.0), (2, 3.0)]);
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let docs = docs3();
        let v = Vocabulary::build(&docs, cfg(2, 1)).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.column("B"), Some(1));
    }

    fn arb_docs() -> impl Strategy<Value = Vec<Vec<String>>> {
        prop::collection::vec(
            prop::collection::vec(prop::sample::select(vec!["A", "B", "C", "D", "E", "F", "G"]).prop_map(String::from), 0..12),
            1..20,
        )
    }

    proptest! {
        #[test]
        fn ranking_and_determinism(docs in arb_docs(), max_vocab in 1usize..8, bigrams in any::<bool>()) {
            let c = FieldConfig { ngram_range: (1, if bigrams { 2 } else { 1 }), ..cfg(max_vocab, 1) };
            let Ok(v) = Vocabulary::build(&docs, c) else {
                prop_assert!(docs.iter().all(|d| d.is_empty()));
                return Ok(());
            };
            // brute-force term frequencies
            let mut tf: HashMap<String, u64> = HashMap::new();
            for d in &docs {
                for g in extract_ngrams(d, c.ngram_range) {
                    *tf.entry(g).or_default() += 1;
                }
            }
            for w in v.tokens().windows(2) {
                let (a, b) = (&w[0], &w[1]);
                prop_assert!(tf[a] > tf[b] || (tf[a] == tf[b] && a < b));
            }
            let again = Vocabulary::build(&docs, c).unwrap();
            prop_assert_eq!(serde_json::to_string(&v).unwrap(), serde_json::to_string(&again).unwrap());

            for d in &docs {
                let x = v.vectorize_count(d);
                let in_vocab = extract_ngrams(d, c.ngram_range).iter().filter(|g| v.column(g).is_some()).count();
                prop_assert_eq!(x.values().iter().sum::<f64>(), in_vocab as f64);
                let t = v.vectorize_tfidf(d);
                prop_assert_eq!(t.indices(), x.indices());
                for ((col, cv), tv) in x.iter().zip(t.values()) {
                    let expected = cv * (1.0 + v.idf(col));
                    prop_assert!((expected - tv).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn assemble_stays_in_bounds(docs in arb_docs()) {
            let fts: Vec<FieldTokens> = docs.iter().map(|d| FieldTokens {
                subject: d.clone(),
                body: d.iter().rev().cloned().collect(),
                tags: d.clone(),
                ..Default::default()
            }).collect();
            let configs = [
                FieldConfig { field: Field::Subject, ..cfg(3, 1) },
                FieldConfig { field: Field::Body, ngram_range: (1, 2), ..cfg(5, 1) },
                FieldConfig { field: Field::AllText, ..cfg(4, 1) },
            ];
            let Ok(space) = FeatureSpace::build(&fts, &configs, TokenizerConfig::default()) else {
                return Ok(());
            };
            let widths: Vec<usize> = space.blocks.iter().map(|b| b.vocabulary.len()).collect();
            prop_assert_eq!(space.width, widths.iter().sum::<usize>());
            for ft in &fts {
                let x = space.assemble(ft);
                prop_assert!(x.indices().iter().all(|&i| (i as usize) < space.width));
                prop_assert!(x.indices().windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
