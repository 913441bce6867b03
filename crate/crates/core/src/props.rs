//! Per-review property scores in `[0, 1]`.
//!
//! Six properties describe how useful a review is from different angles:
//! recency, length, star rating, sentiment polarity strength, helpful votes
//! and predicted helpfulness. The last two pairs can come from external
//! classifiers via precomputed score files, or from built-in proxies.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyId {
    Age,
    Length,
    Rating,
    PolarSenti,
    Helpful,
    ProbHelpful,
}

impl PropertyId {
    pub const ALL: [PropertyId; 6] = [
        PropertyId::Age,
        PropertyId::Length,
        PropertyId::Rating,
        PropertyId::PolarSenti,
        PropertyId::Helpful,
        PropertyId::ProbHelpful,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PropertyId::Age => "age",
            PropertyId::Length => "length",
            PropertyId::Rating => "rating",
            PropertyId::PolarSenti => "polar_senti",
            PropertyId::Helpful => "helpful",
            PropertyId::ProbHelpful => "prob_helpful",
        }
    }
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PropertyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PropertyId::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown property `{s}`")))
    }
}

/// Row-major review x property scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMatrix {
    columns: Vec<PropertyId>,
    scores: Vec<f64>,
}

impl PropertyMatrix {
    pub fn new(columns: Vec<PropertyId>, scores: Vec<f64>) -> Result<Self> {
        if columns.is_empty() || !scores.len().is_multiple_of(columns.len()) {
            return Err(Error::Data("property matrix shape is inconsistent".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Data(format!("property score {bad} outside [0, 1]")));
        }
        Ok(PropertyMatrix { columns, scores })
    }

    pub fn columns(&self) -> &[PropertyId] {
        &self.columns
    }

    pub fn num_properties(&self) -> usize {
        self.columns.len()
    }

    pub fn num_reviews(&self) -> usize {
        self.scores.len() / self.columns.len()
    }

    pub fn row(&self, review: u32) -> &[f64] {
        let k = self.columns.len();
        let start = review as usize * k;
        &self.scores[start..start + k]
    }

    pub fn column(&self, prop: PropertyId) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|&p| p == prop)?;
        Some(self.scores.iter().skip(c).step_by(self.columns.len()).copied().collect())
    }

    /// Restricts the matrix to `props`, in the given order.
    pub fn select(&self, props: &[PropertyId]) -> Result<PropertyMatrix> {
        let cols = props
            .iter()
            .map(|p| {
                self.column(*p)
                    .ok_or_else(|| Error::Config(format!("property `{p}` not in matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.num_reviews();
        let mut scores = Vec::with_capacity(n * props.len());
        for r in 0..n {
            scores.extend(cols.iter().map(|c| c[r]));
        }
        PropertyMatrix::new(props.to_vec(), scores)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["review_id".to_string()];
        header.extend(self.columns.iter().map(|p| p.name().to_string()));
        w.write_record(&header)?;
        for r in 0..self.num_reviews() {
            let mut rec = vec![r.to_string()];
            rec.extend(self.row(r as u32).iter().map(|s| format!("{s:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("review_id") {
            return Err(Error::format(path, "first column must be review_id"));
        }
        let columns = headers
            .iter()
            .skip(1)
            .map(PropertyId::from_str)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut scores = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let id: usize = rec[0]
                .parse()
                .map_err(|_| Error::format(path, format!("bad review_id on row {}", n + 1)))?;
            if id != n {
                return Err(Error::format(path, format!("rows must be ordered by review_id, row {n}")));
            }
            for field in rec.iter().skip(1) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::format(path, format!("bad score `{field}`")))?;
                scores.push(v);
            }
        }
        PropertyMatrix::new(columns, scores)
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// `(x - min) / (max - min)`; a degenerate range maps everything to 0.5.
pub fn minmax_normalize(raw: &[f64]) -> Vec<f64> {
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi <= lo {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// `1 - d / max(D)` where `d` is the review's age in days relative to the
/// newest review in the dataset.
pub fn score_age(ds: &Dataset) -> Vec<f64> {
    let newest = ds.reviews.iter().map(|r| r.timestamp).max().unwrap_or(0);
    let oldest = ds.reviews.iter().map(|r| r.timestamp).min().unwrap_or(0);
    let max_age = (newest - oldest) as f64;
    if max_age == 0.0 {
        return vec![1.0; ds.reviews.len()];
    }
    ds.reviews
        .iter()
        .map(|r| 1.0 - (newest - r.timestamp) as f64 / max_age)
        .collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn score_length(ds: &Dataset) -> Vec<f64> {
    let raw: Vec<f64> = ds.reviews.iter().map(|r| word_count(&r.text) as f64).collect();
    minmax_normalize(&raw)
}

pub fn score_rating(ds: &Dataset) -> Vec<f64> {
    let raw: Vec<f64> = ds.reviews.iter().map(|r| r.rating as f64).collect();
    minmax_normalize(&raw)
}

pub fn score_helpful(ds: &Dataset) -> Vec<f64> {
    let raw: Vec<f64> = ds.reviews.iter().map(|r| r.helpful_votes as f64).collect();
    minmax_normalize(&raw)
}

/// Where a classifier-backed property comes from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ScoreSource {
    /// Built-in heuristic stand-in for the classifier.
    #[default]
    Proxy,
    /// CSV with header `review_id,score`.
    File { path: PathBuf },
}

/// Reads a `review_id,score` file that must cover every review in `0..n`.
pub fn load_score_file(path: &Path, n: usize) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["review_id", "score"] {
        return Err(Error::format(path, "expected header `review_id,score`"));
    }
    let mut scores = vec![None; n];
    for rec in rdr.records() {
        let rec = rec?;
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("bad review_id `{}`", &rec[0])))?;
        let score: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("bad score `{}`", &rec[1])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::format(path, format!("score {score} for review {id} outside [0, 1]")));
        }
        // Ids outside the dataset are ignored.
        if let Some(slot) = scores.get_mut(id) {
            *slot = Some(score);
        }
    }
    let missing: Vec<usize> = (0..n).filter(|&i| scores[i].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} is missing {} review ids: {:?}",
            path.display(),
            missing.len(),
            missing
        )));
    }
    Ok(scores.into_iter().flatten().collect())
}

const POSITIVE_WORDS: &[&str] = &[
    "amazing", "awesome", "beautiful", "best", "brilliant", "clean", "comfortable", "delicious",
    "delightful", "enjoy", "enjoyed", "excellent", "fantastic", "fast", "favorite", "fresh",
    "friendly", "glad", "good", "great", "happy", "helpful", "impressive", "love", "loved",
    "lovely", "nice", "perfect", "pleasant", "recommend", "reliable", "satisfied", "solid",
    "superb", "sturdy", "tasty", "terrific", "wonderful", "worth", "yummy",
];

const NEGATIVE_WORDS: &[&str] = &[
    "angry", "awful", "bad", "bland", "broke", "broken", "cheap", "cold", "terrible", "dirty",
    "disappointed", "disappointing", "disgusting", "flimsy", "horrible", "hate", "hated",
    "junk", "mediocre", "mess", "noisy", "overpriced", "poor", "refund", "return", "returned",
    "rude", "slow", "smelly", "stale", "useless", "unhappy", "unfriendly", "waste", "worse",
    "worst", "wrong", "defective", "annoying", "avoid",
];

/// Counts (positive, negative) lexicon hits after lowercasing and trimming
/// punctuation from each whitespace token.
pub fn lexicon_hits(text: &str) -> (usize, usize) {
    let pos: HashSet<&str> = POSITIVE_WORDS.iter().copied().collect();
    let neg: HashSet<&str> = NEGATIVE_WORDS.iter().copied().collect();
    let mut hits = (0, 0);
    for token in text.split_whitespace() {
        let word = token
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        if pos.contains(word.as_str()) {
            hits.0 += 1;
        } else if neg.contains(word.as_str()) {
            hits.1 += 1;
        }
    }
    hits
}

/// `|pos - neg| / (pos + neg)`, or 0.5 with no lexicon hits.
pub fn polarity_proxy(text: &str) -> f64 {
    let (pos, neg) = lexicon_hits(text);
    if pos + neg == 0 {
        return 0.5;
    }
    (pos as f64 - neg as f64).abs() / (pos + neg) as f64
}

pub fn score_polar_senti(ds: &Dataset, source: &ScoreSource) -> Result<Vec<f64>> {
    match source {
        ScoreSource::Proxy => Ok(ds.reviews.iter().map(|r| polarity_proxy(&r.text)).collect()),
        ScoreSource::File { path } => load_score_file(path, ds.reviews.len()),
    }
}

/// Logistic of the standardized `ln(1 + votes)`; all-equal votes give 0.5.
pub fn vote_ratio_proxy(votes: &[u64]) -> Vec<f64> {
    let logs: Vec<f64> = votes.iter().map(|&v| (v as f64).ln_1p()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return vec![0.5; logs.len()];
    }
    let std = var.sqrt();
    logs.iter()
        .map(|x| 1.0 / (1.0 + (-(x - mean) / std).exp()))
        .collect()
}

pub fn score_prob_helpful(ds: &Dataset, source: &ScoreSource) -> Result<Vec<f64>> {
    match source {
        ScoreSource::Proxy => {
            let votes: Vec<u64> = ds.reviews.iter().map(|r| r.helpful_votes).collect();
            Ok(vote_ratio_proxy(&votes))
        }
        ScoreSource::File { path } => load_score_file(path, ds.reviews.len()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub polar_senti: ScoreSource,
    pub prob_helpful: ScoreSource,
}

/// Computes all six property columns in [`PropertyId::ALL`] order.
pub fn assemble(ds: &Dataset, scorers: &ScorerConfig) -> Result<PropertyMatrix> {
    let columns = [
        score_age(ds),
        score_length(ds),
        score_rating(ds),
        score_polar_senti(ds, &scorers.polar_senti)?,
        score_helpful(ds),
        score_prob_helpful(ds, &scorers.prob_helpful)?,
    ];
    let n = ds.reviews.len();
    let mut scores = Vec::with_capacity(n * columns.len());
    for r in 0..n {
        scores.extend(columns.iter().map(|c| c[r]));
    }
    PropertyMatrix::new(PropertyId::ALL.to_vec(), scores)
}
