//! Review ingestion, k-core filtering and per-user chronological splits.
//!
//! Raw dumps are JSONL with one review per line. After filtering, users,
//! items and reviews are indexed contiguously in order of first appearance,
//! so re-ingesting the canonical file reproduces the same ids.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Days since 1970-01-01.
pub type Day = i64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReview {
    pub user_key: String,
    pub item_key: String,
    pub rating: u8,
    pub text: String,
    pub timestamp: Day,
    pub helpful_votes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampUnit {
    /// Strings are parsed as dates, integers as unix seconds.
    #[default]
    Auto,
    Days,
    UnixSeconds,
}

/// Maps the columns of a raw dump onto [`RawReview`] fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMap {
    pub user: String,
    pub item: String,
    pub rating: String,
    pub text: String,
    pub timestamp: String,
    pub helpful_votes: String,
    pub timestamp_unit: TimestampUnit,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            user: "user".into(),
            item: "item".into(),
            rating: "stars".into(),
            text: "text".into(),
            timestamp: "date".into(),
            helpful_votes: "useful".into(),
            timestamp_unit: TimestampUnit::Auto,
        }
    }
}

impl FieldMap {
    /// Field map that reads the canonical dataset file back in.
    pub fn canonical() -> Self {
        FieldMap {
            user: "user_id".into(),
            item: "item_id".into(),
            rating: "rating".into(),
            text: "text".into(),
            timestamp: "timestamp_days".into(),
            helpful_votes: "helpful_votes".into(),
            timestamp_unit: TimestampUnit::Days,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub reviews: Vec<RawReview>,
    pub skipped: usize,
    /// Skip reasons and how often each occurred.
    pub warnings: BTreeMap<String, usize>,
}

pub fn ingest_jsonl(path: &Path, field_map: &FieldMap) -> Result<IngestReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, field_map) {
            Ok(review) => report.reviews.push(review),
            Err(reason) => {
                report.skipped += 1;
                *report.warnings.entry(reason).or_default() += 1;
            }
        }
    }
    Ok(report)
}

fn parse_line(line: &str, map: &FieldMap) -> std::result::Result<RawReview, String> {
    let value: Value = serde_json::from_str(line).map_err(|_| "malformed json".to_string())?;
    let obj = value.as_object().ok_or("line is not an object")?;
    let field = |name: &str| obj.get(name).ok_or_else(|| format!("missing field `{name}`"));

    let key = |name: &str| -> std::result::Result<String, String> {
        match field(name)? {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(format!("field `{name}` is not a key")),
        }
    };

    let rating = field(&map.rating)?
        .as_f64()
        .filter(|r| r.fract() == 0.0 && (1.0..=5.0).contains(r))
        .ok_or_else(|| format!("field `{}` is not a 1-5 rating", map.rating))? as u8;

    let text = field(&map.text)?
        .as_str()
        .ok_or_else(|| format!("field `{}` is not a string", map.text))?
        .to_string();

    let timestamp = parse_timestamp(field(&map.timestamp)?, map.timestamp_unit)
        .ok_or_else(|| format!("field `{}` is not a timestamp", map.timestamp))?;

    // Some dumps store helpfulness as [helpful, total].
    let votes = match field(&map.helpful_votes)? {
        Value::Array(parts) => parts.first().and_then(Value::as_u64),
        v => v.as_u64(),
    }
    .ok_or_else(|| format!("field `{}` is not a vote count", map.helpful_votes))?;

    Ok(RawReview {
        user_key: key(&map.user)?,
        item_key: key(&map.item)?,
        rating,
        text,
        timestamp,
        helpful_votes: votes,
    })
}

fn parse_timestamp(value: &Value, unit: TimestampUnit) -> Option<Day> {
    match (value, unit) {
        (Value::String(s), TimestampUnit::Auto) => parse_date(s),
        (Value::String(s), TimestampUnit::Days) => s.trim().parse().ok(),
        (Value::String(s), TimestampUnit::UnixSeconds) => {
            s.trim().parse::<i64>().ok().map(|t| t.div_euclid(86_400))
        }
        (Value::Number(n), TimestampUnit::Days) => n.as_i64(),
        (Value::Number(n), _) => n.as_i64().map(|t| t.div_euclid(86_400)),
        _ => None,
    }
}

/// Parses `YYYY-MM-DD`, optionally followed by a time part.
pub fn parse_date(s: &str) -> Option<Day> {
    let head = s.trim().get(..10)?;
    let date = NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()?;
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1)?;
    Some((date - epoch).num_days())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: u32,
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: Day,
    pub helpful_votes: u64,
    pub text: String,
}

/// A filtered, indexed review corpus. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
    pub reviews: Vec<Review>,
    /// Review ids of each user, oldest first.
    pub per_user: Vec<Vec<u32>>,
    /// Review ids of each item, oldest first.
    pub per_item: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn review(&self, id: u32) -> &Review {
        &self.reviews[id as usize]
    }

    /// Builds a dataset from reviews that are already indexed. Validates
    /// id ranges and contiguity.
    pub fn from_reviews(
        reviews: Vec<Review>,
        user_keys: Vec<String>,
        item_keys: Vec<String>,
    ) -> Result<Self> {
        let mut per_user = vec![Vec::new(); user_keys.len()];
        let mut per_item = vec![Vec::new(); item_keys.len()];
        for (pos, r) in reviews.iter().enumerate() {
            if r.review_id as usize != pos {
                return Err(Error::Data(format!(
                    "review ids must be contiguous: found {} at position {pos}",
                    r.review_id
                )));
            }
            let u = per_user.get_mut(r.user as usize).ok_or_else(|| {
                Error::Data(format!("review {} has unknown user {}", r.review_id, r.user))
            })?;
            u.push(r.review_id);
            let i = per_item.get_mut(r.item as usize).ok_or_else(|| {
                Error::Data(format!("review {} has unknown item {}", r.review_id, r.item))
            })?;
            i.push(r.review_id);
        }
        // Stable sort keeps input order among same-day reviews.
        for list in per_user.iter_mut().chain(per_item.iter_mut()) {
            list.sort_by_key(|&id| reviews[id as usize].timestamp);
        }
        Ok(Dataset {
            user_keys,
            item_keys,
            reviews,
            per_user,
            per_item,
        })
    }

    pub fn to_raw(&self) -> Vec<RawReview> {
        self.reviews
            .iter()
            .map(|r| RawReview {
                user_key: self.user_keys[r.user as usize].clone(),
                item_key: self.item_keys[r.item as usize].clone(),
                rating: r.rating,
                text: r.text.clone(),
                timestamp: r.timestamp,
                helpful_votes: r.helpful_votes,
            })
            .collect()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.num_users(),
            items: self.num_items(),
            reviews: self.reviews.len(),
        }
    }

    fn canonical_line(r: &Review) -> String {
        serde_json::json!({
            "user_id": r.user,
            "item_id": r.item,
            "review_id": r.review_id,
            "rating": r.rating,
            "timestamp_days": r.timestamp,
            "helpful_votes": r.helpful_votes,
            "text": r.text,
        })
        .to_string()
    }

    /// SHA-256 over the canonical serialization; identifies the dataset in
    /// downstream artifacts.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for r in &self.reviews {
            hasher.update(Self::canonical_line(r).as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Writes the canonical JSONL file plus a `.stats.json` sidecar.
    pub fn write_canonical(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.reviews {
            writeln!(out, "{}", Self::canonical_line(r)).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        let stats_path = stats_path(path);
        let stats = serde_json::to_string_pretty(&self.stats())?;
        std::fs::write(&stats_path, stats).map_err(|e| Error::io(&stats_path, e))?;
        Ok(())
    }

    pub fn load_canonical(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reviews = Vec::new();
        let (mut users, mut items) = (0u32, 0u32);
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: CanonicalRow = serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
            users = users.max(row.user_id + 1);
            items = items.max(row.item_id + 1);
            reviews.push(Review {
                review_id: row.review_id,
                user: row.user_id,
                item: row.item_id,
                rating: row.rating,
                timestamp: row.timestamp_days,
                helpful_votes: row.helpful_votes,
                text: row.text,
            });
        }
        let user_keys = (0..users).map(|u| u.to_string()).collect();
        let item_keys = (0..items).map(|i| i.to_string()).collect();
        Dataset::from_reviews(reviews, user_keys, item_keys)
    }
}

#[derive(Deserialize)]
struct CanonicalRow {
    user_id: u32,
    item_id: u32,
    review_id: u32,
    rating: u8,
    timestamp_days: Day,
    helpful_votes: u64,
    text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub reviews: usize,
}

pub fn stats_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("stats.json")
}

/// Iteratively drops users and items with fewer than `k` reviews until every
/// remaining user and item has at least `k`.
///
/// Repeated (user, item) pairs keep only their earliest review.
pub fn k_core_filter(reviews: &[RawReview], k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::Config("k-core threshold must be >= 1".into()));
    }

    let mut earliest: HashMap<(&str, &str), usize> = HashMap::new();
    for (pos, r) in reviews.iter().enumerate() {
        earliest
            .entry((r.user_key.as_str(), r.item_key.as_str()))
            .and_modify(|best| {
                if r.timestamp < reviews[*best].timestamp {
                    *best = pos;
                }
            })
            .or_insert(pos);
    }
    let mut alive: Vec<bool> = (0..reviews.len())
        .map(|pos| earliest[&(reviews[pos].user_key.as_str(), reviews[pos].item_key.as_str())] == pos)
        .collect();

    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for (r, _) in reviews.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_count.entry(&r.user_key).or_default() += 1;
            *item_count.entry(&r.item_key).or_default() += 1;
        }
        let mut changed = false;
        for (r, a) in reviews.iter().zip(alive.iter_mut()) {
            if *a && (user_count[r.user_key.as_str()] < k || item_count[r.item_key.as_str()] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut user_index: HashMap<&str, u32> = HashMap::new();
    let mut item_index: HashMap<&str, u32> = HashMap::new();
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut kept = Vec::new();
    for (r, _) in reviews.iter().zip(&alive).filter(|(_, a)| **a) {
        let user = *user_index.entry(&r.user_key).or_insert_with(|| {
            user_keys.push(r.user_key.clone());
            (user_keys.len() - 1) as u32
        });
        let item = *item_index.entry(&r.item_key).or_insert_with(|| {
            item_keys.push(r.item_key.clone());
            (item_keys.len() - 1) as u32
        });
        kept.push(Review {
            review_id: kept.len() as u32,
            user,
            item,
            rating: r.rating,
            timestamp: r.timestamp,
            helpful_votes: r.helpful_votes,
            text: r.text.clone(),
        });
    }
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::from_reviews(kept, user_keys, item_keys)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

/// One user's chronological partition, as review ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Vec<u32>,
    /// Timestamp of the last training review.
    pub train_cut: Day,
    /// Timestamp of the last validation review.
    pub valid_cut: Day,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub ratios: SplitRatios,
    pub dataset_hash: String,
    pub users: Vec<UserSplit>,
}

/// Sizes of (train, valid, test) for a user with `n` interactions.
///
/// Ceiling on train then valid, remainder to test. An empty test set takes
/// the last validation interaction, and an emptied validation set takes the
/// last training interaction in turn.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::Data(format!(
            "user with {n} interactions cannot populate train/valid/test"
        )));
    }
    // Tolerance keeps exact products like 0.8 * 15 from rounding up.
    let ceil = |x: f64| (x - 1e-9).ceil().max(0.0) as usize;
    let train = ceil(ratios.train * n as f64).min(n);
    let valid = ceil(ratios.valid * n as f64).min(n - train);
    let (mut train, mut valid, mut test) = (train, valid, n - train - valid);
    if test == 0 {
        if valid > 0 {
            valid -= 1;
        } else {
            train -= 1;
        }
        test += 1;
    }
    if valid == 0 {
        train -= 1;
        valid += 1;
    }
    Ok((train, valid, test))
}

pub fn time_split(ds: &Dataset, ratios: SplitRatios) -> Result<SplitDataset> {
    let sum = ratios.train + ratios.valid + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.train <= 0.0 || ratios.valid <= 0.0 || ratios.test <= 0.0
    {
        return Err(Error::Config(format!("split ratios must be positive and sum to 1, got {ratios:?}")));
    }
    let users = ds
        .per_user
        .iter()
        .enumerate()
        .map(|(u, ids)| {
            let (train, valid, _) = split_sizes(ids.len(), ratios)
                .map_err(|e| Error::Data(format!("user {u}: {e}")))?;
            let (tr, rest) = ids.split_at(train);
            let (va, te) = rest.split_at(valid);
            let last_ts = |s: &[u32]| s.last().map(|&id| ds.review(id).timestamp);
            Ok(UserSplit {
                train: tr.to_vec(),
                valid: va.to_vec(),
                test: te.to_vec(),
                train_cut: last_ts(tr).unwrap_or(Day::MIN),
                valid_cut: last_ts(va).or(last_ts(tr)).unwrap_or(Day::MIN),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitDataset {
        ratios,
        dataset_hash: ds.content_hash(),
        users,
    })
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Checks the split was produced from `ds`.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if self.dataset_hash != ds.content_hash() {
            return Err(Error::Data("split file does not match the dataset".into()));
        }
        if self.users.len() != ds.num_users() {
            return Err(Error::Data("split user count differs from dataset".into()));
        }
        Ok(())
    }

    /// Training review ids of every item, oldest first.
    pub fn train_reviews_per_item(&self, ds: &Dataset) -> Vec<Vec<u32>> {
        let train: HashSet<u32> = self.users.iter().flat_map(|s| s.train.iter().copied()).collect();
        ds.per_item
            .iter()
            .map(|ids| ids.iter().copied().filter(|id| train.contains(id)).collect())
            .collect()
    }

    /// Items each user interacted with in the training split, as sorted sets.
    pub fn train_items(&self, ds: &Dataset) -> Vec<Vec<u32>> {
        self.items_of(ds, |s| &s.train)
    }

    pub fn valid_items(&self, ds: &Dataset) -> Vec<Vec<u32>> {
        self.items_of(ds, |s| &s.valid)
    }

    pub fn test_items(&self, ds: &Dataset) -> Vec<Vec<u32>> {
        self.items_of(ds, |s| &s.test)
    }

    fn items_of(&self, ds: &Dataset, part: impl Fn(&UserSplit) -> &Vec<u32>) -> Vec<Vec<u32>> {
        self.users
            .iter()
            .map(|s| {
                let mut items: Vec<u32> = part(s).iter().map(|&id| ds.review(id).item).collect();
                items.sort_unstable();
                items.dedup();
                items
            })
            .collect()
    }
}
