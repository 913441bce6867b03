//! Full-ranking evaluation, paired significance tests and export of the
//! learned property-importance distributions.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::learn::phi_distribution;
use crate::model::{EntityVectors, Model, Side, Variant};
use crate::props::PropertyId;

/// Per-user item sets of each split partition, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interactions {
    pub num_items: usize,
    pub train: Vec<Vec<u32>>,
    pub valid: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
}

impl Interactions {
    pub fn new(ds: &Dataset, split: &SplitDataset) -> Self {
        Interactions {
            num_items: ds.num_items(),
            train: split.train_items(ds),
            valid: split.valid_items(ds),
            test: split.test_items(ds),
        }
    }

    pub fn num_users(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Validation items ranked among everything outside train.
    Valid,
    /// Test items ranked among everything outside train and validation.
    Test,
}

/// Items sorted by descending score; ties go to the lower item id.
pub fn rank_by_scores(scores: &[f64], exclude: &HashSet<u32>) -> Vec<u32> {
    let mut items: Vec<u32> = (0..scores.len() as u32).filter(|i| !exclude.contains(i)).collect();
    items.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    items
}

pub fn rank_items(user: usize, vectors: &EntityVectors, exclude: &HashSet<u32>) -> Vec<u32> {
    let scores: Vec<f64> = (0..vectors.items.len()).map(|i| vectors.score(user, i)).collect();
    rank_by_scores(&scores, exclude)
}

fn hits_at(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> usize {
    ranked.iter().take(k).filter(|i| relevant.contains(i)).count()
}

pub fn precision_at_k(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be at least 1");
    hits_at(ranked, relevant, k) as f64 / k as f64
}

pub fn recall_at_k(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> Option<f64> {
    assert!(k >= 1, "cutoff must be at least 1");
    (!relevant.is_empty()).then(|| hits_at(ranked, relevant, k) as f64 / relevant.len() as f64)
}

/// Mean of precision at each relevant rank over all relevant items, or
/// `None` when nothing is relevant.
pub fn average_precision(ranked: &[u32], relevant: &HashSet<u32>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranked.iter().enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub ap: f64,
    pub p_at_1: f64,
    pub p_at_10: f64,
    pub r_at_10: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub map: f64,
    pub p_at_1: f64,
    pub p_at_10: f64,
    pub r_at_10: f64,
}

pub const METRICS: [&str; 4] = ["map", "p_at_1", "p_at_10", "r_at_10"];

impl UserMetrics {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "map" | "ap" => Some(self.ap),
            "p_at_1" => Some(self.p_at_1),
            "p_at_10" => Some(self.p_at_10),
            "r_at_10" => Some(self.r_at_10),
            _ => None,
        }
    }
}

impl MetricMeans {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "map" => Some(self.map),
            "p_at_1" => Some(self.p_at_1),
            "p_at_10" => Some(self.p_at_10),
            "r_at_10" => Some(self.r_at_10),
            _ => None,
        }
    }
}

pub fn metrics_for(user: usize, ranked: &[u32], relevant: &HashSet<u32>) -> Option<UserMetrics> {
    Some(UserMetrics {
        user,
        ap: average_precision(ranked, relevant)?,
        p_at_1: precision_at_k(ranked, relevant, 1),
        p_at_10: precision_at_k(ranked, relevant, 10),
        r_at_10: recall_at_k(ranked, relevant, 10)?,
    })
}

pub fn mean_metrics(per_user: &[UserMetrics]) -> MetricMeans {
    if per_user.is_empty() {
        return MetricMeans::default();
    }
    let n = per_user.len() as f64;
    let avg = |f: fn(&UserMetrics) -> f64| per_user.iter().map(f).sum::<f64>() / n;
    MetricMeans {
        map: avg(|m| m.ap),
        p_at_1: avg(|m| m.p_at_1),
        p_at_10: avg(|m| m.p_at_10),
        r_at_10: avg(|m| m.r_at_10),
    }
}

/// Ranks every user's candidates and scores them against `target`. Users
/// without relevant items are left out of the averages.
pub fn evaluate(vectors: &EntityVectors, interactions: &Interactions, target: Target) -> Vec<UserMetrics> {
    (0..interactions.num_users())
        .into_par_iter()
        .filter_map(|u| {
            let mut exclude: HashSet<u32> = interactions.train[u].iter().copied().collect();
            let relevant: HashSet<u32> = match target {
                Target::Valid => interactions.valid[u].iter().copied().collect(),
                Target::Test => {
                    exclude.extend(interactions.valid[u].iter().copied());
                    interactions.test[u].iter().copied().collect()
                }
            };
            // An item seen in both train and the target partition is not a
            // fresh candidate.
            let relevant: HashSet<u32> = relevant.difference(&exclude).copied().collect();
            let ranked = rank_items(u, vectors, &exclude);
            metrics_for(u, &ranked, &relevant)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: serde_json::Value,
    pub target: Target,
    pub users: usize,
    pub means: MetricMeans,
    /// File name of the per-user CSV, relative to the report.
    pub per_user_file: String,
    /// Reserved for post-hoc test results produced elsewhere.
    pub post_hoc: Option<serde_json::Value>,
    #[serde(skip)]
    pub per_user: Vec<UserMetrics>,
}

pub fn sidecar_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    report.with_file_name(format!("{stem}.users.csv"))
}

impl MetricReport {
    pub fn new(config: serde_json::Value, target: Target, per_user: Vec<UserMetrics>) -> Self {
        MetricReport {
            config,
            target,
            users: per_user.len(),
            means: mean_metrics(&per_user),
            per_user_file: String::new(),
            post_hoc: None,
            per_user,
        }
    }

    /// Writes the JSON report and its per-user CSV sidecar.
    pub fn write(&mut self, path: &Path) -> Result<()> {
        let sidecar = sidecar_path(path);
        self.per_user_file = sidecar
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let mut w = csv::Writer::from_path(&sidecar).map_err(|e| Error::format(&sidecar, e.to_string()))?;
        for m in &self.per_user {
            w.serialize(m)?;
        }
        w.flush().map_err(|e| Error::io(&sidecar, e))?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut report: MetricReport =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let sidecar = path.with_file_name(&report.per_user_file);
        let mut r = csv::Reader::from_path(&sidecar).map_err(|e| Error::format(&sidecar, e.to_string()))?;
        report.per_user = r.deserialize().collect::<std::result::Result<_, _>>()?;
        if report.per_user.len() != report.users {
            return Err(Error::format(&sidecar, "per-user row count differs from the report"));
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
    /// Differences were constant, so `t` is 0 or infinite.
    pub degenerate: bool,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Data(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Data("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    // Differences equal up to rounding count as constant.
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let spread = d.iter().fold(0.0f64, |m, x| m.max((x - mean).abs()));
    if spread <= 4.0 * f64::EPSILON * scale {
        let mean = if scale == 0.0 { 0.0 } else { mean };
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
        return Ok(TTest { t, p, df, mean_diff: mean, degenerate: true });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, df, mean_diff: mean, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiEntity {
    User,
    Item,
    /// Mean distribution over the items a user interacted with in train.
    UserItemMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiRow {
    pub entity: PhiEntity,
    pub id: usize,
    pub distribution: Vec<f64>,
}

pub fn export_phi(model: &Model, interactions: &Interactions) -> Result<Vec<PhiRow>> {
    if model.variant() != Variant::Full {
        return Err(Error::Config(format!(
            "property weights export needs the full variant, got {}",
            model.variant().label()
        )));
    }
    let dist = |side: Side, idx: usize| {
        let id = model.phi_param(side).expect("full variant has weights");
        phi_distribution(model.params.row(id, idx))
    };
    let items: Vec<Vec<f64>> = (0..model.num_items).map(|i| dist(Side::Item, i)).collect();
    let mut rows = Vec::new();
    for u in 0..model.num_users {
        rows.push(PhiRow { entity: PhiEntity::User, id: u, distribution: dist(Side::User, u) });
    }
    for (i, d) in items.iter().enumerate() {
        rows.push(PhiRow { entity: PhiEntity::Item, id: i, distribution: d.clone() });
    }
    for (u, train) in interactions.train.iter().enumerate().take(model.num_users) {
        if train.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; PropertyId::ALL.len()];
        for &i in train {
            mean.iter_mut().zip(&items[i as usize]).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= train.len() as f64);
        rows.push(PhiRow { entity: PhiEntity::UserItemMean, id: u, distribution: mean });
    }
    Ok(rows)
}

pub fn write_phi_csv(path: &Path, rows: &[PhiRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["entity_type".to_string(), "entity_id".to_string()];
    header.extend(PropertyId::ALL.iter().map(|p| p.name().to_string()));
    w.write_record(&header)?;
    for r in rows {
        let entity = match r.entity {
            PhiEntity::User => "user",
            PhiEntity::Item => "item",
            PhiEntity::UserItemMean => "user_item_mean",
        };
        let mut rec = vec![entity.to_string(), r.id.to_string()];
        rec.extend(r.distribution.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[u32]) -> HashSet<u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn ranking_order_and_ties() {
        assert_eq!(rank_by_scores(&[0.3, 0.9, 0.1], &set(&[])), vec![1, 0, 2]);
        assert_eq!(rank_by_scores(&[0.5, 0.5, 0.7, 0.5], &set(&[])), vec![2, 0, 1, 3]);
        assert_eq!(rank_by_scores(&[0.3, 0.9, 0.1], &set(&[1])), vec![0, 2]);
    }

    #[test]
    fn metric_examples() {
        let ranked = [5, 1, 2];
        let rel = set(&[5]);
        assert_eq!(precision_at_k(&ranked, &rel, 1), 1.0);
        assert_eq!(average_precision(&ranked, &rel), Some(1.0));

        let ranked = [4, 0, 7, 9];
        let rel = set(&[4, 7]);
        assert!((average_precision(&ranked, &rel).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);

        let ranked: Vec<u32> = (0..20).collect();
        let rel = set(&[3, 8, 15, 19]);
        assert_eq!(precision_at_k(&ranked, &rel, 10), 0.2);
        assert_eq!(recall_at_k(&ranked, &rel, 10), Some(0.5));

        assert_eq!(average_precision(&ranked, &set(&[])), None);
        assert!(metrics_for(0, &ranked, &set(&[])).is_none());
    }

    #[test]
    fn perfect_ranking_has_unit_ap() {
        let ranked = [3, 1, 0, 2];
        assert_eq!(average_precision(&ranked, &set(&[3, 1])), Some(1.0));
    }

    #[test]
    fn evaluate_excludes_train_and_valid() {
        // Item scores for one user: item 0 highest, then 1, 2, 3.
        let vectors = EntityVectors {
            users: vec![vec![1.0]],
            items: vec![vec![4.0], vec![3.0], vec![2.0], vec![1.0]],
        };
        let inter = Interactions {
            num_items: 4,
            train: vec![vec![0]],
            valid: vec![vec![1]],
            test: vec![vec![3]],
        };
        let test = evaluate(&vectors, &inter, Target::Test);
        // Candidates are 2 and 3, test item ranks second.
        assert_eq!(test[0].ap, 0.5);
        let valid = evaluate(&vectors, &inter, Target::Valid);
        assert_eq!(valid[0].ap, 1.0);
    }

    #[test]
    fn ttest_degenerate_cases() {
        let a = [0.1, 0.5, 0.3];
        let same = paired_ttest(&a, &a).unwrap();
        assert_eq!((same.t, same.p, same.degenerate), (0.0, 1.0, true));
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
        let r = paired_ttest(&shifted, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
        assert!(paired_ttest(&a, &a[..2]).is_err());
        assert!(paired_ttest(&a[..1], &a[..1]).is_err());
    }

    #[test]
    fn ttest_known_example() {
        // d = (1, 2, 3, 4, 0): mean 2, sample variance 2.5, t = 2 / sqrt(0.5).
        let a = [2.0, 4.0, 6.0, 8.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0, 1.0];
        let r = paired_ttest(&a, &b).unwrap();
        assert!((r.t - 2.0 / 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 4);
        // Two-sided p for t = 2.8284 with 4 df is about 0.0474.
        assert!((r.p - 0.04742).abs() < 1e-4, "p = {}", r.p);
        let flipped = paired_ttest(&b, &a).unwrap();
        assert_eq!(flipped.t, -r.t);
        assert_eq!(flipped.p, r.p);
    }

    #[test]
    fn report_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let per_user = vec![
            UserMetrics { user: 0, ap: 0.5, p_at_1: 0.0, p_at_10: 0.1, r_at_10: 1.0 },
            UserMetrics { user: 2, ap: 1.0, p_at_1: 1.0, p_at_10: 0.1, r_at_10: 1.0 },
        ];
        let mut report = MetricReport::new(serde_json::json!({"variant": "no_prop"}), Target::Test, per_user);
        assert_eq!(report.means.map, 0.75);
        report.write(&path).unwrap();
        assert!(dir.path().join("report.users.csv").exists());
        let back = MetricReport::load(&path).unwrap();
        assert_eq!(back, report);
    }
}
