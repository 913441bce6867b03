//! Synthetic review corpus with planted property signal.
//!
//! Items belong to topics and topics to groups. Every group has a marker
//! property. A review is either informative, written about the item's own
//! topic and scoring high on the group's marker, or noise, written about a
//! different topic and scoring low on the marker. Non-marker properties are
//! drawn independently of informativeness. Users mostly interact with one
//! favourite topic.

use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Day, FieldMap, RawReview};
use crate::error::{Error, Result};
use crate::props::PropertyId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub topics: usize,
    /// Marker property of each group; topic `t` is in group `t % len`.
    pub markers: Vec<PropertyId>,
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// Chance that an interaction is with the user's favourite topic.
    pub in_topic: f64,
    pub informative: f64,
    pub vocab_per_topic: usize,
    /// Items below this count get extra reviews from fans of their topic.
    pub min_item_reviews: usize,
    pub days: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 50,
            items: 60,
            topics: 6,
            markers: vec![PropertyId::Length, PropertyId::Helpful, PropertyId::Rating],
            min_interactions: 10,
            max_interactions: 14,
            in_topic: 0.85,
            informative: 0.35,
            vocab_per_topic: 12,
            min_item_reviews: 5,
            days: 730,
            seed: 20_240_301,
        }
    }
}

const FILLER: &[&str] = &[
    "the", "a", "it", "was", "and", "we", "this", "very", "really", "place", "thing", "got", "again", "here", "there",
    "time", "one", "just", "also", "about",
];

const START: NaiveDate = match NaiveDate::from_ymd_opt(2018, 1, 1) {
    Some(d) => d,
    None => panic!("valid date"),
};

pub fn topic_of(item: usize, cfg: &SynthConfig) -> usize {
    item % cfg.topics
}

pub fn group_of_topic(topic: usize, cfg: &SynthConfig) -> usize {
    topic % cfg.markers.len()
}

pub fn favourite_topic(user: usize, cfg: &SynthConfig) -> usize {
    user % cfg.topics
}

fn topic_word(topic: usize, j: usize) -> String {
    format!("topic{topic}word{j}")
}

fn make_text(rng: &mut ChaCha8Rng, topic: usize, words: usize, cfg: &SynthConfig) -> String {
    (0..words)
        .map(|pos| {
            if pos == 0 || rng.random_bool(0.7) {
                topic_word(topic, rng.random_range(0..cfg.vocab_per_topic))
            } else {
                FILLER.choose(rng).expect("non-empty").to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn review(rng: &mut ChaCha8Rng, user: usize, item: usize, day: Day, cfg: &SynthConfig) -> RawReview {
    let topic = topic_of(item, cfg);
    let marker = cfg.markers[group_of_topic(topic, cfg)];
    let informative = rng.random_bool(cfg.informative);
    let text_topic = if informative {
        topic
    } else {
        let other = rng.random_range(0..cfg.topics - 1);
        if other >= topic { other + 1 } else { other }
    };
    let words = match (marker, informative) {
        (PropertyId::Length, true) => rng.random_range(40..=60),
        (PropertyId::Length, false) => rng.random_range(5..=10),
        _ => rng.random_range(5..=60),
    };
    let helpful_votes = match (marker, informative) {
        (PropertyId::Helpful, true) => rng.random_range(20..=50),
        (PropertyId::Helpful, false) => rng.random_range(0..=2),
        _ => rng.random_range(0..=50),
    };
    let rating = match (marker, informative) {
        (PropertyId::Rating, true) => 5,
        (PropertyId::Rating, false) => 1,
        _ => rng.random_range(1..=5),
    };
    RawReview {
        user_key: format!("u{user:03}"),
        item_key: format!("i{item:03}"),
        rating,
        text: make_text(rng, text_topic, words, cfg),
        timestamp: day,
        helpful_votes,
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<RawReview>> {
    if cfg.topics < 2 || cfg.markers.is_empty() || cfg.items < cfg.topics || cfg.min_interactions > cfg.max_interactions {
        return Err(Error::Config("synthetic config is inconsistent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start_day = START.signed_duration_since(NaiveDate::default()).num_days();
    let by_topic: Vec<Vec<usize>> =
        (0..cfg.topics).map(|t| (0..cfg.items).filter(|&i| topic_of(i, cfg) == t).collect()).collect();
    let mut chosen_by_user = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let n = rng.random_range(cfg.min_interactions..=cfg.max_interactions).min(cfg.items);
        let fav = &by_topic[favourite_topic(u, cfg)];
        let mut chosen: Vec<usize> = Vec::with_capacity(n);
        while chosen.len() < n {
            let item = if rng.random_bool(cfg.in_topic) && chosen.iter().filter(|i| fav.contains(i)).count() < fav.len() {
                *fav.choose(&mut rng).expect("topic has items")
            } else {
                rng.random_range(0..cfg.items)
            };
            if !chosen.contains(&item) {
                chosen.push(item);
            }
        }
        chosen_by_user.push(chosen);
    }
    for item in 0..cfg.items {
        let count = chosen_by_user.iter().filter(|c| c.contains(&item)).count();
        let mut fans: Vec<usize> = (0..cfg.users)
            .filter(|&u| favourite_topic(u, cfg) == topic_of(item, cfg) && !chosen_by_user[u].contains(&item))
            .collect();
        for _ in count..cfg.min_item_reviews {
            if fans.is_empty() {
                break;
            }
            let u = fans.swap_remove(rng.random_range(0..fans.len()));
            chosen_by_user[u].push(item);
        }
    }
    let mut reviews = Vec::new();
    for (u, chosen) in chosen_by_user.into_iter().enumerate() {
        for item in chosen {
            let day = start_day + rng.random_range(0..cfg.days) as Day;
            reviews.push(review(&mut rng, u, item, day, cfg));
        }
    }
    Ok(reviews)
}

/// Writes reviews as JSON lines using the default ingest field names.
pub fn write_jsonl(path: &Path, reviews: &[RawReview]) -> Result<()> {
    let names = FieldMap::default();
    let mut out = Vec::new();
    for r in reviews {
        let date = NaiveDate::default()
            .checked_add_days(Days::new(r.timestamp as u64))
            .ok_or_else(|| Error::Data(format!("timestamp {} out of range", r.timestamp)))?;
        let mut obj = serde_json::Map::new();
        obj.insert(names.user.clone(), r.user_key.clone().into());
        obj.insert(names.item.clone(), r.item_key.clone().into());
        obj.insert(names.rating.clone(), r.rating.into());
        obj.insert(names.text.clone(), r.text.clone().into());
        obj.insert(names.timestamp.clone(), date.format("%Y-%m-%d").to_string().into());
        obj.insert(names.helpful_votes.clone(), r.helpful_votes.into());
        serde_json::to_writer(&mut out, &obj)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
