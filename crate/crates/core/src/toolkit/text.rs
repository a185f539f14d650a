//! Lexicon and frequency baselines over the instance's text context.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;

use crate::model::{parse_timestamp, Event, TextBlock};

const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "an", "and", "any", "are", "as", "at", "be",
    "been", "before", "being", "but", "by", "can", "could", "did", "do", "does", "for", "from",
    "had", "has", "have", "he", "her", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "more", "most", "no", "not", "of", "on", "or", "our", "out", "over", "said", "she", "so",
    "some", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "to", "up", "was", "we", "were", "what", "when", "which", "while", "who", "will", "with",
    "would", "you",
];

const POSITIVE: &[&str] = &[
    "beat", "boost", "bullish", "clear", "gain", "gains", "good", "growth", "high", "improve",
    "improved", "mild", "optimistic", "outperform", "positive", "profit", "profits", "rally",
    "record", "recover", "recovery", "rise", "rises", "rising", "soar", "strong", "sunny",
    "surge", "upgrade", "win",
];

const NEGATIVE: &[&str] = &[
    "bearish", "cold", "crash", "cut", "decline", "declines", "deficit", "downgrade", "drop",
    "drops", "fall", "falls", "fear", "flood", "freeze", "loss", "losses", "miss", "negative",
    "plunge", "recession", "risk", "slump", "storm", "weak", "worse", "worst",
];

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|t| !t.is_empty())
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
}

/// Top-`k` terms by frequency after stop-word removal. Ties go to the
/// alphabetically first term.
pub fn keyword_extract(blocks: &[TextBlock], k: usize) -> Vec<(String, usize)> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for block in blocks {
        for t in tokens(&block.body) {
            if t.len() > 2 && !STOP_WORDS.contains(&t.as_str()) && !t.chars().all(|c| c.is_ascii_digit()) {
                *freq.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sentiment {
    pub score: f64,
    pub positive: usize,
    pub negative: usize,
}

/// `(pos - neg) / (pos + neg)`, or 0 without any lexicon hit.
pub fn sentiment(text: &str) -> Sentiment {
    let (mut positive, mut negative) = (0, 0);
    for t in tokens(text) {
        if POSITIVE.contains(&t.as_str()) {
            positive += 1;
        } else if NEGATIVE.contains(&t.as_str()) {
            negative += 1;
        }
    }
    let total = positive + negative;
    let score = if total == 0 { 0.0 } else { (positive as f64 - negative as f64) / total as f64 };
    Sentiment { score, positive, negative }
}

/// Text blocks whose date falls inside the window `[start, end)` of the
/// series timestamps, allowing one sampling step past the window end.
/// Blocks within one step of either window edge are flagged
/// `boundary_aligned`.
pub fn temporal_align(blocks: &[TextBlock], timestamps: &[String], start: usize, end: usize) -> Vec<Event> {
    let times: Vec<NaiveDateTime> = match timestamps.iter().map(|t| parse_timestamp(t)).collect() {
        Some(t) => t,
        None => return Vec::new(),
    };
    if times.is_empty() || start >= end || end > times.len() {
        return Vec::new();
    }
    let step = if times.len() >= 2 {
        let mut gaps: Vec<i64> = times.windows(2).map(|w| (w[1] - w[0]).num_seconds()).collect();
        gaps.sort_unstable();
        gaps[gaps.len() / 2]
    } else {
        0
    };
    let (lo, hi) = (times[start], times[end - 1]);
    let mut out = Vec::new();
    for (bi, block) in blocks.iter().enumerate() {
        let Some(date) = block.date.as_deref().and_then(parse_timestamp) else { continue };
        let before = (lo - date).num_seconds();
        let after = (date - hi).num_seconds();
        if before > 0 || after > step {
            continue;
        }
        let nearest = times[start..end]
            .iter()
            .enumerate()
            .min_by_key(|(_, t)| (**t - date).num_seconds().abs())
            .map(|(i, _)| start + i)
            .unwrap_or(start);
        let boundary = after.abs() <= step || before.abs() <= step;
        out.push(Event {
            label: "text_block".into(),
            start: Some(nearest),
            end: Some(nearest + 1),
            text: Some(block.body.chars().take(160).collect()),
            fields: BTreeMap::from([("block".into(), bi as f64)]),
            flags: BTreeMap::from([("boundary_aligned".into(), boundary)]),
        });
    }
    out
}
