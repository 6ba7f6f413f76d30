//! Prompt records, the prompts JSONL file and a synthetic prompt pool.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
}

impl PromptRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptFileError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("duplicate prompt id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a `{"id","text"}` JSONL file, rejecting duplicate ids.
pub fn read_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>, PromptFileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PromptRecord = serde_json::from_str(&line).map_err(|e| PromptFileError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(PromptFileError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_prompts(prompts: &[PromptRecord], path: impl AsRef<Path>) -> Result<(), PromptFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in prompts {
        serde_json::to_writer(&mut w, p).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

const NOUNS: &[&str] = &[
    "car", "dog", "cat", "bowl", "plate", "table", "chair", "house", "tree", "river", "mountain",
    "street", "bicycle", "horse", "bird", "boat", "train", "clock", "lamp", "window", "door",
    "garden", "kitchen", "bench", "umbrella", "kite", "pizza", "sandwich", "cake", "banana",
    "apple", "teapot", "cup", "vase", "flower", "field", "beach", "ocean", "city", "bridge",
    "tower", "man", "woman", "child", "girl", "boy", "giraffe", "elephant", "zebra", "bus",
    "truck", "airplane", "skateboard", "surfboard", "laptop", "phone", "book", "shelf", "bed",
    "couch", "pillow", "blanket", "sink", "mirror", "fence", "road", "sign", "market", "lake",
    "cloud", "hat", "basket", "guitar", "piano", "castle", "forest", "meadow", "harbor", "statue",
];

const ADJECTIVES: &[&str] = &[
    "red", "green", "blue", "yellow", "white", "black", "silver", "golden", "purple", "pink",
    "brown", "gray", "small", "large", "tiny", "huge", "tall", "old", "new", "ancient", "modern",
    "wooden", "shiny", "rusty", "fluffy", "soft", "bright", "dark", "colorful", "striped",
    "delicious", "fresh", "ripe", "empty", "crowded", "quiet", "busy", "cozy", "elegant", "rustic",
    "snowy", "sunny", "foggy", "misty", "wet", "dry", "happy", "sleepy", "curious", "vintage",
    "ornate", "simple", "round", "narrow", "wide", "broken", "polished", "glowing", "leafy", "sandy",
];

const ADVERBS: &[&str] = &["very", "slightly", "brightly", "softly", "gently", "extremely", "beautifully", "neatly"];
const DETERMINERS: &[&str] = &["a", "the", "one", "two", "some", "three"];
const PREPOSITIONS: &[&str] = &["on", "in", "near", "under", "behind", "beside", "with", "next to", "across from"];
const VERBS: &[&str] = &["sits", "stands", "rests", "waits", "lies", "appears", "is"];

fn noun_phrase(rng: &mut ChaCha8Rng, adj_rate: f64, out: &mut Vec<String>) {
    out.push(DETERMINERS.choose(rng).unwrap().to_string());
    if rng.random_bool(adj_rate * 0.3) {
        out.push(ADVERBS.choose(rng).unwrap().to_string());
    }
    for _ in 0..3 {
        if rng.random_bool(adj_rate) {
            out.push(ADJECTIVES.choose(rng).unwrap().to_string());
        }
    }
    out.push(NOUNS.choose(rng).unwrap().to_string());
}

/// Deterministic pool of caption-like prompts spanning a wide range of
/// lengths and modifier densities. Ids are `{prefix}{index:05}`.
pub fn synthetic_pool(n: usize, seed: u64, id_prefix: &str) -> Vec<PromptRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let clauses = rng.random_range(1..=4usize);
            let adj_rate = rng.random_range(0.0..0.8);
            let mut sentences = Vec::new();
            for _ in 0..clauses {
                let mut words = Vec::new();
                noun_phrase(&mut rng, adj_rate, &mut words);
                if rng.random_bool(0.7) {
                    if rng.random_bool(0.5) {
                        words.push(VERBS.choose(&mut rng).unwrap().to_string());
                    }
                    words.push(PREPOSITIONS.choose(&mut rng).unwrap().to_string());
                    noun_phrase(&mut rng, adj_rate, &mut words);
                }
                sentences.push(words.join(" "));
            }
            let mut text = sentences.join(". ");
            if let Some(first) = text.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            text.push('.');
            PromptRecord::new(format!("{id_prefix}{i:05}"), text)
        })
        .collect()
}
