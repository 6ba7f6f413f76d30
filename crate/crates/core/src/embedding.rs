//! Semantic prompt embeddings.
//!
//! Embeddings come either from an `emb.v1` JSONL file written by an external
//! text encoder, or from a deterministic sign-hashing embedder over token
//! unigrams and bigrams. Every vector leaving this module has unit L2 norm.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::hash_str;
use crate::prompts::PromptRecord;
use crate::text_features::{tokenize, TokenSequence};

pub const EMBEDDING_SCHEMA: &str = "emb.v1";
pub const DEFAULT_FILE_DIM: usize = 512;
pub const DEFAULT_HASHED_DIM: usize = 4096;
pub const MIN_HASHED_DIM: usize = 8;

const BUCKET_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const SIGN_SEED: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("embedding for {id:?} has {found} entries, header declares {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("duplicate prompt id {0:?}")]
    DuplicateId(String),
    #[error("no embedding for prompt {0:?} and hashed fallback is disabled")]
    MissingEmbedding(String),
    #[error("hashed embedding dimension must be at least {MIN_HASHED_DIM}, got {0}")]
    InvalidDimension(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    File,
    Hashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding {
    pub vector: Vec<f64>,
    pub source: EmbeddingSource,
    pub prompt_id: String,
}

impl SemanticEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit length. Vectors already within 1e-12 of unit length are
/// left untouched so that save/load round trips are bit-exact.
fn normalize_in_place(v: &mut [f64]) -> bool {
    let norm = l2_norm(v);
    if !(norm > 0.0 && norm.is_finite()) {
        return false;
    }
    if (norm - 1.0).abs() > 1e-12 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    dim: usize,
    #[serde(default)]
    encoder: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    v: Vec<f64>,
}

/// Embeddings loaded from an `emb.v1` file, keyed by prompt id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    entries: BTreeMap<String, Vec<f64>>,
    provenance: String,
}

impl EmbeddingStore {
    pub fn new(dimension: usize, provenance: impl Into<String>) -> Self {
        Self {
            dimension,
            entries: BTreeMap::new(),
            provenance: provenance.into(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// Adds a vector, normalizing it to unit length.
    pub fn insert(&mut self, id: impl Into<String>, mut vector: Vec<f64>) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vector.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                id,
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if !normalize_in_place(&mut vector) {
            return Err(EmbeddingError::Format {
                line: 0,
                message: format!("embedding for {id:?} is zero or non-finite"),
            });
        }
        if self.entries.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, EmbeddingError> {
        let mut lines = reader.lines().enumerate();
        let header: Header = loop {
            match lines.next() {
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| EmbeddingError::Format {
                        line: i + 1,
                        message: format!("bad header: {e}"),
                    })?;
                }
                None => {
                    return Err(EmbeddingError::Format {
                        line: 1,
                        message: "missing header".into(),
                    })
                }
            }
        };
        if header.schema != EMBEDDING_SCHEMA {
            return Err(EmbeddingError::Format {
                line: 1,
                message: format!("expected schema {EMBEDDING_SCHEMA:?}, found {:?}", header.schema),
            });
        }
        if header.dim == 0 {
            return Err(EmbeddingError::Format {
                line: 1,
                message: "dim must be positive".into(),
            });
        }
        let mut store = Self::new(header.dim, header.encoder);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| EmbeddingError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            store.insert(row.id, row.v).map_err(|e| match e {
                EmbeddingError::Format { message, .. } => EmbeddingError::Format { line: i + 1, message },
                other => other,
            })?;
        }
        Ok(store)
    }

    pub fn write_to(&self, mut writer: impl Write) -> Result<(), EmbeddingError> {
        let header = Header {
            schema: EMBEDDING_SCHEMA.into(),
            dim: self.dimension,
            encoder: self.provenance.clone(),
        };
        serde_json::to_writer(&mut writer, &header).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
        for (id, v) in &self.entries {
            serde_json::to_writer(&mut writer, &Row { id: id.clone(), v: v.clone() })
                .map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore, EmbeddingError> {
    EmbeddingStore::read_from(BufReader::new(File::open(path)?))
}

pub fn save_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    store.write_to(BufWriter::new(File::create(path)?))
}

/// Sign-hashed bag of unigrams and bigrams, L2-normalized.
///
/// Bucket and sign come from two independently seeded hashes. An empty prompt
/// (or one whose contributions cancel exactly) maps to the first basis vector.
pub fn hashed_embedding(seq: &TokenSequence, d_e: usize) -> Result<SemanticEmbedding, EmbeddingError> {
    if d_e < MIN_HASHED_DIM {
        return Err(EmbeddingError::InvalidDimension(d_e));
    }
    let mut vector = vec![0.0; d_e];
    let mut add = |feature: &str| {
        let bucket = (hash_str(BUCKET_SEED, feature) % d_e as u64) as usize;
        let sign = if hash_str(SIGN_SEED, feature) & 1 == 0 { 1.0 } else { -1.0 };
        vector[bucket] += sign;
    };
    for token in &seq.tokens {
        add(&format!("u:{token}"));
    }
    for pair in seq.tokens.windows(2) {
        add(&format!("b:{} {}", pair[0], pair[1]));
    }
    if !normalize_in_place(&mut vector) {
        vector.iter_mut().for_each(|x| *x = 0.0);
        vector[0] = 1.0;
    }
    Ok(SemanticEmbedding {
        vector,
        source: EmbeddingSource::Hashed,
        prompt_id: String::new(),
    })
}

/// Resolves prompt embeddings from a file-backed store, the hashed fallback,
/// or both (file first).
#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    store: Option<EmbeddingStore>,
    fallback: bool,
    dimension: usize,
}

impl EmbeddingProvider {
    pub fn hashed(d_e: usize) -> Result<Self, EmbeddingError> {
        if d_e < MIN_HASHED_DIM {
            return Err(EmbeddingError::InvalidDimension(d_e));
        }
        Ok(Self {
            store: None,
            fallback: true,
            dimension: d_e,
        })
    }

    /// File-backed lookup. With `fallback` set, missing ids are hashed into
    /// the store's dimension.
    pub fn from_store(store: EmbeddingStore, fallback: bool) -> Result<Self, EmbeddingError> {
        if fallback && store.dimension() < MIN_HASHED_DIM {
            return Err(EmbeddingError::InvalidDimension(store.dimension()));
        }
        Ok(Self {
            dimension: store.dimension(),
            store: Some(store),
            fallback,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn get(&self, prompt: &PromptRecord) -> Result<SemanticEmbedding, EmbeddingError> {
        if let Some(v) = self.store.as_ref().and_then(|s| s.get(&prompt.id)) {
            return Ok(SemanticEmbedding {
                vector: v.to_vec(),
                source: EmbeddingSource::File,
                prompt_id: prompt.id.clone(),
            });
        }
        if !self.fallback {
            return Err(EmbeddingError::MissingEmbedding(prompt.id.clone()));
        }
        let mut emb = hashed_embedding(&tokenize(&prompt.text), self.dimension)?;
        emb.prompt_id = prompt.id.clone();
        Ok(emb)
    }
}

/// Shorthand for [`EmbeddingProvider::get`].
pub fn get_embedding(
    provider: &EmbeddingProvider,
    prompt: &PromptRecord,
) -> Result<SemanticEmbedding, EmbeddingError> {
    provider.get(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (l2_norm(a) * l2_norm(b))
    }

    fn parse(text: &str) -> Result<EmbeddingStore, EmbeddingError> {
        EmbeddingStore::read_from(text.as_bytes())
    }

    #[test]
    fn load_normalizes_rows() {
        let store = parse(
            "{\"schema\":\"emb.v1\",\"dim\":4,\"encoder\":\"test\"}\n{\"id\":\"p1\",\"v\":[3,0,0,0]}\n",
        )
        .unwrap();
        assert_eq!(store.get("p1").unwrap(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(store.provenance(), "test");
    }

    #[test]
    fn short_row_is_dimension_mismatch() {
        let err = parse("{\"schema\":\"emb.v1\",\"dim\":4,\"encoder\":\"t\"}\n{\"id\":\"p1\",\"v\":[1,2,3]}\n")
            .unwrap_err();
        assert!(matches!(err, EmbeddingError::DimensionMismatch { expected: 4, found: 3, .. }));
    }

    #[test]
    fn header_only_file_is_empty_store() {
        let store = parse("{\"schema\":\"emb.v1\",\"dim\":4,\"encoder\":\"t\"}\n").unwrap();
        assert!(store.is_empty());
        assert_eq!(store.dimension(), 4);
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(matches!(parse(""), Err(EmbeddingError::Format { .. })));
        assert!(matches!(
            parse("{\"schema\":\"emb.v0\",\"dim\":4}\n"),
            Err(EmbeddingError::Format { .. })
        ));
        assert!(matches!(
            parse("{\"schema\":\"emb.v1\",\"dim\":2}\n{\"id\":\"a\",\"v\":[1,0]}\n{\"id\":\"a\",\"v\":[0,1]}\n"),
            Err(EmbeddingError::DuplicateId(_))
        ));
        assert!(matches!(
            parse("{\"schema\":\"emb.v1\",\"dim\":2}\n{\"id\":\"a\",\"v\":[0,0]}\n"),
            Err(EmbeddingError::Format { line: 2, .. })
        ));
        assert!(matches!(
            parse("{\"schema\":\"emb.v1\",\"dim\":2}\n{\"id\":\"a\",\"v\":[1,0],\n"),
            Err(EmbeddingError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn hashed_is_deterministic_and_unit_norm() {
        let seq = tokenize("A delicious fruit plate in a silver bowl");
        let a = hashed_embedding(&seq, DEFAULT_HASHED_DIM).unwrap();
        let b = hashed_embedding(&seq, DEFAULT_HASHED_DIM).unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(&a.vector) - 1.0).abs() < 1e-6);
        assert_eq!(a.source, EmbeddingSource::Hashed);
    }

    #[test]
    fn empty_prompt_maps_to_first_basis_vector() {
        let e = hashed_embedding(&tokenize(""), 16).unwrap();
        assert_eq!(e.vector[0], 1.0);
        assert_eq!(l2_norm(&e.vector), 1.0);
        assert!(matches!(hashed_embedding(&tokenize("x"), 4), Err(EmbeddingError::InvalidDimension(4))));
    }

    #[test]
    fn bigrams_carry_order_information() {
        let ab = hashed_embedding(&tokenize("red car blue bus"), 4096).unwrap();
        let ba = hashed_embedding(&tokenize("blue bus red car"), 4096).unwrap();
        assert_ne!(ab.vector, ba.vector);
        // single tokens have no bigrams, so reordering them is invisible
        let solo1 = hashed_embedding(&tokenize("red"), 4096).unwrap();
        let solo2 = hashed_embedding(&tokenize("RED!"), 4096).unwrap();
        assert_eq!(solo1.vector, solo2.vector);
        // the unigram part is order-free: removing bigram buckets leaves equal mass
        let unigram_only = |s: &str| {
            let seq = tokenize(s);
            let mut v = vec![0.0; 4096];
            for t in &seq.tokens {
                let f = format!("u:{t}");
                let b = (hash_str(BUCKET_SEED, &f) % 4096) as usize;
                v[b] += if hash_str(SIGN_SEED, &f) & 1 == 0 { 1.0 } else { -1.0 };
            }
            v
        };
        assert_eq!(unigram_only("red car blue bus"), unigram_only("blue bus red car"));
    }

    #[test]
    fn disjoint_prompts_are_nearly_orthogonal() {
        // 100 fixed pairs built from disjoint vocabularies
        let left = ["apple", "river", "mountain", "violin", "candle", "forest", "rocket", "teapot", "lantern", "bicycle"];
        let right = ["ocean", "guitar", "castle", "pillow", "tiger", "bridge", "window", "cactus", "helmet", "compass"];
        let mut worst: f64 = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                let a = format!("a {} near the {} with {}", left[i], left[(i + 3) % 10], left[(i + 7) % 10]);
                let b = format!("one {} beside two {} and {}", right[j], right[(j + 1) % 10], right[(j + 5) % 10]);
                let ea = hashed_embedding(&tokenize(&a), 4096).unwrap();
                let eb = hashed_embedding(&tokenize(&b), 4096).unwrap();
                worst = worst.max(cosine(&ea.vector, &eb.vector).abs());
            }
        }
        assert!(worst < 0.2, "max |cos| = {worst}");
    }

    #[test]
    fn provider_lookup_and_fallback() {
        let mut store = EmbeddingStore::new(8, "enc");
        store.insert("p1", vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let present = PromptRecord::new("p1", "a cat");
        let absent = PromptRecord::new("p2", "a dog");

        let strict = EmbeddingProvider::from_store(store.clone(), false).unwrap();
        let e = strict.get(&present).unwrap();
        assert_eq!(e.source, EmbeddingSource::File);
        assert_eq!(e.vector[1], 1.0);
        assert!(matches!(strict.get(&absent), Err(EmbeddingError::MissingEmbedding(id)) if id == "p2"));

        let lenient = EmbeddingProvider::from_store(store, true).unwrap();
        let e = lenient.get(&absent).unwrap();
        assert_eq!(e.source, EmbeddingSource::Hashed);
        assert_eq!(e.prompt_id, "p2");
        assert_eq!(e.dim(), 8);
    }

    proptest! {
        #[test]
        fn save_load_roundtrip_is_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 0..12)
        ) {
            let mut store = EmbeddingStore::new(6, "prop");
            for (i, v) in rows.into_iter().enumerate() {
                if l2_norm(&v) > 1e-3 {
                    store.insert(format!("p{i}"), v).unwrap();
                }
            }
            let mut buf = Vec::new();
            store.write_to(&mut buf).unwrap();
            let back = EmbeddingStore::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &store);
            for id in store.entries.keys() {
                prop_assert!((l2_norm(back.get(id).unwrap()) - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn hashed_vectors_are_unit_norm(text in "[a-z ]{1,80}") {
            let seq = tokenize(&text);
            let e = hashed_embedding(&seq, 64).unwrap();
            prop_assert!((l2_norm(&e.vector) - 1.0).abs() < 1e-6);
        }
    }
}
