//! Query triplets, annotation records, tokenization and batching.

mod synth;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub use synth::{generate_synthetic_world, split_holdout, SynthConfig, SynthWorld};

/// End-of-sequence token. Hashed words never map here.
pub const EOS: u32 = 0;
pub const DEFAULT_VOCAB: usize = 4096;

/// One composed-retrieval query: a reference item, a modification text and
/// the item it should retrieve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub pair_id: String,
    pub reference_id: String,
    pub modification_text: String,
    pub target_id: String,
    /// Curated candidate subset (always contains the target).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_ids: Option<Vec<String>>,
    /// All acceptable targets (always contains the target).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_ids: Option<Vec<String>>,
    /// Text stand-in for the reference image, shown to the annotator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_descriptor: Option<String>,
    /// Text stand-in for the target image, shown to the judges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_descriptor: Option<String>,
}

impl Triplet {
    pub fn validate(&self) -> Result<()> {
        if self.reference_id == self.target_id {
            return Err(Error::InvalidArgument(format!(
                "pair {}: reference_id equals target_id ({})",
                self.pair_id, self.target_id
            )));
        }
        for (name, list) in [("subset_ids", &self.subset_ids), ("gt_ids", &self.gt_ids)] {
            let Some(list) = list else { continue };
            if !list.contains(&self.target_id) {
                return Err(Error::InvalidArgument(format!(
                    "pair {}: {name} does not contain target {}",
                    self.pair_id, self.target_id
                )));
            }
            let mut seen = HashSet::new();
            if let Some(dup) = list.iter().find(|id| !seen.insert(id.as_str())) {
                return Err(Error::InvalidArgument(format!(
                    "pair {}: duplicate id {dup} in {name}",
                    self.pair_id
                )));
            }
        }
        Ok(())
    }

    /// Every item id this triplet refers to.
    pub fn referenced_ids(&self) -> impl Iterator<Item = &str> {
        [&self.reference_id, &self.target_id]
            .into_iter()
            .chain(self.subset_ids.iter().flatten())
            .chain(self.gt_ids.iter().flatten())
            .map(String::as_str)
    }
}

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    jsonl::read(path, Triplet::validate)
}

pub fn write_triplets(path: &Path, triplets: &[Triplet]) -> Result<()> {
    jsonl::write(path, triplets)
}

/// A three-part generated annotation plus its judge verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTAnnotation {
    pub pair_id: String,
    pub caption: String,
    pub reasoning_steps: Vec<String>,
    pub conclusion: String,
    #[serde(default)]
    pub judge_scores: Vec<u8>,
    #[serde(default)]
    pub accepted: bool,
}

impl CoTAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.accepted
            && (self.caption.trim().is_empty()
                || self.conclusion.trim().is_empty()
                || self.reasoning_steps.is_empty())
        {
            return Err(Error::InvalidArgument(format!(
                "accepted annotation {} needs a caption, reasoning steps and a conclusion",
                self.pair_id
            )));
        }
        if let Some(s) = self.judge_scores.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::InvalidArgument(format!("judge score {s} outside 1..=5")));
        }
        Ok(())
    }

    /// Caption, reasoning and conclusion joined into one supervision text.
    pub fn full_text(&self) -> String {
        let mut parts = vec![self.caption.as_str()];
        parts.extend(self.reasoning_steps.iter().map(String::as_str));
        parts.push(&self.conclusion);
        parts.join(" ")
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<CoTAnnotation>> {
    jsonl::read(path, CoTAnnotation::validate)
}

pub fn write_annotations(path: &Path, annotations: &[CoTAnnotation]) -> Result<()> {
    jsonl::write(path, annotations)
}

/// A (sentence, paraphrase) positive pair for text-only contrastive training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliPair {
    pub premise: String,
    pub positive: String,
}

pub fn load_nli_pairs(path: &Path) -> Result<Vec<NliPair>> {
    jsonl::read(path, |_: &NliPair| Ok(()))
}

pub fn write_nli_pairs(path: &Path, pairs: &[NliPair]) -> Result<()> {
    jsonl::write(path, pairs)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Hashing-trick tokenizer.
///
/// Lowercases, splits on every non-alphanumeric character and maps each
/// word `w` to `1 + fnv1a(utf8(w)) mod (vocab - 1)`. Token 0 is reserved for
/// [`EOS`].
pub fn tokenize(text: &str, vocab: usize) -> TokenSeq {
    assert!(vocab >= 2, "vocabulary size must be at least 2");
    let lowered = text.to_lowercase();
    let tokens = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| (1 + fnv1a(w.as_bytes()) % (vocab as u64 - 1)) as u32)
        .collect();
    TokenSeq(tokens)
}

/// Seeded shuffle of `0..len` cut into contiguous batches; the last batch
/// may be short.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batch_iter<T: Clone>(items: &[T], batch_size: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    Ok(batch_indices(items.len(), batch_size, seed)?
        .into_iter()
        .map(|b| b.into_iter().map(|i| items[i].clone()).collect())
        .collect())
}
