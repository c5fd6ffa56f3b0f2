//! Deterministic synthetic retrieval worlds.
//!
//! Every item carries a distinct binary attribute code. Its embedding is
//! `base + sum_k s_k * a_k + noise` where `s_k = +1` if attribute `k` is set
//! and `-1` otherwise, with `a_k` seeded Gaussian directions. A triplet's
//! modification text names the target's state for each attribute that
//! differs from the reference, so applying the named flips to the reference
//! embedding lands next to the target.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NliPair, Triplet, DEFAULT_VOCAB};
use crate::error::{Error, Result};
use crate::store::EmbeddingMatrix;

const ATTRIBUTE_WORDS: [&str; 16] = [
    "striped", "hooded", "red", "long", "floral", "denim", "sleeveless", "buttoned", "glossy",
    "pleated", "dotted", "belted", "cropped", "fringed", "quilted", "ribbed",
];
const MAX_ATTRS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_items: usize,
    pub n_attrs: usize,
    pub vocab: usize,
    pub image_dims: usize,
    /// Per-component standard deviation of the embedding noise.
    pub noise: f64,
    /// Defaults to `5 * n_items / 2` when `None`.
    pub n_triplets: Option<usize>,
    /// Defaults to `2 * n_triplets` when `None`.
    pub n_nli: Option<usize>,
    pub subset_size: usize,
    /// Largest number of attributes a single modification changes.
    pub max_flips: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_items: 200,
            n_attrs: 8,
            vocab: DEFAULT_VOCAB,
            image_dims: 64,
            noise: 0.05,
            n_triplets: None,
            n_nli: None,
            subset_size: 6,
            max_flips: 2,
        }
    }
}

impl SynthConfig {
    pub fn new(seed: u64, n_items: usize, n_attrs: usize, vocab: usize) -> Self {
        Self {
            seed,
            n_items,
            n_attrs,
            vocab,
            ..Self::default()
        }
    }

    pub fn triplet_count(&self) -> usize {
        self.n_triplets.unwrap_or(self.n_items * 5 / 2)
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub embeddings: EmbeddingMatrix,
    pub triplets: Vec<Triplet>,
    pub nli_pairs: Vec<NliPair>,
    pub vocab_size: usize,
    /// Attribute code per embedding row (bit `k` = attribute `k`).
    pub codes: Vec<u64>,
    pub attributes: Vec<String>,
    base: Vec<f64>,
    directions: Vec<Vec<f64>>,
}

fn attribute_name(k: usize) -> String {
    match ATTRIBUTE_WORDS.get(k) {
        Some(w) => (*w).to_string(),
        None => format!("trait{k}"),
    }
}

fn sign(code: u64, k: usize) -> f64 {
    if code >> k & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

impl SynthWorld {
    /// Word describing attribute `k` in the state given by `code`.
    pub fn state_word(&self, code: u64, k: usize) -> String {
        if code >> k & 1 == 1 {
            self.attributes[k].clone()
        } else {
            format!("non{}", self.attributes[k])
        }
    }

    pub fn descriptor(&self, code: u64) -> String {
        let words: Vec<String> = (0..self.attributes.len())
            .map(|k| self.state_word(code, k))
            .collect();
        words.join(" ")
    }

    pub fn code_of(&self, id: &str) -> Result<u64> {
        self.embeddings
            .index_of(id)
            .map(|i| self.codes[i])
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// Query built from the generative rule: the reference embedding with the
    /// true attribute flips applied.
    pub fn oracle_query(&self, t: &Triplet) -> Result<Vec<f64>> {
        let r = self.code_of(&t.reference_id)?;
        let g = self.code_of(&t.target_id)?;
        let mut q: Vec<f64> = self
            .embeddings
            .lookup(&t.reference_id)?
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        for (k, dir) in self.directions.iter().enumerate() {
            let delta = sign(g, k) - sign(r, k);
            if delta != 0.0 {
                for (qi, di) in q.iter_mut().zip(dir) {
                    *qi += delta * di;
                }
            }
        }
        Ok(q)
    }

    /// Noise-free embedding for an attribute code.
    pub fn clean_embedding(&self, code: u64) -> Vec<f64> {
        let mut v = self.base.clone();
        for (k, dir) in self.directions.iter().enumerate() {
            let s = sign(code, k);
            for (vi, di) in v.iter_mut().zip(dir) {
                *vi += s * di;
            }
        }
        v
    }
}

fn distinct_codes(rng: &mut ChaCha8Rng, n_items: usize, n_attrs: usize) -> Vec<u64> {
    if n_attrs <= 16 {
        let mut all: Vec<u64> = (0..1u64 << n_attrs).collect();
        all.shuffle(rng);
        all.truncate(n_items);
        return all;
    }
    let mask = if n_attrs == 64 { u64::MAX } else { (1u64 << n_attrs) - 1 };
    let mut seen = HashSet::with_capacity(n_items);
    let mut out = Vec::with_capacity(n_items);
    while out.len() < n_items {
        let c = rng.random::<u64>() & mask;
        if seen.insert(c) {
            out.push(c);
        }
    }
    out
}

/// Generates a world from `config`; identical configs give identical worlds.
pub fn generate_synthetic_world(config: &SynthConfig) -> Result<SynthWorld> {
    let SynthConfig {
        seed,
        n_items,
        n_attrs,
        vocab,
        image_dims,
        noise,
        ..
    } = *config;
    if n_items < 4 {
        return Err(Error::InvalidArgument("n_items must be at least 4".into()));
    }
    if !(2..=MAX_ATTRS).contains(&n_attrs) {
        return Err(Error::InvalidArgument(format!(
            "n_attrs must be in 2..={MAX_ATTRS}"
        )));
    }
    if (n_items as u64) > 1u64 << n_attrs {
        return Err(Error::InvalidArgument(format!(
            "{n_items} items cannot have distinct codes over {n_attrs} attributes"
        )));
    }
    if vocab < 2 || image_dims == 0 || config.subset_size == 0 || config.max_flips == 0 {
        return Err(Error::InvalidArgument(
            "vocab >= 2, image_dims, subset_size and max_flips >= 1 required".into(),
        ));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument("noise must be finite and >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = distinct_codes(&mut rng, n_items, n_attrs);

    let unit = Normal::new(0.0, 1.0 / (image_dims as f64).sqrt()).expect("valid normal");
    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..image_dims).map(|_| unit.sample(rng)).collect()
    };
    let base = gaussian(&mut rng);
    let directions: Vec<Vec<f64>> = (0..n_attrs).map(|_| gaussian(&mut rng)).collect();
    let attributes: Vec<String> = (0..n_attrs).map(attribute_name).collect();

    let mut world = SynthWorld {
        embeddings: EmbeddingMatrix::new(1, Vec::new(), Vec::new())?,
        triplets: Vec::new(),
        nli_pairs: Vec::new(),
        vocab_size: vocab,
        codes: codes.clone(),
        attributes,
        base,
        directions,
    };

    let noise_dist = Normal::new(0.0, noise).expect("valid normal");
    let ids: Vec<String> = (0..n_items).map(|i| format!("img{i:05}")).collect();
    let mut values = Vec::with_capacity(n_items * image_dims);
    for &code in &codes {
        for v in world.clean_embedding(code) {
            values.push((v + noise_dist.sample(&mut rng)) as f32);
        }
    }
    world.embeddings = EmbeddingMatrix::new(image_dims, values, ids.clone())?;

    let n_triplets = config.triplet_count();
    let hamming = |a: u64, b: u64| (a ^ b).count_ones() as usize;
    for t in 0..n_triplets {
        let r = rng.random_range(0..n_items);
        let near: Vec<usize> = (0..n_items)
            .filter(|&j| {
                let h = hamming(codes[r], codes[j]);
                h >= 1 && h <= config.max_flips
            })
            .collect();
        let g = match near.choose(&mut rng) {
            Some(&g) => g,
            None => loop {
                let g = rng.random_range(0..n_items);
                if g != r {
                    break g;
                }
            },
        };
        let changed: Vec<usize> = (0..n_attrs)
            .filter(|&k| (codes[r] ^ codes[g]) >> k & 1 == 1)
            .collect();
        let words: Vec<String> = changed.iter().map(|&k| world.state_word(codes[g], k)).collect();
        let modification_text = format!("make it {}", words.join(" and "));

        let subset_ids = (n_items > config.subset_size).then(|| {
            let mut others: Vec<usize> = (0..n_items).filter(|&j| j != r && j != g).collect();
            others.shuffle(&mut rng);
            others.sort_by_key(|&j| hamming(codes[j], codes[g]));
            let mut subset = vec![ids[g].clone()];
            subset.extend(others[..config.subset_size - 1].iter().map(|&j| ids[j].clone()));
            subset.shuffle(&mut rng);
            subset
        });

        let changed_mask = codes[r] ^ codes[g];
        let mut gt_ids = vec![ids[g].clone()];
        gt_ids.extend(
            (0..n_items)
                .filter(|&j| {
                    j != r
                        && j != g
                        && (codes[j] ^ codes[g]) & changed_mask == 0
                        && hamming(codes[j], codes[g]) == 1
                })
                .map(|j| ids[j].clone()),
        );

        world.triplets.push(Triplet {
            pair_id: format!("p{t:05}"),
            reference_id: ids[r].clone(),
            modification_text,
            target_id: ids[g].clone(),
            subset_ids,
            gt_ids: Some(gt_ids),
            reference_descriptor: Some(world.descriptor(codes[r])),
            target_descriptor: Some(world.descriptor(codes[g])),
        });
    }

    let n_nli = config.n_nli.unwrap_or(2 * n_triplets);
    for _ in 0..n_nli {
        let code = rng.random::<u64>();
        let mut attrs: Vec<usize> = (0..n_attrs).collect();
        attrs.shuffle(&mut rng);
        let take = rng.random_range(2..=n_attrs.min(5));
        let words: Vec<String> = attrs[..take]
            .iter()
            .map(|&k| world.state_word(code, k))
            .collect();
        let premise = format!("an item that is {}", words.join(" "));
        // word dropout paraphrase; keep at least one attribute word
        let keep_forced = rng.random_range(0..take);
        let kept: Vec<&str> = words
            .iter()
            .enumerate()
            .filter(|(i, _)| *i == keep_forced || rng.random::<f64>() >= 0.3)
            .map(|(_, w)| w.as_str())
            .collect();
        let positive = format!("item {}", kept.join(" "));
        world.nli_pairs.push(NliPair { premise, positive });
    }
    Ok(world)
}

/// Splits off the last `n_test` triplets (after a seeded shuffle) as a
/// held-out set. Returns `(train, test)`.
pub fn split_holdout(
    triplets: &[Triplet],
    n_test: usize,
    seed: u64,
) -> Result<(Vec<Triplet>, Vec<Triplet>)> {
    if n_test > triplets.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot hold out {n_test} of {} triplets",
            triplets.len()
        )));
    }
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5911));
    let cut = triplets.len() - n_test;
    let pick = |ix: &[usize]| ix.iter().map(|&i| triplets[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let c = SynthConfig::new(3, 40, 6, 512);
        let a = generate_synthetic_world(&c).unwrap();
        let b = generate_synthetic_world(&c).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.triplets, b.triplets);
        assert_eq!(a.nli_pairs, b.nli_pairs);
        let other = generate_synthetic_world(&SynthConfig::new(4, 40, 6, 512)).unwrap();
        assert_ne!(a.embeddings, other.embeddings);
    }

    #[test]
    fn counts_and_validity() {
        let w = generate_synthetic_world(&SynthConfig::new(0, 50, 8, 4096)).unwrap();
        assert_eq!(w.embeddings.count(), 50);
        assert!(w.triplets.len() >= 50);
        for t in &w.triplets {
            t.validate().unwrap();
            for id in t.referenced_ids() {
                assert!(w.embeddings.index_of(id).is_some(), "{id}");
            }
            assert_eq!(t.subset_ids.as_ref().unwrap().len(), 6);
        }
        let distinct: HashSet<u64> = w.codes.iter().copied().collect();
        assert_eq!(distinct.len(), 50);
    }

    #[test]
    fn modification_names_target_states() {
        let w = generate_synthetic_world(&SynthConfig::new(1, 30, 5, 4096)).unwrap();
        for t in &w.triplets {
            let r = w.code_of(&t.reference_id).unwrap();
            let g = w.code_of(&t.target_id).unwrap();
            for k in 0..5 {
                let word = w.state_word(g, k);
                let named = t.modification_text.split_whitespace().any(|x| x == word);
                assert_eq!(named, (r ^ g) >> k & 1 == 1);
            }
        }
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(generate_synthetic_world(&SynthConfig::new(0, 3, 4, 64)).is_err());
        assert!(generate_synthetic_world(&SynthConfig::new(0, 10, 1, 64)).is_err());
        assert!(generate_synthetic_world(&SynthConfig::new(0, 5, 2, 64)).is_err());
    }

    #[test]
    fn holdout_partitions() {
        let w = generate_synthetic_world(&SynthConfig::new(0, 40, 6, 64)).unwrap();
        let (train, test) = split_holdout(&w.triplets, 20, 0).unwrap();
        assert_eq!(train.len() + test.len(), w.triplets.len());
        assert_eq!(test.len(), 20);
        let ids: HashSet<&str> = train.iter().chain(&test).map(|t| t.pair_id.as_str()).collect();
        assert_eq!(ids.len(), w.triplets.len());
    }
}
