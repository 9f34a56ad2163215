//! Absent-category sampling for `<no_object/>` supervision.
//!
//! Per image, candidates are the vocabulary minus every category present in
//! the image. Up to `max_per_image` are drawn; a `hard_share` of the draws
//! comes from the proximity neighbors of the present categories (car → van),
//! the rest uniformly. Each image uses its own sub-seed, so sampling is
//! independent of corpus order. A corpus-level cap then keeps
//! `negatives / (positives + negatives) ≤ max_fraction` by dropping the stubs
//! with the largest seeded hash keys.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::NO_OBJECT;
use crate::error::{Error, Result};

const BUILTIN_PROXIMITY: &str = include_str!("../data/proximity.tsv");

/// Ranked semantic neighbors per category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProximityTable {
    neighbors: BTreeMap<String, Vec<String>>,
}

impl ProximityTable {
    /// Parses `category<TAB>neighbor1,neighbor2,…` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut neighbors = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (cat, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::invalid(format!("proximity line {}: missing tab", i + 1)))?;
            let list: Vec<String> = rest.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
            neighbors.insert(cat.trim().to_string(), list);
        }
        Ok(Self { neighbors })
    }

    /// The table shipped with the crate (road and indoor categories).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PROXIMITY).expect("builtin table parses")
    }

    pub fn neighbors(&self, category: &str) -> &[String] {
        self.neighbors.get(category).map_or(&[], Vec::as_slice)
    }

    /// Every category named in the table, keys and neighbors.
    pub fn categories(&self) -> BTreeSet<String> {
        self.neighbors.iter().flat_map(|(k, v)| std::iter::once(k).chain(v)).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeSpec {
    pub max_fraction: f64,
    pub max_per_image: usize,
    pub hard_share: f64,
    pub seed: u64,
}

impl Default for NegativeSpec {
    fn default() -> Self {
        Self { max_fraction: 0.10, max_per_image: 2, hard_share: 0.5, seed: 0 }
    }
}

/// A queried category that is absent from the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeStub {
    pub image_path: String,
    pub category: String,
    /// Drawn from the proximity neighbors of a present category.
    pub hard: bool,
    pub response: String,
}

/// Categories present in one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageCategories {
    pub image_path: String,
    pub present: BTreeSet<String>,
}

/// 64-bit FNV-1a over the parts, separated by a zero byte.
pub fn stable_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    seed.to_le_bytes().into_iter().for_each(&mut eat);
    for p in parts {
        p.bytes().for_each(&mut eat);
        eat(0);
    }
    h
}

/// Largest negative count `n` with `n / (positives + n) ≤ max_fraction`.
pub fn cap_total(positives: usize, max_fraction: f64) -> usize {
    if max_fraction <= 0.0 {
        return 0;
    }
    if max_fraction >= 1.0 {
        return usize::MAX;
    }
    (max_fraction * positives as f64 / (1.0 - max_fraction) + 1e-9).floor() as usize
}

/// Draws the negatives for one image.
pub fn sample_image(image: &ImageCategories, vocabulary: &[String], table: &ProximityTable, spec: &NegativeSpec) -> Vec<NegativeStub> {
    let candidates: Vec<&String> = vocabulary.iter().filter(|c| !image.present.contains(*c)).collect();
    let k = spec.max_per_image.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(spec.seed, &[&image.image_path]));

    let mut pool: Vec<&String> = Vec::new();
    for cat in &image.present {
        for n in table.neighbors(cat) {
            if candidates.contains(&n) && !pool.contains(&n) {
                pool.push(n);
            }
        }
    }
    let n_hard = ((spec.hard_share.clamp(0.0, 1.0) * k as f64).round() as usize).min(pool.len());
    let hard: Vec<&String> = pool.choose_multiple(&mut rng, n_hard).copied().collect();
    let rest: Vec<&String> = candidates.iter().copied().filter(|c| !hard.contains(c)).collect();
    let easy: Vec<&String> = rest.choose_multiple(&mut rng, k - n_hard).copied().collect();

    hard.iter()
        .map(|c| (c, true))
        .chain(easy.iter().map(|c| (c, false)))
        .map(|(c, hard)| NegativeStub {
            image_path: image.image_path.clone(),
            category: (*c).clone(),
            hard,
            response: NO_OBJECT.to_string(),
        })
        .collect()
}

/// Keeps at most `cap_total(positives)` stubs, chosen by seeded hash; order is preserved.
pub fn enforce_cap(stubs: Vec<NegativeStub>, positives: usize, spec: &NegativeSpec) -> Vec<NegativeStub> {
    let cap = cap_total(positives, spec.max_fraction);
    if stubs.len() <= cap {
        return stubs;
    }
    let mut keys: Vec<(u64, usize)> =
        stubs.iter().enumerate().map(|(i, s)| (stable_hash(spec.seed, &[&s.image_path, &s.category]), i)).collect();
    keys.sort_unstable();
    let keep: BTreeSet<usize> = keys[..cap].iter().map(|&(_, i)| i).collect();
    stubs.into_iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, s)| s).collect()
}

/// Samples every image, then applies the corpus cap against `positives` examples.
pub fn sample_negatives(
    images: &[ImageCategories],
    positives: usize,
    vocabulary: &[String],
    table: &ProximityTable,
    spec: &NegativeSpec,
) -> Vec<NegativeStub> {
    use rayon::prelude::*;
    let stubs: Vec<NegativeStub> =
        images.par_iter().flat_map_iter(|img| sample_image(img, vocabulary, table, spec)).collect();
    enforce_cap(stubs, positives, spec)
}
