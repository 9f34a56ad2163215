//! Tile selection, token accounting and online context packing.

use serde::{Deserialize, Serialize};

use crate::packaging::{Conversation, IMAGE_TOKEN};

pub const DEFAULT_BUDGET: usize = 16_384;

/// Tile grid chosen for an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub cols: u32,
    pub rows: u32,
    pub thumbnail: bool,
}

impl Tiling {
    pub fn tiles(&self) -> u32 {
        self.cols * self.rows
    }

    /// Tiles plus the thumbnail, if any.
    pub fn images(&self) -> u32 {
        self.tiles() + u32::from(self.thumbnail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilingConfig {
    pub tile_size: u32,
    pub min_tiles: u32,
    pub max_tiles: u32,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self { tile_size: 448, min_tiles: 1, max_tiles: 12 }
    }
}

/// Picks the grid whose aspect ratio is closest to the image's.
///
/// Grids are visited by increasing tile count (then columns). On an exact
/// aspect tie the larger grid wins only if the image covers more than half
/// of its pixel area, so small images are not upscaled onto many tiles.
/// Aspect differences are compared in exact integer arithmetic.
pub fn select_tiling(width: u32, height: u32, cfg: &TilingConfig) -> Tiling {
    let (w, h) = (u128::from(width.max(1)), u128::from(height.max(1)));
    let (lo, hi) = (cfg.min_tiles.max(1), cfg.max_tiles.max(cfg.min_tiles.max(1)));
    let mut grids: Vec<(u32, u32)> =
        (1..=hi).flat_map(|c| (1..=hi).map(move |r| (c, r))).filter(|&(c, r)| (lo..=hi).contains(&(c * r))).collect();
    grids.sort_by_key(|&(c, r)| (c * r, c));
    // |c/r − w/h| = num / (r·h); compare num_a·r_b against num_b·r_a
    let num = |(c, r): (u32, u32)| (u128::from(c) * h).abs_diff(u128::from(r) * w);
    let tile_area = u128::from(cfg.tile_size) * u128::from(cfg.tile_size);
    let mut best = grids[0];
    for &g in &grids[1..] {
        let lhs = num(g) * u128::from(best.1);
        let rhs = num(best) * u128::from(g.1);
        if lhs < rhs || (lhs == rhs && 2 * w * h > tile_area * u128::from(g.0 * g.1)) {
            best = g;
        }
    }
    Tiling { cols: best.0, rows: best.1, thumbnail: best.0 * best.1 > 1 }
}

/// Counts text tokens; swap in an exact tokenizer for production budgets.
pub trait TextTokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Approximation: one token per four characters of each alphanumeric run,
/// one per other non-space character.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenizer;

impl TextTokenizer for ApproxTokenizer {
    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut run = 0usize;
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                run += 1;
                continue;
            }
            n += run.div_ceil(4);
            run = 0;
            if !ch.is_whitespace() {
                n += 1;
            }
        }
        n + run.div_ceil(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenConfig {
    pub per_tile_tokens: usize,
    /// Start/end markers around the visual tokens.
    pub frame_markers: usize,
    pub tiling: TilingConfig,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self { per_tile_tokens: 256, frame_markers: 2, tiling: TilingConfig::default() }
    }
}

pub fn visual_tokens(tiling: Option<&Tiling>, cfg: &TokenConfig) -> usize {
    tiling.map_or(0, |t| cfg.per_tile_tokens * t.images() as usize + cfg.frame_markers)
}

/// Visual plus text tokens; `tiling = None` means a text-only record.
pub fn token_count(conv: &Conversation, tiling: Option<&Tiling>, cfg: &TokenConfig, tokenizer: &dyn TextTokenizer) -> usize {
    let text: usize = conv.conversations.iter().map(|t| tokenizer.count(&t.value.replace(IMAGE_TOKEN, ""))).sum();
    visual_tokens(tiling, cfg) + text
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackMember {
    pub id: String,
    pub token_start: usize,
    pub token_end: usize,
}

/// One context window; member ranges partition `[0, total_tokens)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSample {
    pub pack_id: u64,
    pub members: Vec<PackMember>,
    pub total_tokens: usize,
    /// A single record longer than the budget, passed through untruncated.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oversized: bool,
}

/// Greedy online packer: appends while the pack fits, else flushes.
#[derive(Debug, Clone)]
pub struct Packer {
    budget: usize,
    next_id: u64,
    members: Vec<PackMember>,
    total: usize,
}

impl Packer {
    pub fn new(budget: usize) -> Self {
        Self { budget, next_id: 0, members: Vec::new(), total: 0 }
    }

    fn take(&mut self, oversized: bool) -> PackedSample {
        let p = PackedSample { pack_id: self.next_id, members: std::mem::take(&mut self.members), total_tokens: self.total, oversized };
        self.next_id += 1;
        self.total = 0;
        p
    }

    /// Adds one record; returns the packs completed by it (at most two).
    pub fn push(&mut self, id: String, tokens: usize) -> Vec<PackedSample> {
        let mut done = Vec::new();
        if tokens > self.budget {
            log::warn!("record {id} has {tokens} tokens, over the {} budget; emitted unpacked", self.budget);
            if !self.members.is_empty() {
                done.push(self.take(false));
            }
            self.members.push(PackMember { id, token_start: 0, token_end: tokens });
            self.total = tokens;
            done.push(self.take(true));
            return done;
        }
        if self.total + tokens > self.budget && !self.members.is_empty() {
            done.push(self.take(false));
        }
        self.members.push(PackMember { id, token_start: self.total, token_end: self.total + tokens });
        self.total += tokens;
        done
    }

    pub fn finish(mut self) -> Option<PackedSample> {
        (!self.members.is_empty()).then(|| self.take(false))
    }
}

/// Packs `(id, tokens)` records in arrival order.
pub fn pack_stream(items: impl IntoIterator<Item = (String, usize)>, budget: usize) -> Vec<PackedSample> {
    let mut packer = Packer::new(budget);
    let mut out = Vec::new();
    for (id, tokens) in items {
        out.extend(packer.push(id, tokens));
    }
    out.extend(packer.finish());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(packs: &[PackedSample]) -> Vec<Vec<String>> {
        packs.iter().map(|p| p.members.iter().map(|m| m.id.clone()).collect()).collect()
    }

    #[test]
    fn tiling_examples() {
        let cfg = TilingConfig::default();
        assert_eq!(select_tiling(448, 448, &cfg), Tiling { cols: 1, rows: 1, thumbnail: false });
        assert_eq!(select_tiling(896, 448, &cfg), Tiling { cols: 2, rows: 1, thumbnail: true });
        assert_eq!(select_tiling(4000, 1000, &cfg), Tiling { cols: 4, rows: 1, thumbnail: true });
        // large square image spreads over a bigger grid
        assert_eq!(select_tiling(1344, 1344, &cfg), Tiling { cols: 3, rows: 3, thumbnail: true });
        assert_eq!(select_tiling(1, 100_000, &cfg).tiles(), 12);
    }

    #[test]
    fn approx_tokenizer() {
        let t = ApproxTokenizer;
        assert_eq!(t.count(""), 0);
        assert_eq!(t.count("abcd"), 1);
        assert_eq!(t.count("abcde"), 2);
        assert_eq!(t.count("[12, 3]"), 5);
    }

    #[test]
    fn visual_arithmetic() {
        let cfg = TokenConfig::default();
        let t = Tiling { cols: 2, rows: 1, thumbnail: true };
        assert_eq!(visual_tokens(Some(&t), &cfg), 256 * 3 + 2);
        let conv = Conversation::new("x".into(), "i.png".into(), vec![("Detect car.".into(), "<no_object/>".into())]);
        assert_eq!(token_count(&conv, None, &cfg, &ApproxTokenizer), ApproxTokenizer.count("\nDetect car.") + ApproxTokenizer.count("<no_object/>"));
    }

    #[test]
    fn packs_greedily() {
        let packs = pack_stream([("0".to_string(), 6000), ("1".into(), 6000), ("2".into(), 5000)], DEFAULT_BUDGET);
        assert_eq!(ids(&packs), [vec!["0", "1"], vec!["2"]]);
        assert_eq!(packs[0].members[1], PackMember { id: "1".into(), token_start: 6000, token_end: 12000 });
        let full = pack_stream([("a".to_string(), DEFAULT_BUDGET)], DEFAULT_BUDGET);
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].total_tokens, DEFAULT_BUDGET);
        assert!(!full[0].oversized);
        assert!(pack_stream(Vec::<(String, usize)>::new(), DEFAULT_BUDGET).is_empty());
    }

    #[test]
    fn oversized_passes_through() {
        let packs = pack_stream([("a".to_string(), 10), ("big".into(), 20_000), ("b".into(), 10)], DEFAULT_BUDGET);
        assert_eq!(ids(&packs), [vec!["a"], vec!["big"], vec!["b"]]);
        assert!(packs[1].oversized && !packs[0].oversized);
        assert_eq!(packs.iter().map(|p| p.pack_id).collect::<Vec<_>>(), [0, 1, 2]);
    }
}
