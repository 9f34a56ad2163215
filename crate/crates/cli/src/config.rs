//! TOML configuration. Flags override the file, the file overrides defaults.
//!
//! ```toml
//! seed = 7
//! policy = "order=near-to-far,factorization=2d-3d,intra=center-size-rotation,layout=interleaved,rotation=euler-unit"
//!
//! [curation]
//! min_visibility = 0.16
//! max_truncation = 0.84
//! depth_mode = "center-z"
//!
//! [negatives]
//! max_fraction = 0.1
//! max_per_image = 2
//! hard_share = 0.5
//! proximity = "proximity.tsv"
//! vocabulary = "vocabulary.txt"
//!
//! [packaging]
//! templates = "templates.txt"
//! grounding = "none"
//!
//! [packing]
//! budget = 16384
//! per_tile_tokens = 256
//! frame_markers = 2
//! tile_size = 448
//! min_tiles = 1
//! max_tiles = 12
//!
//! [eval]
//! thresholds = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50]
//! protocol = "target-aware"
//! ranking = "emission-order"
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use cos3d::eval::{Protocol, Ranking};
use cos3d::geometry::DepthMode;
use serde::Deserialize;

use crate::{Failure, GroundingChoice};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub policy: Option<String>,
    #[serde(default)]
    pub curation: CurationSection,
    #[serde(default)]
    pub negatives: NegativesSection,
    #[serde(default)]
    pub packaging: PackagingSection,
    #[serde(default)]
    pub packing: PackingSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationSection {
    pub min_visibility: Option<f64>,
    pub max_truncation: Option<f64>,
    pub depth_mode: Option<DepthMode>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegativesSection {
    pub max_fraction: Option<f64>,
    pub max_per_image: Option<usize>,
    pub hard_share: Option<f64>,
    pub proximity: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackagingSection {
    pub templates: Option<PathBuf>,
    pub grounding: Option<GroundingChoice>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackingSection {
    pub budget: Option<usize>,
    pub per_tile_tokens: Option<usize>,
    pub frame_markers: Option<usize>,
    pub tile_size: Option<u32>,
    pub min_tiles: Option<u32>,
    pub max_tiles: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub thresholds: Option<Vec<f64>>,
    pub protocol: Option<Protocol>,
    pub ranking: Option<Ranking>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| Failure::usage(format!("bad config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.negatives.proximity, &mut cfg.negatives.vocabulary, &mut cfg.packaging.templates].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
