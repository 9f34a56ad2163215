//! Volumetric AP₃D.
//!
//! The decoder emits no scores, so the emission rank inside each
//! `(image, category)` response is the confidence: every image's first
//! prediction outranks every image's second one, and predictions sharing a
//! rank form one block on the precision–recall curve. AP is the area under
//! the monotone (all-point) precision envelope, then averaged over the IoU
//! threshold sweep, over categories within a dataset, and over datasets.
//!
//! `Ranking::Uniform` ties every prediction instead, giving a single PR point.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{decode_sequence, DecodeMode, SerializationPolicy};
use crate::curation::CanonicalLine;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, Rotation};
use crate::iou3d::iou3d_exact;
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Scalar;

pub const DETECTION_THRESHOLDS: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];
pub const GROUNDING_THRESHOLDS: [f64; 3] = [0.15, 0.25, 0.50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Only categories annotated in an image are scored there.
    #[default]
    TargetAware,
    /// Predictions for any category count, false positives included.
    FixedVocabulary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranking {
    #[default]
    EmissionOrder,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub protocol: Protocol,
    pub ranking: Ranking,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { thresholds: DETECTION_THRESHOLDS.to_vec(), protocol: Protocol::default(), ranking: Ranking::default() }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        validate_thresholds(&self.thresholds)
    }
}

/// Thresholds must be strictly increasing and lie in (0, 1].
pub fn validate_thresholds(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::invalid("empty threshold list"));
    }
    if t.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::invalid("thresholds must lie in (0, 1]"));
    }
    if t.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("thresholds must be strictly increasing"));
    }
    Ok(())
}

/// Annotated boxes of one category in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<F> {
    pub image_id: String,
    pub dataset: String,
    pub category: String,
    pub boxes: Vec<Box3D<F>>,
}

/// Model output for one `(image, category)` prompt, in emission order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult<F> {
    pub image_id: String,
    pub category: String,
    pub predictions: Vec<Box3D<F>>,
    pub diagnostics: Vec<String>,
}

/// Per-image prompt sets under the target-aware protocol.
pub fn target_aware_prompts<F>(gts: &[GroundTruth<F>]) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for g in gts.iter().filter(|g| !g.boxes.is_empty()) {
        out.entry(g.image_id.clone()).or_default().insert(g.category.clone());
    }
    out
}

/// IoU of every prediction against every ground truth; degenerate boxes score 0.
pub fn iou_matrix<F: Scalar>(preds: &[Box3D<F>], gts: &[Box3D<F>]) -> Vec<Vec<f64>> {
    preds.iter().map(|p| gts.iter().map(|g| iou3d_exact(p, g).map_or(0.0, |v| v.as_f64())).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// True positive flag per prediction, in emission order.
    pub tp: Vec<bool>,
    pub unmatched_gt: usize,
}

/// Greedy matching on a precomputed IoU matrix.
pub fn match_greedy_matrix(ious: &[Vec<f64>], num_gt: usize, tau: f64) -> MatchResult {
    let mut taken = vec![false; num_gt];
    let tp = ious
        .iter()
        .map(|row| {
            let best = (0..num_gt).filter(|&j| !taken[j]).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)));
            match best {
                Some(j) if row[j] >= tau => {
                    taken[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect();
    MatchResult { tp, unmatched_gt: taken.iter().filter(|t| !**t).count() }
}

/// Each prediction, in emission order, takes the unmatched ground truth of
/// highest IoU when that IoU reaches `tau`.
pub fn match_greedy<F: Scalar>(preds: &[Box3D<F>], gts: &[Box3D<F>], tau: f64) -> MatchResult {
    match_greedy_matrix(&iou_matrix(preds, gts), gts.len(), tau)
}

/// AP from per-image TP flags (each in emission order) and the total GT count.
///
/// `None` when there is no ground truth.
pub fn ap_at_threshold(per_image: &[Vec<bool>], num_gt: usize, ranking: Ranking) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let depth = per_image.iter().map(Vec::len).max().unwrap_or(0);
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    match ranking {
        Ranking::EmissionOrder => {
            for rank in 0..depth {
                let (mut tp, mut fp) = (0, 0);
                for flags in per_image {
                    match flags.get(rank) {
                        Some(true) => tp += 1,
                        Some(false) => fp += 1,
                        None => {}
                    }
                }
                blocks.push((tp, fp));
            }
        }
        Ranking::Uniform => {
            let tp = per_image.iter().flatten().filter(|t| **t).count();
            let total: usize = per_image.iter().map(Vec::len).sum();
            blocks.push((tp, total - tp));
        }
    }
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(blocks.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (t, f) in blocks {
        tp += t;
        fp += f;
        if tp + fp > 0 {
            points.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    // walk from the last point back so the envelope is a running maximum
    for (i, &(r, p)) in points.iter().enumerate().rev() {
        envelope = envelope.max(p);
        let lower = if i == 0 { 0.0 } else { points[i - 1].0 };
        ap += (r - lower) * envelope;
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub num_gt: usize,
    pub num_pred: usize,
    /// AP per threshold, aligned with the report's threshold list.
    pub ap_per_threshold: Vec<f64>,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    pub ap: f64,
    pub categories: Vec<CategoryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub protocol: Protocol,
    pub ranking: Ranking,
    /// Macro average over datasets.
    pub mean_ap: Option<f64>,
    pub datasets: Vec<DatasetReport>,
    pub diagnostics: Vec<String>,
}

impl EvalReport {
    /// Aligned text table: one row per category, then per-dataset and overall means.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14} {:<24} {:>6} {:>6} {:>8}\n", "dataset", "category", "gt", "pred", "AP3D");
        for d in &self.datasets {
            for c in &d.categories {
                out += &format!("{:<14} {:<24} {:>6} {:>6} {:>8.2}\n", d.dataset, c.category, c.num_gt, c.num_pred, 100.0 * c.ap);
            }
            out += &format!("{:<14} {:<24} {:>6} {:>6} {:>8.2}\n", d.dataset, "(mean)", "", "", 100.0 * d.ap);
        }
        if let Some(m) = self.mean_ap {
            out += &format!("{:<14} {:<24} {:>6} {:>6} {:>8.2}\n", "overall", "(mean)", "", "", 100.0 * m);
        }
        out
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

struct Cell {
    ious: Vec<Vec<f64>>,
    num_gt: usize,
}

/// AP per (dataset, category, threshold) and the averages above it.
pub fn ap_sweep<F: Scalar>(gts: &[GroundTruth<F>], results: &[DetectionResult<F>], cfg: &EvalConfig) -> Result<EvalReport> {
    use rayon::prelude::*;
    cfg.validate()?;
    let mut diagnostics = Vec::new();

    type Keyed<F> = BTreeMap<(String, String), (String, Vec<Box3D<F>>)>;
    let mut gt_map: Keyed<F> = BTreeMap::new();
    for g in gts {
        let e = gt_map.entry((g.image_id.clone(), g.category.clone())).or_insert_with(|| (g.dataset.clone(), Vec::new()));
        e.1.extend(g.boxes.iter().copied());
    }
    let image_dataset: BTreeMap<&str, &str> = gt_map.iter().map(|((img, _), (ds, _))| (img.as_str(), ds.as_str())).collect();

    let mut pred_map: BTreeMap<(String, String), Vec<Box3D<F>>> = BTreeMap::new();
    for r in results {
        for d in &r.diagnostics {
            diagnostics.push(format!("{} / {}: {d}", r.image_id, r.category));
        }
        let key = (r.image_id.clone(), r.category.clone());
        if !gt_map.contains_key(&key) {
            match cfg.protocol {
                Protocol::TargetAware => {
                    diagnostics.push(format!("{} / {}: category not annotated in image; ignored", r.image_id, r.category));
                    continue;
                }
                Protocol::FixedVocabulary if !image_dataset.contains_key(r.image_id.as_str()) => {
                    diagnostics.push(format!("{}: image has no ground truth; ignored", r.image_id));
                    continue;
                }
                Protocol::FixedVocabulary => {}
            }
        }
        pred_map.entry(key).or_default().extend(r.predictions.iter().copied());
    }

    let keys: BTreeSet<&(String, String)> = gt_map.keys().chain(pred_map.keys()).collect();
    let keys: Vec<&(String, String)> = keys.into_iter().collect();
    let empty: Vec<Box3D<F>> = Vec::new();
    let cells: Vec<Cell> = keys
        .par_iter()
        .map(|k| {
            let g = gt_map.get(*k).map_or(&empty, |(_, b)| b);
            let p = pred_map.get(*k).map_or(&empty, |b| b);
            Cell { ious: iou_matrix(p, g), num_gt: g.len() }
        })
        .collect();

    // (dataset, category) → indices into cells
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, (img, cat)) in keys.iter().enumerate() {
        let ds = image_dataset[img.as_str()];
        groups.entry((ds, cat.as_str())).or_default().push(i);
    }

    let mut datasets: BTreeMap<&str, Vec<CategoryReport>> = BTreeMap::new();
    for ((ds, cat), idx) in groups {
        let num_gt: usize = idx.iter().map(|&i| cells[i].num_gt).sum();
        let num_pred: usize = idx.iter().map(|&i| cells[i].ious.len()).sum();
        if num_gt == 0 {
            diagnostics.push(format!("{ds} / {cat}: predictions without ground truth; no AP"));
            continue;
        }
        let ap_per_threshold: Vec<f64> = cfg
            .thresholds
            .iter()
            .map(|&tau| {
                let flags: Vec<Vec<bool>> = idx.iter().map(|&i| match_greedy_matrix(&cells[i].ious, cells[i].num_gt, tau).tp).collect();
                ap_at_threshold(&flags, num_gt, cfg.ranking).unwrap_or(0.0)
            })
            .collect();
        let ap = mean(ap_per_threshold.iter().copied()).unwrap_or(0.0);
        datasets.entry(ds).or_default().push(CategoryReport { category: cat.to_string(), num_gt, num_pred, ap_per_threshold, ap });
    }
    let datasets: Vec<DatasetReport> = datasets
        .into_iter()
        .map(|(ds, categories)| DatasetReport {
            dataset: ds.to_string(),
            ap: mean(categories.iter().map(|c| c.ap)).unwrap_or(0.0),
            categories,
        })
        .collect();
    Ok(EvalReport {
        thresholds: cfg.thresholds.clone(),
        protocol: cfg.protocol,
        ranking: cfg.ranking,
        mean_ap: mean(datasets.iter().map(|d| d.ap)),
        datasets,
        diagnostics,
    })
}

/// One grounding query: at most one predicted box against every box matching the text.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingQuery<F> {
    pub prediction: Option<Box3D<F>>,
    pub targets: Vec<Box3D<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub thresholds: Vec<f64>,
    /// Fraction of correct queries per threshold.
    pub accuracy: Vec<f64>,
    pub ap: f64,
    pub num_queries: usize,
}

/// Best IoU of the prediction over all matching targets, 0 without a prediction.
pub fn grounding_iou<F: Scalar>(q: &GroundingQuery<F>) -> f64 {
    q.prediction.map_or(0.0, |p| q.targets.iter().map(|t| iou3d_exact(&p, t).map_or(0.0, |v| v.as_f64())).fold(0.0, f64::max))
}

pub fn grounding_score<F: Scalar>(queries: &[GroundingQuery<F>], thresholds: &[f64]) -> Result<GroundingReport> {
    validate_thresholds(thresholds)?;
    let ious: Vec<f64> = queries.iter().map(grounding_iou).collect();
    let accuracy: Vec<f64> = thresholds
        .iter()
        .map(|&t| if ious.is_empty() { 0.0 } else { ious.iter().filter(|&&v| v >= t).count() as f64 / ious.len() as f64 })
        .collect();
    let ap = mean(accuracy.iter().copied()).unwrap_or(0.0);
    Ok(GroundingReport { thresholds: thresholds.to_vec(), accuracy, ap, num_queries: queries.len() })
}

/// Ground truth from canonical lines: one entry per line.
pub fn ground_truth_from_canonical(lines: &[CanonicalLine]) -> Vec<GroundTruth<f64>> {
    lines
        .iter()
        .map(|l| GroundTruth {
            image_id: l.image_path.clone(),
            dataset: l.dataset().to_string(),
            category: l.category.clone(),
            boxes: l.instances.iter().map(|r| r.box3d).collect(),
        })
        .collect()
}

/// A pre-decoded predicted box; rotation from `rot_matrix`, `euler_zyx` or `yaw`, else identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxJson {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rot_matrix: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euler_zyx: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
}

impl BoxJson {
    pub fn to_box(&self) -> Result<Box3D<f64>> {
        let rotation = match (self.rot_matrix, self.euler_zyx, self.yaw) {
            (Some(m), _, _) => Rotation::from_matrix(Mat3::from_row_major(m))?,
            (None, Some(e), _) => Rotation::from_euler_zyx(e)?,
            (None, None, Some(y)) => Rotation::about_up(y),
            _ => Rotation::identity(),
        };
        let b = Box3D::new(Vec3(self.center), Vec3(self.dims), rotation);
        b.validate()?;
        Ok(b)
    }

    pub fn from_box(b: &Box3D<f64>) -> Self {
        Self { center: b.center.0, dims: b.dims.0, rot_matrix: Some(b.rotation.matrix().row_major()), euler_zyx: None, yaw: None }
    }
}

/// One predictions line: raw model text or pre-decoded boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub image_id: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes3d: Option<Vec<BoxJson>>,
}

impl PredictionLine {
    /// Decodes the line; unparseable text yields no predictions and a diagnostic.
    pub fn into_result(self, policy: &SerializationPolicy) -> DetectionResult<f64> {
        let mut diagnostics = Vec::new();
        let mut predictions = Vec::new();
        if let Some(boxes) = &self.boxes3d {
            for (i, b) in boxes.iter().enumerate() {
                match b.to_box() {
                    Ok(b) => predictions.push(b),
                    Err(e) => diagnostics.push(format!("box {i}: {e}")),
                }
            }
        } else if let Some(text) = &self.response_text {
            match decode_sequence::<f64>(text, policy, DecodeMode::Recover) {
                Ok(d) => {
                    diagnostics.extend(d.diagnostics.iter().map(|d| format!("at byte {}: {}", d.offset, d.message)));
                    predictions.extend(d.sequence.instances.iter().map(|i| i.box3d));
                }
                Err(e) => diagnostics.push(e.to_string()),
            }
        } else {
            diagnostics.push("neither response_text nor boxes3d given".into());
        }
        DetectionResult { image_id: self.image_id, category: self.category, predictions, diagnostics }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(x: f64) -> Box3D<f64> {
        Box3D::axis_aligned(Vec3::new(x, 0.0, 10.0), Vec3::new(1.0, 1.0, 1.0))
    }

    /// Unit cube shifted along x so that its IoU with `cube(0)` is `iou`.
    fn cube_with_iou(iou: f64) -> Box3D<f64> {
        // overlap o: o / (2 − o) = iou
        let o = 2.0 * iou / (1.0 + iou);
        cube(1.0 - o)
    }

    /// Contains `cube(0)` and has four times its volume: IoU exactly 0.25.
    fn quarter_box() -> Box3D<f64> {
        Box3D::axis_aligned(Vec3::new(0.0, 0.0, 10.0), Vec3::new(2.0, 2.0, 1.0))
    }

    fn gt(img: &str, ds: &str, cat: &str, boxes: Vec<Box3D<f64>>) -> GroundTruth<f64> {
        GroundTruth { image_id: img.into(), dataset: ds.into(), category: cat.into(), boxes }
    }

    fn det(img: &str, cat: &str, predictions: Vec<Box3D<f64>>) -> DetectionResult<f64> {
        DetectionResult { image_id: img.into(), category: cat.into(), predictions, diagnostics: vec![] }
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(match_greedy(&[cube_with_iou(0.6)], &[cube(0.0)], 0.5).tp, [true]);
        let m = match_greedy(&[cube_with_iou(0.7), cube_with_iou(0.6)], &[cube(0.0)], 0.5);
        assert_eq!(m.tp, [true, false]);
        assert_eq!(match_greedy::<f64>(&[], &[cube(0.0), cube(3.0)], 0.5).unmatched_gt, 2);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(ap_at_threshold(&[vec![true]], 1, Ranking::EmissionOrder), Some(1.0));
        assert_eq!(ap_at_threshold(&[vec![true, false]], 1, Ranking::EmissionOrder), Some(1.0));
        assert_eq!(ap_at_threshold(&[vec![false, true]], 1, Ranking::EmissionOrder), Some(0.5));
        assert_eq!(ap_at_threshold(&[vec![]], 2, Ranking::EmissionOrder), Some(0.0));
        assert_eq!(ap_at_threshold(&[vec![true]], 0, Ranking::EmissionOrder), None);
        assert_eq!(ap_at_threshold(&[vec![false, true]], 1, Ranking::Uniform), Some(0.5));
    }

    #[test]
    fn sweep_fixtures() {
        let cfg = EvalConfig::default();
        let r = ap_sweep(&[gt("a", "d", "car", vec![quarter_box()])], &[det("a", "car", vec![cube(0.0)])], &cfg).unwrap();
        let per = &r.datasets[0].categories[0].ap_per_threshold;
        assert_eq!(per, &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((r.mean_ap.unwrap() - 0.5).abs() < 1e-9);

        let mixed = ap_sweep(
            &[gt("a", "d", "car", vec![quarter_box()]), gt("b", "d", "van", vec![cube(0.0)])],
            &[det("a", "car", vec![cube(0.0)]), det("b", "van", vec![cube_with_iou(0.6)])],
            &cfg,
        )
        .unwrap();
        assert!((mixed.mean_ap.unwrap() - 0.75).abs() < 1e-9);

        let empty = ap_sweep(&[gt("a", "d", "car", vec![cube(0.0)])], &[], &cfg).unwrap();
        assert_eq!(empty.datasets[0].categories[0].ap, 0.0);
    }

    #[test]
    fn target_aware_ignores_unprompted_categories() {
        let gts = [gt("a", "d", "car", vec![cube(0.0)])];
        let preds = [det("a", "car", vec![cube(0.0)]), det("a", "bus", vec![cube(5.0)])];
        let r = ap_sweep(&gts, &preds, &EvalConfig::default()).unwrap();
        assert_eq!(r.mean_ap, Some(1.0));
        assert_eq!(r.diagnostics.len(), 1);
        let prompts = target_aware_prompts(&[gt("a", "d", "car", vec![cube(0.0)]), gt("a", "d", "pedestrian", vec![cube(2.0)]), gt("b", "d", "car", vec![])]);
        assert_eq!(prompts.len(), 1);
        assert_eq!(prompts["a"].len(), 2);
    }

    #[test]
    fn grounding_fixtures() {
        let t = GROUNDING_THRESHOLDS;
        let q = GroundingQuery { prediction: Some(cube(0.0)), targets: vec![cube_with_iou(0.3)] };
        let r = grounding_score(&[q], &t).unwrap();
        assert_eq!(r.accuracy, [1.0, 1.0, 0.0]);
        assert!((r.ap - 2.0 / 3.0).abs() < 1e-15);
        let q = GroundingQuery { prediction: Some(cube(0.0)), targets: vec![cube_with_iou(0.1), cube_with_iou(0.6)] };
        assert_eq!(grounding_score(&[q], &t).unwrap().ap, 1.0);
        let q = GroundingQuery::<f64> { prediction: None, targets: vec![cube(0.0)] };
        assert_eq!(grounding_score(&[q], &t).unwrap().ap, 0.0);
    }

    #[test]
    fn threshold_validation() {
        assert!(validate_thresholds(&[0.1, 0.1]).is_err());
        assert!(validate_thresholds(&[0.0, 0.5]).is_err());
        assert!(validate_thresholds(&[0.5, 1.0]).is_ok());
    }
}
