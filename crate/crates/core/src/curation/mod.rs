//! Stage I: canonical multi-box normalization.
//!
//! Adapters turn dataset-native annotations into [`RawFrame`]s. Each frame is
//! then snapped onto the two-decimal grid the corpus is stored at, given
//! visibility and truncation (native or estimated), filtered, and grouped into
//! one depth-sorted [`CanonicalLine`] per `(image, category)`.
//!
//! Snapping happens before any geometric test so that re-ingesting the
//! canonical output reproduces it byte for byte.

mod adapters;
mod canonical;
pub mod synthetic;

use serde::{Deserialize, Serialize};

pub use adapters::{
    AdapterRegistry, CanonicalAdapter, DatasetAdapter, FrameStream, IngestDiagnostic, KittiAdapter, SyntheticAdapter,
    SyntheticFrameJson, SyntheticInstanceJson,
};
pub use canonical::{parse_canonical_line, CanonicalInstanceJson, CanonicalLineJson};

use crate::codec::round2;
use crate::geometry::{
    frustum_status, project_box, truncation_estimate, visibility_estimate, Box2D, Box3D, CameraIntrinsics, DepthMode,
    FrustumStatus, Occupant, Rect, Rotation,
};
use crate::linalg::Vec3;

/// Dataset id plus the instance id used by the source annotation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub dataset: String,
    pub instance_id: String,
}

/// One annotated object as delivered by an adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance {
    pub category: String,
    pub box3d: Box3D<f64>,
    /// Native tight 2D box in pixels, if the dataset provides one.
    pub box2d_px: Option<Rect<f64>>,
    pub visibility: Option<f64>,
    pub truncation: Option<f64>,
    /// The supplied visibility/truncation were themselves estimates.
    pub estimated: bool,
    pub source: SourceRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub image_path: String,
    pub intrinsics: CameraIntrinsics<f64>,
    pub instances: Vec<RawInstance>,
}

/// A normalized instance with every redundant parameterization attached.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub category: String,
    pub box3d: Box3D<f64>,
    pub box2d: Box2D<f64>,
    pub depth: f64,
    pub visibility: Option<f64>,
    pub truncation: Option<f64>,
    pub estimated: bool,
    pub source: SourceRef,
    /// Position in the source frame's annotation list.
    pub annotation_index: usize,
}

/// All kept instances of one category in one image, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalLine {
    pub image_path: String,
    pub category: String,
    pub intrinsics: CameraIntrinsics<f64>,
    pub instances: Vec<InstanceRecord>,
}

impl CanonicalLine {
    pub fn image_width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn image_height(&self) -> u32 {
        self.intrinsics.height
    }

    /// Dataset id: the leading component of the image path.
    pub fn dataset(&self) -> &str {
        dataset_of(&self.image_path)
    }
}

/// Leading path component of an image path, used as its dataset id.
pub fn dataset_of(image_path: &str) -> &str {
    image_path.split('/').find(|s| !s.is_empty()).unwrap_or(image_path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    BehindCamera,
    FullyOutside,
    LowVisibility,
    HighTruncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub image_path: String,
    pub category: String,
    pub dataset: String,
    pub instance_id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurationConfig {
    pub depth_mode: DepthMode,
    /// Kept iff visibility is strictly greater.
    pub min_visibility: f64,
    /// Kept iff truncation is strictly smaller.
    pub max_truncation: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { depth_mode: DepthMode::CenterZ, min_visibility: 0.16, max_truncation: 0.84 }
    }
}

fn round2_vec(v: Vec3<f64>) -> Vec3<f64> {
    Vec3(v.0.map(round2))
}

fn round2_rect(r: &Rect<f64>) -> Rect<f64> {
    Rect::from_array(r.to_array().map(round2))
}

/// Snaps a rotation onto the two-decimal Euler-unit grid.
///
/// Iterates to a fixed point so that extracting and re-rounding the snapped
/// rotation gives the same grid values (matters at gimbal lock).
pub fn snap_rotation(r: &Rotation<f64>) -> Rotation<f64> {
    let mut units = r.euler_unit().map(round2);
    let mut snapped = Rotation::from_euler_unit(units).expect("finite grid values");
    for _ in 0..4 {
        let again = snapped.euler_unit().map(round2);
        if again == units {
            break;
        }
        units = again;
        snapped = Rotation::from_euler_unit(units).expect("finite grid values");
    }
    snapped
}

pub fn snap_box(b: &Box3D<f64>) -> Box3D<f64> {
    Box3D::new(round2_vec(b.center), round2_vec(b.dims), snap_rotation(&b.rotation))
}

pub fn snap_intrinsics(c: &CameraIntrinsics<f64>) -> CameraIntrinsics<f64> {
    CameraIntrinsics { fx: round2(c.fx), fy: round2(c.fy), cx: round2(c.cx), cy: round2(c.cy), ..*c }
}

/// Normalization outcome for one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameOutput {
    pub lines: Vec<CanonicalLine>,
    pub drops: Vec<DropRecord>,
}

struct Prepared {
    record: InstanceRecord,
    status: FrustumStatus,
}

/// Snaps values, attaches 2D boxes and visibility/truncation (estimating when absent).
pub fn canonicalize_frame(frame: &RawFrame, cfg: &CurationConfig) -> (CameraIntrinsics<f64>, Vec<(InstanceRecord, FrustumStatus)>) {
    let cam = snap_intrinsics(&frame.intrinsics);
    let mut prepared: Vec<Prepared> = frame
        .instances
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            let box3d = snap_box(&raw.box3d);
            let status = frustum_status(&box3d, &cam);
            let pixel = match raw.box2d_px {
                Some(r) => round2_rect(&r.intersect(&cam.image_rect())),
                None => project_box(&box3d, &cam)
                    .map(|p| round2_rect(&p.clipped.pixel))
                    .unwrap_or_default(),
            };
            let record = InstanceRecord {
                category: raw.category.clone(),
                box3d,
                box2d: Box2D::from_pixel(pixel, &cam),
                depth: round2(box3d.depth(cfg.depth_mode)),
                visibility: raw.visibility.map(round2),
                truncation: raw.truncation.map(round2),
                estimated: raw.estimated,
                source: raw.source.clone(),
                annotation_index: i,
            };
            Prepared { record, status }
        })
        .collect();

    let occupants: Vec<Option<Occupant<f64>>> = prepared
        .iter()
        .map(|p| (p.status != FrustumStatus::BehindCamera).then_some(Occupant { depth: p.record.depth, rect: p.record.box2d.pixel }))
        .collect();
    for (i, p) in prepared.iter_mut().enumerate() {
        if p.record.visibility.is_none() {
            let others: Vec<Occupant<f64>> =
                occupants.iter().enumerate().filter(|(j, _)| *j != i).filter_map(|(_, o)| *o).collect();
            let target = Occupant { depth: p.record.depth, rect: p.record.box2d.pixel };
            let v = if p.status == FrustumStatus::BehindCamera { 0.0 } else { visibility_estimate(&target, &others) };
            p.record.visibility = Some(round2(v));
            p.record.estimated = true;
        }
        if p.record.truncation.is_none() {
            p.record.truncation = Some(round2(truncation_estimate(&p.record.box3d, &cam)));
            p.record.estimated = true;
        }
    }
    (cam, prepared.into_iter().map(|p| (p.record, p.status)).collect())
}

/// The first failed predicate, or `None` when the instance is kept.
pub fn drop_reason(record: &InstanceRecord, status: FrustumStatus, cfg: &CurationConfig) -> Option<DropReason> {
    match status {
        FrustumStatus::BehindCamera => return Some(DropReason::BehindCamera),
        FrustumStatus::FullyOutside => return Some(DropReason::FullyOutside),
        _ => {}
    }
    if !record.visibility.is_some_and(|v| v > cfg.min_visibility) {
        return Some(DropReason::LowVisibility);
    }
    if !record.truncation.is_some_and(|t| t < cfg.max_truncation) {
        return Some(DropReason::HighTruncation);
    }
    None
}

/// Splits records into kept ones and a drop report with one reason each.
pub fn filter_instances(
    image_path: &str,
    records: Vec<(InstanceRecord, FrustumStatus)>,
    cfg: &CurationConfig,
) -> (Vec<InstanceRecord>, Vec<DropRecord>) {
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for (rec, status) in records {
        match drop_reason(&rec, status, cfg) {
            None => kept.push(rec),
            Some(reason) => drops.push(DropRecord {
                image_path: image_path.to_string(),
                category: rec.category.clone(),
                dataset: rec.source.dataset.clone(),
                instance_id: rec.source.instance_id.clone(),
                reason,
            }),
        }
    }
    (kept, drops)
}

/// Groups kept records by category (first-appearance order) and sorts each
/// group by depth, ties keeping annotation order.
pub fn build_canonical_lines(image_path: &str, cam: &CameraIntrinsics<f64>, kept: Vec<InstanceRecord>) -> Vec<CanonicalLine> {
    let mut lines: Vec<CanonicalLine> = Vec::new();
    for rec in kept {
        match lines.iter_mut().find(|l| l.category == rec.category) {
            Some(line) => line.instances.push(rec),
            None => lines.push(CanonicalLine {
                image_path: image_path.to_string(),
                category: rec.category.clone(),
                intrinsics: *cam,
                instances: vec![rec],
            }),
        }
    }
    for line in &mut lines {
        line.instances.sort_by(|a, b| {
            a.depth.partial_cmp(&b.depth).unwrap_or(std::cmp::Ordering::Equal).then(a.annotation_index.cmp(&b.annotation_index))
        });
    }
    lines
}

/// Full Stage I for one frame.
pub fn normalize_frame(frame: &RawFrame, cfg: &CurationConfig) -> FrameOutput {
    let (cam, records) = canonicalize_frame(frame, cfg);
    let (kept, drops) = filter_instances(&frame.image_path, records, cfg);
    FrameOutput { lines: build_canonical_lines(&frame.image_path, &cam, kept), drops }
}

/// Normalizes frames in parallel; output order follows input order.
pub fn normalize_frames(frames: &[RawFrame], cfg: &CurationConfig) -> Vec<FrameOutput> {
    use rayon::prelude::*;
    frames.par_iter().map(|f| normalize_frame(f, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1000.0, 1000.0, 500.0, 500.0, 1000, 1000).unwrap()
    }

    fn raw(id: &str, category: &str, center: [f64; 3], vis: Option<f64>, trunc: Option<f64>) -> RawInstance {
        RawInstance {
            category: category.into(),
            box3d: Box3D::axis_aligned(Vec3(center), Vec3::new(1.0, 1.0, 1.0)),
            box2d_px: None,
            visibility: vis,
            truncation: trunc,
            estimated: false,
            source: SourceRef { dataset: "test".into(), instance_id: id.into() },
        }
    }

    fn frame(instances: Vec<RawInstance>) -> RawFrame {
        RawFrame { image_path: "test/0001.png".into(), intrinsics: cam(), instances }
    }

    #[test]
    fn visibility_and_truncation_thresholds_are_strict() {
        let f = frame(vec![
            raw("v15", "car", [-2.0, 0.0, 10.0], Some(0.15), Some(0.0)),
            raw("v16", "car", [-1.0, 0.0, 10.0], Some(0.16), Some(0.0)),
            raw("v17", "car", [0.0, 0.0, 10.0], Some(0.17), Some(0.0)),
            raw("t83", "car", [1.0, 0.0, 10.0], Some(1.0), Some(0.83)),
            raw("t84", "car", [2.0, 0.0, 10.0], Some(1.0), Some(0.84)),
            raw("t85", "car", [3.0, 0.0, 10.0], Some(1.0), Some(0.85)),
        ]);
        let out = normalize_frame(&f, &CurationConfig::default());
        let kept: Vec<&str> = out.lines[0].instances.iter().map(|r| r.source.instance_id.as_str()).collect();
        assert_eq!(kept, ["v17", "t83"]);
        let reasons: Vec<(&str, DropReason)> = out.drops.iter().map(|d| (d.instance_id.as_str(), d.reason)).collect();
        assert_eq!(
            reasons,
            [
                ("v15", DropReason::LowVisibility),
                ("v16", DropReason::LowVisibility),
                ("t84", DropReason::HighTruncation),
                ("t85", DropReason::HighTruncation)
            ]
        );
    }

    #[test]
    fn geometric_drops() {
        let f = frame(vec![raw("behind", "car", [0.0, 0.0, -2.0], None, None), raw("off", "car", [80.0, 0.0, 5.0], None, None)]);
        let out = normalize_frame(&f, &CurationConfig::default());
        assert!(out.lines.is_empty());
        assert_eq!(out.drops[0].reason, DropReason::BehindCamera);
        assert_eq!(out.drops[1].reason, DropReason::FullyOutside);
    }

    #[test]
    fn lines_group_by_category_and_sort_by_depth() {
        let f = frame(vec![
            raw("a", "car", [-2.0, 0.0, 7.2], Some(1.0), Some(0.0)),
            raw("b", "car", [0.0, 0.0, 3.1], Some(1.0), Some(0.0)),
            raw("p", "pedestrian", [1.0, 0.0, 6.0], Some(1.0), Some(0.0)),
            raw("c", "car", [2.0, 0.0, 5.0], Some(1.0), Some(0.0)),
        ]);
        let out = normalize_frame(&f, &CurationConfig::default());
        assert_eq!(out.lines.len(), 2);
        assert_eq!(out.lines[0].category, "car");
        let depths: Vec<f64> = out.lines[0].instances.iter().map(|r| r.depth).collect();
        assert_eq!(depths, [3.1, 5.0, 7.2]);
        assert_eq!(out.lines[1].category, "pedestrian");
    }

    #[test]
    fn equal_depths_keep_annotation_order() {
        let f = frame(vec![
            raw("first", "car", [1.0, 0.0, 4.0], Some(1.0), Some(0.0)),
            raw("second", "car", [-1.0, 0.0, 4.0], Some(1.0), Some(0.0)),
        ]);
        let out = normalize_frame(&f, &CurationConfig::default());
        let ids: Vec<&str> = out.lines[0].instances.iter().map(|r| r.source.instance_id.as_str()).collect();
        assert_eq!(ids, ["first", "second"]);
    }

    #[test]
    fn missing_metadata_is_estimated_and_flagged() {
        let f = frame(vec![
            raw("near", "car", [0.0, 0.0, 5.0], None, None),
            // directly behind the near cube and smaller on screen: fully hidden
            raw("far", "car", [0.0, 0.0, 12.0], None, None),
        ]);
        let (_, recs) = canonicalize_frame(&f, &CurationConfig::default());
        assert!(recs.iter().all(|(r, _)| r.estimated));
        assert_eq!(recs[0].0.visibility, Some(1.0));
        assert_eq!(recs[1].0.visibility, Some(0.0));
        assert_eq!(recs[0].0.truncation, Some(0.0));
    }

    #[test]
    fn snapping_is_idempotent() {
        let r = Rotation::from_euler_zyx([0.3, std::f64::consts::FRAC_PI_2, 0.2]).unwrap();
        let s = snap_rotation(&r);
        assert_eq!(snap_rotation(&s), s);
        let yaw = Rotation::about_up(2.9);
        let s = snap_rotation(&yaw);
        assert_eq!(snap_rotation(&s), s);
        assert!(s.yaw_about_up().is_some());
    }

    #[test]
    fn dataset_is_leading_path_component() {
        assert_eq!(dataset_of("kitti/image_2/000001.png"), "kitti");
        assert_eq!(dataset_of("/abs/x.png"), "abs");
        assert_eq!(dataset_of("plain.png"), "plain.png");
    }
}
