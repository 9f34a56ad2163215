//! Canonical line-delimited JSON.
//!
//! Field order is fixed and every real number is written with exactly two
//! decimals, so byte comparison of two outputs is meaningful.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CanonicalLine, InstanceRecord, SourceRef};
use crate::codec::fmt2;
use crate::error::{Error, Result};
use crate::geometry::{Box2D, Box3D, CameraIntrinsics, Rect, Rotation};
use crate::linalg::Vec3;

fn push_nums(out: &mut String, vals: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, v) in vals.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt2(v));
    }
    out.push(']');
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

impl InstanceRecord {
    fn write_json(&self, out: &mut String) {
        let r = &self.box3d.rotation;
        out.push_str("{\"bbox_2d_px\":");
        push_nums(out, self.box2d.pixel.to_array());
        let [a, b, c, d] = self.box2d.norm.0;
        let _ = write!(out, ",\"bbox_2d_norm\":[{a},{b},{c},{d}]");
        out.push_str(",\"center_cam\":");
        push_nums(out, self.box3d.center.0);
        out.push_str(",\"dims_whl\":");
        push_nums(out, self.box3d.dims.0);
        out.push_str(",\"rot_matrix\":");
        push_nums(out, r.matrix().row_major());
        out.push_str(",\"rot_euler_unit\":");
        push_nums(out, r.euler_unit());
        out.push_str(",\"rot_sincos_unit\":");
        push_nums(out, r.sin_cos_unit());
        let _ = write!(
            out,
            ",\"depth\":{},\"visibility\":{},\"truncation\":{},\"estimated\":{}}}",
            fmt2(self.depth),
            self.visibility.map_or("null".to_string(), fmt2),
            self.truncation.map_or("null".to_string(), fmt2),
            self.estimated
        );
    }
}

impl CanonicalLine {
    /// One line of canonical JSON, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        let mut out = String::with_capacity(256 + 400 * self.instances.len());
        let _ = write!(
            out,
            "{{\"image_path\":{},\"category_name\":{},\"image_width\":{},\"image_height\":{},\"K\":",
            json_str(&self.image_path),
            json_str(&self.category),
            self.intrinsics.width,
            self.intrinsics.height
        );
        push_nums(&mut out, self.intrinsics.k_matrix().row_major());
        out.push_str(",\"instances\":[");
        for (i, inst) in self.instances.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            inst.write_json(&mut out);
        }
        out.push_str("]}");
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalInstanceJson {
    pub bbox_2d_px: [f64; 4],
    pub bbox_2d_norm: [u16; 4],
    pub center_cam: [f64; 3],
    pub dims_whl: [f64; 3],
    pub rot_matrix: [f64; 9],
    pub rot_euler_unit: [f64; 3],
    pub rot_sincos_unit: [f64; 6],
    pub depth: f64,
    pub visibility: Option<f64>,
    pub truncation: Option<f64>,
    pub estimated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalLineJson {
    pub image_path: String,
    pub category_name: String,
    pub image_width: u32,
    pub image_height: u32,
    #[serde(rename = "K")]
    pub k: [f64; 9],
    pub instances: Vec<CanonicalInstanceJson>,
}

/// Parses one canonical line back into typed form.
///
/// Rotations are rebuilt from `rot_euler_unit`: the stored matrix is rounded
/// and no longer exactly orthonormal.
pub fn parse_canonical_line(line: &str) -> Result<CanonicalLine> {
    let raw: CanonicalLineJson =
        serde_json::from_str(line).map_err(|source| Error::Json { context: "canonical line".into(), source })?;
    let cam = CameraIntrinsics::from_k(&raw.k, raw.image_width, raw.image_height)?;
    let dataset = super::dataset_of(&raw.image_path).to_string();
    let instances = raw
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let rotation = Rotation::from_euler_unit(inst.rot_euler_unit)?;
            let box3d = Box3D::new(Vec3(inst.center_cam), Vec3(inst.dims_whl), rotation);
            box3d.validate()?;
            let pixel = Rect::from_array(inst.bbox_2d_px);
            if !pixel.is_valid() {
                return Err(Error::invalid(format!("instance {i}: invalid bbox_2d_px")));
            }
            Ok(InstanceRecord {
                category: raw.category_name.clone(),
                box3d,
                box2d: Box2D { pixel, norm: crate::geometry::NormBox(inst.bbox_2d_norm) },
                depth: inst.depth,
                visibility: inst.visibility,
                truncation: inst.truncation,
                estimated: inst.estimated,
                source: SourceRef { dataset: dataset.clone(), instance_id: i.to_string() },
                annotation_index: i,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if instances.is_empty() {
        return Err(Error::invalid("canonical line has no instances"));
    }
    Ok(CanonicalLine { image_path: raw.image_path, category: raw.category_name, intrinsics: cam, instances })
}
