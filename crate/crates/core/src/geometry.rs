//! Camera-frame box types, rotation parameterizations and pinhole projection.
//!
//! The camera frame is right-handed with +X right, +Y down and +Z along the
//! optical axis. Boxes are parameterized by center, metric dimensions
//! `(W, H, L)` along their local x/y/z axes, and a rotation into the camera
//! frame. Everything here is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Scalar;

/// Near plane used when projecting corners.
pub const Z_NEAR: f64 = 1e-3;

/// Upper bound of the normalized 2D coordinate grid.
pub const NORM_SCALE: u16 = 1000;

/// Pinhole intrinsics plus the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<F> {
    pub fx: F,
    pub fy: F,
    pub cx: F,
    pub cy: F,
    pub width: u32,
    pub height: u32,
}

impl<F: Scalar> CameraIntrinsics<F> {
    pub fn new(fx: F, fy: F, cx: F, cy: F, width: u32, height: u32) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid("intrinsics must be finite"));
        }
        if fx <= F::zero() || fy <= F::zero() {
            return Err(Error::invalid(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image size must be at least 1x1, got {width}x{height}")));
        }
        let cam = Self { fx, fy, cx, cy, width, height };
        if cx < F::zero() || cx > cam.w() || cy < F::zero() || cy > cam.h() {
            log::warn!("principal point ({cx}, {cy}) lies outside the {width}x{height} image");
        }
        Ok(cam)
    }

    /// Builds intrinsics from a row-major 3×3 `K`; skew and the last row are ignored.
    pub fn from_k(k: &[F; 9], width: u32, height: u32) -> Result<Self> {
        Self::new(k[0], k[4], k[2], k[5], width, height)
    }

    pub fn k_matrix(&self) -> Mat3<F> {
        let (o, z) = (F::one(), F::zero());
        Mat3([[self.fx, z, self.cx], [z, self.fy, self.cy], [z, z, o]])
    }

    #[inline]
    pub fn w(&self) -> F {
        F::lit(self.width as f64)
    }

    #[inline]
    pub fn h(&self) -> F {
        F::lit(self.height as f64)
    }

    /// Pixel coordinates of a camera-frame point with `Z > 0`.
    #[inline]
    pub fn project_point(&self, p: &Vec3<F>) -> (F, F) {
        (self.fx * p.x() / p.z() + self.cx, self.fy * p.y() / p.z() + self.cy)
    }

    pub fn image_rect(&self) -> Rect<F> {
        Rect::new(F::zero(), F::zero(), self.w(), self.h())
    }

    pub fn cast<G: Scalar>(&self) -> CameraIntrinsics<G> {
        CameraIntrinsics {
            fx: G::lit(self.fx.as_f64()),
            fy: G::lit(self.fy.as_f64()),
            cx: G::lit(self.cx.as_f64()),
            cy: G::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

fn ortho_tol<F: Scalar>() -> F {
    F::lit(1e-6).max(F::epsilon() * F::lit(100.0))
}

fn gimbal_tol<F: Scalar>() -> F {
    F::lit(1e-9).max(F::epsilon() * F::lit(10.0))
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle<F: Scalar>(a: F) -> F {
    let two_pi = F::two() * F::PI();
    let mut a = a % two_pi;
    if a >= F::PI() {
        a = a - two_pi;
    } else if a < -F::PI() {
        a = a + two_pi;
    }
    a
}

/// Maps an angle in `[-π, π)` onto `[0, 1]`.
#[inline]
pub fn angle_to_unit<F: Scalar>(a: F) -> F {
    (a + F::PI()) / (F::two() * F::PI())
}

#[inline]
pub fn unit_to_angle<F: Scalar>(u: F) -> F {
    u * F::two() * F::PI() - F::PI()
}

/// A proper rotation taking box-local coordinates into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<F> {
    matrix: Mat3<F>,
}

impl<F: Scalar> Rotation<F> {
    pub fn identity() -> Self {
        Self { matrix: Mat3::identity() }
    }

    /// Validates orthonormality and `det = +1` within 1e-6.
    pub fn from_matrix(matrix: Mat3<F>) -> Result<Self> {
        if !matrix.0.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::invalid("rotation matrix has non-finite entries"));
        }
        let tol = ortho_tol::<F>();
        let gram = matrix.transpose().mul(&matrix);
        if gram.max_abs_diff(&Mat3::identity()) > tol || (matrix.det() - F::one()).abs() > tol {
            return Err(Error::invalid("matrix is not a proper rotation"));
        }
        Ok(Self { matrix })
    }

    /// `Rz(z) · Ry(y) · Rx(x)` for angles given in `[z, y, x]` order.
    pub fn from_euler_zyx(angles: [F; 3]) -> Result<Self> {
        if !angles.iter().all(|a| a.is_finite()) {
            return Err(Error::invalid("euler angles must be finite"));
        }
        let [a, b, c] = angles;
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sc, cc) = c.sin_cos();
        Ok(Self {
            matrix: Mat3([
                [cb * ca, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
                [cb * sa, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
                [-sb, cb * sc, cb * cc],
            ]),
        })
    }

    /// Rodrigues' formula; the axis need not be normalized.
    pub fn from_axis_angle(axis: Vec3<F>, angle: F) -> Result<Self> {
        let n = axis.norm();
        if n.is_nan() || n <= F::zero() || !angle.is_finite() || !n.is_finite() {
            return Err(Error::invalid("axis-angle needs a finite non-zero axis"));
        }
        let k = axis * (F::one() / n);
        let (s, c) = angle.sin_cos();
        let t = F::one() - c;
        let [x, y, z] = k.0;
        Ok(Self {
            matrix: Mat3([
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ]),
        })
    }

    /// Rotation by `theta` about the camera's vertical (Y) axis.
    pub fn about_up(theta: F) -> Self {
        let (s, c) = theta.sin_cos();
        let (o, z) = (F::one(), F::zero());
        Self { matrix: Mat3([[c, z, s], [z, o, z], [-s, z, c]]) }
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3<F> {
        &self.matrix
    }

    /// ZYX Euler angles `[z, y, x]`, each in `[-π, π)`.
    ///
    /// At gimbal lock (`|y| = π/2`) the z angle is set to 0 and x absorbs the
    /// remaining rotation.
    pub fn euler_zyx(&self) -> [F; 3] {
        let m = &self.matrix.0;
        let cos_y = (m[0][0] * m[0][0] + m[1][0] * m[1][0]).sqrt();
        let y = (-m[2][0]).atan2(cos_y);
        let (z, x) = if cos_y < gimbal_tol::<F>() {
            (F::zero(), (-m[1][2]).atan2(m[1][1]))
        } else {
            (m[1][0].atan2(m[0][0]), m[2][1].atan2(m[2][2]))
        };
        [wrap_angle(z), wrap_angle(y), wrap_angle(x)]
    }

    pub fn euler_unit(&self) -> [F; 3] {
        self.euler_zyx().map(angle_to_unit)
    }

    /// `[sin z, cos z, sin y, cos y, sin x, cos x]`, each mapped from `[-1, 1]` to `[0, 1]`.
    pub fn sin_cos_unit(&self) -> [F; 6] {
        let [z, y, x] = self.euler_zyx();
        let u = |v: F| (v + F::one()) * F::half();
        [u(z.sin()), u(z.cos()), u(y.sin()), u(y.cos()), u(x.sin()), u(x.cos())]
    }

    pub fn from_euler_unit(unit: [F; 3]) -> Result<Self> {
        Self::from_euler_zyx(unit.map(unit_to_angle))
    }

    pub fn from_sin_cos_unit(v: [F; 6]) -> Result<Self> {
        Self::from_euler_zyx(sin_cos_unit_to_angles(v))
    }

    /// Heading about the vertical axis: `atan2(R₀₂, R₀₀)`, exact for pure yaw.
    pub fn heading_about_up(&self) -> F {
        let m = &self.matrix.0;
        wrap_angle(m[0][2].atan2(m[0][0]))
    }

    /// Returns the yaw if this rotation only turns about the vertical axis.
    pub fn yaw_about_up(&self) -> Option<F> {
        let m = &self.matrix.0;
        let tol = F::lit(1e-9).max(F::epsilon() * F::lit(16.0));
        let upright = (m[1][1] - F::one()).abs() < tol
            && m[0][1].abs() < tol
            && m[2][1].abs() < tol
            && m[1][0].abs() < tol
            && m[1][2].abs() < tol;
        upright.then(|| self.heading_about_up())
    }

    pub fn cast<G: Scalar>(&self) -> Rotation<G> {
        Rotation { matrix: self.matrix.cast() }
    }
}

/// Inverts the sin/cos unit map with a two-argument arctangent per angle.
pub fn sin_cos_unit_to_angles<F: Scalar>(v: [F; 6]) -> [F; 3] {
    let back = |u: F| u * F::two() - F::one();
    [0, 1, 2].map(|k| wrap_angle(back(v[2 * k]).atan2(back(v[2 * k + 1]))))
}

/// How an instance's depth is measured for ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthMode {
    /// Z coordinate of the box center.
    #[default]
    CenterZ,
    /// Euclidean distance from the camera center to the box center.
    Euclidean,
}

/// Oriented 3D box in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D<F> {
    pub center: Vec3<F>,
    /// `(W, H, L)` along the local x, y, z axes.
    pub dims: Vec3<F>,
    pub rotation: Rotation<F>,
}

impl<F: Scalar> Box3D<F> {
    pub fn new(center: Vec3<F>, dims: Vec3<F>, rotation: Rotation<F>) -> Self {
        Self { center, dims, rotation }
    }

    pub fn axis_aligned(center: Vec3<F>, dims: Vec3<F>) -> Self {
        Self::new(center, dims, Rotation::identity())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() || !self.dims.is_finite() {
            return Err(Error::invalid("box has non-finite center or dimensions"));
        }
        if self.dims.0.iter().any(|&d| d < F::zero()) {
            return Err(Error::invalid("box dimensions must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn half_extents(&self) -> Vec3<F> {
        self.dims * F::half()
    }

    pub fn volume(&self) -> F {
        self.dims.x() * self.dims.y() * self.dims.z()
    }

    /// Corner `i` has local signs given by bits 0 (x), 1 (y), 2 (z) of `i`.
    pub fn corners(&self) -> [Vec3<F>; 8] {
        let h = self.half_extents();
        std::array::from_fn(|i| {
            let s = |bit: usize, v: F| if i & (1 << bit) == 0 { -v } else { v };
            let local = Vec3::new(s(0, h.x()), s(1, h.y()), s(2, h.z()));
            self.center + self.rotation.matrix().mul_vec(&local)
        })
    }

    /// Closed-set point membership.
    #[inline]
    pub fn contains(&self, p: &Vec3<F>) -> bool {
        let local = self.rotation.matrix().tr_mul_vec(&(*p - self.center));
        let h = self.half_extents();
        local.x().abs() <= h.x() && local.y().abs() <= h.y() && local.z().abs() <= h.z()
    }

    pub fn depth(&self, mode: DepthMode) -> F {
        match mode {
            DepthMode::CenterZ => self.center.z(),
            DepthMode::Euclidean => self.center.norm(),
        }
    }

    /// Applies `p ↦ R·p + t` to the box.
    pub fn transformed(&self, rot: &Rotation<F>, t: Vec3<F>) -> Self {
        let m = rot.matrix().mul(self.rotation.matrix());
        Self {
            center: rot.matrix().mul_vec(&self.center) + t,
            dims: self.dims,
            rotation: Rotation { matrix: m },
        }
    }

    pub fn cast<G: Scalar>(&self) -> Box3D<G> {
        Box3D { center: self.center.cast(), dims: self.dims.cast(), rotation: self.rotation.cast() }
    }
}

/// Depth of a box for ordering: the Z coordinate of its center.
#[inline]
pub fn depth_of<F: Scalar>(b: &Box3D<F>) -> F {
    b.center.z()
}

/// Axis-aligned pixel rectangle `(xmin, ymin, xmax, ymax)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rect<F> {
    pub xmin: F,
    pub ymin: F,
    pub xmax: F,
    pub ymax: F,
}

impl<F: Scalar> Rect<F> {
    pub fn new(xmin: F, ymin: F, xmax: F, ymax: F) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    pub fn from_array(v: [F; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [F; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn width(&self) -> F {
        (self.xmax - self.xmin).max(F::zero())
    }

    pub fn height(&self) -> F {
        (self.ymax - self.ymin).max(F::zero())
    }

    pub fn area(&self) -> F {
        self.width() * self.height()
    }

    pub fn center(&self) -> (F, F) {
        ((self.xmin + self.xmax) * F::half(), (self.ymin + self.ymax) * F::half())
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.xmin <= self.xmax && self.ymin <= self.ymax
    }

    /// Intersection, collapsed to a zero-area rectangle when disjoint.
    pub fn intersect(&self, o: &Self) -> Self {
        let xmin = self.xmin.max(o.xmin);
        let ymin = self.ymin.max(o.ymin);
        Self::new(xmin, ymin, self.xmax.min(o.xmax).max(xmin), self.ymax.min(o.ymax).max(ymin))
    }

    pub fn contains_rect(&self, o: &Self) -> bool {
        o.xmin >= self.xmin && o.ymin >= self.ymin && o.xmax <= self.xmax && o.ymax <= self.ymax
    }

    pub fn contains_point(&self, x: F, y: F) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    /// Hull of a non-empty point set.
    pub fn hull(points: impl IntoIterator<Item = (F, F)>) -> Option<Self> {
        points.into_iter().fold(None, |acc, (x, y)| {
            Some(match acc {
                None => Self::new(x, y, x, y),
                Some(r) => Self::new(r.xmin.min(x), r.ymin.min(y), r.xmax.max(x), r.ymax.max(y)),
            })
        })
    }
}

/// Exact area of a union of rectangles by sweeping x-slabs.
pub fn union_area<F: Scalar>(rects: &[Rect<F>]) -> F {
    let rects: Vec<&Rect<F>> = rects.iter().filter(|r| r.area() > F::zero()).collect();
    let mut xs: Vec<F> = rects.iter().flat_map(|r| [r.xmin, r.xmax]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    xs.dedup();
    let mut total = F::zero();
    let mut spans: Vec<(F, F)> = Vec::new();
    for slab in xs.windows(2) {
        let (x0, x1) = (slab[0], slab[1]);
        spans.clear();
        spans.extend(rects.iter().filter(|r| r.xmin <= x0 && r.xmax >= x1).map(|r| (r.ymin, r.ymax)));
        if spans.is_empty() {
            continue;
        }
        spans.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        let mut covered = F::zero();
        let (mut lo, mut hi) = spans[0];
        for &(a, b) in &spans[1..] {
            if a > hi {
                covered = covered + (hi - lo);
                lo = a;
                hi = b;
            } else {
                hi = hi.max(b);
            }
        }
        covered = covered + (hi - lo);
        total = total + covered * (x1 - x0);
    }
    total
}

/// Round-half-away-from-zero quantization of a pixel coordinate onto `[0, 1000]`.
#[inline]
pub fn quantize_coord<F: Scalar>(v: F, extent: F) -> u16 {
    let q = (v * F::lit(NORM_SCALE as f64) / extent).round();
    q.max(F::zero()).min(F::lit(NORM_SCALE as f64)).to_u16().unwrap_or(0)
}

#[inline]
pub fn dequantize_coord<F: Scalar>(n: u16, extent: F) -> F {
    F::lit(n as f64) * extent / F::lit(NORM_SCALE as f64)
}

/// 2D box on the `[0, 1000]` integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct NormBox(pub [u16; 4]);

impl NormBox {
    pub fn quantize<F: Scalar>(r: &Rect<F>, cam: &CameraIntrinsics<F>) -> Self {
        let (w, h) = (cam.w(), cam.h());
        NormBox([
            quantize_coord(r.xmin, w),
            quantize_coord(r.ymin, h),
            quantize_coord(r.xmax, w),
            quantize_coord(r.ymax, h),
        ])
    }

    pub fn dequantize<F: Scalar>(&self, cam: &CameraIntrinsics<F>) -> Rect<F> {
        let (w, h) = (cam.w(), cam.h());
        let [a, b, c, d] = self.0;
        Rect::new(dequantize_coord(a, w), dequantize_coord(b, h), dequantize_coord(c, w), dequantize_coord(d, h))
    }

    pub fn is_valid(&self) -> bool {
        let [a, b, c, d] = self.0;
        a <= c && b <= d && c <= NORM_SCALE && d <= NORM_SCALE
    }
}

/// Pixel box together with its normalized-grid view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D<F> {
    pub pixel: Rect<F>,
    pub norm: NormBox,
}

impl<F: Scalar> Box2D<F> {
    pub fn from_pixel(pixel: Rect<F>, cam: &CameraIntrinsics<F>) -> Self {
        Self { pixel, norm: NormBox::quantize(&pixel, cam) }
    }
}

/// Result of projecting a box: the image-clipped box and the raw hull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<F> {
    pub clipped: Box2D<F>,
    pub unclipped: Rect<F>,
}

/// Projects the eight corners and returns the axis-aligned hull.
///
/// Corners at or behind `Z_NEAR` are replaced by the points where the box
/// edges cross the near plane, so partially-behind boxes keep the part of
/// their silhouette that is actually in front of the camera.
pub fn project_box<F: Scalar>(b: &Box3D<F>, cam: &CameraIntrinsics<F>) -> Result<Projection<F>> {
    project_box_with_near(b, cam, F::lit(Z_NEAR))
}

pub fn project_box_with_near<F: Scalar>(b: &Box3D<F>, cam: &CameraIntrinsics<F>, z_near: F) -> Result<Projection<F>> {
    b.validate()?;
    let corners = b.corners();
    let in_front = |p: &Vec3<F>| p.z() > z_near;
    if !corners.iter().any(in_front) {
        return Err(Error::BehindCamera);
    }
    let mut pts: Vec<(F, F)> = corners.iter().filter(|p| in_front(p)).map(|p| cam.project_point(p)).collect();
    for i in 0..8usize {
        for bit in 0..3 {
            let j = i | (1 << bit);
            if j == i {
                continue;
            }
            let (p, q) = (corners[i], corners[j]);
            if in_front(&p) != in_front(&q) {
                let t = (z_near - p.z()) / (q.z() - p.z());
                let mut x = p + (q - p) * t;
                x.0[2] = z_near;
                pts.push(cam.project_point(&x));
            }
        }
    }
    let unclipped = Rect::hull(pts).expect("at least one corner in front");
    let clipped = unclipped.intersect(&cam.image_rect());
    Ok(Projection { clipped: Box2D::from_pixel(clipped, cam), unclipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrustumStatus {
    Inside,
    PartiallyOutside,
    FullyOutside,
    BehindCamera,
}

/// Classifies the projected hull against the image rectangle.
///
/// Boxes whose corners all lie at or behind the near plane are reported as
/// behind the camera.
pub fn frustum_status<F: Scalar>(b: &Box3D<F>, cam: &CameraIntrinsics<F>) -> FrustumStatus {
    match project_box(b, cam) {
        Err(_) => FrustumStatus::BehindCamera,
        Ok(p) => classify_hull(&p.unclipped, cam),
    }
}

fn classify_hull<F: Scalar>(hull: &Rect<F>, cam: &CameraIntrinsics<F>) -> FrustumStatus {
    let img = cam.image_rect();
    if img.contains_rect(hull) {
        FrustumStatus::Inside
    } else if hull.xmax <= img.xmin || hull.xmin >= img.xmax || hull.ymax <= img.ymin || hull.ymin >= img.ymax {
        FrustumStatus::FullyOutside
    } else {
        FrustumStatus::PartiallyOutside
    }
}

/// Fraction of the projected hull lost to the image borders.
///
/// Returns 1 for boxes behind the camera or fully outside, 0 for hulls inside
/// the image and for degenerate (zero-area) hulls that straddle a border.
pub fn truncation_estimate<F: Scalar>(b: &Box3D<F>, cam: &CameraIntrinsics<F>) -> F {
    let Ok(p) = project_box(b, cam) else {
        return F::one();
    };
    match classify_hull(&p.unclipped, cam) {
        FrustumStatus::Inside => F::zero(),
        FrustumStatus::FullyOutside | FrustumStatus::BehindCamera => F::one(),
        FrustumStatus::PartiallyOutside => {
            let full = p.unclipped.area();
            if full <= F::zero() {
                F::zero()
            } else {
                (F::one() - p.clipped.pixel.area() / full).max(F::zero()).min(F::one())
            }
        }
    }
}

/// An instance as seen by the occlusion estimate: its depth and clipped 2D box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupant<F> {
    pub depth: F,
    pub rect: Rect<F>,
}

/// Fraction of the target's 2D box not covered by strictly nearer instances.
///
/// A zero-area target is treated as fully visible.
pub fn visibility_estimate<F: Scalar>(target: &Occupant<F>, occluders: &[Occupant<F>]) -> F {
    let area = target.rect.area();
    if area <= F::zero() {
        return F::one();
    }
    let covers: Vec<Rect<F>> = occluders
        .iter()
        .filter(|o| o.depth < target.depth)
        .map(|o| o.rect.intersect(&target.rect))
        .collect();
    let hidden = union_area(&covers);
    (F::one() - hidden / area).max(F::zero()).min(F::one())
}
