//! The Chain-of-Sight wire grammar.
//!
//! A scene is rendered as one segment pair per instance, the 2D box first:
//!
//! ```text
//! <box2d>[x1, y1, x2, y2]</box2d><box3d>[X, Y, Z, W, H, L, r1, r2, r3]</box3d>, <box2d>…
//! ```
//!
//! 2D values are integers on the `[0, 1000]` grid, 3D values are fixed
//! two-decimal numbers. An empty scene is exactly `<no_object/>`. The end of
//! the text is the end of the sequence; the chat template's end token follows
//! it. The full EBNF lives in `docs/wire-grammar.md`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::geometry::{
    angle_to_unit, sin_cos_unit_to_angles, unit_to_angle, Box2D, Box3D, CameraIntrinsics, NormBox, Rect, Rotation,
};
use crate::linalg::Vec3;
use crate::scalar::Scalar;

pub const NO_OBJECT: &str = "<no_object/>";
const OPEN_2D: &str = "<box2d>";
const CLOSE_2D: &str = "</box2d>";
const OPEN_3D: &str = "<box3d>";
const CLOSE_3D: &str = "</box3d>";
const SEPARATOR: &str = ", ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum InterObjectOrder {
    #[default]
    NearToFar,
    /// Normalized `xmin`, ties by `ymin`, then depth.
    LeftToRight,
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Factorization {
    #[default]
    TwoDThenThreeD,
    ThreeDThenTwoD,
    ThreeDOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Intra3DOrder {
    #[default]
    CenterSizeRotation,
    CenterRotationSize,
    RotationSizeCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Layout {
    #[default]
    Interleaved,
    /// All leading segments for every instance, then all trailing segments.
    Clustered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RotationFormat {
    /// Three ZYX Euler angles mapped to `[0, 1]`.
    #[default]
    EulerUnit,
    /// Sine and cosine of each Euler angle mapped to `[0, 1]`.
    SinCosUnit,
    /// One value: the heading about the vertical axis mapped to `[0, 1]`.
    YawOnly,
}

impl RotationFormat {
    pub fn arity(self) -> usize {
        match self {
            RotationFormat::EulerUnit => 3,
            RotationFormat::SinCosUnit => 6,
            RotationFormat::YawOnly => 1,
        }
    }

    pub fn values<F: Scalar>(self, r: &Rotation<F>) -> Vec<F> {
        match self {
            RotationFormat::EulerUnit => r.euler_unit().to_vec(),
            RotationFormat::SinCosUnit => r.sin_cos_unit().to_vec(),
            RotationFormat::YawOnly => vec![angle_to_unit(r.heading_about_up())],
        }
    }

    /// The angles this format carries for a rotation.
    pub fn angles_of<F: Scalar>(self, r: &Rotation<F>) -> Vec<F> {
        match self {
            RotationFormat::EulerUnit | RotationFormat::SinCosUnit => r.euler_zyx().to_vec(),
            RotationFormat::YawOnly => vec![r.heading_about_up()],
        }
    }

    /// Angles recovered from serialized values; `values.len()` must equal [`Self::arity`].
    pub fn angles_from_values<F: Scalar>(self, values: &[F]) -> Vec<F> {
        match self {
            RotationFormat::EulerUnit => values.iter().map(|&u| unit_to_angle(u)).collect(),
            RotationFormat::SinCosUnit => {
                sin_cos_unit_to_angles([values[0], values[1], values[2], values[3], values[4], values[5]]).to_vec()
            }
            RotationFormat::YawOnly => vec![unit_to_angle(values[0])],
        }
    }

    pub fn rotation_from_values<F: Scalar>(self, values: &[F]) -> Result<Rotation<F>> {
        let angles = self.angles_from_values(values);
        match self {
            RotationFormat::YawOnly => Ok(Rotation::about_up(angles[0])),
            _ => Rotation::from_euler_zyx([angles[0], angles[1], angles[2]]),
        }
    }
}

/// One choice per serialization axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SerializationPolicy {
    pub order: InterObjectOrder,
    pub factorization: Factorization,
    pub intra: Intra3DOrder,
    pub layout: Layout,
    pub rotation: RotationFormat,
}

impl SerializationPolicy {
    /// Every combination of axis values, using `seed` for the random order.
    pub fn all(seed: u64) -> Vec<SerializationPolicy> {
        let mut out = Vec::new();
        for order in [InterObjectOrder::NearToFar, InterObjectOrder::LeftToRight, InterObjectOrder::Random(seed)] {
            for factorization in [Factorization::TwoDThenThreeD, Factorization::ThreeDThenTwoD, Factorization::ThreeDOnly] {
                for intra in [Intra3DOrder::CenterSizeRotation, Intra3DOrder::CenterRotationSize, Intra3DOrder::RotationSizeCenter] {
                    for layout in [Layout::Interleaved, Layout::Clustered] {
                        for rotation in [RotationFormat::EulerUnit, RotationFormat::SinCosUnit, RotationFormat::YawOnly] {
                            out.push(SerializationPolicy { order, factorization, intra, layout, rotation });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn box3d_arity(&self) -> usize {
        6 + self.rotation.arity()
    }
}

impl fmt::Display for SerializationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order = match self.order {
            InterObjectOrder::NearToFar => "near-to-far".to_string(),
            InterObjectOrder::LeftToRight => "left-to-right".to_string(),
            InterObjectOrder::Random(s) => format!("random:{s}"),
        };
        let fact = match self.factorization {
            Factorization::TwoDThenThreeD => "2d-3d",
            Factorization::ThreeDThenTwoD => "3d-2d",
            Factorization::ThreeDOnly => "3d-only",
        };
        let intra = match self.intra {
            Intra3DOrder::CenterSizeRotation => "center-size-rotation",
            Intra3DOrder::CenterRotationSize => "center-rotation-size",
            Intra3DOrder::RotationSizeCenter => "rotation-size-center",
        };
        let layout = match self.layout {
            Layout::Interleaved => "interleaved",
            Layout::Clustered => "clustered",
        };
        let rot = match self.rotation {
            RotationFormat::EulerUnit => "euler-unit",
            RotationFormat::SinCosUnit => "sincos-unit",
            RotationFormat::YawOnly => "yaw-only",
        };
        write!(f, "order={order},factorization={fact},intra={intra},layout={layout},rotation={rot}")
    }
}

impl FromStr for SerializationPolicy {
    type Err = Error;

    /// Parses `key=value` pairs separated by commas; omitted axes keep their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut p = SerializationPolicy::default();
        for part in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("policy entry `{part}` is not key=value")))?;
            let bad = || Error::invalid(format!("unknown value `{value}` for policy axis `{key}`"));
            match key.trim() {
                "order" => {
                    p.order = match value {
                        "near-to-far" => InterObjectOrder::NearToFar,
                        "left-to-right" => InterObjectOrder::LeftToRight,
                        v => {
                            let seed = v.strip_prefix("random:").ok_or_else(bad)?;
                            InterObjectOrder::Random(seed.parse().map_err(|_| bad())?)
                        }
                    }
                }
                "factorization" => {
                    p.factorization = match value {
                        "2d-3d" => Factorization::TwoDThenThreeD,
                        "3d-2d" => Factorization::ThreeDThenTwoD,
                        "3d-only" => Factorization::ThreeDOnly,
                        _ => return Err(bad()),
                    }
                }
                "intra" => {
                    p.intra = match value {
                        "center-size-rotation" => Intra3DOrder::CenterSizeRotation,
                        "center-rotation-size" => Intra3DOrder::CenterRotationSize,
                        "rotation-size-center" => Intra3DOrder::RotationSizeCenter,
                        _ => return Err(bad()),
                    }
                }
                "layout" => {
                    p.layout = match value {
                        "interleaved" => Layout::Interleaved,
                        "clustered" => Layout::Clustered,
                        _ => return Err(bad()),
                    }
                }
                "rotation" => {
                    p.rotation = match value {
                        "euler-unit" => RotationFormat::EulerUnit,
                        "sincos-unit" => RotationFormat::SinCosUnit,
                        "yaw-only" => RotationFormat::YawOnly,
                        _ => return Err(bad()),
                    }
                }
                other => return Err(Error::invalid(format!("unknown policy axis `{other}`"))),
            }
        }
        Ok(p)
    }
}

/// Input to [`encode_scene`]: one filtered instance with its depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneInstance<F> {
    pub box3d: Box3D<F>,
    pub box2d: Box2D<F>,
    pub depth: F,
}

/// Rounds to two decimals, half away from zero.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Fixed two-decimal rendering; negative zero prints as `0.00`.
pub fn fmt2(v: f64) -> String {
    let r = (v * 100.0).round();
    if r == 0.0 {
        return "0.00".to_string();
    }
    if r.abs() >= 1e15 {
        return format!("{:.2}", r / 100.0);
    }
    let n = r as i64;
    let sign = if n < 0 { "-" } else { "" };
    let a = n.unsigned_abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

pub fn quantize_2d<F: Scalar>(pixel: &Rect<F>, cam: &CameraIntrinsics<F>) -> NormBox {
    NormBox::quantize(pixel, cam)
}

pub fn dequantize_2d<F: Scalar>(norm: &NormBox, cam: &CameraIntrinsics<F>) -> Rect<F> {
    norm.dequantize(cam)
}

/// Serialization order of `instances` under `order`.
pub fn instance_order<F: Scalar>(instances: &[SceneInstance<F>], order: InterObjectOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..instances.len()).collect();
    let cmp = |a: F, b: F| a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal);
    match order {
        InterObjectOrder::NearToFar => idx.sort_by(|&a, &b| cmp(instances[a].depth, instances[b].depth)),
        InterObjectOrder::LeftToRight => idx.sort_by(|&a, &b| {
            let (na, nb) = (instances[a].box2d.norm.0, instances[b].box2d.norm.0);
            (na[0], na[1]).cmp(&(nb[0], nb[1])).then_with(|| cmp(instances[a].depth, instances[b].depth))
        }),
        InterObjectOrder::Random(seed) => idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    idx
}

fn box3d_values<F: Scalar>(b: &Box3D<F>, policy: &SerializationPolicy) -> Vec<F> {
    let center = b.center.0.to_vec();
    let size = b.dims.0.to_vec();
    let rot = policy.rotation.values(&b.rotation);
    match policy.intra {
        Intra3DOrder::CenterSizeRotation => [center, size, rot].concat(),
        Intra3DOrder::CenterRotationSize => [center, rot, size].concat(),
        Intra3DOrder::RotationSizeCenter => [rot, size, center].concat(),
    }
}

fn render_2d(n: &NormBox) -> String {
    let [a, b, c, d] = n.0;
    format!("{OPEN_2D}[{a}, {b}, {c}, {d}]{CLOSE_2D}")
}

fn render_3d<F: Scalar>(values: &[F]) -> String {
    let body: Vec<String> = values.iter().map(|v| fmt2(v.as_f64())).collect();
    format!("{OPEN_3D}[{}]{CLOSE_3D}", body.join(SEPARATOR))
}

/// Renders a filtered scene as Chain-of-Sight text.
pub fn encode_scene<F: Scalar>(instances: &[SceneInstance<F>], policy: &SerializationPolicy) -> Result<String> {
    if instances.is_empty() {
        return Ok(NO_OBJECT.to_string());
    }
    for (i, inst) in instances.iter().enumerate() {
        let finite = inst.depth.is_finite()
            && inst.box3d.center.is_finite()
            && inst.box3d.dims.is_finite()
            && inst.box3d.rotation.matrix().0.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(format!("instance {i} has a non-finite field")));
        }
        if !inst.box2d.norm.is_valid() {
            return Err(Error::invalid(format!("instance {i} has an invalid normalized 2D box")));
        }
    }
    let order = instance_order(instances, policy.order);
    let segs: Vec<(String, String)> = order
        .iter()
        .map(|&i| {
            let inst = &instances[i];
            (render_2d(&inst.box2d.norm), render_3d(&box3d_values(&inst.box3d, policy)))
        })
        .collect();
    let pieces: Vec<String> = match (policy.factorization, policy.layout) {
        (Factorization::ThreeDOnly, _) => segs.into_iter().map(|(_, s3)| s3).collect(),
        (Factorization::TwoDThenThreeD, Layout::Interleaved) => segs.into_iter().map(|(a, b)| a + &b).collect(),
        (Factorization::ThreeDThenTwoD, Layout::Interleaved) => segs.into_iter().map(|(a, b)| b + &a).collect(),
        (Factorization::TwoDThenThreeD, Layout::Clustered) => {
            let (s2, s3): (Vec<_>, Vec<_>) = segs.into_iter().unzip();
            s2.into_iter().chain(s3).collect()
        }
        (Factorization::ThreeDThenTwoD, Layout::Clustered) => {
            let (s2, s3): (Vec<_>, Vec<_>) = segs.into_iter().unzip();
            s3.into_iter().chain(s2).collect()
        }
    };
    Ok(pieces.join(SEPARATOR))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Strict,
    Recover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    EndOfSequence,
    NoObject,
}

/// Grammar violation at a byte offset.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("at byte {offset}: expected {expected}, found {found}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedInstance<F> {
    pub box2d: Option<NormBox>,
    pub box3d: Box3D<F>,
    /// Rotation values as they appeared on the wire.
    pub rotation_values: Vec<F>,
}

impl<F: Scalar> DecodedInstance<F> {
    pub fn pixel_box(&self, cam: &CameraIntrinsics<F>) -> Option<Rect<F>> {
        self.box2d.map(|n| n.dequantize(cam))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosSequence<F> {
    pub instances: Vec<DecodedInstance<F>>,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<F> {
    pub sequence: CosSequence<F>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegKind {
    TwoD,
    ThreeD,
}

impl SegKind {
    fn tags(self) -> (&'static str, &'static str) {
        match self {
            SegKind::TwoD => (OPEN_2D, CLOSE_2D),
            SegKind::ThreeD => (OPEN_3D, CLOSE_3D),
        }
    }
}

enum Segment<F> {
    TwoD(NormBox),
    ThreeD(Box3D<F>, Vec<F>),
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn eof(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn found(&self) -> String {
        let r = self.rest();
        if r.is_empty() {
            return "end of input".to_string();
        }
        let snippet: String = r.chars().take(16).collect();
        format!("`{snippet}`")
    }

    fn err(&self, expected: impl Into<String>) -> ParseError {
        ParseError { offset: self.pos, expected: expected.into(), found: self.found() }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> std::result::Result<(), ParseError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.err(format!("`{lit}`")))
        }
    }

    /// `-?digits(.digits)?`
    fn number(&mut self) -> std::result::Result<&'a str, ParseError> {
        let bytes = self.rest().as_bytes();
        let mut i = 0;
        if bytes.first() == Some(&b'-') {
            i += 1;
        }
        let int_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == int_start {
            return Err(self.err("a number"));
        }
        if i < bytes.len() && bytes[i] == b'.' {
            let frac = i + 1;
            let mut j = frac;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j == frac {
                return Err(ParseError { offset: self.pos + i + 1, expected: "fraction digits".into(), found: self.found() });
            }
            i = j;
        }
        let s = &self.rest()[..i];
        self.pos += i;
        Ok(s)
    }

    /// `[v, v, …]`, returning each value's text and offset.
    fn list(&mut self) -> std::result::Result<Vec<(usize, &'a str)>, ParseError> {
        self.expect("[")?;
        let mut out = Vec::new();
        self.skip_ws();
        if self.eat("]") {
            return Ok(out);
        }
        loop {
            self.skip_ws();
            let at = self.pos;
            out.push((at, self.number()?));
            self.skip_ws();
            if self.eat(",") {
                continue;
            }
            if self.eat("]") {
                return Ok(out);
            }
            return Err(self.err("`,` or `]`"));
        }
    }
}

struct Parser<'a> {
    cur: Cursor<'a>,
    policy: SerializationPolicy,
}

impl<'a> Parser<'a> {
    fn segment<F: Scalar>(&mut self, kind: SegKind) -> std::result::Result<Segment<F>, ParseError> {
        let (open, close) = kind.tags();
        let start = self.cur.pos;
        self.cur.expect(open)?;
        let values = self.cur.list()?;
        self.cur.expect(close)?;
        let arity_err = |expected: usize| ParseError {
            offset: start,
            expected: format!("{expected} values in {open}"),
            found: format!("arity {}, expected {expected}", values.len()),
        };
        match kind {
            SegKind::TwoD => {
                if values.len() != 4 {
                    return Err(arity_err(4));
                }
                let mut n = [0u16; 4];
                for (slot, (at, s)) in n.iter_mut().zip(&values) {
                    *slot = s.parse::<u16>().ok().filter(|&v| v <= 1000).ok_or_else(|| ParseError {
                        offset: *at,
                        expected: "an integer in [0, 1000]".into(),
                        found: format!("`{s}`"),
                    })?;
                }
                let nb = NormBox(n);
                if !nb.is_valid() {
                    return Err(ParseError { offset: start, expected: "x1 <= x2 and y1 <= y2".into(), found: format!("{n:?}") });
                }
                Ok(Segment::TwoD(nb))
            }
            SegKind::ThreeD => {
                let k = self.policy.box3d_arity();
                if values.len() != k {
                    return Err(arity_err(k));
                }
                let nums: Vec<F> = values
                    .iter()
                    .map(|(at, s)| {
                        s.parse::<f64>().ok().filter(|v| v.is_finite()).map(F::lit).ok_or_else(|| ParseError {
                            offset: *at,
                            expected: "a finite decimal".into(),
                            found: format!("`{s}`"),
                        })
                    })
                    .collect::<std::result::Result<_, _>>()?;
                let r = self.policy.rotation.arity();
                let (center, size, rot) = match self.policy.intra {
                    Intra3DOrder::CenterSizeRotation => (&nums[0..3], &nums[3..6], &nums[6..6 + r]),
                    Intra3DOrder::CenterRotationSize => (&nums[0..3], &nums[3 + r..6 + r], &nums[3..3 + r]),
                    Intra3DOrder::RotationSizeCenter => (&nums[r + 3..r + 6], &nums[r..r + 3], &nums[0..r]),
                };
                if size.iter().any(|&d| d < F::zero()) {
                    return Err(ParseError { offset: start, expected: "non-negative dimensions".into(), found: "a negative size".into() });
                }
                let rotation = self
                    .policy
                    .rotation
                    .rotation_from_values(rot)
                    .map_err(|e| ParseError { offset: start, expected: "decodable rotation".into(), found: e.to_string() })?;
                let b = Box3D::new(Vec3::new(center[0], center[1], center[2]), Vec3::new(size[0], size[1], size[2]), rotation);
                Ok(Segment::ThreeD(b, rot.to_vec()))
            }
        }
    }

    /// Segment kinds making up one unit of the layout, in wire order.
    fn unit_kinds(&self) -> &'static [SegKind] {
        match self.policy.factorization {
            Factorization::TwoDThenThreeD => &[SegKind::TwoD, SegKind::ThreeD],
            Factorization::ThreeDThenTwoD => &[SegKind::ThreeD, SegKind::TwoD],
            Factorization::ThreeDOnly => &[SegKind::ThreeD],
        }
    }

    fn instance<F: Scalar>(&mut self) -> std::result::Result<DecodedInstance<F>, ParseError> {
        let mut box2d = None;
        let mut three = None;
        for (i, &kind) in self.unit_kinds().iter().enumerate() {
            if i > 0 {
                self.cur.skip_ws();
            }
            match self.segment::<F>(kind)? {
                Segment::TwoD(n) => box2d = Some(n),
                Segment::ThreeD(b, r) => three = Some((b, r)),
            }
        }
        let (box3d, rotation_values) = three.expect("every unit has a 3D segment");
        Ok(DecodedInstance { box2d, box3d, rotation_values })
    }

    fn resync(&mut self, from: usize, tag: &str) -> bool {
        let next = from + 1;
        match self.cur.text.get(next..).and_then(|r| r.find(tag)) {
            Some(off) => {
                self.cur.pos = next + off;
                true
            }
            None => {
                self.cur.pos = self.cur.text.len();
                false
            }
        }
    }

    /// Parses `item (',' item)*` to the end of input.
    fn separated<T>(
        &mut self,
        mode: DecodeMode,
        diags: &mut Vec<Diagnostic>,
        resync_tag: &str,
        stop_tag: Option<&str>,
        mut item: impl FnMut(&mut Self) -> std::result::Result<T, ParseError>,
    ) -> std::result::Result<Vec<T>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.cur.skip_ws();
            if self.cur.eof() || stop_tag.is_some_and(|t| self.cur.rest().starts_with(t)) {
                break;
            }
            let start = self.cur.pos;
            match item(self) {
                Ok(v) => out.push(v),
                Err(e) => match mode {
                    DecodeMode::Strict => return Err(e),
                    DecodeMode::Recover => {
                        diags.push(Diagnostic { offset: e.offset, message: format!("skipped segment: {}", e.found) });
                        if !self.resync(start, resync_tag) {
                            break;
                        }
                        continue;
                    }
                },
            }
            self.cur.skip_ws();
            if self.cur.eof() {
                break;
            }
            if !self.cur.eat(",") {
                let e = self.cur.err("`,` or end of sequence");
                match mode {
                    DecodeMode::Strict => return Err(e),
                    DecodeMode::Recover => {
                        diags.push(Diagnostic { offset: e.offset, message: format!("unexpected {}", e.found) });
                        if !self.resync(start, resync_tag) {
                            break;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Parses model output or encoder output back into a structured sequence.
///
/// `Strict` rejects any grammar violation. `Recover` skips malformed instance
/// segments, records a diagnostic for each and keeps the well-formed rest.
pub fn decode_sequence<F: Scalar>(
    text: &str,
    policy: &SerializationPolicy,
    mode: DecodeMode,
) -> std::result::Result<Decoded<F>, ParseError> {
    let trimmed = text.trim();
    if trimmed == NO_OBJECT {
        return Ok(Decoded {
            sequence: CosSequence { instances: Vec::new(), terminal: Terminal::NoObject },
            diagnostics: Vec::new(),
        });
    }
    let mut p = Parser { cur: Cursor { text, pos: 0 }, policy: *policy };
    p.cur.skip_ws();
    if p.cur.eof() && mode == DecodeMode::Strict {
        return Err(p.cur.err(format!("an instance or `{NO_OBJECT}`")));
    }
    let mut diags = Vec::new();
    let kinds = p.unit_kinds();
    let first_tag = kinds[0].tags().0;
    let instances = match (policy.layout, kinds.len()) {
        (Layout::Interleaved, _) | (_, 1) => p.separated(mode, &mut diags, first_tag, None, |p| p.instance())?,
        (Layout::Clustered, _) => {
            let (lead, trail) = (kinds[0], kinds[1]);
            let trail_tag = trail.tags().0;
            let leading = p.separated(mode, &mut diags, lead.tags().0, Some(trail_tag), |p| p.segment::<F>(lead))?;
            let trailing = p.separated(mode, &mut diags, trail_tag, None, |p| p.segment::<F>(trail))?;
            if leading.len() != trailing.len() {
                let msg = format!("{} {} segments but {} {} segments", leading.len(), lead.tags().0, trailing.len(), trail_tag);
                if mode == DecodeMode::Strict || leading.is_empty() && trailing.is_empty() {
                    return Err(ParseError { offset: text.len(), expected: "matching segment counts".into(), found: msg });
                }
                diags.push(Diagnostic { offset: text.len(), message: msg });
            }
            leading
                .into_iter()
                .zip(trailing)
                .map(|(a, b)| {
                    let (mut box2d, mut three) = (None, None);
                    for seg in [a, b] {
                        match seg {
                            Segment::TwoD(n) => box2d = Some(n),
                            Segment::ThreeD(b, r) => three = Some((b, r)),
                        }
                    }
                    let (box3d, rotation_values) = three.expect("clustered unit has a 3D segment");
                    DecodedInstance { box2d, box3d, rotation_values }
                })
                .collect()
        }
    };
    if mode == DecodeMode::Strict && instances.is_empty() {
        return Err(ParseError { offset: 0, expected: format!("an instance or `{NO_OBJECT}`"), found: p.cur.found() });
    }
    let terminal = if instances.is_empty() { Terminal::NoObject } else { Terminal::EndOfSequence };
    Ok(Decoded { sequence: CosSequence { instances, terminal }, diagnostics: diags })
}
