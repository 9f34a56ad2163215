//! Dataset adapters.
//!
//! An adapter turns a dataset-native source into a stream of [`RawFrame`]s
//! with camera-frame boxes. Problems with individual files or lines are
//! yielded as [`IngestDiagnostic`]s and the stream continues.
//!
//! Shipped adapters:
//!
//! * `synthetic` – the reference fixture format (one JSON frame per line).
//! * `kitti` – KITTI object labels (`label_2/*.txt`) with `calib/*.txt`.
//! * `canonical` – re-ingests this crate's own canonical output.
//!
//! A nuScenes-style adapter plugs in through [`DatasetAdapter`]: transform
//! each global-frame annotation by the inverse ego and sensor poses into the
//! camera frame, take `(W, H, L)` from `size = [w, l, h]`, the camera
//! intrinsic as `K`, and `visibility_token` bins as native visibility.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_canonical_line, CanonicalLine, RawFrame, RawInstance, SourceRef};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Box3D, CameraIntrinsics, Rect, Rotation};
use crate::linalg::Vec3;

/// Problem with one source file or line; ingestion continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestDiagnostic {
    pub file: String,
    pub line: Option<usize>,
    pub message: String,
}

impl IngestDiagnostic {
    fn new(file: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        Self { file: file.display().to_string(), line, message: message.into() }
    }
}

pub type FrameStream = Box<dyn Iterator<Item = std::result::Result<RawFrame, IngestDiagnostic>> + Send>;

pub trait DatasetAdapter: Send + Sync {
    fn name(&self) -> &'static str;

    /// Opens `source` and streams its frames in a deterministic order.
    fn open(&self, source: &Path) -> Result<FrameStream>;
}

/// Adapters keyed by name.
pub struct AdapterRegistry {
    adapters: BTreeMap<&'static str, Box<dyn DatasetAdapter>>,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        let mut r = Self { adapters: BTreeMap::new() };
        r.register(Box::new(SyntheticAdapter));
        r.register(Box::new(KittiAdapter::default()));
        r.register(Box::new(CanonicalAdapter));
        r
    }
}

impl AdapterRegistry {
    pub fn register(&mut self, adapter: Box<dyn DatasetAdapter>) {
        self.adapters.insert(adapter.name(), adapter);
    }

    pub fn get(&self, name: &str) -> Result<&dyn DatasetAdapter> {
        self.adapters.get(name).map(|a| a.as_ref()).ok_or_else(|| Error::UnknownAdapter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.adapters.keys().copied()
    }
}

/// `source` itself if it is a file, else its files with `ext`, sorted.
fn collect_files(source: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if source.is_file() {
        return Ok(vec![source.to_path_buf()]);
    }
    let entries = std::fs::read_dir(source).map_err(|e| Error::io(source, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

type LineParser = fn(&str) -> std::result::Result<RawFrame, String>;

/// Streams JSON-lines files, one frame per non-blank line.
fn jsonl_stream(files: Vec<PathBuf>, parse: LineParser) -> FrameStream {
    Box::new(files.into_iter().flat_map(move |path| -> Box<dyn Iterator<Item = _> + Send> {
        match File::open(&path) {
            Err(e) => Box::new(std::iter::once(Err(IngestDiagnostic::new(&path, None, e.to_string())))),
            Ok(f) => Box::new(BufReader::new(f).lines().enumerate().filter_map(move |(i, line)| match line {
                Err(e) => Some(Err(IngestDiagnostic::new(&path, Some(i + 1), e.to_string()))),
                Ok(l) if l.trim().is_empty() => None,
                Ok(l) => Some(parse(&l).map_err(|m| IngestDiagnostic::new(&path, Some(i + 1), m))),
            })),
        }
    }))
}

/// One object in the synthetic fixture format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInstanceJson {
    pub id: String,
    pub category: String,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euler_zyx: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_2d: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
}

/// One image in the synthetic fixture format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFrameJson {
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "K")]
    pub k: [f64; 9],
    pub instances: Vec<SyntheticInstanceJson>,
}

impl SyntheticFrameJson {
    pub fn into_frame(self) -> Result<RawFrame> {
        let intrinsics = CameraIntrinsics::from_k(&self.k, self.width, self.height)?;
        let dataset = super::dataset_of(&self.image_path).to_string();
        let instances = self
            .instances
            .into_iter()
            .map(|inst| {
                let rotation = match (inst.euler_zyx, inst.yaw) {
                    (Some(e), _) => Rotation::from_euler_zyx(e)?,
                    (None, Some(y)) => Rotation::about_up(y),
                    (None, None) => Rotation::identity(),
                };
                let box3d = Box3D::new(Vec3(inst.center), Vec3(inst.dims), rotation);
                box3d.validate()?;
                Ok(RawInstance {
                    category: inst.category,
                    box3d,
                    box2d_px: inst.bbox_2d.map(Rect::from_array),
                    visibility: inst.visibility,
                    truncation: inst.truncation,
                    estimated: false,
                    source: SourceRef { dataset: dataset.clone(), instance_id: inst.id },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RawFrame { image_path: self.image_path, intrinsics, instances })
    }
}

pub struct SyntheticAdapter;

impl DatasetAdapter for SyntheticAdapter {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn open(&self, source: &Path) -> Result<FrameStream> {
        let files = collect_files(source, "jsonl")?;
        Ok(jsonl_stream(files, |line| {
            let raw: SyntheticFrameJson = serde_json::from_str(line).map_err(|e| format!("corrupt frame: {e}"))?;
            raw.into_frame().map_err(|e| e.to_string())
        }))
    }
}

/// KITTI object-detection labels.
///
/// Expects `label_2/<frame>.txt` and `calib/<frame>.txt` under the source
/// directory. Image sizes come from an optional `image_sizes.txt`
/// (`<frame> <width> <height>` per line), else `default_size`.
///
/// Field mapping per label line
/// `type truncated occluded alpha x1 y1 x2 y2 h w l x y z ry`:
/// category = lowercased type (`DontCare` skipped); center = `(x, y − h/2, z)`
/// since KITTI locates the bottom face; dims = `(w, h, l)`; rotation = yaw
/// `ry + π/2` about the vertical axis (KITTI's length runs along the object
/// x axis, ours along local z); 2D box and truncation are native. The
/// occlusion level is categorical, so visibility is estimated.
pub struct KittiAdapter {
    pub default_size: (u32, u32),
}

impl Default for KittiAdapter {
    fn default() -> Self {
        Self { default_size: (1242, 375) }
    }
}

impl KittiAdapter {
    /// Parses one label line; `Ok(None)` for `DontCare`.
    pub fn parse_label_line(line: &str, instance_id: String) -> std::result::Result<Option<RawInstance>, String> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 15 && f.len() != 16 {
            return Err(format!("expected 15 or 16 fields, found {}", f.len()));
        }
        if f[0] == "DontCare" {
            return Ok(None);
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| format!("field {i} `{}` is not a number", f[i]));
        let truncated = num(1)?;
        let bbox = [num(4)?, num(5)?, num(6)?, num(7)?];
        let (h, w, l) = (num(8)?, num(9)?, num(10)?);
        let (x, y, z) = (num(11)?, num(12)?, num(13)?);
        let ry = num(14)?;
        let box3d = Box3D::new(
            Vec3::new(x, y - h / 2.0, z),
            Vec3::new(w, h, l),
            Rotation::about_up(wrap_angle(ry + std::f64::consts::FRAC_PI_2)),
        );
        box3d.validate().map_err(|e| e.to_string())?;
        Ok(Some(RawInstance {
            category: f[0].to_lowercase(),
            box3d,
            box2d_px: Some(Rect::from_array(bbox)),
            visibility: None,
            truncation: Some(truncated.clamp(0.0, 1.0)),
            estimated: false,
            source: SourceRef { dataset: "kitti".into(), instance_id },
        }))
    }

    /// Intrinsics from the `P2:` projection row of a calibration file.
    pub fn parse_calib(text: &str, size: (u32, u32)) -> std::result::Result<CameraIntrinsics<f64>, String> {
        let row = text
            .lines()
            .find_map(|l| l.strip_prefix("P2:"))
            .ok_or_else(|| "calibration has no P2 row".to_string())?;
        let p: Vec<f64> = row.split_whitespace().map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
        if p.len() != 12 {
            return Err(format!("P2 has {} values, expected 12", p.len()));
        }
        CameraIntrinsics::new(p[0], p[5], p[2], p[6], size.0, size.1).map_err(|e| e.to_string())
    }

    fn read_frame(&self, root: &Path, label: &Path, sizes: &BTreeMap<String, (u32, u32)>) -> Vec<std::result::Result<RawFrame, IngestDiagnostic>> {
        let stem = label.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        let calib_path = root.join("calib").join(format!("{stem}.txt"));
        let size = sizes.get(&stem).copied().unwrap_or(self.default_size);
        let intrinsics = match std::fs::read_to_string(&calib_path) {
            Err(e) => return vec![Err(IngestDiagnostic::new(&calib_path, None, e.to_string()))],
            Ok(text) => match Self::parse_calib(&text, size) {
                Ok(c) => c,
                Err(m) => return vec![Err(IngestDiagnostic::new(&calib_path, None, m))],
            },
        };
        let text = match std::fs::read_to_string(label) {
            Ok(t) => t,
            Err(e) => return vec![Err(IngestDiagnostic::new(label, None, e.to_string()))],
        };
        let mut out = Vec::new();
        let mut instances = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match Self::parse_label_line(line, i.to_string()) {
                Ok(Some(inst)) => instances.push(inst),
                Ok(None) => {}
                Err(m) => out.push(Err(IngestDiagnostic::new(label, Some(i + 1), m))),
            }
        }
        out.push(Ok(RawFrame { image_path: format!("kitti/image_2/{stem}.png"), intrinsics, instances }));
        out
    }
}

impl DatasetAdapter for KittiAdapter {
    fn name(&self) -> &'static str {
        "kitti"
    }

    fn open(&self, source: &Path) -> Result<FrameStream> {
        let labels = collect_files(&source.join("label_2"), "txt")?;
        let mut sizes = BTreeMap::new();
        if let Ok(text) = std::fs::read_to_string(source.join("image_sizes.txt")) {
            for line in text.lines() {
                let f: Vec<&str> = line.split_whitespace().collect();
                if let [id, w, h] = f[..] {
                    if let (Ok(w), Ok(h)) = (w.parse(), h.parse()) {
                        sizes.insert(id.to_string(), (w, h));
                    }
                }
            }
        }
        let root = source.to_path_buf();
        let this = KittiAdapter { default_size: self.default_size };
        Ok(Box::new(labels.into_iter().flat_map(move |label| this.read_frame(&root, &label, &sizes))))
    }
}

/// Reads canonical output back as frames; consecutive lines of one image form a frame.
pub struct CanonicalAdapter;

struct CanonicalFrames {
    path: PathBuf,
    lines: std::iter::Enumerate<Lines<BufReader<File>>>,
    pending: Option<CanonicalLine>,
    queued: Vec<IngestDiagnostic>,
}

fn line_to_instances(line: CanonicalLine) -> (String, CameraIntrinsics<f64>, Vec<RawInstance>) {
    let instances = line
        .instances
        .into_iter()
        .enumerate()
        .map(|(i, r)| RawInstance {
            category: r.category,
            box3d: r.box3d,
            box2d_px: Some(r.box2d.pixel),
            visibility: r.visibility,
            truncation: r.truncation,
            estimated: r.estimated,
            source: SourceRef { dataset: r.source.dataset, instance_id: format!("{}:{i}", line.category) },
        })
        .collect();
    (line.image_path, line.intrinsics, instances)
}

impl Iterator for CanonicalFrames {
    type Item = std::result::Result<RawFrame, IngestDiagnostic>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(d) = self.queued.pop() {
            return Some(Err(d));
        }
        let mut frame: Option<RawFrame> = self.pending.take().map(|l| {
            let (image_path, intrinsics, instances) = line_to_instances(l);
            RawFrame { image_path, intrinsics, instances }
        });
        for (i, line) in self.lines.by_ref() {
            let parsed = match line {
                Err(e) => Err(e.to_string()),
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => parse_canonical_line(&l).map_err(|e| e.to_string()),
            };
            let line = match parsed {
                Ok(l) => l,
                Err(m) => {
                    let d = IngestDiagnostic::new(&self.path, Some(i + 1), m);
                    if frame.is_none() {
                        return Some(Err(d));
                    }
                    self.queued.push(d);
                    continue;
                }
            };
            match &mut frame {
                Some(f) if f.image_path == line.image_path => {
                    let (_, _, mut more) = line_to_instances(line);
                    f.instances.append(&mut more);
                }
                Some(_) => {
                    self.pending = Some(line);
                    break;
                }
                None => {
                    let (image_path, intrinsics, instances) = line_to_instances(line);
                    frame = Some(RawFrame { image_path, intrinsics, instances });
                }
            }
        }
        match frame {
            Some(f) => Some(Ok(f)),
            None => self.queued.pop().map(Err),
        }
    }
}

impl DatasetAdapter for CanonicalAdapter {
    fn name(&self) -> &'static str {
        "canonical"
    }

    fn open(&self, source: &Path) -> Result<FrameStream> {
        let files = collect_files(source, "jsonl")?;
        let iter = files.into_iter().flat_map(|path| -> Box<dyn Iterator<Item = _> + Send> {
            match File::open(&path) {
                Err(e) => Box::new(std::iter::once(Err(IngestDiagnostic::new(&path, None, e.to_string())))),
                Ok(f) => Box::new(CanonicalFrames {
                    path,
                    lines: BufReader::new(f).lines().enumerate(),
                    pending: None,
                    queued: Vec::new(),
                }),
            }
        });
        Ok(Box::new(iter))
    }
}
