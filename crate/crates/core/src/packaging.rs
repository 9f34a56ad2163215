//! Stage II: two-turn conversation records.
//!
//! Record layout (one JSON object per line):
//!
//! ```text
//! {"id":…,"image":…,"conversations":[{"from":"human","value":"<image>\n…"},{"from":"gpt","value":…}]}
//! ```
//!
//! Ids are prefixed by kind: `det:` detection, `neg:` negative, `grd:`
//! grounding, `p2d:` 2D pretraining. Prompt phrasings come from a template
//! bank picked by a seeded hash of the record id.

use serde::{Deserialize, Serialize};

use crate::codec::{encode_scene, SceneInstance, SerializationPolicy, NO_OBJECT};
use crate::curation::{CanonicalLine, InstanceRecord};
use crate::error::{Error, Result};
use crate::geometry::NormBox;
use crate::negatives::{stable_hash, NegativeStub};

const BUILTIN_TEMPLATES: &str = include_str!("../data/templates.txt");

/// Prefix of the first human turn; the trainer replaces it with visual tokens.
pub const IMAGE_TOKEN: &str = "<image>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub image: String,
    pub conversations: Vec<Turn>,
}

impl Conversation {
    /// Builds a dialogue from (prompt, response) pairs; the image token goes before the first prompt.
    pub fn new(id: String, image: String, pairs: Vec<(String, String)>) -> Self {
        let mut conversations = Vec::with_capacity(pairs.len() * 2);
        for (i, (prompt, response)) in pairs.into_iter().enumerate() {
            let value = if i == 0 { format!("{IMAGE_TOKEN}\n{prompt}") } else { prompt };
            conversations.push(Turn { from: "human".into(), value });
            conversations.push(Turn { from: "gpt".into(), value: response });
        }
        Self { id, image, conversations }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("conversation serializes")
    }

    pub fn prompt(&self) -> &str {
        self.conversations[0].value.strip_prefix(IMAGE_TOKEN).map_or(&self.conversations[0].value, |s| s.trim_start_matches('\n'))
    }

    pub fn response(&self) -> &str {
        &self.conversations[1].value
    }
}

/// Prompt phrasings; detection ones use `{category}`, grounding ones `{phrase}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub detection: Vec<String>,
    pub grounding: Vec<String>,
}

impl PromptTemplates {
    /// Parses a file with `[detection]` and `[grounding]` sections, one template per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut detection = Vec::new();
        let mut grounding = Vec::new();
        let mut section: Option<&mut Vec<String>> = None;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[detection]" => section = Some(&mut detection),
                "[grounding]" => section = Some(&mut grounding),
                _ => section
                    .as_mut()
                    .ok_or_else(|| Error::invalid("template outside a section"))?
                    .push(line.to_string()),
            }
        }
        if detection.iter().any(|t| !t.contains("{category}")) || grounding.iter().any(|t| !t.contains("{phrase}")) {
            return Err(Error::invalid("template lacks its placeholder"));
        }
        if detection.is_empty() || grounding.is_empty() {
            return Err(Error::invalid("both template sections need at least one entry"));
        }
        Ok(Self { detection, grounding })
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATES).expect("builtin templates parse")
    }

    fn pick<'a>(list: &'a [String], seed: u64, id: &str) -> &'a str {
        &list[(stable_hash(seed, &[id]) % list.len() as u64) as usize]
    }

    pub fn detection_prompt(&self, category: &str, seed: u64, id: &str) -> String {
        Self::pick(&self.detection, seed, id).replace("{category}", category)
    }

    pub fn grounding_prompt(&self, phrase: &str, seed: u64, id: &str) -> String {
        Self::pick(&self.grounding, seed, id).replace("{phrase}", phrase)
    }
}

fn scene_instance(r: &InstanceRecord) -> SceneInstance<f64> {
    SceneInstance { box3d: r.box3d, box2d: r.box2d, depth: r.depth }
}

pub fn detection_id(line: &CanonicalLine) -> String {
    format!("det:{}:{}", line.image_path, line.category)
}

/// Detection record for a canonical line.
pub fn package_detection(line: &CanonicalLine, policy: &SerializationPolicy, templates: &PromptTemplates, seed: u64) -> Result<Conversation> {
    let id = detection_id(line);
    let scene: Vec<_> = line.instances.iter().map(scene_instance).collect();
    let response = encode_scene(&scene, policy)?;
    let prompt = templates.detection_prompt(&line.category, seed, &id);
    Ok(Conversation::new(id, line.image_path.clone(), vec![(prompt, response)]))
}

/// Detection-style record whose answer is the sentinel.
pub fn package_negative(stub: &NegativeStub, templates: &PromptTemplates, seed: u64) -> Conversation {
    let id = format!("neg:{}:{}", stub.image_path, stub.category);
    let prompt = templates.detection_prompt(&stub.category, seed, &id);
    Conversation::new(id, stub.image_path.clone(), vec![(prompt, NO_OBJECT.to_string())])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizontal {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Range {
    Close,
    Medium,
    Far,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Horizontal position by image thirds of the 2D box center; range by
/// per-scene depth terciles.
///
/// With fewer than three depths the range is `Close` below the median and
/// `Far` otherwise, so a lone instance is `Far`.
pub fn spatial_qualifier(instance: &InstanceRecord, image_width: u32, scene_depths: &[f64]) -> (Horizontal, Range) {
    let w = f64::from(image_width);
    let x = instance.box2d.pixel.center().0;
    let horizontal = if x < w / 3.0 {
        Horizontal::Left
    } else if x < 2.0 * w / 3.0 {
        Horizontal::Center
    } else {
        Horizontal::Right
    };
    let mut sorted: Vec<f64> = scene_depths.iter().copied().filter(|d| d.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let d = instance.depth;
    let range = if sorted.is_empty() {
        Range::Far
    } else if sorted.len() < 3 {
        if d < quantile(&sorted, 0.5) { Range::Close } else { Range::Far }
    } else if d < quantile(&sorted, 1.0 / 3.0) {
        Range::Close
    } else if d < quantile(&sorted, 2.0 / 3.0) {
        Range::Medium
    } else {
        Range::Far
    };
    (horizontal, range)
}

/// Referring phrase such as `chair on the left, close to the camera`.
pub fn qualified_phrase(category: &str, (h, r): (Horizontal, Range)) -> String {
    let h = match h {
        Horizontal::Left => "on the left",
        Horizontal::Center => "in the center",
        Horizontal::Right => "on the right",
    };
    let r = match r {
        Range::Close => "close to the camera",
        Range::Medium => "at medium distance from the camera",
        Range::Far => "far from the camera",
    };
    format!("{category} {h}, {r}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundingMode {
    CategoryOnly,
    CategoryPlusLocation,
}

/// Grounding record for one target instance; the response is its single segment.
pub fn package_grounding(
    line: &CanonicalLine,
    target: usize,
    mode: GroundingMode,
    policy: &SerializationPolicy,
    templates: &PromptTemplates,
    seed: u64,
) -> Result<Conversation> {
    let inst = line.instances.get(target).ok_or(Error::IndexOutOfRange { index: target, len: line.instances.len() })?;
    let (phrase, tag) = match mode {
        GroundingMode::CategoryOnly => (line.category.clone(), "cat"),
        GroundingMode::CategoryPlusLocation => {
            let depths: Vec<f64> = line.instances.iter().map(|r| r.depth).collect();
            (qualified_phrase(&line.category, spatial_qualifier(inst, line.image_width(), &depths)), "loc")
        }
    };
    let id = format!("grd:{}:{}:{target}:{tag}", line.image_path, line.category);
    let prompt = templates.grounding_prompt(&phrase, seed, &id);
    let response = encode_scene(&[scene_instance(inst)], policy)?;
    Ok(Conversation::new(id, line.image_path.clone(), vec![(prompt, response)]))
}

/// Request for an external annotator to describe one highlighted instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationJob {
    pub image: String,
    pub bbox_px: [f64; 4],
    pub category: String,
    pub instructions: String,
}

pub fn annotation_job(line: &CanonicalLine, target: usize) -> Result<AnnotationJob> {
    let inst = line.instances.get(target).ok_or(Error::IndexOutOfRange { index: target, len: line.instances.len() })?;
    let instructions = format!(
        "The image shows a single highlighted box around a {}; the rest of the scene is unchanged. \
         Write one concise referring expression for the highlighted object. It must identify it uniquely: \
         no other object in the image may fit the description. Use attributes, spatial layout \
         (left/right/top/bottom, nearby objects), coarse pose and context. Do not mention the box.",
        line.category
    );
    Ok(AnnotationJob { image: line.image_path.clone(), bbox_px: inst.box2d.pixel.to_array(), category: line.category.clone(), instructions })
}

/// Normalized 2D boxes of one category in an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category2D {
    pub category: String,
    pub boxes: Vec<NormBox>,
}

pub const PRETRAIN_NEGATIVES: usize = 10;

pub fn pretrain_prompt(category: &str) -> String {
    format!("Detect all the objects in the image that belong to the category set {{{category}}}.")
}

/// Multi-turn 2D grounding dialogue: one turn per present category, then up
/// to ten absent categories answered `None`.
pub fn package_2d_pretraining(image: &str, present: &[Category2D], vocabulary: &[String], seed: u64) -> Conversation {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let mut pairs: Vec<(String, String)> = present
        .iter()
        .map(|c| {
            let boxes: Vec<String> = c.boxes.iter().map(|b| format!("[{},{},{},{}]", b.0[0], b.0[1], b.0[2], b.0[3])).collect();
            let response = if boxes.is_empty() { "None".to_string() } else { boxes.join(", ") };
            (pretrain_prompt(&c.category), response)
        })
        .collect();
    let absent: Vec<&String> = vocabulary.iter().filter(|v| !present.iter().any(|c| &c.category == *v)).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stable_hash(seed, &[image, "p2d"]));
    for cat in absent.choose_multiple(&mut rng, PRETRAIN_NEGATIVES) {
        pairs.push((pretrain_prompt(cat), "None".to_string()));
    }
    Conversation::new(format!("p2d:{image}"), image.to_string(), pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_sequence, DecodeMode};
    use crate::curation::{normalize_frame, CurationConfig, RawFrame, RawInstance, SourceRef};
    use crate::geometry::{Box3D, CameraIntrinsics, Rotation};
    use crate::linalg::Vec3;

    fn line(centers: &[[f64; 3]], category: &str) -> CanonicalLine {
        let cam = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let instances = centers
            .iter()
            .enumerate()
            .map(|(i, c)| RawInstance {
                category: category.into(),
                box3d: Box3D::new(Vec3(*c), Vec3::new(0.5, 0.9, 0.5), Rotation::about_up(0.3)),
                box2d_px: None,
                visibility: Some(1.0),
                truncation: Some(0.0),
                estimated: false,
                source: SourceRef { dataset: "room".into(), instance_id: i.to_string() },
            })
            .collect();
        let frame = RawFrame { image_path: "room/0001.png".into(), intrinsics: cam, instances };
        normalize_frame(&frame, &CurationConfig::default()).lines.remove(0)
    }

    #[test]
    fn detection_two_cars_nearer_first() {
        let l = line(&[[1.0, 0.5, 9.0], [-1.0, 0.5, 4.0]], "car");
        let conv = package_detection(&l, &SerializationPolicy::default(), &PromptTemplates::builtin(), 1).unwrap();
        assert!(conv.prompt().contains("car"));
        assert!(conv.conversations[0].value.starts_with("<image>\n"));
        let dec = decode_sequence::<f64>(conv.response(), &SerializationPolicy::default(), DecodeMode::Strict).unwrap();
        assert_eq!(dec.sequence.instances.len(), 2);
        assert_eq!(dec.sequence.instances[0].box3d.center.z(), 4.0);
    }

    #[test]
    fn negative_is_sentinel() {
        let stub = NegativeStub { image_path: "a/b.png".into(), category: "van".into(), hard: true, response: NO_OBJECT.into() };
        let conv = package_negative(&stub, &PromptTemplates::builtin(), 0);
        assert_eq!(conv.response(), "<no_object/>");
        assert!(conv.prompt().contains("van"));
    }

    #[test]
    fn qualifiers() {
        let l = line(&[[-1.0, 0.5, 2.0], [0.0, 0.5, 5.0], [2.0, 0.5, 9.0]], "chair");
        let depths = [2.0, 5.0, 9.0];
        assert_eq!(spatial_qualifier(&l.instances[0], 640, &depths), (Horizontal::Left, Range::Close));
        assert_eq!(spatial_qualifier(&l.instances[1], 640, &depths).1, Range::Medium);
        assert_eq!(spatial_qualifier(&l.instances[2], 640, &depths).1, Range::Far);
        assert_eq!(spatial_qualifier(&l.instances[0], 640, &[2.0]).1, Range::Far);
        assert_eq!(spatial_qualifier(&l.instances[0], 640, &[2.0, 5.0]).1, Range::Close);
    }

    #[test]
    fn grounding_records() {
        let l = line(&[[-1.0, 0.5, 2.0], [0.0, 0.5, 5.0], [2.0, 0.5, 9.0]], "chair");
        let policy = SerializationPolicy::default();
        let t = PromptTemplates::builtin();
        let loc = package_grounding(&l, 0, GroundingMode::CategoryPlusLocation, &policy, &t, 4).unwrap();
        for word in ["chair", "left", "close"] {
            assert!(loc.prompt().contains(word), "{}", loc.prompt());
        }
        let cat = package_grounding(&l, 1, GroundingMode::CategoryOnly, &policy, &t, 4).unwrap();
        assert!(!["left", "right", "center", "close", "far", "medium"].iter().any(|w| cat.prompt().contains(w)));
        let dec = decode_sequence::<f64>(cat.response(), &policy, DecodeMode::Strict).unwrap();
        assert_eq!(dec.sequence.instances.len(), 1);
        assert!(matches!(package_grounding(&l, 3, GroundingMode::CategoryOnly, &policy, &t, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn annotation_jobs() {
        let l = line(&[[-1.0, 0.5, 2.0], [0.0, 0.5, 5.0], [2.0, 0.5, 9.0]], "chair");
        let jobs: Vec<AnnotationJob> = (0..3).map(|i| annotation_job(&l, i).unwrap()).collect();
        assert_eq!(jobs[1].bbox_px, l.instances[1].box2d.pixel.to_array());
        assert!(jobs[0].instructions.contains("uniquely"));
        assert!(jobs[0].bbox_px != jobs[1].bbox_px && jobs[1].bbox_px != jobs[2].bbox_px && jobs[0].bbox_px != jobs[2].bbox_px);
    }

    #[test]
    fn pretraining_turns() {
        let vocab: Vec<String> = (0..13).map(|i| format!("c{i}")).chain(["car".into(), "person".into()]).collect();
        let present = vec![
            Category2D { category: "car".into(), boxes: vec![NormBox([1, 2, 3, 4]), NormBox([10, 20, 30, 40])] },
            Category2D { category: "person".into(), boxes: vec![NormBox([5, 6, 7, 8])] },
        ];
        let conv = package_2d_pretraining("x.png", &present, &vocab, 0);
        assert_eq!(conv.conversations.len(), 2 * 12);
        assert_eq!(conv.conversations[1].value, "[1,2,3,4], [10,20,30,40]");
        assert!(conv.conversations[0].value.ends_with("category set {car}."));
        assert_eq!(conv.conversations.iter().filter(|t| t.value == "None").count(), 10);
        let small = package_2d_pretraining("x.png", &present, &vocab[10..], 0);
        assert_eq!(small.conversations.len(), 2 * (2 + 3));
    }
}
