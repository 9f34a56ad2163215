use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use cos3d::codec::{decode_sequence, encode_scene, DecodeMode, SceneInstance, SerializationPolicy, Terminal};
use cos3d::curation::{parse_canonical_line, AdapterRegistry, CanonicalLine, CurationConfig, DropRecord, RawFrame};
use cos3d::eval::{
    ap_sweep, ground_truth_from_canonical, grounding_score, BoxJson, EvalConfig, GroundingQuery, PredictionLine,
    Protocol, Ranking, DETECTION_THRESHOLDS, GROUNDING_THRESHOLDS,
};
use cos3d::geometry::{Box3D, DepthMode};
use cos3d::negatives::{sample_negatives, ImageCategories, NegativeSpec, NegativeStub, ProximityTable};
use cos3d::packaging::{
    annotation_job, package_2d_pretraining, package_detection, package_grounding, package_negative, Category2D,
    Conversation, GroundingMode, PromptTemplates,
};
use cos3d::packing::{select_tiling, token_count, ApproxTokenizer, Packer, Tiling, TilingConfig, TokenConfig, DEFAULT_BUDGET};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::io::{read_file, read_lines, write_file, DiagRecord, LineWriter};
use crate::{
    bev, BevArgs, DecodeArgs, DepthModeArg, Diagnostics, EncodeArgs, EvalMode, EvaluateArgs, Failure, GroundingChoice,
    NegativesArgs, NormalizeArgs, PackArgs, PackageArgs, ProtocolArg, RankingArg,
};

/// Records handed to the worker pool at a time.
const CHUNK: usize = 1024;

pub struct Context<'a> {
    pub cfg: &'a Config,
    pub seed: u64,
}

impl Context<'_> {
    fn policy(&self, flag: &Option<String>) -> Result<SerializationPolicy, Failure> {
        match flag.as_ref().or(self.cfg.policy.as_ref()) {
            Some(s) => s.parse().map_err(|e: cos3d::Error| Failure::usage(e.to_string())),
            None => Ok(SerializationPolicy::default()),
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<f64, Failure> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Failure::usage(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Canonical lines of a file; unparseable lines go to diagnostics.
fn canonical_lines<'a>(
    path: &'a Path,
    stage: &'a str,
    diag: &'a mut Diagnostics,
) -> Result<impl Iterator<Item = Result<CanonicalLine, Failure>> + 'a, Failure> {
    let lines = read_lines(path)?;
    Ok(lines.filter_map(move |item| match item {
        Err(e) => Some(Err(e)),
        Ok((n, text)) => match parse_canonical_line(&text) {
            Ok(l) => Some(Ok(l)),
            Err(e) => {
                diag.at(stage, path, Some(n), &e.to_string());
                None
            }
        },
    }))
}

fn json_lines<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str, diag: &mut Diagnostics) -> Result<Vec<(usize, T)>, Failure> {
    let mut out = Vec::new();
    for item in read_lines(path)? {
        let (n, text) = item?;
        match serde_json::from_str(&text) {
            Ok(v) => out.push((n, v)),
            Err(e) => diag.at(stage, path, Some(n), &e.to_string()),
        }
    }
    Ok(out)
}

pub fn normalize(ctx: &Context, a: &NormalizeArgs, diag: &mut Diagnostics) -> Result<(), Failure> {
    let c = &ctx.cfg.curation;
    let defaults = CurationConfig::default();
    let cur = CurationConfig {
        depth_mode: match a.depth_mode {
            Some(DepthModeArg::CenterZ) => DepthMode::CenterZ,
            Some(DepthModeArg::Euclidean) => DepthMode::Euclidean,
            None => c.depth_mode.unwrap_or_default(),
        },
        min_visibility: unit_interval("min-visibility", a.min_visibility.or(c.min_visibility).unwrap_or(defaults.min_visibility))?,
        max_truncation: unit_interval("max-truncation", a.max_truncation.or(c.max_truncation).unwrap_or(defaults.max_truncation))?,
    };
    let registry = AdapterRegistry::default();
    let stream = registry.get(&a.adapter)?.open(&a.input)?;
    let mut out = LineWriter::create(&a.output)?;
    let mut drops = a.drops.as_deref().map(LineWriter::create).transpose()?;
    let (mut frames, mut lines, mut dropped) = (0usize, 0usize, 0usize);

    let mut flush = |chunk: &mut Vec<RawFrame>, out: &mut LineWriter, drops: &mut Option<LineWriter>| -> Result<(), Failure> {
        let results: Vec<_> = cos3d::curation::normalize_frames(chunk, &cur);
        for r in results {
            for l in &r.lines {
                out.line(&l.to_json_line())?;
            }
            lines += r.lines.len();
            dropped += r.drops.len();
            if let Some(w) = drops.as_mut() {
                for d in &r.drops {
                    w.json(d)?;
                }
            }
        }
        frames += chunk.len();
        chunk.clear();
        Ok(())
    };

    let mut chunk = Vec::with_capacity(CHUNK);
    for item in stream {
        match item {
            Ok(f) => {
                chunk.push(f);
                if chunk.len() == CHUNK {
                    flush(&mut chunk, &mut out, &mut drops)?;
                }
            }
            Err(d) => diag.emit(&DiagRecord { stage: "normalize", file: Some(&d.file), line: d.line, offset: None, message: &d.message }),
        }
    }
    flush(&mut chunk, &mut out, &mut drops)?;
    out.finish()?;
    if let Some(w) = drops {
        w.finish()?;
    }
    log::info!("normalize: {frames} frames, {lines} canonical lines, {dropped} instances dropped");
    Ok(())
}

fn read_vocabulary(path: &Path) -> Result<Vec<String>, Failure> {
    let set: BTreeSet<String> = read_file(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    Ok(set.into_iter().collect())
}

pub fn negatives(ctx: &Context, a: &NegativesArgs, diag: &mut Diagnostics) -> Result<(), Failure> {
    let n = &ctx.cfg.negatives;
    let defaults = NegativeSpec::default();
    let spec = NegativeSpec {
        max_fraction: a.max_fraction.or(n.max_fraction).unwrap_or(defaults.max_fraction),
        max_per_image: a.max_per_image.or(n.max_per_image).unwrap_or(defaults.max_per_image),
        hard_share: unit_interval("hard-share", a.hard_share.or(n.hard_share).unwrap_or(defaults.hard_share))?,
        seed: ctx.seed,
    };
    if !(0.0..1.0).contains(&spec.max_fraction) {
        return Err(Failure::usage(format!("max-fraction must lie in [0, 1), got {}", spec.max_fraction)));
    }
    let table = match a.proximity.as_ref().or(n.proximity.as_ref()) {
        Some(p) => ProximityTable::parse(&read_file(p)?)?,
        None => ProximityTable::builtin(),
    };

    let mut images: Vec<ImageCategories> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut positives = 0usize;
    let mut corpus_categories = BTreeSet::new();
    for line in canonical_lines(&a.input, "negatives", diag)? {
        let line = line?;
        positives += 1;
        corpus_categories.insert(line.category.clone());
        let i = *index.entry(line.image_path.clone()).or_insert_with(|| {
            images.push(ImageCategories { image_path: line.image_path.clone(), present: BTreeSet::new() });
            images.len() - 1
        });
        images[i].present.insert(line.category);
    }
    if let Some(p) = &a.drops {
        for (_, d) in json_lines::<DropRecord>(p, "negatives", diag)? {
            if let Some(&i) = index.get(&d.image_path) {
                images[i].present.insert(d.category);
            }
        }
    }
    let vocabulary = match a.vocabulary.as_ref().or(n.vocabulary.as_ref()) {
        Some(p) => read_vocabulary(p)?,
        None => corpus_categories.into_iter().chain(table.categories()).collect::<BTreeSet<_>>().into_iter().collect(),
    };

    let stubs = sample_negatives(&images, positives, &vocabulary, &table, &spec);
    let mut out = LineWriter::create(&a.output)?;
    for s in &stubs {
        out.json(s)?;
    }
    out.finish()?;
    log::info!("negatives: {} stubs for {} images, {positives} positives", stubs.len(), images.len());
    Ok(())
}

#[derive(Deserialize)]
struct CategoryOnly {
    category_name: String,
}

#[derive(Default)]
struct ImageRecords {
    conversations: Vec<String>,
    jobs: Vec<String>,
    pretrain: Option<String>,
}

struct PackageJob<'a> {
    policy: SerializationPolicy,
    templates: PromptTemplates,
    modes: Vec<GroundingMode>,
    seed: u64,
    jobs: bool,
    pretrain_vocab: Option<Vec<String>>,
    negatives: &'a HashMap<String, Vec<NegativeStub>>,
}

impl PackageJob<'_> {
    /// Records for one image: detection, grounding and negatives, in that order per line.
    fn image(&self, group: &[CanonicalLine], emit_negatives: bool) -> Result<ImageRecords, Failure> {
        let mut r = ImageRecords::default();
        for line in group {
            r.conversations.push(package_detection(line, &self.policy, &self.templates, self.seed)?.to_json_line());
            for t in 0..line.instances.len() {
                for &m in &self.modes {
                    r.conversations.push(package_grounding(line, t, m, &self.policy, &self.templates, self.seed)?.to_json_line());
                }
                if self.jobs {
                    r.jobs.push(serde_json::to_string(&annotation_job(line, t)?).expect("job serializes"));
                }
            }
        }
        if emit_negatives {
            for stub in self.negatives.get(&group[0].image_path).into_iter().flatten() {
                r.conversations.push(package_negative(stub, &self.templates, self.seed).to_json_line());
            }
        }
        if let Some(vocab) = &self.pretrain_vocab {
            let present: Vec<Category2D> = group
                .iter()
                .map(|l| Category2D { category: l.category.clone(), boxes: l.instances.iter().map(|i| i.box2d.norm).collect() })
                .collect();
            r.pretrain = Some(package_2d_pretraining(&group[0].image_path, &present, vocab, self.seed).to_json_line());
        }
        Ok(r)
    }
}

pub fn package(ctx: &Context, a: &PackageArgs, diag: &mut Diagnostics) -> Result<(), Failure> {
    let templates = match a.templates.as_ref().or(ctx.cfg.packaging.templates.as_ref()) {
        Some(p) => PromptTemplates::parse(&read_file(p)?)?,
        None => PromptTemplates::builtin(),
    };
    let modes = match a.grounding.or(ctx.cfg.packaging.grounding).unwrap_or_default() {
        GroundingChoice::None => vec![],
        GroundingChoice::Category => vec![GroundingMode::CategoryOnly],
        GroundingChoice::Location => vec![GroundingMode::CategoryPlusLocation],
        GroundingChoice::Both => vec![GroundingMode::CategoryOnly, GroundingMode::CategoryPlusLocation],
    };

    let mut negative_order: Vec<String> = Vec::new();
    let mut negatives: HashMap<String, Vec<NegativeStub>> = HashMap::new();
    if let Some(p) = &a.negatives {
        for (_, s) in json_lines::<NegativeStub>(p, "package", diag)? {
            if !negatives.contains_key(&s.image_path) {
                negative_order.push(s.image_path.clone());
            }
            negatives.entry(s.image_path.clone()).or_default().push(s);
        }
    }

    let pretrain_vocab = match &a.pretrain_2d {
        None => None,
        Some(_) => {
            let mut cats = BTreeSet::new();
            for item in read_lines(&a.input)? {
                if let Ok(c) = serde_json::from_str::<CategoryOnly>(&item?.1) {
                    cats.insert(c.category_name);
                }
            }
            Some(cats.into_iter().collect())
        }
    };

    let job = PackageJob {
        policy: ctx.policy(&a.policy)?,
        templates,
        modes,
        seed: ctx.seed,
        jobs: a.jobs.is_some(),
        pretrain_vocab,
        negatives: &negatives,
    };
    let mut out = LineWriter::create(&a.output)?;
    let mut jobs_out = a.jobs.as_deref().map(LineWriter::create).transpose()?;
    let mut pre_out = a.pretrain_2d.as_deref().map(LineWriter::create).transpose()?;
    let mut seen: HashSet<String> = HashSet::new();

    let mut flush = |groups: &mut Vec<Vec<CanonicalLine>>, seen: &mut HashSet<String>| -> Result<(), Failure> {
        let first: Vec<bool> = groups.iter().map(|g| seen.insert(g[0].image_path.clone())).collect();
        let records: Vec<Result<ImageRecords, Failure>> =
            groups.par_iter().zip(first.par_iter()).map(|(g, &f)| job.image(g, f)).collect();
        for r in records {
            let r = r?;
            for c in &r.conversations {
                out.line(c)?;
            }
            if let Some(w) = jobs_out.as_mut() {
                for j in &r.jobs {
                    w.line(j)?;
                }
            }
            if let (Some(w), Some(p)) = (pre_out.as_mut(), &r.pretrain) {
                w.line(p)?;
            }
        }
        groups.clear();
        Ok(())
    };

    let mut groups: Vec<Vec<CanonicalLine>> = Vec::new();
    let mut current: Vec<CanonicalLine> = Vec::new();
    for line in canonical_lines(&a.input, "package", diag)? {
        let line = line?;
        if current.first().is_some_and(|c| c.image_path != line.image_path) {
            groups.push(std::mem::take(&mut current));
            if groups.len() == CHUNK {
                flush(&mut groups, &mut seen)?;
            }
        }
        current.push(line);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    flush(&mut groups, &mut seen)?;

    for image in negative_order.iter().filter(|i| !seen.contains(*i)) {
        for stub in &negatives[image] {
            out.line(&package_negative(stub, &job.templates, ctx.seed).to_json_line())?;
        }
    }
    out.finish()?;
    for w in [jobs_out, pre_out].into_iter().flatten() {
        w.finish()?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct ImageSize {
    image_path: String,
    image_width: u32,
    image_height: u32,
}

pub fn pack(ctx: &Context, a: &PackArgs, diag: &mut Diagnostics) -> Result<(), Failure> {
    let p = &ctx.cfg.packing;
    let budget = a.budget.or(p.budget).unwrap_or(DEFAULT_BUDGET);
    if budget == 0 {
        return Err(Failure::usage("budget must be positive"));
    }
    let tdef = TilingConfig::default();
    let tiling = TilingConfig {
        tile_size: p.tile_size.unwrap_or(tdef.tile_size),
        min_tiles: p.min_tiles.unwrap_or(tdef.min_tiles),
        max_tiles: p.max_tiles.unwrap_or(tdef.max_tiles),
    };
    if tiling.tile_size == 0 || tiling.min_tiles == 0 || tiling.min_tiles > tiling.max_tiles {
        return Err(Failure::usage("tiling needs tile_size > 0 and 1 <= min_tiles <= max_tiles"));
    }
    let kdef = TokenConfig::default();
    let tokens = TokenConfig {
        per_tile_tokens: a.per_tile_tokens.or(p.per_tile_tokens).unwrap_or(kdef.per_tile_tokens),
        frame_markers: p.frame_markers.unwrap_or(kdef.frame_markers),
        tiling,
    };

    let mut sizes: HashMap<String, (u32, u32)> = HashMap::new();
    if let Some(c) = &a.canonical {
        for (_, s) in json_lines::<ImageSize>(c, "pack", diag)? {
            sizes.insert(s.image_path, (s.image_width, s.image_height));
        }
    }

    let mut packer = Packer::new(budget);
    let mut out = LineWriter::create(&a.output)?;
    let mut chunk: Vec<(usize, Conversation)> = Vec::with_capacity(CHUNK);
    let mut flush = |chunk: &mut Vec<(usize, Conversation)>, packer: &mut Packer, diag: &mut Diagnostics| -> Result<(), Failure> {
        let counted: Vec<(usize, bool)> = chunk
            .par_iter()
            .map(|(_, c)| {
                let size = sizes.get(&c.image);
                let t: Option<Tiling> = if c.image.is_empty() {
                    None
                } else {
                    Some(size.map_or(Tiling { cols: 1, rows: 1, thumbnail: false }, |&(w, h)| select_tiling(w, h, &tokens.tiling)))
                };
                (token_count(c, t.as_ref(), &tokens, &ApproxTokenizer), size.is_some() || c.image.is_empty())
            })
            .collect();
        for ((n, c), (count, known)) in chunk.drain(..).zip(counted) {
            if !known {
                diag.at("pack", &a.input, Some(n), &format!("no size for image {}; counted as one tile", c.image));
            }
            for p in packer.push(c.id, count) {
                out.json(&p)?;
            }
        }
        Ok(())
    };
    for item in read_lines(&a.input)? {
        let (n, text) = item?;
        match serde_json::from_str::<Conversation>(&text) {
            Ok(c) if !c.conversations.is_empty() => chunk.push((n, c)),
            Ok(_) => diag.at("pack", &a.input, Some(n), "conversation has no turns"),
            Err(e) => diag.at("pack", &a.input, Some(n), &e.to_string()),
        }
        if chunk.len() == CHUNK {
            flush(&mut chunk, &mut packer, diag)?;
        }
    }
    flush(&mut chunk, &mut packer, diag)?;
    if let Some(p) = packer.finish() {
        out.json(&p)?;
    }
    out.finish()
}

#[derive(Serialize)]
struct SequenceRecord<'a> {
    image_path: &'a str,
    category: &'a str,
    text: String,
}

pub fn encode(ctx: &Context, a: &EncodeArgs, diag: &mut Diagnostics) -> Result<(), Failure> {
    let policy = ctx.policy(&a.policy)?;
    let mut out = LineWriter::create(&a.output)?;
    for line in canonical_lines(&a.input, "encode", diag)? {
        let line = line?;
        let scene: Vec<SceneInstance<f64>> =
            line.instances.iter().map(|r| SceneInstance { box3d: r.box3d, box2d: r.box2d, depth: r.depth }).collect();
        let text = encode_scene(&scene, &policy)?;
        out.json(&SequenceRecord { image_path: &line.image_path, category: &line.category, text })?;
    }
    out.finish()
}

#[derive(Deserialize)]
struct TextField {
    text: String,
}

#[derive(Serialize)]
struct DecodedInstanceRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    box2d: Option<[u16; 4]>,
    box3d: BoxJson,
    rotation_values: Vec<f64>,
}

#[derive(Serialize)]
struct DecodedRecord {
    line: usize,
    terminal: &'static str,
    instances: Vec<DecodedInstanceRecord>,
}

pub fn decode(ctx: &Context, a: &DecodeArgs, diag: &mut Diagnostics) -> Result<(), Failure> {
    let policy = ctx.policy(&a.policy)?;
    let mode = if a.recover { DecodeMode::Recover } else { DecodeMode::Strict };
    let file = a.input.display().to_string();
    let mut out = LineWriter::create(&a.output)?;
    let mut failed = 0usize;
    for item in read_lines(&a.input)? {
        let (n, raw) = item?;
        let text = if raw.trim_start().starts_with('{') {
            match serde_json::from_str::<TextField>(&raw) {
                Ok(t) => t.text,
                Err(e) => {
                    diag.at("decode", &a.input, Some(n), &e.to_string());
                    failed += 1;
                    continue;
                }
            }
        } else {
            raw
        };
        match decode_sequence::<f64>(&text, &policy, mode) {
            Ok(d) => {
                for m in &d.diagnostics {
                    diag.emit(&DiagRecord { stage: "decode", file: Some(&file), line: Some(n), offset: Some(m.offset), message: &m.message });
                }
                let instances = d
                    .sequence
                    .instances
                    .iter()
                    .map(|i| DecodedInstanceRecord {
                        box2d: i.box2d.map(|b| b.0),
                        box3d: BoxJson::from_box(&i.box3d),
                        rotation_values: i.rotation_values.clone(),
                    })
                    .collect();
                let terminal = match d.sequence.terminal {
                    Terminal::EndOfSequence => "end-of-sequence",
                    Terminal::NoObject => "no-object",
                };
                out.json(&DecodedRecord { line: n, terminal, instances })?;
            }
            Err(e) => {
                failed += 1;
                let msg = format!("expected {}, found {}", e.expected, e.found);
                diag.emit(&DiagRecord { stage: "decode", file: Some(&file), line: Some(n), offset: Some(e.offset), message: &msg });
            }
        }
    }
    out.finish()?;
    if failed > 0 {
        return Err(Failure::data("parse", format!("{failed} sequence(s) failed to decode")));
    }
    Ok(())
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs, diag: &mut Diagnostics) -> Result<(), Failure> {
    let e = &ctx.cfg.eval;
    let policy = ctx.policy(&a.policy)?;
    let mut gt_lines = Vec::new();
    for l in canonical_lines(&a.gt, "evaluate", diag)? {
        gt_lines.push(l?);
    }
    let gts = ground_truth_from_canonical(&gt_lines);
    let mut results = Vec::new();
    for (n, p) in json_lines::<PredictionLine>(&a.predictions, "evaluate", diag)? {
        let r = p.into_result(&policy);
        for m in &r.diagnostics {
            diag.at("evaluate", &a.predictions, Some(n), m);
        }
        results.push((n, r));
    }
    let default_thresholds = match a.mode {
        EvalMode::Detection => DETECTION_THRESHOLDS.to_vec(),
        EvalMode::Grounding => GROUNDING_THRESHOLDS.to_vec(),
    };
    let thresholds = a.thresholds.clone().or_else(|| e.thresholds.clone()).unwrap_or(default_thresholds);
    cos3d::eval::validate_thresholds(&thresholds)?;

    let json = match a.mode {
        EvalMode::Detection => {
            let cfg = EvalConfig {
                thresholds,
                protocol: match a.protocol {
                    Some(ProtocolArg::TargetAware) => Protocol::TargetAware,
                    Some(ProtocolArg::FixedVocabulary) => Protocol::FixedVocabulary,
                    None => e.protocol.unwrap_or_default(),
                },
                ranking: match a.ranking {
                    Some(RankingArg::EmissionOrder) => Ranking::EmissionOrder,
                    Some(RankingArg::Uniform) => Ranking::Uniform,
                    None => e.ranking.unwrap_or_default(),
                },
            };
            let results: Vec<_> = results.into_iter().map(|(_, r)| r).collect();
            let report = ap_sweep(&gts, &results, &cfg)?;
            if a.table {
                print!("{}", report.to_table());
            }
            serde_json::to_string_pretty(&report)
        }
        EvalMode::Grounding => {
            let targets: HashMap<(&str, &str), &Vec<Box3D<f64>>> =
                gts.iter().map(|g| ((g.image_id.as_str(), g.category.as_str()), &g.boxes)).collect();
            let mut queries = Vec::new();
            for (n, r) in &results {
                match targets.get(&(r.image_id.as_str(), r.category.as_str())) {
                    Some(t) => queries.push(GroundingQuery { prediction: r.predictions.first().copied(), targets: (*t).clone() }),
                    None => diag.at("evaluate", &a.predictions, Some(*n), &format!("no ground truth for {} / {}", r.image_id, r.category)),
                }
            }
            let report = grounding_score(&queries, &thresholds)?;
            if a.table {
                for (t, acc) in report.thresholds.iter().zip(&report.accuracy) {
                    println!("Acc@{t:.2} {:>8.2}", 100.0 * acc);
                }
                println!("mean     {:>8.2}", 100.0 * report.ap);
            }
            serde_json::to_string_pretty(&report)
        }
    }
    .expect("report serializes");
    write_file(&a.output, &(json + "\n"))
}

pub fn bev(_ctx: &Context, a: &BevArgs, diag: &mut Diagnostics) -> Result<(), Failure> {
    let mut chosen: Option<String> = a.image.clone();
    let mut lines = Vec::new();
    for l in canonical_lines(&a.input, "bev", diag)? {
        let l = l?;
        let image = chosen.get_or_insert_with(|| l.image_path.clone());
        if &l.image_path == image {
            lines.push(l);
        }
    }
    let image = chosen.ok_or_else(|| Failure::data("empty-input", "no canonical lines in input"))?;
    if lines.is_empty() {
        return Err(Failure::data("not-found", format!("image {image} not in input")));
    }
    let scene = bev::BevScene::from_lines(&image, &lines);
    write_file(&a.output, &(serde_json::to_string_pretty(&scene).expect("scene serializes") + "\n"))?;
    if let Some(svg) = &a.svg {
        write_file(svg, &scene.to_svg())?;
    }
    Ok(())
}
