//! Acceptance suite: one PASS/FAIL line per criterion, then a single assertion.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use cos3d::codec::{decode_sequence, encode_scene, instance_order, DecodeMode, Layout, RotationFormat, SerializationPolicy};
use cos3d::curation::synthetic::{generate, random_box_pair, random_scene, SyntheticConfig};
use cos3d::curation::{normalize_frame, CurationConfig, DropReason, RawFrame, RawInstance, SourceRef};
use cos3d::eval::{ap_sweep, grounding_score, match_greedy, DetectionResult, EvalConfig, GroundTruth, GroundingQuery, GROUNDING_THRESHOLDS};
use cos3d::geometry::{wrap_angle, Box3D, CameraIntrinsics, Rotation};
use cos3d::iou3d::{iou3d_exact, iou3d_oracle};
use cos3d::linalg::Vec3;
use cos3d::negatives::{cap_total, sample_negatives, ImageCategories, NegativeSpec, ProximityTable};
use cos3d::packing::{pack_stream, select_tiling, Tiling, TilingConfig, DEFAULT_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    ensure(elapsed <= limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn iou_oracle_agreement() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pairs: Vec<(Box3D<f64>, Box3D<f64>)> = (0..1000).map(|_| random_box_pair(&mut rng)).collect();
    let worst = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let exact = iou3d_exact(a, b).unwrap();
            let mc = iou3d_oracle(a, b, 1_000_000, i as u64);
            ((exact - mc).abs(), i)
        })
        .reduce(|| (0.0, 0), |x, y| if y.0 > x.0 { y } else { x });
    ensure(worst.0 < 1e-2, || format!("pair {} differs by {}", worst.1, worst.0))?;
    let unit = Vec3::new(1.0, 1.0, 1.0);
    let a = Box3D::axis_aligned(Vec3::new(0.0, 0.0, 5.0), unit);
    let b = Box3D::axis_aligned(Vec3::new(0.5, 0.0, 5.0), unit);
    let v: f64 = iou3d_exact(&a, &b).unwrap();
    ensure((v - 1.0 / 3.0).abs() < 1e-9, || format!("offset cubes give {v}"))?;
    within(start.elapsed(), Duration::from_secs(120))
}

fn codec_round_trip() -> Outcome {
    let start = Instant::now();
    let linear = 0.005 + 1e-9;
    let angle = PI * 0.01 + 1e-9;
    for scene in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene);
        let n = rng.gen_range(1..=20);
        let full = random_scene(&mut rng, n, false).1;
        let yaw = random_scene(&mut rng, n, true).1;
        for policy in SerializationPolicy::all(scene) {
            let instances = if policy.rotation == RotationFormat::YawOnly { &yaw } else { &full };
            let text = encode_scene(instances, &policy).map_err(|e| e.to_string())?;
            let dec = decode_sequence::<f64>(&text, &policy, DecodeMode::Strict).map_err(|e| format!("{policy}: {e}"))?;
            let order = instance_order(instances, policy.order);
            ensure(dec.sequence.instances.len() == n, || format!("scene {scene} {policy}: count"))?;
            for (d, &i) in dec.sequence.instances.iter().zip(&order) {
                let src = &instances[i];
                if let Some(b) = d.box2d {
                    ensure(b == src.box2d.norm, || format!("scene {scene} {policy}: 2D box"))?;
                }
                for k in 0..3 {
                    ensure((d.box3d.center.0[k] - src.box3d.center.0[k]).abs() <= linear, || format!("scene {scene} {policy}: center"))?;
                    ensure((d.box3d.dims.0[k] - src.box3d.dims.0[k]).abs() <= linear, || format!("scene {scene} {policy}: dims"))?;
                }
                let want = policy.rotation.angles_of(&src.box3d.rotation);
                let got = policy.rotation.angles_from_values(&d.rotation_values);
                for (w, g) in want.iter().zip(&got) {
                    ensure(wrap_angle(w - g).abs() <= angle, || format!("scene {scene} {policy}: angle {w} vs {g}"))?;
                }
            }
            if policy.order == cos3d::codec::InterObjectOrder::NearToFar {
                let z: Vec<f64> = order.iter().map(|&i| instances[i].depth).collect();
                ensure(z.windows(2).all(|w| w[0] <= w[1]), || format!("scene {scene}: near-to-far not monotone"))?;
            }
            if policy.layout == Layout::Interleaved {
                let other = SerializationPolicy { layout: Layout::Clustered, ..policy };
                let text = encode_scene(instances, &other).map_err(|e| e.to_string())?;
                let dec2 = decode_sequence::<f64>(&text, &other, DecodeMode::Strict).map_err(|e| e.to_string())?;
                ensure(dec.sequence == dec2.sequence, || format!("scene {scene} {policy}: layouts disagree"))?;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(60))
}

fn filter_conformance() -> Outcome {
    let cam = CameraIntrinsics::new(720.0, 720.0, 620.0, 190.0, 1242, 375).unwrap();
    let inst = |id: &str, center: [f64; 3], vis: f64, trunc: f64| RawInstance {
        category: "car".into(),
        box3d: Box3D::new(Vec3(center), Vec3::new(1.6, 1.5, 4.0), Rotation::about_up(0.0)),
        box2d_px: None,
        visibility: Some(vis),
        truncation: Some(trunc),
        estimated: false,
        source: SourceRef { dataset: "fixture".into(), instance_id: id.into() },
    };
    let frame = RawFrame {
        image_path: "fixture/0.png".into(),
        intrinsics: cam,
        instances: vec![
            inst("v15", [-4.0, 0.0, 20.0], 0.15, 0.0),
            inst("v16", [-2.0, 0.0, 20.0], 0.16, 0.0),
            inst("v17", [0.0, 0.0, 20.0], 0.17, 0.0),
            inst("t83", [2.0, 0.0, 20.0], 1.0, 0.83),
            inst("t84", [4.0, 0.0, 20.0], 1.0, 0.84),
            inst("t85", [6.0, 0.0, 20.0], 1.0, 0.85),
            inst("behind", [0.0, 0.0, -10.0], 1.0, 0.0),
            inst("outside", [200.0, 0.0, 10.0], 1.0, 0.0),
        ],
    };
    let out = normalize_frame(&frame, &CurationConfig::default());
    let kept: BTreeSet<String> = out.lines.iter().flat_map(|l| &l.instances).map(|r| r.source.instance_id.clone()).collect();
    let want: BTreeSet<String> = ["v17", "t83"].iter().map(|s| s.to_string()).collect();
    ensure(kept == want, || format!("kept {kept:?}"))?;
    let reason = |id: &str| out.drops.iter().find(|d| d.instance_id == id).map(|d| d.reason);
    let expected = [
        ("v15", DropReason::LowVisibility),
        ("v16", DropReason::LowVisibility),
        ("t84", DropReason::HighTruncation),
        ("t85", DropReason::HighTruncation),
        ("behind", DropReason::BehindCamera),
        ("outside", DropReason::FullyOutside),
    ];
    for (id, r) in expected {
        ensure(reason(id) == Some(r), || format!("{id}: {:?}, expected {r:?}", reason(id)))?;
    }
    Ok(())
}

fn negative_caps() -> Outcome {
    let frames: Vec<RawFrame> = generate(&SyntheticConfig { frames: 500, seed: 11, ..Default::default() })
        .into_iter()
        .map(|f| f.into_frame().unwrap())
        .collect();
    let positives: usize = frames.iter().map(|f| normalize_frame(f, &CurationConfig::default()).lines.len()).sum();
    let images: Vec<ImageCategories> = frames
        .iter()
        .map(|f| ImageCategories { image_path: f.image_path.clone(), present: f.instances.iter().map(|i| i.category.clone()).collect() })
        .collect();
    let table = ProximityTable::builtin();
    let vocab: Vec<String> = table.categories().into_iter().collect();
    let spec = NegativeSpec { seed: 5, ..Default::default() };
    let render = || -> String {
        sample_negatives(&images, positives, &vocab, &table, &spec).iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect()
    };
    let out = sample_negatives(&images, positives, &vocab, &table, &spec);
    ensure(render() == render(), || "two runs differ".into())?;
    ensure(!out.is_empty() && out.len() <= cap_total(positives, 0.1), || format!("{} negatives", out.len()))?;
    ensure(out.len() as f64 <= 0.1 * (out.len() + positives) as f64, || "over 10% of examples".into())?;
    for img in &images {
        let mine: Vec<_> = out.iter().filter(|s| s.image_path == img.image_path).collect();
        ensure(mine.len() <= 2, || format!("{}: {} negatives", img.image_path, mine.len()))?;
        ensure(mine.iter().all(|s| !img.present.contains(&s.category)), || format!("{}: names a present category", img.image_path))?;
    }
    Ok(())
}

struct Case {
    gts: Vec<GroundTruth<f64>>,
    preds: Vec<DetectionResult<f64>>,
}

fn yaw_box(rng: &mut ChaCha8Rng) -> Box3D<f64> {
    Box3D::new(
        Vec3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-1.0..1.0), rng.gen_range(5.0..30.0)),
        Vec3::new(rng.gen_range(0.5..3.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..5.0)),
        Rotation::about_up(rng.gen_range(-3.0..3.0)),
    )
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = 20usize;
    let (mut gts, mut preds) = (Vec::new(), Vec::new());
    for i in 0..rng.gen_range(1..=5) {
        let n_gt = rng.gen_range(0..=3).min(budget);
        budget -= n_gt;
        let boxes: Vec<Box3D<f64>> = (0..n_gt).map(|_| yaw_box(&mut rng)).collect();
        let n_pred = rng.gen_range(0..=4).min(budget);
        budget -= n_pred;
        let p = (0..n_pred)
            .map(|_| {
                if !boxes.is_empty() && rng.gen_bool(0.7) {
                    let b = boxes[rng.gen_range(0..boxes.len())];
                    let c = b.center + Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.3..0.3), rng.gen_range(-0.8..0.8));
                    Box3D::new(c, Vec3(b.dims.0.map(|v| v * rng.gen_range(0.7..1.3))), Rotation::about_up(b.rotation.heading_about_up() + rng.gen_range(-0.4..0.4)))
                } else {
                    yaw_box(&mut rng)
                }
            })
            .collect();
        let id = format!("img{i}");
        gts.push(GroundTruth { image_id: id.clone(), dataset: "d".into(), category: "car".into(), boxes });
        preds.push(DetectionResult { image_id: id, category: "car".into(), predictions: p, diagnostics: vec![] });
    }
    Case { gts, preds }
}

/// Best precision at any rank cutoff reaching each recall level i/G, averaged.
fn brute_force_ap(case: &Case, tau: f64) -> Option<f64> {
    let g: usize = case.gts.iter().map(|g| g.boxes.len()).sum();
    if g == 0 {
        return None;
    }
    let flags: Vec<Vec<bool>> = case.gts.iter().zip(&case.preds).map(|(gt, p)| match_greedy(&p.predictions, &gt.boxes, tau).tp).collect();
    let depth = flags.iter().map(Vec::len).max().unwrap_or(0);
    let cutoffs: Vec<(usize, usize)> = (1..=depth)
        .map(|c| (flags.iter().map(|f| f.iter().take(c).filter(|t| **t).count()).sum(), flags.iter().map(|f| f.len().min(c)).sum()))
        .collect();
    let sum: f64 = (1..=g)
        .map(|i| cutoffs.iter().filter(|(tp, all)| *tp >= i && *all > 0).map(|(tp, all)| *tp as f64 / *all as f64).fold(0.0, f64::max))
        .sum();
    Some(sum / g as f64)
}

fn eval_correctness() -> Outcome {
    let cfg = EvalConfig::default();
    for seed in 0..200 {
        let case = random_case(seed);
        let report = ap_sweep(&case.gts, &case.preds, &cfg).map_err(|e| e.to_string())?;
        let got = report.datasets.first().map(|d| d.categories[0].ap_per_threshold.clone());
        for (k, &tau) in cfg.thresholds.iter().enumerate() {
            match (&got, brute_force_ap(&case, tau)) {
                (Some(v), Some(w)) => ensure((v[k] - w).abs() < 1e-12, || format!("seed {seed} tau {tau}: {} vs {w}", v[k]))?,
                (None, None) => {}
                (a, b) => return Err(format!("seed {seed}: {a:?} vs {b:?}")),
            }
        }
    }

    let gt = Box3D::axis_aligned(Vec3::new(0.0, 0.0, 10.0), Vec3::new(2.0, 1.0, 2.0));
    let pred = Box3D::axis_aligned(Vec3::new(0.0, 0.0, 10.0), Vec3::new(1.0, 1.0, 1.0));
    let quarter = ap_sweep(
        &[GroundTruth { image_id: "a".into(), dataset: "d".into(), category: "car".into(), boxes: vec![gt] }],
        &[DetectionResult { image_id: "a".into(), category: "car".into(), predictions: vec![pred], diagnostics: vec![] }],
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let m = quarter.mean_ap.unwrap_or(f64::NAN);
    ensure((m - 0.5).abs() < 1e-9, || format!("IoU-0.25 fixture gives {m}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut gts, mut preds) = (Vec::new(), Vec::new());
    for i in 0..20 {
        for (ds, cat) in [("a", "car"), ("a", "van"), ("b", "chair")] {
            let boxes: Vec<Box3D<f64>> = (0..rng.gen_range(1..4)).map(|_| yaw_box(&mut rng)).collect();
            gts.push(GroundTruth { image_id: format!("{ds}/{i}"), dataset: ds.into(), category: cat.into(), boxes: boxes.clone() });
            preds.push(DetectionResult { image_id: format!("{ds}/{i}"), category: cat.into(), predictions: boxes, diagnostics: vec![] });
        }
    }
    let perfect = ap_sweep(&gts, &preds, &cfg).map_err(|e| e.to_string())?;
    ensure(perfect.mean_ap == Some(1.0), || format!("perfect corpus gives {:?}", perfect.mean_ap))?;
    ensure(
        perfect.datasets.iter().flat_map(|d| &d.categories).flat_map(|c| &c.ap_per_threshold).all(|&v| v == 1.0),
        || "perfect corpus has a cell below 1".into(),
    )?;

    for seed in 1000..1100 {
        let case = random_case(seed);
        let r = ap_sweep(&case.gts, &case.preds, &cfg).map_err(|e| e.to_string())?;
        for c in r.datasets.iter().flat_map(|d| &d.categories) {
            ensure(c.ap_per_threshold.windows(2).all(|w| w[0] >= w[1]), || format!("seed {seed}: {:?}", c.ap_per_threshold))?;
        }
    }
    Ok(())
}

fn grounding_metric() -> Outcome {
    let center = Vec3::new(0.0, 0.0, 10.0);
    let cube = Box3D::axis_aligned(center, Vec3::new(1.0, 1.0, 1.0));
    let long = Box3D::axis_aligned(center, Vec3::new(1.0, 1.0, 6.0));
    let slab = |d: f64| Box3D::axis_aligned(center, Vec3::new(1.0, 1.0, d));
    let two = GroundingQuery { prediction: Some(slab(0.6)), targets: vec![long, cube] };
    let r = grounding_score(&[two], &GROUNDING_THRESHOLDS).map_err(|e| e.to_string())?;
    ensure(r.accuracy == vec![1.0, 1.0, 1.0], || format!("max-IoU fixture: {:?}", r.accuracy))?;
    let low = GroundingQuery { prediction: Some(slab(0.3)), targets: vec![cube] };
    let r = grounding_score(&[low], &GROUNDING_THRESHOLDS).map_err(|e| e.to_string())?;
    ensure(r.accuracy == vec![1.0, 1.0, 0.0], || format!("0.3 fixture: {:?}", r.accuracy))?;
    ensure((r.ap - 2.0 / 3.0).abs() < 1e-12, || format!("0.3 fixture mean {}", r.ap))
}

fn packing_and_tiling() -> Outcome {
    let fixture = pack_stream([("0".to_string(), 6000), ("1".into(), 6000), ("2".into(), 5000)], DEFAULT_BUDGET);
    let ids: Vec<Vec<&str>> = fixture.iter().map(|p| p.members.iter().map(|m| m.id.as_str()).collect()).collect();
    ensure(ids == vec![vec!["0", "1"], vec!["2"]], || format!("fixture packs as {ids:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for round in 0..200 {
        let lens: Vec<usize> = (0..rng.gen_range(1..200)).map(|_| rng.gen_range(1..=DEFAULT_BUDGET)).collect();
        let packs = pack_stream(lens.iter().enumerate().map(|(i, &l)| (i.to_string(), l)), DEFAULT_BUDGET);
        let mut next = 0usize;
        for p in &packs {
            ensure(p.total_tokens <= DEFAULT_BUDGET, || format!("round {round}: pack of {}", p.total_tokens))?;
            let mut at = 0;
            for m in &p.members {
                ensure(m.token_start == at && m.id == next.to_string(), || format!("round {round}: boundaries"))?;
                ensure(m.token_end - m.token_start == lens[next], || format!("round {round}: member length"))?;
                at = m.token_end;
                next += 1;
            }
            ensure(at == p.total_tokens, || format!("round {round}: total"))?;
        }
        ensure(next == lens.len(), || format!("round {round}: lost records"))?;
    }

    let cfg = TilingConfig::default();
    ensure(select_tiling(448, 448, &cfg) == Tiling { cols: 1, rows: 1, thumbnail: false }, || "448x448".into())?;
    ensure(select_tiling(896, 448, &cfg) == Tiling { cols: 2, rows: 1, thumbnail: true }, || "896x448".into())?;
    for _ in 0..10_000 {
        let (w, h) = (rng.gen_range(1..8000), rng.gen_range(1..8000));
        let t = select_tiling(w, h, &cfg);
        ensure((1..=12).contains(&t.tiles()), || format!("{w}x{h}: {} tiles", t.tiles()))?;
    }
    Ok(())
}

fn end_to_end_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let input = common::synthetic_fixture();
    let ra = common::run_pipeline(&input, a.path(), "7");
    let rb = common::run_pipeline(&input, b.path(), "7");
    for ((name, pa), (_, pb)) in ra.files().into_iter().zip(rb.files()) {
        ensure(std::fs::read(pa).unwrap() == std::fs::read(pb).unwrap(), || format!("{name} differs between runs"))?;
        common::check_golden(name, pa)?;
    }
    Ok(())
}

#[test]
fn acceptance() {
    let suite_start = Instant::now();
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 8] = [
        ("1 IoU oracle agreement", iou_oracle_agreement),
        ("2 codec round-trip", codec_round_trip),
        ("3 filter conformance", filter_conformance),
        ("4 negative caps", negative_caps),
        ("5 eval correctness", eval_correctness),
        ("6 grounding metric", grounding_metric),
        ("7 packing and tiling", packing_and_tiling),
        ("8 end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        match check() {
            Ok(()) => println!("PASS: {name} ({:.1?})", start.elapsed()),
            Err(e) => {
                println!("FAIL: {name}: {e}");
                failed.push(name);
            }
        }
    }
    println!("suite time {:.1?}", suite_start.elapsed());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
    assert!(suite_start.elapsed() < Duration::from_secs(600));
}
