#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cos3d::curation::synthetic::{generate, write_jsonl, SyntheticConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

/// The synthetic input fixture, regenerated only under `UPDATE_GOLDEN`.
pub fn synthetic_fixture() -> PathBuf {
    let path = fixtures().join("synthetic.jsonl");
    if updating() {
        write_jsonl(&generate(&SyntheticConfig { seed: 7, frames: 60, max_instances: 6 }), &path, None).unwrap();
    }
    path
}

pub fn cos3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cos3d")).args(args).env_remove("COS3D_SEED").output().expect("binary runs")
}

pub fn cos3d_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cos3d"));
    c.args(args).env_remove("COS3D_SEED");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

pub fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr:\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Output files of one `normalize → negatives → package → pack` run.
pub struct PipelineRun {
    pub canonical: PathBuf,
    pub drops: PathBuf,
    pub negatives: PathBuf,
    pub conversations: PathBuf,
    pub packs: PathBuf,
}

impl PipelineRun {
    pub fn files(&self) -> [(&'static str, &Path); 5] {
        [
            ("canonical.jsonl", &self.canonical),
            ("drops.jsonl", &self.drops),
            ("negatives.jsonl", &self.negatives),
            ("conversations.jsonl", &self.conversations),
            ("packs.jsonl", &self.packs),
        ]
    }
}

pub fn run_pipeline(input: &Path, dir: &Path, seed: &str) -> PipelineRun {
    let r = PipelineRun {
        canonical: dir.join("canonical.jsonl"),
        drops: dir.join("drops.jsonl"),
        negatives: dir.join("negatives.jsonl"),
        conversations: dir.join("conversations.jsonl"),
        packs: dir.join("packs.jsonl"),
    };
    ok(&cos3d(&["normalize", "--adapter", "synthetic", "--input", s(input), "--output", s(&r.canonical), "--drops", s(&r.drops)]));
    ok(&cos3d(&["negatives", "--input", s(&r.canonical), "--drops", s(&r.drops), "--output", s(&r.negatives), "--seed", seed]));
    ok(&cos3d(&[
        "package",
        "--input",
        s(&r.canonical),
        "--negatives",
        s(&r.negatives),
        "--output",
        s(&r.conversations),
        "--grounding",
        "both",
        "--seed",
        seed,
    ]));
    ok(&cos3d(&["pack", "--input", s(&r.conversations), "--canonical", s(&r.canonical), "--output", s(&r.packs), "--budget", "4096"]));
    r
}

/// Compares `actual` with the frozen golden file, or rewrites it under `UPDATE_GOLDEN`.
pub fn check_golden(name: &str, actual: &Path) -> Result<(), String> {
    let golden = fixtures().join("golden").join(name);
    let got = std::fs::read(actual).map_err(|e| e.to_string())?;
    if updating() {
        std::fs::write(&golden, &got).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let want = std::fs::read(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    if got == want {
        Ok(())
    } else {
        Err(format!("{name} differs from golden ({} vs {} bytes)", got.len(), want.len()))
    }
}
