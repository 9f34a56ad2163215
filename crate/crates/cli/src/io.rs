use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::Failure;

/// One per-record problem, written as a JSON line.
#[derive(Debug, Clone, Serialize)]
pub struct DiagRecord<'a> {
    pub stage: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    pub message: &'a str,
}

/// Sink for diagnostics: a JSON-lines file or stderr.
pub struct Diagnostics {
    out: Box<dyn Write>,
    count: usize,
}

impl Diagnostics {
    pub fn open(path: Option<&Path>) -> Result<Self, Failure> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_failure(p, e))?)),
            None => Box::new(std::io::stderr()),
        };
        Ok(Self { out, count: 0 })
    }

    pub fn emit(&mut self, rec: &DiagRecord<'_>) {
        self.count += 1;
        let _ = writeln!(self.out, "{}", serde_json::to_string(rec).expect("diagnostic serializes"));
    }

    /// Shorthand for a record with only a stage, file, line and message.
    pub fn at(&mut self, stage: &str, file: &Path, line: Option<usize>, message: &str) {
        let f = file.display().to_string();
        self.emit(&DiagRecord { stage, file: Some(&f), line, offset: None, message });
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn flush(&mut self) -> Result<(), Failure> {
        self.out.flush().map_err(|e| Failure::data("io", format!("diagnostics: {e}")))
    }
}

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::data("io", format!("{}: {e}", path.display()))
}

/// Numbered (1-based) lines of a text file; blank lines are skipped.
pub fn read_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String), Failure>>, Failure> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    let owned = path.to_path_buf();
    Ok(BufReader::new(file).lines().enumerate().filter_map(move |(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        Ok(s) => Some(Ok((i + 1, s))),
        Err(e) => Some(Err(io_failure(&owned, e))),
    }))
}

pub struct LineWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl LineWriter {
    pub fn create(path: &Path) -> Result<Self, Failure> {
        let out = BufWriter::new(File::create(path).map_err(|e| io_failure(path, e))?);
        Ok(Self { out, path: path.to_path_buf() })
    }

    pub fn line(&mut self, s: &str) -> Result<(), Failure> {
        self.out.write_all(s.as_bytes()).and_then(|_| self.out.write_all(b"\n")).map_err(|e| io_failure(&self.path, e))
    }

    pub fn json<T: Serialize>(&mut self, v: &T) -> Result<(), Failure> {
        self.line(&serde_json::to_string(v).expect("record serializes"))
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        self.out.flush().map_err(|e| io_failure(&self.path, e))
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

pub fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_failure(path, e))
}
