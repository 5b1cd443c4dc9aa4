//! CSV outputs. Every file starts with a schema line naming its layout and
//! version, followed by a header row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const EPISODE_SCHEMA: &str = "# schema: peginsert-episodes v1";
pub const EVAL_SCHEMA: &str = "# schema: peginsert-eval v1";
pub const TRACE_SCHEMA: &str = "# schema: peginsert-trace v1";
pub const REPORT_SCHEMA: &str = "# schema: peginsert-report v1";

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    /// Environment steps taken when the episode ended.
    pub step: u64,
    pub episode: u64,
    pub episode_return: f64,
    pub length: usize,
    pub success: u8,
    pub status: String,
    pub peak_force: f64,
    /// Losses of the most recent update (empty before learning starts).
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub alpha: f64,
    pub entropy: Option<f64>,
}

/// One deterministic evaluation during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_steps: f64,
    /// Mean episode duration in seconds at the nominal policy rate.
    pub mean_time_s: f64,
    pub mean_peak_force: f64,
}

/// Per-policy-step trace of one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// Peg tip relative to the true goal, world frame (m).
    pub relative_position: [f64; 3],
    pub wrench: [f64; 6],
    pub action: Vec<f64>,
    pub reward: f64,
    pub status: String,
}

pub fn trace_header(action_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "rel_x", "rel_y", "rel_z", "fx", "fy", "fz", "mx", "my", "mz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..action_dim).map(|i| format!("a{i}")));
    h.push("reward".into());
    h.push("status".into());
    h
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(HarnessError::io(path))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Parse { path: path.to_path_buf(), row: 0, column: String::new(), message: e.to_string() }
}

pub fn write_trace(path: &Path, rows: &[TraceRow], action_dim: usize) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "{TRACE_SCHEMA}").map_err(HarnessError::io(path))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(trace_header(action_dim)).map_err(csv_err(path))?;
    for r in rows {
        let mut rec: Vec<String> = vec![r.t.to_string()];
        rec.extend(r.relative_position.iter().chain(&r.wrench).chain(&r.action).map(|v| v.to_string()));
        rec.push(r.reward.to_string());
        rec.push(r.status.clone());
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(HarnessError::io(path))
}

/// Split off and check the schema line; returns the remaining text and the
/// number of the first remaining line.
fn body<'a>(path: &Path, text: &'a str, schema: &str) -> Result<&'a str> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim_end() != schema {
        return Err(HarnessError::Parse {
            path: path.to_path_buf(),
            row: 1,
            column: String::new(),
            message: format!("expected schema line {schema:?}, found {:?}", first.trim_end()),
        });
    }
    Ok(rest)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    let rest = body(path, &text, TRACE_SCHEMA)?;
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    let action_dim = header.len().checked_sub(12).unwrap_or(0);
    if header != trace_header(action_dim) {
        return Err(HarnessError::Parse {
            path: path.to_path_buf(),
            row: 2,
            column: String::new(),
            message: "unexpected trace header".into(),
        });
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 3;
        let rec = rec.map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c).unwrap_or("").parse::<f64>().map_err(|e| HarnessError::Parse {
                path: path.to_path_buf(),
                row,
                column: header[c].clone(),
                message: e.to_string(),
            })
        };
        let t = num(0)?;
        if t < 0.0 || t.fract() != 0.0 {
            return Err(HarnessError::Parse {
                path: path.to_path_buf(),
                row,
                column: "t".into(),
                message: format!("{t} is not a step index"),
            });
        }
        let mut v = Vec::with_capacity(header.len());
        for c in 1..header.len() - 1 {
            v.push(num(c)?);
        }
        rows.push(TraceRow {
            t: t as usize,
            relative_position: [v[0], v[1], v[2]],
            wrench: [v[3], v[4], v[5], v[6], v[7], v[8]],
            action: v[9..9 + action_dim].to_vec(),
            reward: v[9 + action_dim],
            status: rec.get(header.len() - 1).unwrap_or("").to_string(),
        });
    }
    Ok(rows)
}

/// Append-only CSV of serializable rows.
pub struct CsvLog<T> {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    rows: usize,
    _row: std::marker::PhantomData<T>,
}

impl<T: Serialize + DeserializeOwned> CsvLog<T> {
    /// Start a new file (schema line and header).
    pub fn create(path: &Path, schema: &str, header: &[&str]) -> Result<Self> {
        let mut f = create(path)?;
        writeln!(f, "{schema}").map_err(HarnessError::io(path))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(f);
        writer.write_record(header).map_err(csv_err(path))?;
        writer.flush().map_err(HarnessError::io(path))?;
        Ok(Self { path: path.to_path_buf(), writer, rows: 0, _row: Default::default() })
    }

    /// Reopen an existing file keeping its first `keep` rows.
    pub fn resume(path: &Path, schema: &str, header: &[&str], keep: usize) -> Result<Self> {
        let rows: Vec<T> = read_rows(path, schema)?;
        if rows.len() < keep {
            return Err(HarnessError::Config(format!(
                "{} holds {} rows, the checkpoint expects {keep}",
                path.display(),
                rows.len()
            )));
        }
        let mut log = Self::create(path, schema, header)?;
        for r in &rows[..keep] {
            log.append(r)?;
        }
        Ok(log)
    }

    pub fn append(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row).map_err(csv_err(&self.path))?;
        self.writer.flush().map_err(HarnessError::io(&self.path))?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Read rows after checking the schema line. Errors name the row (1-based
/// line number in the file) and the column.
pub fn read_rows<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    let rest = body(path, &text, schema)?;
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    let mut out = Vec::new();
    for (k, rec) in r.deserialize::<T>().enumerate() {
        out.push(rec.map_err(|e| {
            let column = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => {
                    err.field().and_then(|f| header.get(f as usize).cloned()).unwrap_or_default()
                }
                _ => String::new(),
            };
            HarnessError::Parse { path: path.to_path_buf(), row: k + 3, column, message: e.to_string() }
        })?);
    }
    Ok(out)
}

pub const EPISODE_HEADER: &[&str] = &[
    "step",
    "episode",
    "episode_return",
    "length",
    "success",
    "status",
    "peak_force",
    "critic_loss",
    "actor_loss",
    "alpha_loss",
    "alpha",
    "entropy",
];

pub const EVAL_HEADER: &[&str] =
    &["step", "episodes", "success_rate", "mean_return", "mean_steps", "mean_time_s", "mean_peak_force"];

/// Read a whole text file line by line (used to compare outputs).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(HarnessError::io(path))?;
    BufReader::new(f).lines().collect::<std::io::Result<_>>().map_err(HarnessError::io(path))
}
