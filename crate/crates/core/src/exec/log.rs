//! `.traj.jsonl` trajectory logs: a header line, one line per step and a
//! closing result line (preceded by an abort line when the planner gave up
//! before motion could decide the outcome).

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{EpisodeResult, ExecConfig, Failure, Phase};
use crate::hands::{HandKind, HandState};
use crate::scene::{scene_to_string, Cabinet, Split};

pub const TRAJ_FORMAT: &str = "opend-traj/1";

/// Where an episode's cabinet came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub seed: u64,
    pub split: Split,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    /// `agent`, `grasp` or `teleop`.
    pub mode: String,
    pub dataset: Option<DatasetRef>,
    pub scene_hash: String,
    pub cabinet_id: u64,
    pub instruction: String,
    pub target_part: Option<usize>,
    pub hand: HandKind,
    pub detector: String,
    pub seed: u64,
    pub config: ExecConfig,
    pub start: HandState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub phase: Phase,
    pub cmd: HandState,
    pub hand: HandState,
    pub joints: Vec<f64>,
    pub attached: Option<usize>,
    pub try_attach: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogLine {
    Header(LogHeader),
    Step(StepRecord),
    Abort { t: usize, failure: Failure },
    Result(EpisodeResult),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub abort: Option<Failure>,
    pub result: Option<EpisodeResult>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// SHA-256 (hex) of the closed cabinet's scene file.
pub fn scene_hash(c: &Cabinet) -> String {
    hex(&Sha256::digest(scene_to_string(&c.closed()).as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl TrajectoryLog {
    pub fn new(header: LogHeader) -> Self {
        TrajectoryLog { header, steps: Vec::new(), abort: None, result: None }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |l: &LogLine| {
            out.push_str(&serde_json::to_string(l).expect("log lines serialize"));
            out.push('\n');
        };
        line(&LogLine::Header(self.header.clone()));
        for s in &self.steps {
            line(&LogLine::Step(s.clone()));
        }
        if let Some(failure) = self.abort {
            line(&LogLine::Abort { t: self.steps.last().map_or(0, |s| s.t), failure });
        }
        if let Some(r) = &self.result {
            line(&LogLine::Result(r.clone()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        let mut log: Option<TrajectoryLog> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(raw).map_err(|e| LogError::Corrupt { line, message: e.to_string() })?;
            let corrupt = |m: &str| LogError::Corrupt { line, message: m.to_string() };
            match (parsed, log.as_mut()) {
                (LogLine::Header(h), None) => {
                    if h.format != TRAJ_FORMAT {
                        return Err(corrupt(&format!("format `{}`", h.format)));
                    }
                    log = Some(TrajectoryLog::new(h));
                }
                (LogLine::Header(_), Some(_)) => return Err(corrupt("second header")),
                (_, None) => return Err(corrupt("missing header")),
                (_, Some(l)) if l.result.is_some() => return Err(corrupt("content after result")),
                (LogLine::Step(s), Some(l)) => {
                    if l.abort.is_some() {
                        return Err(corrupt("step after abort"));
                    }
                    let expect = l.steps.last().map_or(1, |p| p.t + 1);
                    if s.t != expect {
                        return Err(corrupt(&format!("step {} out of sequence, expected {expect}", s.t)));
                    }
                    l.steps.push(s);
                }
                (LogLine::Abort { failure, .. }, Some(l)) => l.abort = Some(failure),
                (LogLine::Result(r), Some(l)) => l.result = Some(r),
            }
        }
        let log = log.ok_or(LogError::Corrupt { line: 0, message: "empty log".into() })?;
        if log.result.is_none() {
            return Err(LogError::Corrupt { line: text.lines().count(), message: "missing result line (truncated?)".into() });
        }
        Ok(log)
    }
}

pub fn write_log(path: &Path, log: &TrajectoryLog) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(log.to_jsonl().as_bytes())?;
    f.flush()
}

pub fn read_log(path: &Path) -> Result<TrajectoryLog, LogError> {
    let mut text = String::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    TrajectoryLog::parse(&text)
}
