//! Session recordings: one consumed client message per line,
//! `<arrival_s> <tick> <envelope json>`.
//!
//! `tick` is the tick that consumed the message; replaying against it
//! reproduces the session bit for bit. A line with only `<arrival_s> <json>`
//! is consumed by the first tick at or after its arrival.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::protocol::{parse_envelope, Envelope, ProtocolError};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Envelope {
        line: usize,
        #[source]
        source: ProtocolError,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordedMessage {
    pub arrival: f64,
    pub tick: u64,
    pub envelope: Envelope,
}

/// First tick whose time `tick * period` is at or after `arrival`.
pub fn tick_for_arrival(arrival: f64, period: f64) -> u64 {
    let k = (arrival / period - 1e-9).ceil();
    if k <= 0.0 {
        0
    } else {
        k as u64
    }
}

/// Parses a recording; messages come back ordered by consuming tick.
pub fn parse_recording(text: &str, tick_period: f64) -> Result<Vec<RecordedMessage>, RecordError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let syntax = |message: &str| RecordError::Syntax {
            line,
            message: message.to_string(),
        };
        let (arrival, rest) = s.split_once(char::is_whitespace).ok_or_else(|| syntax("expected `<arrival> [tick] <json>`"))?;
        let arrival: f64 = arrival.parse().map_err(|_| syntax("arrival is not a number"))?;
        if !arrival.is_finite() || arrival < 0.0 {
            return Err(syntax("arrival must be finite and non-negative"));
        }
        let rest = rest.trim_start();
        let (tick, json) = if rest.starts_with('{') {
            (tick_for_arrival(arrival, tick_period), rest)
        } else {
            let (t, json) = rest.split_once(char::is_whitespace).ok_or_else(|| syntax("missing envelope"))?;
            (t.parse().map_err(|_| syntax("tick is not an integer"))?, json.trim_start())
        };
        let envelope = parse_envelope(json).map_err(|source| RecordError::Envelope { line, source })?;
        out.push(RecordedMessage { arrival, tick, envelope });
    }
    // stable: same-tick messages keep file order
    out.sort_by_key(|m| m.tick);
    Ok(out)
}

pub fn load_recording(path: &Path, tick_period: f64) -> Result<Vec<RecordedMessage>, RecordError> {
    let text = std::fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_recording(&text, tick_period)
}

pub fn format_line(m: &RecordedMessage) -> String {
    // `{:?}` on f64 round-trips exactly
    format!("{:?} {} {}", m.arrival, m.tick, m.envelope.to_json())
}

#[derive(Debug)]
pub struct Recorder {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Recorder {
    pub fn create(path: &Path) -> Result<Self, RecordError> {
        let file = File::create(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, m: &RecordedMessage) -> Result<(), RecordError> {
        writeln!(self.out, "{}", format_line(m)).map_err(|source| RecordError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn flush(&mut self) -> Result<(), RecordError> {
        self.out.flush().map_err(|source| RecordError::Io {
            path: self.path.clone(),
            source,
        })
    }
}
