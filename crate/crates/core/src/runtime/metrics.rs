//! Session counters, timing histograms and per-tick traces.

use std::collections::BTreeMap;
use std::path::Path;

use crate::math::{quat_to_wxyz, Pose};

use serde::{Deserialize, Serialize};

use crate::ik::{TickOutcome, TickStats};
use crate::input::Rule;

/// Fixed-width bins from zero; values past the last bin land in `overflow`
/// and are reported as `max`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    bin_width: f64,
    bins: Vec<u64>,
    overflow: u64,
    count: u64,
    sum: f64,
    max: f64,
}

impl Histogram {
    pub fn new(bin_width: f64, range: f64) -> Self {
        let n = (range / bin_width).ceil() as usize;
        Self {
            bin_width,
            bins: vec![0; n.max(1)],
            overflow: 0,
            count: 0,
            sum: 0.0,
            max: 0.0,
        }
    }

    pub fn record(&mut self, x: f64) {
        let x = x.max(0.0);
        let i = (x / self.bin_width) as usize;
        match self.bins.get_mut(i) {
            Some(b) => *b += 1,
            None => self.overflow += 1,
        }
        self.count += 1;
        self.sum += x;
        self.max = self.max.max(x);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Upper edge of the bin holding the `p`-quantile, capped at the maximum:
    /// at most one bin above the exact value, never below it.
    pub fn quantile(&self, p: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let rank = ((p.clamp(0.0, 1.0) * self.count as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (i, b) in self.bins.iter().enumerate() {
            seen += b;
            if seen >= rank {
                return ((i + 1) as f64 * self.bin_width).min(self.max);
            }
        }
        self.max
    }

    /// Samples whose bin starts in `[lo, hi)`.
    pub fn count_between(&self, lo: f64, hi: f64) -> u64 {
        let mut n: u64 = self
            .bins
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let edge = *i as f64 * self.bin_width;
                edge >= lo && edge < hi
            })
            .map(|(_, b)| *b)
            .sum();
        if self.bins.len() as f64 * self.bin_width < hi {
            n += self.overflow;
        }
        n
    }

    pub fn summary(&self) -> Summary {
        Summary {
            count: self.count,
            mean: self.mean(),
            p50: self.quantile(0.5),
            p99: self.quantile(0.99),
            max: self.max,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: u64,
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub ticks: u64,
    pub session_time: f64,
    /// Wall time spent inside a tick, seconds.
    pub tick_compute: Summary,
    /// Input arrival to first frame reflecting it, seconds.
    pub latency: Summary,
    pub frame_interval: Summary,
    pub inputs_received: u64,
    pub inputs_accepted: u64,
    pub rejections: BTreeMap<Rule, u64>,
    pub mailbox_overwrites: u64,
    pub output_drops: u64,
    pub qp_truncated: u64,
    pub ik_faults: u64,
    pub guard_backtracks: u64,
    pub guard_freezes: u64,
    pub output_clamps: u64,
    pub footsteps_accepted: u64,
    pub footsteps_rejected: u64,
    pub footsteps_completed: u64,
    pub protocol_errors: u64,
    pub deadline_misses: u64,
}

/// One CSV row per tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    pub t: f64,
    pub compute_us: f64,
    pub outcome: TickOutcome,
    pub qp_iterations: usize,
    pub active_constraints: usize,
    pub collision_rows: usize,
    pub backtracks: usize,
    pub latency_ms: Option<f64>,
}

/// Latest accepted input pose of a body next to the pose the emitted frame
/// puts it at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyTraceRow {
    pub tick: u64,
    pub t: f64,
    pub body: String,
    pub input_x: f64,
    pub input_y: f64,
    pub input_z: f64,
    pub input_qw: f64,
    pub input_qx: f64,
    pub input_qy: f64,
    pub input_qz: f64,
    pub desired_x: f64,
    pub desired_y: f64,
    pub desired_z: f64,
    pub desired_qw: f64,
    pub desired_qx: f64,
    pub desired_qy: f64,
    pub desired_qz: f64,
    /// Position error, m.
    pub error: f64,
    /// Rotation angle between the two orientations, rad.
    pub angular_error: f64,
}

impl BodyTraceRow {
    pub fn new(tick: u64, t: f64, body: &str, input: &Pose, desired: &Pose) -> Self {
        let [iw, ix, iy, iz] = quat_to_wxyz(&input.orientation);
        let [dw, dx, dy, dz] = quat_to_wxyz(&desired.orientation);
        Self {
            tick,
            t,
            body: body.to_string(),
            input_x: input.position.x,
            input_y: input.position.y,
            input_z: input.position.z,
            input_qw: iw,
            input_qx: ix,
            input_qy: iy,
            input_qz: iz,
            desired_x: desired.position.x,
            desired_y: desired.position.y,
            desired_z: desired.position.z,
            desired_qw: dw,
            desired_qx: dx,
            desired_qy: dy,
            desired_qz: dz,
            error: (input.position - desired.position).norm(),
            angular_error: input.orientation.angle_to(&desired.orientation),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Trace {
    ticks: Vec<TraceRow>,
    bodies: BTreeMap<String, Vec<BodyTraceRow>>,
}

#[derive(Clone, Debug)]
pub struct Metrics {
    pub tick_compute: Histogram,
    pub latency: Histogram,
    /// Wall interval between consecutive emitted frames, real-time mode only.
    pub frame_interval: Histogram,
    pub ticks: u64,
    pub session_time: f64,
    pub inputs_received: u64,
    pub inputs_accepted: u64,
    pub rejections: BTreeMap<Rule, u64>,
    pub mailbox_overwrites: u64,
    pub output_drops: u64,
    pub qp_truncated: u64,
    pub ik_faults: u64,
    pub guard_backtracks: u64,
    pub guard_freezes: u64,
    pub output_clamps: u64,
    pub footsteps_accepted: u64,
    pub footsteps_rejected: u64,
    pub footsteps_completed: u64,
    pub protocol_errors: u64,
    pub deadline_misses: u64,
    trace: Option<Trace>,
}

impl Default for Metrics {
    fn default() -> Self {
        Self {
            // 1 us bins up to 20 ms
            tick_compute: Histogram::new(1e-6, 0.02),
            // 10 us bins up to 1 s
            latency: Histogram::new(1e-5, 1.0),
            frame_interval: Histogram::new(1e-6, 0.1),
            ticks: 0,
            session_time: 0.0,
            inputs_received: 0,
            inputs_accepted: 0,
            rejections: BTreeMap::new(),
            mailbox_overwrites: 0,
            output_drops: 0,
            qp_truncated: 0,
            ik_faults: 0,
            guard_backtracks: 0,
            guard_freezes: 0,
            output_clamps: 0,
            footsteps_accepted: 0,
            footsteps_rejected: 0,
            footsteps_completed: 0,
            protocol_errors: 0,
            deadline_misses: 0,
            trace: None,
        }
    }
}

impl Metrics {
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Trace::default);
    }

    pub fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub fn tick_trace(&self) -> &[TraceRow] {
        self.trace.as_ref().map_or(&[], |t| &t.ticks[..])
    }

    pub fn body_trace(&self, body: &str) -> &[BodyTraceRow] {
        self.trace
            .as_ref()
            .and_then(|t| t.bodies.get(body))
            .map_or(&[], |v| &v[..])
    }

    pub fn traced_bodies(&self) -> impl Iterator<Item = &str> {
        self.trace.iter().flat_map(|t| t.bodies.keys().map(String::as_str))
    }

    pub fn push_trace(&mut self, row: TraceRow) {
        if let Some(t) = &mut self.trace {
            t.ticks.push(row);
        }
    }

    pub fn push_body_trace(&mut self, row: BodyTraceRow) {
        if let Some(t) = &mut self.trace {
            t.bodies.entry(row.body.clone()).or_default().push(row);
        }
    }

    pub fn record_tick(&mut self, stats: &TickStats, compute: f64, max_backtracks: usize) {
        self.ticks += 1;
        self.tick_compute.record(compute);
        match stats.outcome {
            TickOutcome::Solved => {}
            TickOutcome::Truncated => self.qp_truncated += 1,
            TickOutcome::Frozen => self.ik_faults += 1,
        }
        self.guard_backtracks += stats.backtracks as u64;
        if stats.backtracks > max_backtracks {
            self.guard_freezes += 1;
        }
    }

    pub fn reject(&mut self, rule: Rule) {
        *self.rejections.entry(rule).or_default() += 1;
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            ticks: self.ticks,
            session_time: self.session_time,
            tick_compute: self.tick_compute.summary(),
            latency: self.latency.summary(),
            frame_interval: self.frame_interval.summary(),
            inputs_received: self.inputs_received,
            inputs_accepted: self.inputs_accepted,
            rejections: self.rejections.clone(),
            mailbox_overwrites: self.mailbox_overwrites,
            output_drops: self.output_drops,
            qp_truncated: self.qp_truncated,
            ik_faults: self.ik_faults,
            guard_backtracks: self.guard_backtracks,
            guard_freezes: self.guard_freezes,
            output_clamps: self.output_clamps,
            footsteps_accepted: self.footsteps_accepted,
            footsteps_rejected: self.footsteps_rejected,
            footsteps_completed: self.footsteps_completed,
            protocol_errors: self.protocol_errors,
            deadline_misses: self.deadline_misses,
        }
    }

    /// Writes `summary.csv`, `ticks.csv` and one `<body>.csv` per traced body.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<(), csv::Error> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["metric", "value"])?;
        for (k, v) in summary_rows(&self.snapshot()) {
            w.write_record([k, v])?;
        }
        w.flush()?;
        write_rows(&dir.join("ticks.csv"), self.tick_trace())?;
        for body in self.traced_bodies() {
            write_rows(&dir.join(format!("{body}.csv")), self.body_trace(body))?;
        }
        Ok(())
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Flattens a snapshot to `(dotted.key, value)` pairs.
pub fn summary_rows(s: &MetricsSnapshot) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(s).expect("snapshot serializes"), &mut out);
    out
}
