//! Tick-time benchmark on a synthetic six-task stream.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::model::RobotModel;

use super::config::{InputMode, SessionConfig};
use super::metrics::{Histogram, Summary};
use super::session::{run_recorded, Session, SessionError};
use super::synthetic::HandSine;

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub degrees_of_freedom: usize,
    pub collision_pairs: usize,
    /// Motion tasks in the last tick's QP, contact tasks excluded.
    pub active_tasks: usize,
    pub ticks: u64,
    pub wall_seconds: f64,
    /// Seconds.
    pub tick: Summary,
    pub qp_truncated: u64,
    pub ik_faults: u64,
    #[serde(skip)]
    histogram: Histogram,
}

impl BenchReport {
    /// Text histogram of tick durations in 50 us buckets.
    pub fn histogram_text(&self) -> String {
        let mut out = String::new();
        let width = 50e-6;
        let buckets = ((self.tick.max / width).ceil() as usize).clamp(1, 60);
        let counts: Vec<u64> = (0..buckets)
            .map(|i| self.histogram.count_between(i as f64 * width, (i + 1) as f64 * width))
            .collect();
        let peak = counts.iter().copied().max().unwrap_or(1).max(1);
        for (i, c) in counts.iter().enumerate() {
            let bar = "#".repeat((c * 50 / peak) as usize);
            let _ = writeln!(out, "{:>6.2}-{:<6.2} ms {:>8} {bar}", i as f64 * 0.05, (i + 1) as f64 * 0.05, c);
        }
        out
    }
}

/// Runs `ticks` ticks against 0.5 Hz hand oscillations with pelvis, chest
/// and CoM targets streamed at the configured input rate.
pub fn run_bench(mut config: SessionConfig, model: RobotModel, ticks: u64) -> Result<BenchReport, SessionError> {
    config.mode = InputMode::MotionInput;
    config.record = None;
    let period = config.tick_period();
    let mut sine = HandSine::new(&model, 0.15, 0.5)?;
    sine.input_rate = config.input_rate;
    let messages = sine.recording(ticks as f64 * period, period);
    let mut session = Session::new(config, model)?;
    let started = Instant::now();
    run_recorded(&mut session, &messages, ticks, None, |_, _, _| {})?;
    let wall_seconds = started.elapsed().as_secs_f64();
    let m = session.metrics();
    let active_tasks = session.active_tasks();
    Ok(BenchReport {
        model: session.model().name.clone(),
        degrees_of_freedom: session.model().nv(),
        collision_pairs: session.model().collision_pairs().len(),
        active_tasks,
        ticks,
        wall_seconds,
        tick: m.tick_compute.summary(),
        qp_truncated: m.qp_truncated,
        ik_faults: m.ik_faults,
        histogram: m.tick_compute.clone(),
    })
}
