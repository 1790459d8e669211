//! Simulated-clock replay of a bundled recording with a metrics summary.

use kst::runtime::{load_recording, run_recorded, Session, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SessionConfig::default().normalize()?;
    let period = config.tick_period();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/recordings/wave_10s.rec");
    let messages = load_recording(path.as_ref(), period)?;
    let ticks = messages.last().map_or(0, |m| m.tick + 500);
    let mut session = Session::new(config, kst::model::RobotModel::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/models/nadia_like.model"))?)?;

    let mut sum_sq = 0.0;
    let mut samples = 0u32;
    run_recorded(&mut session, &messages, ticks, None, |s, report, _| {
        if report.frame.tick_index % 1000 != 0 || report.frame.timestamp < 1.0 {
            return;
        }
        for (body, input, desired) in s.body_poses(&s.ik_state().q).unwrap_or_default() {
            if body == "left_hand" {
                let e = (input.position - desired.position).norm();
                sum_sq += e * e;
                samples += 1;
                println!("t {:5.2} s  left hand error {:.4} m", report.frame.timestamp, e);
            }
        }
    })?;
    println!("sampled RMS {:.4} m", (sum_sq / samples.max(1) as f64).sqrt());
    println!("{}", serde_json::to_string_pretty(&session.metrics().snapshot())?);
    Ok(())
}
