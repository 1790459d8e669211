//! A short tick-time benchmark; `kst bench` runs the full-length one.

use kst::runtime::bench::run_bench;
use kst::runtime::SessionConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ticks = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(5_000);
    let config = SessionConfig::default().normalize()?;
    let model = config.load_model()?;
    let report = run_bench(config, model, ticks)?;
    println!(
        "{} ticks, {} tasks, {} pairs: median {:.3} ms, p99 {:.3} ms, max {:.3} ms",
        report.ticks,
        report.active_tasks,
        report.collision_pairs,
        report.tick.p50 * 1e3,
        report.tick.p99 * 1e3,
        report.tick.max * 1e3
    );
    print!("{}", report.histogram_text());
    Ok(())
}
