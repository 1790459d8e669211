//! Regenerates the bundled recordings and the reference configuration.
//!
//! ```text
//! cargo run --example make_recordings -- [output-dir]
//! ```

use std::fs;
use std::path::PathBuf;

use kst::model::bundled;
use kst::runtime::record::format_line;
use kst::runtime::synthetic::{adversarial_recording, HandSine, Walk};
use kst::runtime::{RecordedMessage, SessionConfig};

fn write(path: PathBuf, messages: &[RecordedMessage]) -> std::io::Result<()> {
    let text: String = messages.iter().map(|m| format_line(m) + "\n").collect();
    fs::write(&path, text)?;
    println!("{} ({} messages)", path.display(), messages.len());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data"));
    let recordings = root.join("recordings");
    fs::create_dir_all(&recordings)?;
    fs::create_dir_all(root.join("config"))?;

    let model = bundled::nadia_like();
    let period = SessionConfig::default().tick_period();
    write(recordings.join("wave_10s.rec"), &HandSine::new(&model, 0.15, 0.5)?.recording(10.0, period))?;
    write(recordings.join("walk_tracker.rec"), &Walk::default().recording(9.0, 60.0, period))?;
    if std::env::var_os("KST_ADVERSARIAL").is_some() {
        // 2 MB; the tests build it in memory, so it is not bundled
        let adversarial: Vec<_> = adversarial_recording(&model, 60.0, 7, period)?
            .into_iter()
            .map(|(m, _)| m)
            .collect();
        write(recordings.join("adversarial_60s.rec"), &adversarial)?;
    }

    let defaults = toml::to_string_pretty(&SessionConfig::default())?;
    let path = root.join("config").join("defaults.toml");
    fs::write(&path, format!("# Every field at its default value.\n\n{defaults}"))?;
    println!("{}", path.display());
    Ok(())
}
