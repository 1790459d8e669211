use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::time::Instant;

use clap::{Parser, Subcommand};
use kst::model::RobotModel;
use kst::qp::QpDocument;
use kst::runtime::bench::run_bench;
use kst::runtime::protocol::{kind, Envelope, JointFramePayload, ModelSummary};
use kst::runtime::{load_recording, run_recorded, Server, Session, SessionConfig};

#[derive(Parser)]
#[command(name = "kst", version, about = "Whole-body kinematics streaming engine")]
struct Cli {
    /// Write the QP assembled at this tick to `kst-qp-<tick>.json`.
    #[arg(long, global = true, value_name = "TICK")]
    dump_qp: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the live session: ingest client messages, tick, broadcast frames.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
        /// Stop after this many ticks.
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Re-run a recording through the pipeline.
    Replay {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Wall-clock pacing factor; 2 runs twice as fast as recorded.
        #[arg(long)]
        speed: Option<f64>,
        /// Do not pace against the wall clock unless `--speed` is given.
        #[arg(long)]
        sim_clock: bool,
        /// Directory for the CSV metrics report.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Write every emitted frame as one JSON envelope per line.
        #[arg(long)]
        frames_out: Option<PathBuf>,
    },
    /// Load a model file and print its summary or the first error.
    CheckModel { file: PathBuf },
    /// Tick-time benchmark with six active tasks.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        ticks: u64,
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

type AnyError = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, listen, ticks } => serve(config.as_deref(), listen, ticks, cli.dump_qp),
        Command::Replay {
            config,
            input,
            speed,
            sim_clock,
            metrics_out,
            frames_out,
        } => replay(ReplayArgs {
            config,
            input,
            speed,
            sim_clock,
            metrics_out,
            frames_out,
            dump_qp: cli.dump_qp,
        }),
        Command::CheckModel { file } => check_model(&file),
        Command::Bench { model, ticks, json } => bench(model.as_deref(), ticks, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<SessionConfig, AnyError> {
    Ok(match path {
        Some(p) => SessionConfig::load(p)?,
        None => SessionConfig::default().normalize()?,
    })
}

fn write_qp(session: &Session, tick: u64) -> Result<(), AnyError> {
    let Some(qp) = session.last_qp() else {
        log::warn!("no QP was captured at tick {tick}");
        return Ok(());
    };
    let path = PathBuf::from(format!("kst-qp-{tick}.json"));
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &QpDocument::from(qp))?;
    log::info!("wrote {} ({} variables, {} rows)", path.display(), qp.n(), qp.m());
    Ok(())
}

fn write_metrics(session: &Session, dir: Option<&Path>) -> Result<(), AnyError> {
    println!("{}", serde_json::to_string_pretty(&session.metrics().snapshot())?);
    if let Some(dir) = dir {
        session.metrics().write_csv_dir(dir)?;
        log::info!("metrics written to {}", dir.display());
    }
    Ok(())
}

fn serve(config: Option<&Path>, listen: Option<String>, ticks: Option<u64>, dump_qp: Option<u64>) -> Result<(), AnyError> {
    let mut config = load_config(config)?;
    if let Some(l) = listen {
        config.network.listen = l;
    }
    if dump_qp.is_some() {
        log::warn!("--dump-qp applies to replay; ignored while serving");
    }
    let metrics_out = config.metrics_out.clone();
    let addr = config.network.listen.clone();
    let mut session = Session::from_config(config)?;
    if metrics_out.is_some() {
        session.metrics_mut().enable_trace();
    }
    let server = Server::bind(session, &addr)?;
    log::info!("listening on {}", server.local_addr()?);
    let stop = server.shutdown_handle();
    ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed))?;
    let session = server.run(ticks)?;
    write_metrics(&session, metrics_out.as_deref())
}

struct ReplayArgs {
    config: Option<PathBuf>,
    input: PathBuf,
    speed: Option<f64>,
    sim_clock: bool,
    metrics_out: Option<PathBuf>,
    frames_out: Option<PathBuf>,
    dump_qp: Option<u64>,
}

fn replay(args: ReplayArgs) -> Result<(), AnyError> {
    let mut config = load_config(args.config.as_deref())?;
    // replaying into a recording would duplicate the input file
    config.record = None;
    let metrics_out = args.metrics_out.or_else(|| config.metrics_out.clone());
    let period = config.tick_period();
    let settle = (config.estimator.decay_duration / period).round() as u64;
    let messages = load_recording(&args.input, period)?;
    let Some(last) = messages.last() else {
        log::info!("{} holds no messages; nothing to replay", args.input.display());
        return Ok(());
    };
    let ticks = last.tick + 1 + settle;
    let pacing = match (args.sim_clock, args.speed) {
        (true, s) => s,
        (false, s) => Some(s.unwrap_or(1.0)),
    };
    let mut session = Session::from_config(config)?;
    if metrics_out.is_some() {
        session.metrics_mut().enable_trace();
    }
    if args.dump_qp.is_some() {
        session.capture_qp(true);
    }
    let mut frames = args.frames_out.as_deref().map(File::create).transpose()?.map(BufWriter::new);
    let mut io_error = None;
    let mut dumped = Ok(());
    let started = Instant::now();
    run_recorded(&mut session, &messages, ticks, pacing, |s, report, _| {
        if args.dump_qp == Some(report.frame.tick_index) {
            dumped = write_qp(s, report.frame.tick_index);
        }
        if let (Some(w), None) = (frames.as_mut(), io_error.as_ref()) {
            let payload = JointFramePayload {
                frame: report.frame.clone(),
                echo_t_send_s: report.echo_t_send,
            };
            let env = Envelope::new(kind::JOINT_FRAME, report.frame.tick_index, report.frame.timestamp, &payload);
            if let Err(e) = writeln!(w, "{}", env.to_json()) {
                io_error = Some(e);
            }
        }
    })?;
    dumped?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    if let Some(mut w) = frames {
        w.flush()?;
    }
    log::info!(
        "replayed {} messages over {ticks} ticks in {:.3} s",
        messages.len(),
        started.elapsed().as_secs_f64()
    );
    write_metrics(&session, metrics_out.as_deref())
}

fn check_model(file: &Path) -> Result<(), AnyError> {
    let model = RobotModel::load(file)?;
    let summary = ModelSummary::new(&model);
    println!(
        "{}: {} links, {} joints ({} DoF), {} frames, {} collision shapes, {} collision pairs, mass {:.3} kg",
        model.name,
        model.links().len(),
        model.num_joints(),
        model.nv(),
        model.frames().len(),
        model.shapes().len(),
        model.collision_pairs().len(),
        model.total_mass(),
    );
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn bench(model: Option<&Path>, ticks: u64, json: bool) -> Result<(), AnyError> {
    let config = SessionConfig {
        model: model.map(Path::to_path_buf),
        ..SessionConfig::default()
    }
    .normalize()?;
    let model = config.load_model()?;
    let report = run_bench(config, model, ticks)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!(
        "{}: {} DoF, {} collision pairs, {} active tasks",
        report.model, report.degrees_of_freedom, report.collision_pairs, report.active_tasks
    );
    println!(
        "{} ticks in {:.2} s; median {:.3} ms, p99 {:.3} ms, mean {:.3} ms, max {:.3} ms",
        report.ticks,
        report.wall_seconds,
        report.tick.p50 * 1e3,
        report.tick.p99 * 1e3,
        report.tick.mean * 1e3,
        report.tick.max * 1e3
    );
    println!("qp truncations {}, ik faults {}", report.qp_truncated, report.ik_faults);
    print!("{}", report.histogram_text());
    Ok(())
}
