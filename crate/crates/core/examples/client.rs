//! A length-prefixed TCP client against an in-process server: handshake,
//! a second of 60 Hz hand targets, then the frames and metrics coming back.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::Ordering;
use std::thread;
use std::time::{Duration, Instant};

use kst::runtime::protocol::{kind, parse_envelope, FrameBuffer};
use kst::runtime::synthetic::HandSine;
use kst::runtime::{Envelope, Server, Session, SessionConfig};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SessionConfig::default().normalize()?;
    let session = Session::from_config(config)?;
    let sine = HandSine::new(session.model(), 0.15, 0.5)?;
    let server = Server::bind(session, "127.0.0.1:0")?;
    let addr = server.local_addr()?;
    let stop = server.shutdown_handle();
    let handle = thread::spawn(move || server.run(None));

    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_millis(5)))?;
    let mut seq = 0;
    let mut send = |stream: &mut TcpStream, kind: &str, t: f64, payload: serde_json::Value| {
        seq += 1;
        stream.write_all(&Envelope::new(kind, seq, t, &payload).to_frame())
    };
    send(&mut stream, kind::HELLO, 0.0, json!({"mode": "motion_input", "client": "example"}))?;

    let mut buf = FrameBuffer::default();
    let mut chunk = [0u8; 16384];
    let mut frames = 0;
    let start = Instant::now();
    let mut next_input = 0.0;
    while start.elapsed() < Duration::from_millis(1200) {
        let t = start.elapsed().as_secs_f64();
        if t >= next_input && t < 1.0 {
            send(&mut stream, kind::MOTION_INPUT, t, serde_json::to_value(sine.input_at(t))?)?;
            next_input += 1.0 / 60.0;
        }
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buf.extend(&chunk[..n]),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
        while let Some(text) = buf.next_text() {
            let env = parse_envelope(&text?)?;
            match env.kind.as_str() {
                kind::JOINT_FRAME => {
                    frames += 1;
                    if frames % 15 == 0 {
                        let echo = env.payload["echo_t_send_s"].as_f64();
                        // includes the wait for the next 60 Hz broadcast
                        let age = echo.map(|e| (start.elapsed().as_secs_f64() - e) * 1e3).unwrap_or(f64::NAN);
                        println!("frame tick {:>5}  echoed input age {age:.1} ms", env.payload["tick_index"]);
                    }
                }
                kind::METRICS_SNAPSHOT => println!("metrics: {} ticks, {} inputs accepted", env.payload["ticks"], env.payload["inputs_accepted"]),
                other => println!("{other}: {}", env.payload),
            }
        }
    }
    drop(stream);
    stop.store(true, Ordering::Relaxed);
    let session = handle.join().map_err(|_| "server thread panicked")??;
    println!("{frames} frames received; server saw {} inputs", session.metrics().inputs_received);
    Ok(())
}
