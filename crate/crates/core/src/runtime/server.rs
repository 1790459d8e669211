//! Real-time serving: a TCP listener speaking both the length-prefixed
//! protocol and WebSocket (detected by a leading `GET `), one thread per
//! connection, and the tick loop on the caller's thread.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use crossbeam::channel::{bounded, Receiver};
use crossbeam::queue::ArrayQueue;
use tungstenite::{Message, WebSocket};

use super::ingest::{error_reply, Ingest};
use super::mailbox::{Mailbox, Stamped};
use super::protocol::{
    frame_text, kind, BoundingBox, Envelope, FrameBuffer, HelloReply, JointFramePayload, ModelSummary, ProtocolError, PROTOCOL_VERSION,
};
use super::session::{Outbound, Session, SessionClock, SessionError};

const POLL: Duration = Duration::from_millis(2);
const FOOTSTEP_REQUESTS: usize = 16;
const SILENT_CLIENT: Duration = Duration::from_millis(250);

/// Outgoing queue of one client; the oldest message is dropped when full.
#[derive(Debug)]
pub struct ClientOut {
    pub id: u64,
    queue: ArrayQueue<Arc<str>>,
    closed: AtomicBool,
}

/// Connected clients; the tick loop reads the list without locking.
#[derive(Debug, Default)]
pub struct Registry {
    clients: ArcSwap<Vec<Arc<ClientOut>>>,
    drops: AtomicU64,
    next_id: AtomicU64,
    seq: AtomicU64,
}

impl Registry {
    pub fn add(&self, capacity: usize) -> Arc<ClientOut> {
        let c = Arc::new(ClientOut {
            id: self.next_id.fetch_add(1, Ordering::Relaxed),
            queue: ArrayQueue::new(capacity.max(1)),
            closed: AtomicBool::new(false),
        });
        self.clients.rcu(|list| {
            let mut l = (**list).clone();
            l.push(Arc::clone(&c));
            l
        });
        c
    }

    pub fn remove(&self, id: u64) {
        self.clients
            .rcu(|list| list.iter().filter(|c| c.id != id).cloned().collect::<Vec<_>>());
    }

    pub fn len(&self) -> usize {
        self.clients.load().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn next_seq(&self) -> u64 {
        self.seq.fetch_add(1, Ordering::Relaxed)
    }

    /// Queues `text` for every client without blocking.
    pub fn broadcast(&self, text: &str) {
        let clients = self.clients.load();
        if clients.is_empty() {
            return;
        }
        let msg: Arc<str> = Arc::from(text);
        for c in clients.iter() {
            if c.queue.force_push(Arc::clone(&msg)).is_some() {
                self.drops.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn drops(&self) -> u64 {
        self.drops.load(Ordering::Relaxed)
    }
}

enum Transport {
    Raw(TcpStream, FrameBuffer),
    Ws(Box<WebSocket<TcpStream>>),
}

impl Transport {
    fn send(&mut self, text: &str) -> std::io::Result<()> {
        match self {
            Transport::Raw(s, _) => s.write_all(&frame_text(text)),
            Transport::Ws(ws) => ws.send(Message::text(text)).map_err(ws_io),
        }
    }
}

fn ws_io(e: tungstenite::Error) -> std::io::Error {
    match e {
        tungstenite::Error::Io(e) => e,
        other => std::io::Error::new(ErrorKind::Other, other),
    }
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

fn envelope_text(registry: &Registry, clock: &SessionClock, kind: &str, payload: &serde_json::Value) -> String {
    Envelope {
        v: PROTOCOL_VERSION,
        kind: kind.to_string(),
        seq: registry.next_seq(),
        t_send_s: clock.now(0.0),
        payload: payload.clone(),
    }
    .to_json()
}

fn serve_connection(
    stream: TcpStream,
    ingest: Arc<Ingest>,
    registry: Arc<Registry>,
    out: Arc<ClientOut>,
    clock: SessionClock,
    shutdown: Arc<AtomicBool>,
) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut head = [0u8; 4];
    let mut peeked = 0;
    // silent clients are listeners on the raw transport; a WebSocket client
    // sends its upgrade request immediately
    let started = Instant::now();
    let waiting = |peeked: usize| {
        let limit = if peeked == 0 { SILENT_CLIENT } else { Duration::from_secs(5) };
        started.elapsed() < limit
    };
    stream.set_read_timeout(Some(POLL))?;
    while peeked < 4 && waiting(peeked) && !shutdown.load(Ordering::Relaxed) {
        match stream.peek(&mut head) {
            Ok(0) => return Ok(()),
            Ok(n) => peeked = n,
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e),
        }
        if peeked < 4 {
            thread::sleep(POLL);
        }
    }
    let mut transport = if &head == b"GET " {
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        let ws = tungstenite::accept(stream).map_err(|e| std::io::Error::new(ErrorKind::Other, e.to_string()))?;
        ws.get_ref().set_read_timeout(Some(POLL))?;
        Transport::Ws(Box::new(ws))
    } else {
        Transport::Raw(stream, FrameBuffer::default())
    };

    let mut buf = vec![0u8; 64 * 1024];
    while !shutdown.load(Ordering::Relaxed) && !out.closed.load(Ordering::Relaxed) {
        let mut replies = Vec::new();
        match &mut transport {
            Transport::Raw(s, fb) => match s.read(&mut buf) {
                Ok(0) => {
                    if fb.buffered() > 0 {
                        let e = ProtocolError::Truncated {
                            expected: 0,
                            got: fb.buffered(),
                        };
                        let (k, p) = error_reply(&e, None);
                        let _ = transport.send(&envelope_text(&registry, &clock, k, &p));
                    }
                    break;
                }
                Ok(n) => {
                    let arrival = clock.now(0.0);
                    fb.extend(&buf[..n]);
                    while let Some(text) = fb.next_text() {
                        match text {
                            Ok(t) => replies.extend(ingest.handle_text(&t, arrival)),
                            Err(e) => {
                                // cannot resynchronize a length-prefixed stream
                                let (k, p) = error_reply(&e, None);
                                let _ = transport.send(&envelope_text(&registry, &clock, k, &p));
                                return Ok(());
                            }
                        }
                    }
                }
                Err(e) if is_timeout(&e) => {}
                Err(e) => return Err(e),
            },
            Transport::Ws(ws) => match ws.read() {
                Ok(Message::Text(t)) => replies.extend(ingest.handle_text(t.as_str(), clock.now(0.0))),
                Ok(Message::Binary(b)) => replies.extend(ingest.handle_frame(&b, clock.now(0.0))),
                Ok(Message::Close(_)) => break,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
                Err(e) => return Err(ws_io(e)),
            },
        }
        for (k, p) in replies {
            transport.send(&envelope_text(&registry, &clock, k, &p))?;
        }
        while let Some(msg) = out.queue.pop() {
            transport.send(&msg)?;
        }
        if let Transport::Ws(ws) = &mut transport {
            match ws.flush() {
                Ok(()) => {}
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
                Err(e) => return Err(ws_io(e)),
            }
        }
    }
    Ok(())
}

/// A bound server with its session, ready to run.
pub struct Server {
    listener: TcpListener,
    session: Session,
    ingest: Arc<Ingest>,
    registry: Arc<Registry>,
    footsteps: Receiver<Stamped<Envelope>>,
    clock: SessionClock,
    shutdown: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(session: Session, addr: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let clock = SessionClock::wall();
        let session = session.with_clock(clock);
        let cfg = &session.config;
        let hello = HelloReply {
            protocol: PROTOCOL_VERSION,
            mode: cfg.mode,
            model: session.model().name.clone(),
            tick_rate: cfg.tick_rate,
            input_rate: cfg.input_rate,
            broadcast_rate: cfg.network.broadcast_rate,
            bounding_box: BoundingBox::from(&cfg.safety),
        };
        let (tx, rx) = bounded(FOOTSTEP_REQUESTS);
        let ingest = Ingest::new(hello, &ModelSummary::new(session.model()), Arc::new(Mailbox::default()), tx);
        Ok(Self {
            listener,
            session,
            ingest: Arc::new(ingest),
            registry: Arc::new(Registry::default()),
            footsteps: rx,
            clock,
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Setting the flag stops the tick loop and every connection thread.
    pub fn shutdown_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    pub fn registry(&self) -> Arc<Registry> {
        Arc::clone(&self.registry)
    }

    /// Runs until shutdown or `max_ticks`; returns the session for its metrics.
    pub fn run(self, max_ticks: Option<u64>) -> Result<Session, SessionError> {
        let Server {
            listener,
            mut session,
            ingest,
            registry,
            footsteps,
            clock,
            shutdown,
        } = self;
        let acceptor = {
            let (ingest, registry, shutdown) = (Arc::clone(&ingest), Arc::clone(&registry), Arc::clone(&shutdown));
            let capacity = session.config.network.output_queue;
            thread::spawn(move || accept_loop(listener, ingest, registry, clock, shutdown, capacity))
        };
        let result = tick_loop(&mut session, &ingest, &registry, &footsteps, clock, &shutdown, max_ticks);
        shutdown.store(true, Ordering::Relaxed);
        let _ = acceptor.join();
        session.flush_recording()?;
        result.map(|()| session)
    }
}

fn accept_loop(
    listener: TcpListener,
    ingest: Arc<Ingest>,
    registry: Arc<Registry>,
    clock: SessionClock,
    shutdown: Arc<AtomicBool>,
    capacity: usize,
) {
    let mut workers = Vec::new();
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if let Err(e) = stream.set_nonblocking(false) {
                    log::warn!("{peer}: {e}");
                    continue;
                }
                log::info!("client {peer} connected");
                let out = registry.add(capacity);
                let (ingest, registry, shutdown) = (Arc::clone(&ingest), Arc::clone(&registry), Arc::clone(&shutdown));
                workers.push(thread::spawn(move || {
                    let id = out.id;
                    if let Err(e) = serve_connection(stream, ingest, Arc::clone(&registry), Arc::clone(&out), clock, shutdown) {
                        log::info!("client {peer}: {e}");
                    }
                    out.closed.store(true, Ordering::Relaxed);
                    registry.remove(id);
                    log::info!("client {peer} disconnected");
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

fn every(tick_rate: f64, rate: f64) -> u64 {
    ((tick_rate / rate).round() as u64).max(1)
}

fn tick_loop(
    session: &mut Session,
    ingest: &Ingest,
    registry: &Registry,
    footsteps: &Receiver<Stamped<Envelope>>,
    clock: SessionClock,
    shutdown: &AtomicBool,
    max_ticks: Option<u64>,
) -> Result<(), SessionError> {
    let dt = session.config.tick_period();
    let frame_every = every(session.config.tick_rate, session.config.network.broadcast_rate);
    let metrics_every = every(session.config.tick_rate, session.config.network.metrics_rate);
    let (mut next_frame, mut next_metrics) = (0u64, metrics_every);
    let mut last_emit: Option<Instant> = None;
    let mut ran = 0u64;
    while !shutdown.load(Ordering::Relaxed) && max_ticks.map_or(true, |m| ran < m) {
        let due = session.time();
        let now = clock.now(due);
        if now < due {
            thread::sleep(Duration::from_secs_f64(due - now));
        } else if now - due > dt {
            let k_now = (now / dt).floor() as u64;
            let skipped = k_now.saturating_sub(session.tick_index());
            if skipped > 0 {
                log::warn!("tick loop {:.2} ms late, skipping {skipped} ticks", (now - due) * 1e3);
                session.metrics_mut().deadline_misses += skipped;
                session.skip_to(k_now);
            }
        }

        let mut events = Vec::new();
        if let Some(m) = ingest.inputs.take() {
            events.extend(session.deliver(&m.value, m.arrival)?);
        }
        while let Ok(m) = footsteps.try_recv() {
            events.extend(session.deliver(&m.value, m.arrival)?);
        }
        for e in events {
            match e {
                Outbound::FootstepAck(ack) => {
                    let p = serde_json::to_value(&ack).expect("ack serializes");
                    registry.broadcast(&envelope_text(registry, &clock, kind::FOOTSTEP_COMMAND_ACK, &p));
                }
                Outbound::Error(err) => log::warn!("dropped message: {}", err.message),
            }
        }

        let report = session.tick()?;
        ran += 1;
        let emitted = Instant::now();
        let m = session.metrics_mut();
        if let Some(prev) = last_emit {
            m.frame_interval.record((emitted - prev).as_secs_f64());
        }
        last_emit = Some(emitted);
        m.mailbox_overwrites = ingest.inputs.overwrites();
        m.output_drops = registry.drops();

        let k = report.frame.tick_index;
        if k >= next_frame {
            next_frame = k + frame_every;
            let p = serde_json::to_value(JointFramePayload {
                frame: report.frame,
                echo_t_send_s: report.echo_t_send,
            })
            .expect("frames serialize");
            registry.broadcast(&envelope_text(registry, &clock, kind::JOINT_FRAME, &p));
        }
        if k >= next_metrics {
            next_metrics = k + metrics_every;
            let p = serde_json::to_value(session.metrics().snapshot()).expect("snapshot serializes");
            registry.broadcast(&envelope_text(registry, &clock, kind::METRICS_SNAPSHOT, &p));
        }
    }
    Ok(())
}
