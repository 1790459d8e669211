//! Ingestion: parses client messages and routes them without touching the
//! tick loop's state. Inputs go to the latest-value mailbox, footstep
//! requests to a bounded queue, handshake requests are answered directly.

use std::sync::Arc;

use crossbeam::channel::{Sender, TrySendError};

use super::config::InputMode;
use super::mailbox::{Mailbox, Stamped};
use super::protocol::{
    decode_frame, kind, parse_envelope, ClientMessage, Envelope, ErrorCode, ErrorPayload, HelloReply, ModelSummary, ProtocolError,
};

/// Shared, immutable handshake data plus the handoff endpoints.
#[derive(Debug)]
pub struct Ingest {
    pub mode: InputMode,
    pub hello: HelloReply,
    /// Pre-serialized; the model never changes during a session.
    pub model_summary: serde_json::Value,
    pub inputs: Arc<Mailbox<Envelope>>,
    pub footsteps: Sender<Stamped<Envelope>>,
}

impl Ingest {
    pub fn new(hello: HelloReply, summary: &ModelSummary, inputs: Arc<Mailbox<Envelope>>, footsteps: Sender<Stamped<Envelope>>) -> Self {
        Self {
            mode: hello.mode,
            model_summary: serde_json::to_value(summary).expect("summary serializes"),
            hello,
            inputs,
            footsteps,
        }
    }

    /// Handles one WebSocket text message or one framed payload's text.
    /// Returns the `(type, payload)` replies for the sender.
    pub fn handle_text(&self, text: &str, arrival: f64) -> Vec<(&'static str, serde_json::Value)> {
        match parse_envelope(text) {
            Ok(env) => self.handle_envelope(env, arrival),
            Err(e) => vec![error_reply(&e, None)],
        }
    }

    /// Handles a complete length-prefixed frame.
    pub fn handle_frame(&self, bytes: &[u8], arrival: f64) -> Vec<(&'static str, serde_json::Value)> {
        match decode_frame(bytes) {
            Ok(env) => self.handle_envelope(env, arrival),
            Err(e) => vec![error_reply(&e, None)],
        }
    }

    pub fn handle_envelope(&self, env: Envelope, arrival: f64) -> Vec<(&'static str, serde_json::Value)> {
        let msg = match ClientMessage::from_envelope(&env) {
            Ok(m) => m,
            Err(e) => return vec![error_reply(&e, Some(env.seq))],
        };
        let stamped = |env: Envelope| Stamped {
            arrival,
            t_send: env.t_send_s,
            seq: env.seq,
            value: env,
        };
        match msg {
            ClientMessage::Hello(h) => {
                if h.mode != self.mode {
                    return vec![mismatch(self.mode, h.mode, env.seq)];
                }
                vec![(kind::HELLO, serde_json::to_value(&self.hello).expect("hello serializes"))]
            }
            ClientMessage::ModelSummaryRequest => vec![(kind::MODEL_SUMMARY, self.model_summary.clone())],
            ClientMessage::MotionInput(_) | ClientMessage::TrackerFrame(_) => {
                let mode = if matches!(msg, ClientMessage::MotionInput(_)) {
                    InputMode::MotionInput
                } else {
                    InputMode::TrackerBundle
                };
                if mode != self.mode {
                    return vec![mismatch(self.mode, mode, env.seq)];
                }
                self.inputs.post(stamped(env));
                Vec::new()
            }
            ClientMessage::FootstepCommand(_) => {
                let seq = env.seq;
                match self.footsteps.try_send(stamped(env)) {
                    Ok(()) => Vec::new(),
                    Err(TrySendError::Full(_)) => vec![(
                        kind::ERROR,
                        payload(ErrorCode::Rejected, "footstep request queue full".into(), Some(seq)),
                    )],
                    Err(TrySendError::Disconnected(_)) => vec![(
                        kind::ERROR,
                        payload(ErrorCode::Rejected, "session is shutting down".into(), Some(seq)),
                    )],
                }
            }
        }
    }
}

fn payload(code: ErrorCode, message: String, seq: Option<u64>) -> serde_json::Value {
    serde_json::to_value(ErrorPayload { code, message, seq }).expect("error payload serializes")
}

pub fn error_reply(e: &ProtocolError, seq: Option<u64>) -> (&'static str, serde_json::Value) {
    (kind::ERROR, payload(e.code(), e.to_string(), seq))
}

fn mismatch(session: InputMode, got: InputMode, seq: u64) -> (&'static str, serde_json::Value) {
    (
        kind::ERROR,
        payload(ErrorCode::ModeMismatch, format!("session consumes {session:?}, client sent {got:?}"), Some(seq)),
    )
}
