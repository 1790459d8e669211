//! Wire protocol, version 1.
//!
//! Each message is a UTF-8 JSON envelope `{v, type, seq, t_send_s, payload}`.
//! On a raw socket every envelope is preceded by its byte length as a 4-byte
//! big-endian integer; over WebSocket one text message carries one envelope.
//! Unknown fields are ignored.

use std::collections::BTreeMap;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::input::{MotionInput, SafetyLimits};
use crate::math::{Pose, Vec3};
use crate::model::{JointConfiguration, RobotModel};
use crate::post::JointSetpointFrame;
use crate::retarget::footstep::Side;
use crate::retarget::TrackerBundle;

use super::config::InputMode;

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted envelope, bytes.
pub const MAX_MESSAGE_BYTES: usize = 1 << 20;
const PREFIX: usize = 4;

pub mod kind {
    pub const HELLO: &str = "hello";
    pub const TRACKER_FRAME: &str = "tracker_frame";
    pub const MOTION_INPUT: &str = "motion_input";
    pub const FOOTSTEP_COMMAND: &str = "footstep_command";
    pub const FOOTSTEP_COMMAND_ACK: &str = "footstep_command_ack";
    pub const JOINT_FRAME: &str = "joint_frame";
    pub const METRICS_SNAPSHOT: &str = "metrics_snapshot";
    pub const MODEL_SUMMARY: &str = "model_summary";
    pub const ERROR: &str = "error";
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("truncated frame: header announces {expected} bytes, {got} present")]
    Truncated { expected: usize, got: usize },
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("payload is not UTF-8")]
    Utf8,
    #[error("malformed JSON at `{path}`: {message}")]
    Json { path: String, message: String },
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Truncated { .. } | ProtocolError::TooLarge(_) | ProtocolError::Utf8 => ErrorCode::Framing,
            ProtocolError::Json { .. } => ErrorCode::Malformed,
            ProtocolError::Version(_) => ErrorCode::Version,
            ProtocolError::UnknownType(_) => ErrorCode::UnknownType,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub t_send_s: f64,
    #[serde(default)]
    pub payload: serde_json::Value,
}

impl Envelope {
    pub fn new(kind: &str, seq: u64, t_send_s: f64, payload: &impl Serialize) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: kind.to_string(),
            seq,
            t_send_s,
            payload: serde_json::to_value(payload).expect("protocol payloads serialize"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelopes serialize")
    }

    /// Length-prefixed bytes for a raw socket.
    pub fn to_frame(&self) -> Vec<u8> {
        frame_text(&self.to_json())
    }
}

fn json_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> ProtocolError {
    ProtocolError::Json {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    }
}

fn from_value<T: DeserializeOwned>(v: serde_json::Value) -> Result<T, ProtocolError> {
    serde_path_to_error::deserialize(v).map_err(json_error)
}

pub fn frame_text(text: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREFIX + text.len());
    out.extend_from_slice(&(text.len() as u32).to_be_bytes());
    out.extend_from_slice(text.as_bytes());
    out
}

/// Parses an envelope from its JSON text.
pub fn parse_envelope(text: &str) -> Result<Envelope, ProtocolError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let env: Envelope = serde_path_to_error::deserialize(de).map_err(json_error)?;
    if env.v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version(env.v));
    }
    Ok(env)
}

/// Parses one complete length-prefixed frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
    if bytes.len() < PREFIX {
        return Err(ProtocolError::Truncated {
            expected: PREFIX,
            got: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..PREFIX].try_into().expect("4 bytes")) as usize;
    if len > MAX_MESSAGE_BYTES {
        return Err(ProtocolError::TooLarge(len));
    }
    let body = &bytes[PREFIX..];
    if body.len() < len {
        return Err(ProtocolError::Truncated { expected: len, got: body.len() });
    }
    let text = std::str::from_utf8(&body[..len]).map_err(|_| ProtocolError::Utf8)?;
    parse_envelope(text)
}

/// Reassembles length-prefixed frames from a byte stream.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame's text. An oversized header is an error and the
    /// stream cannot be resynchronized after it.
    pub fn next_text(&mut self) -> Option<Result<String, ProtocolError>> {
        if self.buf.len() < PREFIX {
            return None;
        }
        let len = u32::from_be_bytes(self.buf[..PREFIX].try_into().expect("4 bytes")) as usize;
        if len > MAX_MESSAGE_BYTES {
            return Some(Err(ProtocolError::TooLarge(len)));
        }
        if self.buf.len() < PREFIX + len {
            return None;
        }
        let body: Vec<u8> = self.buf.drain(..PREFIX + len).skip(PREFIX).collect();
        Some(String::from_utf8(body).map_err(|_| ProtocolError::Utf8))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub mode: InputMode,
    #[serde(default)]
    pub client: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelloReply {
    pub protocol: u32,
    pub mode: InputMode,
    pub model: String,
    pub tick_rate: f64,
    pub input_rate: f64,
    pub broadcast_rate: f64,
    /// Allowed target region in the mid-feet frame.
    pub bounding_box: BoundingBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl From<&SafetyLimits> for BoundingBox {
    fn from(l: &SafetyLimits) -> Self {
        Self {
            min: l.box_min,
            max: l.box_max,
        }
    }
}

/// Step request relative to the current pose of the stepping foot, in its yaw frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootstepRequest {
    pub side: Side,
    #[serde(default)]
    pub dx: f64,
    #[serde(default)]
    pub dy: f64,
    #[serde(default)]
    pub dyaw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckSource {
    Retargeting,
    Client,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootstepAck {
    pub side: Side,
    pub pose: Pose,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub source: AckSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointFramePayload {
    #[serde(flatten)]
    pub frame: JointSetpointFrame,
    /// `t_send_s` of the newest input reflected in this frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub echo_t_send_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Framing,
    Malformed,
    Version,
    UnknownType,
    ModeMismatch,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSummary {
    pub name: String,
    pub parent_link: String,
    pub child_link: String,
    pub axis: Vec3,
    pub origin: Pose,
    pub limits: [f64; 2],
    pub velocity_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub link: String,
    pub offset: Pose,
}

/// Everything a client needs to run forward kinematics on `joint_frame.q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub root_link: String,
    /// In the order of `joint_frame.q`.
    pub joints: Vec<JointSummary>,
    pub frames: BTreeMap<String, FrameSummary>,
    pub foot_polygons: BTreeMap<String, Vec<[f64; 2]>>,
    pub initial_configuration: JointConfiguration,
}

impl ModelSummary {
    pub fn new(model: &RobotModel) -> Self {
        let links = model.links();
        let joints = model
            .joints()
            .iter()
            .map(|j| JointSummary {
                name: j.name.clone(),
                parent_link: links[j.parent_link].name.clone(),
                child_link: links[j.child_link].name.clone(),
                axis: j.axis,
                origin: j.origin,
                limits: [j.q_min, j.q_max],
                velocity_limit: j.velocity_limit,
            })
            .collect();
        let frames = model
            .frames()
            .iter()
            .map(|f| {
                (
                    f.name.clone(),
                    FrameSummary {
                        link: links[f.link].name.clone(),
                        offset: f.offset,
                    },
                )
            })
            .collect();
        let foot_polygons = ["left_foot", "right_foot"]
            .into_iter()
            .filter_map(|n| model.foot_polygon(n).map(|p| (n.to_string(), p.to_vec())))
            .collect();
        Self {
            name: model.name.clone(),
            root_link: links[0].name.clone(),
            joints,
            frames,
            foot_polygons,
            initial_configuration: model.initial_configuration(),
        }
    }
}

/// Messages a client may send.
#[derive(Clone, Debug, PartialEq)]
pub enum ClientMessage {
    Hello(Hello),
    TrackerFrame(TrackerBundle),
    MotionInput(MotionInput),
    FootstepCommand(FootstepRequest),
    ModelSummaryRequest,
}

impl ClientMessage {
    pub fn from_envelope(env: &Envelope) -> Result<Self, ProtocolError> {
        let p = env.payload.clone();
        Ok(match env.kind.as_str() {
            kind::HELLO => ClientMessage::Hello(from_value(p)?),
            kind::TRACKER_FRAME => ClientMessage::TrackerFrame(from_value(p)?),
            kind::MOTION_INPUT => ClientMessage::MotionInput(from_value(p)?),
            kind::FOOTSTEP_COMMAND => ClientMessage::FootstepCommand(from_value(p)?),
            kind::MODEL_SUMMARY => ClientMessage::ModelSummaryRequest,
            other => return Err(ProtocolError::UnknownType(other.to_string())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input::TargetSpec;
    use crate::model::bundled;

    fn motion_envelope() -> Envelope {
        let mut input = MotionInput {
            timestamp: 1.25,
            ..Default::default()
        };
        input
            .targets
            .insert("left_hand".into(), TargetSpec::full(Pose::from_position(Vec3::new(0.3, 0.2, 1.0))));
        Envelope::new(kind::MOTION_INPUT, 7, 1.25, &input)
    }

    #[test]
    fn frame_roundtrip() {
        let env = motion_envelope();
        let bytes = env.to_frame();
        assert_eq!(&bytes[..4], &(bytes.len() as u32 - 4).to_be_bytes());
        let back = decode_frame(&bytes).unwrap();
        assert_eq!(back, env);
        match ClientMessage::from_envelope(&back).unwrap() {
            ClientMessage::MotionInput(m) => assert_eq!(m.targets["left_hand"].pose.position, Vec3::new(0.3, 0.2, 1.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let bytes = motion_envelope().to_frame();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_frame(cut), Err(ProtocolError::Truncated { .. })));
        assert!(matches!(decode_frame(&bytes[..2]), Err(ProtocolError::Truncated { .. })));
    }

    #[test]
    fn wire_text_is_wxyz_and_ignores_unknown_fields() {
        let text = r#"{"v":1,"type":"motion_input","seq":3,"t_send_s":0.5,"extra":true,
            "payload":{"timestamp":0.5,"future_field":1,
              "targets":{"right_hand":{"pose":{"position":[0.3,-0.2,1.0],"orientation":[0,0,0,1]}}}}}"#;
        let env = parse_envelope(text).unwrap();
        let ClientMessage::MotionInput(m) = ClientMessage::from_envelope(&env).unwrap() else {
            panic!()
        };
        let t = m.targets["right_hand"];
        assert!(t.linear && t.angular);
        // [w, x, y, z] = [0, 0, 0, 1]: half-turn about z
        assert!((t.pose.orientation.angle() - std::f64::consts::PI).abs() < 1e-12);
        assert!((t.pose.orientation.axis().unwrap().z.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn version_and_type_errors() {
        assert_eq!(
            parse_envelope(r#"{"v":2,"type":"hello","payload":{}}"#),
            Err(ProtocolError::Version(2))
        );
        let env = parse_envelope(r#"{"v":1,"type":"teleport","payload":{}}"#).unwrap();
        assert_eq!(
            ClientMessage::from_envelope(&env),
            Err(ProtocolError::UnknownType("teleport".into()))
        );
        let env = parse_envelope(r#"{"v":1,"type":"motion_input","payload":{"timestamp":"soon"}}"#).unwrap();
        match ClientMessage::from_envelope(&env) {
            Err(ProtocolError::Json { path, .. }) => assert_eq!(path, "timestamp"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_envelope("{nope"), Err(ProtocolError::Json { .. })));
    }

    #[test]
    fn frame_buffer_reassembles_split_stream() {
        let a = motion_envelope().to_frame();
        let b = Envelope::new(kind::MODEL_SUMMARY, 8, 0.0, &serde_json::json!({})).to_frame();
        let stream: Vec<u8> = a.iter().chain(b.iter()).copied().collect();
        let mut fb = FrameBuffer::default();
        let mut got = Vec::new();
        for chunk in stream.chunks(5) {
            fb.extend(chunk);
            while let Some(t) = fb.next_text() {
                got.push(parse_envelope(&t.unwrap()).unwrap());
            }
        }
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].kind, kind::MODEL_SUMMARY);
        assert_eq!(fb.buffered(), 0);
    }

    #[test]
    fn oversized_header_rejected() {
        let mut fb = FrameBuffer::default();
        fb.extend(&(u32::MAX).to_be_bytes());
        assert!(matches!(fb.next_text(), Some(Err(ProtocolError::TooLarge(_)))));
    }

    #[test]
    fn model_summary_covers_every_joint() {
        let m = bundled::nadia_like();
        let s = ModelSummary::new(&m);
        assert_eq!(s.joints.len(), m.num_joints());
        assert_eq!(s.root_link, "pelvis");
        assert!(s.frames.contains_key("left_hand"));
        assert_eq!(s.foot_polygons.len(), 2);
        let text = serde_json::to_string(&Envelope::new(kind::MODEL_SUMMARY, 0, 0.0, &s)).unwrap();
        let back: ModelSummary = serde_json::from_value(parse_envelope(&text).unwrap().payload).unwrap();
        assert_eq!(back.joints, s.joints);
    }

    #[test]
    fn joint_frame_payload_is_flat() {
        let m = bundled::nadia_like();
        let f = JointSetpointFrame::at_rest(&m.initial_configuration(), 12, 0.012);
        let v = serde_json::to_value(JointFramePayload {
            frame: f,
            echo_t_send_s: Some(0.01),
        })
        .unwrap();
        assert_eq!(v["tick_index"], 12);
        assert_eq!(v["q"].as_array().unwrap().len(), m.num_joints());
        assert_eq!(v["base_pose"]["orientation"].as_array().unwrap().len(), 4);
    }
}
